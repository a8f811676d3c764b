"""Source-model oracles: coefficients, spectra, Green's functions, statistics."""

import numpy as np
import pytest

from helpers import check_grad

from pairsight import autodiff as ad
from pairsight import optics
from pairsight.errors import (DegenerateDistributionError, DimensionError,
                              InvalidParameterError)


def random_symmetric_s(n_pixels, rng, complex_entries=True):
    a = rng.normal(size=(n_pixels, n_pixels))
    if complex_entries:
        a = a + 1j * rng.normal(size=(n_pixels, n_pixels))
    return (a + a.T) / 2


def flat_slm(m):
    return optics.SlmPhase(np.zeros((m, m)), np.ones((m, m)))


# --------------------------------------------------------------------------
# phasematch coefficients
# --------------------------------------------------------------------------

class TestPhasematchCoeffs:
    def test_theta_zero(self):
        alpha, beta, gamma, eta = optics.phasematch_coeffs(1.7, 1.6, 0.0)
        np.testing.assert_allclose(alpha, 0.0)
        np.testing.assert_allclose(beta, 1.7 * 1.6 / 1.6**2)
        np.testing.assert_allclose(gamma, 1.7 / 1.6)
        np.testing.assert_allclose(eta, 1.7)

    def test_isotropic(self):
        for theta in (0.0, 0.4, np.pi / 2):
            alpha, beta, gamma, eta = optics.phasematch_coeffs(1.5, 1.5, theta)
            np.testing.assert_allclose([alpha, beta, gamma, eta],
                                       [0.0, 1.0, 1.0, 1.5], atol=1e-15)

    def test_bbo_355nm_critical_angle(self):
        # independent Sellmeier oracle for beta-BBO (lambda in micrometers)
        lam2 = 0.355**2
        n_o = np.sqrt(2.7405 + 0.0184 / (lam2 - 0.0179) - 0.0155 * lam2)
        n_e = np.sqrt(2.3730 + 0.0128 / (lam2 - 0.0156) - 0.0044 * lam2)
        theta = np.deg2rad(32.9)
        alpha, beta, gamma, eta = optics.phasematch_coeffs(n_o, n_e, theta)
        # the near-unity approximation at the phasematching angle
        assert abs(beta - 1.0) < 0.1
        assert abs(gamma - 1.0) < 0.1
        assert abs(beta**2 - 1.0) < 0.12
        assert abs(gamma**2 - 1.0) < 0.12
        # oracle recomputation of every coefficient
        st, ct = np.sin(theta), np.cos(theta)
        denom = n_o**2 * st**2 + n_e**2 * ct**2
        np.testing.assert_allclose(alpha, (n_o**2 - n_e**2) * st * ct / denom,
                                   rtol=1e-14)
        np.testing.assert_allclose(eta, n_o * n_e / np.sqrt(denom), rtol=1e-14)

    def test_rejects_bad_indices(self):
        with pytest.raises(InvalidParameterError):
            optics.phasematch_coeffs(-1.0, 1.6, 0.1)
        with pytest.raises(InvalidParameterError):
            optics.phasematch_coeffs(1.7, np.inf, 0.1)
        with pytest.raises(InvalidParameterError):
            optics.phasematch_coeffs(1.7, 1.6, 2.0)


class TestPhasematch:
    def test_zero_argument(self):
        pm = optics.PhasematchParams(0.0, 0.0, 0.0, 1.0)
        assert optics.phasematch((0.3, -0.1), (0.2, 0.5), pm) == 1.0

    def test_sinc_zero_at_pi(self):
        pm = optics.PhasematchParams(np.pi, 0.0, 0.0, 1.0)
        np.testing.assert_allclose(
            optics.phasematch((0.0, 0.0), (0.0, 0.0), pm), 0.0, atol=1e-16)

    def test_direct_scalar_evaluation(self):
        pm = optics.PhasematchParams(0.5, 0.1, 0.05, 1.0)
        got = optics.phasematch((1.0, 0.0), (-1.0, 0.0), pm)
        arg = 0.5 - 0.1 * 0.0 + 0.05 * 4.0
        np.testing.assert_allclose(got, np.sin(arg) / arg, rtol=1e-15)

    def test_swap_symmetry_exact(self):
        rng = np.random.default_rng(7)
        pm = optics.PhasematchParams(0.8, 0.12, 0.05, 1.0)
        for _ in range(50):
            qs, qi = rng.normal(size=2), rng.normal(size=2)
            assert optics.phasematch(qs, qi, pm) == optics.phasematch(qi, qs, pm)


# --------------------------------------------------------------------------
# pump spectrum
# --------------------------------------------------------------------------

class TestPumpSpectrum:
    def test_flat_phase_peaks_at_origin(self):
        grid = optics.PixelGrid(8)
        m = grid.spectrum_size
        nu = optics.pump_spectrum_from_slm(flat_slm(m), grid)
        power = np.abs(nu.values) ** 2
        origin = 2 * grid.center
        assert np.unravel_index(power.argmax(), power.shape) == (origin, origin)

    def test_linear_ramp_shifts_spectrum(self):
        grid = optics.PixelGrid(7)
        m = grid.spectrum_size
        k = 3
        x = np.arange(m)
        ramp = 2 * np.pi * k * x[None, :] / m * np.ones((m, 1))
        base = np.abs(optics.pump_spectrum_from_slm(flat_slm(m), grid).values) ** 2
        shifted = np.abs(optics.pump_spectrum_from_slm(
            optics.SlmPhase(ramp, np.ones((m, m))), grid).values) ** 2
        np.testing.assert_allclose(shifted, np.roll(base, k, axis=1), atol=1e-18)

    def test_parseval_and_phase_independence(self):
        rng = np.random.default_rng(11)
        grid = optics.PixelGrid(6)
        m = grid.spectrum_size
        aperture = (np.hypot(*np.meshgrid(*[np.arange(m) - m // 2] * 2)) <= m // 2)
        aperture = aperture.astype(float)
        flat = optics.pump_spectrum_from_slm(
            optics.SlmPhase(np.zeros((m, m)), aperture), grid)
        speckle = optics.pump_spectrum_from_slm(
            optics.SlmPhase(rng.uniform(0, 2 * np.pi, (m, m)), aperture), grid)
        p_in = (aperture**2).sum()
        p_flat = (np.abs(flat.values) ** 2).sum()
        p_speckle = (np.abs(speckle.values) ** 2).sum()
        assert abs(p_flat - p_in) <= 1e-9 * p_in
        assert abs(p_speckle - p_flat) <= 1e-9 * p_flat

    def test_oversized_slm_is_cropped_center(self):
        grid = optics.PixelGrid(5)
        m = grid.spectrum_size
        big = m + 6
        ap = np.zeros((big, big))
        lo = (big - m) // 2
        ap[lo:lo + m, lo:lo + m] = 1.0
        nu_big = optics.pump_spectrum_from_slm(
            optics.SlmPhase(np.zeros((big, big)), ap), grid)
        nu_ref = optics.pump_spectrum_from_slm(flat_slm(m), grid)
        np.testing.assert_allclose(nu_big.values, nu_ref.values, atol=1e-14)

    def test_undersized_slm_raises(self):
        grid = optics.PixelGrid(8)
        small = grid.spectrum_size - 1
        with pytest.raises(DimensionError):
            optics.pump_spectrum_from_slm(flat_slm(small), grid)


# --------------------------------------------------------------------------
# Green's functions
# --------------------------------------------------------------------------

def delta_pump(grid):
    m = grid.spectrum_size
    values = np.zeros((m, m), dtype=complex)
    values[2 * grid.center, 2 * grid.center] = 1.0
    return optics.PumpSpectrum(values)


class TestBuildGreens:
    def test_delta_pump_anticorrelates(self):
        grid = optics.PixelGrid(5)
        pm = optics.PhasematchParams(0.3, 0.0, 0.01, 1.0)
        g = optics.build_greens(delta_pump(grid), pm, grid)
        rows, cols = np.divmod(np.arange(grid.n_pixels), grid.n)
        for p1 in range(grid.n_pixels):
            for p2 in range(grid.n_pixels):
                paired = (rows[p1] + rows[p2] == 2 * grid.center and
                          cols[p1] + cols[p2] == 2 * grid.center)
                if not paired:
                    assert g.s[p1, p2] == 0.0

    def test_zero_amplitude_kills_s(self):
        grid = optics.PixelGrid(4)
        pm = optics.PhasematchParams(0.3, 0.1, 0.01, 0.0)
        g = optics.build_greens(delta_pump(grid), pm, grid)
        assert np.all(g.s == 0)

    def test_exact_symmetry_and_identity_c(self):
        grid = optics.PixelGrid(6)
        rng = np.random.default_rng(3)
        m = grid.spectrum_size
        slm = optics.SlmPhase(rng.uniform(0, 2 * np.pi, (m, m)), np.ones((m, m)))
        nu = optics.pump_spectrum_from_slm(slm, grid)
        pm = optics.PhasematchParams(0.8, 0.12, 0.05, 1.3)
        g = optics.build_greens(nu, pm, grid)
        assert np.array_equal(g.s, g.s.T)
        np.testing.assert_array_equal(g.c, np.eye(grid.n_pixels))

    def test_matches_brute_force_formula(self):
        grid = optics.PixelGrid(4)
        rng = np.random.default_rng(5)
        m = grid.spectrum_size
        nu_vals = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        nu = optics.PumpSpectrum(nu_vals)
        pm = optics.PhasematchParams(0.8, 0.12, 0.05, 0.7)
        g = optics.build_greens(nu, pm, grid)
        qx, qy = grid.momenta()
        rows, cols = np.divmod(np.arange(grid.n_pixels), grid.n)
        for p1 in range(grid.n_pixels):
            for p2 in range(grid.n_pixels):
                arg = (pm.mu00 - pm.alpha_lz * (qx[p1] + qx[p2])
                       + pm.delta_lz * ((qx[p1] - qx[p2]) ** 2
                                        + (qy[p1] - qy[p2]) ** 2))
                expect = (pm.amplitude * nu_vals[rows[p1] + rows[p2],
                                                 cols[p1] + cols[p2]]
                          * (np.sin(arg) / arg if arg != 0 else 1.0))
                np.testing.assert_allclose(g.s[p1, p2], expect, rtol=1e-12)


# --------------------------------------------------------------------------
# mean field / covariance / pair distribution
# --------------------------------------------------------------------------

class TestMeanField:
    def test_zero_s(self):
        g = optics.GreenPair.from_s(np.zeros((9, 9)))
        assert optics.mean_field(g).total == 0.0

    def test_single_pair_entry(self):
        s = np.zeros((4, 4), dtype=complex)
        s[0, 1] = s[1, 0] = 0.3 - 0.4j
        mf = optics.mean_field(optics.GreenPair.from_s(s))
        np.testing.assert_allclose(mf.values.ravel(), [0.25, 0.25, 0.0, 0.0])

    def test_dense_matrix_product_oracle(self):
        rng = np.random.default_rng(9)
        s = random_symmetric_s(9, rng)
        mf = optics.mean_field(optics.GreenPair.from_s(s))
        oracle = np.real(np.diag(s @ s.conj().T))
        np.testing.assert_allclose(mf.values.ravel(), oracle, atol=1e-12)


def dense_covariance_oracle(s, c):
    """Element-wise expansion of the covariance identity, loops only."""
    n = s.shape[0]
    out = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for k in range(n):
            t1 = sum(s[i, j].conjugate() * s[k, j] for j in range(n)) * \
                 sum(c[i, j] * c[k, j].conjugate() for j in range(n))
            t2 = sum(s[i, j].conjugate() * c[k, j].conjugate() for j in range(n)) * \
                 sum(c[i, j] * s[k, j] for j in range(n))
            out[i, k] = t1 + t2
    return out.real


class TestCovariance:
    def test_zero_s(self):
        g = optics.GreenPair.from_s(np.zeros((4, 4)))
        assert np.all(optics.covariance(g).values == 0)

    def test_two_by_two_hand_expansion(self):
        sigma = 0.6 + 0.2j
        s = np.array([[0, sigma], [sigma, 0]])
        cov = optics.covariance(optics.GreenPair.from_s(s)).values
        np.testing.assert_allclose(cov[0, 1], abs(sigma) ** 2, rtol=1e-15)
        np.testing.assert_allclose(cov[1, 0], abs(sigma) ** 2, rtol=1e-15)
        np.testing.assert_allclose(cov[0, 0], abs(sigma) ** 2, rtol=1e-15)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_dense_elementwise_oracle(self, n):
        rng = np.random.default_rng(n)
        s = random_symmetric_s(n * n, rng)
        g = optics.GreenPair.from_s(s)
        cov = optics.covariance(g).values
        np.testing.assert_allclose(cov, dense_covariance_oracle(s, g.c),
                                   atol=1e-12)

    def test_general_c_matches_oracle(self):
        rng = np.random.default_rng(42)
        s = random_symmetric_s(9, rng)
        c = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
        got = optics.covariance(optics.GreenPair(c=c, s=s)).values
        np.testing.assert_allclose(got, dense_covariance_oracle(s, c), atol=1e-10)

    def test_symmetric_nonnegative_diagonal(self):
        rng = np.random.default_rng(12)
        s = random_symmetric_s(16, rng)
        cov = optics.covariance(optics.GreenPair.from_s(s)).values
        np.testing.assert_allclose(cov, cov.T, atol=0)
        assert np.all(np.diag(cov) >= 0)


class TestBiphotonJpd:
    def test_single_pair(self):
        s = np.zeros((4, 4), dtype=complex)
        s[0, 1] = s[1, 0] = 1.7j
        jpd = optics.biphoton_jpd(optics.GreenPair.from_s(s))
        expect = np.zeros_like(jpd.probs)
        expect[optics.pair_index(0, 1, 4)] = 1.0
        np.testing.assert_allclose(jpd.probs, expect, atol=1e-15)

    def test_two_equal_doubles(self):
        s = np.diag([0.5, 0.5]).astype(complex)
        jpd = optics.jpd_from_s_matrix(s)
        np.testing.assert_allclose(jpd.probs[optics.pair_index(0, 0, 2)], 0.5)
        np.testing.assert_allclose(jpd.probs[optics.pair_index(1, 1, 2)], 0.5)

    def test_zero_s_raises(self):
        with pytest.raises(DegenerateDistributionError):
            optics.jpd_from_s_matrix(np.zeros((4, 4)))

    def test_brute_force_over_ordered_pairs(self):
        rng = np.random.default_rng(21)
        s = random_symmetric_s(16, rng)  # n = 4 grid
        jpd = optics.jpd_from_s_matrix(s)
        assert abs(jpd.probs.sum() - 1.0) < 1e-12
        # oracle: accumulate |s_ij|^2 over all n^4 ordered pairs into
        # unordered bins, then normalize
        bins = {}
        total = 0.0
        for i in range(16):
            for j in range(16):
                w = abs(s[i, j]) ** 2
                bins[(min(i, j), max(i, j))] = bins.get((min(i, j), max(i, j)), 0.0) + w
                total += w
        for (i, j), w in bins.items():
            k = optics.pair_index(i, j, 16)
            np.testing.assert_allclose(jpd.probs[k], w / total, rtol=1e-12)

    def test_marginal_matches_normalized_mean_field(self):
        rng = np.random.default_rng(33)
        for _ in range(5):
            s = random_symmetric_s(25, rng)
            g = optics.GreenPair.from_s(s)
            jpd = optics.biphoton_jpd(g)
            mean = optics.mean_field(g).values.ravel()
            lhs = jpd.marginal() / jpd.marginal().sum()
            rhs = mean / mean.sum()
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestPairIndexing:
    @pytest.mark.parametrize("n_pixels", [1, 4, 9, 16])
    def test_round_trip(self, n_pixels):
        i, j = optics.pair_table(n_pixels)
        k = optics.pair_index(i, j, n_pixels)
        np.testing.assert_array_equal(k, np.arange(len(i)))
        i2, j2 = optics.pair_unindex(k, n_pixels)
        np.testing.assert_array_equal(i, i2)
        np.testing.assert_array_equal(j, j2)

    def test_order_insensitive(self):
        assert optics.pair_index(3, 1, 5) == optics.pair_index(1, 3, 5)


# --------------------------------------------------------------------------
# differentiability of the source chain
# --------------------------------------------------------------------------

class TestSourceGradients:
    def test_phase_to_mean_field_fd(self):
        grid = optics.PixelGrid(4)
        m = grid.spectrum_size
        rng = np.random.default_rng(17)
        aperture = np.ones((m, m))
        pm = optics.PhasematchParams(0.6, 0.1, 0.03, 1.0)
        probe = rng.normal(size=(grid.n, grid.n))
        phase0 = rng.uniform(0, 2 * np.pi, (m, m))

        def build(phase):
            v_re, v_im = optics.spectrum_from_phase_t(phase, aperture, grid)
            s_re, s_im = optics.greens_from_spectrum_t(
                v_re, v_im, pm.mu00, pm.alpha_lz, pm.delta_lz, pm.amplitude, grid)
            mean = optics.mean_from_greens_t(s_re, s_im, grid.n)
            return ad.sum_(ad.mul(mean, probe))

        check_grad(build, phase0, rtol=1e-5, atol=1e-9)

    def test_phasematch_scalars_fd(self):
        grid = optics.PixelGrid(4)
        rng = np.random.default_rng(19)
        m = grid.spectrum_size
        nu = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        probe = rng.normal(size=(grid.n, grid.n))

        def build(theta):
            mu00 = ad.getitem(theta, 0)
            alpha = ad.getitem(theta, 1)
            delta = ad.getitem(theta, 2)
            amp = ad.getitem(theta, 3)
            s_re, s_im = optics.greens_from_spectrum_t(
                nu.real, nu.imag, mu00, alpha, delta, amp, grid)
            mean = optics.mean_from_greens_t(s_re, s_im, grid.n)
            return ad.sum_(ad.mul(mean, probe))

        check_grad(build, np.array([0.8, 0.12, 0.05, 1.1]), rtol=1e-5, atol=1e-9)
