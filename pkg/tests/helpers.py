"""Shared test utilities: central finite differences against the tape."""

import numpy as np

from pairsight import autodiff as ad


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    xf = x.reshape(-1)
    for k in range(xf.size):
        orig = xf[k]
        xf[k] = orig + h
        up = f(x)
        xf[k] = orig - h
        down = f(x)
        xf[k] = orig
        flat[k] = (up - down) / (2 * h)
    return out


def check_grad(build, x0: np.ndarray, h: float = 1e-5, rtol: float = 1e-6,
               atol: float = 1e-8):
    """Compare tape gradients of ``build(leaf) -> scalar Tensor`` to FD.

    Returns (analytic, numeric) after asserting closeness.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    leaf = ad.leaf(x0.copy())
    loss = build(leaf)
    ad.backward(loss)
    analytic = leaf.grad.copy()

    def value_at(x):
        return float(build(ad.constant(x)).value)

    numeric = numeric_grad(value_at, x0, h=h)
    scale = np.maximum(np.abs(numeric), np.abs(analytic))
    err = np.abs(analytic - numeric)
    assert np.all(err <= atol + rtol * scale), (
        f"gradient mismatch: max abs err {err.max():.3e}, "
        f"max rel err {(err / np.maximum(scale, 1e-300)).max():.3e}")
    return analytic, numeric
