"""Classifier contract: dual-implementation oracle, invariance, gradients."""

import numpy as np
import pytest

from helpers import check_grad

from pairsight import autodiff as ad
from pairsight import transformer as tf
from pairsight.errors import DimensionError, InvalidParameterError
from pairsight.sensing import FrameSet


def small_params(rng, n=3, n_classes=3, dim=8, heads=2, hidden=6):
    return tf.init_transformer(n * n, n_classes, dim=dim, heads=heads,
                               ff_mult=2, hidden=hidden, rng=rng)


def numpy_reference_forward(frames, p):
    """Straight-line numpy re-implementation of the same equations."""
    w = {k: t.value for k, t in p.tensors.items()}
    x = frames.reshape(frames.shape[0], -1).astype(np.float64)[None]  # B=1
    m = x.mean(axis=(1, 2), keepdims=True)
    centered = x - m
    std = np.sqrt((centered**2).mean(axis=(1, 2), keepdims=True))
    x = centered / (std + 1e-6)
    tok = x @ w["embed.w"] + w["embed.b"]

    def ln(z, g, b):
        mu = z.mean(axis=-1, keepdims=True)
        var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
        return (z - mu) / np.sqrt(var + 1e-5) * g + b

    def softmax(z, axis):
        e = np.exp(z - z.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)

    bsz, s, d = tok.shape
    h = p.heads
    dh = d // h
    for i in range(2):
        pre = ln(tok, w[f"layer{i}.ln1.g"], w[f"layer{i}.ln1.b"])
        q = (pre @ w[f"layer{i}.attn.wq"] + w[f"layer{i}.attn.bq"])
        k = (pre @ w[f"layer{i}.attn.wk"] + w[f"layer{i}.attn.bk"])
        v = (pre @ w[f"layer{i}.attn.wv"] + w[f"layer{i}.attn.bv"])
        q = q.reshape(bsz, s, h, dh).transpose(0, 2, 1, 3)
        k = k.reshape(bsz, s, h, dh).transpose(0, 2, 1, 3)
        v = v.reshape(bsz, s, h, dh).transpose(0, 2, 1, 3)
        att = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh), axis=-1)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, s, d)
        tok = tok + ctx @ w[f"layer{i}.attn.wo"] + w[f"layer{i}.attn.bo"]
        pre = ln(tok, w[f"layer{i}.ln2.g"], w[f"layer{i}.ln2.b"])
        hidden = np.maximum(pre @ w[f"layer{i}.ff.w1"] + w[f"layer{i}.ff.b1"], 0)
        tok = tok + hidden @ w[f"layer{i}.ff.w2"] + w[f"layer{i}.ff.b2"]
    tok = ln(tok, w["final.g"], w["final.b"])
    keys = tok @ w["pool.wk"] + w["pool.bk"]
    vals = tok @ w["pool.wv"] + w["pool.bv"]
    scores = keys @ w["pool.query"].T / np.sqrt(d)
    attn = softmax(scores, axis=-2)
    pooled = (attn * vals).sum(axis=-2)
    hid = np.maximum(pooled @ w["head.w1"] + w["head.b1"], 0)
    return (hid @ w["head.w2"] + w["head.b2"])[0]


class TestForward:
    def test_duplicated_frame_matches_single(self):
        rng = np.random.default_rng(0)
        p = small_params(rng)
        frame = rng.poisson(2.0, size=(3, 3)).astype(float)
        one = tf.forward(FrameSet(frame[None]), p).values
        four = tf.forward(FrameSet(np.repeat(frame[None], 4, axis=0)), p).values
        np.testing.assert_allclose(one, four, atol=1e-10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        p = small_params(rng)
        data = rng.poisson(3.0, size=(5, 3, 3)).astype(float)
        base = tf.forward(FrameSet(data), p).values
        for _ in range(20):
            perm = rng.permutation(5)
            out = tf.forward(FrameSet(data[perm]), p).values
            np.testing.assert_allclose(out, base, atol=1e-6)
            assert out.argmax() == base.argmax()

    def test_dual_implementation_oracle(self):
        rng = np.random.default_rng(2)
        p = small_params(rng)
        data = rng.normal(size=(3, 3, 3)) ** 2
        got = tf.forward(FrameSet(data), p).values
        expect = numpy_reference_forward(data, p)
        np.testing.assert_allclose(got, expect, atol=1e-10)

    def test_empty_set_rejected(self):
        p = small_params(np.random.default_rng(3))
        with pytest.raises(DimensionError):
            tf.forward_batch_t(np.zeros((1, 0, 3, 3)), p)

    def test_wrong_pixel_count_rejected(self):
        p = small_params(np.random.default_rng(4))
        with pytest.raises(DimensionError):
            tf.forward(FrameSet(np.ones((2, 4, 4))), p)

    def test_exactly_two_attention_blocks(self):
        p = small_params(np.random.default_rng(5))
        assert p.attention_blocks == ["layer0", "layer1"]
        assert tf.N_ATTENTION_LAYERS == 2


class TestAttentionPool:
    def test_single_token_returns_value_projection(self):
        rng = np.random.default_rng(6)
        d = 8
        tokens = rng.normal(size=(1, d))
        weights = {"wk": rng.normal(size=(d, d)), "bk": rng.normal(size=d),
                   "wv": rng.normal(size=(d, d)), "bv": rng.normal(size=d)}
        out = tf.attention_pool(tokens, rng.normal(size=(1, d)), weights)
        np.testing.assert_allclose(out, tokens @ weights["wv"] + weights["bv"],
                                   atol=1e-12)

    def test_identical_tokens_match_single(self):
        rng = np.random.default_rng(7)
        d = 8
        token = rng.normal(size=(1, d))
        weights = {"wk": rng.normal(size=(d, d)), "bk": rng.normal(size=d),
                   "wv": rng.normal(size=(d, d)), "bv": rng.normal(size=d)}
        query = rng.normal(size=(1, d))
        one = tf.attention_pool(token, query, weights)
        many = tf.attention_pool(np.repeat(token, 6, axis=0), query, weights)
        np.testing.assert_allclose(many, one, atol=1e-12)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(8)
        s, d = 5, 8
        tokens = rng.normal(size=(s, d))
        query = rng.normal(size=(1, d))
        weights = {"wk": rng.normal(size=(d, d)), "bk": rng.normal(size=d),
                   "wv": rng.normal(size=(d, d)), "bv": rng.normal(size=d)}
        got = tf.attention_pool(tokens, query, weights)
        k = tokens @ weights["wk"] + weights["bk"]
        v = tokens @ weights["wv"] + weights["bv"]
        scores = (k @ query.T / np.sqrt(d)).ravel()
        attn = np.exp(scores - scores.max())
        attn /= attn.sum()
        np.testing.assert_allclose(got.ravel(), attn @ v, atol=1e-12)


class TestCrossEntropy:
    def test_confident_correct(self):
        loss = tf.cross_entropy(np.array([10.0, -10.0]), 0)
        np.testing.assert_allclose(loss, -np.log(1 / (1 + np.exp(-20.0))),
                                   rtol=1e-6)
        assert loss == pytest.approx(2.06e-9, rel=0.01)

    def test_uniform_logits_log_k(self):
        for k in (2, 5, 10):
            loss = tf.cross_entropy(np.zeros(k), k - 1)
            np.testing.assert_allclose(loss, np.log(k), rtol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=6)
        a = tf.cross_entropy(logits, 2)
        b = tf.cross_entropy(logits + 123.456, 2)
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_label_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            tf.cross_entropy(np.zeros(3), 3)

    def test_batched_tensor_version_matches_scalar(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(4, 5))
        labels = rng.integers(0, 5, size=4)
        loss_t = tf.cross_entropy_t(ad.constant(logits), labels)
        direct = np.mean([tf.cross_entropy(logits[b], labels[b])
                          for b in range(4)])
        np.testing.assert_allclose(loss_t.value, direct, rtol=1e-12)

    def test_random_loss_concentrates_at_log_k(self):
        rng = np.random.default_rng(11)
        p = small_params(rng, n_classes=4)
        losses = []
        for _ in range(100):
            data = rng.poisson(2.0, size=(4, 3, 3)).astype(float)
            logits = tf.forward(FrameSet(data), p)
            losses.append(tf.cross_entropy(logits, int(rng.integers(0, 4))))
        assert abs(np.mean(losses) - np.log(4)) < 0.2 * np.log(4)


class TestGradients:
    def test_all_parameters_pass_fd(self):
        # d=8, S=3, n=4 probe, as the contract prescribes
        rng = np.random.default_rng(12)
        p = tf.init_transformer(16, 3, dim=8, heads=2, ff_mult=2, hidden=6,
                                rng=rng)
        data = rng.poisson(2.0, size=(2, 3, 4, 4)).astype(float)
        labels = np.array([0, 2])

        loss = tf.cross_entropy_t(tf.forward_batch_t(ad.constant(data), p), labels)
        ad.backward(loss)
        analytic = {k: t.grad.copy() if t.grad is not None else None
                    for k, t in p.tensors.items()}

        h = 1e-5
        rng2 = np.random.default_rng(13)
        for name, tensor in p.tensors.items():
            flat = tensor.value.reshape(-1)
            picks = rng2.choice(flat.size, size=min(3, flat.size), replace=False)
            for idx in picks:
                orig = flat[idx]
                flat[idx] = orig + h
                up = tf.cross_entropy_t(
                    tf.forward_batch_t(ad.constant(data), p), labels).value
                flat[idx] = orig - h
                down = tf.cross_entropy_t(
                    tf.forward_batch_t(ad.constant(data), p), labels).value
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                got = analytic[name].reshape(-1)[idx]
                assert abs(got - fd) <= 1e-4 * max(abs(fd), abs(got), 1e-6), (
                    f"{name}[{idx}]: analytic {got:.3e} vs fd {fd:.3e}")

    def test_gradient_flows_to_frames(self):
        rng = np.random.default_rng(14)
        p = small_params(rng)
        data0 = rng.poisson(3.0, size=(1, 3, 3, 3)).astype(float) + 0.5

        def build(x):
            logits = tf.forward_batch_t(x, p)
            return tf.cross_entropy_t(logits, np.array([1]))

        check_grad(build, data0, rtol=2e-5, atol=1e-9)
