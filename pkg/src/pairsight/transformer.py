"""Permutation-invariant classifier over sets of camera frames.

Each frame is flattened into one token. Tokens pass through two pre-norm
full self-attention blocks (no causal mask, so the set order is irrelevant),
are pooled by scaled dot-product attention against a single learned query,
and a one-hidden-layer MLP produces class logits. Two attention layers keep
the model at pairwise pixel statistics, matching a source that carries only
second-order correlations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, InvalidParameterError
from .sensing import FrameSet

__all__ = [
    "N_ATTENTION_LAYERS",
    "Logits",
    "TransformerParams",
    "init_transformer",
    "forward_batch_t",
    "forward",
    "attention_pool",
    "cross_entropy",
    "cross_entropy_t",
]

N_ATTENTION_LAYERS = 2
_LN_EPS = 1e-5
_STD_EPS = 1e-6


@dataclass(frozen=True)
class Logits:
    """Per-class scores for one frame set."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DimensionError("logits must be a vector")
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("logits must be finite")
        object.__setattr__(self, "values", values)

    def probabilities(self) -> np.ndarray:
        z = self.values - self.values.max()
        e = np.exp(z)
        return e / e.sum()


@dataclass
class TransformerParams:
    """All weights, stored as named autodiff leaves."""

    input_dim: int
    dim: int
    heads: int
    ff_dim: int
    hidden: int
    n_classes: int
    tensors: dict[str, ad.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise InvalidParameterError("dim must be divisible by heads")

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            if k not in state or state[k].shape != t.value.shape:
                raise DimensionError(f"state entry {k!r} missing or mis-shaped")
            t.value = np.asarray(state[k], dtype=np.float64).copy()

    @property
    def attention_blocks(self) -> list[str]:
        prefixes = {name.split(".")[0] for name in self.tensors
                    if name.startswith("layer") and ".attn." in name}
        return sorted(prefixes)

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag


def init_transformer(input_dim: int, n_classes: int, dim: int = 64,
                     heads: int = 4, ff_mult: int = 4, hidden: int = 128,
                     rng: np.random.Generator | None = None) -> TransformerParams:
    """Fresh parameters; weight scale 1/sqrt(fan_in), biases and norms neutral."""
    rng = rng or np.random.default_rng()
    ff_dim = ff_mult * dim
    params = TransformerParams(input_dim=input_dim, dim=dim, heads=heads,
                               ff_dim=ff_dim, hidden=hidden, n_classes=n_classes)

    def w(name, shape, fan_in):
        params.tensors[name] = ad.leaf(
            rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), name=name)

    def zeros(name, shape):
        params.tensors[name] = ad.leaf(np.zeros(shape), name=name)

    def ones(name, shape):
        params.tensors[name] = ad.leaf(np.ones(shape), name=name)

    w("embed.w", (input_dim, dim), input_dim)
    zeros("embed.b", (dim,))
    for i in range(N_ATTENTION_LAYERS):
        p = f"layer{i}"
        ones(f"{p}.ln1.g", (dim,))
        zeros(f"{p}.ln1.b", (dim,))
        for proj in ("wq", "wk", "wv", "wo"):
            w(f"{p}.attn.{proj}", (dim, dim), dim)
        for b in ("bq", "bk", "bv", "bo"):
            zeros(f"{p}.attn.{b}", (dim,))
        ones(f"{p}.ln2.g", (dim,))
        zeros(f"{p}.ln2.b", (dim,))
        w(f"{p}.ff.w1", (dim, ff_dim), dim)
        zeros(f"{p}.ff.b1", (ff_dim,))
        w(f"{p}.ff.w2", (ff_dim, dim), ff_dim)
        zeros(f"{p}.ff.b2", (dim,))
    ones("final.g", (dim,))
    zeros("final.b", (dim,))
    w("pool.query", (1, dim), dim)
    w("pool.wk", (dim, dim), dim)
    zeros("pool.bk", (dim,))
    w("pool.wv", (dim, dim), dim)
    zeros("pool.bv", (dim,))
    w("head.w1", (dim, hidden), dim)
    zeros("head.b1", (hidden,))
    w("head.w2", (hidden, n_classes), hidden)
    zeros("head.b2", (n_classes,))
    return params


def _layernorm(x, g, b):
    m = ad.mean_(x, axis=-1, keepdims=True)
    centered = ad.sub(x, m)
    var = ad.mean_(ad.square(centered), axis=-1, keepdims=True)
    return ad.add(ad.mul(ad.div(centered, ad.sqrt(ad.add(var, _LN_EPS))), g), b)


def _standardize_sets(x):
    # per-set zero mean, unit scale over the (set, pixel) axes
    m = ad.mean_(x, axis=(1, 2), keepdims=True)
    centered = ad.sub(x, m)
    var = ad.mean_(ad.square(centered), axis=(1, 2), keepdims=True)
    return ad.div(centered, ad.add(ad.sqrt(var), _STD_EPS))


def _self_attention(tok, params: TransformerParams, prefix: str):
    b, s, d = tok.value.shape
    h = params.heads
    dh = d // h

    def heads_split(t):
        return ad.swapaxes(ad.reshape(t, (b, s, h, dh)), 1, 2)  # (B,h,S,dh)

    q = heads_split(ad.add(ad.matmul(tok, params[f"{prefix}.wq"]), params[f"{prefix}.bq"]))
    k = heads_split(ad.add(ad.matmul(tok, params[f"{prefix}.wk"]), params[f"{prefix}.bk"]))
    v = heads_split(ad.add(ad.matmul(tok, params[f"{prefix}.wv"]), params[f"{prefix}.bv"]))
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.swapaxes(ad.matmul(attn, v), 1, 2), (b, s, d))
    return ad.add(ad.matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def attention_pool(tokens, query, weights):
    """Scaled dot-product pooling of S tokens by a learned query.

    ``weights`` maps {"wk", "bk", "wv", "bv"} to the key/value projections.
    Accepts arrays or tape tensors; returns whatever flows out of the tape
    (a (1, d) array for plain-array input).
    """
    tok = ad._lift(tokens)
    q = ad._lift(query)
    wk, bk = ad._lift(weights["wk"]), ad._lift(weights["bk"])
    wv, bv = ad._lift(weights["wv"]), ad._lift(weights["bv"])
    d = tok.value.shape[-1]
    k = ad.add(ad.matmul(tok, wk), bk)
    v = ad.add(ad.matmul(tok, wv), bv)
    scores = ad.mul(ad.matmul(k, ad.transpose(q) if q.value.ndim == 2
                              else ad.reshape(q, (d, 1))), 1.0 / np.sqrt(d))
    attn = ad.softmax(scores, axis=-2)  # over the set axis
    pooled = ad.sum_(ad.mul(attn, v), axis=-2, keepdims=True)
    if isinstance(tokens, ad.Tensor) or isinstance(query, ad.Tensor):
        return pooled
    return pooled.value


def forward_batch_t(frames, params: TransformerParams) -> ad.Tensor:
    """Logits tensor (B, n_classes) for a (B, S, n, n) batch of frame sets."""
    x = ad._lift(frames)
    if x.value.ndim != 4:
        raise DimensionError("expected a (B, S, n, n) batch")
    bsz, s, n, n2 = x.value.shape
    if s < 1:
        raise DimensionError("frame sets must contain at least one frame")
    if n * n2 != params.input_dim:
        raise DimensionError(
            f"frame has {n * n2} pixels, embedding expects {params.input_dim}")
    x = ad.reshape(x, (bsz, s, params.input_dim))
    x = _standardize_sets(x)
    tok = ad.add(ad.matmul(x, params["embed.w"]), params["embed.b"])
    for i in range(N_ATTENTION_LAYERS):
        p = f"layer{i}"
        normed = _layernorm(tok, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        tok = ad.add(tok, _self_attention(normed, params, f"{p}.attn"))
        normed = _layernorm(tok, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        ff = ad.matmul(ad.relu(ad.add(ad.matmul(normed, params[f"{p}.ff.w1"]),
                                      params[f"{p}.ff.b1"])),
                       params[f"{p}.ff.w2"])
        tok = ad.add(tok, ad.add(ff, params[f"{p}.ff.b2"]))
    tok = _layernorm(tok, params["final.g"], params["final.b"])
    pooled = attention_pool(tok, params["pool.query"],
                            {"wk": params["pool.wk"], "bk": params["pool.bk"],
                             "wv": params["pool.wv"], "bv": params["pool.bv"]})
    pooled = ad.reshape(pooled, (bsz, params.dim))
    hid = ad.relu(ad.add(ad.matmul(pooled, params["head.w1"]), params["head.b1"]))
    return ad.add(ad.matmul(hid, params["head.w2"]), params["head.b2"])


def forward(frame_set: FrameSet, params: TransformerParams) -> Logits:
    """Classify a single frame set."""
    if len(frame_set) < 1:
        raise DimensionError("empty frame set")
    batch = np.asarray(frame_set.data, dtype=np.float64)[None]
    logits = forward_batch_t(ad.constant(batch), params)
    return Logits(logits.value[0])


def cross_entropy_t(logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean negative log-likelihood of integer labels under (B, K) logits."""
    labels = np.asarray(labels, dtype=np.int64)
    log_p = ad.log_softmax(logits, axis=-1)
    n_classes = logits.value.shape[-1]
    flat_idx = np.arange(labels.size) * n_classes + labels
    picked = ad.take(log_p, flat_idx)
    return ad.neg(ad.mean_(picked))


def cross_entropy(logits, label: int) -> float:
    """Single-sample cross-entropy, stabilized by max subtraction."""
    values = logits.values if isinstance(logits, Logits) else np.asarray(logits)
    if not (0 <= label < values.shape[-1]):
        raise InvalidParameterError("label out of range")
    z = values - values.max()
    return float(np.log(np.exp(z).sum()) - z[label])
