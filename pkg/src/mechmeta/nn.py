"""Recurrent language models written directly in numpy.

Model layout: token embedding -> ``layers`` stacked LSTM or GRU cells ->
linear projection to the vocabulary -> softmax.  Gradients come from a
hand-written backward pass through time.

Parameter order (fixed; used by checkpoints and gradient reduction)::

    embed            [vocab, embed_dim]
    l{k}.W           [in_dim, G*hidden]     G = 4 (LSTM: i, f, g, o) or 3 (GRU: z, r, n)
    l{k}.U           [hidden, G*hidden]
    l{k}.b           [G*hidden]
    out.W            [hidden, vocab]
    out.b            [vocab]

LSTM forget-gate pre-activations carry a constant +1.0 offset so that stored
parameters keep the plain uniform initialisation.  The GRU is the original
formulation with the reset gate applied before the recurrent product.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ShapeMismatch
from .langs import PAD, START, STOP, VOCAB_SIZE

FORGET_BIAS = 1.0

Gradients = dict  # name -> ndarray, same keys/shapes as ModelParams


@dataclass(frozen=True)
class ArchDescriptor:
    cell: str = "lstm"
    layers: int = 2
    hidden_dim: int = 64
    embed_dim: int | None = None
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        cell = self.cell.lower()
        if cell not in ("lstm", "gru"):
            raise ValueError(f"cell must be 'lstm' or 'gru', got {self.cell!r}")
        object.__setattr__(self, "cell", cell)
        if self.embed_dim is None:
            object.__setattr__(self, "embed_dim", self.hidden_dim)
        if self.layers < 1 or self.hidden_dim < 1 or self.embed_dim < 1 or self.vocab_size < 1:
            raise ValueError(f"invalid architecture {self}")

    @property
    def gates(self) -> int:
        return 4 if self.cell == "lstm" else 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchDescriptor":
        return cls(**dict(d))


def param_shapes(arch: ArchDescriptor) -> dict[str, tuple[int, ...]]:
    H, G = arch.hidden_dim, arch.gates
    shapes: dict[str, tuple[int, ...]] = {"embed": (arch.vocab_size, arch.embed_dim)}
    for k in range(arch.layers):
        in_dim = arch.embed_dim if k == 0 else H
        shapes[f"l{k}.W"] = (in_dim, G * H)
        shapes[f"l{k}.U"] = (H, G * H)
        shapes[f"l{k}.b"] = (G * H,)
    shapes["out.W"] = (H, arch.vocab_size)
    shapes["out.b"] = (arch.vocab_size,)
    return shapes


@dataclass
class ModelParams:
    arch: ArchDescriptor
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.arch)
        if list(self.arrays) != list(shapes):
            raise ShapeMismatch(f"parameter names {list(self.arrays)} do not match {list(shapes)}")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {self.arrays[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    @property
    def dtype(self):
        return self.arrays["embed"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.arch, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())


def init_params(arch: ArchDescriptor, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Uniform init in [-1/sqrt(hidden), 1/sqrt(hidden)] for every array."""
    bound = 1.0 / math.sqrt(arch.hidden_dim)
    arrays = {}
    for name, shape in param_shapes(arch).items():
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(arch, arrays)


def zeros_params(arch: ArchDescriptor, dtype=np.float32) -> ModelParams:
    return ModelParams(arch, {n: np.zeros(s, dtype=dtype) for n, s in param_shapes(arch).items()})


def zeros_like(params: ModelParams) -> Gradients:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Batching


def frame(payload: Sequence[int]) -> list[int]:
    return [START, *payload, STOP]


def pad_batch(sequences: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    """Frame payload sequences as START..STOP and right-pad with PAD."""
    framed = [frame(s) for s in sequences]
    longest = max(len(f) for f in framed)
    width = longest if width is None else width
    if width < longest:
        raise ShapeMismatch(f"width {width} shorter than longest framed sequence {longest}")
    out = np.full((len(framed), width), PAD, dtype=np.int64)
    for i, f in enumerate(framed):
        out[i, : len(f)] = f
    return out


def _check_batch(params: ModelParams, batch) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] < 2:
        raise ShapeMismatch(f"batch must be [B, T>=2], got shape {batch.shape}")
    if not np.issubdtype(batch.dtype, np.integer):
        raise ShapeMismatch("batch must hold integer token ids")
    if batch.min() < 0 or batch.max() >= params.arch.vocab_size:
        raise ShapeMismatch(f"token ids must lie in 0..{params.arch.vocab_size - 1}")
    return batch


# ---------------------------------------------------------------------------
# Forward


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class _LayerCache:
    x: np.ndarray  # layer input [B, T, I]
    h: np.ndarray  # outputs [B, T+1, H] (index 0 is the initial state)
    gates: np.ndarray  # activated gates [B, T, G*H]
    c: np.ndarray | None = None  # LSTM cell states [B, T+1, H]
    tc: np.ndarray | None = None  # tanh(c_t) [B, T, H]


@dataclass
class ForwardCache:
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    layers: list
    probs: np.ndarray


def _lstm_forward(W, U, b, x):
    Bsz, T, _ = x.shape
    H = U.shape[0]
    dtype = W.dtype
    bias = b.copy()
    bias[H : 2 * H] += FORGET_BIAS
    xw = x @ W + bias
    h = np.zeros((Bsz, T + 1, H), dtype=dtype)
    c = np.zeros((Bsz, T + 1, H), dtype=dtype)
    gates = np.empty((Bsz, T, 4 * H), dtype=dtype)
    tc = np.empty((Bsz, T, H), dtype=dtype)
    for t in range(T):
        a = xw[:, t] + h[:, t] @ U
        sig = _sigmoid(a)
        g = np.tanh(a[:, 2 * H : 3 * H])
        i, f, o = sig[:, :H], sig[:, H : 2 * H], sig[:, 3 * H :]
        c[:, t + 1] = f * c[:, t] + i * g
        tc[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = o * tc[:, t]
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = g
        gates[:, t, 3 * H :] = o
    return _LayerCache(x=x, h=h, gates=gates, c=c, tc=tc)


def _gru_forward(W, U, b, x):
    Bsz, T, _ = x.shape
    H = U.shape[0]
    dtype = W.dtype
    xw = x @ W + b
    Uzr, Un = U[:, : 2 * H], U[:, 2 * H :]
    h = np.zeros((Bsz, T + 1, H), dtype=dtype)
    gates = np.empty((Bsz, T, 3 * H), dtype=dtype)
    for t in range(T):
        hp = h[:, t]
        zr = _sigmoid(xw[:, t, : 2 * H] + hp @ Uzr)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(xw[:, t, 2 * H :] + (r * hp) @ Un)
        h[:, t + 1] = n + z * (hp - n)
        gates[:, t, : 2 * H] = zr
        gates[:, t, 2 * H :] = n
    return _LayerCache(x=x, h=h, gates=gates)


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ModelParams, batch) -> tuple[np.ndarray, ForwardCache]:
    """Next-token distributions for every input position.

    ``probs[b, t]`` is the model distribution after reading ``batch[b, :t+1]``.
    """
    batch = _check_batch(params, batch)
    arch = params.arch
    inputs, targets = batch[:, :-1], batch[:, 1:]
    mask = targets != PAD
    x = params["embed"][inputs]
    layers = []
    for k in range(arch.layers):
        W, U, b = params[f"l{k}.W"], params[f"l{k}.U"], params[f"l{k}.b"]
        lc = _lstm_forward(W, U, b, x) if arch.cell == "lstm" else _gru_forward(W, U, b, x)
        layers.append(lc)
        x = lc.h[:, 1:]
    logits = x @ params["out.W"] + params["out.b"]
    probs = _softmax(logits)
    return probs, ForwardCache(inputs, targets, mask, layers, probs)


def _token_nll(cache: ForwardCache) -> np.ndarray:
    p = np.take_along_axis(cache.probs, cache.targets[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        nll = -np.log(p)
    return np.where(cache.mask, nll, 0.0)


def loss_from_cache(cache: ForwardCache) -> float:
    count = cache.mask.sum()
    if count == 0:
        raise ShapeMismatch("batch has no non-PAD targets")
    return float(_token_nll(cache).sum(axis=1).sum() / count)


def loss(params: ModelParams, batch) -> float:
    """Mean next-token cross-entropy over non-PAD targets."""
    _, cache = forward(params, batch)
    return loss_from_cache(cache)


# ---------------------------------------------------------------------------
# Backward


def _lstm_backward(W, U, lc: _LayerCache, dH):
    Bsz, T, H = dH.shape
    dtype = W.dtype
    gates, c, tc = lc.gates, lc.c, lc.tc
    da = np.empty((Bsz, T, 4 * H), dtype=dtype)
    dh_next = np.zeros((Bsz, H), dtype=dtype)
    dc_next = np.zeros((Bsz, H), dtype=dtype)
    UT = U.T
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        g = gates[:, t, 2 * H : 3 * H]
        o = gates[:, t, 3 * H :]
        dh = dH[:, t] + dh_next
        tct = tc[:, t]
        dc = dh * o * (1.0 - tct * tct) + dc_next
        da[:, t, :H] = dc * g * i * (1.0 - i)
        da[:, t, H : 2 * H] = dc * c[:, t] * f * (1.0 - f)
        da[:, t, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        da[:, t, 3 * H :] = dh * tct * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da[:, t] @ UT
    flat_da = da.reshape(-1, 4 * H)
    dW = lc.x.reshape(-1, lc.x.shape[-1]).T @ flat_da
    dU = lc.h[:, :-1].reshape(-1, H).T @ flat_da
    db = flat_da.sum(axis=0)
    dx = da @ W.T
    return dW, dU, db, dx


def _gru_backward(W, U, lc: _LayerCache, dH):
    Bsz, T, H = dH.shape
    dtype = W.dtype
    gates, hs = lc.gates, lc.h
    Uz, Ur, Un = U[:, :H], U[:, H : 2 * H], U[:, 2 * H :]
    UzrT = U[:, : 2 * H].T
    UnT = Un.T
    da = np.empty((Bsz, T, 3 * H), dtype=dtype)
    rh = np.empty((Bsz, T, H), dtype=dtype)
    dh_next = np.zeros((Bsz, H), dtype=dtype)
    for t in range(T - 1, -1, -1):
        z = gates[:, t, :H]
        r = gates[:, t, H : 2 * H]
        n = gates[:, t, 2 * H :]
        hp = hs[:, t]
        dh = dH[:, t] + dh_next
        dan = dh * (1.0 - z) * (1.0 - n * n)
        daz = dh * (hp - n) * z * (1.0 - z)
        drh = dan @ UnT
        dar = drh * hp * r * (1.0 - r)
        da[:, t, :H] = daz
        da[:, t, H : 2 * H] = dar
        da[:, t, 2 * H :] = dan
        rh[:, t] = r * hp
        dh_next = dh * z + drh * r + da[:, t, : 2 * H] @ UzrT
    flat_da = da.reshape(-1, 3 * H)
    dW = lc.x.reshape(-1, lc.x.shape[-1]).T @ flat_da
    dU = np.empty_like(U)
    hprev = hs[:, :-1].reshape(-1, H)
    dU[:, : 2 * H] = hprev.T @ flat_da[:, : 2 * H]
    dU[:, 2 * H :] = rh.reshape(-1, H).T @ flat_da[:, 2 * H :]
    db = flat_da.sum(axis=0)
    dx = da @ W.T
    return dW, dU, db, dx


def backward(params: ModelParams, batch, cache: ForwardCache | None = None) -> Gradients:
    """Exact gradient of :func:`loss` with respect to every parameter array."""
    if cache is None:
        _, cache = forward(params, batch)
    arch = params.arch
    count = cache.mask.sum()
    if count == 0:
        raise ShapeMismatch("batch has no non-PAD targets")
    dlogits = cache.probs.copy()
    np.put_along_axis(
        dlogits,
        cache.targets[..., None],
        np.take_along_axis(dlogits, cache.targets[..., None], axis=-1) - 1.0,
        axis=-1,
    )
    dlogits *= (cache.mask / count)[..., None].astype(dlogits.dtype)
    top = cache.layers[-1].h[:, 1:]
    V = arch.vocab_size
    grads: Gradients = {}
    d_out_W = top.reshape(-1, top.shape[-1]).T @ dlogits.reshape(-1, V)
    d_out_b = dlogits.reshape(-1, V).sum(axis=0)
    dH = dlogits @ params["out.W"].T
    layer_grads = {}
    for k in range(arch.layers - 1, -1, -1):
        W, U = params[f"l{k}.W"], params[f"l{k}.U"]
        fn = _lstm_backward if arch.cell == "lstm" else _gru_backward
        dW, dU, db, dH = fn(W, U, cache.layers[k], dH)
        layer_grads[k] = (dW, dU, db)
    d_embed = np.zeros_like(params["embed"])
    np.add.at(d_embed, cache.inputs.reshape(-1), dH.reshape(-1, dH.shape[-1]))
    grads["embed"] = d_embed
    for k in range(arch.layers):
        dW, dU, db = layer_grads[k]
        grads[f"l{k}.W"], grads[f"l{k}.U"], grads[f"l{k}.b"] = dW, dU, db
    grads["out.W"] = d_out_W
    grads["out.b"] = d_out_b
    return grads


def loss_and_grad(params: ModelParams, batch) -> tuple[float, Gradients]:
    _, cache = forward(params, batch)
    return loss_from_cache(cache), backward(params, batch, cache)


# ---------------------------------------------------------------------------
# Gradient utilities and optimizers


def _check_congruent(params: ModelParams, grads: Mapping[str, np.ndarray]) -> None:
    if list(grads) != list(params.arrays):
        raise ShapeMismatch(f"gradient names {list(grads)} do not match parameters")
    for k, v in params.items():
        if grads[k].shape != v.shape:
            raise ShapeMismatch(f"{k}: gradient shape {grads[k].shape} != parameter shape {v.shape}")


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_by_global_norm(grads: Gradients, max_norm: float | None) -> tuple[Gradients, float, bool]:
    """Returns (grads, pre-clip norm, clipped?)."""
    norm = global_norm(grads)
    if max_norm is None or not math.isfinite(norm) or norm <= max_norm:
        return grads, norm, False
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm, True


def add_grads(a: Gradients, b: Gradients) -> Gradients:
    return {k: a[k] + b[k] for k in a}


def scale_grads(g: Gradients, s: float) -> Gradients:
    return {k: (v * s).astype(v.dtype) for k, v in g.items()}


def sum_grads(grads: Sequence[Gradients]) -> Gradients:
    """Fixed-order (left to right) sum."""
    total = {k: v.copy() for k, v in grads[0].items()}
    for g in grads[1:]:
        for k in total:
            total[k] += g[k]
    return total


def sgd_step(params: ModelParams, grads: Mapping[str, np.ndarray], lr: float) -> ModelParams:
    _check_congruent(params, grads)
    return ModelParams(params.arch, {k: (v - lr * grads[k]).astype(v.dtype) for k, v in params.items()})


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ModelParams, **kw) -> "AdamState":
        return cls(m=zeros_like(params), v=zeros_like(params), **kw)


def adam_step(
    state: AdamState, params: ModelParams, grads: Mapping[str, np.ndarray], lr: float
) -> tuple[AdamState, ModelParams]:
    _check_congruent(params, grads)
    if list(state.m) != list(params.arrays):
        raise ShapeMismatch("Adam state does not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if state.m[k].shape != p.shape:
            raise ShapeMismatch(f"{k}: Adam moment shape mismatch")
        m = (b1 * state.m[k] + (1.0 - b1) * g).astype(p.dtype)
        v = (b2 * state.v[k] + (1.0 - b2) * g * g).astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
        new_p[k] = (p - update).astype(p.dtype)
    new_state = AdamState(new_m, new_v, t, b1, b2, state.eps)
    return new_state, ModelParams(params.arch, new_p)
