"""Small numpy neural kernel for the recurrent melody classifier.

Everything here is hand-differentiated: embedding lookup, GRU / LSTM / mLSTM
cells unrolled through time, a two-layer sigmoid head, binary cross-entropy,
inverted dropout and Adam. Arrays are float32 during training; the same code
runs in float64 for gradient checks (dtype follows the parameters).

Shapes use a batch-major layout: sequences are ``(B, T)`` id arrays, cell
inputs ``(B, T, D)``, hidden states ``(B, H)``. Gate blocks are concatenated
along the last axis of the weight matrices in the order listed per cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

PAD_ID = 0
BCE_EPS = 1e-7


class ShapeMismatch(ValueError):
    pass


class IdOutOfVocab(ValueError):
    pass


class EmptySequence(ValueError):
    pass


class CellKind(str, Enum):
    LSTM = "LSTM"
    GRU = "GRU"
    MLSTM = "MLSTM"


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free and keeps the input dtype
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

def embedding_forward(ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IdOutOfVocab(f"ids must lie in [0, {table.shape[0]})")
    return table[ids]


def embedding_backward(ids: np.ndarray, grad_out: np.ndarray, vocab: int) -> np.ndarray:
    """Scatter-add upstream gradients into the rows that were looked up."""
    d = grad_out.shape[-1]
    g = np.zeros((vocab, d), dtype=grad_out.dtype)
    np.add.at(g, np.asarray(ids).reshape(-1), grad_out.reshape(-1, d))
    return g


# ---------------------------------------------------------------------------
# recurrent cells
#
# GRU   W:(D,3H) U:(H,3H) b:(3H)   gate blocks [z, r, candidate]
# LSTM  W:(D,4H) U:(H,4H) b:(4H)   gate blocks [i, f, o, g]
# MLSTM as LSTM plus Wmx:(D,H) Wmh:(H,H); gates read m=(x Wmx)*(h Wmh)
# ---------------------------------------------------------------------------

def _check(x: np.ndarray, h: np.ndarray, p: dict, gates: int) -> int:
    H = h.shape[-1]
    D = x.shape[-1]
    if p["W"].shape != (D, gates * H) or p["U"].shape != (H, gates * H) or p["b"].shape != (gates * H,):
        raise ShapeMismatch(
            f"cell params {p['W'].shape}, {p['U'].shape}, {p['b'].shape} "
            f"do not fit input {D} / hidden {H}"
        )
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeMismatch(f"batch dims differ: x {x.shape}, h {h.shape}")
    return H


def _gru_fwd(xw, h, U):
    H = h.shape[-1]
    hu = h @ U[:, : 2 * H]
    z = sigmoid(xw[:, :H] + hu[:, :H])
    r = sigmoid(xw[:, H : 2 * H] + hu[:, H:])
    rh = r * h
    cand = np.tanh(xw[:, 2 * H :] + rh @ U[:, 2 * H :])
    h_new = h + z * (cand - h)
    return h_new, (h, z, r, rh, cand)


def _gru_bwd(dh_new, cache, U, dU):
    h, z, r, rh, cand = cache
    H = h.shape[-1]
    dcand = dh_new * z
    dz = dh_new * (cand - h)
    dh = dh_new * (1 - z)
    da_c = dcand * (1 - cand * cand)
    dU[:, 2 * H :] += rh.T @ da_c
    drh = da_c @ U[:, 2 * H :].T
    dr = drh * h
    dh += drh * r
    da_zr = np.concatenate([dz * z * (1 - z), dr * r * (1 - r)], axis=1)
    dU[:, : 2 * H] += h.T @ da_zr
    dh += da_zr @ U[:, : 2 * H].T
    return np.concatenate([da_zr, da_c], axis=1), dh


def _lstm_gates(a, c):
    H = c.shape[-1]
    i = sigmoid(a[:, :H])
    f = sigmoid(a[:, H : 2 * H])
    o = sigmoid(a[:, 2 * H : 3 * H])
    g = np.tanh(a[:, 3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (c, i, f, o, g, tc)


def _lstm_gates_bwd(dh_new, dc_new, gcache):
    c, i, f, o, g, tc = gcache
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1 - tc * tc)
    da = np.concatenate(
        [dc * g * i * (1 - i), dc * c * f * (1 - f), do * o * (1 - o), dc * i * (1 - g * g)],
        axis=1,
    )
    return da, dc * f


def _lstm_fwd(xw, h, c, U):
    h_new, c_new, gcache = _lstm_gates(xw + h @ U, c)
    return h_new, c_new, (h, gcache)


def _lstm_bwd(dh_new, dc_new, cache, U, dU):
    h, gcache = cache
    da, dc = _lstm_gates_bwd(dh_new, dc_new, gcache)
    dU += h.T @ da
    return da, da @ U.T, dc


def _mlstm_fwd(xw, mx, h, c, U, Wmh):
    hm = h @ Wmh
    m = mx * hm
    h_new, c_new, gcache = _lstm_gates(xw + m @ U, c)
    return h_new, c_new, (h, mx, hm, m, gcache)


def _mlstm_bwd(dh_new, dc_new, cache, U, Wmh, dU, dWmh):
    h, mx, hm, m, gcache = cache
    da, dc = _lstm_gates_bwd(dh_new, dc_new, gcache)
    dU += m.T @ da
    dm = da @ U.T
    dmx = dm * hm
    dhm = dm * mx
    dWmh += h.T @ dhm
    return da, dmx, dhm @ Wmh.T, dc


def gru_step(x: np.ndarray, h: np.ndarray, p: dict) -> np.ndarray:
    """One GRU update: ``h' = (1-z)*h + z*tanh(Wh x + Uh (r*h) + bh)``."""
    _check(x, h, p, 3)
    x2, h2 = np.atleast_2d(x), np.atleast_2d(h)
    h_new, _ = _gru_fwd(x2 @ p["W"] + p["b"], h2, p["U"])
    return h_new.reshape(h.shape)


def lstm_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, p: dict) -> tuple[np.ndarray, np.ndarray]:
    _check(x, h, p, 4)
    if c.shape != h.shape:
        raise ShapeMismatch(f"cell state {c.shape} != hidden {h.shape}")
    x2, h2, c2 = np.atleast_2d(x), np.atleast_2d(h), np.atleast_2d(c)
    h_new, c_new, _ = _lstm_fwd(x2 @ p["W"] + p["b"], h2, c2, p["U"])
    return h_new.reshape(h.shape), c_new.reshape(c.shape)


def mlstm_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, p: dict) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicative LSTM: gates see ``m = (Wmx x) * (Wmh h)`` in place of ``h``."""
    H = _check(x, h, p, 4)
    if c.shape != h.shape:
        raise ShapeMismatch(f"cell state {c.shape} != hidden {h.shape}")
    if p["Wmx"].shape != (x.shape[-1], H) or p["Wmh"].shape != (H, H):
        raise ShapeMismatch("multiplicative weights do not fit")
    x2, h2, c2 = np.atleast_2d(x), np.atleast_2d(h), np.atleast_2d(c)
    h_new, c_new, _ = _mlstm_fwd(x2 @ p["W"] + p["b"], x2 @ p["Wmx"], h2, c2, p["U"], p["Wmh"])
    return h_new.reshape(h.shape), c_new.reshape(c.shape)


CELL_GATES = {CellKind.GRU: 3, CellKind.LSTM: 4, CellKind.MLSTM: 4}


def cell_param_shapes(kind: CellKind, D: int, H: int) -> dict[str, tuple[int, ...]]:
    G = CELL_GATES[kind] * H
    shapes = {"W": (D, G), "U": (H, G), "b": (G,)}
    if kind is CellKind.MLSTM:
        shapes.update(Wmx=(D, H), Wmh=(H, H))
    return shapes


@dataclass
class _RunCache:
    kind: CellKind
    xs: np.ndarray
    mask: np.ndarray
    order: list[int]
    steps: list = field(default_factory=list)


def run_cell(kind: CellKind, xs: np.ndarray, mask: np.ndarray, p: dict, reverse: bool = False):
    """Unroll a cell over the unmasked steps of ``xs``; return the final state.

    Masked positions carry the previous state through unchanged, so any
    amount of padding leaves the result bit-identical. Steps with no real
    token in the whole batch are skipped outright.
    """
    B, T, D = xs.shape
    H = p["U"].shape[0]
    dtype = xs.dtype
    xw = xs @ p["W"] + p["b"]
    mx = xs @ p["Wmx"] if kind is CellKind.MLSTM else None
    order = [t for t in range(T) if mask[:, t].any()]
    if reverse:
        order.reverse()
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    cache = _RunCache(kind, xs, mask, order)
    for t in order:
        m = mask[:, t, None]
        if kind is CellKind.GRU:
            h_new, sc = _gru_fwd(xw[:, t], h, p["U"])
            c_new = c
        elif kind is CellKind.LSTM:
            h_new, c_new, sc = _lstm_fwd(xw[:, t], h, c, p["U"])
        else:
            h_new, c_new, sc = _mlstm_fwd(xw[:, t], mx[:, t], h, c, p["U"], p["Wmh"])
        cache.steps.append((m, sc))
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
    return h, cache


def run_cell_backward(dh_final: np.ndarray, cache: _RunCache, p: dict):
    """Backpropagate through time. Returns (d xs, param grads)."""
    kind, xs = cache.kind, cache.xs
    B, T, D = xs.shape
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dxw = np.zeros((B, T, p["W"].shape[1]), dtype=xs.dtype)
    dmx = np.zeros((B, T, p["U"].shape[0]), dtype=xs.dtype) if kind is CellKind.MLSTM else None
    dh = dh_final
    dc = np.zeros_like(dh_final)
    # Gradients vanishing over long unrolls reach the subnormal range, where
    # float arithmetic is orders of magnitude slower; flush them to zero with
    # headroom so products inside the next step stay normal too.
    tiny = np.finfo(dh.dtype).tiny * 1e8
    for t, (m, sc) in zip(reversed(cache.order), reversed(cache.steps)):
        dh_new = np.where(m, dh, 0)
        dh_keep = np.where(m, 0, dh)
        if kind is CellKind.GRU:
            dxw[:, t], dh_prev = _gru_bwd(dh_new, sc, p["U"], grads["U"])
            dh = dh_keep + dh_prev
        else:
            dc_new = np.where(m, dc, 0)
            dc_keep = np.where(m, 0, dc)
            if kind is CellKind.LSTM:
                dxw[:, t], dh_prev, dc_prev = _lstm_bwd(dh_new, dc_new, sc, p["U"], grads["U"])
            else:
                dxw[:, t], dmx[:, t], dh_prev, dc_prev = _mlstm_bwd(
                    dh_new, dc_new, sc, p["U"], p["Wmh"], grads["U"], grads["Wmh"]
                )
            dh = dh_keep + dh_prev
            dc = dc_keep + dc_prev
            dc[np.abs(dc) < tiny] = 0
        dh[np.abs(dh) < tiny] = 0
    flat_x = xs.reshape(-1, D)
    G = dxw.shape[-1]
    grads["W"] += flat_x.T @ dxw.reshape(-1, G)
    grads["b"] += dxw.sum(axis=(0, 1))
    dxs = dxw @ p["W"].T
    if kind is CellKind.MLSTM:
        grads["Wmx"] += flat_x.T @ dmx.reshape(-1, dmx.shape[-1])
        dxs += dmx @ p["Wmx"].T
    return dxs, grads


def _split(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def bidirectional_encode(
    ids: np.ndarray,
    mask: np.ndarray | None,
    cell: CellKind,
    params: dict,
    embedded: np.ndarray | None = None,
    bidirectional: bool = True,
) -> np.ndarray:
    """Latent code: final forward state, concatenated with final backward state.

    ``params`` holds ``embedding`` plus per-direction cell weights prefixed
    ``fwd.`` / ``bwd.``. Accepts a single sequence or a ``(B, T)`` batch.
    """
    latent, _ = _encode(np.atleast_2d(ids), mask, CellKind(cell), params, embedded, bidirectional)
    return latent[0] if np.ndim(ids) == 1 else latent


def _encode(ids, mask, cell, params, embedded, bidirectional):
    if mask is None:
        mask = ids != PAD_ID
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if not mask.any(axis=1).all():
        raise EmptySequence("every sequence needs at least one non-PAD token")
    xs = embedding_forward(ids, params["embedding"]) if embedded is None else embedded
    h_f, cache_f = run_cell(cell, xs, mask, _split(params, "fwd."))
    if not bidirectional:
        return h_f, (cache_f, None)
    h_b, cache_b = run_cell(cell, xs, mask, _split(params, "bwd."), reverse=True)
    return np.concatenate([h_f, h_b], axis=1), (cache_f, cache_b)


# ---------------------------------------------------------------------------
# head, loss, dropout
# ---------------------------------------------------------------------------

def dense_sigmoid_head(latent: np.ndarray, p: dict) -> np.ndarray:
    """``sigmoid(w2 . relu(W1 latent + b1) + b2)``; works on one vector or a batch."""
    if latent.shape[-1] != p["W1"].shape[0]:
        raise ShapeMismatch(f"latent dim {latent.shape[-1]} != dense input {p['W1'].shape[0]}")
    a1 = np.maximum(latent @ p["W1"] + p["b1"], 0)
    return sigmoid(a1 @ p["w2"] + p["b2"][0])


def bce_loss(p, y):
    """Binary cross-entropy and its derivative with respect to the score."""
    p = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    loss = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    grad = -y / p + (1 - y) / (1 - p)
    return loss, grad


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * dtype(1.0 / (1.0 - rate))


def dropout(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    return x * dropout_mask(x.shape, rate, rng, x.dtype.type)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam, updating ``params`` in place."""
    state.t += 1
    t = state.t
    for name, g in grads.items():
        w = params[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {w.shape}")
        dt = w.dtype.type
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= dt(beta1)
        m += dt(1 - beta1) * g
        v *= dt(beta2)
        v += dt(1 - beta2) * (g * g)
        m_hat = m / dt(1 - beta1 ** t)
        v_hat = v / dt(1 - beta2 ** t)
        w -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
    return state


# ---------------------------------------------------------------------------
# the assembled classifier network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    vocab: int
    cell: CellKind = CellKind.GRU
    bidirectional: bool = True
    embed_dim: int = 128
    hidden: int = 64
    dense_hidden: int = 32
    input_dropout: float = 0.2
    latent_dropout: float = 0.2

    @property
    def latent_dim(self) -> int:
        return self.hidden * (2 if self.bidirectional else 1)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {"embedding": (self.vocab, self.embed_dim)}
        dirs = ("fwd", "bwd") if self.bidirectional else ("fwd",)
        for d in dirs:
            for k, s in cell_param_shapes(CellKind(self.cell), self.embed_dim, self.hidden).items():
                shapes[f"{d}.{k}"] = s
        shapes["W1"] = (self.latent_dim, self.dense_hidden)
        shapes["b1"] = (self.dense_hidden,)
        shapes["w2"] = (self.dense_hidden,)
        shapes["b2"] = (1,)
        return shapes


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in ("b", "b1", "b2")


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 0.05,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform(-scale, scale) weights, zero biases, drawn in a fixed name order."""
    params = {}
    for name, shape in spec.param_shapes().items():
        if is_bias(name):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return params


@dataclass
class ForwardCache:
    ids: np.ndarray
    mask: np.ndarray
    in_mask: np.ndarray | None
    lat_mask: np.ndarray | None
    enc_cache: tuple
    latent_in: np.ndarray
    a1: np.ndarray
    z2: np.ndarray


def forward(spec: ModelSpec, params: dict, ids: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Scores for a ``(B, T)`` batch of padded id sequences.

    Pipeline: embedding -> input dropout -> recurrent encoder -> dropout ->
    dense(relu) -> dense(sigmoid). Dropout is active only when ``train``.
    """
    ids = np.atleast_2d(np.asarray(ids))
    mask = ids != PAD_ID
    xs = embedding_forward(ids, params["embedding"])
    dt = xs.dtype.type
    in_mask = lat_mask = None
    if train and spec.input_dropout > 0:
        in_mask = dropout_mask(xs.shape, spec.input_dropout, rng, dt)
        xs = xs * in_mask
    latent, enc_cache = _encode(ids, mask, CellKind(spec.cell), params, xs, spec.bidirectional)
    if train and spec.latent_dropout > 0:
        lat_mask = dropout_mask(latent.shape, spec.latent_dropout, rng, dt)
        latent = latent * lat_mask
    a1 = np.maximum(latent @ params["W1"] + params["b1"], 0)
    z2 = a1 @ params["w2"] + params["b2"][0]
    cache = ForwardCache(ids, mask, in_mask, lat_mask, enc_cache, latent, a1, z2)
    return sigmoid(z2), cache


def backward(spec: ModelSpec, params: dict, cache: ForwardCache, dz2: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d loss / d logit for each batch row."""
    grads: dict[str, np.ndarray] = {}
    grads["w2"] = cache.a1.T @ dz2
    grads["b2"] = np.array([dz2.sum()], dtype=dz2.dtype)
    da1 = np.outer(dz2, params["w2"]) * (cache.a1 > 0)
    grads["W1"] = cache.latent_in.T @ da1
    grads["b1"] = da1.sum(axis=0)
    dlatent = da1 @ params["W1"].T
    if cache.lat_mask is not None:
        dlatent = dlatent * cache.lat_mask
    H = spec.hidden
    cache_f, cache_b = cache.enc_cache
    dxs, g = run_cell_backward(dlatent[:, :H], cache_f, _split(params, "fwd."))
    grads.update({f"fwd.{k}": v for k, v in g.items()})
    if spec.bidirectional:
        dxs_b, g = run_cell_backward(dlatent[:, H:], cache_b, _split(params, "bwd."))
        grads.update({f"bwd.{k}": v for k, v in g.items()})
        dxs = dxs + dxs_b
    if cache.in_mask is not None:
        dxs = dxs * cache.in_mask
    grads["embedding"] = embedding_backward(cache.ids, dxs, spec.vocab)
    return {k: grads[k] for k in params}


def loss_and_grads(spec: ModelSpec, params: dict, ids: np.ndarray, labels: np.ndarray,
                   train: bool = False, rng: np.random.Generator | None = None):
    """Mean BCE over the batch, per-row scores, and parameter gradients."""
    scores, cache = forward(spec, params, ids, train, rng)
    labels = np.asarray(labels, dtype=scores.dtype)
    losses, dp = bce_loss(scores, labels)
    B = len(scores)
    dz2 = (dp * scores * (1 - scores) / B).astype(scores.dtype)
    grads = backward(spec, params, cache, dz2)
    return float(losses.mean()), scores, grads


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f()
        x[idx] = orig - step
        lo = f()
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * step)
    return g
