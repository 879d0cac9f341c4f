"""Sparse multi-pattern attention with analytic gradients.

Each pattern (band, global, blocks) owns per-head query/key/value
projections; their outputs are summed and sent through one shared output
projection.  Scores are computed and stored only at connected coordinates:

* BAND keeps an n-by-(2w+1) rectangle whose out-of-range lanes are flagged
  invalid rather than stored as real pairs;
* GLOBAL keeps a g-by-n slab for the global rows plus an (n-g)-by-g slab
  for everyone else's view of the global columns, so the g-by-g overlap is
  owned by the row slab and nothing is stored twice;
* BLOCKS keeps one dense tile per cluster.

Rows whose allowed set is empty produce zero output and zero gradient.
A module-level counter tallies score evaluations so tests can confirm the
work equals mask entries times heads, never n^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .masks import BAND, BLOCKS, GLOBAL, LayerMasks, SparseMask

PATTERNS = ("t2t", "ts", "e2e")


class ScoreCounter:
    """Counts individual score evaluations across all kernels."""

    def __init__(self):
        self.value = 0

    def reset(self):
        self.value = 0

    def add(self, k: int):
        self.value += int(k)


WORK = ScoreCounter()


@dataclass
class PatternParams:
    """Per-head projections for one pattern, each of shape (heads, d_model, d_h)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


@dataclass
class HetAttentionParams:
    patterns: dict[str, PatternParams]
    wo: np.ndarray  # (heads * d_h, d_model)


def masked_softmax(scores, allowed) -> tuple[np.ndarray, bool]:
    """Softmax of ``scores`` restricted to the ``allowed`` index set.

    Disallowed positions get probability zero.  An empty allowed set yields
    an all-zero row flagged EMPTY instead of a uniform fallback.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("masked_softmax expects a 1-D score vector")
    if np.isnan(scores).any():
        raise ValueError("NaN in attention scores")
    allowed = list(allowed)
    idx = np.unique(np.asarray(allowed, dtype=np.int64)) if allowed else np.zeros(0, dtype=np.int64)
    out = np.zeros_like(scores)
    if idx.size == 0:
        return out, True
    if idx[0] < 0 or idx[-1] >= scores.size:
        raise IndexError("allowed index outside the score vector")
    sub = scores[idx]
    e = np.exp(sub - sub.max())
    out[idx] = e / e.sum()
    return out, False


def _softmax_lastaxis(S: np.ndarray, valid: Optional[np.ndarray]) -> np.ndarray:
    """Row softmax over the last axis with optional validity lanes.

    Invalid lanes get probability 0; fully invalid rows collapse to zero.
    Uses max subtraction on the valid lanes only.
    """
    if valid is None:
        m = S.max(axis=-1, keepdims=True)
        e = np.exp(S - m)
        return e / e.sum(axis=-1, keepdims=True)
    neg = np.where(valid, S, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(valid, np.exp(neg - safe_m), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


def _project(X: np.ndarray, p: PatternParams):
    Q = np.einsum("nd,hde->hne", X, p.wq)
    K = np.einsum("nd,hde->hne", X, p.wk)
    V = np.einsum("nd,hde->hne", X, p.wv)
    return Q, K, V


@dataclass
class _BandCache:
    w: int
    scale: float
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    P: np.ndarray  # (H, n, 2w+1)


@dataclass
class _GlobalCache:
    scale: float
    g_idx: np.ndarray
    c_idx: np.ndarray
    r_idx: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    P_rows: np.ndarray  # (H, g, n)
    P_cols: np.ndarray  # (H, r, c)


@dataclass
class _BlocksCache:
    scale: float
    tiles: list  # (idx, Xc, Qc, Kc, Vc, Pc)


def _band_forward(X: np.ndarray, mask: SparseMask, p: PatternParams):
    n, _ = X.shape
    H, _, dh = p.wq.shape
    w = min(mask.w, n - 1)
    width = 2 * w + 1
    scale = 1.0 / math.sqrt(dh)
    Q, K, V = _project(X, p)

    S = np.full((H, n, width), -np.inf, dtype=X.dtype)
    valid = np.zeros((n, width), dtype=bool)
    for o in range(width):
        d = o - w
        lo, hi = max(0, -d), min(n, n - d)
        if lo >= hi:
            continue
        S[:, lo:hi, o] = np.einsum("hne,hne->hn", Q[:, lo:hi], K[:, lo + d:hi + d]) * scale
        valid[lo:hi, o] = True
        WORK.add((hi - lo) * H)
    P = _softmax_lastaxis(S, valid[None, :, :])

    O = np.zeros((H, n, dh), dtype=X.dtype)
    for o in range(width):
        d = o - w
        lo, hi = max(0, -d), min(n, n - d)
        if lo >= hi:
            continue
        O[:, lo:hi] += P[:, lo:hi, o, None] * V[:, lo + d:hi + d]
    return O, _BandCache(w=w, scale=scale, Q=Q, K=K, V=V, P=P)


def _band_backward(X: np.ndarray, cache: _BandCache, p: PatternParams, dO: np.ndarray):
    w, scale = cache.w, cache.scale
    Q, K, V, P = cache.Q, cache.K, cache.V, cache.P
    H, n, dh = Q.shape
    width = 2 * w + 1

    dP = np.zeros_like(P)
    dV = np.zeros_like(V)
    for o in range(width):
        d = o - w
        lo, hi = max(0, -d), min(n, n - d)
        if lo >= hi:
            continue
        dP[:, lo:hi, o] = np.einsum("hne,hne->hn", dO[:, lo:hi], V[:, lo + d:hi + d])
        dV[:, lo + d:hi + d] += P[:, lo:hi, o, None] * dO[:, lo:hi]
    dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))

    dQ = np.zeros_like(Q)
    dK = np.zeros_like(K)
    for o in range(width):
        d = o - w
        lo, hi = max(0, -d), min(n, n - d)
        if lo >= hi:
            continue
        dQ[:, lo:hi] += dS[:, lo:hi, o, None] * K[:, lo + d:hi + d] * scale
        dK[:, lo + d:hi + d] += dS[:, lo:hi, o, None] * Q[:, lo:hi] * scale
    return _close_projection(X, p, dQ, dK, dV)


def _global_forward(X: np.ndarray, mask: SparseMask, p: PatternParams):
    n, _ = X.shape
    H, _, dh = p.wq.shape
    scale = 1.0 / math.sqrt(dh)
    g_idx = mask.rows
    c_idx = mask.cols
    member = np.zeros(n, dtype=bool)
    member[g_idx] = True
    r_idx = np.flatnonzero(~member)
    Q, K, V = _project(X, p)

    O = np.zeros((H, n, dh), dtype=X.dtype)
    if g_idx.size:
        S_rows = np.einsum("hge,hne->hgn", Q[:, g_idx], K) * scale
        WORK.add(g_idx.size * n * H)
        P_rows = _softmax_lastaxis(S_rows, None)
        O[:, g_idx] = np.einsum("hgn,hne->hge", P_rows, V)
    else:
        P_rows = np.zeros((H, 0, n), dtype=X.dtype)
    if r_idx.size and c_idx.size:
        S_cols = np.einsum("hre,hge->hrg", Q[:, r_idx], K[:, c_idx]) * scale
        WORK.add(r_idx.size * c_idx.size * H)
        P_cols = _softmax_lastaxis(S_cols, None)
        O[:, r_idx] = np.einsum("hrg,hge->hre", P_cols, V[:, c_idx])
    else:
        P_cols = np.zeros((H, r_idx.size, c_idx.size), dtype=X.dtype)
    return O, _GlobalCache(scale=scale, g_idx=g_idx, c_idx=c_idx, r_idx=r_idx,
                           Q=Q, K=K, V=V, P_rows=P_rows, P_cols=P_cols)


def _global_backward(X: np.ndarray, cache: _GlobalCache, p: PatternParams, dO: np.ndarray):
    scale = cache.scale
    g_idx, r_idx = cache.g_idx, cache.r_idx
    Q, K, V = cache.Q, cache.K, cache.V
    c_size = cache.P_cols.shape[-1]

    dQ = np.zeros_like(Q)
    dK = np.zeros_like(K)
    dV = np.zeros_like(V)

    if g_idx.size:
        P = cache.P_rows
        dP = np.einsum("hge,hne->hgn", dO[:, g_idx], V)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
        dQ[:, g_idx] += np.einsum("hgn,hne->hge", dS, K) * scale
        dK += np.einsum("hgn,hge->hne", dS, Q[:, g_idx]) * scale
        dV += np.einsum("hgn,hge->hne", P, dO[:, g_idx])
    if r_idx.size and c_size:
        c_idx = cache.c_idx
        P = cache.P_cols
        dP = np.einsum("hre,hge->hrg", dO[:, r_idx], V[:, c_idx])
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
        dQ[:, r_idx] += np.einsum("hrg,hge->hre", dS, K[:, c_idx]) * scale
        dK[:, c_idx] += np.einsum("hrg,hre->hge", dS, Q[:, r_idx]) * scale
        dV[:, c_idx] += np.einsum("hrg,hre->hge", P, dO[:, r_idx])
    return _close_projection(X, p, dQ, dK, dV)


def _blocks_forward(X: np.ndarray, mask: SparseMask, p: PatternParams):
    n, _ = X.shape
    H, _, dh = p.wq.shape
    scale = 1.0 / math.sqrt(dh)
    O = np.zeros((H, n, dh), dtype=X.dtype)
    tiles = []
    for idx in mask.blocks:
        Xc = X[idx]
        Qc = np.einsum("cd,hde->hce", Xc, p.wq)
        Kc = np.einsum("cd,hde->hce", Xc, p.wk)
        Vc = np.einsum("cd,hde->hce", Xc, p.wv)
        S = np.einsum("hce,hfe->hcf", Qc, Kc) * scale
        WORK.add(idx.size * idx.size * H)
        Pc = _softmax_lastaxis(S, None)
        O[:, idx] = np.einsum("hcf,hfe->hce", Pc, Vc)
        tiles.append((idx, Xc, Qc, Kc, Vc, Pc))
    return O, _BlocksCache(scale=scale, tiles=tiles)


def _blocks_backward(X: np.ndarray, cache: _BlocksCache, p: PatternParams, dO: np.ndarray):
    scale = cache.scale
    dX = np.zeros_like(X)
    dWq = np.zeros_like(p.wq)
    dWk = np.zeros_like(p.wk)
    dWv = np.zeros_like(p.wv)
    for idx, Xc, Qc, Kc, Vc, Pc in cache.tiles:
        dOc = dO[:, idx]
        dP = np.einsum("hce,hfe->hcf", dOc, Vc)
        dS = Pc * (dP - (dP * Pc).sum(axis=-1, keepdims=True))
        dQc = np.einsum("hcf,hfe->hce", dS, Kc) * scale
        dKc = np.einsum("hcf,hce->hfe", dS, Qc) * scale
        dVc = np.einsum("hcf,hce->hfe", Pc, dOc)
        dX[idx] += (np.einsum("hce,hde->cd", dQc, p.wq)
                    + np.einsum("hce,hde->cd", dKc, p.wk)
                    + np.einsum("hce,hde->cd", dVc, p.wv))
        dWq += np.einsum("cd,hce->hde", Xc, dQc)
        dWk += np.einsum("cd,hce->hde", Xc, dKc)
        dWv += np.einsum("cd,hce->hde", Xc, dVc)
    return dX, PatternParams(wq=dWq, wk=dWk, wv=dWv)


def _close_projection(X, p: PatternParams, dQ, dK, dV):
    """Fold projection gradients back to the input and the weights."""
    dX = (np.einsum("hne,hde->nd", dQ, p.wq)
          + np.einsum("hne,hde->nd", dK, p.wk)
          + np.einsum("hne,hde->nd", dV, p.wv))
    dWq = np.einsum("nd,hne->hde", X, dQ)
    dWk = np.einsum("nd,hne->hde", X, dK)
    dWv = np.einsum("nd,hne->hde", X, dV)
    return dX, PatternParams(wq=dWq, wk=dWk, wv=dWv)


def _concat_heads(O: np.ndarray) -> np.ndarray:
    H, n, dh = O.shape
    return O.transpose(1, 0, 2).reshape(n, H * dh)


def _split_heads(A: np.ndarray, H: int) -> np.ndarray:
    n, hd = A.shape
    return A.reshape(n, H, hd // H).transpose(1, 0, 2)


_FORWARD = {BAND: _band_forward, GLOBAL: _global_forward, BLOCKS: _blocks_forward}
_BACKWARD = {BAND: _band_backward, GLOBAL: _global_backward, BLOCKS: _blocks_backward}


def pattern_attention_forward(X: np.ndarray, mask: SparseMask, p: PatternParams):
    """One pattern's masked attention.

    Returns the head-concatenated output (n, heads*d_h) and a cache holding
    the sparse probability layout for the backward pass.  An empty mask
    yields zeros and a ``None`` cache.
    """
    if mask.n != X.shape[0]:
        raise ValueError(f"mask is for n={mask.n} but X has {X.shape[0]} rows")
    H, d, dh = p.wq.shape
    if d != X.shape[1]:
        raise ValueError("projection width does not match d_model")
    if mask.entries() == 0:
        return np.zeros((X.shape[0], H * dh), dtype=X.dtype), None
    O, cache = _FORWARD[mask.kind](X, mask, p)
    return _concat_heads(O), cache


def pattern_attention_backward(X: np.ndarray, mask: SparseMask, p: PatternParams,
                               cache, dA: np.ndarray):
    H = p.wq.shape[0]
    if cache is None:
        return np.zeros_like(X), PatternParams(wq=np.zeros_like(p.wq),
                                               wk=np.zeros_like(p.wk),
                                               wv=np.zeros_like(p.wv))
    return _BACKWARD[mask.kind](X, cache, p, _split_heads(dA, H))


@dataclass
class HetAttentionCache:
    X: np.ndarray
    masks: LayerMasks
    params: HetAttentionParams
    pattern_caches: dict
    A_sum: np.ndarray


@dataclass
class HetAttentionGrads:
    patterns: dict[str, PatternParams]
    wo: np.ndarray


def het_attention_forward(X: np.ndarray, masks: LayerMasks, params: HetAttentionParams):
    """Sum the three pattern attentions and apply the shared output projection."""
    caches = {}
    A_sum = None
    for name in PATTERNS:
        A, cache = pattern_attention_forward(X, masks.by_pattern()[name], params.patterns[name])
        caches[name] = cache
        A_sum = A if A_sum is None else A_sum + A
    Y = A_sum @ params.wo
    return Y, HetAttentionCache(X=X, masks=masks, params=params,
                                pattern_caches=caches, A_sum=A_sum)


def het_attention_backward(cache: HetAttentionCache, dY: np.ndarray):
    params = cache.params
    dWo = cache.A_sum.T @ dY
    dA = dY @ params.wo.T
    dX = np.zeros_like(cache.X)
    pattern_grads = {}
    for name in PATTERNS:
        dXp, gp = pattern_attention_backward(cache.X, cache.masks.by_pattern()[name],
                                             params.patterns[name],
                                             cache.pattern_caches[name], dA)
        dX += dXp
        pattern_grads[name] = gp
    return dX, HetAttentionGrads(patterns=pattern_grads, wo=dWo)


DENSE_LIMIT = 256


def dense_reference_attention(X: np.ndarray, dense_masks: dict[str, np.ndarray],
                              params: HetAttentionParams) -> np.ndarray:
    """O(n^2) oracle: full score matrices with -inf masking per pattern.

    Kept deliberately simple and separate from the sparse kernels so the two
    can be compared; guarded to small n.
    """
    n, _ = X.shape
    if n > DENSE_LIMIT:
        raise ValueError(f"dense reference is limited to n <= {DENSE_LIMIT}")
    A_sum = None
    for name in PATTERNS:
        p = params.patterns[name]
        H, _, dh = p.wq.shape
        M = dense_masks[name]
        Q, K, V = _project(X, p)
        S = np.einsum("hne,hme->hnm", Q, K) / math.sqrt(dh)
        S = np.where(M[None, :, :], S, -np.inf)
        P = _softmax_lastaxis(S, M[None, :, :])
        O = np.einsum("hnm,hme->hne", P, V)
        A = _concat_heads(O)
        A_sum = A if A_sum is None else A_sum + A
    return A_sum @ params.wo
