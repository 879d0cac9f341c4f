"""Encoder model: embeddings, layers, sentence scoring, and exact gradients.

The forward pass follows a post-norm residual layout per layer,

    H <- LayerNorm(H + Dropout(HetAtt(H)))
    H <- LayerNorm(H + Dropout(FFN(H)))

with a GELU feed-forward and one sigmoid classifier read off the sentence
node rows.  Every operation has a hand-written backward so the full loss
gradient is analytic; finite differences are used only as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from . import attention, masks as masks_mod
from .attention import HetAttentionParams, PatternParams
from .corpus import NodeSequence
from .masks import MaskSet
from .rng import derive_rng

LN_EPS = 1e-5
_DTYPES = {"float32": np.float32, "float64": np.float64}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    heads: int = 4
    d_h: int = 16
    layers: int = 4
    d_ff: int = 256
    schedule: str = "inc"
    w_min: int = 2
    w_max: int = 8
    dropout: float = 0.1
    max_positions: int = 512
    enable_ts: bool = True
    enable_e2e: bool = True
    multi_doc: bool = False
    global_positions: bool = False
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model != self.heads * self.d_h:
            raise ConfigError(
                f"d_model ({self.d_model}) must equal heads * d_h "
                f"({self.heads} * {self.d_h})")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover the reserved ids")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.layers < 0 or self.d_ff < 1 or self.max_positions < 1:
            raise ConfigError("layers, d_ff, and max_positions must be positive")
        # validates the schedule string early
        masks_mod.window_schedule(self.schedule, max(self.layers, 1), self.w_min, self.w_max)

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def window_schedule(self) -> list[int]:
        return masks_mod.window_schedule(self.schedule, self.layers, self.w_min, self.w_max)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    step: int = 0


def param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical parameter list: (name, shape, init family), in storage order."""
    d, h, dh, ff = cfg.d_model, cfg.heads, cfg.d_h, cfg.d_ff
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("emb.tok", (cfg.vocab_size, d), "uniform"),
        ("emb.pos", (cfg.max_positions, d), "uniform"),
        ("emb.seg", (2, d), "uniform"),
    ]
    for l in range(cfg.layers):
        for m in attention.PATTERNS:
            for w in ("wq", "wk", "wv"):
                specs.append((f"layers.{l}.att.{m}.{w}", (h, d, dh), "uniform"))
        specs.append((f"layers.{l}.att.wo", (h * dh, d), "uniform"))
        specs.append((f"layers.{l}.ln1.scale", (d,), "ones"))
        specs.append((f"layers.{l}.ln1.shift", (d,), "zeros"))
        specs.append((f"layers.{l}.ffn.w1", (d, ff), "uniform"))
        specs.append((f"layers.{l}.ffn.b1", (ff,), "zeros"))
        specs.append((f"layers.{l}.ffn.w2", (ff, d), "uniform"))
        specs.append((f"layers.{l}.ffn.b2", (d,), "zeros"))
        specs.append((f"layers.{l}.ln2.scale", (d,), "ones"))
        specs.append((f"layers.{l}.ln2.shift", (d,), "zeros"))
    specs.append(("cls.w", (d, 1), "zeros"))
    specs.append(("cls.b", (1,), "zeros"))
    return specs


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_specs(cfg))


def _fan(shape) -> tuple[int, int]:
    if len(shape) == 3:  # stacked per-head projections
        return shape[1], shape[2]
    if len(shape) == 2:
        return shape[0], shape[1]
    return shape[0], shape[0]


def init_model(cfg: ModelConfig) -> ModelState:
    """Deterministic initialization from cfg.seed.

    Weight matrices draw from a scaled uniform with bound sqrt(6/(fan_in +
    fan_out)); normalization scales start at one, every bias and the
    classifier at zero.
    """
    rng = derive_rng(cfg.seed, "init")
    dt = cfg.np_dtype
    params: dict[str, np.ndarray] = {}
    for name, shape, family in param_specs(cfg):
        if family == "uniform":
            fan_in, fan_out = _fan(shape)
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dt)
        elif family == "ones":
            params[name] = np.ones(shape, dtype=dt)
        else:
            params[name] = np.zeros(shape, dtype=dt)
    return ModelState(params=params, step=0)


def layer_attention_params(state: ModelState, l: int) -> HetAttentionParams:
    p = state.params
    return HetAttentionParams(
        patterns={m: PatternParams(wq=p[f"layers.{l}.att.{m}.wq"],
                                   wk=p[f"layers.{l}.att.{m}.wk"],
                                   wv=p[f"layers.{l}.att.{m}.wv"])
                  for m in attention.PATTERNS},
        wo=p[f"layers.{l}.att.wo"])


def embed(nodes: NodeSequence, state: ModelState, cfg: ModelConfig) -> np.ndarray:
    """Sum of token, position, and segment embeddings per position."""
    if nodes.position.max(initial=0) >= cfg.max_positions:
        raise ConfigError(
            f"position {int(nodes.position.max())} exceeds max_positions={cfg.max_positions}")
    p = state.params
    X = (p["emb.tok"][nodes.node_ids]
         + p["emb.pos"][nodes.position]
         + p["emb.seg"][nodes.segment])
    return X.astype(cfg.np_dtype, copy=False)


def _layer_norm_forward(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv)


def _layer_norm_backward(dy, scale, cache):
    xhat, inv = cache
    dscale = (dy * xhat).sum(axis=0)
    dshift = dy.sum(axis=0)
    dxhat = dy * scale
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dscale, dshift


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu_forward(u):
    phi = 0.5 * (1.0 + erf(u / _SQRT2))
    return u * phi, (u, phi)


def _gelu_backward(dg, cache):
    u, phi = cache
    pdf = np.exp(-0.5 * u * u) * _INV_SQRT_2PI
    return dg * (phi + u * pdf)


def _dropout_forward(x, rate, mode, rng):
    if mode != "train" or rate <= 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


@dataclass
class _LayerCache:
    att: attention.HetAttentionCache
    drop1: Optional[np.ndarray]
    ln1: tuple
    h1: np.ndarray
    g: np.ndarray
    gelu: tuple
    drop2: Optional[np.ndarray]
    ln2: tuple


@dataclass
class EncodeCache:
    x: np.ndarray
    h: np.ndarray
    layers: list[_LayerCache] = field(default_factory=list)


def encode_with_cache(nodes: NodeSequence, maskset: MaskSet, state: ModelState,
                      cfg: ModelConfig, mode: str = "eval", rng=None,
                      x_override: Optional[np.ndarray] = None):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if len(maskset.layers) != cfg.layers:
        raise ConfigError(f"mask set has {len(maskset.layers)} layers, model has {cfg.layers}")
    if mode == "train" and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training with dropout requires the dropout stream generator")

    x = embed(nodes, state, cfg) if x_override is None else x_override
    cache = EncodeCache(x=x, h=x)
    h = x
    p = state.params
    for l in range(cfg.layers):
        y_att, att_cache = attention.het_attention_forward(
            h, maskset.layers[l], layer_attention_params(state, l))
        y_drop, m1 = _dropout_forward(y_att, cfg.dropout, mode, rng)
        h1, ln1c = _layer_norm_forward(h + y_drop, p[f"layers.{l}.ln1.scale"],
                                       p[f"layers.{l}.ln1.shift"])
        u = h1 @ p[f"layers.{l}.ffn.w1"] + p[f"layers.{l}.ffn.b1"]
        g, gc = _gelu_forward(u)
        f = g @ p[f"layers.{l}.ffn.w2"] + p[f"layers.{l}.ffn.b2"]
        f_drop, m2 = _dropout_forward(f, cfg.dropout, mode, rng)
        h2, ln2c = _layer_norm_forward(h1 + f_drop, p[f"layers.{l}.ln2.scale"],
                                       p[f"layers.{l}.ln2.shift"])
        cache.layers.append(_LayerCache(att=att_cache, drop1=m1, ln1=ln1c, h1=h1,
                                        g=g, gelu=gc, drop2=m2, ln2=ln2c))
        h = h2
    cache.h = h
    return h, cache


def encode(nodes: NodeSequence, maskset: MaskSet, state: ModelState, cfg: ModelConfig,
           mode: str = "eval", rng=None, x_override=None) -> np.ndarray:
    h, _ = encode_with_cache(nodes, maskset, state, cfg, mode=mode, rng=rng,
                             x_override=x_override)
    return h


def sentence_logits(h: np.ndarray, nodes: NodeSequence, state: ModelState) -> np.ndarray:
    rows = h[nodes.sent_nodes]
    return (rows @ state.params["cls.w"])[:, 0] + state.params["cls.b"][0]


def score_sentences(h: np.ndarray, nodes: NodeSequence, state: ModelState) -> np.ndarray:
    """Per-sentence relevance scores in (0, 1)."""
    return _sigmoid(sentence_logits(h, nodes, state))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_loss(scores, labels):
    """Mean binary cross-entropy over sentences, with its score gradient.

    The per-label branches keep the computation in log space, so saturated
    scores from large logits stay finite.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in shape")
    if scores.size == 0:
        raise ValueError("no sentences to score")
    if np.any((scores < 0) | (scores > 1)):
        raise ValueError("scores must lie in [0, 1]")
    pos = labels >= 0.5
    terms = np.where(pos, -_safe_log(scores), -_safe_log1m(scores))
    s = scores.size
    loss = float(terms.sum() / s)
    dscores = np.where(pos, -1.0 / np.maximum(scores, _PROB_FLOOR),
                       1.0 / np.maximum(1.0 - scores, _PROB_FLOOR)) / s
    return loss, dscores


_PROB_FLOOR = 1e-12


def _safe_log(p):
    return np.log(np.maximum(p, _PROB_FLOOR))


def _safe_log1m(p):
    # the inner clamp keeps the discarded branch finite; where() picks the
    # floor value for saturated inputs either way
    return np.where(p >= 1.0 - _PROB_FLOOR, np.log(_PROB_FLOOR),
                    np.log1p(-np.minimum(p, 1.0 - _PROB_FLOOR)))


def bce_loss_from_logits(logits, labels):
    """Numerically exact BCE on logits; returns (loss, dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError("logits and labels differ in shape")
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = float((softplus - y * z).sum() / z.size)
    dlogits = (_sigmoid(z) - y) / z.size
    return loss, dlogits


def loss_and_grads(nodes: NodeSequence, maskset: MaskSet, labels, state: ModelState,
                   cfg: ModelConfig, mode: str = "train", rng=None,
                   x_override: Optional[np.ndarray] = None):
    """Full pipeline loss with gradients for every parameter tensor.

    Returns (loss, grads, aux) where grads carries one array per parameter
    (zeros for parameters the input never touches) and aux holds the
    sentence scores and the gradient with respect to the embedded input.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (len(nodes.sent_nodes),):
        raise ValueError(
            f"expected {len(nodes.sent_nodes)} labels, got {labels.shape}")
    h, cache = encode_with_cache(nodes, maskset, state, cfg, mode=mode, rng=rng,
                                 x_override=x_override)
    logits = sentence_logits(h, nodes, state)
    loss, dlogits = bce_loss_from_logits(logits, labels)

    p = state.params
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    rows = h[nodes.sent_nodes]
    grads["cls.w"][:] = rows.T @ dlogits[:, None]
    grads["cls.b"][:] = dlogits.sum()
    dh = np.zeros_like(h)
    dh[nodes.sent_nodes] += dlogits[:, None] * p["cls.w"][:, 0][None, :]

    for l in range(cfg.layers - 1, -1, -1):
        lc = cache.layers[l]
        dr2, dscale2, dshift2 = _layer_norm_backward(dh, p[f"layers.{l}.ln2.scale"], lc.ln2)
        grads[f"layers.{l}.ln2.scale"] += dscale2
        grads[f"layers.{l}.ln2.shift"] += dshift2
        dh1 = dr2.copy()
        df = dr2 if lc.drop2 is None else dr2 * lc.drop2
        grads[f"layers.{l}.ffn.w2"] += lc.g.T @ df
        grads[f"layers.{l}.ffn.b2"] += df.sum(axis=0)
        dg = df @ p[f"layers.{l}.ffn.w2"].T
        du = _gelu_backward(dg, lc.gelu)
        grads[f"layers.{l}.ffn.w1"] += lc.h1.T @ du
        grads[f"layers.{l}.ffn.b1"] += du.sum(axis=0)
        dh1 += du @ p[f"layers.{l}.ffn.w1"].T
        dr1, dscale1, dshift1 = _layer_norm_backward(dh1, p[f"layers.{l}.ln1.scale"], lc.ln1)
        grads[f"layers.{l}.ln1.scale"] += dscale1
        grads[f"layers.{l}.ln1.shift"] += dshift1
        dh_prev = dr1.copy()
        dy_att = dr1 if lc.drop1 is None else dr1 * lc.drop1
        dx_att, att_grads = attention.het_attention_backward(lc.att, dy_att)
        dh_prev += dx_att
        grads[f"layers.{l}.att.wo"] += att_grads.wo
        for m in attention.PATTERNS:
            grads[f"layers.{l}.att.{m}.wq"] += att_grads.patterns[m].wq
            grads[f"layers.{l}.att.{m}.wk"] += att_grads.patterns[m].wk
            grads[f"layers.{l}.att.{m}.wv"] += att_grads.patterns[m].wv
        dh = dh_prev

    dx = dh
    if x_override is None:
        np.add.at(grads["emb.tok"], nodes.node_ids, dx)
        np.add.at(grads["emb.pos"], nodes.position, dx)
        np.add.at(grads["emb.seg"], nodes.segment, dx)

    aux = {"scores": _sigmoid(logits), "logits": logits, "dx": dx}
    return loss, grads, aux


def loss_value(nodes: NodeSequence, maskset: MaskSet, labels, state: ModelState,
               cfg: ModelConfig, x_override: Optional[np.ndarray] = None) -> float:
    """Forward-only loss (eval mode), for finite-difference probes."""
    labels = np.asarray(labels, dtype=np.float64)
    h, _ = encode_with_cache(nodes, maskset, state, cfg, mode="eval",
                             x_override=x_override)
    logits = sentence_logits(h, nodes, state)
    loss, _ = bce_loss_from_logits(logits, labels)
    return loss
