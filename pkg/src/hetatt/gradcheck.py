"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .corpus import NodeSequence
from .masks import MaskSet
from .model import ModelConfig, ModelState

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-5


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    passed: bool


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.abs(numeric).max(initial=0.0)),
                float(np.abs(analytic).max(initial=0.0)), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / denom


def _probe_indices(size: int, samples: int) -> np.ndarray:
    if samples <= 0 or samples >= size:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, samples).astype(np.int64))


def audit_state(cfg: ModelConfig) -> ModelState:
    """A model state suitable for gradient auditing.

    Fresh initialization zeroes the classifier head, which blocks every
    upstream gradient and would make the comparison vacuous, so the head is
    filled with fixed nonzero values instead.
    """
    state = model_mod.init_model(cfg)
    w = state.params["cls.w"]
    w[...] = np.linspace(-0.5, 0.5, w.size).reshape(w.shape)
    state.params["cls.b"][...] = 0.1
    return state


def gradient_report(nodes: NodeSequence, maskset: MaskSet, labels, state: ModelState,
                    cfg: ModelConfig, eps: float = DEFAULT_EPS,
                    tol: float = DEFAULT_TOL, samples: int = 0) -> list[TensorCheck]:
    """Compare analytic gradients against central differences, tensor by tensor.

    With ``samples == 0`` every element of every parameter is perturbed, plus
    every element of the embedded input; a positive value probes that many
    evenly spaced elements per tensor instead.  Runs in eval mode, so the
    comparison is exact up to floating-point noise.
    """
    if cfg.dtype != "float64":
        raise ValueError("gradient checking requires a float64 model")
    labels = np.asarray(labels, dtype=np.float64)
    _, grads, _ = model_mod.loss_and_grads(nodes, maskset, labels, state, cfg,
                                           mode="eval")

    def probe(arr, loss_fn):
        flat = arr.reshape(-1)
        idx = _probe_indices(flat.size, samples)
        fd = np.zeros(idx.size, dtype=np.float64)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            dn = loss_fn()
            flat[i] = orig
            fd[k] = (up - dn) / (2.0 * eps)
        return idx, fd

    checks: list[TensorCheck] = []
    for name, arr in state.params.items():
        idx, fd = probe(arr, lambda: model_mod.loss_value(nodes, maskset, labels,
                                                          state, cfg))
        err = _rel_error(grads[name].reshape(-1)[idx], fd)
        checks.append(TensorCheck(name=name, max_rel_error=err, passed=err < tol))

    x0 = model_mod.embed(nodes, state, cfg)
    _, _, aux = model_mod.loss_and_grads(nodes, maskset, labels, state, cfg,
                                         mode="eval", x_override=x0)
    idx, fd = probe(x0, lambda: model_mod.loss_value(nodes, maskset, labels, state,
                                                     cfg, x_override=x0))
    err = _rel_error(aux["dx"].reshape(-1)[idx], fd)
    checks.append(TensorCheck(name="input.x", max_rel_error=err, passed=err < tol))
    return checks
