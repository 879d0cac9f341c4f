"""Training loop: Adam with warmup schedule and gradient accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .corpus import Document, NodeSequence, Vocab, build_nodes
from .masks import MaskSet, build_mask_set
from .model import ModelConfig, ModelState
from .rng import derive_rng

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainOptions:
    lr: float = 0.05
    warmup_steps: int = 100
    max_steps: int = 500
    batch: int = 1
    accum: int = 1

    def __post_init__(self):
        if self.lr < 0 or self.warmup_steps < 1 or self.max_steps < 0:
            raise ValueError("lr must be >= 0, warmup_steps >= 1, max_steps >= 0")
        if self.batch < 1 or self.accum < 1:
            raise ValueError("batch and accum must be >= 1")


def lr_at(step: int, lr: float, warmup_steps: int) -> float:
    """Warmup-then-decay factor: lr * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("schedule steps start at 1")
    return lr * min(step ** -0.5, step * warmup_steps ** -1.5)


@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    state: ModelState
    trace: list[TraceRow] = field(default_factory=list)


def prepare_doc(doc: Document, vocab: Vocab, cfg: ModelConfig):
    nodes = build_nodes(doc, vocab, multi_doc=cfg.multi_doc,
                        global_positions=cfg.global_positions)
    maskset = build_mask_set(nodes, cfg.window_schedule(),
                             enable_ts=cfg.enable_ts, enable_e2e=cfg.enable_e2e)
    return nodes, maskset


def train(docs: list[Document], vocab: Vocab, cfg: ModelConfig,
          opts: TrainOptions) -> TrainResult:
    """Fit the model to oracle-labeled documents.

    Each optimizer step accumulates gradients over ``accum`` micro-batches of
    ``batch`` documents drawn in a seeded shuffled order.  A non-finite batch
    loss aborts immediately.
    """
    missing = [d.id for d in docs if d.labels is None]
    if missing:
        raise ValueError(f"documents lack labels: {missing[:5]}"
                         + (" ..." if len(missing) > 5 else ""))
    if not docs:
        raise ValueError("no documents to train on")

    prepared = []
    for d in docs:
        nodes, maskset = prepare_doc(d, vocab, cfg)
        prepared.append((nodes, maskset, np.asarray(d.labels, dtype=np.float64)))

    state = model_mod.init_model(cfg)
    m = {k: np.zeros_like(v) for k, v in state.params.items()}
    v = {k: np.zeros_like(a) for k, a in state.params.items()}

    rng_data = derive_rng(cfg.seed, "data-order")
    rng_drop = derive_rng(cfg.seed, "dropout")
    order = rng_data.permutation(len(prepared))
    cursor = 0

    def next_doc():
        nonlocal order, cursor
        if cursor >= len(order):
            order = rng_data.permutation(len(prepared))
            cursor = 0
        item = prepared[order[cursor]]
        cursor += 1
        return item

    trace: list[TraceRow] = []
    denom = opts.batch * opts.accum
    for step in range(1, opts.max_steps + 1):
        acc = {k: np.zeros_like(a) for k, a in state.params.items()}
        loss_sum = 0.0
        for _ in range(opts.accum):
            for _ in range(opts.batch):
                nodes, maskset, labels = next_doc()
                loss, grads, _ = model_mod.loss_and_grads(
                    nodes, maskset, labels, state, cfg, mode="train", rng=rng_drop)
                loss_sum += loss
                for k in acc:
                    acc[k] += grads[k]
        batch_loss = loss_sum / denom
        if not np.isfinite(batch_loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")

        lr_t = lr_at(step, opts.lr, opts.warmup_steps)
        b1t = 1.0 - ADAM_B1 ** step
        b2t = 1.0 - ADAM_B2 ** step
        for k, theta in state.params.items():
            g = acc[k] / denom
            m[k] = ADAM_B1 * m[k] + (1.0 - ADAM_B1) * g
            v[k] = ADAM_B2 * v[k] + (1.0 - ADAM_B2) * g * g
            mhat = m[k] / b1t
            vhat = v[k] / b2t
            theta -= (lr_t * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(theta.dtype)
        state.step = step
        trace.append(TraceRow(step=step, lr=lr_t, loss=batch_loss))
    return TrainResult(state=state, trace=trace)
