"""Sparse binary attention masks.

Three structural families cover every connection the encoder uses: a BAND
of radius w around the diagonal for token-to-token locality, a GLOBAL
row/column set for the aggregation nodes, and per-cluster BLOCKS for
entity coreference.  A mask value of 1 means the pair may attend, 0 means
it is disconnected.  Masks are never materialized densely except through
:func:`densify`, which exists for oracles and small-scale checks.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .corpus import NodeSequence

BAND = "band"
GLOBAL = "global"
BLOCKS = "blocks"

DENSIFY_LIMIT = 4096


@dataclass
class SparseMask:
    """One structural mask over an n-position sequence."""

    n: int
    kind: str
    w: int = 0
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    blocks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"mask needs n >= 1, got {self.n}")
        if self.kind == BAND:
            if self.w < 0:
                raise ValueError(f"band radius must be >= 0, got {self.w}")
        elif self.kind == GLOBAL:
            self.rows = np.unique(np.asarray(self.rows, dtype=np.int64))
            self.cols = np.unique(np.asarray(self.cols, dtype=np.int64))
            for arr in (self.rows, self.cols):
                if arr.size and (arr[0] < 0 or arr[-1] >= self.n):
                    raise ValueError("global index out of range")
            self._row_member = np.zeros(self.n, dtype=bool)
            self._row_member[self.rows] = True
            self._col_member = np.zeros(self.n, dtype=bool)
            self._col_member[self.cols] = True
        elif self.kind == BLOCKS:
            seen = np.zeros(self.n, dtype=bool)
            cleaned = []
            for ci, cluster in enumerate(self.blocks):
                cluster = np.unique(np.asarray(cluster, dtype=np.int64))
                if cluster.size and (cluster[0] < 0 or cluster[-1] >= self.n):
                    raise ValueError("cluster position out of range")
                dup = seen[cluster]
                if dup.any():
                    warnings.warn(
                        f"cluster {ci} repeats {cluster[dup].tolist()} from an earlier "
                        f"cluster; dropping the later mentions")
                    cluster = cluster[~dup]
                if cluster.size:
                    seen[cluster] = True
                    cleaned.append(cluster)
            self.blocks = cleaned
            member = np.full(self.n, -1, dtype=np.int64)
            for ci, cluster in enumerate(self.blocks):
                member[cluster] = ci
            self._cluster_of = member
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")

    def contains(self, i: int, j: int) -> bool:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"({i}, {j}) outside a {self.n}-position mask")
        if self.kind == BAND:
            return abs(i - j) <= self.w
        if self.kind == GLOBAL:
            return bool(self._row_member[i] or self._col_member[j])
        ci = self._cluster_of[i]
        return ci >= 0 and ci == self._cluster_of[j]

    def entries(self) -> int:
        """Exact number of stored (connected) coordinate pairs."""
        if self.kind == BAND:
            w = min(self.w, self.n - 1)
            return self.n * (2 * w + 1) - w * (w + 1)
        if self.kind == GLOBAL:
            r, c = len(self.rows), len(self.cols)
            return r * self.n + c * self.n - r * c
        return sum(int(c.size) ** 2 for c in self.blocks)


def band_mask(n: int, w: int) -> SparseMask:
    return SparseMask(n=n, kind=BAND, w=w)


def global_mask(n: int, rows, cols) -> SparseMask:
    return SparseMask(n=n, kind=GLOBAL, rows=np.asarray(rows, dtype=np.int64),
                      cols=np.asarray(cols, dtype=np.int64))


def blocks_mask(n: int, clusters) -> SparseMask:
    return SparseMask(n=n, kind=BLOCKS,
                      blocks=[np.asarray(c, dtype=np.int64) for c in clusters])


def build_t2t(n: int, w: int) -> SparseMask:
    """Sliding-window mask: positions i, j connect iff |i - j| <= w."""
    return band_mask(n, w)


def build_ts(nodes: NodeSequence) -> SparseMask:
    """Aggregation mask: sentence and document nodes attend everywhere and
    are attended from everywhere."""
    agg = np.union1d(nodes.sent_nodes, nodes.doc_nodes)
    return global_mask(nodes.n, agg, agg)


def build_e2e(nodes: NodeSequence) -> SparseMask:
    """Coreference mask: mention head tokens of one cluster interconnect."""
    return blocks_mask(nodes.n, nodes.entity_positions)


def densify(mask: SparseMask) -> np.ndarray:
    """Materialize the boolean n-by-n matrix.  Guarded to small n."""
    if mask.n > DENSIFY_LIMIT:
        raise ValueError(f"refusing to densify n={mask.n} (> {DENSIFY_LIMIT})")
    n = mask.n
    if mask.kind == BAND:
        idx = np.arange(n)
        return np.abs(idx[:, None] - idx[None, :]) <= mask.w
    if mask.kind == GLOBAL:
        return mask._row_member[:, None] | mask._col_member[None, :]
    out = np.zeros((n, n), dtype=bool)
    for cluster in mask.blocks:
        out[np.ix_(cluster, cluster)] = True
    return out


_FIXED = re.compile(r"^fixed:(\d+)$")


def window_schedule(kind: str, layers: int, w_min: int = 32, w_max: int = 512) -> list[int]:
    """Per-layer band radii.

    ``inc`` interpolates geometrically from w_min up to w_max, ``dec`` is its
    reverse, and ``fixed:W`` repeats one radius.  A single-layer schedule for
    inc/dec uses the geometric midpoint.
    """
    if layers < 0:
        raise ValueError("layer count must be >= 0")
    m = _FIXED.match(kind)
    if m:
        return [int(m.group(1))] * layers
    if kind not in ("inc", "dec"):
        raise ValueError(f"unknown schedule {kind!r} (expected inc, dec, or fixed:W)")
    if w_min < 0 or w_max < w_min:
        raise ValueError(f"bad window endpoints ({w_min}, {w_max})")
    if layers == 0:
        return []
    if layers == 1:
        ws = [round(math.sqrt(w_min * w_max))]
    else:
        ratio = w_max / w_min if w_min > 0 else None
        ws = []
        for l in range(layers):
            t = l / (layers - 1)
            if ratio is None:
                ws.append(round(w_max * t))
            else:
                ws.append(round(w_min * ratio ** t))
    if kind == "dec":
        ws = ws[::-1]
    return ws


@dataclass
class LayerMasks:
    t2t: SparseMask
    ts: SparseMask
    e2e: SparseMask

    def by_pattern(self) -> dict[str, SparseMask]:
        return {"t2t": self.t2t, "ts": self.ts, "e2e": self.e2e}


@dataclass
class MaskSet:
    layers: list[LayerMasks]
    schedule: list[int]

    @property
    def n(self) -> int:
        return self.layers[0].t2t.n if self.layers else 0


def assemble_mask_set(n: int, globals_: Iterable[int], clusters, schedule: list[int],
                      enable_ts: bool = True, enable_e2e: bool = True) -> MaskSet:
    """Build per-layer masks from explicit structure.

    Only the band varies across layers; the aggregation and coreference
    masks are built once and shared by reference.  Disabled patterns get
    empty masks, which downstream treats as a zero contribution.
    """
    ts = global_mask(n, globals_ if enable_ts else (), globals_ if enable_ts else ())
    e2e = blocks_mask(n, clusters if enable_e2e else [])
    layers = [LayerMasks(t2t=build_t2t(n, w), ts=ts, e2e=e2e) for w in schedule]
    return MaskSet(layers=layers, schedule=list(schedule))


def build_mask_set(nodes: NodeSequence, schedule: list[int],
                   enable_ts: bool = True, enable_e2e: bool = True) -> MaskSet:
    agg = np.union1d(nodes.sent_nodes, nodes.doc_nodes)
    return assemble_mask_set(nodes.n, agg, nodes.entity_positions, schedule,
                             enable_ts=enable_ts, enable_e2e=enable_e2e)


@dataclass
class LayerCost:
    layer: int
    w: int
    t2t: int
    ts: int
    e2e: int

    @property
    def total(self) -> int:
        return self.t2t + self.ts + self.e2e


@dataclass
class CostReport:
    n: int
    rows: list[LayerCost]

    @property
    def sparse_total(self) -> int:
        return sum(r.total for r in self.rows)

    @property
    def dense_total(self) -> int:
        return self.n * self.n * len(self.rows)

    @property
    def ratio(self) -> float:
        return self.sparse_total / self.dense_total if self.rows else 0.0


def entry_counts(ms: MaskSet) -> CostReport:
    """Per-layer stored-entry counts against the dense n^2 baseline.

    Entries shared between patterns are intentionally counted once per
    pattern, because each pattern stores its own attention.
    """
    rows = []
    for l, lm in enumerate(ms.layers):
        rows.append(LayerCost(layer=l, w=lm.t2t.w, t2t=lm.t2t.entries(),
                              ts=lm.ts.entries(), e2e=lm.e2e.entries()))
    return CostReport(n=ms.n, rows=rows)


def synthetic_layout(n: int, tokens_per_sentence: int = 16,
                     cluster_every: int = 128, cluster_size: int = 4):
    """Structural fixture for cost reporting without a real document.

    Aggregation nodes sit every ``tokens_per_sentence + 1`` positions;
    mentions are evenly spread tokens grouped into fixed-size clusters at a
    density of one cluster per ``cluster_every`` positions.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    stride = tokens_per_sentence + 1
    globals_ = np.arange(0, n, stride, dtype=np.int64)
    is_global = np.zeros(n, dtype=bool)
    is_global[globals_] = True
    tokens = np.flatnonzero(~is_global)

    clusters: list[np.ndarray] = []
    n_clusters = n // cluster_every
    if n_clusters > 0 and tokens.size:
        mention_stride = max(1, cluster_every // cluster_size)
        mentions = tokens[::mention_stride]
        for c in range(n_clusters):
            chunk = mentions[c * cluster_size:(c + 1) * cluster_size]
            if chunk.size == cluster_size:
                clusters.append(chunk)
    return globals_, clusters
