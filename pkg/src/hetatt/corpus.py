"""Documents, vocabulary, and heterogeneous node layout.

A document is a list of sentences plus optional gold summary, entity
clusters, and (for concatenated inputs) document boundaries.  The node
layout interleaves one aggregation position per sentence (and per document
in multi-doc mode) with the token positions, so downstream attention can
address tokens, sentences, and documents uniformly by index.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np

PAD_ID, UNK_ID, CLS_ID, DOC_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[DOC]")

# Fixed 50-word function-word list used by the entity fallback.
STOPWORDS = frozenset((
    "a", "about", "after", "all", "an", "and", "are", "as", "at", "be",
    "been", "but", "by", "can", "could", "did", "do", "for", "from", "had",
    "has", "have", "he", "her", "his", "i", "if", "in", "is", "it",
    "its", "my", "no", "not", "of", "on", "or", "she", "so", "that",
    "the", "their", "them", "they", "this", "to", "was", "were", "will", "with",
))

_WORD = re.compile(r"\S+")
_EDGE_PUNCT = string.punctuation


class CorpusError(ValueError):
    """Raised for malformed corpus files or records."""


class NodeKind(IntEnum):
    TOKEN = 0
    SENT = 1
    DOC = 2


def token_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokenize one sentence, keeping character offsets.

    Tokens are whitespace-separated runs with punctuation stripped from both
    edges and the remainder lowercased.  Offsets index the original string.
    Runs that are pure punctuation vanish.
    """
    out = []
    for m in _WORD.finditer(text):
        tok = m.group(0)
        start, end = m.span()
        lstrip = len(tok) - len(tok.lstrip(_EDGE_PUNCT))
        rstrip = len(tok) - len(tok.rstrip(_EDGE_PUNCT))
        core = tok[lstrip: len(tok) - rstrip]
        if not core:
            continue
        out.append((core.lower(), start + lstrip, end - rstrip))
    return out


def tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in token_spans(text)]


@dataclass
class Document:
    id: str
    sentences: list[str]
    summary: Optional[list[str]] = None
    entity_clusters: Optional[list[list[tuple[int, int, int]]]] = None
    doc_boundaries: Optional[list[int]] = None
    labels: Optional[list[int]] = None


def document_from_record(rec: dict, where: str = "") -> Document:
    """Build a validated Document from one parsed JSON record."""
    def fail(msg):
        raise CorpusError(f"{where}{msg}" if where else msg)

    if not isinstance(rec, dict):
        fail("record is not an object")
    if "id" not in rec or not isinstance(rec["id"], str):
        fail("missing or non-string 'id'")
    sents = rec.get("sentences")
    if not isinstance(sents, list) or not sents or not all(isinstance(s, str) for s in sents):
        fail(f"doc {rec.get('id')!r}: 'sentences' must be a non-empty list of strings")

    summary = rec.get("summary")
    if summary is not None:
        if not isinstance(summary, list) or not all(isinstance(s, str) for s in summary):
            fail(f"doc {rec['id']!r}: 'summary' must be a list of strings")

    clusters = rec.get("entities")
    parsed_clusters = None
    if clusters is not None:
        parsed_clusters = []
        for ci, cluster in enumerate(clusters):
            mentions = []
            for mi, span in enumerate(cluster):
                if not (isinstance(span, (list, tuple)) and len(span) == 3):
                    fail(f"doc {rec['id']!r}: entity span {ci}/{mi} must be [sent, start, end]")
                si, cs, ce = span
                if not (isinstance(si, int) and 0 <= si < len(sents)):
                    fail(f"doc {rec['id']!r}: entity span {ci}/{mi} has bad sentence index {si}")
                if not (isinstance(cs, int) and isinstance(ce, int) and 0 <= cs < ce <= len(sents[si])):
                    fail(f"doc {rec['id']!r}: entity span {ci}/{mi} outside sentence {si} range")
                mentions.append((si, cs, ce))
            parsed_clusters.append(mentions)

    bounds = rec.get("doc_boundaries")
    if bounds is not None:
        ok = (isinstance(bounds, list) and bounds and all(isinstance(b, int) for b in bounds)
              and bounds[0] == 0 and all(a < b for a, b in zip(bounds, bounds[1:]))
              and bounds[-1] < len(sents))
        if not ok:
            fail(f"doc {rec['id']!r}: 'doc_boundaries' must be strictly increasing, start at 0, "
                 f"and stay below the sentence count")

    labels = rec.get("labels")
    if labels is not None:
        if (not isinstance(labels, list) or len(labels) != len(sents)
                or not all(l in (0, 1) for l in labels)):
            fail(f"doc {rec['id']!r}: 'labels' must be 0/1 with one entry per sentence")

    return Document(id=rec["id"], sentences=list(sents), summary=summary,
                    entity_clusters=parsed_clusters, doc_boundaries=bounds, labels=labels)


def parse_corpus(path) -> list[Document]:
    """Read a JSONL corpus file, one document per line."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
            docs.append(document_from_record(rec, where=f"{path}: line {lineno}: "))
    if not docs:
        raise CorpusError(f"{path}: corpus is empty")
    return docs


def document_to_record(doc: Document) -> dict:
    rec = {"id": doc.id, "sentences": doc.sentences}
    if doc.summary is not None:
        rec["summary"] = doc.summary
    if doc.entity_clusters is not None:
        rec["entities"] = [[list(span) for span in cluster] for cluster in doc.entity_clusters]
    if doc.doc_boundaries is not None:
        rec["doc_boundaries"] = doc.doc_boundaries
    if doc.labels is not None:
        rec["labels"] = doc.labels
    return rec


class Vocab:
    """Token/id mapping with four reserved leading ids."""

    def __init__(self, tokens: Iterable[str]):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.id_to_token[len(RESERVED_TOKENS):]


def build_vocab(docs: list[Document], min_count: int = 1) -> Vocab:
    """Count corpus tokens and keep those seen at least ``min_count`` times.

    Ids are assigned by descending frequency, ties broken lexicographically,
    starting after the reserved ids.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    if not docs:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for doc in docs:
        for sent in doc.sentences:
            for tok in tokenize(sent):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept)


def resolve_entities_exact(doc: Document) -> list[list[tuple[int, int, int]]]:
    """Return entity clusters as (sentence, char_start, char_end) mention spans.

    Explicit clusters on the document pass through verbatim.  Otherwise every
    non-stopword lowercase token string occurring at least twice forms one
    cluster of all its occurrences, ordered by first occurrence.
    """
    if doc.entity_clusters is not None:
        return [list(cluster) for cluster in doc.entity_clusters]
    occurrences: dict[str, list[tuple[int, int, int]]] = {}
    order: list[str] = []
    for si, sent in enumerate(doc.sentences):
        for tok, cs, ce in token_spans(sent):
            if tok in STOPWORDS:
                continue
            if tok not in occurrences:
                occurrences[tok] = []
                order.append(tok)
            occurrences[tok].append((si, cs, ce))
    return [occurrences[t] for t in order if len(occurrences[t]) >= 2]


@dataclass
class NodeSequence:
    """Flat layout of one document as parallel per-position arrays."""

    node_ids: np.ndarray
    node_kind: np.ndarray
    position: np.ndarray
    segment: np.ndarray
    sent_nodes: np.ndarray
    doc_nodes: np.ndarray
    sent_span: list[tuple[int, int]]
    entity_positions: list[np.ndarray] = field(default_factory=list)
    global_positions: bool = False

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def validate(self) -> None:
        n = self.n
        for name in ("node_kind", "position", "segment"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from node_ids")
        kinds = self.node_kind
        if self.global_positions:
            if not np.array_equal(self.position, np.arange(n)):
                raise ValueError("global positions must run 0..n-1")
        else:
            agg = (kinds == NodeKind.SENT) | (kinds == NodeKind.DOC)
            if not np.array_equal(self.position == 0, agg):
                raise ValueError("position must be 0 exactly at sentence/document nodes")
        if len(self.sent_nodes) != len(self.sent_span):
            raise ValueError("one span is required per sentence node")
        for i, (s, (lo, hi)) in enumerate(zip(self.sent_nodes, self.sent_span)):
            if kinds[s] != NodeKind.SENT:
                raise ValueError(f"sent_nodes[{i}] does not point at a sentence node")
            if not (s < lo <= hi <= n):
                raise ValueError(f"sentence {i} span {lo, hi} inconsistent with its node {s}")
            if self.segment[s] != i % 2:
                raise ValueError(f"sentence {i} has wrong segment {self.segment[s]}")
        for d in self.doc_nodes:
            if kinds[d] != NodeKind.DOC:
                raise ValueError("doc_nodes must point at document nodes")
        for cluster in self.entity_positions:
            if len(cluster) == 0:
                raise ValueError("empty entity cluster")
            if np.any(cluster < 0) or np.any(cluster >= n):
                raise ValueError("entity position out of range")
            if np.any(kinds[cluster] != NodeKind.TOKEN):
                raise ValueError("entity positions must be token nodes")


def build_nodes(doc: Document, vocab: Vocab, multi_doc: bool = False,
                global_positions: bool = False) -> NodeSequence:
    """Lay out one document as a node sequence.

    Each sentence contributes an aggregation node followed by its tokens; in
    multi-doc mode a document node additionally precedes the first sentence
    of each constituent document.  Positions restart at every aggregation
    node (or run globally when ``global_positions`` is set), and segments
    alternate with the sentence ordinal.
    """
    if multi_doc:
        # absent boundaries degrade to one constituent document
        starts = set(doc.doc_boundaries) if doc.doc_boundaries else {0}
    else:
        starts = set()

    ids: list[int] = []
    kinds: list[int] = []
    pos: list[int] = []
    seg: list[int] = []
    sent_nodes: list[int] = []
    doc_nodes: list[int] = []
    sent_span: list[tuple[int, int]] = []
    spans_by_sentence: list[list[tuple[str, int, int]]] = []

    for si, sent in enumerate(doc.sentences):
        toks = token_spans(sent)
        if not toks:
            raise CorpusError(f"doc {doc.id!r}: sentence {si} has no tokens")
        spans_by_sentence.append(toks)
        s = si % 2
        if si in starts:
            doc_nodes.append(len(ids))
            ids.append(DOC_ID)
            kinds.append(NodeKind.DOC)
            pos.append(0)
            seg.append(s)
        sent_nodes.append(len(ids))
        ids.append(CLS_ID)
        kinds.append(NodeKind.SENT)
        pos.append(0)
        seg.append(s)
        lo = len(ids)
        for k, (tok, _, _) in enumerate(toks):
            ids.append(vocab.encode(tok))
            kinds.append(NodeKind.TOKEN)
            pos.append(k + 1)
            seg.append(s)
        sent_span.append((lo, len(ids)))

    position = np.arange(len(ids)) if global_positions else np.asarray(pos, dtype=np.int64)

    entity_positions: list[np.ndarray] = []
    for cluster in resolve_entities_exact(doc):
        heads: set[int] = set()
        for si, cs, ce in cluster:
            base = sent_span[si][0]
            for ti, (_, ts, te) in enumerate(spans_by_sentence[si]):
                if ts < ce and te > cs:
                    heads.add(base + ti)
                    break
        if heads:
            entity_positions.append(np.asarray(sorted(heads), dtype=np.int64))

    nodes = NodeSequence(
        node_ids=np.asarray(ids, dtype=np.int64),
        node_kind=np.asarray(kinds, dtype=np.int8),
        position=position,
        segment=np.asarray(seg, dtype=np.int64),
        sent_nodes=np.asarray(sent_nodes, dtype=np.int64),
        doc_nodes=np.asarray(doc_nodes, dtype=np.int64),
        sent_span=sent_span,
        entity_positions=entity_positions,
        global_positions=global_positions,
    )
    nodes.validate()
    return nodes


def render_tokens(nodes: NodeSequence, vocab: Vocab) -> list[str]:
    """Decode the token positions back to strings, in order."""
    mask = nodes.node_kind == NodeKind.TOKEN
    return [vocab.decode(int(i)) for i in nodes.node_ids[mask]]
