"""Summary extraction: score ranking with trigram blocking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import tokenize


def sentence_trigrams(sentence: str) -> set[tuple[str, str, str]]:
    toks = tokenize(sentence)
    return {tuple(toks[i:i + 3]) for i in range(len(toks) - 2)}


@dataclass
class ExtractionResult:
    scores: np.ndarray
    selected: list[int]        # in selection order
    summary_sentences: list[str]  # in document order
    summary: str


def extract(scores, sentences: list[str], k: int, blocking: bool = True) -> ExtractionResult:
    """Pick up to k sentences by descending score.

    Candidates are visited best-first (ties broken toward the lower index);
    with blocking on, a candidate sharing any word trigram with an already
    selected sentence is skipped.  The rendered summary keeps document order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(sentences):
        raise ValueError("one score per sentence required")
    if k < 0:
        raise ValueError("k must be >= 0")
    order = sorted(range(len(sentences)), key=lambda i: (-scores[i], i))
    tris = [sentence_trigrams(s) for s in sentences] if blocking else None

    selected: list[int] = []
    seen: set[tuple[str, str, str]] = set()
    for i in order:
        if len(selected) >= k:
            break
        if blocking and tris[i] & seen:
            continue
        selected.append(i)
        if blocking:
            seen |= tris[i]

    in_doc_order = sorted(selected)
    summary_sentences = [sentences[i] for i in in_doc_order]
    return ExtractionResult(scores=scores, selected=selected,
                            summary_sentences=summary_sentences,
                            summary=" ".join(summary_sentences))
