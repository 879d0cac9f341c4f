"""ROUGE scoring and oracle sentence labeling.

All scoring tokenizes with the corpus tokenizer and works on flat token
sequences: multi-sentence candidates and references are concatenated in
document order before n-grams or subsequences are counted.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .corpus import tokenize

EXHAUSTIVE_MAX_SENTENCES = 12
EXHAUSTIVE_MAX_K = 4


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_fractions(cls, match: float, cand_total: float, ref_total: float) -> "RougeScore":
        p = match / cand_total if cand_total > 0 else 0.0
        r = match / ref_total if ref_total > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(precision=p, recall=r, f1=f)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap score between token sequences."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c = _ngram_counts(candidate, n)
    r = _ngram_counts(reference, n)
    overlap = sum(min(cnt, r[g]) for g, cnt in c.items())
    return RougeScore.from_fractions(overlap, sum(c.values()), sum(r.values()))


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """Longest-common-subsequence score over single concatenated sequences."""
    l = _lcs_len(candidate, reference)
    return RougeScore.from_fractions(l, len(candidate), len(reference))


def _flatten(sentences: Iterable[str]) -> list[str]:
    out: list[str] = []
    for s in sentences:
        out.extend(tokenize(s))
    return out


@dataclass
class OracleLabels:
    labels: list[int]
    score: float  # achieved bigram F1 of the selected set


def _set_score(sent_tokens: list[list[str]], picks: Iterable[int], ref: Counter,
               ref_total: int) -> float:
    cand: list[str] = []
    for i in sorted(picks):
        cand.extend(sent_tokens[i])
    c = _ngram_counts(cand, 2)
    overlap = sum(min(cnt, ref[g]) for g, cnt in c.items())
    return RougeScore.from_fractions(overlap, sum(c.values()), ref_total).f1


def greedy_oracle_labels(sentences: list[str], gold_summary: list[str],
                         max_k: int = 5) -> OracleLabels:
    """Greedy selection maximizing bigram F1 against the gold summary.

    Adds the sentence with the best strict improvement each round (ties go
    to the lower index) and stops when nothing improves or max_k is reached.
    """
    if max_k < 0:
        raise ValueError("max_k must be >= 0")
    sent_tokens = [tokenize(s) for s in sentences]
    ref = _ngram_counts(_flatten(gold_summary), 2)
    ref_total = sum(ref.values())

    picked: list[int] = []
    best = 0.0
    while len(picked) < max_k:
        round_best = best
        round_pick = -1
        for i in range(len(sentences)):
            if i in picked:
                continue
            sc = _set_score(sent_tokens, picked + [i], ref, ref_total)
            if sc > round_best:
                round_best = sc
                round_pick = i
        if round_pick < 0:
            break
        picked.append(round_pick)
        best = round_best
    labels = [1 if i in picked else 0 for i in range(len(sentences))]
    return OracleLabels(labels=labels, score=best)


def exhaustive_oracle(sentences: list[str], gold_summary: list[str],
                      max_k: int) -> tuple[tuple[int, ...], float]:
    """Best subset of at most max_k sentences by bigram F1.

    Guarded to small inputs.  Score ties resolve to the lexicographically
    smallest index tuple, the empty set included.
    """
    if len(sentences) > EXHAUSTIVE_MAX_SENTENCES:
        raise ValueError(f"exhaustive search is limited to "
                         f"{EXHAUSTIVE_MAX_SENTENCES} sentences")
    if max_k > EXHAUSTIVE_MAX_K:
        raise ValueError(f"exhaustive search is limited to max_k <= {EXHAUSTIVE_MAX_K}")
    sent_tokens = [tokenize(s) for s in sentences]
    ref = _ngram_counts(_flatten(gold_summary), 2)
    ref_total = sum(ref.values())

    best_set: tuple[int, ...] = ()
    best_score = 0.0
    for size in range(0, max_k + 1):
        for subset in combinations(range(len(sentences)), size):
            sc = _set_score(sent_tokens, subset, ref, ref_total)
            if sc > best_score or (sc == best_score and subset < best_set):
                best_score = sc
                best_set = subset
    return best_set, best_score


def evaluate_summary(candidate_sentences: list[str],
                     reference_sentences: list[str]) -> dict[str, RougeScore]:
    cand = _flatten(candidate_sentences)
    ref = _flatten(reference_sentences)
    return {
        "rouge1": rouge_n(cand, ref, 1),
        "rouge2": rouge_n(cand, ref, 2),
        "rougeL": rouge_l(cand, ref),
    }


def evaluate_summaries(pairs: list[tuple[list[str], list[str]]]):
    """Score (candidate, reference) sentence-list pairs.

    Returns per-pair rows of (r1, r2, rl) F1 plus their means.
    """
    rows = []
    for cand, ref in pairs:
        scores = evaluate_summary(cand, ref)
        rows.append((scores["rouge1"].f1, scores["rouge2"].f1, scores["rougeL"].f1))
    if rows:
        means = tuple(sum(r[i] for r in rows) / len(rows) for i in range(3))
    else:
        means = (0.0, 0.0, 0.0)
    return rows, means
