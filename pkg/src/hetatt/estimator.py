"""Scikit-learn style front end for the summarizer."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import metrics, model as model_mod
from .corpus import build_vocab
from .extraction import extract
from .model import ModelConfig
from .training import TrainOptions, prepare_doc, train
from .validation import as_documents, resolve_labels


class ExtractiveSummarizer(BaseEstimator):
    """Trainable extractive summarizer with a fit/predict interface.

    ``fit`` accepts a corpus (Documents, record dicts, sentence lists, or a
    JSONL path) with per-sentence 0/1 relevance labels supplied as ``y``,
    stored on the documents, or derived from gold summaries by the greedy
    oracle.  ``predict`` returns one rendered summary string per document.
    """

    def __init__(self, d_model=64, heads=4, d_h=16, layers=4, d_ff=256,
                 dropout=0.1, schedule="inc", w_min=2, w_max=8,
                 enable_ts=True, enable_e2e=True, max_positions=512,
                 multi_doc=False, global_positions=False, min_count=1,
                 k=3, blocking=True, max_oracle=5,
                 lr=0.05, warmup_steps=100, max_steps=500, batch=2, accum=1,
                 dtype="float64", seed=0):
        self.d_model = d_model
        self.heads = heads
        self.d_h = d_h
        self.layers = layers
        self.d_ff = d_ff
        self.dropout = dropout
        self.schedule = schedule
        self.w_min = w_min
        self.w_max = w_max
        self.enable_ts = enable_ts
        self.enable_e2e = enable_e2e
        self.max_positions = max_positions
        self.multi_doc = multi_doc
        self.global_positions = global_positions
        self.min_count = min_count
        self.k = k
        self.blocking = blocking
        self.max_oracle = max_oracle
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.max_steps = max_steps
        self.batch = batch
        self.accum = accum
        self.dtype = dtype
        self.seed = seed

    def _config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d_model=self.d_model, heads=self.heads,
            d_h=self.d_h, layers=self.layers, d_ff=self.d_ff,
            schedule=self.schedule, w_min=self.w_min, w_max=self.w_max,
            dropout=self.dropout, max_positions=self.max_positions,
            enable_ts=self.enable_ts, enable_e2e=self.enable_e2e,
            multi_doc=self.multi_doc, global_positions=self.global_positions,
            seed=self.seed, dtype=self.dtype)

    def fit(self, X, y=None):
        docs = as_documents(X)
        labels = resolve_labels(docs, y)
        fitted_docs = []
        for i, doc in enumerate(docs):
            if labels is not None:
                doc_labels = labels[i]
            elif doc.labels is not None:
                doc_labels = doc.labels
            elif doc.summary:
                doc_labels = metrics.greedy_oracle_labels(
                    doc.sentences, doc.summary, max_k=self.max_oracle).labels
            else:
                raise ValueError(
                    f"doc {doc.id!r} has no labels, no gold summary, and no y entry")
            fitted_docs.append(dataclasses.replace(doc, labels=doc_labels))

        self.vocab_ = build_vocab(fitted_docs, min_count=self.min_count)
        self.config_ = self._config(len(self.vocab_))
        opts = TrainOptions(lr=self.lr, warmup_steps=self.warmup_steps,
                            max_steps=self.max_steps, batch=self.batch,
                            accum=self.accum)
        result = train(fitted_docs, self.vocab_, self.config_, opts)
        self.state_ = result.state
        self.loss_trace_ = [(row.step, row.lr, row.loss) for row in result.trace]
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError(
                "This ExtractiveSummarizer instance is not fitted yet; call fit first.")

    def _doc_scores(self, doc) -> np.ndarray:
        nodes, maskset = prepare_doc(doc, self.vocab_, self.config_)
        h = model_mod.encode(nodes, maskset, self.state_, self.config_, mode="eval")
        return model_mod.score_sentences(h, nodes, self.state_)

    def predict_scores(self, X) -> list[np.ndarray]:
        """Per-sentence relevance scores for each document."""
        self._check_fitted()
        return [self._doc_scores(doc) for doc in as_documents(X)]

    def predict_indices(self, X) -> list[list[int]]:
        """Selected sentence indices (selection order) for each document."""
        self._check_fitted()
        out = []
        for doc in as_documents(X):
            scores = self._doc_scores(doc)
            out.append(extract(scores, doc.sentences, self.k, blocking=self.blocking).selected)
        return out

    def predict(self, X) -> list[str]:
        """Rendered summary text for each document."""
        self._check_fitted()
        out = []
        for doc in as_documents(X):
            scores = self._doc_scores(doc)
            out.append(extract(scores, doc.sentences, self.k, blocking=self.blocking).summary)
        return out

    def score(self, X, y=None) -> float:
        """Mean bigram-overlap F1 of predicted summaries against gold summaries."""
        self._check_fitted()
        docs = as_documents(X)
        pairs = []
        for doc in docs:
            if not doc.summary:
                raise ValueError(f"doc {doc.id!r} has no gold summary to score against")
            scores = self._doc_scores(doc)
            result = extract(scores, doc.sentences, self.k, blocking=self.blocking)
            pairs.append((result.summary_sentences, doc.summary))
        rows, means = metrics.evaluate_summaries(pairs)
        return means[1]
