"""Input coercion and validation helpers for the estimator API."""

from __future__ import annotations

import os
from typing import Optional, Sequence

from .corpus import CorpusError, Document, document_from_record, parse_corpus


def as_documents(X) -> list[Document]:
    """Coerce estimator input to a document list.

    Accepts a list of Documents, a list of record dicts, a list of
    sentence-string lists, or a path to a JSONL corpus file.
    """
    if isinstance(X, (str, os.PathLike)):
        return parse_corpus(X)
    if not isinstance(X, (list, tuple)):
        raise TypeError(f"cannot interpret {type(X).__name__} as a corpus")
    docs: list[Document] = []
    for i, item in enumerate(X):
        if isinstance(item, Document):
            docs.append(item)
        elif isinstance(item, dict):
            docs.append(document_from_record(item, where=f"item {i}: "))
        elif isinstance(item, (list, tuple)) and all(isinstance(s, str) for s in item):
            if not item:
                raise CorpusError(f"item {i}: empty sentence list")
            docs.append(Document(id=f"doc{i}", sentences=list(item)))
        else:
            raise TypeError(f"item {i}: cannot interpret {type(item).__name__} as a document")
    if not docs:
        raise CorpusError("empty corpus")
    return docs


def resolve_labels(docs: Sequence[Document], y) -> Optional[list[list[int]]]:
    """Validate user-supplied labels against the documents.

    Returns the labels as lists, or None when y is None (the caller then
    falls back to stored labels or oracle labeling).
    """
    if y is None:
        return None
    if len(y) != len(docs):
        raise ValueError(f"y has {len(y)} entries for {len(docs)} documents")
    out = []
    for doc, labels in zip(docs, y):
        labels = list(labels)
        if len(labels) != len(doc.sentences):
            raise ValueError(
                f"doc {doc.id!r}: {len(labels)} labels for {len(doc.sentences)} sentences")
        if not all(l in (0, 1) for l in labels):
            raise ValueError(f"doc {doc.id!r}: labels must be 0 or 1")
        out.append(labels)
    return out
