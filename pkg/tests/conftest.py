"""Shared fixtures: toy documents and a synthetic overfit corpus."""

import json

import numpy as np
import pytest

from hetatt import Document, build_vocab
from hetatt.extraction import sentence_trigrams
from hetatt.rng import derive_rng


@pytest.fixture
def toy_doc():
    return Document(
        id="toy",
        sentences=["alice met bob at the station",
                   "bob carried a worn leather case",
                   "alice asked about the case"],
        summary=["bob carried a worn leather case"],
    )


@pytest.fixture
def toy_vocab(toy_doc):
    return build_vocab([toy_doc])


@pytest.fixture
def two_sentence_doc():
    return Document(id="pair", sentences=["alice met bob", "bob left"],
                    summary=["bob left"])


FILLER = [f"w{i:02d}" for i in range(40)]


def make_synthetic_corpus(count: int = 20, seed: int = 7) -> list[Document]:
    """Documents whose key sentences start with a shared signal token.

    Construction guarantees no trigram is shared between two distinct
    sentences of a document (asserted below), so trigram blocking can never
    suppress a correct pick, and the greedy oracle recovers exactly the two
    key sentences.
    """
    rng = derive_rng(seed, "data-order")
    docs = []
    for d in range(count):
        n_sent = int(rng.integers(4, 7))
        sentences = []
        for s in range(n_sent):
            words = [FILLER[int(i)] for i in rng.choice(len(FILLER), size=4,
                                                        replace=False)]
            # a per-sentence nonce word keeps all trigrams unique
            words.append(f"u{d:02d}{s:02d}")
            sentences.append(" ".join(words))
        key = sorted(rng.choice(n_sent, size=2, replace=False).tolist())
        for s in key:
            # signal token leads the sentence, adjacent to its aggregation node
            sentences[s] = "omega " + sentences[s]
        summary = [sentences[s] for s in key]
        doc = Document(id=f"syn{d:02d}", sentences=sentences, summary=summary,
                       labels=[1 if s in key else 0 for s in range(n_sent)])
        tris = [sentence_trigrams(t) for t in doc.sentences]
        for i in range(n_sent):
            for j in range(i + 1, n_sent):
                assert not (tris[i] & tris[j]), "fixture must be trigram-disjoint"
        docs.append(doc)
    return docs


@pytest.fixture(scope="session")
def synthetic_corpus():
    return make_synthetic_corpus()


def write_corpus(path, docs):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            rec = {"id": doc.id, "sentences": doc.sentences}
            if doc.summary is not None:
                rec["summary"] = doc.summary
            if doc.labels is not None:
                rec["labels"] = doc.labels
            if doc.entity_clusters is not None:
                rec["entities"] = doc.entity_clusters
            if doc.doc_boundaries is not None:
                rec["doc_boundaries"] = doc.doc_boundaries
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def corpus_file(tmp_path, toy_doc, two_sentence_doc):
    return write_corpus(tmp_path / "corpus.jsonl", [toy_doc, two_sentence_doc])
