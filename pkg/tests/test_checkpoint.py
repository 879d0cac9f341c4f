"""Checkpoint codec: exact round-trips and error taxonomy."""

import json

import numpy as np
import pytest

from hetatt import (CheckpointError, Document, ModelConfig, build_vocab,
                    encode, init_model, load_checkpoint, prepare_doc,
                    save_checkpoint, score_sentences)
from hetatt.checkpoint import MAGIC


@pytest.fixture
def saved(tmp_path, toy_doc):
    vocab = build_vocab([toy_doc])
    cfg = ModelConfig(vocab_size=len(vocab), d_model=8, heads=2, d_h=4,
                      layers=1, d_ff=16, schedule="fixed:2", w_min=2, w_max=2,
                      dropout=0.0, dtype="float32", seed=11)
    state = init_model(cfg)
    state.step = 17
    path = tmp_path / "model.hetf"
    save_checkpoint(state, cfg, vocab, path)
    return path, state, cfg, vocab


class TestRoundTrip:
    def test_bitwise_stable(self, saved, tmp_path):
        path, state, cfg, vocab = saved
        state2, cfg2, vocab2 = load_checkpoint(path)
        again = tmp_path / "again.hetf"
        save_checkpoint(state2, cfg2, vocab2, again)
        assert path.read_bytes() == again.read_bytes()

    def test_fields_survive(self, saved):
        path, state, cfg, vocab = saved
        state2, cfg2, vocab2 = load_checkpoint(path)
        assert cfg2 == cfg
        assert state2.step == 17
        assert vocab2.id_to_token == vocab.id_to_token
        for name in state.params:
            np.testing.assert_array_equal(state.params[name],
                                          state2.params[name])

    def test_float32_model_scores_identical(self, saved, toy_doc):
        path, state, cfg, vocab = saved
        nodes, maskset = prepare_doc(toy_doc, vocab, cfg)
        before = score_sentences(encode(nodes, maskset, state, cfg),
                                 nodes, state)
        state2, cfg2, vocab2 = load_checkpoint(path)
        after = score_sentences(encode(nodes, maskset, state2, cfg2),
                                nodes, state2)
        np.testing.assert_array_equal(before, after)

    def test_float64_model_file_roundtrip(self, tmp_path, toy_doc):
        # tensors are stored as float32, so an f64 model round-trips the
        # *file* exactly even though its in-memory values quantize
        vocab = build_vocab([toy_doc])
        cfg = ModelConfig(vocab_size=len(vocab), d_model=8, heads=2, d_h=4,
                          layers=1, d_ff=16, schedule="fixed:1", w_min=1,
                          w_max=1, dropout=0.0, dtype="float64")
        state = init_model(cfg)
        p1 = tmp_path / "a.hetf"
        save_checkpoint(state, cfg, vocab, p1)
        s2, c2, v2 = load_checkpoint(p1)
        assert s2.params["emb.tok"].dtype == np.float64
        p2 = tmp_path / "b.hetf"
        save_checkpoint(s2, c2, v2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_prefix(self, saved):
        path, *_ = saved
        assert path.read_bytes()[:8] == MAGIC

    def test_manifest_is_single_json_line(self, saved):
        path, *_ = saved
        raw = path.read_bytes()
        nl = raw.index(b"\n", 8)
        manifest = json.loads(raw[8:nl])
        assert set(manifest) >= {"config", "step", "tensors", "vocab"}


class TestErrors:
    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"GARBAGE!rest of file")
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_version_mismatch(self, saved):
        path, *_ = saved
        raw = bytearray(path.read_bytes())
        raw[4:8] = b"9999"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_manifest(self, tmp_path):
        path = tmp_path / "trunc.hetf"
        path.write_bytes(MAGIC + b'{"config": {')
        with pytest.raises(CheckpointError, match="manifest"):
            load_checkpoint(path)

    def test_truncated_blob(self, saved):
        path, *_ = saved
        raw = path.read_bytes()
        path.write_bytes(raw[:-20])
        with pytest.raises(CheckpointError, match="blob"):
            load_checkpoint(path)

    def test_tensor_table_mismatch(self, saved):
        path, *_ = saved
        raw = path.read_bytes()
        nl = raw.index(b"\n", 8)
        manifest = json.loads(raw[8:nl])
        manifest["tensors"][0]["name"] = "emb.bogus"
        new = json.dumps(manifest, sort_keys=True,
                         separators=(",", ":")).encode()
        path.write_bytes(MAGIC + new + b"\n" + raw[nl + 1:])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_vocab_size_mismatch(self, saved):
        path, *_ = saved
        raw = path.read_bytes()
        nl = raw.index(b"\n", 8)
        manifest = json.loads(raw[8:nl])
        manifest["vocab"].append("extra-token")
        new = json.dumps(manifest, sort_keys=True,
                         separators=(",", ":")).encode()
        path.write_bytes(MAGIC + new + b"\n" + raw[nl + 1:])
        with pytest.raises(CheckpointError, match="vocab"):
            load_checkpoint(path)
