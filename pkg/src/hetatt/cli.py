"""Command-line driver.

One executable, seven subcommands.  Every run that writes an output also
writes a resolved-config JSON next to it capturing all effective values, so
a run can be reproduced from that file plus the inputs.  All diagnostics go
to standard error with a stable ``hetatt:`` prefix and the exit code is 0
exactly when no error occurred.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (CorpusError, Document, Vocab, build_vocab,
                     document_to_record, parse_corpus)
from .extraction import extract
from .gradcheck import audit_state, gradient_report
from .masks import assemble_mask_set, entry_counts, synthetic_layout, window_schedule
from .metrics import evaluate_summary, greedy_oracle_labels
from .model import ConfigError, ModelConfig, encode, score_sentences
from .training import TrainOptions, TrainingDiverged, prepare_doc, train

PROG = "hetatt"


class CliError(Exception):
    """User-facing failure; message is printed with the standard prefix."""


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _pmap(fn, items, threads: int):
    # Mapping preserves input order, so results are identical for any
    # worker count.
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _write_resolved(cfg: dict, command: str, target: Path, directory: bool) -> None:
    resolved = dict(cfg)
    resolved["command"] = command
    for key, value in list(resolved.items()):
        if isinstance(value, Path):
            resolved[key] = str(value)
    if directory:
        path = target / "resolved_config.json"
    else:
        path = target.parent / (target.name + ".config.json")
    path.write_text(json.dumps(resolved, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _merge_config(defaults: dict, ns: argparse.Namespace) -> dict:
    """Layer effective values: built-in defaults, then the optional JSON
    config file, then explicit command-line flags."""
    given = {k: v for k, v in vars(ns).items() if k != "command"}
    cfg = dict(defaults)
    config_path = given.pop("config", None)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise CliError("unknown config keys: " + ", ".join(unknown))
        for key, value in loaded.items():
            if isinstance(defaults[key], bool) and not isinstance(value, bool):
                raise CliError(f"config key {key!r} must be a boolean")
            cfg[key] = value
    cfg.update(given)
    return cfg


def _require(cfg: dict, *names: str) -> None:
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise CliError("missing required option(s): "
                       + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_corpus(path) -> list[Document]:
    return parse_corpus(Path(path))


# -- build-vocab -------------------------------------------------------------

VOCAB_DEFAULTS = {"corpus": None, "out": None, "min_count": 1}


def cmd_build_vocab(cfg: dict) -> None:
    _require(cfg, "corpus", "out")
    docs = _load_corpus(cfg["corpus"])
    vocab = build_vocab(docs, min_count=int(cfg["min_count"]))
    out = Path(cfg["out"])
    payload = {"min_count": int(cfg["min_count"]), "tokens": vocab.tokens}
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                   encoding="utf-8")
    _write_resolved(cfg, "build-vocab", out, directory=False)


def _load_vocab_file(path) -> Vocab:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read vocabulary file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"vocabulary file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "tokens" not in payload:
        raise CliError("vocabulary file must hold an object with a 'tokens' list")
    return Vocab(payload["tokens"])


# -- oracle-label ------------------------------------------------------------

ORACLE_DEFAULTS = {"corpus": None, "out": None, "max_k": 5, "threads": 1}


def cmd_oracle_label(cfg: dict) -> None:
    _require(cfg, "corpus", "out")
    docs = _load_corpus(cfg["corpus"])
    missing = [d.id for d in docs if d.summary is None]
    if missing:
        raise CliError("documents lack gold summaries: " + ", ".join(missing))
    max_k = int(cfg["max_k"])

    def label(doc: Document):
        oracle = greedy_oracle_labels(doc.sentences, doc.summary, max_k=max_k)
        return dataclasses.replace(doc, labels=oracle.labels)

    labeled = _pmap(label, docs, int(cfg["threads"]))
    out = Path(cfg["out"])
    with out.open("w", encoding="utf-8") as fh:
        for doc in labeled:
            fh.write(_json_line(document_to_record(doc)))
    _write_resolved(cfg, "oracle-label", out, directory=False)


# -- train -------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "corpus": None, "out": None, "vocab": None,
    "d_model": 64, "heads": 4, "d_h": 16, "layers": 4, "d_ff": 256,
    "dropout": 0.1, "schedule": "inc", "w_min": 2, "w_max": 8,
    "max_positions": 512, "no_ts": False, "no_e2e": False,
    "multi_doc": False, "global_positions": False, "dtype": "float32",
    "lr": 0.05, "warmup": 100, "max_steps": 500, "batch": 2, "accum": 1,
    "min_count": 1, "seed": 0,
}


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=int(cfg["d_model"]), heads=int(cfg["heads"]),
        d_h=int(cfg["d_h"]), layers=int(cfg["layers"]), d_ff=int(cfg["d_ff"]),
        schedule=str(cfg["schedule"]), w_min=int(cfg["w_min"]),
        w_max=int(cfg["w_max"]), dropout=float(cfg["dropout"]),
        max_positions=int(cfg["max_positions"]),
        enable_ts=not cfg["no_ts"], enable_e2e=not cfg["no_e2e"],
        multi_doc=bool(cfg["multi_doc"]),
        global_positions=bool(cfg["global_positions"]),
        seed=int(cfg["seed"]), dtype=str(cfg["dtype"]),
    )


def cmd_train(cfg: dict) -> None:
    _require(cfg, "corpus", "out")
    docs = _load_corpus(cfg["corpus"])
    if cfg["vocab"] is not None:
        vocab = _load_vocab_file(cfg["vocab"])
    else:
        vocab = build_vocab(docs, min_count=int(cfg["min_count"]))
    model_cfg = _model_config(cfg, len(vocab))
    opts = TrainOptions(lr=float(cfg["lr"]), warmup_steps=int(cfg["warmup"]),
                        max_steps=int(cfg["max_steps"]), batch=int(cfg["batch"]),
                        accum=int(cfg["accum"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, "train", out, directory=True)
    result = train(docs, vocab, model_cfg, opts)
    save_checkpoint(result.state, model_cfg, vocab, out / "checkpoint.hetf")
    lines = ["step,lr,loss"]
    for row in result.trace:
        lines.append(f"{row.step},{_fmt(row.lr)},{_fmt(row.loss)}")
    (out / "loss_trace.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- extract -----------------------------------------------------------------

EXTRACT_DEFAULTS = {
    "checkpoint": None, "corpus": None, "out": None,
    "k": 3, "no_blocking": False, "multi_doc": False, "threads": 1,
}


def cmd_extract(cfg: dict) -> None:
    _require(cfg, "checkpoint", "corpus", "out")
    state, model_cfg, vocab = load_checkpoint(Path(cfg["checkpoint"]))
    if cfg["multi_doc"]:
        model_cfg = dataclasses.replace(model_cfg, multi_doc=True)
    docs = _load_corpus(cfg["corpus"])
    k = int(cfg["k"])
    blocking = not cfg["no_blocking"]

    def run(doc: Document):
        nodes, maskset = prepare_doc(doc, vocab, model_cfg)
        h = encode(nodes, maskset, state, model_cfg, mode="eval")
        scores = score_sentences(h, nodes, state)
        picked = extract(scores, doc.sentences, k, blocking=blocking)
        return {
            "id": doc.id,
            "selected": picked.selected,
            "scores": [float(s) for s in scores],
            "summary": picked.summary_sentences,
        }

    rows = _pmap(run, docs, int(cfg["threads"]))
    out = Path(cfg["out"])
    with out.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(_json_line(row))
    _write_resolved(cfg, "extract", out, directory=False)


# -- evaluate ----------------------------------------------------------------

EVALUATE_DEFAULTS = {"corpus": None, "summaries": None, "out": None, "threads": 1}


def cmd_evaluate(cfg: dict) -> None:
    _require(cfg, "corpus", "summaries", "out")
    docs = _load_corpus(cfg["corpus"])
    gold: dict[str, list[str]] = {}
    for doc in docs:
        if doc.summary is None:
            raise CliError(f"document {doc.id!r} has no gold summary")
        gold[doc.id] = doc.summary
    produced: list[tuple[str, list[str]]] = []
    path = Path(cfg["summaries"])
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError(f"cannot read summaries file: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CliError(f"summaries line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "id" not in record or "summary" not in record:
            raise CliError(f"summaries line {lineno}: need 'id' and 'summary'")
        sid = record["id"]
        if sid not in gold:
            raise CliError(f"summaries line {lineno}: unknown document id {sid!r}")
        summary = record["summary"]
        if isinstance(summary, list):
            summary = [str(s) for s in summary]
        else:
            summary = [str(summary)]
        produced.append((sid, summary))
    seen = {sid for sid, _ in produced}
    absent = [d.id for d in docs if d.id not in seen]
    if absent:
        raise CliError("no produced summary for: " + ", ".join(absent))

    def score(pair):
        sid, sentences = pair
        return sid, evaluate_summary(sentences, gold[sid])

    scored = _pmap(score, produced, int(cfg["threads"]))
    lines = ["doc_id,rouge1,rouge2,rougeL"]
    acc = np.zeros(3, dtype=np.float64)
    for sid, row in scored:
        vals = (row["rouge1"].f1, row["rouge2"].f1, row["rougeL"].f1)
        acc += np.array(vals)
        lines.append(sid + "," + ",".join(f"{v:.6f}" for v in vals))
    mean = acc / max(len(scored), 1)
    lines.append("mean," + ",".join(f"{v:.6f}" for v in mean))
    out = Path(cfg["out"])
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_resolved(cfg, "evaluate", out, directory=False)


# -- memcost -----------------------------------------------------------------

MEMCOST_DEFAULTS = {
    "n": 512, "layers": 4, "schedule": "inc", "w_min": 32, "w_max": 512,
    "no_ts": False, "no_e2e": False,
    "sent_every": 16, "cluster_every": 128, "cluster_size": 4,
    "out": None,
}


def cmd_memcost(cfg: dict) -> None:
    n = int(cfg["n"])
    layers = int(cfg["layers"])
    widths = window_schedule(str(cfg["schedule"]), layers,
                             w_min=int(cfg["w_min"]), w_max=int(cfg["w_max"]))
    globals_, clusters = synthetic_layout(
        n, tokens_per_sentence=int(cfg["sent_every"]),
        cluster_every=int(cfg["cluster_every"]),
        cluster_size=int(cfg["cluster_size"]))
    maskset = assemble_mask_set(n, globals_, clusters, widths,
                                enable_ts=not cfg["no_ts"],
                                enable_e2e=not cfg["no_e2e"])
    report = entry_counts(maskset)
    lines = ["layer,w,t2t,ts,e2e,total,dense,ratio"]
    for row in report.rows:
        dense = n * n
        lines.append(f"{row.layer},{row.w},{row.t2t},{row.ts},{row.e2e},"
                     f"{row.total},{dense},{row.total / dense:.6f}")
    lines.append(f"total,,,,,{report.sparse_total},{report.dense_total},"
                 f"{report.ratio:.6f}")
    text = "\n".join(lines) + "\n"
    if cfg["out"] is None:
        sys.stdout.write(text)
    else:
        out = Path(cfg["out"])
        out.write_text(text, encoding="utf-8")
        _write_resolved(cfg, "memcost", out, directory=False)


# -- gradcheck ---------------------------------------------------------------

GRADCHECK_DEFAULTS = {
    "eps": 1e-5, "tol": 1e-5, "samples": 16, "seed": 0,
    "d_model": 64, "heads": 4, "d_h": 16, "layers": 4, "d_ff": 256,
    "w_min": 2, "w_max": 8, "schedule": "inc",
    "no_ts": False, "no_e2e": False, "out": None,
}

_GRADCHECK_SENTENCES = [
    "alice met bob at the station",
    "bob carried a worn leather case",
    "alice asked about the case",
]
_GRADCHECK_LABELS = [1.0, 0.0, 1.0]


def cmd_gradcheck(cfg: dict) -> None:
    doc = Document(id="gradcheck", sentences=list(_GRADCHECK_SENTENCES))
    vocab = build_vocab([doc], min_count=1)
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        d_model=int(cfg["d_model"]), heads=int(cfg["heads"]), d_h=int(cfg["d_h"]),
        layers=int(cfg["layers"]), d_ff=int(cfg["d_ff"]),
        schedule=str(cfg["schedule"]), w_min=int(cfg["w_min"]),
        w_max=int(cfg["w_max"]), dropout=0.0,
        enable_ts=not cfg["no_ts"], enable_e2e=not cfg["no_e2e"],
        seed=int(cfg["seed"]), dtype="float64")
    nodes, maskset = prepare_doc(doc, vocab, model_cfg)
    state = audit_state(model_cfg)
    checks = gradient_report(nodes, maskset, _GRADCHECK_LABELS, state, model_cfg,
                             eps=float(cfg["eps"]), tol=float(cfg["tol"]),
                             samples=int(cfg["samples"]))
    lines = ["tensor,max_rel_error,status"]
    for check in checks:
        status = "pass" if check.passed else "FAIL"
        lines.append(f"{check.name},{check.max_rel_error:.3e},{status}")
    text = "\n".join(lines) + "\n"
    if cfg["out"] is None:
        sys.stdout.write(text)
    else:
        out = Path(cfg["out"])
        out.write_text(text, encoding="utf-8")
        _write_resolved(cfg, "gradcheck", out, directory=False)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise CliError("gradient check failed for: " + ", ".join(failed))


# -- parser ------------------------------------------------------------------

def _add(parser: argparse.ArgumentParser, *names, **kwargs) -> None:
    kwargs.setdefault("default", argparse.SUPPRESS)
    parser.add_argument(*names, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Sparse-attention extractive summarization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="derive a vocabulary from a corpus")
    _add(p, "--corpus")
    _add(p, "--out")
    _add(p, "--min-count", type=int, dest="min_count")
    _add(p, "--config")

    p = sub.add_parser("oracle-label", help="write greedy oracle labels")
    _add(p, "--corpus")
    _add(p, "--out")
    _add(p, "--max-k", type=int, dest="max_k")
    _add(p, "--threads", type=int)
    _add(p, "--config")

    p = sub.add_parser("train", help="train a model on a labeled corpus")
    _add(p, "--corpus")
    _add(p, "--out")
    _add(p, "--vocab")
    _add(p, "--d-model", type=int, dest="d_model")
    _add(p, "--heads", type=int)
    _add(p, "--d-h", type=int, dest="d_h")
    _add(p, "--layers", type=int)
    _add(p, "--d-ff", type=int, dest="d_ff")
    _add(p, "--dropout", type=float)
    _add(p, "--schedule")
    _add(p, "--w-min", type=int, dest="w_min")
    _add(p, "--w-max", type=int, dest="w_max")
    _add(p, "--max-positions", type=int, dest="max_positions")
    _add(p, "--no-ts", action="store_true", dest="no_ts")
    _add(p, "--no-e2e", action="store_true", dest="no_e2e")
    _add(p, "--multi-doc", action="store_true", dest="multi_doc")
    _add(p, "--global-positions", action="store_true", dest="global_positions")
    _add(p, "--dtype")
    _add(p, "--lr", type=float)
    _add(p, "--warmup", type=int)
    _add(p, "--max-steps", type=int, dest="max_steps")
    _add(p, "--batch", type=int)
    _add(p, "--accum", type=int)
    _add(p, "--min-count", type=int, dest="min_count")
    _add(p, "--seed", type=int)
    _add(p, "--config")

    p = sub.add_parser("extract", help="extract summaries with a checkpoint")
    _add(p, "--checkpoint")
    _add(p, "--corpus")
    _add(p, "--out")
    _add(p, "--k", type=int)
    _add(p, "--no-blocking", action="store_true", dest="no_blocking")
    _add(p, "--multi-doc", action="store_true", dest="multi_doc")
    _add(p, "--threads", type=int)
    _add(p, "--config")

    p = sub.add_parser("evaluate", help="score produced summaries against gold")
    _add(p, "--corpus")
    _add(p, "--summaries")
    _add(p, "--out")
    _add(p, "--threads", type=int)
    _add(p, "--config")

    p = sub.add_parser("memcost", help="report sparse attention entry counts")
    _add(p, "--n", type=int)
    _add(p, "--layers", type=int)
    _add(p, "--schedule")
    _add(p, "--w-min", type=int, dest="w_min")
    _add(p, "--w-max", type=int, dest="w_max")
    _add(p, "--no-ts", action="store_true", dest="no_ts")
    _add(p, "--no-e2e", action="store_true", dest="no_e2e")
    _add(p, "--sent-every", type=int, dest="sent_every")
    _add(p, "--cluster-every", type=int, dest="cluster_every")
    _add(p, "--cluster-size", type=int, dest="cluster_size")
    _add(p, "--out")
    _add(p, "--config")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add(p, "--eps", type=float)
    _add(p, "--tol", type=float)
    _add(p, "--samples", type=int)
    _add(p, "--seed", type=int)
    _add(p, "--d-model", type=int, dest="d_model")
    _add(p, "--heads", type=int)
    _add(p, "--d-h", type=int, dest="d_h")
    _add(p, "--layers", type=int)
    _add(p, "--d-ff", type=int, dest="d_ff")
    _add(p, "--w-min", type=int, dest="w_min")
    _add(p, "--w-max", type=int, dest="w_max")
    _add(p, "--schedule")
    _add(p, "--no-ts", action="store_true", dest="no_ts")
    _add(p, "--no-e2e", action="store_true", dest="no_e2e")
    _add(p, "--out")
    _add(p, "--config")

    return parser


_COMMANDS = {
    "build-vocab": (VOCAB_DEFAULTS, cmd_build_vocab),
    "oracle-label": (ORACLE_DEFAULTS, cmd_oracle_label),
    "train": (TRAIN_DEFAULTS, cmd_train),
    "extract": (EXTRACT_DEFAULTS, cmd_extract),
    "evaluate": (EVALUATE_DEFAULTS, cmd_evaluate),
    "memcost": (MEMCOST_DEFAULTS, cmd_memcost),
    "gradcheck": (GRADCHECK_DEFAULTS, cmd_gradcheck),
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    defaults, fn = _COMMANDS[ns.command]
    try:
        cfg = _merge_config(defaults, ns)
        fn(cfg)
    except (CliError, CorpusError, CheckpointError, ConfigError,
            TrainingDiverged, ValueError, OSError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
