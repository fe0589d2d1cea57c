"""End-to-end commands shared by the HTTP service and the CLI.

Each command reads/writes files, returns a JSON-friendly summary, and drops
a run manifest beside its primary artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np

from . import evaluation, index as index_mod, segmentation, train as train_mod
from .encoder import EncoderConfig
from .model import Model
from .text import load_vocab

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_LEXICON = os.path.join(_DATA_DIR, "lexicon.tsv")
DEFAULT_RULES = os.path.join(_DATA_DIR, "rules.txt")
DEFAULT_VOCAB = os.path.join(_DATA_DIR, "vocab.txt")


class InputError(ValueError):
    """Bad or missing user-supplied input (CLI exit code 2)."""


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise InputError(f"{what} not found: {path}")
    return path


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(artifact_path, command, config, inputs, outputs, seed, started):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {k: {"path": v, "sha256": _file_hash(v)}
                   for k, v in inputs.items() if v and os.path.isfile(v)},
        "outputs": outputs,
        "seed": seed,
        "wall_time_s": round(time.monotonic() - started, 3),
        "artifact_hashes": {os.path.basename(p): _file_hash(p)
                            for p in outputs.values()
                            if isinstance(p, str) and os.path.isfile(p)},
    }
    path = artifact_path + ".manifest.json"
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
    return path


def read_jsonl(path, required_keys=()):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed JSON ({exc.msg})")
            for key in required_keys:
                if key not in record:
                    raise InputError(f"{path}:{lineno}: missing key {key!r}")
            records.append(record)
    return records


def load_model(checkpoint_path, vocab_path) -> Model:
    _require_file(checkpoint_path, "checkpoint")
    vocab = load_vocab(_require_file(vocab_path, "vocab file"))
    return Model.load(checkpoint_path, vocab)


# -- commands ----------------------------------------------------------------


def run_label(corpus_path, out_path, vocab_path=DEFAULT_VOCAB,
              lexicon_path=DEFAULT_LEXICON, rules_path=DEFAULT_RULES,
              max_len: int = 64):
    started = time.monotonic()
    records = read_jsonl(_require_file(corpus_path, "input corpus"), ("text",))
    vocab = load_vocab(_require_file(vocab_path, "vocab file"))
    lexicon = segmentation.load_lexicon(_require_file(lexicon_path, "lexicon file"))
    rules = segmentation.load_rules(_require_file(rules_path, "rules file"))

    from .text import tokenize
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in records:
            text = record["text"]
            tok = tokenize(text, vocab, max_len)
            labels = segmentation.align_labels(
                tok, segmentation.segment(text, lexicon, rules))
            out = {"text": text, "labels": labels}
            if "id" in record:
                out["id"] = record["id"]
            fh.write(json.dumps(out, ensure_ascii=False) + "\n")

    write_manifest(out_path, "label", {"max_len": max_len},
                   {"corpus": corpus_path, "vocab": vocab_path,
                    "lexicon": lexicon_path, "rules": rules_path},
                   {"labels": out_path}, None, started)
    return {"records": len(records), "out": out_path}


def run_train(dataset_path, out_checkpoint, vocab_path=DEFAULT_VOCAB,
              lexicon_path=DEFAULT_LEXICON, rules_path=DEFAULT_RULES,
              encoder_config=None, train_config=None, loss_log_path=None):
    started = time.monotonic()
    rows = read_jsonl(_require_file(dataset_path, "dataset"), ("query", "pos", "negs"))
    vocab = load_vocab(_require_file(vocab_path, "vocab file"))
    lexicon = segmentation.load_lexicon(_require_file(lexicon_path, "lexicon file"))
    rules = segmentation.load_rules(_require_file(rules_path, "rules file"))

    tc = train_mod.TrainConfig(**(train_config or {}))
    enc_kwargs = dict(encoder_config or {})
    enc_kwargs.setdefault("vocab_size", vocab.size)
    enc_kwargs.setdefault("seed", tc.seed)
    config = EncoderConfig(**enc_kwargs)
    model = Model(config, vocab)

    dataset = [train_mod.label_example(
        train_mod.TrainingExample(r["query"], r["pos"], list(r["negs"])),
        model, lexicon, rules) for r in rows]

    if loss_log_path is None:
        loss_log_path = out_checkpoint + ".loss.csv"
    log_rows = train_mod.train(model, dataset, tc, loss_log_path)
    model.save(out_checkpoint)

    first = np.mean([r[4] for r in log_rows[:max(1, len(log_rows) // 10)]])
    last = np.mean([r[4] for r in log_rows[-max(1, len(log_rows) // 10):]])
    write_manifest(out_checkpoint, "train",
                   {"encoder": config.to_dict(), "train": tc.__dict__},
                   {"dataset": dataset_path, "vocab": vocab_path},
                   {"checkpoint": out_checkpoint, "loss_log": loss_log_path},
                   tc.seed, started)
    return {"steps": len(log_rows), "first_loss": float(first),
            "last_loss": float(last), "checkpoint": out_checkpoint,
            "loss_log": loss_log_path}


def run_index(corpus_path, checkpoint_path, out_dir, vocab_path=DEFAULT_VOCAB):
    started = time.monotonic()
    records = read_jsonl(_require_file(corpus_path, "corpus"), ("id", "text"))
    model = load_model(checkpoint_path, vocab_path)
    artifacts = index_mod.index_corpus(records, model, out_dir)
    write_manifest(os.path.join(out_dir, "meta.json"), "index", {},
                   {"corpus": corpus_path, "checkpoint": checkpoint_path},
                   {"meta": os.path.join(out_dir, "meta.json")}, None, started)
    return {"docs": artifacts.doc_count, "index_dir": out_dir}


def run_search(index_dir, checkpoint_path, queries_path, out_run_path,
               vocab_path=DEFAULT_VOCAB, mode: str = "hybrid", k: int = 10,
               k_candidates: int = 1000, tag: str = "hyret"):
    started = time.monotonic()
    if mode not in ("hybrid", "lexicon", "dense"):
        raise InputError(f"unknown search mode: {mode}")
    queries = read_jsonl(_require_file(queries_path, "queries file"), ("id", "text"))
    if not os.path.isfile(os.path.join(index_dir, "meta.json")):
        raise InputError(f"index not found: {index_dir}")
    model = load_model(checkpoint_path, vocab_path)
    idx = index_mod.load_index(index_dir)

    run = {}
    for record in queries:
        rep, dense = model.encode_one(record["text"])
        if mode == "lexicon":
            hits = index_mod.search_lexicon(rep, idx, k)
        elif mode == "dense":
            hits = index_mod.search_dense(dense, idx, k)
        else:
            hits = index_mod.search_hybrid(rep, dense, idx, k, k_candidates)
        run[record["id"]] = [(h.doc_id, h.s_total) for h in hits]
    evaluation.write_run(out_run_path, run, tag=tag)
    write_manifest(out_run_path, "search",
                   {"mode": mode, "k": k, "k_candidates": k_candidates},
                   {"queries": queries_path, "checkpoint": checkpoint_path},
                   {"run": out_run_path}, None, started)
    return {"queries": len(queries), "run": out_run_path}


def run_eval(run_path, qrels_path, k: int = 10, out_path=None):
    started = time.monotonic()
    run = evaluation.load_run(_require_file(run_path, "run file"))
    qrels = evaluation.load_qrels(_require_file(qrels_path, "qrels file"))
    metrics = evaluation.evaluate(run, qrels, k=k)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
        write_manifest(out_path, "eval", {"k": k},
                       {"run": run_path, "qrels": qrels_path},
                       {"report": out_path}, None, started)
    return metrics
