"""Command-line interface: a thin client over the HTTP service.

By default requests go to the in-process app (no server needed); pass
``--server URL`` to target a running instance. Exit codes: 0 success,
1 check failure, 2 usage/IO error.
"""

from __future__ import annotations

import json
import sys

import click
import httpx


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # in-process: drive the ASGI app directly, no server required
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def _post(ctx, path, payload):
    with _client(ctx.obj["server"]) as client:
        resp = client.post(path, json=payload)
    if resp.status_code == 400:
        click.echo(f"error: {resp.json()['detail']}", err=True)
        sys.exit(2)
    if resp.status_code != 200:
        click.echo(f"error: {resp.text}", err=True)
        sys.exit(1)
    return resp.json()


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: bad config file {path}: {exc}", err=True)
        sys.exit(2)


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; default runs the app in-process.")
@click.option("--seed", default=None, type=int, help="Override the run seed.")
@click.option("--threads", default=1, type=int,
              help="Reserved; commands are single-process.")
@click.option("--config", "config_path", default=None, type=click.Path(),
              help="JSON config file with encoder/train sections.")
@click.pass_context
def main(ctx, server, seed, threads, config_path):
    """Hybrid lexicon/dense retrieval pipeline."""
    ctx.ensure_object(dict)
    ctx.obj.update(server=server, seed=seed,
                   config=_load_config_file(config_path))


@main.command()
@click.argument("corpus_path")
@click.argument("out_path")
@click.option("--vocab", default=None)
@click.option("--lexicon", default=None)
@click.option("--rules", default=None)
@click.option("--max-len", default=64, type=int)
@click.pass_context
def label(ctx, corpus_path, out_path, vocab, lexicon, rules, max_len):
    """Produce BMES labels for a line-delimited corpus."""
    result = _post(ctx, "/label", {
        "corpus_path": corpus_path, "out_path": out_path, "vocab_path": vocab,
        "lexicon_path": lexicon, "rules_path": rules, "max_len": max_len})
    click.echo(json.dumps(result))


@main.command()
@click.argument("dataset_path")
@click.argument("out_checkpoint")
@click.option("--vocab", default=None)
@click.option("--lexicon", default=None)
@click.option("--rules", default=None)
@click.option("--loss-log", default=None)
@click.option("--epochs", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--batch-size", default=None, type=int)
@click.pass_context
def train(ctx, dataset_path, out_checkpoint, vocab, lexicon, rules, loss_log,
          epochs, lr, batch_size):
    """Train a model on a {"query","pos","negs"} dataset."""
    cfg = ctx.obj["config"]
    train_config = dict(cfg.get("train", {}))
    for key, value in (("epochs", epochs), ("learning_rate", lr),
                       ("batch_size", batch_size), ("seed", ctx.obj["seed"])):
        if value is not None:
            train_config[key] = value
    result = _post(ctx, "/train", {
        "dataset_path": dataset_path, "out_checkpoint": out_checkpoint,
        "vocab_path": vocab, "lexicon_path": lexicon, "rules_path": rules,
        "encoder_config": cfg.get("encoder", {}), "train_config": train_config,
        "loss_log_path": loss_log})
    click.echo(json.dumps(result))


@main.command()
@click.argument("corpus_path")
@click.argument("checkpoint_path")
@click.argument("out_dir")
@click.option("--vocab", default=None)
@click.pass_context
def index(ctx, corpus_path, checkpoint_path, out_dir, vocab):
    """Encode a corpus and build the inverted index + dense store."""
    result = _post(ctx, "/index", {
        "corpus_path": corpus_path, "checkpoint_path": checkpoint_path,
        "out_dir": out_dir, "vocab_path": vocab})
    click.echo(json.dumps(result))


@main.command()
@click.argument("index_dir")
@click.argument("checkpoint_path")
@click.argument("queries_path")
@click.argument("out_run_path")
@click.option("--vocab", default=None)
@click.option("--mode", default="hybrid",
              type=click.Choice(["hybrid", "lexicon", "dense"]))
@click.option("-k", default=10, type=int)
@click.option("--k-candidates", default=1000, type=int)
@click.option("--tag", default="hyret")
@click.pass_context
def search(ctx, index_dir, checkpoint_path, queries_path, out_run_path, vocab,
           mode, k, k_candidates, tag):
    """Search an index for every query; write a TREC run file."""
    result = _post(ctx, "/search", {
        "index_dir": index_dir, "checkpoint_path": checkpoint_path,
        "queries_path": queries_path, "out_run_path": out_run_path,
        "vocab_path": vocab, "mode": mode, "k": k,
        "k_candidates": k_candidates, "tag": tag})
    click.echo(json.dumps(result))


@main.command("eval")
@click.argument("run_path")
@click.argument("qrels_path")
@click.option("-k", default=10, type=int)
@click.option("--out", default=None)
@click.pass_context
def eval_cmd(ctx, run_path, qrels_path, k, out):
    """Evaluate a run file against qrels (nDCG/Recall/MRR/MAP at k)."""
    result = _post(ctx, "/eval", {"run_path": run_path,
                                  "qrels_path": qrels_path, "k": k,
                                  "out_path": out})
    click.echo(json.dumps(result))


@main.command()
@click.argument("index_dir")
@click.argument("checkpoint_path")
@click.argument("text")
@click.option("--vocab", default=None)
@click.option("--mode", default="hybrid",
              type=click.Choice(["hybrid", "lexicon", "dense"]))
@click.option("-k", default=10, type=int)
@click.pass_context
def query(ctx, index_dir, checkpoint_path, text, vocab, mode, k):
    """Search the index for a single query string."""
    result = _post(ctx, "/query", {
        "index_dir": index_dir, "checkpoint_path": checkpoint_path,
        "text": text, "vocab_path": vocab, "mode": mode, "k": k})
    for hit in result["hits"]:
        click.echo(f"{hit['doc_id']}\t{hit['s_total']:.6f}"
                   f"\t(lex {hit['s_lex']:.6f}, den {hit['s_den']:.6f})")


@main.command()
@click.option("--checkpoint", default=None)
@click.option("--vocab", default=None)
@click.pass_context
def selfcheck(ctx, checkpoint, vocab):
    """Run the built-in oracle suite; nonzero exit on any failure."""
    result = _post(ctx, "/selfcheck", {
        "checkpoint_path": checkpoint, "vocab_path": vocab,
        "seed": ctx.obj["seed"] or 0})
    for check in result["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        click.echo(f"{status} {check['name']}: {check['detail']}")
    if not result["passed"]:
        sys.exit(1)


@main.command()
@click.argument("out_dir")
@click.option("--n-train", default=500, type=int)
@click.pass_context
def synth(ctx, out_dir, n_train):
    """Generate the bundled synthetic training/evaluation dataset."""
    result = _post(ctx, "/synth", {"out_dir": out_dir,
                                   "seed": ctx.obj["seed"] or 0,
                                   "n_train": n_train})
    click.echo(json.dumps(result))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("hyret.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
