"""FastAPI service wrapping the retrieval pipeline.

Endpoints mirror the pipeline commands and operate on server-local paths.
``/query`` serves interactive single-query search with a small model/index
cache so repeated queries do not reload artifacts.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import index as index_mod, pipeline, selfcheck, synthetic
from . import schemas

app = FastAPI(title="hyret", version="0.1.0")

_cache = {"model": None, "model_key": None, "index": None, "index_key": None}


def _fail(exc: Exception) -> HTTPException:
    if isinstance(exc, (pipeline.InputError, FileNotFoundError)):
        return HTTPException(status_code=400, detail=str(exc))
    return HTTPException(status_code=500, detail=f"{type(exc).__name__}: {exc}")


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/label", response_model=schemas.LabelResponse)
def label(req: schemas.LabelRequest):
    try:
        return pipeline.run_label(
            req.corpus_path, req.out_path,
            vocab_path=req.vocab_path or pipeline.DEFAULT_VOCAB,
            lexicon_path=req.lexicon_path or pipeline.DEFAULT_LEXICON,
            rules_path=req.rules_path or pipeline.DEFAULT_RULES,
            max_len=req.max_len)
    except Exception as exc:
        raise _fail(exc)


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest):
    try:
        return pipeline.run_train(
            req.dataset_path, req.out_checkpoint,
            vocab_path=req.vocab_path or pipeline.DEFAULT_VOCAB,
            lexicon_path=req.lexicon_path or pipeline.DEFAULT_LEXICON,
            rules_path=req.rules_path or pipeline.DEFAULT_RULES,
            encoder_config=req.encoder_config, train_config=req.train_config,
            loss_log_path=req.loss_log_path)
    except Exception as exc:
        raise _fail(exc)


@app.post("/index", response_model=schemas.IndexResponse)
def index(req: schemas.IndexRequest):
    try:
        return pipeline.run_index(
            req.corpus_path, req.checkpoint_path, req.out_dir,
            vocab_path=req.vocab_path or pipeline.DEFAULT_VOCAB)
    except Exception as exc:
        raise _fail(exc)


@app.post("/search", response_model=schemas.SearchResponse)
def search(req: schemas.SearchRequest):
    try:
        return pipeline.run_search(
            req.index_dir, req.checkpoint_path, req.queries_path,
            req.out_run_path, vocab_path=req.vocab_path or pipeline.DEFAULT_VOCAB,
            mode=req.mode, k=req.k, k_candidates=req.k_candidates, tag=req.tag)
    except Exception as exc:
        raise _fail(exc)


@app.post("/query", response_model=schemas.QueryResponse)
def query(req: schemas.QueryRequest):
    try:
        vocab_path = req.vocab_path or pipeline.DEFAULT_VOCAB
        model_key = (req.checkpoint_path, vocab_path)
        if _cache["model_key"] != model_key:
            _cache["model"] = pipeline.load_model(req.checkpoint_path, vocab_path)
            _cache["model_key"] = model_key
        if _cache["index_key"] != req.index_dir:
            _cache["index"] = index_mod.load_index(req.index_dir)
            _cache["index_key"] = req.index_dir
        model, idx = _cache["model"], _cache["index"]

        rep, dense = model.encode_one(req.text)
        if req.mode == "lexicon":
            hits = index_mod.search_lexicon(rep, idx, req.k)
        elif req.mode == "dense":
            hits = index_mod.search_dense(dense, idx, req.k)
        elif req.mode == "hybrid":
            hits = index_mod.search_hybrid(rep, dense, idx, req.k, req.k_candidates)
        else:
            raise pipeline.InputError(f"unknown search mode: {req.mode}")
        return schemas.QueryResponse(hits=[
            schemas.Hit(doc_id=h.doc_id, s_lex=h.s_lex, s_den=h.s_den,
                        s_total=h.s_total) for h in hits])
    except HTTPException:
        raise
    except Exception as exc:
        raise _fail(exc)


@app.post("/eval", response_model=schemas.EvalResponse)
def eval_run(req: schemas.EvalRequest):
    try:
        return pipeline.run_eval(req.run_path, req.qrels_path, k=req.k,
                                 out_path=req.out_path)
    except Exception as exc:
        raise _fail(exc)


@app.post("/selfcheck", response_model=schemas.SelfcheckResponse)
def run_selfcheck(req: schemas.SelfcheckRequest):
    model = None
    if req.checkpoint_path:
        try:
            model = pipeline.load_model(
                req.checkpoint_path, req.vocab_path or pipeline.DEFAULT_VOCAB)
        except Exception as exc:
            return schemas.SelfcheckResponse(passed=False, checks=[
                schemas.CheckResult(name="checkpoint_load", passed=False,
                                    detail=f"{type(exc).__name__}: {exc}")])
    try:
        return selfcheck.run_selfcheck(model, seed=req.seed)
    except Exception as exc:
        raise _fail(exc)


@app.post("/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest):
    try:
        return {"paths": synthetic.generate(req.out_dir, seed=req.seed,
                                            n_train=req.n_train)}
    except Exception as exc:
        raise _fail(exc)
