"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class LabelRequest(BaseModel):
    corpus_path: str
    out_path: str
    vocab_path: Optional[str] = None
    lexicon_path: Optional[str] = None
    rules_path: Optional[str] = None
    max_len: int = 64


class LabelResponse(BaseModel):
    records: int
    out: str


class TrainRequest(BaseModel):
    dataset_path: str
    out_checkpoint: str
    vocab_path: Optional[str] = None
    lexicon_path: Optional[str] = None
    rules_path: Optional[str] = None
    encoder_config: dict = Field(default_factory=dict)
    train_config: dict = Field(default_factory=dict)
    loss_log_path: Optional[str] = None


class TrainResponse(BaseModel):
    steps: int
    first_loss: float
    last_loss: float
    checkpoint: str
    loss_log: str


class IndexRequest(BaseModel):
    corpus_path: str
    checkpoint_path: str
    out_dir: str
    vocab_path: Optional[str] = None


class IndexResponse(BaseModel):
    docs: int
    index_dir: str


class SearchRequest(BaseModel):
    index_dir: str
    checkpoint_path: str
    queries_path: str
    out_run_path: str
    vocab_path: Optional[str] = None
    mode: str = "hybrid"
    k: int = 10
    k_candidates: int = 1000
    tag: str = "hyret"


class SearchResponse(BaseModel):
    queries: int
    run: str


class QueryRequest(BaseModel):
    index_dir: str
    checkpoint_path: str
    text: str
    vocab_path: Optional[str] = None
    mode: str = "hybrid"
    k: int = 10
    k_candidates: int = 1000


class Hit(BaseModel):
    doc_id: str
    s_lex: float
    s_den: float
    s_total: float


class QueryResponse(BaseModel):
    hits: list[Hit]


class EvalRequest(BaseModel):
    run_path: str
    qrels_path: str
    k: int = 10
    out_path: Optional[str] = None


class EvalResponse(BaseModel):
    ndcg: float
    recall: float
    mrr: float
    map: float
    queries: int


class SelfcheckRequest(BaseModel):
    checkpoint_path: Optional[str] = None
    vocab_path: Optional[str] = None
    seed: int = 0


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


class SelfcheckResponse(BaseModel):
    passed: bool
    checks: list[CheckResult]


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 0
    n_train: int = 500


class SynthResponse(BaseModel):
    paths: dict[str, str]
