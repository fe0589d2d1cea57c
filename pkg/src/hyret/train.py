"""Training: contrastive + union losses, Adam loop, hard-negative mining.

Both branch losses are InfoNCE with temperature; in-batch negatives (other
queries' positives) join each query's mined hard negatives in the
denominator. Scores inside the loss use normalized representations: unit
dense vectors and L2-normalized token-level term weights (duplicate term
ids merged by max), so branch scores share a comparable scale.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import heads
from .autodiff import Tensor, concat, l2_normalize, stack
from .index import search_hybrid
from .segmentation import align_labels, segment
from .text import pad_batch

LOG = logging.getLogger(__name__)


class AlignError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    temperature: float = 0.05
    learning_rate: float = 2e-3
    epochs: int = 5
    batch_size: int = 8
    num_negatives: int = 3
    seed: int = 0
    weight_lex: float = 1.0
    weight_den: float = 1.0
    weight_union: float = 1.0
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")


@dataclass
class TrainingExample:
    query: str
    positive: str
    negatives: list
    query_labels: list = None
    passage_labels: list = None  # labels for [positive] + negatives

    def __post_init__(self):
        if self.positive in self.negatives:
            raise ValueError("positive must not appear among negatives")


# -- losses ------------------------------------------------------------------


def contrastive_loss(pos_score, neg_scores, temperature: float):
    """-log softmax of the positive against positive + negatives.

    Accepts Tensors (differentiable) or plain floats/arrays.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    pos = pos_score if isinstance(pos_score, Tensor) else Tensor(float(pos_score))
    negs = [s if isinstance(s, Tensor) else Tensor(float(s)) for s in neg_scores]
    if not negs:
        warnings.warn("contrastive_loss called with no negatives; loss is 0")
        return Tensor(0.0)
    scores = stack([pos] + negs) * (1.0 / temperature)
    shift = Tensor(scores.data.max())  # max-subtraction for stability
    shifted = scores - shift
    return shifted.exp().sum().log() - shifted[0]


def union_loss(probs, labels):
    """Mean cross-entropy over real tokens given class probabilities."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    labels = np.asarray(labels, dtype=np.intp)
    if probs.shape[0] != labels.shape[0]:
        raise AlignError(
            f"{probs.shape[0]} probability rows vs {labels.shape[0]} labels")
    picked = probs[np.arange(labels.shape[0]), labels]
    return -(picked.log().mean())


def union_loss_from_log_probs(log_probs: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp)
    if log_probs.shape[0] != labels.shape[0]:
        raise AlignError(
            f"{log_probs.shape[0]} log-prob rows vs {labels.shape[0]} labels")
    return -(log_probs[np.arange(labels.shape[0]), labels].mean())


# -- differentiable text-side representations --------------------------------


def _token_sparse_vector(weights: Tensor, term_ids):
    """Normalized per-unique-term weight vector (duplicates merged by max).

    Returns (id -> position, Tensor [n_unique]).
    """
    occurrences = {}
    for pos, tid in enumerate(term_ids):
        occurrences.setdefault(tid, []).append(pos)
    ids = sorted(occurrences)
    merged = []
    for tid in ids:
        idx = occurrences[tid]
        w = weights[np.asarray(idx, dtype=np.intp)]
        merged.append(w.max() if len(idx) > 1 else w[0])
    if not merged:
        return {}, None
    vec = l2_normalize(stack(merged), axis=0, eps=1e-12)
    return {tid: i for i, tid in enumerate(ids)}, vec


def _sparse_dot(q_pos, q_vec, p_pos, p_vec):
    shared = [tid for tid in q_pos if tid in p_pos]
    if not shared or q_vec is None or p_vec is None:
        return Tensor(0.0)
    qi = np.asarray([q_pos[t] for t in shared], dtype=np.intp)
    pi = np.asarray([p_pos[t] for t in shared], dtype=np.intp)
    return (q_vec[qi] * p_vec[pi]).sum()


def batch_losses(model, batch, config: TrainConfig):
    """Differentiable (loss_lex, loss_den, loss_union) for a batch of examples."""
    texts, tok_labels = [], []
    query_idx, passage_idx = [], []  # passage_idx[i] = [pos, negs...] indices
    for ex in batch:
        query_idx.append(len(texts))
        texts.append(ex.query)
        tok_labels.append(ex.query_labels)
        idxs = []
        for passage, labels in zip([ex.positive] + list(ex.negatives),
                                   ex.passage_labels or [None] * (1 + len(ex.negatives))):
            idxs.append(len(texts))
            texts.append(passage)
            tok_labels.append(labels)
        passage_idx.append(idxs)

    toks = [model.tokenize(t) for t in texts]
    out, _ = model.forward_batch(toks)
    weights_all = heads.term_weights(out.L, model.params)
    log_probs_all = heads.union_log_probs(out.L, model.params)
    dense_all = heads.dense_vector(out.D[:, 0, :], model.params)

    sparse = []
    for i, tok in enumerate(toks):
        positions = np.asarray(tok.real_token_positions(), dtype=np.intp)
        term_ids = [tok.token_ids[p] for p in positions]
        sparse.append(_token_sparse_vector(weights_all[i][positions], term_ids))

    lex_terms, den_terms, union_terms = [], [], []
    for qi, (q_text_i, p_idxs) in enumerate(zip(query_idx, passage_idx)):
        pos_i = p_idxs[0]
        neg_is = list(p_idxs[1:])
        # in-batch negatives: every other query's positive
        neg_is += [passage_idx[qj][0] for qj in range(len(batch)) if qj != qi]

        q_pos, q_vec = sparse[q_text_i]
        pos_lex = _sparse_dot(q_pos, q_vec, *sparse[pos_i])
        neg_lex = [_sparse_dot(q_pos, q_vec, *sparse[ni]) for ni in neg_is]
        lex_terms.append(contrastive_loss(pos_lex, neg_lex, config.temperature))

        q_den = dense_all[q_text_i]
        pos_den = (q_den * dense_all[pos_i]).sum()
        neg_den = [(q_den * dense_all[ni]).sum() for ni in neg_is]
        den_terms.append(contrastive_loss(pos_den, neg_den, config.temperature))

    for i, tok in enumerate(toks):
        labels = tok_labels[i]
        if labels is None:
            continue
        positions = np.asarray(tok.real_token_positions(), dtype=np.intp)
        union_terms.append(
            union_loss_from_log_probs(log_probs_all[i][positions], labels))

    def avg(terms):
        if not terms:
            return Tensor(0.0)
        return stack(terms).mean()

    return avg(lex_terms), avg(den_terms), avg(union_terms)


def total_loss(model, batch, config: TrainConfig):
    l_lex, l_den, l_union = batch_losses(model, batch, config)
    total = (l_lex * config.weight_lex + l_den * config.weight_den
             + l_union * config.weight_union)
    parts = {"loss_lex": l_lex.item(), "loss_den": l_den.item(),
             "loss_union": l_union.item(), "total": total.item()}
    return total, parts


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Adam with decoupled weight decay and linear warmup."""

    def __init__(self, params: dict, config: TrainConfig, total_steps: int):
        self.params = params
        self.config = config
        self.total_steps = total_steps
        self.warmup_steps = max(1, int(config.warmup_ratio * total_steps))
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def lr(self) -> float:
        base = self.config.learning_rate
        if self.step_count <= self.warmup_steps:
            return base * self.step_count / self.warmup_steps
        return base

    def step(self):
        self.step_count += 1
        c = self.config
        lr = self.lr()
        b1c = 1.0 - c.adam_beta1 ** self.step_count
        b2c = 1.0 - c.adam_beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = c.adam_beta1 * self.m[name] + (1 - c.adam_beta1) * g
            self.v[name] = c.adam_beta2 * self.v[name] + (1 - c.adam_beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + c.adam_eps)
            p.data -= lr * (update + c.weight_decay * p.data)
            p.grad = None


# -- training loop -----------------------------------------------------------


def label_example(ex: TrainingExample, model, lexicon: dict, rules) -> TrainingExample:
    """Fill in BMES labels for the query and all passages via the oracle."""
    def labels_for(text):
        tok = model.tokenize(text)
        return align_labels(tok, segment(text, lexicon, rules))

    ex.query_labels = labels_for(ex.query)
    ex.passage_labels = [labels_for(t) for t in [ex.positive] + list(ex.negatives)]
    return ex


def train(model, dataset, config: TrainConfig, loss_log_path=None):
    """Run the optimization loop; returns the per-step loss log rows."""
    if not dataset:
        raise ValueError("dataset must be non-empty")
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    optimizer = Adam(model.params, config, steps_per_epoch * config.epochs)

    rows = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = [dataset[i] for i in order[lo:lo + config.batch_size]]
            if len(batch) < 2:
                continue
            loss, parts = total_loss(model, batch, config)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at step {step}: {parts}")
            loss.backward()
            optimizer.step()
            step += 1
            rows.append((step, parts["loss_lex"], parts["loss_den"],
                         parts["loss_union"], parts["total"]))
    if loss_log_path is not None:
        write_loss_log(loss_log_path, rows)
    return rows


def write_loss_log(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss_lex,loss_den,loss_union,total\n")
        for step, l_lex, l_den, l_union, tot in rows:
            fh.write(f"{step},{l_lex!r},{l_den!r},{l_union!r},{tot!r}\n")


# -- hard negative mining ----------------------------------------------------


def mine_hard_negatives(model, idx, queries, qrels: dict, num_negatives: int = 3,
                        rank_lo: int = 20, rank_hi: int = 100, seed: int = 0) -> dict:
    """Sample hard negatives from hybrid retrieval ranks [rank_lo, rank_hi].

    queries: list of {"id", "text"}; qrels: {qid: {docid: rel}}. Positives
    (rel > 0) are never returned. Returns {qid: [docid, ...]}.
    """
    rng = np.random.default_rng(seed)
    mined = {}
    for record in queries:
        qid, text = record["id"], record["text"]
        rep, dense = model.encode_one(text)
        hits = search_hybrid(rep, dense, idx, k=rank_hi, k_candidates=max(rank_hi, 1000))
        if not hits:
            LOG.warning("query %s retrieved no documents", qid)
            mined[qid] = []
            continue
        positives = {d for d, rel in qrels.get(qid, {}).items() if rel > 0}
        window = hits[rank_lo - 1:rank_hi]
        eligible = [h.doc_id for h in window if h.doc_id not in positives]
        if len(eligible) <= num_negatives:
            mined[qid] = eligible
        else:
            pick = rng.choice(len(eligible), size=num_negatives, replace=False)
            mined[qid] = [eligible[i] for i in sorted(pick)]
    return mined
