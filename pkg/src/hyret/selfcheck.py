"""Built-in oracle suite: gradient check, index-vs-brute-force, norm checks.

Runs against a given checkpoint (or a fresh random model) and reports one
pass/fail entry per check; used by the `selfcheck` command.
"""

from __future__ import annotations

import tempfile

import numpy as np

from . import heads, index as index_mod, train as train_mod
from .encoder import EncoderConfig
from .heads import SparseRepresentation
from .model import Model
from .text import Vocab


def _tiny_model(seed: int = 0) -> Model:
    vocab = Vocab.from_tokens([chr(0x4E00 + i) for i in range(20)])
    config = EncoderConfig(hidden_size=8, heads=2, layers_ssb=1, layers_gle=1,
                           layers_lde=1, ffn_size=16, max_len=8,
                           vocab_size=vocab.size, seed=seed)
    return Model(config, vocab)


def gradient_check(model: Model = None, n_coords: int = 60, h: float = 1e-3,
                   tol: float = 1e-4, seed: int = 0):
    """Analytic total-loss gradient vs central finite differences.

    Run at a moderate temperature: the check compares gradients, and a small
    temperature inflates third derivatives until the O(h^2) truncation error
    of the finite difference itself exceeds the tolerance.
    """
    if model is None:
        model = _tiny_model(seed)
    rng = np.random.default_rng(seed)
    chars = [c for c in model.vocab.id_to_token if len(c) == 1]

    def text(n):
        return "".join(chars[i] for i in rng.integers(0, len(chars), size=n))

    config = train_mod.TrainConfig(temperature=0.5, batch_size=2, seed=seed)
    batch = []
    for _ in range(2):
        ex = train_mod.TrainingExample(text(3), text(4), [text(4), text(3)])
        tok_q = model.tokenize(ex.query)
        ex.query_labels = [0] * len(tok_q.real_token_positions())
        ex.passage_labels = [
            [0] * len(model.tokenize(t).real_token_positions())
            for t in [ex.positive] + ex.negatives]
        batch.append(ex)

    def loss_value():
        loss, _ = train_mod.total_loss(model, batch, config)
        return loss.item()

    for p in model.params.values():
        p.grad = None
    loss, _ = train_mod.total_loss(model, batch, config)
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in model.params.items()}

    # stratify over parameter groups so every group gets coverage; the
    # projection heads count as one group per head
    groups = {}
    for name in sorted(model.params):
        key = name if name.startswith("head.w") else name.split(".")[0]
        groups.setdefault(key, []).append(name)
    group_cycle = sorted(groups)
    worst = 0.0
    checked = 0
    failures = []
    while checked < n_coords:
        members = groups[group_cycle[checked % len(group_cycle)]]
        name = members[rng.integers(len(members))]
        p = model.params[name]
        flat_idx = int(rng.integers(p.data.size))
        idx = np.unravel_index(flat_idx, p.data.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = loss_value()
        p.data[idx] = orig - h
        down = loss_value()
        p.data[idx] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[name][idx]
        denom = max(abs(a), abs(numeric), 1e-6)
        rel = abs(a - numeric) / denom
        worst = max(worst, rel)
        if rel >= tol:
            failures.append((name, idx, a, numeric, rel))
        checked += 1
    return {"name": "gradient_check", "passed": not failures,
            "detail": f"{checked} coords, worst rel err {worst:.2e}"}


def index_equivalence_check(n_docs: int = 50, n_queries: int = 10, dim: int = 16,
                            seed: int = 0):
    """Inverted-index and dense searches vs exhaustive brute force."""
    rng = np.random.default_rng(seed)
    with tempfile.TemporaryDirectory() as tmp:
        docs, doc_reps = [], {}
        for i in range(n_docs):
            units = {int(u): float(rng.random())
                     for u in rng.choice(100, size=rng.integers(2, 8), replace=False)}
            rep = heads.normalize_sparse(SparseRepresentation(units))
            dense = rng.normal(size=dim)
            dense = (dense / np.linalg.norm(dense)).astype(np.float32)
            doc_id = f"d{i:03d}"
            docs.append((doc_id, rep, dense))
            doc_reps[doc_id] = (rep, dense)
        idx = index_mod.build_index(docs, tmp, dim)

        max_err = 0.0
        for _ in range(n_queries):
            units = {int(u): float(rng.random())
                     for u in rng.choice(100, size=4, replace=False)}
            q_rep = heads.normalize_sparse(SparseRepresentation(units))
            q_dense = rng.normal(size=dim)
            q_dense /= np.linalg.norm(q_dense)

            hits = index_mod.search_hybrid(q_rep, q_dense, idx, k=n_docs,
                                           k_candidates=n_docs)
            for hit in hits:
                rep, dense = doc_reps[hit.doc_id]
                brute_lex = sum(
                    w * np.float64(np.float32(rep.units[u]))
                    for u, w in q_rep.units.items() if u in rep.units)
                brute_den = float(dense.astype(np.float64) @ q_dense)
                max_err = max(max_err, abs(hit.s_lex - brute_lex),
                              abs(hit.s_den - brute_den))
        passed = bool(max_err < 1e-6)
    return {"name": "index_equivalence", "passed": passed,
            "detail": f"max |index - brute force| = {max_err:.2e}"}


def normalization_check(model: Model = None, n_texts: int = 50, seed: int = 0):
    """Encoded representations carry unit L2 norm."""
    if model is None:
        model = _tiny_model(seed)
    rng = np.random.default_rng(seed)
    chars = [c for c in model.vocab.id_to_token if len(c) == 1]
    texts = ["".join(chars[i] for i in rng.integers(0, len(chars),
                                                    size=rng.integers(1, 7)))
             for _ in range(n_texts)]
    worst = 0.0
    for rep, dense in model.encode(texts):
        worst = max(worst, abs(np.linalg.norm(dense) - 1.0))
        if len(rep):
            worst = max(worst, abs(rep.norm() - 1.0))
    return {"name": "normalization", "passed": bool(worst < 1e-6),
            "detail": f"worst |norm - 1| = {worst:.2e}"}


def run_selfcheck(model: Model = None, seed: int = 0):
    checks = [
        gradient_check(model, seed=seed),
        index_equivalence_check(seed=seed),
        normalization_check(model, seed=seed),
    ]
    return {"passed": all(c["passed"] for c in checks), "checks": checks}
