"""TREC-style run/qrels parsing and ranking metrics at cutoff k.

nDCG uses linear gain and a 1/log2(rank+1) discount, matching trec-eval
conventions. Queries present in the run but absent from the qrels are
skipped with a warning, not zero-scored.
"""

from __future__ import annotations

import logging
import math

LOG = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


def load_qrels(path) -> dict:
    """Parse "qid 0 docid rel" lines into {qid: {docid: rel}}."""
    qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, docid, rel = parts
            try:
                rel = int(rel)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad relevance grade {parts[3]!r}")
            if rel < 0:
                raise ParseError(f"{path}:{lineno}: negative relevance grade")
            qrels.setdefault(qid, {})[docid] = rel
    return qrels


def load_run(path) -> dict:
    """Parse "qid Q0 docid rank score tag" lines into {qid: [(docid, score)]}."""
    run = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            qid, _, docid, _, score, _ = parts
            try:
                score = float(score)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad score {parts[4]!r}")
            run.setdefault(qid, []).append((docid, score))
    for qid, hits in run.items():
        docs = [d for d, _ in hits]
        if len(docs) != len(set(docs)):
            raise ParseError(f"duplicate doc ids for query {qid}")
        scores = [s for _, s in hits]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ParseError(f"scores not non-increasing for query {qid}")
    return run


def write_run(path, run: dict, tag: str = "hyret"):
    with open(path, "w", encoding="utf-8") as fh:
        for qid in run:
            for rank, (docid, score) in enumerate(run[qid], 1):
                fh.write(f"{qid} Q0 {docid} {rank} {score:.6f} {tag}\n")


def _query_metrics(ranked, rels: dict, k: int) -> dict:
    top = ranked[:k]
    gains = [rels.get(docid, 0) for docid, _ in top]
    total_relevant = sum(1 for rel in rels.values() if rel > 0)

    dcg = sum(g / math.log2(r + 1) for r, g in enumerate(gains, 1))
    ideal = sorted((rel for rel in rels.values() if rel > 0), reverse=True)[:k]
    idcg = sum(g / math.log2(r + 1) for r, g in enumerate(ideal, 1))
    ndcg = dcg / idcg if idcg > 0 else 0.0

    hits = sum(1 for g in gains if g > 0)
    recall = hits / total_relevant if total_relevant else 0.0

    mrr = 0.0
    for rank, g in enumerate(gains, 1):
        if g > 0:
            mrr = 1.0 / rank
            break

    precisions = []
    seen_rel = 0
    for rank, g in enumerate(gains, 1):
        if g > 0:
            seen_rel += 1
            precisions.append(seen_rel / rank)
    denom = min(total_relevant, k)
    ap = sum(precisions) / denom if denom else 0.0

    return {"ndcg": ndcg, "recall": recall, "mrr": mrr, "map": ap}


def evaluate(run: dict, qrels: dict, k: int = 10) -> dict:
    """Macro-averaged nDCG/Recall/MRR/MAP at cutoff k over evaluable queries."""
    per_query = {}
    for qid, ranked in run.items():
        rels = qrels.get(qid)
        if not rels or not any(rel > 0 for rel in rels.values()):
            LOG.warning("query %s missing from qrels; skipped", qid)
            continue
        per_query[qid] = _query_metrics(ranked, rels, k)
    if not per_query:
        return {"ndcg": 0.0, "recall": 0.0, "mrr": 0.0, "map": 0.0, "queries": 0}
    avg = {m: sum(q[m] for q in per_query.values()) / len(per_query)
           for m in ("ndcg", "recall", "mrr", "map")}
    avg["queries"] = len(per_query)
    return avg
