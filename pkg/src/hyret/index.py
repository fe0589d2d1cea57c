"""Persisted inverted index + dense vector store, with hybrid search.

Layout of an index directory:
  meta.json    doc count, hidden size, config/vocab hashes (written last)
  docs.tsv     ordinal<TAB>doc-id
  postings.bin records [u64 unit][u32 count][count x (u32 ordinal, f32 weight)]
  dense.bin    doc_count x H float32, row-major, little-endian
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .heads import SparseRepresentation

_SCORE_EPS = 1e-6


class IndexError_(ValueError):
    pass


class DuplicateDoc(IndexError_):
    pass


class HashCollision(IndexError_):
    pass


class DimError(IndexError_):
    pass


@dataclass
class ScoredHit:
    doc_id: str
    s_lex: float
    s_den: float

    @property
    def s_total(self) -> float:
        return self.s_lex + self.s_den


def _check_hit(hit: ScoredHit) -> ScoredHit:
    assert -_SCORE_EPS <= hit.s_lex <= 1.0 + _SCORE_EPS, hit
    assert -1.0 - _SCORE_EPS <= hit.s_den <= 1.0 + _SCORE_EPS, hit
    return hit


@dataclass
class IndexArtifacts:
    doc_ids: list                    # ordinal -> external id
    postings: dict                   # unit id -> (ordinals int32[], weights float64[])
    dense: np.ndarray                # [doc_count, H] float32
    meta: dict

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)


def build_index(docs, out_dir, hidden_size: int, config_hash: str = "",
                vocab_hash: str = "") -> IndexArtifacts:
    """Build and persist an index from (doc_id, SparseRepresentation, dense) triples."""
    os.makedirs(out_dir, exist_ok=True)
    doc_ids = []
    seen = set()
    postings_acc = {}
    dense_rows = []
    surfaces = {}
    for doc_id, rep, dense in docs:
        if doc_id in seen:
            raise DuplicateDoc(f"duplicate doc id: {doc_id}")
        seen.add(doc_id)
        ordinal = len(doc_ids)
        doc_ids.append(doc_id)
        dense_rows.append(np.asarray(dense, dtype=np.float32))
        for uid, weight in rep.units.items():
            if weight <= 0.0:
                continue
            surface = rep.surfaces.get(uid)
            if surface is not None:
                prev = surfaces.setdefault(uid, surface)
                if prev != surface and uid >= (1 << 63):
                    raise HashCollision(
                        f"unit {uid}: {prev!r} vs {surface!r}")
            postings_acc.setdefault(uid, []).append((ordinal, weight))

    dense = (np.stack(dense_rows) if dense_rows
             else np.zeros((0, hidden_size), dtype=np.float32))
    if dense.shape[1] != hidden_size:
        raise DimError(f"dense width {dense.shape[1]} != hidden size {hidden_size}")

    with open(os.path.join(out_dir, "docs.tsv"), "w", encoding="utf-8") as fh:
        for ordinal, doc_id in enumerate(doc_ids):
            fh.write(f"{ordinal}\t{doc_id}\n")

    postings = {}
    with open(os.path.join(out_dir, "postings.bin"), "wb") as fh:
        for uid in sorted(postings_acc):
            entries = sorted(postings_acc[uid])
            fh.write(struct.pack("<QI", uid, len(entries)))
            for ordinal, weight in entries:
                fh.write(struct.pack("<If", ordinal, weight))
            postings[uid] = (
                np.array([e[0] for e in entries], dtype=np.int32),
                np.array([np.float32(e[1]) for e in entries], dtype=np.float64),
            )

    with open(os.path.join(out_dir, "dense.bin"), "wb") as fh:
        fh.write(dense.astype("<f4").tobytes())

    meta = {
        "doc_count": len(doc_ids),
        "hidden_size": hidden_size,
        "config_hash": config_hash,
        "vocab_hash": vocab_hash,
    }
    # meta last: its presence marks a committed index
    tmp = os.path.join(out_dir, "meta.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
    os.replace(tmp, os.path.join(out_dir, "meta.json"))
    return IndexArtifacts(doc_ids, postings, dense, meta)


def index_corpus(corpus, model, out_dir) -> IndexArtifacts:
    """Encode a stream of {"id","text"} records and build the index."""
    from .model import config_hash as chash, vocab_hash as vhash

    records = list(corpus)
    reps = model.encode([r["text"] for r in records])
    docs = [(r["id"], rep, dense) for r, (rep, dense) in zip(records, reps)]
    return build_index(docs, out_dir, model.config.hidden_size,
                       chash(model.config), vhash(model.vocab))


def load_index(index_dir) -> IndexArtifacts:
    with open(os.path.join(index_dir, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    doc_ids = [None] * meta["doc_count"]
    with open(os.path.join(index_dir, "docs.tsv"), encoding="utf-8") as fh:
        for line in fh:
            ordinal, _, doc_id = line.rstrip("\n").partition("\t")
            doc_ids[int(ordinal)] = doc_id
    postings = {}
    with open(os.path.join(index_dir, "postings.bin"), "rb") as fh:
        blob = fh.read()
    off = 0
    while off < len(blob):
        uid, count = struct.unpack_from("<QI", blob, off)
        off += 12
        raw = np.frombuffer(blob, dtype=np.dtype([("o", "<u4"), ("w", "<f4")]),
                            count=count, offset=off)
        off += 8 * count
        postings[uid] = (raw["o"].astype(np.int32), raw["w"].astype(np.float64))
    dense = np.fromfile(os.path.join(index_dir, "dense.bin"), dtype="<f4")
    dense = dense.reshape(meta["doc_count"], meta["hidden_size"])
    return IndexArtifacts(doc_ids, postings, dense, meta)


def _lexicon_scores(q: SparseRepresentation, idx: IndexArtifacts) -> dict:
    scores = {}
    for uid, q_weight in q.units.items():
        entry = idx.postings.get(uid)
        if entry is None:
            continue
        ordinals, weights = entry
        for ordinal, weight in zip(ordinals, weights):
            scores[int(ordinal)] = scores.get(int(ordinal), 0.0) + q_weight * weight
    return scores


def _top_k(hits, k):
    hits.sort(key=lambda h: (-h.s_total, h.doc_id))
    return [_check_hit(h) for h in hits[:k]]


def search_lexicon(q: SparseRepresentation, idx: IndexArtifacts, k: int):
    hits = [ScoredHit(idx.doc_ids[o], s, 0.0)
            for o, s in _lexicon_scores(q, idx).items()]
    return _top_k(hits, k)


def search_dense(q, idx: IndexArtifacts, k: int):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != idx.dense.shape[1]:
        raise DimError(f"query dim {q.shape[0]} != index dim {idx.dense.shape[1]}")
    scores = idx.dense.astype(np.float64) @ q
    hits = [ScoredHit(idx.doc_ids[o], 0.0, float(s)) for o, s in enumerate(scores)]
    return _top_k(hits, k)


def search_hybrid(q_sparse: SparseRepresentation, q_dense, idx: IndexArtifacts,
                  k: int, k_candidates: int = 1000):
    if k > k_candidates:
        raise ValueError("k must not exceed k_candidates")
    lex_scores = _lexicon_scores(q_sparse, idx)
    q_vec = np.asarray(q_dense, dtype=np.float64)
    if idx.doc_count and q_vec.shape[0] != idx.dense.shape[1]:
        raise DimError("query/index dimension mismatch")
    den_scores = idx.dense.astype(np.float64) @ q_vec if idx.doc_count else np.zeros(0)

    lex_top = sorted(lex_scores.items(),
                     key=lambda kv: (-kv[1], idx.doc_ids[kv[0]]))[:k_candidates]
    den_top = sorted(range(idx.doc_count),
                     key=lambda o: (-den_scores[o], idx.doc_ids[o]))[:k_candidates]
    candidates = {o for o, _ in lex_top} | set(den_top)

    hits = [ScoredHit(idx.doc_ids[o], lex_scores.get(o, 0.0), float(den_scores[o]))
            for o in candidates]
    return _top_k(hits, k)
