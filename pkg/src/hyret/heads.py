"""Projection heads and the bagging step.

Three linear heads sit on the encoder branches: a 4-way union classifier and
a scalar importance score on the lexicon states, and a dense projection of
the [CLS] state. Bagging groups tokens into words by decoded union classes
and max-pools weights; both final representations are L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, l2_normalize, log_softmax, softmax
from .segmentation import decode_bmes
from .text import TokenizedText

WORD_ID_NAMESPACE = 1 << 63
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class DegenerateVector(ValueError):
    pass


def init_head_params(hidden_size: int, rng) -> dict:
    H = hidden_size

    def uniform(shape):
        bound = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    return {
        "head.w_u": uniform((H, 4)),
        "head.b_u": Tensor(np.zeros(4), requires_grad=True),
        "head.w_w": uniform((H, 1)),
        "head.b_w": Tensor(np.zeros(1), requires_grad=True),
        "head.w_d": uniform((H, H)),
        "head.b_d": Tensor(np.zeros(H), requires_grad=True),
    }


def union_logits(L: Tensor, params: dict) -> Tensor:
    return L @ params["head.w_u"] + params["head.b_u"]


def union_probs(L: Tensor, params: dict) -> Tensor:
    """Per-position softmax over {S,B,M,E}; callers select real tokens."""
    return softmax(union_logits(L, params), axis=-1)


def union_log_probs(L: Tensor, params: dict) -> Tensor:
    return log_softmax(union_logits(L, params), axis=-1)


def term_weights(L: Tensor, params: dict) -> Tensor:
    """log(1 + relu(linear)) importance score per position, shape [..., N]."""
    score = L @ params["head.w_w"] + params["head.b_w"]
    return score.relu().log1p().reshape(score.shape[:-1])


def dense_vector(D_cls: Tensor, params: dict, normalize: bool = True) -> Tensor:
    """Project the [CLS] dense state; L2-normalize unless disabled."""
    v = D_cls @ params["head.w_d"] + params["head.b_d"]
    if not normalize:
        return v
    norm = np.linalg.norm(v.data, axis=-1)
    if np.any(norm == 0.0):
        raise DegenerateVector("dense projection produced a zero vector")
    return l2_normalize(v)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def composed_word_id(surface: str) -> int:
    return fnv1a64(surface.encode("utf-8")) | WORD_ID_NAMESPACE


@dataclass
class SparseRepresentation:
    units: dict = field(default_factory=dict)      # unit id -> weight
    surfaces: dict = field(default_factory=dict)   # unit id -> surface string

    def __len__(self):
        return len(self.units)

    def norm(self) -> float:
        return float(np.sqrt(sum(w * w for w in self.units.values())))


def normalize_sparse(rep: SparseRepresentation) -> SparseRepresentation:
    norm = rep.norm()
    if norm == 0.0:
        return SparseRepresentation(dict(rep.units), dict(rep.surfaces))
    return SparseRepresentation(
        {uid: w / norm for uid, w in rep.units.items()}, dict(rep.surfaces))


def bag(tok: TokenizedText, probs: np.ndarray, weights: np.ndarray,
        normalize: bool = True) -> SparseRepresentation:
    """Group real tokens into words and pool weights into one representation.

    probs: [n_real, 4] union probabilities; weights: [n_real] term weights.
    Per-token argmax (ties to the lowest class) decodes BMES, invalid
    sequences are repaired, multi-token groups become composed-word units
    with max-pooled weight, and duplicates merge by max.
    """
    positions = tok.real_token_positions()
    probs = np.asarray(probs)
    weights = np.asarray(weights, dtype=np.float64)
    if probs.shape[0] != len(positions) or weights.shape[0] != len(positions):
        raise ValueError("probs/weights not aligned with real token count")

    labels = [int(np.argmax(row)) for row in probs]
    groups = decode_bmes(labels, tok)

    rep = SparseRepresentation()
    for group in groups:
        member_pos = [positions[i] for i in group]
        start = tok.offsets[member_pos[0]][0]
        end = tok.offsets[member_pos[-1]][1]
        surface = tok.original_text[start:end]
        if len(group) == 1:
            uid = tok.token_ids[member_pos[0]]
        else:
            uid = composed_word_id(surface)
        weight = float(max(weights[i] for i in group))
        if weight <= 0.0:
            continue
        if uid not in rep.units or weight > rep.units[uid]:
            rep.units[uid] = weight
            rep.surfaces[uid] = surface
    return normalize_sparse(rep) if normalize else rep
