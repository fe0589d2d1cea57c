"""Reference word segmentation and BMES label handling.

The segmenter is the supervision oracle: ordered regex rules claim spans
first, the frequency lexicon fills the rest by greedy longest-match, and
anything left becomes single-character fallback spans. ``align_labels``
converts a segmentation into per-token BMES classes by offset alignment;
``decode_bmes`` inverts that, with deterministic repair of invalid sequences.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .text import TokenizedText

S, B, M, E = 0, 1, 2, 3
LABEL_NAMES = "SBME"


@dataclass(frozen=True)
class SegSpan:
    start: int
    end: int
    source: str  # "lexicon" | "regex" | "fallback"


def load_lexicon(path) -> dict:
    """Read a "word<TAB>frequency" file into a dict."""
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            word, _, freq = line.partition("\t")
            lexicon[word] = int(freq) if freq else 1
    return lexicon


def load_rules(path) -> list:
    """Read one regex pattern per line; line order = priority."""
    with open(path, encoding="utf-8") as fh:
        return [re.compile(line.rstrip("\n")) for line in fh if line.strip()]


def compile_rules(patterns) -> list:
    return [re.compile(p) if isinstance(p, str) else p for p in patterns]


def segment(text: str, lexicon: dict, rules) -> list:
    if not lexicon:
        raise ValueError("lexicon must be non-empty")
    max_word = max(len(w) for w in lexicon)
    spans = []
    n = len(text)
    i = 0
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        matched = False
        for rule in rules:
            m = rule.match(text, i)
            if m and m.end() > i:
                spans.append(SegSpan(i, m.end(), "regex"))
                i = m.end()
                matched = True
                break
        if matched:
            continue
        # greedy longest lexicon match, stopping at whitespace
        limit = i
        while limit < n and limit - i < max_word and not text[limit].isspace():
            limit += 1
        for j in range(limit, i + 1, -1):
            if text[i:j] in lexicon:
                spans.append(SegSpan(i, j, "lexicon"))
                i = j
                matched = True
                break
        if not matched:
            if text[i:i + 1] in lexicon:
                spans.append(SegSpan(i, i + 1, "lexicon"))
            else:
                spans.append(SegSpan(i, i + 1, "fallback"))
            i += 1
    return spans


def align_labels(tok: TokenizedText, seg: list) -> list:
    """Per-real-token BMES labels from oracle spans, by offset alignment.

    A span covering exactly k whole tokens yields S (k=1) or B,M*,E (k>=2).
    Tokens that straddle a span boundary, and every token touching the
    affected span, degrade to S.
    """
    positions = tok.real_token_positions()
    offsets = [tok.offsets[p] for p in positions]
    labels = [S] * len(positions)

    for span in seg:
        members = []
        clean = True
        for idx, (start, end) in enumerate(offsets):
            if end <= span.start or start >= span.end:
                continue
            members.append(idx)
            if start < span.start or end > span.end:
                clean = False  # token straddles the span boundary
        if not clean or not members:
            continue  # affected tokens stay S
        if len(members) == 1:
            labels[members[0]] = S
        else:
            labels[members[0]] = B
            for idx in members[1:-1]:
                labels[idx] = M
            labels[members[-1]] = E
    return labels


def repair_labels(labels: list) -> list:
    """Deterministically fix invalid BMES sequences.

    Any token not inside a maximal valid B(M*)E run becomes S.
    """
    out = [S] * len(labels)
    i = 0
    n = len(labels)
    while i < n:
        if labels[i] == B:
            j = i + 1
            while j < n and labels[j] == M:
                j += 1
            if j < n and labels[j] == E:
                out[i] = B
                for k in range(i + 1, j):
                    out[k] = M
                out[j] = E
                i = j + 1
                continue
        i += 1
    return out


def decode_bmes(labels: list, tok: TokenizedText) -> list:
    """Group real-token indices into words per (repaired) BMES labels."""
    positions = tok.real_token_positions()
    if len(labels) != len(positions):
        raise ValueError(
            f"label count {len(labels)} != real token count {len(positions)}")
    labels = repair_labels(labels)
    groups = []
    run = []
    for idx, lab in enumerate(labels):
        if lab == S:
            groups.append([idx])
        elif lab == B:
            run = [idx]
        elif lab == M:
            run.append(idx)
        else:  # E
            run.append(idx)
            groups.append(run)
            run = []
    return groups


# Ordered default rules: plain numbers, quantity phrases, alphanumeric
# product/version identifiers, reduplicated given names (surname + doubled
# character).
DEFAULT_RULE_PATTERNS = (
    r"\d+(?:\.\d+)?",
    r"\d+(?:\.\d+)?[个只条米张本件次年月日元斤克]",
    r"[A-Za-z]+\d[A-Za-z0-9.]*",
    r"[李王张刘陈杨赵黄周吴徐孙马朱胡郭何高林](.)\1",
)


def default_rules() -> list:
    return compile_rules(DEFAULT_RULE_PATTERNS)
