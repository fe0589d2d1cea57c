"""Vocabulary loading and offset-preserving tokenization.

CJK characters become one token each; runs of Latin letters/digits are split
by greedy longest-match against the vocabulary. Every real token carries its
(start, end) character offsets into the original string.
"""

from __future__ import annotations

from dataclasses import dataclass, field

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"
PAD_TOKEN = "[PAD]"
SPECIAL_TOKENS = (CLS_TOKEN, SEP_TOKEN, UNK_TOKEN, PAD_TOKEN)


class VocabError(ValueError):
    pass


class DuplicateToken(VocabError):
    pass


class EmptyVocab(VocabError):
    pass


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
        or 0x20000 <= cp <= 0x2A6DF
    )


def _is_word_char(ch: str) -> bool:
    # ASCII letters/digits form greedy-match runs; everything else is a
    # single-character token.
    return ch.isascii() and ch.isalnum()


@dataclass
class Vocab:
    token_to_id: dict
    id_to_token: list
    cls_id: int = field(init=False)
    sep_id: int = field(init=False)
    unk_id: int = field(init=False)
    pad_id: int = field(init=False)

    def __post_init__(self):
        self.cls_id = self.token_to_id[CLS_TOKEN]
        self.sep_id = self.token_to_id[SEP_TOKEN]
        self.unk_id = self.token_to_id[UNK_TOKEN]
        self.pad_id = self.token_to_id[PAD_TOKEN]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def get(self, token: str):
        return self.token_to_id.get(token)

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        token_to_id = {}
        id_to_token = []
        for tok in tokens:
            if tok in token_to_id:
                raise DuplicateToken(f"duplicate vocab entry: {tok!r}")
            token_to_id[tok] = len(id_to_token)
            id_to_token.append(tok)
        for special in SPECIAL_TOKENS:
            if special not in token_to_id:
                token_to_id[special] = len(id_to_token)
                id_to_token.append(special)
        return cls(token_to_id, id_to_token)


def load_vocab(path) -> Vocab:
    """Load a one-token-per-line UTF-8 vocab file; line index = id."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyVocab(f"vocab file is empty: {path}")
    return Vocab.from_tokens(lines)


@dataclass
class TokenizedText:
    token_ids: list
    offsets: list  # (start, end) per position; None for [CLS]/[SEP]/[PAD]
    attention_mask: list
    original_text: str

    def __len__(self):
        return len(self.token_ids)

    def real_token_positions(self):
        """Positions of content tokens (offsets present, mask 1)."""
        return [i for i, off in enumerate(self.offsets) if off is not None]


def _match_run(run: str, run_start: int, vocab: Vocab):
    """Greedy longest-match of an ASCII alnum run against the vocab."""
    pieces = []
    i = 0
    while i < len(run):
        for j in range(len(run), i, -1):
            tid = vocab.get(run[i:j])
            if tid is not None:
                pieces.append((tid, run_start + i, run_start + j))
                i = j
                break
        else:
            pieces.append((vocab.unk_id, run_start + i, run_start + i + 1))
            i += 1
    return pieces


def tokenize(text: str, vocab: Vocab, max_len: int) -> TokenizedText:
    if max_len < 2:
        raise ValueError("max_len must be at least 2 to fit [CLS] and [SEP]")
    pieces = []  # (token_id, start, end)
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if _is_word_char(ch):
            j = i
            while j < n and _is_word_char(text[j]):
                j += 1
            pieces.extend(_match_run(text[i:j], i, vocab))
            i = j
        else:
            tid = vocab.get(ch)
            if tid is None:
                tid = vocab.unk_id
            pieces.append((tid, i, i + 1))
            i += 1

    pieces = pieces[: max_len - 2]
    token_ids = [vocab.cls_id] + [p[0] for p in pieces] + [vocab.sep_id]
    offsets = [None] + [(p[1], p[2]) for p in pieces] + [None]
    mask = [1] * len(token_ids)
    return TokenizedText(token_ids, offsets, mask, text)


def pad_batch(batch, pad_id: int):
    """Right-pad a list of TokenizedText to equal length; returns (ids, mask)."""
    width = max(len(t) for t in batch)
    ids = [t.token_ids + [pad_id] * (width - len(t)) for t in batch]
    mask = [t.attention_mask + [0] * (width - len(t)) for t in batch]
    return ids, mask
