"""Synthetic desk-scale corpus generator.

A closed world of pseudo-Chinese text: each topic owns a disjoint set of
two-character words arranged in synonym pairs (an "a" form used by queries
and an interchangeable "b" form used by semantic positives), plus
topic-neutral filler words. Positives overlap the query either lexically
(same surface words) or semantically (synonym forms), negatives include
same-topic documents built from different pairs and off-topic documents
carrying one query word, so the lexicon and dense branches must learn
complementary signal. Adversarial evaluation queries are built so that
exactly one branch is reliable per query.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .segmentation import DEFAULT_RULE_PATTERNS

N_TOPICS = 10
PAIRS_PER_TOPIC = 6
WORD_LEN = 2
N_FILLER_CHARS = 12
N_FILLER_WORDS = 8


class SyntheticWorld:
    """Deterministic vocabulary/word layout; text sampling uses a caller rng."""

    def __init__(self):
        base = 0x4E00
        cursor = 0

        def take(n):
            nonlocal cursor
            chars = [chr(base + i) for i in range(cursor, cursor + n)]
            cursor += n
            return chars

        self.topics = []
        for _ in range(N_TOPICS):
            a_words, b_words = [], []
            for _ in range(PAIRS_PER_TOPIC):
                a_words.append("".join(take(WORD_LEN)))
                b_words.append("".join(take(WORD_LEN)))
            self.topics.append((a_words, b_words))
        self.filler_chars = take(N_FILLER_CHARS)
        self.filler_words = ["".join(take(WORD_LEN)) for _ in range(N_FILLER_WORDS)]
        self.all_chars = [chr(base + i) for i in range(cursor)]

    def all_words(self):
        words = []
        for a_words, b_words in self.topics:
            words.extend(a_words)
            words.extend(b_words)
        words.extend(self.filler_words)
        return words

    def write_vocab(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in ("[PAD]", "[UNK]", "[CLS]", "[SEP]"):
                fh.write(tok + "\n")
            for ch in self.all_chars:
                fh.write(ch + "\n")

    def write_lexicon(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for word in self.all_words():
                fh.write(f"{word}\t100\n")

    def write_rules(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for pattern in DEFAULT_RULE_PATTERNS:
                fh.write(pattern + "\n")

    # -- text sampling -------------------------------------------------------

    def fillers(self, rng, n):
        out = []
        for _ in range(n):
            if rng.random() < 0.5:
                out.append(self.filler_words[rng.integers(N_FILLER_WORDS)])
            else:
                out.append(self.filler_chars[rng.integers(N_FILLER_CHARS)])
        return out

    def pair_word(self, topic, pair, form):
        a_words, b_words = self.topics[topic]
        return a_words[pair] if form == "a" else b_words[pair]

    def doc_from_pairs(self, rng, topic, pairs, form, n_fill=2, extra=()):
        words = [self.pair_word(topic, p, form) for p in pairs]
        words += list(extra)
        words += self.fillers(rng, n_fill)
        rng.shuffle(words)
        return "".join(words)

    def sample_pairs(self, rng, k, exclude=()):
        pool = [p for p in range(PAIRS_PER_TOPIC) if p not in exclude]
        idx = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        return [pool[i] for i in idx]

    def query(self, rng, topic):
        pairs = self.sample_pairs(rng, 2)
        words = [self.pair_word(topic, p, "a") for p in pairs]
        if rng.random() < 0.5:
            words += self.fillers(rng, 1)
        rng.shuffle(words)
        return "".join(words), pairs

    def doc_pairs(self, text, topic):
        """Pairs of `topic` whose a- or b-form occurs in `text`."""
        found = set()
        for pair in range(PAIRS_PER_TOPIC):
            if (self.pair_word(topic, pair, "a") in text
                    or self.pair_word(topic, pair, "b") in text):
                found.add(pair)
        return found


def _negatives(world, rng, topic, pairs, q_words):
    other_topics = [t for t in range(N_TOPICS) if t != topic]
    # off-topic doc carrying one or both query words: a lexical trap
    t1 = other_topics[rng.integers(len(other_topics))]
    n_carry = 1 + int(rng.random() < 0.5)
    carried = list(rng.choice(q_words, size=min(n_carry, len(q_words)),
                              replace=False))
    neg1 = world.doc_from_pairs(rng, t1, world.sample_pairs(rng, 2),
                                rng.choice(["a", "b"]), n_fill=1, extra=carried)
    # same-topic doc from disjoint pairs: forces within-topic resolution
    neg2 = world.doc_from_pairs(rng, topic, world.sample_pairs(rng, 3, exclude=pairs),
                                rng.choice(["a", "b"]))
    t3 = other_topics[rng.integers(len(other_topics))]
    neg3 = world.doc_from_pairs(rng, t3, world.sample_pairs(rng, 3),
                                rng.choice(["a", "b"]))
    return [neg1, neg2, neg3]


def _positive(world, rng, topic, pairs, q_words, kind):
    if kind == "lex":
        # same surface words plus one more topic word
        extra_pair = world.sample_pairs(rng, 1, exclude=pairs)
        return world.doc_from_pairs(rng, topic, extra_pair,
                                    rng.choice(["a", "b"]), extra=q_words)
    # synonym forms of the query pairs, anchored by one shared surface word
    anchor = [q_words[rng.integers(len(q_words))]]
    return world.doc_from_pairs(rng, topic, pairs, "b", extra=anchor)


def generate_training_set(world: SyntheticWorld, rng, n_examples=500):
    examples = []
    for i in range(n_examples):
        topic = int(rng.integers(N_TOPICS))
        q_text, pairs = world.query(rng, topic)
        q_words = [world.pair_word(topic, p, "a") for p in pairs]
        kind = "lex" if i % 2 == 0 else "sem"
        pos = _positive(world, rng, topic, pairs, q_words, kind)
        negs = _negatives(world, rng, topic, pairs, q_words)
        examples.append({"query": q_text, "pos": pos, "negs": negs})
    return examples


def generate_eval_sets(world: SyntheticWorld, rng, n_main=60, n_adv=40,
                       n_random_docs=100):
    corpus, queries_main, queries_adv = [], [], []
    qrels_main, qrels_adv = {}, {}
    query_keys = []  # (topic, frozenset(pairs)) per query, for collision control
    doc_seq = 0

    # unique (topic, pair-set) per query so no other query's relevant
    # document duplicates a query's full word set
    from itertools import combinations
    combos = [(t, pair_set) for t in range(N_TOPICS)
              for pair_set in combinations(range(PAIRS_PER_TOPIC), 2)]
    if n_main + n_adv > len(combos):
        raise ValueError("not enough distinct topic/pair combinations")
    order = rng.permutation(len(combos))
    combo_iter = iter(combos[i] for i in order)

    def make_query(topic, pairs):
        words = [world.pair_word(topic, p, "a") for p in pairs]
        if rng.random() < 0.5:
            words += world.fillers(rng, 1)
        rng.shuffle(words)
        return "".join(words)

    def add_doc(text):
        nonlocal doc_seq
        doc_id = f"d{doc_seq:05d}"
        doc_seq += 1
        corpus.append({"id": doc_id, "text": text})
        return doc_id

    for i in range(n_main):
        topic, pairs = next(combo_iter)
        pairs = list(pairs)
        q_text = make_query(topic, pairs)
        q_words = [world.pair_word(topic, p, "a") for p in pairs]
        kind = "lex" if i % 2 == 0 else "sem"
        rel = _positive(world, rng, topic, pairs, q_words, kind)
        qid = f"qm{i:04d}"
        queries_main.append({"id": qid, "text": q_text})
        qrels_main[qid] = {add_doc(rel): 1}
        query_keys.append((topic, frozenset(pairs)))

    for i in range(n_adv):
        topic, pairs = next(combo_iter)
        pairs = list(pairs)
        q_text = make_query(topic, pairs)
        q_words = [world.pair_word(topic, p, "a") for p in pairs]
        other_topics = [t for t in range(N_TOPICS) if t != topic]
        qid = f"qa{i:04d}"
        if i % 2 == 0:
            # dense-decisive: relevant shares one surface word while an
            # off-topic trap carries both query words, so the lexicon
            # branch prefers the trap and the dense branch must override
            anchor = q_words[int(rng.integers(2))]
            rel = world.doc_from_pairs(rng, topic, pairs, "b", n_fill=1,
                                       extra=[anchor])
            t = other_topics[rng.integers(len(other_topics))]
            add_doc(world.doc_from_pairs(rng, t, world.sample_pairs(rng, 3),
                                         "a", n_fill=1, extra=q_words))
        else:
            # lexicon-decisive: exact-overlap relevant vs its synonym twin,
            # indistinguishable to the dense branch by construction
            rel = "".join(q_words + world.fillers(rng, 2))
            add_doc(world.doc_from_pairs(rng, topic, pairs, "b", n_fill=2))
        queries_adv.append({"id": qid, "text": q_text})
        qrels_adv[qid] = {add_doc(rel): 1}
        query_keys.append((topic, frozenset(pairs)))

    added = 0
    while added < n_random_docs:
        topic = int(rng.integers(N_TOPICS))
        doc = world.doc_from_pairs(rng, topic, world.sample_pairs(rng, 3),
                                   rng.choice(["a", "b"]))
        # keep random docs from duplicating any query's full pair set
        if any(t == topic and len(world.doc_pairs(doc, topic) & ps) >= 2
               for t, ps in query_keys):
            continue
        add_doc(doc)
        added += 1

    return corpus, queries_main, qrels_main, queries_adv, qrels_adv


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_qrels(path, qrels):
    with open(path, "w", encoding="utf-8") as fh:
        for qid in qrels:
            for doc_id, rel in qrels[qid].items():
                fh.write(f"{qid} 0 {doc_id} {rel}\n")


def generate(out_dir, seed: int = 0, n_train: int = 500):
    """Write the full synthetic bundle into out_dir; returns the file map."""
    os.makedirs(out_dir, exist_ok=True)
    world = SyntheticWorld()
    rng = np.random.default_rng(seed)

    paths = {name: os.path.join(out_dir, fname) for name, fname in {
        "vocab": "vocab.txt",
        "lexicon": "lexicon.tsv",
        "rules": "rules.txt",
        "train": "train.jsonl",
        "corpus": "corpus.jsonl",
        "queries_main": "queries_main.jsonl",
        "queries_adv": "queries_adv.jsonl",
        "qrels_main": "qrels_main.txt",
        "qrels_adv": "qrels_adv.txt",
    }.items()}

    world.write_vocab(paths["vocab"])
    world.write_lexicon(paths["lexicon"])
    world.write_rules(paths["rules"])
    write_jsonl(paths["train"], generate_training_set(world, rng, n_train))
    corpus, q_main, qrels_main, q_adv, qrels_adv = generate_eval_sets(world, rng)
    write_jsonl(paths["corpus"], corpus)
    write_jsonl(paths["queries_main"], q_main)
    write_jsonl(paths["queries_adv"], q_adv)
    write_qrels(paths["qrels_main"], qrels_main)
    write_qrels(paths["qrels_adv"], qrels_adv)
    return paths
