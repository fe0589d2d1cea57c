"""End-to-end acceptance criteria, one test per criterion.

Each test prints a pass/fail line through the terminal-summary hook in
conftest. The heavyweight fixture trains the full desk-scale model once and
is shared by the training-related criteria.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from hyret import (heads, index as index_mod, pipeline, segmentation,
                   synthetic, train as train_mod)
from hyret.encoder import EncoderConfig
from hyret.evaluation import evaluate, load_qrels
from hyret.heads import SparseRepresentation, normalize_sparse
from hyret.model import Model
from hyret.segmentation import align_labels, decode_bmes, segment
from hyret.selfcheck import gradient_check
from hyret.text import load_vocab, tokenize
from hyret.train import TrainConfig, TrainingExample

from conftest import make_tiny_model, record_criterion

ENCODER_CONFIG = dict(hidden_size=64, heads=4, max_len=32, ffn_size=256, seed=0)
TRAIN_CONFIG = dict(epochs=5, batch_size=8, learning_rate=2e-3, seed=0)


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """Synthetic data, a trained model, its index, and per-branch metrics."""
    root = tmp_path_factory.mktemp("acceptance")
    started = time.monotonic()

    paths = synthetic.generate(str(root / "data"), seed=0, n_train=500)
    vocab = load_vocab(paths["vocab"])
    lexicon = segmentation.load_lexicon(paths["lexicon"])
    rules = segmentation.load_rules(paths["rules"])

    config = EncoderConfig(vocab_size=vocab.size, **ENCODER_CONFIG)
    model = Model(config, vocab)
    tconfig = TrainConfig(**TRAIN_CONFIG)
    dataset = [
        train_mod.label_example(
            TrainingExample(r["query"], r["pos"], list(r["negs"])),
            model, lexicon, rules)
        for r in pipeline.read_jsonl(paths["train"])]
    log_rows = train_mod.train(model, dataset, tconfig)

    corpus = pipeline.read_jsonl(paths["corpus"])
    index_dir = str(root / "index")
    idx = index_mod.index_corpus(corpus, model, index_dir)

    queries, qrels, encoded = {}, {}, {}
    for split in ("main", "adv"):
        queries[split] = pipeline.read_jsonl(paths[f"queries_{split}"])
        qrels[split] = load_qrels(paths[f"qrels_{split}"])
        encoded[split] = {q["id"]: model.encode_one(q["text"])
                          for q in queries[split]}

    def run_for(split, mode, k=10):
        run = {}
        for qid, (rep, dense) in encoded[split].items():
            if mode == "lexicon":
                hits = index_mod.search_lexicon(rep, idx, k)
            elif mode == "dense":
                hits = index_mod.search_dense(dense, idx, k)
            else:
                hits = index_mod.search_hybrid(rep, dense, idx, k,
                                               k_candidates=idx.doc_count)
            run[qid] = [(h.doc_id, h.s_total) for h in hits]
        return run

    metrics = {split: {mode: evaluate(run_for(split, mode), qrels[split], k=10)
                       for mode in ("lexicon", "dense", "hybrid")}
               for split in ("main", "adv")}

    return SimpleNamespace(
        root=root, paths=paths, vocab=vocab, lexicon=lexicon, rules=rules,
        model=model, tconfig=tconfig, dataset=dataset, log_rows=log_rows,
        corpus=corpus, idx=idx, index_dir=index_dir, queries=queries,
        qrels=qrels, encoded=encoded, metrics=metrics,
        wall_time=time.monotonic() - started)


def synth_chars():
    return [c for c in synthetic.SyntheticWorld().all_chars]


def test_criterion_1_normalization_invariants(world):
    started = time.monotonic()
    rng = np.random.default_rng(0)
    chars = synth_chars()
    texts = ["".join(chars[i] for i in rng.integers(0, len(chars),
                                                    size=rng.integers(2, 16)))
             for _ in range(1000)]
    worst = 0.0
    reps = world.model.encode(texts)
    for rep, dense in reps:
        worst = max(worst, abs(float(np.linalg.norm(dense)) - 1.0))
        if len(rep):
            worst = max(worst, abs(rep.norm() - 1.0))
    norms_ok = worst < 1e-6

    bounds_ok = True
    for rep, dense in reps[:50]:
        hits = index_mod.search_hybrid(rep, dense.astype(np.float64), world.idx,
                                       k=world.idx.doc_count,
                                       k_candidates=world.idx.doc_count)
        for h in hits:
            bounds_ok &= -1e-9 <= h.s_lex <= 1.0 + 1e-9
            bounds_ok &= -1.0 - 1e-9 <= h.s_den <= 1.0 + 1e-9
    elapsed = time.monotonic() - started
    passed = norms_ok and bounds_ok and elapsed < 60
    record_criterion(
        1, "normalization invariants over 1000 random texts", passed,
        f"worst |norm-1| {worst:.2e}, bounds {'ok' if bounds_ok else 'BAD'}, "
        f"{elapsed:.1f}s")
    assert passed


def _random_rep(rng, universe=80):
    n = int(rng.integers(2, 7))
    units = {int(u): float(rng.random() + 0.05)
             for u in rng.choice(universe, size=n, replace=False)}
    return normalize_sparse(SparseRepresentation(units))


def test_criterion_2_oracle_equivalence(tmp_path):
    started = time.monotonic()
    rng = np.random.default_rng(1)
    dim = 16
    max_lex_err, max_den_err = 0.0, 0.0
    rankings_ok = True
    for corpus_i in range(20):
        docs = []
        for i in range(200):
            v = rng.normal(size=dim)
            docs.append((f"d{i:03d}", _random_rep(rng),
                         (v / np.linalg.norm(v)).astype(np.float32)))
        idx = index_mod.build_index(docs, tmp_path / f"c{corpus_i}", dim)
        brute_reps = {d: (rep, vec) for d, rep, vec in docs}
        for _ in range(50):
            q_rep = _random_rep(rng)
            qv = rng.normal(size=dim)
            qv /= np.linalg.norm(qv)

            lex_hits = {h.doc_id: h.s_lex
                        for h in index_mod.search_lexicon(q_rep, idx, 200)}
            den_hits = {h.doc_id: h.s_den
                        for h in index_mod.search_dense(qv, idx, 200)}
            hyb = index_mod.search_hybrid(q_rep, qv, idx, k=200,
                                          k_candidates=200)

            brute = []
            for doc_id, (rep, vec) in brute_reps.items():
                s_lex = sum(qw * float(np.float32(rep.units[u]))
                            for u, qw in q_rep.units.items() if u in rep.units)
                s_den = float(vec.astype(np.float64) @ qv)
                brute.append((doc_id, s_lex, s_den))
                if s_lex > 0.0:
                    max_lex_err = max(max_lex_err,
                                      abs(lex_hits[doc_id] - s_lex))
                max_den_err = max(max_den_err, abs(den_hits[doc_id] - s_den))
            brute.sort(key=lambda t: (-(t[1] + t[2]), t[0]))
            rankings_ok &= [h.doc_id for h in hyb] == [d for d, _, _ in brute]
    elapsed = time.monotonic() - started
    passed = (max_lex_err < 1e-9 and max_den_err < 1e-6 and rankings_ok
              and elapsed < 300)
    record_criterion(
        2, "index matches brute force on 20 random corpora", passed,
        f"lex err {max_lex_err:.1e}, dense err {max_den_err:.1e}, "
        f"hybrid ranking {'exact' if rankings_ok else 'MISMATCH'}, "
        f"{elapsed:.1f}s")
    assert passed


def test_criterion_3_gradient_correctness():
    started = time.monotonic()
    result = gradient_check(n_coords=240, h=1e-3, tol=1e-4, seed=0)
    elapsed = time.monotonic() - started
    passed = result["passed"] and elapsed < 300
    record_criterion(3, "analytic gradients vs finite differences", passed,
                     f"{result['detail']}, {elapsed:.1f}s")
    assert passed


def test_criterion_4_branch_decoupling():
    from hyret import encoder as enc

    from hyret.text import pad_batch

    model = make_tiny_model()
    toks = [model.tokenize(chr(0x4E00 + i) * 3) for i in range(2)]
    ids, mask = pad_batch(toks, model.vocab.pad_id)
    base = enc.forward(model.params, model.config, ids, mask)

    checks = []
    for group, same, changed in (("lde", "L", "D"), ("gle", "D", "L")):
        name = f"{group}.0.wv"
        model.params[name].data[1, 2] += 0.25
        out = enc.forward(model.params, model.config, ids, mask)
        model.params[name].data[1, 2] -= 0.25
        unchanged = np.array_equal(getattr(out, same).data,
                                   getattr(base, same).data)
        moved = not np.array_equal(getattr(out, changed).data,
                                   getattr(base, changed).data)
        checks.append(unchanged and moved)

    model.params["ssb.0.wv"].data[1, 2] += 0.25
    out = enc.forward(model.params, model.config, ids, mask)
    model.params["ssb.0.wv"].data[1, 2] -= 0.25
    checks.append(not np.array_equal(out.L.data, base.L.data)
                  and not np.array_equal(out.D.data, base.D.data))

    passed = all(checks)
    record_criterion(4, "branch decoupling is bitwise", passed,
                     "lde/gle/ssb perturbations behave independently")
    assert passed


def test_criterion_5_labelling_round_trip():
    started = time.monotonic()
    syn = synthetic.SyntheticWorld()
    lexicon = {w: 100 for w in syn.all_words()}
    vocab_tokens = list(syn.all_chars)
    from hyret.text import Vocab
    vocab = Vocab.from_tokens(vocab_tokens)

    rng = np.random.default_rng(2)
    words = syn.all_words()
    exact = 0
    n_sentences = 1000
    for _ in range(n_sentences):
        parts = [words[i] for i in rng.integers(0, len(words),
                                                size=rng.integers(2, 8))]
        if rng.random() < 0.3:
            parts.append(syn.filler_chars[rng.integers(len(syn.filler_chars))])
        text = "".join(parts)
        tok = tokenize(text, vocab, 64)
        spans = segment(text, lexicon, [])
        groups = decode_bmes(align_labels(tok, spans), tok)

        offsets = [tok.offsets[p] for p in tok.real_token_positions()]
        decoded_spans = [(offsets[g[0]][0], offsets[g[-1]][1]) for g in groups]
        oracle_spans = [(s.start, s.end) for s in spans]
        exact += decoded_spans == oracle_spans

    text = "李一一一下子想不起她是谁"
    bundled_lex = segmentation.load_lexicon(pipeline.DEFAULT_LEXICON)
    bundled_rules = segmentation.load_rules(pipeline.DEFAULT_RULES)
    spans = segment(text, bundled_lex, bundled_rules)
    table4_ok = [text[s.start:s.end] for s in spans] == [
        "李一一", "一下子", "想不起", "她", "是", "谁"]
    bundled_vocab = load_vocab(pipeline.DEFAULT_VOCAB)
    tok = tokenize(text, bundled_vocab, 64)
    labels = align_labels(tok, spans)
    table4_ok &= labels[:6] == [1, 2, 3, 1, 2, 3]  # 李一一 + 一下子 as B,M,E

    elapsed = time.monotonic() - started
    passed = exact == n_sentences and table4_ok and elapsed < 60
    record_criterion(
        5, "labelling round-trip and segmentation fixtures", passed,
        f"{exact}/{n_sentences} sentences exact, fixture "
        f"{'ok' if table4_ok else 'BAD'}, {elapsed:.1f}s")
    assert passed


def test_criterion_6_training_relation(world):
    rows = world.log_rows
    first = rows[0][4]
    last = float(np.mean([r[4] for r in rows[-max(1, len(rows) // 10):]]))
    loss_ok = last <= 0.5 * first

    correct = total = 0
    texts = [r["text"] for r in world.corpus]
    for lo in range(0, len(texts), 32):
        chunk = [world.model.tokenize(t) for t in texts[lo:lo + 32]]
        out, _ = world.model.forward_batch(chunk)
        probs = heads.union_probs(out.L, world.model.params).data
        for row, tok in enumerate(chunk):
            pos = tok.real_token_positions()
            pred = [int(np.argmax(probs[row][p])) for p in pos]
            gold = align_labels(tok, segment(tok.original_text, world.lexicon,
                                             world.rules))
            correct += sum(p == g for p, g in zip(pred, gold))
            total += len(gold)
    bmes_acc = correct / total
    bmes_ok = bmes_acc >= 0.95

    m = world.metrics
    main_hybrid = m["main"]["hybrid"]["ndcg"]
    main_best = max(m["main"]["lexicon"]["ndcg"], m["main"]["dense"]["ndcg"])
    adv_hybrid = m["adv"]["hybrid"]["ndcg"]
    adv_best = max(m["adv"]["lexicon"]["ndcg"], m["adv"]["dense"]["ndcg"])
    retrieval_ok = (main_hybrid >= main_best - 0.01) and (adv_hybrid > adv_best)
    time_ok = world.wall_time < 900

    passed = loss_ok and bmes_ok and retrieval_ok and time_ok
    record_criterion(
        6, "desk-scale training relation (hybrid vs branches)", passed,
        f"loss {first:.2f}->{last:.2f} ({last / first:.0%}), "
        f"BMES acc {bmes_acc:.3f}, main hybrid {main_hybrid:.3f} vs best "
        f"{main_best:.3f}, adv hybrid {adv_hybrid:.3f} vs best {adv_best:.3f}, "
        f"{world.wall_time:.0f}s")
    assert passed


def test_criterion_7_metric_correctness():
    started = time.monotonic()
    run = {"q1": [("other", 2.0), ("rel", 1.0)]}
    metrics = evaluate(run, {"q1": {"rel": 1}}, k=10)
    hand_ok = (abs(metrics["ndcg"] - 0.6309) < 1e-4
               and metrics["mrr"] == pytest.approx(0.5)
               and metrics["recall"] == pytest.approx(1.0)
               and metrics["map"] == pytest.approx(0.5))

    rng = np.random.default_rng(3)
    invariance_ok = True
    for _ in range(100):
        docs = [f"d{i}" for i in range(25)]
        rng.shuffle(docs)
        rel = set(rng.choice(docs, size=int(rng.integers(1, 5)), replace=False))
        qrels = {"q": {d: 1 for d in rel}}

        def run_of(order):
            return {"q": [(d, float(len(order) - i))
                          for i, d in enumerate(order)]}

        base = evaluate(run_of(docs), qrels, k=10)
        tail = docs[10:]
        rng.shuffle(tail)
        invariance_ok &= evaluate(run_of(docs[:10] + tail), qrels, k=10) == base
        invariance_ok &= evaluate(run_of(docs + ["zzz_irrelevant"]),
                                  qrels, k=10) == base
        invariance_ok &= all(0.0 <= base[m] <= 1.0
                             for m in ("ndcg", "recall", "mrr", "map"))
    elapsed = time.monotonic() - started
    passed = hand_ok and invariance_ok and elapsed < 60
    record_criterion(
        7, "metric hand case and prefix invariance", passed,
        f"hand case {'ok' if hand_ok else 'BAD'}, 100 randomized runs "
        f"{'invariant' if invariance_ok else 'BAD'}, {elapsed:.1f}s")
    assert passed


def test_criterion_8_hard_negative_miner(world):
    started = time.monotonic()
    queries = world.queries["main"] + world.queries["adv"]
    qrels = {**world.qrels["main"], **world.qrels["adv"]}
    mined = train_mod.mine_hard_negatives(world.model, world.idx, queries,
                                          qrels, num_negatives=3, seed=0)

    violations = 0
    n_mined = 0
    for record in queries:
        qid = record["id"]
        rep, dense = world.encoded["main" if qid.startswith("qm") else "adv"][qid]
        hits = index_mod.search_hybrid(rep, dense, world.idx, k=100,
                                       k_candidates=1000)
        rank_of = {h.doc_id: r for r, h in enumerate(hits, 1)}
        positives = {d for d, rel in qrels.get(qid, {}).items() if rel > 0}
        for doc in mined[qid]:
            n_mined += 1
            if doc in positives or not 20 <= rank_of.get(doc, -1) <= 100:
                violations += 1
    elapsed = time.monotonic() - started
    passed = violations == 0 and n_mined > 0 and elapsed < 120
    record_criterion(
        8, "mined negatives are non-positive, ranks 20-100", passed,
        f"{n_mined} mined, {violations} violations, {elapsed:.1f}s")
    assert passed


def test_criterion_9_persistence_and_determinism(world, tmp_path):
    reloaded = index_mod.load_index(world.index_dir)
    search_ok = True
    sample = list(world.encoded["main"].items())[:20]
    for qid, (rep, dense) in sample:
        before = index_mod.search_hybrid(rep, dense, world.idx, k=10,
                                         k_candidates=world.idx.doc_count)
        after = index_mod.search_hybrid(rep, dense, reloaded, k=10,
                                        k_candidates=reloaded.doc_count)
        search_ok &= ([(h.doc_id, h.s_lex, h.s_den) for h in before]
                      == [(h.doc_id, h.s_lex, h.s_den) for h in after])

    logs = []
    subset = world.dataset[:40]
    config = TrainConfig(epochs=1, batch_size=8, learning_rate=2e-3, seed=0)
    for i in range(2):
        model = Model(EncoderConfig(vocab_size=world.vocab.size,
                                    **ENCODER_CONFIG), world.vocab)
        path = tmp_path / f"loss{i}.csv"
        train_mod.train(model, subset, config, loss_log_path=str(path))
        logs.append(path.read_bytes())
    determinism_ok = logs[0] == logs[1]

    passed = search_ok and determinism_ok
    record_criterion(
        9, "index round-trip and byte-identical loss logs", passed,
        f"search {'stable' if search_ok else 'CHANGED'}, loss logs "
        f"{'identical' if determinism_ok else 'DIFFER'}")
    assert passed
