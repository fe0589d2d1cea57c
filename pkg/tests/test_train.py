import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyret import train as train_mod
from hyret.autodiff import Tensor
from hyret.heads import SparseRepresentation
from hyret.index import build_index
from hyret.train import (AlignError, TrainConfig, TrainingExample,
                         contrastive_loss, mine_hard_negatives, total_loss,
                         union_loss, union_loss_from_log_probs, write_loss_log)

from conftest import make_tiny_model


class TestTrainConfig:
    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            TrainConfig(temperature=0.0)

    def test_batch_size_floor(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)

    def test_positive_not_allowed_in_negatives(self):
        with pytest.raises(ValueError):
            TrainingExample("q", "p", ["x", "p"])


class TestContrastiveLoss:
    def test_uniform_scores_give_log_n(self):
        for n in (2, 4, 9):
            loss = contrastive_loss(0.5, [0.5] * (n - 1), temperature=0.05)
            assert loss.item() == pytest.approx(math.log(n), abs=1e-12)

    def test_separated_scores_near_zero(self):
        loss = contrastive_loss(1.0, [0.0], temperature=0.05)
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-20)),
                                            abs=1e-15)

    def test_hand_computed_value(self):
        # ln(1 + e^{-2} + e^{-4}), worked out by hand from the stable form
        loss = contrastive_loss(0.2, [0.1, 0.0], temperature=0.05)
        assert loss.item() == pytest.approx(0.1429312, abs=1e-6)

    def test_empty_negatives_warn_and_return_zero(self):
        with pytest.warns(UserWarning):
            loss = contrastive_loss(0.7, [], temperature=0.05)
        assert loss.item() == 0.0

    def test_extreme_scores_stay_finite(self):
        for pos in (-1.0, 2.0):
            loss = contrastive_loss(pos, [-1.0, 2.0, 0.3], temperature=0.05)
            assert math.isfinite(loss.item())
            assert loss.item() >= 0.0

    def test_shift_invariance(self):
        base = contrastive_loss(0.4, [0.1, -0.2], temperature=0.05).item()
        shifted = contrastive_loss(100.4, [100.1, 99.8], temperature=0.05).item()
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_gradient_flows_to_scores(self):
        pos = Tensor(0.3, requires_grad=True)
        neg = Tensor(0.2, requires_grad=True)
        loss = contrastive_loss(pos, [neg], temperature=0.1)
        loss.backward()
        assert pos.grad < 0.0  # raising the positive score lowers the loss
        assert neg.grad > 0.0

    @given(st.floats(-1, 1), st.lists(st.floats(-1, 1), min_size=1, max_size=6),
           st.floats(0.01, 1.0))
    def test_always_non_negative(self, pos, negs, tau):
        assert contrastive_loss(pos, negs, tau).item() >= 0.0


class TestUnionLoss:
    def test_one_hot_correct_is_zero(self):
        probs = np.eye(4)[[1, 3, 0]]
        assert union_loss(probs, [1, 3, 0]).item() == pytest.approx(0.0)

    def test_uniform_is_log4(self):
        probs = np.full((5, 4), 0.25)
        assert union_loss(probs, [0, 1, 2, 3, 0]).item() == pytest.approx(
            math.log(4), abs=1e-12)

    def test_hand_computed_value(self):
        probs = np.array([[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1]])
        loss = union_loss(probs, [0, 2])  # picked probs 0.7 and 0.1
        assert loss.item() == pytest.approx(-(math.log(0.7) + math.log(0.1)) / 2,
                                            abs=1e-12)
        assert loss.item() == pytest.approx(1.3297, abs=1e-4)

    def test_length_mismatch_rejected(self):
        with pytest.raises(AlignError):
            union_loss(np.full((3, 4), 0.25), [0, 1])
        with pytest.raises(AlignError):
            union_loss_from_log_probs(Tensor(np.zeros((3, 4))), [0])

    def test_log_prob_variant_agrees(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(4), size=6)
        labels = rng.integers(0, 4, size=6)
        a = union_loss(probs, labels).item()
        b = union_loss_from_log_probs(Tensor(np.log(probs)), labels).item()
        assert a == pytest.approx(b, abs=1e-12)


def labelled_example(model, query, positive, negatives):
    ex = TrainingExample(query, positive, negatives)
    ex.query_labels = [0] * len(model.tokenize(query).real_token_positions())
    ex.passage_labels = [
        [0] * len(model.tokenize(t).real_token_positions())
        for t in [positive] + negatives]
    return ex


def tiny_batch(model, n=2):
    chars = [chr(0x4E00 + i) for i in range(20)]
    rng = np.random.default_rng(3)

    def text(k):
        return "".join(chars[i] for i in rng.integers(0, 20, size=k))

    return [labelled_example(model, text(3), text(4), [text(4), text(3)])
            for _ in range(n)]


class TestTotalLoss:
    def test_parts_sum_with_weights(self):
        model = make_tiny_model()
        batch = tiny_batch(model)
        config = TrainConfig(temperature=0.5, weight_lex=2.0, weight_den=0.5,
                             weight_union=3.0)
        loss, parts = total_loss(model, batch, config)
        expected = (2.0 * parts["loss_lex"] + 0.5 * parts["loss_den"]
                    + 3.0 * parts["loss_union"])
        assert loss.item() == pytest.approx(expected, abs=1e-12)
        assert parts["total"] == pytest.approx(loss.item())

    def test_union_term_invariant_under_batch_duplication(self):
        model = make_tiny_model()
        batch = tiny_batch(model)
        config = TrainConfig(temperature=0.5)
        _, parts_once = total_loss(model, batch, config)
        _, parts_twice = total_loss(model, batch + batch, config)
        assert parts_twice["loss_union"] == pytest.approx(
            parts_once["loss_union"], abs=1e-12)


class TestTrainLoop:
    def test_zero_lr_leaves_params_unchanged(self):
        model = make_tiny_model()
        before = {k: p.data.copy() for k, p in model.params.items()}
        config = TrainConfig(learning_rate=0.0, epochs=1, batch_size=2,
                             temperature=0.5, weight_decay=0.0)
        train_mod.train(model, tiny_batch(model, 4), config)
        for name, p in model.params.items():
            np.testing.assert_array_equal(p.data, before[name])

    def test_fixed_seed_reruns_identical(self, tmp_path):
        config = TrainConfig(epochs=2, batch_size=2, temperature=0.5,
                             learning_rate=1e-3, seed=11)
        logs = []
        for run in range(2):
            model = make_tiny_model(seed=5)
            rows = train_mod.train(model, tiny_batch(model, 4), config)
            path = tmp_path / f"loss{run}.csv"
            write_loss_log(path, rows)
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_mod.train(make_tiny_model(), [], TrainConfig(temperature=0.5))

    def test_warmup_then_constant_lr(self):
        model = make_tiny_model()
        config = TrainConfig(learning_rate=0.01, warmup_ratio=0.5)
        opt = train_mod.Adam(model.params, config, total_steps=10)
        lrs = []
        for _ in range(10):
            opt.step_count += 1
            lrs.append(opt.lr())
            opt.step_count -= 1
            opt.step()
        assert lrs[:5] == pytest.approx([0.002, 0.004, 0.006, 0.008, 0.01])
        assert lrs[5:] == pytest.approx([0.01] * 5)


class StubModel:
    """encode_one backed by a fixed text -> (sparse, dense) table."""

    def __init__(self, table):
        self.table = table

    def encode_one(self, text):
        return self.table[text]


def ranked_index(tmp_path, n_docs):
    """Docs whose hybrid score strictly decreases with ordinal: rank = i+1."""
    e0 = np.zeros(8, dtype=np.float32)
    e0[0] = 1.0
    docs = [(f"d{i:03d}", SparseRepresentation({1: 1.0 - i * 0.005}), e0)
            for i in range(n_docs)]
    idx = build_index(docs, tmp_path, 8)
    e1 = np.zeros(8)
    e1[1] = 1.0  # orthogonal to every doc: ranking is lexicon-driven
    model = StubModel({"q": (SparseRepresentation({1: 1.0}), e1)})
    return model, idx


class TestMineHardNegatives:
    def test_small_corpus_empty_window(self, tmp_path):
        model, idx = ranked_index(tmp_path, 10)
        mined = mine_hard_negatives(model, idx, [{"id": "q1", "text": "q"}],
                                    {"q1": {"d000": 1}})
        assert mined == {"q1": []}

    def test_all_window_positive_gives_empty(self, tmp_path):
        model, idx = ranked_index(tmp_path, 30)
        qrels = {"q1": {f"d{i:03d}": 1 for i in range(30)}}
        mined = mine_hard_negatives(model, idx, [{"id": "q1", "text": "q"}], qrels)
        assert mined == {"q1": []}

    def test_window_bounds_and_positive_filter(self, tmp_path):
        model, idx = ranked_index(tmp_path, 150)
        qrels = {"q1": {"d004": 1, "d024": 1}}  # ranks 5 and 25
        mined = mine_hard_negatives(model, idx, [{"id": "q1", "text": "q"}],
                                    qrels, num_negatives=1000)
        got = set(mined["q1"])
        # everything from ranks 20..100 except the positive at rank 25
        expected = {f"d{i:03d}" for i in range(19, 100)} - {"d024"}
        assert got == expected
        assert "d004" not in got   # rank-5 non-window doc is ineligible
        assert "d024" not in got   # positives never mined

    def test_sampling_is_seeded(self, tmp_path):
        model, idx = ranked_index(tmp_path, 150)
        queries = [{"id": "q1", "text": "q"}]
        a = mine_hard_negatives(model, idx, queries, {}, num_negatives=3, seed=4)
        b = mine_hard_negatives(model, idx, queries, {}, num_negatives=3, seed=4)
        c = mine_hard_negatives(model, idx, queries, {}, num_negatives=3, seed=5)
        assert a == b
        assert len(a["q1"]) == 3
        assert a != c  # different seed, different sample (w.h.p.)
