"""Accuracy matrix bookkeeping and the last accuracy / last forgetting metrics."""

from fractions import Fraction

import numpy as np
import pytest

from fedreplay.metrics import (
    AccuracyMatrix,
    avg_last_accuracy,
    avg_last_forgetting,
    client_forgetting,
    evaluate_model,
)
from fedreplay.model import ModelConfig, ParameterVector, init_parameters, layout_of


def _matrix(num_tasks, entries):
    m = AccuracyMatrix(num_tasks)
    for (t, i), acc in entries.items():
        m.record(t, i, acc)
    return m


class TestAccuracyMatrix:
    def test_store_and_read(self):
        m = AccuracyMatrix(2)
        m.record(1, 1, 0.8)
        assert m.get(1, 1) == 0.8

    def test_triangularity_enforced(self):
        m = AccuracyMatrix(2)
        with pytest.raises(ValueError):
            m.record(1, 2, 0.5)

    def test_write_once(self):
        m = AccuracyMatrix(2)
        m.record(1, 1, 0.8)
        with pytest.raises(ValueError):
            m.record(1, 1, 0.9)

    def test_range_checks(self):
        m = AccuracyMatrix(2)
        with pytest.raises(ValueError):
            m.record(3, 1, 0.5)
        with pytest.raises(ValueError):
            m.record(1, 1, 1.5)


class TestAverageLastAccuracy:
    def test_single_client(self):
        m = _matrix(2, {(1, 1): 0.8, (2, 1): 0.6, (2, 2): 0.9})
        assert avg_last_accuracy([m], 2) == pytest.approx(0.75, abs=1e-15)

    def test_constant_matrix(self):
        entries = {(t, i): 0.5 for t in range(1, 4) for i in range(1, t + 1)}
        m = _matrix(3, entries)
        assert avg_last_accuracy([m], 3) == pytest.approx(0.5, abs=1e-15)

    def test_client_mean(self):
        m1 = _matrix(2, {(2, 1): 0.2, (2, 2): 0.2})
        m2 = _matrix(2, {(2, 1): 0.6, (2, 2): 0.6})
        assert avg_last_accuracy([m1, m2], 2) == pytest.approx(0.4, abs=1e-15)

    def test_missing_entries_rejected(self):
        m = _matrix(2, {(2, 1): 0.5})
        with pytest.raises(ValueError):
            avg_last_accuracy([m], 2)


class TestAverageLastForgetting:
    def test_single_client_example(self):
        m = _matrix(2, {(1, 1): 0.8, (2, 1): 0.6, (2, 2): 0.9})
        assert avg_last_forgetting([m], 2) == pytest.approx(0.2, abs=1e-15)

    def test_no_degradation_gives_zero(self):
        m = _matrix(
            3,
            {
                (1, 1): 0.5,
                (2, 1): 0.6,
                (2, 2): 0.7,
                (3, 1): 0.6,
                (3, 2): 0.7,
                (3, 3): 0.9,
            },
        )
        assert avg_last_forgetting([m], 3) == pytest.approx(0.0, abs=1e-15)

    def test_client_mean(self):
        m1 = _matrix(2, {(1, 1): 0.5, (2, 1): 0.4, (2, 2): 0.9})  # F = 0.1
        m2 = _matrix(2, {(1, 1): 0.8, (2, 1): 0.5, (2, 2): 0.9})  # F = 0.3
        assert avg_last_forgetting([m1, m2], 2) == pytest.approx(0.2, abs=1e-15)

    def test_negative_forgetting_not_clamped(self):
        m = _matrix(2, {(1, 1): 0.5, (2, 1): 0.8, (2, 2): 0.9})
        assert avg_last_forgetting([m], 2) == pytest.approx(-0.3, abs=1e-15)

    def test_single_task_rejected(self):
        m = _matrix(1, {(1, 1): 0.5})
        with pytest.raises(ValueError):
            avg_last_forgetting([m], 1)

    def test_peak_in_training_row_implies_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            num_tasks = int(rng.integers(2, 6))
            m = AccuracyMatrix(num_tasks)
            for t in range(1, num_tasks + 1):
                for i in range(1, t + 1):
                    if i == t:
                        m.record(t, i, 1.0)  # accuracy peaks while training the task
                    else:
                        m.record(t, i, float(rng.uniform(0.0, 1.0)))
            assert client_forgetting(m, num_tasks) >= 0.0

    def test_client_order_invariance_bitwise(self):
        rng = np.random.default_rng(4)
        mats = []
        for _ in range(5):
            m = AccuracyMatrix(3)
            for t in range(1, 4):
                for i in range(1, t + 1):
                    m.record(t, i, float(rng.uniform()))
            mats.append(m)
        base_a = avg_last_accuracy(mats, 3)
        base_f = avg_last_forgetting(mats, 3)
        for _ in range(10):
            perm = [mats[i] for i in rng.permutation(5)]
            assert avg_last_accuracy(perm, 3) == base_a
            assert avg_last_forgetting(perm, 3) == base_f


class TestHandComputedOracle:
    """Two clients, three tasks, rational entries checked against manual arithmetic."""

    def test_matches_manual_computation(self):
        c1 = _matrix(
            3,
            {
                (1, 1): 0.8,
                (2, 1): 0.6,
                (2, 2): 0.9,
                (3, 1): 0.5,
                (3, 2): 0.7,
                (3, 3): 1.0,
            },
        )
        c2 = _matrix(
            3,
            {
                (1, 1): 0.6,
                (2, 1): 0.7,  # backward transfer on task 1
                (2, 2): 0.8,
                (3, 1): 0.4,
                (3, 2): 0.9,
                (3, 3): 0.5,
            },
        )
        # A_1 = (1/2 + 7/10 + 1) / 3 = 11/15, A_2 = (2/5 + 9/10 + 1/2) / 3 = 3/5
        a_expected = Fraction(1, 2) * (Fraction(11, 15) + Fraction(3, 5))
        # F_1 = ((8/10 - 5/10) + (9/10 - 7/10)) / 2 = 1/4
        # F_2 = ((7/10 - 4/10) + (8/10 - 9/10)) / 2 = 1/10
        f_expected = Fraction(1, 2) * (Fraction(1, 4) + Fraction(1, 10))
        assert avg_last_accuracy([c1, c2], 3) == pytest.approx(float(a_expected), abs=1e-12)
        assert avg_last_forgetting([c1, c2], 3) == pytest.approx(float(f_expected), abs=1e-12)
        assert float(a_expected) == pytest.approx(2 / 3, abs=1e-15)
        assert float(f_expected) == pytest.approx(0.175, abs=1e-15)


class TestEvaluateModel:
    def test_zero_weight_model_on_balanced_binary_set(self):
        config = ModelConfig(input_dim=2, hidden_dims=(3,), num_classes=2)
        layout = layout_of(config)
        size = sum(int(np.prod(shape)) for shape, _ in layout)
        params = ParameterVector(np.zeros(size), layout)
        feats = np.random.default_rng(0).normal(size=(10, 2))
        labels = np.array([0, 1] * 5)
        # all-zero logits tie; argmax resolves to class 0, which is half right
        (acc,) = evaluate_model(params, config, [(feats, labels)])
        assert acc == 0.5

    def test_separable_toy_set_reaches_one(self):
        config = ModelConfig(input_dim=2, hidden_dims=(), num_classes=2)
        # linear model w = [[1, -1], [0, 0]]^T: logit 0 - logit 1 = 2 * x0
        params = ParameterVector(np.array([1.0, -1.0, 0.0, 0.0, 0.0, 0.0]), layout_of(config))
        feats = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [-3.0, 0.0]])
        labels = np.array([0, 0, 1, 1])
        (acc,) = evaluate_model(params, config, [(feats, labels)])
        assert acc == 1.0

    def test_deterministic(self):
        config = ModelConfig(input_dim=3, hidden_dims=(4,), num_classes=3, init_seed=5)
        params = init_parameters(config)
        feats = np.random.default_rng(1).normal(size=(20, 3))
        labels = np.random.default_rng(2).integers(0, 3, size=20)
        a = evaluate_model(params, config, [(feats, labels)])
        b = evaluate_model(params, config, [(feats, labels)])
        assert a == b

    def test_empty_test_set_rejected(self):
        config = ModelConfig(input_dim=2, hidden_dims=(3,), num_classes=2, init_seed=1)
        params = init_parameters(config)
        with pytest.raises(ValueError):
            evaluate_model(params, config, [(np.zeros((0, 2)), np.zeros(0, dtype=int))])
