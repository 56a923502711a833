import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapens import (
    LabelSet,
    PredictionSet,
    class_accuracy,
    class_accuracy_report,
    gap_at_k,
    gap_from_arrays,
    oracle_matrix,
    top_frequency_classes,
)
from gapens.core import AlignmentError
from gapens.metrics import OracleMatrix

from conftest import random_pair
from reference import class_accuracy_loop, deviation_matrix_loop, gap_bruteforce


def make_pair(scores, dense, name="m"):
    scores = np.asarray(scores, dtype=np.float32)
    ids = tuple(f"e{i}" for i in range(scores.shape[0]))
    return PredictionSet(name, scores, ids), LabelSet.from_dense(np.asarray(dense), ids)


class TestGapAtK:
    def test_perfect_ranking_is_one(self, rng):
        dense = (rng.random((6, 5)) < 0.3).astype(np.uint8)
        # positives strictly above negatives per example
        scores = np.where(dense, 0.8 + 0.01 * rng.random((6, 5)), 0.2 * rng.random((6, 5)))
        p, y = make_pair(scores, dense)
        assert gap_at_k(p, y, 5) == 1.0

    def test_positive_excluded_from_pool(self):
        p, y = make_pair([[0.1, 0.9, 0.8]], [[1, 0, 0]])
        assert gap_at_k(p, y, 2) == 0.0

    def test_matches_bruteforce_on_random_instances(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 6))
            c = int(rng.integers(2, 6))
            k = int(rng.integers(1, c + 1))
            scores = rng.integers(0, 5, (n, c)).astype(np.float32) / 4.0
            dense = (rng.random((n, c)) < 0.4).astype(np.uint8)
            p, y = make_pair(scores, dense)
            assert gap_at_k(p, y, k) == pytest.approx(
                gap_bruteforce(scores, dense, k), abs=1e-12
            )

    def test_spec_example_three_by_four(self, rng):
        scores = rng.random((3, 4)).astype(np.float32)
        dense = (rng.random((3, 4)) < 0.5).astype(np.uint8)
        p, y = make_pair(scores, dense)
        assert gap_at_k(p, y, 2) == pytest.approx(gap_bruteforce(scores, dense, 2), abs=1e-12)

    def test_example_permutation_invariance_exact(self, rng):
        scores = rng.integers(0, 4, (8, 5)).astype(np.float32) / 3.0
        dense = (rng.random((8, 5)) < 0.3).astype(np.uint8)
        p, y = make_pair(scores, dense)
        base = gap_at_k(p, y, 3)
        perm = rng.permutation(8)
        p2, y2 = make_pair(scores[perm], dense[perm])
        assert gap_at_k(p2, y2, 3) == base

    def test_monotone_transform_invariance(self, rng):
        scores = rng.random((6, 7)).astype(np.float32)
        dense = (rng.random((6, 7)) < 0.3).astype(np.uint8)
        p, y = make_pair(scores, dense)
        base = gap_at_k(p, y, 4)
        # halving is exact in binary floating point: order and ties survive
        p2, y2 = make_pair(scores / 2.0, dense)
        assert gap_at_k(p2, y2, 4) == base

    def test_bounds_and_full_k(self, rng):
        for _ in range(20):
            p, y = random_pair(rng, n=5, c=4)
            v = gap_at_k(p, y, 10)
            assert 0.0 <= v <= 1.0

    def test_k_zero_rejected(self, rng):
        p, y = random_pair(rng)
        with pytest.raises(ValueError):
            gap_at_k(p, y, 0)

    def test_misaligned_rejected(self, rng):
        p, _ = random_pair(rng, n=3)
        other = LabelSet.from_dense(np.zeros((3, 5), dtype=np.uint8), ("x", "y", "z"))
        with pytest.raises(AlignmentError):
            gap_at_k(p, other, 2)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_tie_averaging_never_exceeds_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n, c = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        scores = rng.integers(0, 3, (n, c)) / 2.0
        dense = (rng.random((n, c)) < 0.5).astype(np.uint8)
        v = gap_from_arrays(scores, dense, 2)
        assert 0.0 <= v <= 1.0


class TestOracleMatrix:
    def test_exact_copy_all_ones(self, rng):
        dense = (rng.random((4, 5)) < 0.5).astype(np.uint8)
        p, y = make_pair(dense.astype(np.float32), dense)
        assert oracle_matrix(p, y).bits.all()

    def test_inverted_all_zeros(self, rng):
        dense = (rng.random((4, 5)) < 0.5).astype(np.uint8)
        p, y = make_pair(1.0 - dense.astype(np.float32), dense)
        assert not oracle_matrix(p, y).bits.any()

    def test_threshold_boundary_counts_as_positive(self):
        p, y = make_pair([[0.5]], [[1]])
        assert oracle_matrix(p, y, 0.5).bits[0, 0] == 1
        # and a 0.5 score on a negative class is wrong
        p2, y2 = make_pair([[0.5]], [[0]])
        assert oracle_matrix(p2, y2, 0.5).bits[0, 0] == 0


class TestClassAccuracy:
    def test_all_ones(self):
        o = OracleMatrix("m", np.ones((4, 3), dtype=np.uint8))
        assert all(class_accuracy(o, i) == 1.0 for i in range(3))

    def test_three_of_four(self):
        bits = np.zeros((4, 2), dtype=np.uint8)
        bits[:3, 0] = 1
        o = OracleMatrix("m", bits)
        assert class_accuracy(o, 0) == 0.75

    def test_matches_loop(self, rng):
        bits = rng.integers(0, 2, (5, 6)).astype(np.uint8)
        o = OracleMatrix("m", bits)
        for cls in range(6):
            assert class_accuracy(o, cls) == pytest.approx(
                class_accuracy_loop(bits, cls), abs=1e-15
            )

    def test_out_of_range(self):
        o = OracleMatrix("m", np.ones((2, 2), dtype=np.uint8))
        with pytest.raises(IndexError):
            class_accuracy(o, 2)


class TestClassAccuracyReport:
    def test_identical_oracles_zero_deviation(self, rng):
        bits = rng.integers(0, 2, (6, 4)).astype(np.uint8)
        report = class_accuracy_report([OracleMatrix("a", bits), OracleMatrix("b", bits)])
        assert np.allclose(report.deviation, 0.0)
        assert np.allclose(report.deviation_matrix, 0.0)

    def test_constant_deviation_arithmetic(self):
        # accuracy 0.8 vs 0.6 on every class
        n, c = 10, 3
        bits_a = np.zeros((n, c), dtype=np.uint8)
        bits_a[:8] = 1
        bits_b = np.zeros((n, c), dtype=np.uint8)
        bits_b[:6] = 1
        report = class_accuracy_report([OracleMatrix("a", bits_a), OracleMatrix("b", bits_b)])
        assert np.allclose(report.deviation[:, 0], 0.1)
        assert np.allclose(report.deviation[:, 1], -0.1)
        expected = np.array([[0.01, -0.01], [-0.01, 0.01]])
        assert np.allclose(report.deviation_matrix, expected, atol=1e-12)

    def test_matches_double_loop(self, rng):
        oracles = [
            OracleMatrix(f"m{i}", rng.integers(0, 2, (7, 5)).astype(np.uint8)) for i in range(3)
        ]
        report = class_accuracy_report(oracles)
        assert np.allclose(
            report.deviation_matrix, deviation_matrix_loop(report.accuracy), atol=1e-12
        )

    def test_invariants(self, rng):
        oracles = [
            OracleMatrix(f"m{i}", rng.integers(0, 2, (9, 6)).astype(np.uint8)) for i in range(4)
        ]
        report = class_accuracy_report(oracles)
        assert np.allclose(report.deviation.sum(axis=1), 0.0, atol=1e-12)
        assert np.allclose(report.deviation_matrix, report.deviation_matrix.T)
        assert np.all(np.diag(report.deviation_matrix) >= 0.0)

    def test_class_subset_changes_normalizer(self, rng):
        oracles = [
            OracleMatrix(f"m{i}", rng.integers(0, 2, (8, 6)).astype(np.uint8)) for i in range(2)
        ]
        sub = class_accuracy_report(oracles, classes=[0, 1, 2])
        assert sub.accuracy.shape == (3, 2)
        assert np.allclose(
            sub.deviation_matrix, deviation_matrix_loop(sub.accuracy), atol=1e-12
        )

    def test_needs_two_oracles(self, rng):
        o = OracleMatrix("m", rng.integers(0, 2, (3, 3)).astype(np.uint8))
        with pytest.raises(ValueError):
            class_accuracy_report([o])

    def test_dim_mismatch(self, rng):
        a = OracleMatrix("a", rng.integers(0, 2, (3, 3)).astype(np.uint8))
        b = OracleMatrix("b", rng.integers(0, 2, (3, 4)).astype(np.uint8))
        with pytest.raises(AlignmentError):
            class_accuracy_report([a, b])


class TestTopFrequencyClasses:
    def test_most_frequent_first(self):
        dense = np.array([[0, 0, 1], [0, 1, 1], [0, 0, 1]], dtype=np.uint8)
        y = LabelSet.from_dense(dense)
        assert top_frequency_classes(y, 3).tolist() == [2, 1, 0]

    def test_full_list_is_permutation(self, rng):
        _, y = random_pair(rng, n=10, c=7)
        assert sorted(top_frequency_classes(y, 7).tolist()) == list(range(7))

    def test_tie_breaks_by_index(self):
        dense = np.zeros((4, 9), dtype=np.uint8)
        dense[:2, 4] = 1
        dense[2:, 7] = 1
        y = LabelSet.from_dense(dense)
        top = top_frequency_classes(y, 2).tolist()
        assert top == [4, 7]
