import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapens import (
    FormatError,
    LabelSet,
    PredictionSet,
    require_aligned,
    select_rows,
    split_examples,
)
from gapens.core import AlignmentError

from conftest import random_pair


class TestPredictionSet:
    def test_basic_invariants(self, rng):
        p, _ = random_pair(rng)
        assert p.n_examples == 6
        assert p.n_classes == 5
        assert p.scores.dtype == np.float32
        with pytest.raises(ValueError):
            p.scores[0, 0] = 2.0  # read-only

    def test_rejects_nonfinite(self):
        scores = np.array([[0.1, np.nan]], dtype=np.float32)
        with pytest.raises(FormatError):
            PredictionSet("m", scores, ("a",))

    def test_rejects_duplicate_ids(self):
        with pytest.raises(FormatError):
            PredictionSet("m", np.zeros((2, 1), dtype=np.float32), ("a", "a"))

    def test_rejects_id_count_mismatch(self):
        with pytest.raises(FormatError):
            PredictionSet("m", np.zeros((2, 1), dtype=np.float32), ("a",))


class TestLabelSet:
    def test_out_of_range_class(self):
        with pytest.raises(FormatError):
            LabelSet(3, (np.array([3]),), ("a",))

    def test_unsorted_positives(self):
        with pytest.raises(FormatError):
            LabelSet(5, (np.array([3, 1]),), ("a",))

    def test_empty_positives_allowed(self):
        ls = LabelSet(5, (np.array([], dtype=np.int32),), ("a",))
        assert ls.dense.sum() == 0

    def test_dense_and_counts(self):
        ls = LabelSet(4, (np.array([0, 2]), np.array([2])), ("a", "b"))
        assert ls.dense.tolist() == [[1, 0, 1, 0], [0, 0, 1, 0]]
        assert ls.positive_counts.tolist() == [1, 0, 2, 0]

    def test_from_dense_roundtrip(self, rng):
        dense = (rng.random((7, 9)) < 0.4).astype(np.uint8)
        ls = LabelSet.from_dense(dense)
        assert np.array_equal(ls.dense, dense)


class TestSplitExamples:
    def test_cardinality_and_disjoint(self):
        split = split_examples(10, seed=7, fraction=0.5)
        assert split.part_a.size == 5
        assert split.part_b.size == 5
        assert np.intersect1d(split.part_a, split.part_b).size == 0

    def test_deterministic(self):
        a = split_examples(100, seed=3, fraction=0.25)
        b = split_examples(100, seed=3, fraction=0.25)
        assert np.array_equal(a.part_a, b.part_a)
        assert np.array_equal(a.part_b, b.part_b)

    def test_round_half_up(self):
        assert split_examples(3, seed=0, fraction=0.5).part_a.size == 2

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            split_examples(10, seed=0, fraction=0.0)
        with pytest.raises(ValueError):
            split_examples(10, seed=0, fraction=1.0)

    @given(
        n=st.integers(1, 300),
        seed=st.integers(0, 2**32),
        fraction=st.floats(0.01, 0.99),
    )
    @settings(max_examples=50, deadline=None)
    def test_partition_property(self, n, seed, fraction):
        split = split_examples(n, seed, fraction)
        merged = np.concatenate([split.part_a, split.part_b])
        assert np.array_equal(np.sort(merged), np.arange(n))
        assert np.all(np.diff(split.part_a) > 0) if split.part_a.size > 1 else True


class TestSelectRows:
    def test_identity_empty_single(self, rng):
        p, y = random_pair(rng, n=3)
        assert np.array_equal(select_rows(p, [0, 1, 2]).scores, p.scores)
        assert select_rows(p, []).n_examples == 0
        one = select_rows(p, [1])
        assert np.array_equal(one.scores[0], p.scores[1])
        assert one.example_ids == (p.example_ids[1],)

    def test_out_of_range(self, rng):
        p, _ = random_pair(rng, n=3)
        with pytest.raises(IndexError):
            select_rows(p, [3])

    def test_unsorted_rejected(self, rng):
        p, _ = random_pair(rng, n=3)
        with pytest.raises(ValueError):
            select_rows(p, [2, 0])

    def test_alignment_commutes(self, rng):
        p, y = random_pair(rng, n=8)
        idx = [1, 3, 4]
        require_aligned(select_rows(p, idx), select_rows(y, idx))


class TestAlignment:
    def test_misaligned_ids(self, rng):
        p, _ = random_pair(rng, n=3)
        q = PredictionSet("q", p.scores, ("x", "y", "z"))
        with pytest.raises(AlignmentError):
            require_aligned(p, q)

    def test_class_count_mismatch(self, rng):
        p, _ = random_pair(rng, n=3, c=4)
        q, _ = random_pair(rng, n=3, c=5)
        with pytest.raises(AlignmentError):
            require_aligned(p, q)
