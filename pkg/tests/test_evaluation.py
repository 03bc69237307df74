import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idus.evaluation import (
    ConfusionMatrix,
    best_assignment,
    confusion,
    evaluate,
    exhaustive_assignment,
    format_report,
    lsa_assignment,
    metrics,
    read_matrix,
    relabel_prediction,
    render_report,
)
from idus.imagery import UNLABELED


class TestConfusion:
    def test_counts(self):
        truth = np.array([[0, 0, 1], [1, UNLABELED, 1]])
        pred = np.array([[0, 1, 1], [0, 0, 1]])
        cm = confusion(pred, truth, 2)
        np.testing.assert_array_equal(cm.counts, [[1, 1], [1, 2]])
        assert cm.total == 5

    def test_accumulates_images(self):
        a = confusion([np.zeros((2, 2), int)] * 3, [np.zeros((2, 2), int)] * 3, 2)
        assert a.counts[0, 0] == 12

    def test_extra_cluster_rejected(self):
        with pytest.raises(ValueError):
            confusion(np.array([[0, 2]]), np.array([[0, 1]]), 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 2), int), np.zeros((2, 3), int), 2)


class TestAssignment:
    def test_two_by_two(self):
        cm = ConfusionMatrix(np.array([[3, 1], [2, 4]]))
        perm, assigned = best_assignment(cm)
        np.testing.assert_array_equal(perm, [0, 1])
        m = metrics(assigned)
        assert m["overall_accuracy"] == pytest.approx(0.7)
        np.testing.assert_allclose(m["per_class_accuracy"], [0.75, 2 / 3])
        assert m["mean_class_accuracy"] == pytest.approx((0.75 + 2 / 3) / 2)

    def test_anti_diagonal(self):
        cm = ConfusionMatrix(np.array([[0, 0, 5], [0, 4, 0], [3, 0, 0]]))
        perm, assigned = best_assignment(cm)
        np.testing.assert_array_equal(perm, [2, 1, 0])
        assert metrics(assigned)["overall_accuracy"] == 1.0

    def test_ties_prefer_lexicographic(self):
        perm, _ = exhaustive_assignment(np.ones((3, 3)))
        np.testing.assert_array_equal(perm, [0, 1, 2])

    def test_exhaustive_matches_enumeration(self):
        score = np.random.default_rng(0).random((5, 5))
        best = max(sum(score[i, p[i]] for i in range(5)) for p in itertools.permutations(range(5)))
        assert exhaustive_assignment(score)[1] == pytest.approx(best)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_exhaustive_agrees_with_lsa(self, seed):
        score = np.random.default_rng(seed).random((6, 6))
        p1, v1 = exhaustive_assignment(score)
        p2, v2 = lsa_assignment(score)
        assert v1 == pytest.approx(v2, rel=1e-12)

    def test_large_uses_lsa(self):
        score = np.eye(10)[:, ::-1]
        perm, _ = best_assignment(score)
        np.testing.assert_array_equal(perm, np.arange(10)[::-1])

    def test_counts_vs_proportions(self):
        # raw counts favour the large class, row proportions weigh classes equally
        counts = np.array([[100, 90], [2, 0]])
        p_counts, _ = best_assignment(ConfusionMatrix(counts), use_counts=True)
        p_rows, _ = best_assignment(ConfusionMatrix(counts))
        np.testing.assert_array_equal(p_counts, [0, 1])
        np.testing.assert_array_equal(p_rows, [1, 0])


class TestRelabel:
    def test_relabel_recovers_truth(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 4, size=(6, 6))
        perm = np.array([2, 0, 3, 1])
        pred = perm[truth]
        cm, summary = evaluate([pred], [truth], 4)
        assert summary["mean_class_accuracy"] == 1.0
        np.testing.assert_array_equal(relabel_prediction(pred, cm.permutation), truth)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_cluster_renaming_invariance(self, seed):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, 3, size=(8, 8))
        pred = rng.integers(0, 3, size=(8, 8))
        rename = rng.permutation(3)
        _, a = evaluate([pred], [truth], 3)
        _, b = evaluate([rename[pred]], [truth], 3)
        assert a["mean_class_accuracy"] == pytest.approx(b["mean_class_accuracy"], rel=1e-12)


class TestMetrics:
    def test_empty_class_excluded_from_mean(self):
        cm = ConfusionMatrix(np.array([[5, 0, 0], [0, 0, 0], [1, 0, 3]]))
        m = metrics(cm)
        assert m["mean_class_accuracy"] == pytest.approx((1.0 + 0.75) / 2)

    def test_no_pixels(self):
        with pytest.raises(ValueError):
            metrics(ConfusionMatrix(np.zeros((2, 2))))


class TestReport:
    def test_roundtrip(self, tmp_path):
        cm, summary = evaluate([np.array([[0, 1, 1, 0]])], [np.array([[0, 1, 1, 1]])], 2, ["sand", "rock"])
        txt, mat = render_report(cm, summary, tmp_path / "confusion")
        assert txt.name == "confusion.txt" and mat.name == "confusion.matrix"
        np.testing.assert_allclose(read_matrix(mat), np.round(cm.row_normalized, 3))
        text = txt.read_text()
        assert "sand" in text and "mean_class_accuracy" in text

    def test_empty_row_marker(self):
        cm = ConfusionMatrix(np.array([[2, 0], [0, 0]]), ["a", "b"])
        assert "* class absent" in format_report(cm, metrics(cm))
