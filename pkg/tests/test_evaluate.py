"""Retrieval metrics against hand cases and a naive reference ranker."""

import numpy as np
import pytest

from graphreid.evaluate import (evaluate, evaluate_scores, format_report,
                                rank_gallery, similarity_scores,
                                split_query_gallery)


def naive_metrics(scores, q_ids, q_cams, g_ids, g_cams, max_rank):
    """Reference implementation: explicit sort keys, no vectorization."""
    cmc = [0] * max_rank
    aps = []
    skipped = 0
    for qi in range(len(q_ids)):
        order = []
        for gi in range(len(g_ids)):
            if g_ids[gi] == q_ids[qi] and g_cams[gi] == q_cams[qi]:
                continue
            order.append((-float(scores[qi][gi]), gi))
        order.sort()
        flags = [g_ids[gi] == q_ids[qi] for _, gi in order]
        if not any(flags):
            skipped += 1
            continue
        first = flags.index(True)
        for r in range(first, max_rank):
            cmc[r] += 1
        hits = 0
        total = 0.0
        for pos, flag in enumerate(flags):
            if flag:
                hits += 1
                total += hits / (pos + 1)
        aps.append(total / hits)
    evaluated = len(q_ids) - skipped
    ap_sum = 0.0
    for ap in aps:
        ap_sum += ap
    return ([c / evaluated for c in cmc], ap_sum / evaluated, skipped)


class TestSimilarity:
    def test_cosine_ignores_scale(self):
        q = np.array([[2.0, 0.0]])
        g = np.array([[5.0, 0.0], [0.0, 1.0], [-3.0, 0.0]])
        s = similarity_scores(q, g, "cosine")
        np.testing.assert_allclose(s, [[1.0, 0.0, -1.0]], atol=1e-12)

    def test_euclidean_is_negative_distance(self):
        q = np.array([[0.0, 0.0]])
        g = np.array([[3.0, 4.0], [0.0, 0.0]])
        s = similarity_scores(q, g, "euclidean")
        np.testing.assert_allclose(s, [[-5.0, 0.0]], atol=1e-12)

    def test_zero_vector_stays_finite(self):
        s = similarity_scores(np.zeros((1, 3)), np.ones((2, 3)), "cosine")
        assert np.isfinite(s).all()

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError):
            similarity_scores(np.ones((1, 2)), np.ones((1, 2)), "hamming")


class TestRanking:
    def test_ties_break_by_gallery_index(self):
        scores = np.array([0.5, 0.5, 0.5, 0.9])
        order = rank_gallery(scores, np.array([True, True, True, True]))
        np.testing.assert_array_equal(order, [3, 0, 1, 2])

    def test_invalid_entries_never_appear(self):
        scores = np.array([0.9, 0.1])
        order = rank_gallery(scores, np.array([False, True]))
        np.testing.assert_array_equal(order, [1])


class TestHandCases:
    def test_single_positive_at_rank_two(self):
        scores = np.array([[0.9, 0.5]])     # gallery 0 wrong, 1 right
        res = evaluate_scores(scores, [7], [0], [3, 7], [1, 1], max_rank=2)
        np.testing.assert_array_equal(res["cmc"], [0.0, 1.0])
        assert res["mAP"] == 0.5
        assert res["skipped"] == 0

    def test_twin_in_gallery_is_perfect(self):
        res = evaluate(np.array([[1.0, 0.0]]), [5], [0],
                       np.array([[1.0, 0.0], [0.0, 1.0]]), [5, 2], [1, 1],
                       metric="cosine", max_rank=2)
        np.testing.assert_array_equal(res["cmc"], [1.0, 1.0])
        assert res["mAP"] == 1.0

    def test_same_camera_positives_are_hidden(self):
        # the best-scoring entry shares id and camera with the query, so
        # only the two cross-camera entries are ranked
        scores = np.array([[0.99, 0.5, 0.7]])
        res = evaluate_scores(scores, [0], [0], [0, 0, 1], [0, 1, 1],
                              max_rank=2)
        np.testing.assert_array_equal(res["cmc"], [0.0, 1.0])
        assert res["mAP"] == 0.5

    def test_query_without_cross_camera_positive_is_skipped(self):
        scores = np.array([[0.9, 0.8], [0.9, 0.8]])
        # query 0: only positive shares its camera -> skipped; query 1
        # keeps both entries and its positive lands at rank 2
        res = evaluate_scores(scores, [0, 1], [0, 0], [0, 1], [0, 1],
                              max_rank=2)
        assert res["skipped"] == 1
        np.testing.assert_array_equal(res["cmc"], [0.0, 1.0])
        assert res["mAP"] == 0.5

    def test_all_queries_skipped_raises(self):
        scores = np.array([[0.5]])
        with pytest.raises(ValueError):
            evaluate_scores(scores, [0], [0], [0], [0], max_rank=1)

    def test_two_positives_interleaved(self):
        # positives land at ranks 1 and 3: AP = (1/1 + 2/3) / 2
        scores = np.array([[0.9, 0.5, 0.7]])
        res = evaluate_scores(scores, [4], [0], [4, 4, 8], [1, 2, 1],
                              max_rank=3)
        np.testing.assert_allclose(res["mAP"], (1.0 + 2.0 / 3.0) / 2.0)
        np.testing.assert_array_equal(res["cmc"], [1.0, 1.0, 1.0])

    def test_max_rank_clipped_to_gallery_size(self):
        scores = np.array([[0.9, 0.5]])
        res = evaluate_scores(scores, [0], [0], [0, 1], [1, 1], max_rank=50)
        assert res["cmc"].shape == (2,)


class TestAgainstNaiveReference:
    def test_random_instances_match_exactly(self):
        rng = np.random.default_rng(2024)
        checked = 0
        attempts = 0
        while checked < 100:
            attempts += 1
            assert attempts < 1000
            num_ids = int(rng.integers(2, 8))
            num_cams = int(rng.integers(2, 4))
            g = int(rng.integers(4, 51))
            q = int(rng.integers(1, 20))
            g_ids = rng.integers(0, num_ids, size=g)
            g_cams = rng.integers(0, num_cams, size=g)
            q_ids = rng.integers(0, num_ids, size=q)
            q_cams = rng.integers(0, num_cams, size=q)
            # quantized scores force plenty of ties
            scores = np.round(rng.random((q, g)), 1)
            max_rank = int(rng.integers(1, g + 1))

            def has_positive(qi):
                return bool((((g_ids == q_ids[qi]) & (g_cams != q_cams[qi]))
                             ).any())
            if not any(has_positive(i) for i in range(q)):
                continue
            res = evaluate_scores(scores, q_ids, q_cams, g_ids, g_cams,
                                  max_rank=max_rank)
            cmc, map_ref, skipped = naive_metrics(
                scores, q_ids, q_cams, g_ids, g_cams, max_rank)
            assert res["skipped"] == skipped
            np.testing.assert_array_equal(res["cmc"], np.array(cmc))
            assert res["mAP"] == map_ref
            checked += 1


class TestSplitAndReport:
    def test_split_marks_camera_zero_queries(self):
        class Stub:
            cameras = np.array([0, 1, 0, 1, 2])

            def __len__(self):
                return 5

        q_idx, g_idx = split_query_gallery(Stub())
        np.testing.assert_array_equal(q_idx, [0, 2])
        np.testing.assert_array_equal(g_idx, np.arange(5))

    def test_report_lines(self):
        result = {"cmc": np.array([0.5, 0.75, 0.75, 0.75, 1.0]),
                  "mAP": 0.625, "skipped": 2}
        text = format_report(result, "cosine", max_rank=5)
        assert "Rank-1: 0.5000" in text
        assert "Rank-5: 1.0000" in text
        assert "mAP: 0.6250" in text
        assert "2 queries skipped" in text
