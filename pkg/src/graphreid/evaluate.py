"""Retrieval evaluation: CMC curve and mean average precision.

Protocol: for each query, gallery entries sharing both the query's
identity and camera are excluded (the query itself included). The rest
are ranked by similarity, descending, with ties broken by gallery index.
CMC@r counts queries whose first correct match lands in the top r; AP
averages precision at each positive's rank. Queries with no valid
positive in the gallery are skipped and counted.

Per-query accumulation uses plain Python floats, left to right, so the
numbers are reproducible to the bit by any straightforward reevaluation
of the same score matrix.
"""

from __future__ import annotations

import numpy as np


def similarity_scores(query, gallery, metric="cosine"):
    """(Q, C) x (G, C) -> (Q, G) similarity, larger means more alike."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if metric == "cosine":
        qn = query / np.maximum(
            np.linalg.norm(query, axis=1, keepdims=True), 1e-12)
        gn = gallery / np.maximum(
            np.linalg.norm(gallery, axis=1, keepdims=True), 1e-12)
        return qn @ gn.T
    if metric == "euclidean":
        sq_q = (query * query).sum(axis=1, keepdims=True)
        sq_g = (gallery * gallery).sum(axis=1)
        sq = np.maximum(sq_q + sq_g[None, :] - 2.0 * (query @ gallery.T), 0.0)
        return -np.sqrt(sq)
    raise ValueError(f"unknown metric '{metric}'")


def rank_gallery(scores_row, valid):
    """Indices of valid gallery entries, best score first, stable ties."""
    candidates = np.flatnonzero(valid)
    order = np.argsort(-scores_row[candidates], kind="stable")
    return candidates[order]


def evaluate_scores(scores, query_ids, query_cams, gallery_ids,
                    gallery_cams, max_rank=10):
    """Metrics from a precomputed (Q, G) score matrix.

    Returns dict with 'cmc' (array, ranks 1..max_rank), 'mAP', and
    'skipped' (queries lacking any valid positive).
    """
    query_ids = np.asarray(query_ids)
    query_cams = np.asarray(query_cams)
    gallery_ids = np.asarray(gallery_ids)
    gallery_cams = np.asarray(gallery_cams)
    num_gallery = len(gallery_ids)
    max_rank = min(max_rank, num_gallery)

    cmc_hits = np.zeros(max_rank, dtype=np.int64)
    ap_values = []
    skipped = 0
    for qi in range(len(query_ids)):
        excluded = ((gallery_ids == query_ids[qi])
                    & (gallery_cams == query_cams[qi]))
        valid = ~excluded
        positives = valid & (gallery_ids == query_ids[qi])
        if not positives.any():
            skipped += 1
            continue
        order = rank_gallery(scores[qi], valid)
        matches = gallery_ids[order] == query_ids[qi]
        first = int(np.flatnonzero(matches)[0])
        if first < max_rank:
            cmc_hits[first:] += 1
        precision_sum = 0.0
        hit_count = 0
        for rank0 in np.flatnonzero(matches):
            hit_count += 1
            precision_sum += hit_count / (int(rank0) + 1)
        ap_values.append(precision_sum / hit_count)

    evaluated = len(query_ids) - skipped
    if evaluated == 0:
        raise ValueError("no query had a valid positive in the gallery")
    total_ap = 0.0
    for ap in ap_values:
        total_ap += ap
    return {
        "cmc": cmc_hits / evaluated,
        "mAP": total_ap / evaluated,
        "skipped": skipped,
    }


def evaluate(query_emb, query_ids, query_cams, gallery_emb, gallery_ids,
             gallery_cams, metric="cosine", max_rank=10):
    scores = similarity_scores(query_emb, gallery_emb, metric)
    return evaluate_scores(scores, query_ids, query_cams, gallery_ids,
                           gallery_cams, max_rank)


def split_query_gallery(dataset, query_camera=0):
    """Standard split for the synthetic sets: camera-0 clips are queries,
    every clip is a gallery entry (the protocol's exclusion rule hides a
    query from its own ranking)."""
    query_idx = np.flatnonzero(dataset.cameras == query_camera)
    gallery_idx = np.arange(len(dataset))
    return query_idx, gallery_idx


def embed_dataset(model, dataset, batch_size=16):
    """Eval-mode embeddings for every clip: (N, C) float32."""
    was_training = model.training
    model.eval()
    try:
        chunks = []
        for start in range(0, len(dataset), batch_size):
            stop = min(start + batch_size, len(dataset))
            chunks.append(model.embed(dataset.features[start:stop],
                                      dataset.heatmaps[start:stop]))
        return np.concatenate(chunks, axis=0)
    finally:
        if was_training:
            model.train()


def evaluate_model(model, dataset, metric="cosine", max_rank=10,
                   query_camera=0, batch_size=16):
    """End-to-end: embed, split, score, rank."""
    embeddings = embed_dataset(model, dataset, batch_size)
    q_idx, g_idx = split_query_gallery(dataset, query_camera)
    return evaluate(embeddings[q_idx], dataset.labels[q_idx],
                    dataset.cameras[q_idx], embeddings[g_idx],
                    dataset.labels[g_idx], dataset.cameras[g_idx],
                    metric=metric, max_rank=max_rank)


def format_report(result, metric, max_rank=10):
    lines = ["retrieval evaluation", f"metric: {metric}"]
    cmc = result["cmc"]
    for r in (1, 5, 10):
        if r <= len(cmc):
            lines.append(f"Rank-{r}: {cmc[r - 1]:.4f}")
    lines.append(f"mAP: {result['mAP']:.4f}")
    if result["skipped"]:
        lines.append(f"warning: {result['skipped']} queries skipped "
                     "(no valid positive)")
    return "\n".join(lines) + "\n"
