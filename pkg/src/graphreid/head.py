"""Fusion block and training objective.

Three clip-level representations come out of the fusion block: the pooled
global feature, the pooled sum of part and global features (the inference
representation), and a concatenation branch that compresses each part
before pooling. Training applies a batch-hard triplet loss and a
label-smoothed identification loss to every branch, plus a diversity
penalty pushing the five pooled part vectors toward orthogonality.
"""

from __future__ import annotations

import numpy as np

from graphreid import autodiff as ad
from graphreid import nn

TRIPLET_EPS = 1e-12


class BatchLayoutError(ValueError):
    """The batch cannot support hard mining (missing positives/negatives)."""


class FusionBlock(nn.Module):
    """V_p (B, T, P, C) and V_g (B, T, C) -> three (B, C) features."""

    def __init__(self, channels, num_parts, rng):
        super().__init__()
        if channels % num_parts != 0:
            raise ValueError(
                f"channel width {channels} must divide evenly into "
                f"{num_parts} parts for the concatenation branch")
        self.num_parts = num_parts
        self.reduce = nn.Linear(channels, channels // num_parts, rng)

    def __call__(self, v_p, v_g):
        b, t, p, c = v_p.shape
        if p != self.num_parts:
            raise ad.ShapeError(
                f"fusion block built for {self.num_parts} parts, "
                f"got {v_p.shape}")
        v_f_g = ad.tmean(v_g, axis=1)
        part_sum = ad.tsum(v_p, axis=2)
        v_f_a = ad.tmean(ad.add(part_sum, v_g), axis=1)
        # reducing each part to C/P then concatenating in part order is a
        # reshape of the (B, T, P, C/P) output
        reduced = ad.reshape(self.reduce(v_p), (b, t, c))
        v_f_c = ad.tmean(ad.add(reduced, v_g), axis=1)
        return v_f_g, v_f_a, v_f_c


def pairwise_distances(embeddings):
    """Euclidean distance matrix (B, B) from embeddings (B, C).

    The squared form is clamped at zero before the offset-stabilized
    square root, so coincident points give a finite gradient instead of
    the infinite slope of sqrt at zero.
    """
    sq = ad.tsum(ad.mul(embeddings, embeddings), axis=-1, keepdims=True)
    dots = ad.matmul(embeddings, ad.swapaxes(embeddings, -1, -2))
    two = ad.constant(2.0, dots)
    sq_dist = ad.sub(ad.add(sq, ad.swapaxes(sq, -1, -2)),
                     ad.mul(two, dots))
    floored = ad.clamp_min(sq_dist, 0.0)
    return ad.sqrt(ad.add(floored, ad.constant(TRIPLET_EPS, floored)))


def triplet_loss_batchhard(embeddings, labels, margin=0.3):
    """Mean hinge over anchors with hardest positive/negative mining.

    The mining itself happens outside the graph (argmax over the current
    distances); the selected entries then flow through one-hot constant
    masks, which reproduces the subgradient of the max/min exactly.
    """
    labels = np.asarray(labels)
    b = embeddings.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got {labels.shape}")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)
    neg_mask = ~same
    if not pos_mask.any(axis=1).all():
        raise BatchLayoutError("every anchor needs another clip of the "
                               "same identity in the batch")
    if not neg_mask.any(axis=1).all():
        raise BatchLayoutError("every anchor needs a clip of a different "
                               "identity in the batch")
    dist = pairwise_distances(embeddings)
    d = dist.data
    hardest_pos = np.where(pos_mask, d, -np.inf).argmax(axis=1)
    hardest_neg = np.where(neg_mask, d, np.inf).argmin(axis=1)
    pick_pos = np.zeros((b, b), dtype=d.dtype)
    pick_pos[np.arange(b), hardest_pos] = 1.0
    pick_neg = np.zeros((b, b), dtype=d.dtype)
    pick_neg[np.arange(b), hardest_neg] = 1.0
    d_pos = ad.tsum(ad.mul(dist, ad.Tensor(pick_pos)), axis=-1)
    d_neg = ad.tsum(ad.mul(dist, ad.Tensor(pick_neg)), axis=-1)
    hinge = ad.relu(ad.add(ad.sub(d_pos, d_neg),
                           ad.constant(margin, d_pos)))
    return ad.tmean(hinge)


def id_loss_labelsmooth(logits, labels, epsilon=0.1):
    """Cross-entropy against smoothed targets (1-eps) one-hot + eps/K."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if k < 2:
        raise ValueError("identification loss needs at least 2 classes")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    targets = np.full((b, k), epsilon / k, dtype=logits.data.dtype)
    targets[np.arange(b), labels] += 1.0 - epsilon
    log_probs = ad.sub(logits, ad.logsumexp(logits, axis=-1, keepdims=True))
    per_clip = ad.neg(ad.tsum(ad.mul(ad.Tensor(targets), log_probs),
                              axis=-1))
    return ad.tmean(per_clip)


def diversity_loss(v_p):
    """Squared Frobenius distance of the part Gram matrix from identity.

    Parts are pooled over time and L2-normalized first, so the penalty
    measures directions only; mean over the batch.
    """
    pooled = ad.tmean(v_p, axis=1)
    normed = ad.l2_normalize_rows(pooled)
    gram = ad.matmul(normed, ad.swapaxes(normed, -1, -2))
    p = gram.shape[-1]
    residual = ad.sub(gram, ad.Tensor(np.eye(p, dtype=gram.data.dtype)))
    per_clip = ad.tsum(ad.mul(residual, residual), axis=(-2, -1))
    return ad.tmean(per_clip)


class ReidHead(nn.Module):
    """Fusion block, per-branch classifiers, and the combined objective."""

    def __init__(self, channels, num_parts, num_classes, rng,
                 margin=0.3, epsilon=0.1,
                 lambda_tri=1.0, lambda_ide=1.0, lambda_div=1.0,
                 share_classifier=False):
        super().__init__()
        self.fusion = FusionBlock(channels, num_parts, rng)
        self.num_classes = num_classes
        self.margin = margin
        self.epsilon = epsilon
        self.lambda_tri = lambda_tri
        self.lambda_ide = lambda_ide
        self.lambda_div = lambda_div
        if share_classifier:
            shared = nn.Linear(channels, num_classes, rng)
            self.classifiers = [shared, shared, shared]
        else:
            self.classifiers = [nn.Linear(channels, num_classes, rng)
                                for _ in range(3)]

    def __call__(self, v_p, v_g):
        return self.fusion(v_p, v_g)

    def loss(self, v_p, v_g, labels):
        """Total objective and its components on one training batch.

        Returns (total, parts) where parts maps 'tri'/'ide'/'div' to the
        unweighted component values (floats).
        """
        features = self.fusion(v_p, v_g)
        tri = None
        ide = None
        for feat, classifier in zip(features, self.classifiers):
            t = triplet_loss_batchhard(feat, labels, self.margin)
            i = id_loss_labelsmooth(classifier(feat), labels, self.epsilon)
            tri = t if tri is None else ad.add(tri, t)
            ide = i if ide is None else ad.add(ide, i)
        div = diversity_loss(v_p)
        total = ad.add(
            ad.add(ad.mul(ad.constant(self.lambda_tri, tri), tri),
                   ad.mul(ad.constant(self.lambda_ide, ide), ide)),
            ad.mul(ad.constant(self.lambda_div, div), div))
        parts = {"tri": float(tri.data), "ide": float(ide.data),
                 "div": float(div.data)}
        return total, parts
