"""Part feature extraction from feature maps and key-point heatmaps.

Each frame contributes one global feature (spatial mean of the feature
map) and 17 key-point features (heatmap-softmax weighted spatial means).
Coarser scales average groups of key-point features, so the three scales
share a single extraction pass.

Everything here is parameter-free, so inputs arrive as plain numpy arrays
and outputs are returned the same way; the graph layers downstream wrap
them in tensors as needed.
"""

from __future__ import annotations

import numpy as np

NUM_KEYPOINTS = 17

# COCO key-point order, used by the default groupings and the skeleton.
KEYPOINT_NAMES = (
    "nose", "l_eye", "r_eye", "l_ear", "r_ear",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hip", "r_hip",
    "l_knee", "r_knee", "l_ankle", "r_ankle",
)

# 10-part scale: head, each shoulder, each full arm below the shoulder,
# hips, each knee, each ankle.
DEFAULT_S2_GROUPS = (
    (0, 1, 2, 3, 4),     # head
    (5,),                # l_shoulder
    (6,),                # r_shoulder
    (7, 9),              # l_arm (elbow + wrist)
    (8, 10),             # r_arm
    (11, 12),            # hips
    (13,),               # l_knee
    (14,),               # r_knee
    (15,),               # l_ankle
    (16,),               # r_ankle
)

# 5-part scale: head, torso, each arm, legs.
DEFAULT_S3_GROUPS = (
    (0, 1, 2, 3, 4),     # head
    (5, 6, 11, 12),      # torso (shoulders + hips)
    (7, 9),              # l_arm
    (8, 10),             # r_arm
    (13, 14, 15, 16),    # legs
)


class GroupingError(ValueError):
    """A part grouping is not a disjoint cover of the 17 key-points."""


class ScaleGrouping:
    """Index sets mapping the 17 key-points to 10-part and 5-part scales."""

    def __init__(self, s2_groups=DEFAULT_S2_GROUPS,
                 s3_groups=DEFAULT_S3_GROUPS):
        self.s2_groups = tuple(tuple(g) for g in s2_groups)
        self.s3_groups = tuple(tuple(g) for g in s3_groups)
        _validate_groups(self.s2_groups, "s2")
        _validate_groups(self.s3_groups, "s3")

    def node_counts(self):
        """Nodes per scale, finest first: (17, |s2|, |s3|)."""
        return (NUM_KEYPOINTS, len(self.s2_groups), len(self.s3_groups))

    def groups_for_scale(self, scale):
        """Member sets for a scale index 1..3; scale 1 is singletons."""
        if scale == 1:
            return tuple((k,) for k in range(NUM_KEYPOINTS))
        if scale == 2:
            return self.s2_groups
        if scale == 3:
            return self.s3_groups
        raise ValueError(f"unknown scale {scale}")

    def averaging_matrix(self, groups, dtype=np.float32):
        """M with M[g, k] = 1/|group g| for members k, else 0.

        Left-multiplying V_s1 (17 x C) by M produces the coarse features,
        so merging is a single constant matmul.
        """
        m = np.zeros((len(groups), NUM_KEYPOINTS), dtype=dtype)
        for g, members in enumerate(groups):
            m[g, list(members)] = 1.0 / len(members)
        return m


def _validate_groups(groups, label):
    seen = set()
    for members in groups:
        if not members:
            raise GroupingError(f"{label} grouping has an empty part")
        for k in members:
            if not 0 <= k < NUM_KEYPOINTS:
                raise GroupingError(
                    f"{label} grouping references key-point {k}")
            if k in seen:
                raise GroupingError(
                    f"{label} grouping assigns key-point {k} twice")
            seen.add(k)
    if len(seen) != NUM_KEYPOINTS:
        missing = sorted(set(range(NUM_KEYPOINTS)) - seen)
        raise GroupingError(f"{label} grouping misses key-points {missing}")


def normalize_heatmaps(m):
    """Softmax over the flattened spatial grid, per frame per key-point.

    Input (T, 17, H, W); output the same shape, each (H, W) slice summing
    to one.
    """
    t, k, h, w = m.shape
    flat = m.reshape(t, k, h * w)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(t, k, h, w)


def extract_part_features(feature_maps, heatmaps_norm):
    """Weighted spatial means: V_s1[t, k] = sum_hw m[t,k,h,w] * F[t,h,w].

    The average pooling of the feature-heatmap outer product collapses to
    this weighted sum because the normalized heatmap already sums to one.
    feature_maps: (T, H, W, C); heatmaps_norm: (T, 17, H, W) -> (T, 17, C).
    """
    t, h, w, c = feature_maps.shape
    if heatmaps_norm.shape[0] != t or heatmaps_norm.shape[2:] != (h, w):
        raise ValueError(
            f"feature maps {feature_maps.shape} and heatmaps "
            f"{heatmaps_norm.shape} disagree on T/H/W")
    k = heatmaps_norm.shape[1]
    weights = heatmaps_norm.reshape(t, k, h * w)
    spatial = feature_maps.reshape(t, h * w, c)
    return np.matmul(weights, spatial)


def extract_global_feature(feature_maps):
    """Unweighted spatial mean per frame: (T, H, W, C) -> (T, C)."""
    return feature_maps.mean(axis=(1, 2))


def merge_scales(v_s1, grouping):
    """Average key-point features into the two coarser scales.

    v_s1: (T, 17, C) -> (V_s2: (T, |s2|, C), V_s3: (T, |s3|, C)).
    """
    if v_s1.shape[1] != NUM_KEYPOINTS:
        raise ValueError(f"expected {NUM_KEYPOINTS} key-point features, "
                         f"got {v_s1.shape}")
    m2 = grouping.averaging_matrix(grouping.s2_groups, dtype=v_s1.dtype)
    m3 = grouping.averaging_matrix(grouping.s3_groups, dtype=v_s1.dtype)
    return np.matmul(m2, v_s1), np.matmul(m3, v_s1)


def extract_all(feature_maps, heatmaps, grouping):
    """Full partition pass for one clip.

    Returns (V_g, V_s1, V_s2, V_s3) with shapes (T, C), (T, 17, C),
    (T, |s2|, C), (T, |s3|, C).
    """
    m_norm = normalize_heatmaps(heatmaps)
    v_s1 = extract_part_features(feature_maps, m_norm)
    v_s2, v_s3 = merge_scales(v_s1, grouping)
    return extract_global_feature(feature_maps), v_s1, v_s2, v_s3
