"""Adjacency construction: physical skeleton, learnable mask, context.

A scale's working adjacency is the sum of three parts: a fixed binary
skeleton A_p, a zero-initialized learnable mask A_m, and a data-dependent
context matrix A_c produced by squeezing the clip features down to one
vector per node and expanding that vector into a row-normalized matrix.
Windowed graphs get the same treatment per window without the temporal
squeeze (the window position already fixes time).
"""

from __future__ import annotations

import numpy as np

from graphreid import autodiff as ad
from graphreid import nn
from graphreid.autodiff import Tensor

# COCO limb pairs over the key-point order in partition.KEYPOINT_NAMES.
COCO_EDGES = (
    (15, 13), (13, 11), (16, 14), (14, 12),   # legs
    (11, 12),                                  # pelvis
    (5, 11), (6, 12),                          # torso sides
    (5, 6),                                    # shoulder girdle
    (5, 7), (7, 9), (6, 8), (8, 10),           # arms
    (1, 2), (0, 1), (0, 2), (1, 3), (2, 4),    # face
    (3, 5), (4, 6),                            # ears to shoulders
)


def build_physical_adjacency(scale, grouping, edges=COCO_EDGES,
                             dtype=np.float32):
    """Binary symmetric zero-diagonal skeleton for one scale.

    At the finest scale the edge list is used directly. Coarser nodes are
    connected whenever any of their member key-points share an edge;
    intra-group edges collapse onto the (excluded) diagonal.
    """
    groups = grouping.groups_for_scale(scale)
    owner = {}
    for g, members in enumerate(groups):
        for k in members:
            owner[k] = g
    n = len(groups)
    a = np.zeros((n, n), dtype=dtype)
    for u, v in edges:
        gu, gv = owner[u], owner[v]
        if gu != gv:
            a[gu, gv] = 1.0
            a[gv, gu] = 1.0
    return a


class TopologyBundle(nn.Module):
    """Per-scale adjacency state: fixed skeleton plus learnable mask.

    The skeleton is a plain constant (never receives gradient); the mask
    starts at zero so training begins from the physical topology alone.
    """

    def __init__(self, scale, grouping, edges=COCO_EDGES):
        super().__init__()
        self.scale = scale
        self.num_nodes = len(grouping.groups_for_scale(scale))
        self.physical = nn.Buffer(build_physical_adjacency(
            scale, grouping, edges))
        self.mask = Tensor(
            np.zeros((self.num_nodes, self.num_nodes), dtype=np.float32),
            requires_grad=True)

    def physical_tensor(self, dtype):
        return Tensor(self.physical.value.astype(dtype))


class ContextBlock(nn.Module):
    """Clip features -> one adjacency matrix (shared by the clip's frames).

    Squeeze C to 1, then T to 1, leaving one scalar per node; expand the
    node vector to N*N entries, reshape, and L2-normalize each row. The
    expansion starts at zero so the context contributes nothing until the
    optimizer moves it.
    """

    def __init__(self, num_nodes, num_frames, channels, rng,
                 relu_after_squeeze=False):
        super().__init__()
        self.num_nodes = num_nodes
        self.squeeze_feat = nn.Linear(channels, 1, rng)
        self.squeeze_time = nn.Linear(num_frames, 1, rng)
        self.expand = nn.Linear(num_nodes, num_nodes * num_nodes, rng)
        self.expand.weight.data[:] = 0.0
        self.relu_after_squeeze = relu_after_squeeze

    def __call__(self, x):
        """x: (B, T, N, C) -> (B, N, N)."""
        b, t, n, _ = x.shape
        if n != self.num_nodes:
            raise ad.ShapeError(
                f"context block built for {self.num_nodes} nodes, "
                f"got {x.shape}")
        per_node = ad.reshape(self.squeeze_feat(x), (b, t, n))
        if self.relu_after_squeeze:
            per_node = ad.relu(per_node)
        per_node = ad.swapaxes(per_node, 1, 2)                # (B, N, T)
        per_clip = ad.reshape(self.squeeze_time(per_node), (b, 1, n))
        flat = self.expand(per_clip)                          # (B, 1, N*N)
        return ad.l2_normalize_rows(ad.reshape(flat, (b, n, n)))


class WindowContextBlock(nn.Module):
    """Windowed features -> one adjacency per window position.

    Same squeeze-expand pipeline as ContextBlock minus the temporal stage:
    C collapses to 1 over the tau*N window nodes, then the node vector
    expands to the full (tau*N)^2 matrix, row-normalized.
    """

    def __init__(self, window_nodes, channels, rng, relu_after_squeeze=False):
        super().__init__()
        self.window_nodes = window_nodes
        self.squeeze_feat = nn.Linear(channels, 1, rng)
        self.expand = nn.Linear(window_nodes, window_nodes * window_nodes,
                                rng)
        self.expand.weight.data[:] = 0.0
        self.relu_after_squeeze = relu_after_squeeze

    def __call__(self, x_win):
        """x_win: (B, T, tauN, C) -> (B*T, tauN, tauN).

        The leading batch and window axes fuse so the result stays within
        rank 4 when it later multiplies the windowed features.
        """
        b, t, wn, _ = x_win.shape
        if wn != self.window_nodes:
            raise ad.ShapeError(
                f"window context block built for {self.window_nodes} nodes, "
                f"got {x_win.shape}")
        per_node = ad.reshape(self.squeeze_feat(x_win), (b * t, 1, wn))
        if self.relu_after_squeeze:
            per_node = ad.relu(per_node)
        flat = self.expand(per_node)                          # (B*T,1,wn²)
        return ad.l2_normalize_rows(ad.reshape(flat, (b * t, wn, wn)))


def compose_adjacency(bundle, a_c, use_physical=True, use_mask=True,
                      use_context=True, dtype=np.float32):
    """A = A_p + A_m + A_c with per-component ablation switches.

    a_c: (B, N, N) or None when the context component is disabled.
    Returns (B, N, N); the constant parts broadcast over the batch.
    """
    parts = []
    if use_physical:
        parts.append(bundle.physical_tensor(dtype))
    if use_mask:
        parts.append(ad.cast(bundle.mask, dtype))
    if use_context:
        if a_c is None:
            raise ValueError("context component enabled but a_c is None")
        parts.append(a_c)
    if not parts:
        raise ValueError("at least one adjacency component must be enabled")
    total = parts[0]
    for extra in parts[1:]:
        total = ad.add(total, extra)
    return total
