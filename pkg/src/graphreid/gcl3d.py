"""Spatial-temporal graph convolution over sliding frame windows.

Each frame gets a centered window of tau frames (zero padded at the clip
boundary), so a clip of T frames yields T windows of tau*N nodes. The
window adjacency is the tau x tau tiling of the frame-level skeleton and
mask plus a per-window context matrix; propagation is the symmetric
degree-normalized form with self-loops. A learnable linear collapses each
node's tau temporal copies back to one feature, and layers past the first
add a residual shortcut.
"""

from __future__ import annotations

import numpy as np

from graphreid import autodiff as ad
from graphreid import nn
from graphreid.autodiff import Tensor
from graphreid.topology import WindowContextBlock

# Degrees are clamped to this floor before the inverse square root; the
# mask and context components can drive row sums negative.
EPS_DEG = 1e-4


def slide_windows(x, tau):
    """Centered temporal windows. (B, T, N, C) -> (B, T, tau*N, C).

    Window t stacks frames t-tau//2 .. t+tau//2 along the node axis in
    temporal order; frames outside the clip contribute zeros.
    """
    if tau < 1 or tau % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {tau}")
    if tau == 1:
        return x
    b, t, n, c = x.shape
    half = tau // 2
    pad = Tensor(np.zeros((b, half, n, c), dtype=x.data.dtype))
    padded = ad.concat([pad, x, pad], axis=1)
    shifts = [ad.narrow(padded, 1, offset, t) for offset in range(tau)]
    return ad.concat(shifts, axis=2)


def tile_adjacency(a, tau):
    """tau x tau block tiling: every N x N block equals `a`.

    Accepts (N, N) or batched (B, N, N); tiling applies to the last two
    axes either way.
    """
    if tau == 1:
        return a
    wide = ad.concat([a] * tau, axis=-1)
    return ad.concat([wide] * tau, axis=-2)


def normalized_propagation(a, x):
    """D^-1/2 (A+I) D^-1/2 @ x with the degree floor guard.

    a: (..., M, M) adjacency (batch axes broadcast against x);
    x: (..., M, C) node features.
    """
    m = a.shape[-1]
    a_hat = ad.add(a, Tensor(np.eye(m, dtype=a.data.dtype)))
    deg = ad.clamp_min(ad.tsum(a_hat, axis=-1, keepdims=True), EPS_DEG)
    inv_sqrt = ad.powf(deg, -0.5)
    scaled = ad.mul(ad.mul(a_hat, inv_sqrt), ad.swapaxes(inv_sqrt, -1, -2))
    return ad.matmul(scaled, x)


class Gcl3dLayer(nn.Module):
    """One propagation step plus the window-collapse projection."""

    def __init__(self, channels, tau, rng):
        super().__init__()
        self.tau = tau
        self.weight = nn.Linear(channels, channels, rng, bias=False)
        self.collapse = nn.Linear(tau * channels, channels, rng, bias=False)
        self.collapse_bn = nn.BatchNorm(channels)

    def __call__(self, x_win, a_blk, num_nodes):
        """x_win: (B*T, tau*N, C), a_blk: broadcastable adjacency.

        Returns (B*T, N, C): convolved windows with each node's tau
        temporal copies concatenated and projected back to C channels.
        """
        y = ad.relu(self.weight(normalized_propagation(a_blk, x_win)))
        copies = [ad.narrow(y, -2, block * num_nodes, num_nodes)
                  for block in range(self.tau)]
        stacked = copies[0] if self.tau == 1 else ad.concat(copies, axis=-1)
        return ad.relu(self.collapse_bn(self.collapse(stacked)))


class Gcl3dStack(nn.Module):
    """L stacked 3D graph conv layers for one scale.

    The window context block is shared across layers (the adjacency
    definition carries no layer index); the adjacency itself is rebuilt
    each layer from that layer's input features.
    """

    def __init__(self, bundle, channels, tau, num_layers, rng,
                 use_physical=True, use_mask=True, use_context=True,
                 relu_after_squeeze=False):
        super().__init__()
        if num_layers < 1:
            raise ValueError(f"need at least one layer, got {num_layers}")
        self.bundle = bundle
        self.tau = tau
        self.num_nodes = bundle.num_nodes
        self.use_physical = use_physical
        self.use_mask = use_mask
        self.use_context = use_context
        self.context = None
        if use_context:
            self.context = WindowContextBlock(
                tau * bundle.num_nodes, channels, rng,
                relu_after_squeeze=relu_after_squeeze)
        self.layers = [Gcl3dLayer(channels, tau, rng)
                       for _ in range(num_layers)]

    def _block_adjacency(self, x_win, batch, frames):
        dtype = x_win.data.dtype
        static = None
        if self.use_physical:
            static = self.bundle.physical_tensor(dtype)
        if self.use_mask:
            mask = ad.cast(self.bundle.mask, dtype)
            static = mask if static is None else ad.add(static, mask)
        parts = []
        if static is not None:
            parts.append(tile_adjacency(static, self.tau))
        if self.use_context:
            win = ad.reshape(
                x_win, (batch, frames, self.tau * self.num_nodes, -1))
            parts.append(self.context(win))
        if not parts:
            raise ValueError("all adjacency components disabled")
        total = parts[0]
        for extra in parts[1:]:
            total = ad.add(total, extra)
        return total

    def __call__(self, x):
        """x: (B, T, N, C) -> (B, T, N, C)."""
        b, t, n, c = x.shape
        current = x
        previous = None
        for index, layer in enumerate(self.layers):
            windows = slide_windows(current, self.tau)
            flat = ad.reshape(windows, (b * t, self.tau * n, c))
            a_blk = self._block_adjacency(flat, b, t)
            out = layer(flat, a_blk, n)
            out = ad.reshape(out, (b, t, n, c))
            if index >= 1:
                out = ad.add(out, previous)
            previous = out
            current = out
        return current
