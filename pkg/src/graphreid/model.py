"""The full pipeline: part extraction, per-scale spatial-temporal graph
convolutions, cross-scale transfer, fusion, and the training objective.

Forward input is raw clip data (feature maps plus key-point heatmaps);
the parameter-free partition stage runs in plain numpy and its outputs
enter the graph as constants.
"""

from __future__ import annotations

import numpy as np

from graphreid import autodiff as ad
from graphreid import config as cfgmod
from graphreid import nn
from graphreid import partition
from graphreid.autodiff import Tensor
from graphreid.csgcl import CrossScaleGcl
from graphreid.gcl3d import Gcl3dStack
from graphreid.head import ReidHead
from graphreid.topology import TopologyBundle


class PartGraphNetwork(nn.Module):
    """Three per-scale graph stacks feeding one cross-scale fusion head."""

    def __init__(self, cfg, num_classes, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(cfg["seed"])
        self.cfg = dict(cfg)
        self.num_classes = num_classes
        self.grouping = cfgmod.grouping_from_config(cfg)
        channels = cfg["channels"]
        edges = cfg["skeleton_edges"]
        self.stacks = [
            Gcl3dStack(
                TopologyBundle(scale, self.grouping, edges),
                channels, cfg["tau"], cfg["num_layers"], rng,
                use_physical=cfg["use_physical"],
                use_mask=cfg["use_mask"],
                use_context=cfg["use_context"],
                relu_after_squeeze=cfg["relu_after_squeeze"])
            for scale in (1, 2, 3)
        ]
        use_s1, use_s2 = cfgmod.cs_scale_flags(cfg)
        d = cfgmod.embed_dim(cfg)
        self.cross_stages = [
            CrossScaleGcl(channels, d, rng, use_s1=use_s1, use_s2=use_s2,
                          alpha=cfg["alpha"])
            for _ in range(cfg["cs_stages"])
        ]
        self.head = ReidHead(
            channels, len(self.grouping.s3_groups), num_classes, rng,
            margin=cfg["margin"], epsilon=cfg["epsilon"],
            lambda_tri=cfg["lambda_tri"], lambda_ide=cfg["lambda_ide"],
            lambda_div=cfg["lambda_div"],
            share_classifier=cfg["share_classifier"])

    # -- forward -----------------------------------------------------------

    def partition_batch(self, features, heatmaps, dtype=np.float32):
        """Numpy part extraction for a batch of clips.

        features: (B, T, H, W, C); heatmaps: (B, T, 17, H, W).
        Returns numpy (v_g, v_s1, v_s2, v_s3), batch-major.
        """
        b, t, h, w, c = features.shape
        flat_f = features.reshape(b * t, h, w, c).astype(dtype)
        flat_m = heatmaps.reshape(b * t, heatmaps.shape[2], h, w)
        flat_m = flat_m.astype(dtype)
        v_g, v_s1, v_s2, v_s3 = partition.extract_all(
            flat_f, flat_m, self.grouping)
        return (v_g.reshape(b, t, c),
                v_s1.reshape(b, t, -1, c),
                v_s2.reshape(b, t, -1, c),
                v_s3.reshape(b, t, -1, c))

    def forward_parts(self, features, heatmaps, dtype=np.float32):
        """Clip data -> (V_p (B,T,P,C) Tensor, V_g (B,T,C) Tensor)."""
        v_g, v_s1, v_s2, v_s3 = self.partition_batch(
            features, heatmaps, dtype)
        refined = []
        for stack, scale_feats in zip(self.stacks, (v_s1, v_s2, v_s3)):
            refined.append(stack(Tensor(scale_feats)))
        b, t = v_g.shape[:2]
        c = v_g.shape[-1]
        flat = [ad.reshape(x, (b * t, x.shape[2], c)) for x in refined]
        fused = flat[2]
        for stage in self.cross_stages:
            fused = stage(flat[0], flat[1], fused)
        v_p = ad.reshape(fused, (b, t, fused.shape[-2], c))
        return v_p, Tensor(v_g)

    def loss(self, features, heatmaps, labels, dtype=np.float32):
        v_p, v_g = self.forward_parts(features, heatmaps, dtype)
        return self.head.loss(v_p, v_g, labels)

    def embed(self, features, heatmaps, dtype=np.float32):
        """Inference representation V_f^a for a batch: (B, C) numpy."""
        v_p, v_g = self.forward_parts(features, heatmaps, dtype)
        _, v_f_a, _ = self.head(v_p, v_g)
        return v_f_a.data

    def all_branches(self, features, heatmaps, dtype=np.float32):
        """(V_f^g, V_f^a, V_f^c) tensors for a batch."""
        v_p, v_g = self.forward_parts(features, heatmaps, dtype)
        return self.head(v_p, v_g)


def extract_representation(model, features, heatmaps):
    """Deterministic eval-mode V_f^a for one clip or a batch.

    Accepts (T, H, W, C)/(T, 17, H, W) for a single clip or the batched
    five-axis forms; returns (C,) or (B, C).
    """
    single = features.ndim == 4
    if single:
        features = features[None]
        heatmaps = heatmaps[None]
    was_training = model.training
    model.eval()
    try:
        out = model.embed(features, heatmaps)
    finally:
        if was_training:
            model.train()
    return out[0] if single else out
