"""Cross-scale feature transfer onto the coarsest part graph.

For each enabled source scale (the 17 key-points, the 10 parts), every
frame builds relation-augmented node embeddings on both sides, scores
target-source affinity by inner product, softmax-normalizes over the
sources, and pulls a weighted combination of source features through a
learnable transform. The transferred features are blended into the
5-part scale with a fixed balance weight.

All functions take frame-major features (F, N, C) where F fuses batch and
time; that keeps every intermediate within rank 4.
"""

from __future__ import annotations

from graphreid import autodiff as ad
from graphreid import nn


class RelationSide(nn.Module):
    """The per-side embedding maps: pair aggregator h and output map f."""

    def __init__(self, channels, embed_dim, rng):
        super().__init__()
        self.pair_embed = nn.LinearBnRelu(2 * embed_dim, embed_dim, rng)
        self.out_embed = nn.LinearBnRelu(channels + embed_dim, embed_dim,
                                         rng)


class CrossScalePair(nn.Module):
    """One source-to-target transfer: embeddings, adjacency, convolution.

    phi (node identity) and psi (pairwise difference) are shared between
    the two sides; h and f are separate per side.
    """

    def __init__(self, channels, embed_dim, rng):
        super().__init__()
        self.embed_dim = embed_dim
        self.phi = nn.LinearBnRelu(channels, embed_dim, rng)
        self.psi = nn.LinearBnRelu(channels, embed_dim, rng)
        self.source = RelationSide(channels, embed_dim, rng)
        self.target = RelationSide(channels, embed_dim, rng)
        self.transfer = nn.Linear(channels, channels, rng, bias=False)

    def relation_embed(self, x, side):
        """r_i = f([x_i, sum_j h([phi(x_i), psi(x_j - x_i)])]).

        The sum runs over every node j including j = i (the psi(0) term).
        x: (F, N, C) -> (F, N, d).
        """
        f, n, c = x.shape
        phi_x = self.phi(x)
        as_j = ad.reshape(x, (f, 1, n, c))
        as_i = ad.reshape(x, (f, n, 1, c))
        psi_d = self.psi(ad.sub(as_j, as_i))           # [f,i,j] = x_j - x_i
        phi_rep = ad.broadcast_to(
            ad.reshape(phi_x, (f, n, 1, self.embed_dim)),
            (f, n, n, self.embed_dim))
        pooled = ad.tsum(side.pair_embed(
            ad.concat([phi_rep, psi_d], axis=-1)), axis=2)
        return side.out_embed(ad.concat([x, pooled], axis=-1))

    def adjacency(self, x_src, x_tgt):
        """Softmax over sources of the embedding inner products.

        Returns (F, N_tgt, N_src); each target row is a distribution over
        the source nodes.
        """
        r_src = self.relation_embed(x_src, self.source)
        r_tgt = self.relation_embed(x_tgt, self.target)
        logits = ad.matmul(r_tgt, ad.swapaxes(r_src, -1, -2))
        return ad.softmax(logits, axis=-1)

    def __call__(self, x_src, x_tgt):
        """Transferred features for the target scale: (F, N_tgt, C)."""
        a_cross = self.adjacency(x_src, x_tgt)
        return ad.relu(self.transfer(ad.matmul(a_cross, x_src)))


class CrossScaleGcl(nn.Module):
    """One transfer stage: enabled sources feed the 5-part target scale.

    Output is x_s3 + alpha * (sum of per-source transfers); with no source
    enabled (the s3-only ablation) the target features pass through
    untouched.
    """

    def __init__(self, channels, embed_dim, rng, use_s1=True, use_s2=True,
                 alpha=0.3):
        super().__init__()
        self.alpha = alpha
        self.pair_s1 = (CrossScalePair(channels, embed_dim, rng)
                        if use_s1 else None)
        self.pair_s2 = (CrossScalePair(channels, embed_dim, rng)
                        if use_s2 else None)

    def __call__(self, x_s1, x_s2, x_s3):
        total = None
        for pair, source in ((self.pair_s1, x_s1), (self.pair_s2, x_s2)):
            if pair is None:
                continue
            moved = pair(source, x_s3)
            total = moved if total is None else ad.add(total, moved)
        if total is None:
            return x_s3
        return ad.add(x_s3, ad.mul(ad.constant(self.alpha, total), total))


def default_embed_dim(channels):
    """Quarter of the channel width, floored at 1."""
    return max(1, channels // 4)
