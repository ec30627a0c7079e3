"""Neural-net building blocks on top of the autodiff core.

Modules hold parameters as Tensor attributes and persistent state (batch
norm running statistics) as Buffer attributes. ``named_parameters`` and
``named_buffers`` walk attribute assignment order, so names are stable
across runs, which the checkpoint format relies on.
"""

from __future__ import annotations

import numpy as np

from graphreid import autodiff as ad
from graphreid.autodiff import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Buffer:
    """Non-learnable persistent array (saved in checkpoints, no gradient)."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = np.asarray(value)


class Module:
    """Minimal container: parameter discovery, train/eval mode, no forward."""

    def __init__(self):
        self.training = True

    def _walk(self, prefix=""):
        for name, value in vars(self).items():
            if name == "training":
                continue
            path = prefix + name
            if isinstance(value, (Tensor, Buffer)):
                yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Buffer)):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.")

    def named_parameters(self):
        out = []
        seen = set()
        for n, v in self._walk():
            if isinstance(v, Tensor) and v.requires_grad and id(v) not in seen:
                seen.add(id(v))
                out.append((n, v))
        return out

    def parameters(self):
        return [v for _, v in self.named_parameters()]

    def named_buffers(self):
        out = []
        seen = set()
        for n, v in self._walk():
            if isinstance(v, Buffer) and id(v) not in seen:
                seen.add(id(v))
                out.append((n, v))
        return out

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self):
        for m in self.modules():
            m.training = True
        return self

    def eval(self):
        for m in self.modules():
            m.training = False
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def he_normal(rng, shape, fan_in, dtype=np.float32):
    """Gaussian init scaled for ReLU nonlinearities: std = sqrt(2/fan_in)."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype)


class Linear(Module):
    """Affine map on the last axis; equivalent to a 1x1 convolution over
    any grid of positions held in the leading axes."""

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(he_normal(rng, (in_features, out_features),
                                       in_features), requires_grad=True)
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_features, dtype=np.float32),
                               requires_grad=True)

    def __call__(self, x):
        if x.shape[-1] != self.in_features:
            raise ad.ShapeError(
                f"linear expects last extent {self.in_features}, "
                f"got {x.shape}")
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out


class BatchNorm(Module):
    """Normalization over every axis except the last (channel) axis.

    Training mode builds the normalization out of differentiable ops, so
    gradients flow through the batch statistics exactly. Running stats are
    tracked outside the graph with the standard unbiased-variance update.
    """

    def __init__(self, channels):
        super().__init__()
        self.channels = channels
        self.scale = Tensor(np.ones(channels, dtype=np.float32),
                            requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=np.float32),
                            requires_grad=True)
        self.running_mean = Buffer(np.zeros(channels, dtype=np.float32))
        self.running_var = Buffer(np.ones(channels, dtype=np.float32))

    def __call__(self, x):
        if x.shape[-1] != self.channels:
            raise ad.ShapeError(
                f"batchnorm expects {self.channels} channels, got {x.shape}")
        if self.training:
            return self._forward_train(x)
        return self._forward_eval(x)

    def _forward_train(self, x):
        axes = tuple(range(x.ndim - 1))
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        if count < 2:
            raise ad.AutodiffError(
                "batchnorm in training mode needs at least 2 positions "
                "per channel (variance of a single sample is undefined)")
        mean = ad.tmean(x, axis=axes, keepdims=True)
        centered = ad.sub(x, mean)
        var = ad.tmean(ad.mul(centered, centered), axis=axes, keepdims=True)
        denom = ad.sqrt(ad.add(var, ad.constant(BN_EPS, var)))
        normed = ad.div(centered, denom)
        out = ad.add(ad.mul(normed, self._cast(self.scale, x)),
                     self._cast(self.shift, x))
        m = BN_MOMENTUM
        batch_mean = mean.data.reshape(-1)
        unbiased = var.data.reshape(-1) * (count / (count - 1))
        self.running_mean.value = ((1 - m) * self.running_mean.value
                                   + m * batch_mean).astype(
                                       self.running_mean.value.dtype)
        self.running_var.value = ((1 - m) * self.running_var.value
                                  + m * unbiased).astype(
                                      self.running_var.value.dtype)
        return out

    def _forward_eval(self, x):
        rm = Tensor(self.running_mean.value.astype(x.dtype))
        rv = Tensor(self.running_var.value.astype(x.dtype))
        denom = ad.sqrt(ad.add(rv, ad.constant(BN_EPS, rv)))
        normed = ad.div(ad.sub(x, rm), denom)
        return ad.add(ad.mul(normed, self._cast(self.scale, x)),
                      self._cast(self.shift, x))

    @staticmethod
    def _cast(param, like):
        return ad.cast(param, like.data.dtype)


class LinearBnRelu(Module):
    """The recurring 1x1-conv + BN + ReLU cell."""

    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.linear = Linear(in_features, out_features, rng, bias=False)
        self.bn = BatchNorm(out_features)

    def __call__(self, x):
        return ad.relu(self.bn(self.linear(x)))


def to_dtype(module, dtype):
    """Cast every parameter and buffer in place (float32 <-> float64)."""
    for _, p in module.named_parameters():
        p.data = p.data.astype(dtype)
        p.grad = None
    for _, b in module.named_buffers():
        b.value = b.value.astype(dtype)
    return module
