"""Finite-difference validation of analytic gradients.

Compares backward-pass gradients against central differences in float64.
The relative error uses a floor in the denominator so near-zero gradients
are judged on absolute error instead of blowing up the ratio.
"""

from __future__ import annotations

import numpy as np

from graphreid.autodiff import Tensor

STEP = 1e-5
REL_FLOOR = 1e-3


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(fn, tensor, indices=None, step=STEP):
    """Central-difference gradient of scalar fn() w.r.t. tensor.data.

    `fn` must recompute the loss from current tensor contents each call.
    With `indices` (flat positions), only those entries are probed; the
    rest of the returned array is zero.
    """
    if tensor.data.dtype != np.float64:
        raise ValueError("numeric gradients require float64 tensors")
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        keep = flat[i]
        flat[i] = keep + step
        upper = fn()
        flat[i] = keep - step
        lower = fn()
        flat[i] = keep
        grad[i] = (upper - lower) / (2.0 * step)
    return grad.reshape(tensor.data.shape)


def check_gradients(build_loss, params, indices_for=None, steps=(STEP,),
                    floor=REL_FLOOR, refine_above=1e-6):
    """Max relative error between analytic and numeric grads.

    `build_loss()` constructs the scalar loss Tensor from `params` (a dict
    name -> Tensor, all float64, requires_grad=True). `indices_for` maps a
    param name to the flat indices to probe; names not present are probed
    exhaustively. Returns (max_err, per_param dict).

    `steps` lists step sizes, largest first. Elements whose error at one
    step exceeds `refine_above` are re-probed at the next smaller step and
    the smallest error is kept: a finite difference straddling a ReLU-style
    kink shrinks with the step, while a wrong backward rule stays wrong at
    every step size.
    """
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter '{name}' received no gradient")
        analytic[name] = p.grad.copy()

    def loss_value():
        return float(build_loss().data)

    worst = 0.0
    report = {}
    for name, p in params.items():
        idx = indices_for.get(name) if indices_for else None
        probe = list(range(p.data.size)) if idx is None else list(idx)
        flat_a = analytic[name].reshape(-1)[probe]
        errs = None
        remaining = probe
        keep = np.arange(len(probe))
        for step in steps:
            numeric = numeric_gradient(loss_value, p, indices=remaining,
                                       step=step)
            flat_n = numeric.reshape(-1)[remaining]
            new_errs = relative_error(flat_a[keep], flat_n, floor)
            if errs is None:
                errs = new_errs
            else:
                errs[keep] = np.minimum(errs[keep], new_errs)
            bad = errs > refine_above
            if not bad.any():
                break
            keep = np.flatnonzero(bad)
            remaining = [probe[i] for i in keep]
        report[name] = float(errs.max()) if errs.size else 0.0
        worst = max(worst, report[name])
    return worst, report


def sample_indices(rng, size, count):
    """Deterministic flat-index sample (without replacement) for probing."""
    count = min(count, size)
    return np.sort(rng.choice(size, size=count, replace=False)).tolist()


def full_pipeline_check(cfg, samples_per_param=6, exhaustive_below=12,
                        seed=0, steps=(STEP, 1e-6, 1e-7), floor=REL_FLOOR):
    """Gradient check of the whole training objective at double precision.

    Builds the model from `cfg` in float64, perturbs every parameter away
    from structured initializations (zeros would park some gradients at
    exactly zero), renders one tiny deterministic batch, and probes a
    seeded sample of elements per parameter (small parameters are probed
    exhaustively). Returns (max_rel_err, per-parameter report).
    """
    from graphreid import nn
    from graphreid import synth
    from graphreid.config import default_synth_spec
    from graphreid.model import PartGraphNetwork

    rng = np.random.default_rng(seed)
    p = max(2, cfg["batch_identities"])
    k = max(2, cfg["clips_per_identity"])
    spec = default_synth_spec(
        identities=p, cameras=1, clips_per_identity_per_camera=k,
        frames=cfg["frames"], height=cfg["height"], width=cfg["width"],
        channels=cfg["channels"], seed=seed)
    data = synth.generate_dataset(spec)
    features = data.features.astype(np.float64)
    heatmaps = data.heatmaps.astype(np.float64)
    labels = data.labels

    model = PartGraphNetwork(cfg, num_classes=p,
                             rng=np.random.default_rng(seed + 1))
    nn.to_dtype(model, np.float64)
    model.train()
    for _, param in model.named_parameters():
        param.data = param.data + rng.normal(0.0, 0.05, param.data.shape)

    params = dict(model.named_parameters())
    indices_for = {}
    for name, param in params.items():
        if param.size > exhaustive_below:
            indices_for[name] = sample_indices(rng, param.size,
                                               samples_per_param)

    def build_loss():
        total, _ = model.loss(features, heatmaps, labels, dtype=np.float64)
        return total

    return check_gradients(build_loss, params, indices_for=indices_for,
                           steps=steps, floor=floor)
