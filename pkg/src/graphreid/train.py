"""Training loop: P x K batch sampling, Adam updates, step-decayed lr.

Batches hold a fixed number of identities with a fixed number of clips
each, which the hard-mining triplet loss requires. The learning rate
drops by a constant factor every N epochs, where an epoch is a fixed
number of steps (derived from dataset size when not configured).
"""

from __future__ import annotations

import math

import numpy as np

from graphreid.autodiff import NonFiniteError
from graphreid.model import PartGraphNetwork
from graphreid.optim import Adam


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the failing step."""


def scheduled_lr(base_lr, step, steps_per_epoch, every_epochs=60,
                 factor=0.1):
    """Learning rate for a given 0-based step index."""
    if steps_per_epoch < 1 or every_epochs < 1:
        return base_lr
    epoch = step // steps_per_epoch
    return base_lr * factor ** (epoch // every_epochs)


class BatchSampler:
    """Yields (indices,) for P identities x K clips batches."""

    def __init__(self, labels, identities_per_batch, clips_per_identity,
                 rng):
        self.labels = np.asarray(labels)
        self.rng = rng
        self.p = identities_per_batch
        self.k = clips_per_identity
        self.by_identity = {}
        for idx, label in enumerate(self.labels):
            self.by_identity.setdefault(int(label), []).append(idx)
        usable = [i for i, clips in self.by_identity.items()
                  if len(clips) >= 2]
        if len(usable) < 2:
            raise ValueError("need at least 2 identities with 2+ clips "
                             "for P x K sampling")
        self.identity_pool = sorted(usable)
        self.p = min(self.p, len(self.identity_pool))

    def sample(self):
        ids = self.rng.choice(self.identity_pool, size=self.p,
                              replace=False)
        batch = []
        for identity in ids:
            clips = self.by_identity[int(identity)]
            take = min(self.k, len(clips))
            picked = self.rng.choice(len(clips), size=take, replace=False)
            batch.extend(clips[j] for j in picked)
        return np.array(batch)


def train(cfg, dataset, model=None, log=None):
    """Run the configured number of steps; returns (model, opt, history).

    history is a list of per-step dicts (step, lr, loss and components).
    `log` is an optional callable taking one formatted line.
    """
    if model is None:
        model = PartGraphNetwork(cfg, num_classes=dataset.num_identities)
    model.train()
    rng = np.random.default_rng(cfg["seed"] + 1)
    sampler = BatchSampler(dataset.labels, cfg["batch_identities"],
                           cfg["clips_per_identity"], rng)
    optimizer = Adam(model.parameters(), lr=cfg["lr"],
                     weight_decay=cfg["weight_decay"])
    batch_size = sampler.p * sampler.k
    steps_per_epoch = cfg["steps_per_epoch"]
    if steps_per_epoch < 1:
        steps_per_epoch = max(1, math.ceil(len(dataset) / batch_size))

    history = []
    for step in range(cfg["steps"]):
        optimizer.lr = scheduled_lr(cfg["lr"], step, steps_per_epoch,
                                    cfg["decay_every_epochs"],
                                    cfg["decay_factor"])
        indices = sampler.sample()
        features = dataset.features[indices]
        heatmaps = dataset.heatmaps[indices]
        labels = dataset.labels[indices]
        model.zero_grad()
        try:
            total, parts = model.loss(features, heatmaps, labels)
            total.backward()
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"non-finite loss or gradient at step {step}: {exc}"
            ) from exc
        loss_value = float(total.data)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        optimizer.step()
        entry = {"step": step, "lr": optimizer.lr, "loss": loss_value,
                 **parts}
        history.append(entry)
        if log is not None and (step % max(1, cfg["log_every"]) == 0
                                or step == cfg["steps"] - 1):
            log(f"step {step:4d}  lr {optimizer.lr:.2e}  "
                f"loss {loss_value:.4f}  tri {parts['tri']:.4f}  "
                f"ide {parts['ide']:.4f}  div {parts['div']:.4f}")
    return model, optimizer, history


def loss_drop(history, window=10):
    """Fractional decrease of the trailing moving average versus the
    moving average at the window-th step. 0.5 means the loss halved."""
    losses = [h["loss"] for h in history]
    if len(losses) < 2 * window:
        raise ValueError(f"need at least {2 * window} steps")
    early = sum(losses[:window]) / window
    late = sum(losses[-window:]) / window
    return 1.0 - late / early
