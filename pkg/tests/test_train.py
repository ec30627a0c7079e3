"""Training loop pieces: schedule, sampler, divergence, determinism."""

import numpy as np
import pytest

from graphreid.config import default_run_config, default_synth_spec
from graphreid.synth import generate_dataset
from graphreid.train import (BatchSampler, TrainingDiverged, loss_drop,
                             scheduled_lr, train)

TINY = dict(channels=10, frames=3, height=4, width=3, tau=3, num_layers=2,
            batch_identities=2, clips_per_identity=2, steps=3, lr=1e-3,
            log_every=1)


def tiny_dataset(seed=0, identities=3):
    spec = default_synth_spec(identities=identities, cameras=2,
                              clips_per_identity_per_camera=2, frames=3,
                              height=4, width=3, channels=10, seed=seed)
    return generate_dataset(spec)


class TestSchedule:
    def test_flat_before_first_decay(self):
        for step in (0, 59):
            assert scheduled_lr(0.1, step, steps_per_epoch=1) == 0.1

    def test_tenth_after_sixty_epochs(self):
        np.testing.assert_allclose(
            scheduled_lr(0.1, 60, steps_per_epoch=1), 0.01)
        np.testing.assert_allclose(
            scheduled_lr(0.1, 120, steps_per_epoch=1), 0.001)

    def test_epoch_width_scales_with_steps_per_epoch(self):
        assert scheduled_lr(0.1, 599, steps_per_epoch=10) == 0.1
        np.testing.assert_allclose(
            scheduled_lr(0.1, 600, steps_per_epoch=10), 0.01)

    def test_custom_factor_and_period(self):
        np.testing.assert_allclose(
            scheduled_lr(1.0, 4, steps_per_epoch=1, every_epochs=2,
                         factor=0.5), 0.25)

    def test_degenerate_schedule_is_constant(self):
        assert scheduled_lr(0.1, 1000, steps_per_epoch=0) == 0.1


class TestBatchSampler:
    def test_batch_holds_p_identities_k_clips(self):
        labels = np.repeat(np.arange(5), 4)
        sampler = BatchSampler(labels, 3, 2, np.random.default_rng(0))
        batch = sampler.sample()
        assert batch.shape == (6,)
        picked = labels[batch]
        ids, counts = np.unique(picked, return_counts=True)
        assert len(ids) == 3
        np.testing.assert_array_equal(counts, [2, 2, 2])

    def test_no_repeats_within_identity(self):
        labels = np.repeat(np.arange(4), 3)
        sampler = BatchSampler(labels, 2, 3, np.random.default_rng(1))
        for _ in range(20):
            batch = sampler.sample()
            assert len(set(batch.tolist())) == len(batch)

    def test_requested_sizes_clamp_to_availability(self):
        labels = np.repeat(np.arange(2), 2)
        sampler = BatchSampler(labels, 8, 4, np.random.default_rng(2))
        assert len(sampler.sample()) == 4   # 2 ids x 2 clips

    def test_single_identity_pool_rejected(self):
        with pytest.raises(ValueError):
            BatchSampler(np.zeros(6), 2, 2, np.random.default_rng(3))

    def test_singleton_identities_are_ignored(self):
        labels = np.array([0, 0, 1, 2, 2])
        sampler = BatchSampler(labels, 2, 2, np.random.default_rng(4))
        assert sampler.identity_pool == [0, 2]


class TestTrainLoop:
    def test_history_covers_every_step(self):
        cfg = default_run_config(**TINY)
        _, _, history = train(cfg, tiny_dataset())
        assert [h["step"] for h in history] == [0, 1, 2]
        for entry in history:
            for key in ("lr", "loss", "tri", "ide", "div"):
                assert np.isfinite(entry[key]), key

    def test_same_seed_reproduces_losses(self):
        cfg = default_run_config(**TINY)
        _, _, h1 = train(cfg, tiny_dataset())
        _, _, h2 = train(cfg, tiny_dataset())
        assert [h["loss"] for h in h1] == [h["loss"] for h in h2]

    def test_different_seed_changes_losses(self):
        cfg_a = default_run_config(**TINY)
        cfg_b = default_run_config(**{**TINY, "seed": 5})
        _, _, h1 = train(cfg_a, tiny_dataset())
        _, _, h2 = train(cfg_b, tiny_dataset())
        assert [h["loss"] for h in h1] != [h["loss"] for h in h2]

    def test_log_lines_emitted(self):
        cfg = default_run_config(**TINY)
        lines = []
        train(cfg, tiny_dataset(), log=lines.append)
        assert len(lines) == 3
        assert lines[0].startswith("step    0")

    def test_divergent_parameters_abort_with_step(self):
        cfg = default_run_config(**TINY)
        model_holder = {}

        def poison(line):
            # corrupt the model between steps via the closure
            model = model_holder["model"]
            model.head.classifiers[0].weight.data[:] = np.nan

        from graphreid.model import PartGraphNetwork
        data = tiny_dataset()
        model = PartGraphNetwork(cfg, num_classes=data.num_identities)
        model_holder["model"] = model
        with pytest.raises(TrainingDiverged, match="step"):
            train(cfg, data, model=model, log=poison)

    def test_scheduled_rate_recorded_in_history(self):
        cfg = default_run_config(**{**TINY, "steps": 2, "steps_per_epoch": 1,
                                    "decay_every_epochs": 1,
                                    "decay_factor": 0.5})
        _, _, history = train(cfg, tiny_dataset())
        np.testing.assert_allclose([h["lr"] for h in history],
                                   [1e-3, 5e-4])


class TestLossDrop:
    def test_halved_loss_reads_point_five(self):
        history = [{"loss": 4.0}] * 10 + [{"loss": 2.0}] * 10
        np.testing.assert_allclose(loss_drop(history, window=10), 0.5)

    def test_short_history_rejected(self):
        with pytest.raises(ValueError):
            loss_drop([{"loss": 1.0}] * 5, window=10)

    def test_rising_loss_goes_negative(self):
        history = [{"loss": 1.0}] * 10 + [{"loss": 2.0}] * 10
        assert loss_drop(history, window=10) < 0
