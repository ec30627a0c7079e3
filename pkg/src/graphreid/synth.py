"""Deterministic synthetic clip generator and dataset files.

Each identity gets a fixed random signature vector per key-point. A clip
renders those signatures as Gaussian blobs at jittered canonical body
locations, mixes channels with a camera-specific matrix, and adds noise;
heatmaps are Gaussian bumps at the same locations, dimmed when a key-point
is occluded. Everything is a pure function of the spec seed.

On disk a dataset is a directory of three files: ``meta.json`` (layout
and clip labels), ``features.bin`` and ``heatmaps.bin`` (raw little-endian
float32, C-order). Fixed key order and raw arrays keep generation
byte-reproducible.
"""

from __future__ import annotations

import json
import os

import numpy as np

from graphreid.partition import NUM_KEYPOINTS

# Canonical key-point layout in unit coordinates (row, column), loosely a
# standing figure: head cluster on top, feet at the bottom.
CANONICAL_LAYOUT = np.array([
    (0.06, 0.50),   # nose
    (0.04, 0.42),   # l_eye
    (0.04, 0.58),   # r_eye
    (0.07, 0.33),   # l_ear
    (0.07, 0.67),   # r_ear
    (0.22, 0.25),   # l_shoulder
    (0.22, 0.75),   # r_shoulder
    (0.38, 0.18),   # l_elbow
    (0.38, 0.82),   # r_elbow
    (0.52, 0.12),   # l_wrist
    (0.52, 0.88),   # r_wrist
    (0.55, 0.35),   # l_hip
    (0.55, 0.65),   # r_hip
    (0.74, 0.32),   # l_knee
    (0.74, 0.68),   # r_knee
    (0.93, 0.30),   # l_ankle
    (0.93, 0.70),   # r_ankle
], dtype=np.float64)

OCCLUSION_DIM = 0.1

META_NAME = "meta.json"
FEATURES_NAME = "features.bin"
HEATMAPS_NAME = "heatmaps.bin"


class Dataset:
    """In-memory clip collection with identity and camera labels."""

    def __init__(self, features, heatmaps, labels, cameras, spec=None):
        self.features = features        # (N, T, H, W, C) float32
        self.heatmaps = heatmaps        # (N, T, 17, H, W) float32
        self.labels = np.asarray(labels, dtype=np.int64)
        self.cameras = np.asarray(cameras, dtype=np.int64)
        self.spec = dict(spec) if spec else {}

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_identities(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def clip_shape(self):
        """(T, H, W, C) of one clip."""
        n, t, h, w, c = self.features.shape
        return t, h, w, c


def generate_dataset(spec):
    """Render every clip for a spec dict (see config.SYNTH_SCHEMA)."""
    rng = np.random.default_rng(spec["seed"])
    t, h, w, c = (spec["frames"], spec["height"], spec["width"],
                  spec["channels"])
    n_ids, n_cams = spec["identities"], spec["cameras"]
    per = spec["clips_per_identity_per_camera"]

    # per-identity, per-key-point unit signatures
    signatures = rng.normal(size=(n_ids, NUM_KEYPOINTS, c))
    signatures /= np.linalg.norm(signatures, axis=-1, keepdims=True)
    # camera channel mixing I + eta * R
    mixing = np.stack([
        np.eye(c) + spec["camera_mixing"] * rng.normal(size=(c, c)) / np.sqrt(c)
        for _ in range(n_cams)
    ])

    base = CANONICAL_LAYOUT * np.array([h - 1, w - 1])
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    sigma2 = 2.0 * spec["heatmap_sigma"] ** 2

    features, heatmaps, labels, cameras = [], [], [], []
    for identity in range(n_ids):
        for camera in range(n_cams):
            for _ in range(per):
                jitter = spec["jitter"] * rng.normal(
                    size=(t, NUM_KEYPOINTS, 2))
                points = np.clip(base + jitter,
                                 0.0, [h - 1, w - 1])
                occluded = rng.random((t, NUM_KEYPOINTS)) \
                    < spec["occlusion_prob"]
                amp = np.where(occluded, OCCLUSION_DIM, 1.0)
                clip_f = np.zeros((t, h, w, c))
                clip_m = np.zeros((t, NUM_KEYPOINTS, h, w))
                for frame in range(t):
                    for k in range(NUM_KEYPOINTS):
                        py, px = points[frame, k]
                        bump = np.exp(-((rows - py) ** 2 + (cols - px) ** 2)
                                      / sigma2)
                        clip_m[frame, k] = (amp[frame, k]
                                            * spec["heatmap_gain"] * bump)
                        signal = mixing[camera] @ signatures[identity, k]
                        clip_f[frame] += bump[:, :, None] * signal
                clip_f += spec["noise_level"] * rng.normal(size=clip_f.shape)
                features.append(clip_f.astype(np.float32))
                heatmaps.append(clip_m.astype(np.float32))
                labels.append(identity)
                cameras.append(camera)
    return Dataset(np.stack(features), np.stack(heatmaps),
                   labels, cameras, spec)


def save_dataset(dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    n, t, h, w, c = dataset.features.shape
    meta = {
        "clips": int(n),
        "frames": int(t),
        "height": int(h),
        "width": int(w),
        "channels": int(c),
        "num_keypoints": int(dataset.heatmaps.shape[2]),
        "labels": [int(x) for x in dataset.labels],
        "cameras": [int(x) for x in dataset.cameras],
        "spec": {k: dataset.spec[k] for k in sorted(dataset.spec)},
    }
    with open(os.path.join(out_dir, META_NAME), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    dataset.features.astype("<f4").tofile(
        os.path.join(out_dir, FEATURES_NAME))
    dataset.heatmaps.astype("<f4").tofile(
        os.path.join(out_dir, HEATMAPS_NAME))


def load_dataset(data_dir):
    meta_path = os.path.join(data_dir, META_NAME)
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    n, t, h, w, c = (meta["clips"], meta["frames"], meta["height"],
                     meta["width"], meta["channels"])
    k = meta["num_keypoints"]
    features = np.fromfile(os.path.join(data_dir, FEATURES_NAME),
                           dtype="<f4")
    heatmaps = np.fromfile(os.path.join(data_dir, HEATMAPS_NAME),
                           dtype="<f4")
    if features.size != n * t * h * w * c:
        raise ValueError(f"feature file size does not match {meta_path}")
    if heatmaps.size != n * t * k * h * w:
        raise ValueError(f"heatmap file size does not match {meta_path}")
    return Dataset(features.reshape(n, t, h, w, c),
                   heatmaps.reshape(n, t, k, h, w),
                   meta["labels"], meta["cameras"], meta.get("spec"))
