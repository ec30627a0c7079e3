"""Flat key-value configuration files.

Format: UTF-8 text, one ``key = value`` per line, ``#`` starts a comment,
blank lines ignored. Every key must belong to the declared schema; unknown
keys are hard errors so a typo in an ablation switch cannot silently run
the wrong experiment.

Two schemas live here: the run configuration (model + training + eval)
and the synthetic data specification.
"""

from __future__ import annotations

import hashlib

from graphreid.partition import (DEFAULT_S2_GROUPS, DEFAULT_S3_GROUPS,
                                 ScaleGrouping)
from graphreid.topology import COCO_EDGES


class ConfigError(ValueError):
    """Malformed file, unknown key, bad value, or failed validation."""


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'")


def parse_groups(text):
    """Part grouping string: groups split by '|', members by ','.

    Example: '0,1,2|3,4' is two groups.
    """
    try:
        return tuple(tuple(int(k) for k in part.split(","))
                     for part in text.split("|"))
    except ValueError as exc:
        raise ConfigError(f"bad grouping '{text}': {exc}") from None


def format_groups(groups):
    return "|".join(",".join(str(k) for k in g) for g in groups)


def parse_edges(text):
    """Skeleton edge string: pairs split by ',', endpoints by '-'."""
    try:
        edges = []
        for pair in text.split(","):
            u, v = pair.split("-")
            edges.append((int(u), int(v)))
        return tuple(edges)
    except ValueError as exc:
        raise ConfigError(f"bad edge list '{text}': {exc}") from None


def format_edges(edges):
    return ",".join(f"{u}-{v}" for u, v in edges)


# name -> (parser, default). Defaults are the desk-scale setup.
RUN_SCHEMA = {
    "seed": (int, 0),
    "channels": (int, 40),
    "frames": (int, 6),
    "height": (int, 8),
    "width": (int, 4),
    "tau": (int, 3),
    "num_layers": (int, 2),
    "alpha": (float, 0.3),
    "cs_embed_dim": (int, 0),          # 0 = channels // 4
    "cs_stages": (int, 1),
    "cs_scales": (str, "s1+s2+s3"),
    "use_physical": (_parse_bool, True),
    "use_mask": (_parse_bool, True),
    "use_context": (_parse_bool, True),
    "relu_after_squeeze": (_parse_bool, False),
    "margin": (float, 0.3),
    "epsilon": (float, 0.1),
    "lambda_tri": (float, 1.0),
    "lambda_ide": (float, 1.0),
    "lambda_div": (float, 1.0),
    "share_classifier": (_parse_bool, False),
    "triplet_metric": (str, "euclidean"),
    "eval_metric": (str, "cosine"),
    "lr": (float, 3e-4),
    "weight_decay": (float, 5e-4),
    "batch_identities": (int, 8),
    "clips_per_identity": (int, 4),
    "steps": (int, 200),
    "steps_per_epoch": (int, 0),       # 0 = derive from dataset size
    "decay_every_epochs": (int, 60),
    "decay_factor": (float, 0.1),
    "log_every": (int, 10),
    "s2_groups": (parse_groups, DEFAULT_S2_GROUPS),
    "s3_groups": (parse_groups, DEFAULT_S3_GROUPS),
    "skeleton_edges": (parse_edges, COCO_EDGES),
}

SYNTH_SCHEMA = {
    "seed": (int, 0),
    "identities": (int, 8),
    "cameras": (int, 2),
    "clips_per_identity_per_camera": (int, 2),
    "frames": (int, 6),
    "height": (int, 8),
    "width": (int, 4),
    "channels": (int, 40),
    "noise_level": (float, 0.3),
    "occlusion_prob": (float, 0.1),
    "jitter": (float, 0.5),
    "camera_mixing": (float, 0.25),
    "heatmap_sigma": (float, 1.2),
    "heatmap_gain": (float, 8.0),
}

# Keys that change what a stored parameter set means. Two runs sharing
# these produce interchangeable checkpoints; the hash of this subset is
# stored in every checkpoint.
ARCHITECTURE_KEYS = (
    "channels", "frames", "tau", "num_layers", "alpha",
    "cs_embed_dim", "cs_stages", "cs_scales",
    "use_physical", "use_mask", "use_context", "relu_after_squeeze",
    "share_classifier", "s2_groups", "s3_groups", "skeleton_edges",
)

CS_SCALE_CHOICES = ("s3", "s1+s3", "s2+s3", "s1+s2+s3")
METRIC_CHOICES = ("euclidean", "cosine")


def parse_config_text(text, schema, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got '{raw}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        parser = schema[key][0]
        try:
            values[key] = parser(value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(
                f"{source}:{lineno}: bad value for '{key}': {exc}") from None
    for key, (_, default) in schema.items():
        values.setdefault(key, default)
    return values


def load_run_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config_text(fh.read(), RUN_SCHEMA, source=str(path))
    validate_run_config(cfg)
    return cfg


def default_run_config(**overrides):
    cfg = {key: default for key, (_, default) in RUN_SCHEMA.items()}
    for key, value in overrides.items():
        if key not in RUN_SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        cfg[key] = value
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg):
    grouping = ScaleGrouping(cfg["s2_groups"], cfg["s3_groups"])
    n_s3 = len(grouping.s3_groups)
    if cfg["channels"] % n_s3 != 0:
        raise ConfigError(
            f"channels={cfg['channels']} must be divisible by the "
            f"{n_s3}-part coarse scale (concatenation branch)")
    if cfg["tau"] < 1 or cfg["tau"] % 2 == 0:
        raise ConfigError(f"tau must be odd and positive, got {cfg['tau']}")
    if cfg["num_layers"] < 1:
        raise ConfigError("num_layers must be at least 1")
    if cfg["cs_stages"] < 1:
        raise ConfigError("cs_stages must be at least 1")
    if cfg["cs_scales"] not in CS_SCALE_CHOICES:
        raise ConfigError(
            f"cs_scales must be one of {CS_SCALE_CHOICES}, "
            f"got '{cfg['cs_scales']}'")
    if cfg["triplet_metric"] not in METRIC_CHOICES:
        raise ConfigError(f"triplet_metric must be one of {METRIC_CHOICES}")
    if cfg["eval_metric"] not in METRIC_CHOICES:
        raise ConfigError(f"eval_metric must be one of {METRIC_CHOICES}")
    if not 0.0 <= cfg["epsilon"] < 1.0:
        raise ConfigError("epsilon must lie in [0, 1)")
    for key in ("lambda_tri", "lambda_ide", "lambda_div"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} must be nonnegative")
    if not (cfg["use_physical"] or cfg["use_mask"] or cfg["use_context"]):
        raise ConfigError("at least one adjacency component must be enabled")
    return cfg


def load_synth_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        spec = parse_config_text(fh.read(), SYNTH_SCHEMA, source=str(path))
    validate_synth_spec(spec)
    return spec


def default_synth_spec(**overrides):
    spec = {key: default for key, (_, default) in SYNTH_SCHEMA.items()}
    for key, value in overrides.items():
        if key not in SYNTH_SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        spec[key] = value
    validate_synth_spec(spec)
    return spec


def validate_synth_spec(spec):
    for key in ("identities", "cameras", "clips_per_identity_per_camera",
                "frames", "height", "width", "channels"):
        if spec[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if not 0.0 <= spec["occlusion_prob"] <= 1.0:
        raise ConfigError("occlusion_prob must lie in [0, 1]")
    return spec


def _canonical(key, value):
    if key == "skeleton_edges":
        return format_edges(value)
    if key in ("s2_groups", "s3_groups"):
        return format_groups(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def architecture_hash(cfg):
    """8-byte digest of the architecture-relevant keys."""
    text = "\n".join(f"{key}={_canonical(key, cfg[key])}"
                     for key in ARCHITECTURE_KEYS)
    return hashlib.sha256(text.encode("utf-8")).digest()[:8]


def serialize_run_config(cfg):
    """Canonical text form (every key, schema order); parses back equal."""
    return "\n".join(f"{key} = {_canonical(key, cfg[key])}"
                     for key in RUN_SCHEMA) + "\n"


def cs_scale_flags(cfg):
    """(use_s1, use_s2) source toggles from the cs_scales choice."""
    parts = set(cfg["cs_scales"].split("+"))
    return "s1" in parts, "s2" in parts


def embed_dim(cfg):
    if cfg["cs_embed_dim"] > 0:
        return cfg["cs_embed_dim"]
    return max(1, cfg["channels"] // 4)


def grouping_from_config(cfg):
    return ScaleGrouping(cfg["s2_groups"], cfg["s3_groups"])
