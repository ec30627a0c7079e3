"""Command line interface.

Subcommands: gen-data (render a synthetic dataset), train, eval,
gradcheck (full-pipeline finite-difference validation), ablate (axis
sweeps). Any failure exits nonzero.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from graphreid import ablate as ablatemod
from graphreid import checkpoint as ckpt
from graphreid import config as cfgmod
from graphreid import synth
from graphreid.evaluate import evaluate_model, format_report
from graphreid.gradcheck import full_pipeline_check
from graphreid.model import PartGraphNetwork
from graphreid.train import train

GRADCHECK_TOL = 1e-4


def _check_data_matches(cfg, dataset):
    t, h, w, c = dataset.clip_shape()
    if c != cfg["channels"] or t != cfg["frames"]:
        raise cfgmod.ConfigError(
            f"dataset clips are T={t}, C={c} but the configuration "
            f"expects T={cfg['frames']}, C={cfg['channels']}")


def cmd_gen_data(args):
    spec = cfgmod.load_synth_spec(args.spec)
    dataset = synth.generate_dataset(spec)
    synth.save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} clips "
          f"({spec['identities']} identities, {spec['cameras']} cameras) "
          f"to {args.out}")
    return 0


def cmd_train(args):
    cfg = cfgmod.load_run_config(args.config)
    dataset = synth.load_dataset(args.data)
    _check_data_matches(cfg, dataset)
    model, optimizer, history = train(cfg, dataset, log=print)
    meta = {
        "num_classes": model.num_classes,
        "config_text": np.frombuffer(
            cfgmod.serialize_run_config(cfg).encode("utf-8"),
            dtype=np.uint8),
    }
    ckpt.save(args.out, model, optimizer,
              arch_hash=cfgmod.architecture_hash(cfg), extra_meta=meta)
    log_path = args.out + ".log"
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(f"step {entry['step']} lr {entry['lr']:.6e} "
                     f"loss {entry['loss']:.6f} tri {entry['tri']:.6f} "
                     f"ide {entry['ide']:.6f} div {entry['div']:.6f}\n")
    print(f"saved checkpoint to {args.out} (metrics log: {log_path})")
    return 0


def model_from_checkpoint(path):
    """Rebuild the network a checkpoint was trained with."""
    records = ckpt.read_records(path)
    text_arr = records.get(ckpt.META_PREFIX + "config_text")
    if text_arr is None:
        raise ckpt.CheckpointError(
            f"{path}: no embedded configuration; cannot rebuild the model")
    cfg_text = text_arr.astype(np.uint8).tobytes().decode("utf-8")
    cfg = cfgmod.parse_config_text(cfg_text, cfgmod.RUN_SCHEMA,
                                   source=f"{path}:config")
    cfgmod.validate_run_config(cfg)
    num_classes = ckpt.meta_int(records, "num_classes")
    if num_classes is None:
        raise ckpt.CheckpointError(f"{path}: missing class count")
    model = PartGraphNetwork(cfg, num_classes=num_classes)
    ckpt.apply_state(model, records,
                     expect_hash=cfgmod.architecture_hash(cfg))
    return model, cfg


def cmd_eval(args):
    model, cfg = model_from_checkpoint(args.ckpt)
    dataset = synth.load_dataset(args.data)
    _check_data_matches(cfg, dataset)
    result = evaluate_model(model, dataset, metric=cfg["eval_metric"])
    report = format_report(result, cfg["eval_metric"])
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report)
    print(report, end="")
    return 0


def cmd_gradcheck(args):
    cfg = cfgmod.load_run_config(args.config)
    max_err, report = full_pipeline_check(cfg)
    worst = sorted(report.items(), key=lambda kv: -kv[1])[:5]
    for name, err in worst:
        print(f"  {name}: {err:.3e}")
    print(f"max relative error: {max_err:.3e} (tolerance {GRADCHECK_TOL})")
    if max_err >= GRADCHECK_TOL:
        print("gradcheck FAILED")
        return 1
    print("gradcheck passed")
    return 0


def cmd_ablate(args):
    cfg = cfgmod.load_run_config(args.config)
    results = ablatemod.run_axis(cfg, args.axis, log=print)
    print()
    print(ablatemod.markdown_table(args.axis, results), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="graphreid",
        description="multi-scale spatial-temporal graph re-id")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--spec", required=True, help="synthesis spec file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", required=True, help="report output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient validation")
    p.add_argument("--config", required=True, help="run configuration file")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run an ablation axis sweep")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--axis", required=True,
                   choices=sorted(ablatemod.AXES),
                   help="which axis to sweep")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
