"""Command-line entry point and run-directory conventions.

Subcommands: synth, train, eval, ablate, scaling, gradcheck, inspect.
Every training-style run writes config.json (fully resolved), log.jsonl and
report.json under --out; reruns refuse to overwrite unless --force, and a
lock file keeps concurrent writers out of one run directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    CLASS_NAMES,
    MalformedDataError,
    SynthConfig,
    generate_synthetic,
    load_dataset,
)
from .graphs import EdgeScheme, GraphSchemeError
from .metrics import (
    MetricsError,
    ablation_run,
    evaluate,
    scaling_run,
    table6_grid,
)
from .model import GarModel, ModelConfig, ModelError, collate, count_parameters
from .train import TrainConfig, TrainError, train

class CliError(Exception):
    pass


_KNOWN_ERRORS = (
    MalformedDataError,
    GraphSchemeError,
    ModelError,
    TrainError,
    MetricsError,
    CheckpointError,
    CliError,
)


@dataclass
class RunConfig:
    """Flat merge of ModelConfig + TrainConfig + data/out paths."""

    model: ModelConfig
    train: TrainConfig
    data: str = None
    out: str = None

    _MODEL_KEYS = set(ModelConfig.__dataclass_fields__)
    _TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)

    @classmethod
    def resolve(cls, args):
        merged = {}
        if getattr(args, "config", None):
            with open(args.config, "r", encoding="utf-8") as fh:
                merged = json.load(fh)
            if not isinstance(merged, dict):
                raise CliError(f"{args.config}: config must be a JSON object")
        overrides = {
            "width": getattr(args, "width", None),
            "operator": getattr(args, "operator", None),
            "temporal": getattr(args, "neck", None),
            "edge_scheme": getattr(args, "edges", None),
            "seed": getattr(args, "seed", None),
            "data": getattr(args, "data", None),
            "out": getattr(args, "out", None),
        }
        merged.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(merged) - cls._MODEL_KEYS - cls._TRAIN_KEYS - {"data", "out"}
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        model = ModelConfig.from_dict(
            {k: v for k, v in merged.items() if k in cls._MODEL_KEYS}
        )
        tcfg = TrainConfig.from_dict(
            {k: v for k, v in merged.items() if k in cls._TRAIN_KEYS}
        )
        EdgeScheme.parse(tcfg.edge_scheme)  # fail early on bad scheme strings
        return cls(model=model, train=tcfg,
                   data=merged.get("data"), out=merged.get("out"))

    def to_dict(self):
        return {
            **self.model.to_dict(),
            **self.train.to_dict(),
            "data": self.data,
            "out": self.out,
        }


class _RunDir:
    """Creates the run directory, refuses reruns without --force, and holds
    an exclusive lock file for the duration of the run."""

    def __init__(self, path, force=False):
        self.path = path
        os.makedirs(path, exist_ok=True)
        if os.path.exists(os.path.join(path, "config.json")) and not force:
            raise CliError(
                f"{path} already contains a run; pass --force to overwrite"
            )
        self.lock = os.path.join(path, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(f"{self.path} is locked by another process") from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.lock)
        except OSError:
            pass
        return False

    def write_json(self, name, obj):
        with open(os.path.join(self.path, name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise CliError(f"--{name} is required for this subcommand")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args):
    matches = dict(
        zip(("train", "val", "test"), (int(t) for t in args.matches.split(",")))
    )
    cfg = SynthConfig(
        matches_per_split=matches,
        events_per_match=args.events,
        formation=args.formation,
        seed=args.seed if args.seed is not None else 0,
        profile=args.profile,
    )
    splits = generate_synthetic(args.out, cfg)
    print(json.dumps({s: len(ids) for s, ids in splits.items()}))
    return 0


def _cmd_train(args):
    run = RunConfig.resolve(args)
    _require(args, "data", "out")
    dataset = load_dataset(run.data)
    with _RunDir(run.out, force=args.force) as rd:
        rd.write_json("config.json", run.to_dict())
        t0 = time.time()
        result = train(dataset, run.model, run.train, out_dir=run.out,
                       quiet=args.quiet)
        report = evaluate(
            result.model, dataset, "test", run.train.edge_scheme,
            train_wall_time=time.time() - t0,
        )
        rd.write_json("report.json", report.to_dict())
    print(
        f"best val {result.best_val_balacc:.2f}% (epoch {result.best_epoch}); "
        f"test balanced accuracy {report.balanced_accuracy:.2f}%"
    )
    return 0


def _cmd_eval(args):
    run = RunConfig.resolve(args)
    _require(args, "data")
    if args.checkpoint is None:
        raise CliError("--checkpoint is required for eval")
    dataset = load_dataset(run.data)
    model = load_checkpoint(args.checkpoint)
    report = evaluate(model, dataset, args.split, run.train.edge_scheme)
    out = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if run.out:
        os.makedirs(run.out, exist_ok=True)
        with open(os.path.join(run.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    print(out)
    return 0


def _cmd_ablate(args):
    run = RunConfig.resolve(args)
    _require(args, "data", "out")
    dataset = load_dataset(run.data)
    with _RunDir(run.out, force=args.force) as rd:
        rd.write_json("config.json", run.to_dict())
        grid = table6_grid(run.model.operator, run.model.temporal)
        csv_path = os.path.join(run.out, "ablation.csv")
        rows = ablation_run(grid, dataset, run.model, run.train, csv_path)
        with open(os.path.join(run.out, "log.jsonl"), "w", encoding="utf-8") as fh:
            for (op, neck, edges), row in zip(grid, rows):
                fh.write(json.dumps({"operator": op, "temporal": neck,
                                     "edges": edges, "row": row}) + "\n")
        rd.write_json("report.json", {"csv": csv_path, "cells": len(rows)})
    print(f"wrote {csv_path} ({len(rows)} cells)")
    return 0


def _cmd_scaling(args):
    run = RunConfig.resolve(args)
    _require(args, "data", "out")
    counts = [int(t) for t in args.counts.split(",")]
    dataset = load_dataset(run.data)
    with _RunDir(run.out, force=args.force) as rd:
        rd.write_json("config.json", run.to_dict())
        csv_path = os.path.join(run.out, "scaling.csv")
        points = scaling_run(counts, dataset, run.model, run.train, csv_path)
        with open(os.path.join(run.out, "log.jsonl"), "w", encoding="utf-8") as fh:
            for c, acc in points:
                fh.write(json.dumps({"matches": c, "balanced_accuracy": acc}) + "\n")
        rd.write_json("report.json", {"csv": csv_path, "points": points})
    print(f"wrote {csv_path} ({len(points)} points)")
    return 0


def _cmd_gradcheck(args):
    from . import tensor as te
    from .train import cross_entropy

    run = RunConfig.resolve(args)
    _require(args, "data")
    dataset = load_dataset(run.data)
    windows = dataset.windows("train")[: args.batch]
    if not windows:
        raise CliError("train split is empty")
    batch = collate(windows, EdgeScheme.parse(run.train.edge_scheme))
    model = GarModel(run.model, seed=run.train.seed)
    points = list(model.params.values())
    names = list(model.params)

    def fn(*params):
        for name, p in zip(names, params):
            model.params[name] = p
        logits = model.forward(
            batch.feats, batch.present, batch.edge_src, batch.edge_dst
        )
        return cross_entropy(logits, batch.labels)

    report = te.grad_check(fn, points, rng=np.random.default_rng(run.train.seed))
    print(report)
    return 0 if report.passed else 1


def _cmd_inspect(args):
    run = RunConfig.resolve(args)
    _require(args, "data")
    dataset = load_dataset(run.data)
    total, breakdown = count_parameters(run.model)
    summary = {
        "splits": {
            s: {
                "matches": len(ids),
                "events": dataset.num_events(s),
                "class_histogram": dict(
                    zip(CLASS_NAMES, dataset.class_histogram(s).tolist())
                ),
            }
            for s, ids in dataset.manifest.splits.items()
        },
        "parameter_count": total,
        "parameter_breakdown": dict(breakdown),
    }
    print(json.dumps(summary, indent=2))
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _add_common(p, out_required=False):
    p.add_argument("--config", help="JSON config file (flat key/value)")
    p.add_argument("--data", help="dataset root directory")
    p.add_argument("--out", required=out_required, help="run output directory")
    p.add_argument("--seed", type=int, help="global seed override")
    p.add_argument("--edges", help='edge scheme, e.g. "positional", "knn:8"')
    p.add_argument("--neck", help="temporal neck: avg | max | tcn | attention")
    p.add_argument("--operator", help="graph operator: gin | graphconv")
    p.add_argument("--width", type=int, help="embedding width")
    p.add_argument("--force", action="store_true", help="overwrite an existing run")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="posgar",
        description="Group activity recognition from multi-agent tracking data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matches", default="20,4,4",
                   help="train,val,test match counts")
    p.add_argument("--events", type=int, default=200, help="events per match")
    p.add_argument("--formation", default="4-4-2")
    p.add_argument("--profile", default="imbalanced",
                   choices=("imbalanced", "balanced"))
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file to evaluate")
    p.add_argument("--split", default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the 7-scheme edge ablation grid")
    _add_common(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("scaling", help="train on nested train-match subsets")
    _add_common(p)
    p.add_argument("--counts", default="5,10,20",
                   help="comma-separated match counts")
    p.set_defaults(func=_cmd_scaling)

    p = sub.add_parser("gradcheck", help="finite-difference check of the model")
    _add_common(p)
    p.add_argument("--batch", type=int, default=4, help="windows in the batch")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="dataset and parameter summary")
    _add_common(p)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFoundError", "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
