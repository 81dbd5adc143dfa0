"""Evaluation: confusion matrices, balanced accuracy, per-class analysis,
the ablation grid, and the data-scaling harness.

Balanced accuracy is the arithmetic mean of per-class recalls over classes
with at least one true sample, reported in percent. Classes absent from an
evaluation split are excluded from the mean.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES, NUM_CLASSES, Dataset
from .graphs import EdgeScheme
from .model import ModelConfig, predict_windows


class MetricsError(Exception):
    pass


# ---------------------------------------------------------------------------
# metric arithmetic
# ---------------------------------------------------------------------------


def confusion(preds, labels, num_classes=NUM_CLASSES):
    """(true, predicted) count matrix in frozen class order."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise MetricsError(
            f"length mismatch: {preds.shape[0]} predictions vs "
            f"{labels.shape[0]} labels"
        )
    if preds.size and (
        preds.min() < 0 or preds.max() >= num_classes
        or labels.min() < 0 or labels.max() >= num_classes
    ):
        raise MetricsError("class index out of range")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def per_class_recall(cm):
    """Diagonal / row sum in percent; NaN for classes with no true samples."""
    cm = np.asarray(cm, dtype=np.float64)
    row = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return 100.0 * np.diag(cm) / row


def balanced_accuracy(cm):
    """Mean per-class recall (percent) over classes with >= 1 true sample."""
    cm = np.asarray(cm)
    row = cm.sum(axis=1)
    if not np.any(row > 0):
        raise MetricsError("balanced accuracy undefined for an all-zero matrix")
    rec = per_class_recall(cm)
    return float(np.mean(rec[row > 0]))


def micro_accuracy(cm):
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise MetricsError("micro accuracy undefined for an all-zero matrix")
    return float(100.0 * np.trace(cm) / total)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    confusion: list  # 10x10 counts, rows = true class
    per_class_recall: list  # percent, None for classes with no samples
    balanced_accuracy: float  # percent
    micro_accuracy: float  # percent
    parameter_count: int
    train_wall_time: float
    config_fingerprint: str
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise MetricsError(f"unknown report keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def evaluate(model, dataset, split, scheme, train_wall_time=0.0):
    """Deterministic un-augmented pass over a split -> MetricsReport."""
    from .checkpoint import config_fingerprint

    if isinstance(scheme, str):
        scheme = EdgeScheme.parse(scheme)
    windows = dataset.windows(split)
    if not windows:
        raise MetricsError(f"split {split!r} is empty")
    preds = predict_windows(model, windows, scheme)
    cm = confusion(preds, dataset.labels(split))
    rec = per_class_recall(cm)
    return MetricsReport(
        confusion=cm.tolist(),
        per_class_recall=[None if np.isnan(r) else float(r) for r in rec],
        balanced_accuracy=balanced_accuracy(cm),
        micro_accuracy=micro_accuracy(cm),
        parameter_count=model.num_parameters(),
        train_wall_time=train_wall_time,
        config_fingerprint=config_fingerprint(model.config),
    )


def evaluate_checkpoint(path, dataset, split, scheme, expected_config=None):
    from .checkpoint import load_checkpoint

    model = load_checkpoint(path, expected_config=expected_config)
    return evaluate(model, dataset, split, scheme)


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

ABLATION_CSV_HEADER = (
    ["operator", "temporal", "edges", "params", "balanced_accuracy"]
    + [name.replace(" ", "_") for name in CLASS_NAMES]
)


def _run_cell(cell, dataset, base_model_config, train_config):
    from .train import TrainConfig, train

    operator, temporal, edges = cell
    model_config = ModelConfig.from_dict(
        {**base_model_config.to_dict(), "operator": operator, "temporal": temporal}
    )
    tcfg = TrainConfig.from_dict({**train_config.to_dict(), "edge_scheme": edges})
    t0 = time.time()
    result = train(dataset, model_config, tcfg, quiet=True)
    report = evaluate(
        result.model, dataset, "test", edges, train_wall_time=time.time() - t0
    )
    return report


def ablation_run(grid, dataset, base_model_config, train_config, out_csv):
    """Train/evaluate every (operator, temporal, edge-scheme) cell with a
    shared seed and data; one CSV row per cell. Cell failures are recorded
    and remaining cells continue.
    """
    grid = list(grid)
    if not grid:
        raise MetricsError("empty ablation grid")
    workers = max(1, int(os.environ.get("POSGAR_THREADS", "1")))
    results = [None] * len(grid)

    def run(i):
        try:
            results[i] = _run_cell(grid[i], dataset, base_model_config, train_config)
        except Exception as exc:  # record, keep going
            results[i] = exc

    if workers == 1:
        for i in range(len(grid)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(grid))))

    rows = []
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_CSV_HEADER)
        for cell, res in zip(grid, results):
            operator, temporal, edges = cell
            if isinstance(res, Exception):
                row = [operator, temporal, edges, "", f"ERROR: {res}"] + [""] * NUM_CLASSES
            else:
                row = (
                    [operator, temporal, edges, res.parameter_count,
                     f"{res.balanced_accuracy:.2f}"]
                    + ["" if r is None else f"{r:.1f}" for r in res.per_class_recall]
                )
            writer.writerow(row)
            rows.append(row)
    return rows


def table6_grid(operator="gin", temporal="max"):
    """The 7-row edge-connectivity axis with a fixed operator and neck."""
    schemes = ("none", "full", "knn:8", "distance:15", "ball_knn:8",
               "ball_distance:20", "positional")
    return [(operator, temporal, s) for s in schemes]


# ---------------------------------------------------------------------------
# scaling harness
# ---------------------------------------------------------------------------


def _train_subset(dataset, n_matches):
    """Dataset view whose train split keeps only the first n match ids
    (nested: smaller subsets are prefixes of larger ones)."""
    ids = dataset.manifest.splits["train"][:n_matches]
    keep = set(ids)
    events = dict(dataset.events)
    events["train"] = [e for e in dataset.events["train"] if e[0] in keep]
    return Dataset(dataset.manifest, dataset.streams, events)


def scaling_run(match_counts, dataset, model_config, train_config, out_csv):
    """Train on nested train-match subsets, evaluate on the fixed test split,
    emit a (matches, events, balanced_accuracy) CSV curve."""
    from .train import train

    available = len(dataset.manifest.splits["train"])
    counts = sorted(set(int(c) for c in match_counts))
    for c in counts:
        if c < 1 or c > available:
            raise MetricsError(
                f"requested {c} training matches, only {available} available"
            )
    points = []
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matches", "train_events", "balanced_accuracy"])
        for c in counts:
            sub = _train_subset(dataset, c)
            t0 = time.time()
            result = train(sub, model_config, train_config, quiet=True)
            report = evaluate(
                result.model, sub, "test", train_config.edge_scheme,
                train_wall_time=time.time() - t0,
            )
            row = [c, sub.num_events("train"), f"{report.balanced_accuracy:.2f}"]
            writer.writerow(row)
            points.append((c, report.balanced_accuracy))
    return points
