"""Imbalance-aware supervised training.

Each epoch draws `epoch_draw_factor * samples_per_class` training windows
with replacement, with probability proportional to w_i = M / n_{y_i}, so
every class contributes ~M samples regardless of its raw frequency; the
loss itself stays unweighted. Optimization is Adam with global-norm
gradient clipping and a reduce-on-plateau schedule driven by validation
balanced accuracy.
"""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as te
from .data import NUM_CLASSES, TrackingWindow
from .graphs import EdgeScheme
from .metrics import balanced_accuracy, confusion
from .model import GarModel, collate, predict_windows
from .util import tune_allocator


class TrainError(Exception):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    plateau_threshold: float = 1e-4
    min_lr: float = 2e-8
    clip_max_norm: float = 1.0
    samples_per_class: int = 4000  # M in the sampling formula
    epoch_draw_factor: int = 10  # epoch length = factor * M draws
    max_epochs: int = 50
    early_stop_patience: int = 25
    aug_prob: float = 0.5
    jitter_frames: int = 9
    edge_scheme: str = "positional"
    seed: int = 0
    # optional early exit once validation balanced accuracy reaches a target
    target_val_balacc: float | None = None

    def __post_init__(self):
        if not (0.0 < self.plateau_factor < 1.0):
            raise TrainError("plateau_factor must be in (0, 1)")
        for name in ("batch_size", "lr0", "samples_per_class", "max_epochs",
                     "clip_max_norm", "epoch_draw_factor"):
            if getattr(self, name) <= 0:
                raise TrainError(f"{name} must be positive")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_weights(class_counts, samples_per_class):
    """Per-class draw weight w = M / n_y; every class must be populated."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts <= 0):
        empty = [int(i) for i in np.flatnonzero(counts <= 0)]
        raise TrainError(f"training split has no samples for classes {empty}")
    return samples_per_class / counts


def draw_epoch_indices(labels, class_counts, cfg, rng):
    """One epoch of weighted draws with replacement."""
    w = sample_weights(class_counts, cfg.samples_per_class)[labels]
    p = w / w.sum()
    n_draws = cfg.epoch_draw_factor * cfg.samples_per_class
    return rng.choice(len(labels), size=n_draws, replace=True, p=p)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

TEAM_FLIP_PERM = np.concatenate(
    [np.arange(11, 22), np.arange(0, 11), [22]]
)


def team_flip(window):
    """Swap home/away slot blocks and the is_home/is_away channels."""
    feats = window.features[:, TEAM_FLIP_PERM].copy()
    feats[:, :, [3, 4]] = feats[:, :, [4, 3]]
    return TrackingWindow(
        features=feats,
        present=window.present[:, TEAM_FLIP_PERM].copy(),
        label=window.label,
        source=window.source,
        roles=window.roles[TEAM_FLIP_PERM].copy(),
    )


def axis_flip(window, axis):
    """Negate x (axis=0) or y (axis=1) plus its displacement channel.

    Sentinel channels of absent entities are never negated.
    """
    feats = window.features.copy()
    cols = (0, 6) if axis == 0 else (1, 7)
    for c in cols:
        feats[:, :, c][window.present] *= -1.0
    return TrackingWindow(
        features=feats,
        present=window.present.copy(),
        label=window.label,
        source=window.source,
        roles=window.roles.copy(),
    )


def augment(window, rng, cfg, dataset=None, _warn_state={}):
    """Apply team/horizontal/vertical flips and temporal jitter, each with
    independent probability `cfg.aug_prob`. Label and roles are unchanged.

    Jitter re-extracts the window at a shifted event frame and therefore
    needs the source stream; without a dataset handle it is skipped (once
    with a warning).
    """
    p = cfg.aug_prob
    if rng.random() < p and cfg.jitter_frames > 0:
        if dataset is not None:
            u = int(rng.integers(-cfg.jitter_frames, cfg.jitter_frames + 1))
            mid, frame = window.source
            window = dataset.window(mid, frame + u, window.label)
        elif not _warn_state.get("jitter"):
            _warn_state["jitter"] = True
            print("augment: no stream access, temporal jitter skipped")
    if rng.random() < p:
        window = team_flip(window)
    if rng.random() < p:
        window = axis_flip(window, 0)
    if rng.random() < p:
        window = axis_flip(window, 1)
    return window


# ---------------------------------------------------------------------------
# loss / optimizer / schedule
# ---------------------------------------------------------------------------


def cross_entropy(logits, labels):
    """Mean -log softmax(logits)[label], max-subtraction stabilized.

    logits: Tensor (C,) or (B, C); labels: int or (B,) ints.
    """
    if logits.ndim == 1:
        logits = te.reshape(logits, (1, logits.shape[0]))
        labels = np.array([labels])
    labels = np.asarray(labels, dtype=np.intp)
    B, C = logits.shape
    logp = te.log_softmax(logits, axis=-1)
    picked = te.gather(te.reshape(logp, (B * C,)), np.arange(B) * C + labels)
    return te.scale(te.reduce_mean(picked), -1.0)


def clip_gradients(params, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm. Non-finite norms raise; the caller decides
    whether to skip the step.
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.vdot(p.grad, p.grad))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise TrainError("non-finite gradient norm")
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0


def adam_step(params, state, lr, cfg):
    """Standard bias-corrected Adam update in place."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, p in params.items():
        g = p.grad
        if g is None:
            continue
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


class PlateauScheduler:
    """Reduce-on-plateau on a maximized metric (validation balanced acc)."""

    def __init__(self, cfg):
        self.lr = cfg.lr0
        self.factor = cfg.plateau_factor
        self.patience = cfg.plateau_patience
        self.threshold = cfg.plateau_threshold
        self.min_lr = cfg.min_lr
        self.best = -np.inf
        self.bad_epochs = 0

    def step(self, metric):
        if metric > self.best + self.threshold:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: GarModel
    log: list
    best_val_balacc: float
    best_epoch: int
    best_state: dict = field(repr=False, default=None)


def validate(model, dataset, scheme, split="val", batch_size=64):
    windows = dataset.windows(split)
    preds = predict_windows(model, windows, scheme, batch_size=batch_size)
    labels = dataset.labels(split)
    return balanced_accuracy(confusion(preds, labels, NUM_CLASSES))


def train(dataset, model_config, train_config, out_dir=None, quiet=False):
    """Run the full recipe; returns the best-validation model and the log.

    With `out_dir` set, writes log.jsonl and checkpoint.bin (best epoch)
    under it.
    """
    tune_allocator()
    cfg = train_config
    scheme = EdgeScheme.parse(cfg.edge_scheme)
    model = GarModel(model_config, seed=cfg.seed)
    windows = dataset.windows("train")
    labels = dataset.labels("train")
    class_counts = dataset.class_histogram("train")
    sample_weights(class_counts, cfg.samples_per_class)  # validate up front

    opt = AdamState(model.params)
    sched = PlateauScheduler(cfg)
    best_val, best_epoch, best_state = -np.inf, -1, None
    epochs_since_best = 0
    log = []
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "log.jsonl")
        open(log_path, "w").close()

    prev_checks = te.FINITE_CHECKS
    te.FINITE_CHECKS = False  # the loop guards loss and grad norms itself
    try:
        for epoch in range(cfg.max_epochs):
            t_epoch = time.time()
            rng = np.random.default_rng([cfg.seed, 1000 + epoch])
            order = draw_epoch_indices(labels, class_counts, cfg, rng)
            losses = []
            norms = []
            first_batch_loss = None
            n_batches = (len(order) + cfg.batch_size - 1) // cfg.batch_size
            # With a target set, also check validation every tenth of an
            # epoch so the run can stop as soon as the target is reached
            # (validation is ~1% of an epoch's cost).
            check_every = (
                max(1, n_batches // 10)
                if cfg.target_val_balacc is not None
                else None
            )
            target_hit = None
            for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
                chunk = order[lo : lo + cfg.batch_size]
                ws = [augment(windows[i], rng, cfg, dataset) for i in chunk]
                batch = collate(ws, scheme)
                logits = model.forward(
                    batch.feats, batch.present, batch.edge_src, batch.edge_dst
                )
                loss = cross_entropy(logits, batch.labels)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise TrainError(
                        f"non-finite loss at epoch {epoch} step {lo // cfg.batch_size}: "
                        f"logit range [{logits.data.min()}, {logits.data.max()}]"
                    )
                if first_batch_loss is None:
                    first_batch_loss = loss_val
                model.zero_grad()
                loss.backward()
                try:
                    norm = clip_gradients(model.params, cfg.clip_max_norm)
                except TrainError:
                    if not quiet:
                        print(f"epoch {epoch}: non-finite gradients, step skipped")
                    continue
                adam_step(model.params, opt, sched.lr, cfg)
                losses.append(loss_val)
                norms.append(norm)
                if (
                    check_every is not None
                    and (bi + 1) % check_every == 0
                    and bi + 1 < n_batches
                ):
                    mid_acc = validate(model, dataset, scheme)
                    if mid_acc >= cfg.target_val_balacc:
                        target_hit = mid_acc
                        if not quiet:
                            print(
                                "epoch %d: target val %.2f%% reached after "
                                "%d/%d batches" % (epoch, mid_acc, bi + 1, n_batches)
                            )
                        break

            val_acc = target_hit if target_hit is not None else validate(
                model, dataset, scheme
            )
            lr_used = sched.lr
            sched.step(val_acc)
            improved = val_acc > best_val
            if improved:
                best_val, best_epoch = val_acc, epoch
                best_state = copy.deepcopy(model.state_arrays())
                epochs_since_best = 0
                if out_dir is not None:
                    from .checkpoint import save_checkpoint

                    save_checkpoint(
                        model, os.path.join(out_dir, "checkpoint.bin"), force=True
                    )
            else:
                epochs_since_best += 1

            entry = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "first_batch_loss": first_batch_loss,
                "val_balanced_accuracy": val_acc,
                "lr": lr_used,
                "grad_norm_mean": float(np.mean(norms)),
                "grad_norm_max": float(np.max(norms)),
                "wall_time_s": time.time() - t_epoch,
            }
            log.append(entry)
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry) + "\n")
            if not quiet:
                print(
                    "epoch %d loss %.4f val %.2f%% lr %.2e (%.1fs)"
                    % (epoch, entry["train_loss"], val_acc, lr_used,
                       entry["wall_time_s"])
                )
            if cfg.target_val_balacc is not None and val_acc >= cfg.target_val_balacc:
                break
            if epochs_since_best >= cfg.early_stop_patience:
                break
    finally:
        te.FINITE_CHECKS = prev_checks

    if best_state is not None:
        model.load_state_arrays(best_state)
    return TrainResult(
        model=model,
        log=log,
        best_val_balacc=best_val,
        best_epoch=best_epoch,
        best_state=best_state,
    )
