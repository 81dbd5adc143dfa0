"""The classifier: node projection, deep residual GNN backbone per frame,
masked mean readout, temporal neck, MLP head.

Residual blocks are pre-activation ("res+" style): layernorm -> graph
operator -> ReLU -> add, which keeps 20-layer depth trainable. Absent
entities pass through the pointwise path but are excluded from edges and
from the frame readout, so their feature values can never reach the
logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections import OrderedDict

import numpy as np
import scipy.sparse as sp

from . import tensor as te
from .tensor import Tensor

OPERATORS = ("gin", "graphconv")
TEMPORALS = ("avg", "max", "tcn", "attention")


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    depth: int = 20
    operator: str = "gin"
    temporal: str = "attention"
    heads: int = 4
    head_hidden: int = 256
    classes: int = 10
    tcn_layers: int = 2
    tcn_kernel: int = 3
    frames: int = 16
    features: int = 8

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ModelError(f"unknown gnn operator {self.operator!r}")
        if self.temporal not in TEMPORALS:
            raise ModelError(f"unknown temporal neck {self.temporal!r}")
        if self.depth < 1:
            raise ModelError("depth must be >= 1")
        if self.temporal == "attention" and self.width % self.heads != 0:
            raise ModelError(
                f"width {self.width} not divisible by heads {self.heads}"
            )

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def count_parameters(config):
    """Exact analytic trainable-scalar count with per-component breakdown."""
    d, L = config.width, config.depth
    breakdown = OrderedDict()
    breakdown["projection"] = config.features * d + d
    if config.operator == "gin":
        per_block = 2 * d + 1 + 2 * (d * d + d)
    else:
        per_block = 2 * d + 2 * d * d + d
    breakdown["blocks"] = L * per_block
    if config.temporal == "attention":
        breakdown["temporal"] = 4 * (d * d + d) + config.frames * d
    elif config.temporal == "tcn":
        breakdown["temporal"] = config.tcn_layers * (
            config.tcn_kernel * d * d + d
        )
    else:
        breakdown["temporal"] = 0
    breakdown["head"] = (
        d * config.head_hidden
        + config.head_hidden
        + config.head_hidden * config.classes
        + config.classes
    )
    total = sum(breakdown.values())
    return total, breakdown


class GarModel:
    """Parameter set + forward pass for one ModelConfig."""

    def __init__(self, config, seed=0):
        self.config = config
        self.params = OrderedDict()
        rng = np.random.default_rng(seed)
        d = config.width

        def affine(name, fan_in, fan_out, gain=1.0):
            limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
            self._add(f"{name}.w", rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self._add(f"{name}.b", np.zeros(fan_out))

        # Residual branches are damped by 1/sqrt(L) so the backbone output
        # scale stays O(1) at 20-layer depth.
        damp = 1.0 / np.sqrt(config.depth)
        affine("proj", config.features, d)
        for i in range(config.depth):
            self._add(f"block{i}.ln.g", np.ones(d))
            self._add(f"block{i}.ln.b", np.zeros(d))
            if config.operator == "gin":
                self._add(f"block{i}.eps", np.zeros(1))
                affine(f"block{i}.mlp1", d, d)
                affine(f"block{i}.mlp2", d, d, gain=damp)
            else:
                limit = damp * np.sqrt(6.0 / (2 * d))
                self._add(f"block{i}.w_self", rng.uniform(-limit, limit, size=(d, d)))
                self._add(f"block{i}.w_nbr", rng.uniform(-limit, limit, size=(d, d)))
                self._add(f"block{i}.b", np.zeros(d))
        if config.temporal == "attention":
            for name in ("q", "k", "v", "o"):
                affine(f"attn.{name}", d, d)
            self._add("attn.pos", np.zeros((config.frames, d)))
        elif config.temporal == "tcn":
            K = config.tcn_kernel
            for i in range(config.tcn_layers):
                limit = np.sqrt(6.0 / (K * d + d))
                self._add(f"tcn{i}.w", rng.uniform(-limit, limit, size=(K, d, d)))
                self._add(f"tcn{i}.b", np.zeros(d))
        affine("head.fc1", d, config.head_hidden)
        # Zero-initialized final layer: zero logits at init, so the loss on
        # the first untrained batch is exactly ln(num classes).
        self._add("head.fc2.w", np.zeros((config.head_hidden, config.classes)))
        self._add("head.fc2.b", np.zeros(config.classes))

        analytic, _ = count_parameters(config)
        actual = sum(p.data.size for p in self.params.values())
        assert analytic == actual, (analytic, actual)

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True)

    def __getitem__(self, name):
        return self.params[name]

    def num_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        return OrderedDict((k, v.data) for k, v in self.params.items())

    def load_state_arrays(self, state):
        for k, v in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.data.shape:
                raise ModelError(
                    f"parameter {k}: shape {arr.shape} != expected {v.data.shape}"
                )
            v.data = arr.copy()

    # -- forward -------------------------------------------------------

    def project_nodes(self, feats):
        """(..., D) -> (..., d) affine map, absent nodes included."""
        if feats.shape[-1] != self.config.features:
            raise ModelError(
                f"expected feature dim {self.config.features}, got {feats.shape[-1]}"
            )
        x = feats if isinstance(feats, Tensor) else Tensor(feats)
        return te.affine(x, self["proj.w"], self["proj.b"])

    def gnn_block(self, i, h, adjacency=None, edges=None, num_nodes=None,
                  adjacency_t=None):
        """One pre-activation residual block over a (M, d) node tensor."""
        u = te.layer_norm(h, self[f"block{i}.ln.g"], self[f"block{i}.ln.b"])
        if adjacency is not None:
            agg = te.sparse_matmul(adjacency, u, mat_t=adjacency_t)
        else:
            src, dst = edges
            agg = te.segment_sum(te.gather(u, src), dst, num_nodes)
        if self.config.operator == "gin":
            pre = te.gin_combine(u, agg, self[f"block{i}.eps"])
            m = te.relu(te.affine(pre, self[f"block{i}.mlp1.w"], self[f"block{i}.mlp1.b"]))
            m = te.affine(m, self[f"block{i}.mlp2.w"], self[f"block{i}.mlp2.b"])
        else:
            m = te.add(
                te.matmul(u, self[f"block{i}.w_self"]),
                te.affine(agg, self[f"block{i}.w_nbr"], self[f"block{i}.b"]),
            )
        return te.residual_relu(h, m)

    def frame_embeddings(self, feats, present, edge_src, edge_dst, use_sparse=True):
        """(B, T, N, D) features -> (B, T, d) masked mean readouts."""
        cfg = self.config
        B, T, N, D = feats.shape
        if T != cfg.frames:
            raise ModelError(f"expected {cfg.frames} frames, got {T}")
        M = B * T * N
        h = self.project_nodes(feats.reshape(M, D))
        if use_sparse:
            adjacency = sp.csr_matrix(
                (np.ones(len(edge_src)), (edge_dst, edge_src)), shape=(M, M)
            )
            adjacency_t = adjacency.T.tocsr()
            for i in range(cfg.depth):
                h = self.gnn_block(i, h, adjacency=adjacency,
                                   adjacency_t=adjacency_t)
        else:
            for i in range(cfg.depth):
                h = self.gnn_block(i, h, edges=(edge_src, edge_dst), num_nodes=M)
        return self.frame_readout(h, present.reshape(M), B, T)

    def frame_readout(self, h, present_flat, B, T):
        """Mean over present nodes per frame; absent nodes excluded."""
        N = present_flat.size // (B * T)
        present_idx = np.flatnonzero(present_flat)
        frame_ids = present_idx // N
        counts = np.bincount(frame_ids, minlength=B * T)
        if np.any(counts == 0):
            raise ModelError("frame with no present entities cannot be read out")
        hp = te.gather(h, present_idx)
        sums = te.segment_sum(hp, frame_ids, B * T)
        means = te.mul(sums, Tensor(1.0 / counts[:, None]))
        return te.reshape(means, (B, T, self.config.width))

    def temporal_aggregate(self, z):
        """(B, T, d) frame sequence -> (B, d) clip embedding."""
        cfg = self.config
        if z.shape[1] != cfg.frames:
            raise ModelError(f"expected {cfg.frames} frames, got {z.shape[1]}")
        if cfg.temporal == "avg":
            return te.reduce_mean(z, axis=1)
        if cfg.temporal == "max":
            return te.reduce_max(z, axis=1)
        if cfg.temporal == "tcn":
            y = z
            for i in range(cfg.tcn_layers):
                y = te.relu(te.conv1d_same(y, self[f"tcn{i}.w"], self[f"tcn{i}.b"]))
            return te.reduce_max(y, axis=1)
        # attention
        B, T, d = z.shape
        heads, dh = cfg.heads, d // cfg.heads
        zp = te.add(z, self["attn.pos"])

        def proj(name):
            p = te.affine(zp, self[f"attn.{name}.w"], self[f"attn.{name}.b"])
            return te.transpose(te.reshape(p, (B, T, heads, dh)), (0, 2, 1, 3))

        q, k, v = proj("q"), proj("k"), proj("v")
        scores = te.scale(te.matmul(q, te.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        attn = te.softmax(scores, axis=-1)
        ctx = te.matmul(attn, v)
        ctx = te.reshape(te.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
        out = te.affine(ctx, self["attn.o.w"], self["attn.o.b"])
        return te.reduce_mean(te.add(zp, out), axis=1)

    def classify(self, clip):
        """(B, d) clip embedding -> (B, classes) raw logits."""
        h = te.relu(te.affine(clip, self["head.fc1.w"], self["head.fc1.b"]))
        return te.affine(h, self["head.fc2.w"], self["head.fc2.b"])

    def forward(self, feats, present, edge_src, edge_dst, use_sparse=True):
        z = self.frame_embeddings(feats, present, edge_src, edge_dst, use_sparse)
        return self.classify(self.temporal_aggregate(z))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    feats: np.ndarray  # (B, T, N, D)
    present: np.ndarray  # (B, T, N) bool
    edge_src: np.ndarray
    edge_dst: np.ndarray
    labels: np.ndarray  # (B,) int64


def predict_windows(model, windows, scheme, batch_size=64):
    """Argmax class predictions for a list of windows (no augmentation)."""
    preds = np.empty(len(windows), dtype=np.int64)
    for lo in range(0, len(windows), batch_size):
        batch = collate(windows[lo : lo + batch_size], scheme)
        logits = model.forward(
            batch.feats, batch.present, batch.edge_src, batch.edge_dst
        )
        preds[lo : lo + len(batch.labels)] = np.argmax(logits.data, axis=1)
    return preds


def collate(windows, scheme):
    """Stack windows and merge per-frame edge lists into one node index
    space of size B*T*N."""
    from .graphs import frame_edges_cached

    B = len(windows)
    T, N, D = windows[0].features.shape
    feats = np.stack([w.features for w in windows])
    present = np.stack([w.present for w in windows])
    labels = np.array([w.label for w in windows], dtype=np.int64)
    srcs, dsts = [], []
    for b, w in enumerate(windows):
        for t in range(T):
            src, dst = frame_edges_cached(
                w.positions(t), w.present[t], w.roles, scheme
            )
            offset = (b * T + t) * N
            if len(src):
                srcs.append(src + offset)
                dsts.append(dst + offset)
    edge_src = np.concatenate(srcs) if srcs else np.empty(0, dtype=np.intp)
    edge_dst = np.concatenate(dsts) if dsts else np.empty(0, dtype=np.intp)
    return Batch(feats, present, edge_src, edge_dst, labels)
