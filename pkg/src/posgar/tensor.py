"""Dense-tensor algebra with reverse-mode automatic differentiation.

Define-by-run: every operation appends a node to the implicit tape (the
graph of ``Tensor`` objects), and ``backward()`` replays it in reverse
topological order, accumulating gradients into every ``requires_grad``
leaf. All arithmetic is float64; kernels are numpy/scipy-backed but each
one carries an exact hand-written backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# Global toggle for NaN/Inf detection on kernel outputs. Cheap relative to
# the matmuls, so it stays on by default.
FINITE_CHECKS = True

# Active kink monitor (set by `watch_kinks`), used by grad_check to detect
# evaluations too close to a ReLU / max non-differentiability.
_KINK_MONITOR = None


class TensorError(Exception):
    """Shape mismatch, non-finite values, or misuse of the engine."""


class watch_kinks:
    """Context manager recording how close ReLU/max inputs come to a kink."""

    def __init__(self):
        self.min_margin = np.inf

    def __enter__(self):
        global _KINK_MONITOR
        self._prev = _KINK_MONITOR
        _KINK_MONITOR = self
        return self

    def __exit__(self, *exc):
        global _KINK_MONITOR
        _KINK_MONITOR = self._prev
        return False

    def note(self, margin):
        if margin < self.min_margin:
            self.min_margin = margin


def _note_kink(margin):
    if _KINK_MONITOR is not None:
        _KINK_MONITOR.note(float(margin))


def _check_finite(kernel, out, *operands):
    if not FINITE_CHECKS:
        return
    # single-pass reduction: NaN/Inf in any element poisons the sum
    if not np.isfinite(np.sum(out)):
        stats = "; ".join(
            "operand %d: min=%g max=%g" % (i, np.nanmin(o), np.nanmax(o))
            for i, o in enumerate(operands)
        )
        raise TensorError(f"non-finite output in kernel '{kernel}' ({stats})")


def _reduce_to_shape(grad, shape):
    """Sum `grad` over broadcast axes so it matches `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 n-d value participating in reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph traversal ------------------------------------------------

    def backward(self):
        """Populate gradients of this scalar w.r.t. every requires_grad leaf.

        Repeated calls without `zero_grad` accumulate.
        """
        if self.data.size != 1:
            raise TensorError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not (parent.requires_grad or parent._parents):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, kernel, *operands):
    _check_finite(kernel, data, *operands)
    needs = any(p.requires_grad or p._parents for p in parents)
    if not needs:
        return Tensor(data)
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward
    # propagate "on the tape" marker so intermediate results keep the graph
    out.requires_grad = False
    return out


# ---------------------------------------------------------------------------
# elementwise / affine kernels
# ---------------------------------------------------------------------------


def add(a, b):
    out = a.data + b.data

    def bwd(g):
        return (
            (a, _reduce_to_shape(g, a.data.shape)),
            (b, _reduce_to_shape(g, b.data.shape)),
        )

    return _node(out, (a, b), bwd, "add", a.data, b.data)


def sub(a, b):
    out = a.data - b.data

    def bwd(g):
        return (
            (a, _reduce_to_shape(g, a.data.shape)),
            (b, _reduce_to_shape(-g, b.data.shape)),
        )

    return _node(out, (a, b), bwd, "sub", a.data, b.data)


def mul(a, b):
    out = a.data * b.data

    def bwd(g):
        return (
            (a, _reduce_to_shape(g * b.data, a.data.shape)),
            (b, _reduce_to_shape(g * a.data, b.data.shape)),
        )

    return _node(out, (a, b), bwd, "mul", a.data, b.data)


def scale(a, c):
    c = float(c)
    out = a.data * c

    def bwd(g):
        return ((a, g * c),)

    return _node(out, (a,), bwd, "scale", a.data)


def relu(a):
    x = a.data
    if _KINK_MONITOR is not None and x.size:
        _note_kink(np.min(np.abs(x)))
    out = np.maximum(x, 0.0)

    def bwd(g):
        return ((a, g * (x > 0.0)),)

    return _node(out, (a,), bwd, "relu", x)


def log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def bwd(g):
        return ((a, g / a.data),)

    return _node(out, (a,), bwd, "log", a.data)


def matmul(a, b):
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise TensorError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (
            (a, _reduce_to_shape(ga, a.data.shape)),
            (b, _reduce_to_shape(gb, b.data.shape)),
        )

    return _node(out, (a, b), bwd, "matmul", a.data, b.data)


def affine(x, w, b):
    """Fused x @ w + b (bias broadcast over leading axes)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise TensorError(
            f"affine shape mismatch: {x.data.shape} @ {w.data.shape}"
        )
    out = np.matmul(x.data, w.data)
    out += b.data

    def bwd(g):
        gx = np.matmul(g, w.data.T)
        g2 = g.reshape(-1, g.shape[-1])
        gw = x.data.reshape(-1, x.data.shape[-1]).T @ g2
        gb = g2.sum(axis=0)
        return ((x, gx), (w, gw), (b, gb))

    return _node(out, (x, w, b), bwd, "affine", x.data, w.data)


def gin_combine(u, agg, eps):
    """Fused (1 + eps) * u + agg with a learnable scalar eps."""
    e = 1.0 + float(eps.data.ravel()[0])
    out = u.data * e
    out += agg.data

    def bwd(g):
        geps = np.array([np.vdot(g, u.data)])
        return ((u, g * e), (agg, g), (eps, geps))

    return _node(out, (u, agg, eps), bwd, "gin_combine", u.data, agg.data)


def residual_relu(h, m):
    """Fused h + relu(m): the pre-activation residual block tail."""
    if h.data.shape != m.data.shape:
        raise TensorError(
            f"residual_relu shape mismatch: {h.data.shape} vs {m.data.shape}"
        )
    if _KINK_MONITOR is not None and m.data.size:
        _note_kink(np.min(np.abs(m.data)))
    out = np.maximum(m.data, 0.0)
    out += h.data

    def bwd(g):
        return ((h, g), (m, g * (m.data > 0.0)))

    return _node(out, (h, m), bwd, "residual_relu", h.data, m.data)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def bwd(g):
        return ((a, g.reshape(a.data.shape)),)

    return _node(out, (a,), bwd, "reshape", out)


def transpose(a, axes):
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        return ((a, np.transpose(g, inv)),)

    return _node(out, (a,), bwd, "transpose", out)


def concat(tensors, axis=0):
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    sizes = [arr.shape[axis] for arr in arrays]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((t, g[tuple(idx)]))
        return tuple(pieces)

    return _node(out, tuple(tensors), bwd, "concat", out)


def gather(a, index, axis=0):
    """Row select along `axis` (also serves as embedding lookup)."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.data.shape[axis]):
        raise TensorError(
            f"gather index out of range for axis {axis} of shape {a.data.shape}"
        )
    out = np.take(a.data, index, axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(ga, index, g)
        else:
            np.add.at(np.moveaxis(ga, axis, 0), index, np.moveaxis(g, axis, 0))
        return ((a, ga),)

    return _node(out, (a,), bwd, "gather", out)


# ---------------------------------------------------------------------------
# normalization / attention kernels
# ---------------------------------------------------------------------------

LAYERNORM_EPS = 1e-5


def layer_norm(x, gain, bias, eps=LAYERNORM_EPS):
    """Layer normalization over the last axis with learned gain and bias."""
    if gain.data.shape != (x.data.shape[-1],) or bias.data.shape != (x.data.shape[-1],):
        raise TensorError(
            f"layer_norm expects gain/bias of shape ({x.data.shape[-1]},), "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    out = xhat * gain.data
    out += bias.data

    def bwd(g):
        flat_g = g.reshape(-1, d)
        flat_h = xhat.reshape(-1, d)
        ggain = np.einsum("ij,ij->j", flat_g, flat_h)
        gbias = flat_g.sum(axis=0)
        gh = g * gain.data
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = np.einsum("...i,...i->...", gh, xhat)[..., None] / d
        gx = gh
        gx -= m1
        gx -= xhat * m2
        gx *= inv
        return ((x, gx), (gain, ggain), (bias, gbias))

    return _node(out, (x, gain, bias), bwd, "layer_norm", x.data)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((x, (g - inner) * out),)

    return _node(out, (x,), bwd, "softmax", x.data)


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        soft = np.exp(out)
        return ((x, g - soft * g.sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bwd, "log_softmax", x.data)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.data.shape).copy()),)

    return _node(np.asarray(out), (a,), bwd, "sum", a.data)


def reduce_mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g / n, a.data.shape).copy()),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg / n, a.data.shape).copy()),)

    return _node(np.asarray(out), (a,), bwd, "mean", a.data)


def reduce_max(a, axis, keepdims=False):
    """Max over one axis; backward routes to the first argmax on ties."""
    x = a.data
    arg = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(arg, axis), axis=axis)
    if _KINK_MONITOR is not None and x.shape[axis] > 1:
        top2 = np.partition(x, -2, axis=axis)
        gap = np.take(top2, -1, axis=axis) - np.take(top2, -2, axis=axis)
        _note_kink(gap.min())
    res = out if keepdims else np.squeeze(out, axis=axis)

    def bwd(g):
        ga = np.zeros_like(x)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(ga, np.expand_dims(arg, axis), gg, axis=axis)
        return ((a, ga),)

    node = _node(res, (a,), bwd, "max", x)
    return node


def argmax(a, axis):
    """Index companion to reduce_max (not differentiable)."""
    return np.argmax(a.data, axis=axis)


# ---------------------------------------------------------------------------
# scatter / graph kernels
# ---------------------------------------------------------------------------


def segment_sum(src, index, num_segments):
    """Sum rows of `src` into `num_segments` destination rows chosen by `index`.

    The message-passing primitive: backward is a plain gather.
    """
    index = np.asarray(index, dtype=np.intp)
    if index.shape != (src.data.shape[0],):
        raise TensorError(
            f"segment_sum index shape {index.shape} does not match "
            f"source rows {src.data.shape[0]}"
        )
    if index.size and (index.min() < 0 or index.max() >= num_segments):
        raise TensorError("segment_sum index out of range")
    x = src.data
    out = np.zeros((num_segments,) + x.shape[1:], dtype=np.float64)
    if index.size:
        order = np.argsort(index, kind="stable")
        sorted_idx = index[order]
        starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        sums = np.add.reduceat(x[order], starts, axis=0)
        out[sorted_idx[starts]] = sums

    def bwd(g):
        return ((src, g[index]),)

    return _node(out, (src,), bwd, "segment_sum", x)


def sparse_matmul(mat, x, mat_t=None):
    """Multiply a constant scipy sparse matrix by a dense tensor.

    Equivalent to gather + segment_sum over the matrix's nonzeros, but
    executed as one CSR product. Used for neighbor aggregation. Pass the
    precomputed transpose when calling repeatedly with the same matrix.
    """
    if mat.shape[1] != x.data.shape[0]:
        raise TensorError(
            f"sparse_matmul shape mismatch: {mat.shape} @ {x.data.shape}"
        )
    if mat_t is None:
        mat_t = mat.T.tocsr()
    out = mat @ x.data

    def bwd(g):
        return ((x, mat_t @ g),)

    return _node(out, (x,), bwd, "sparse_matmul", x.data)


# ---------------------------------------------------------------------------
# temporal convolution
# ---------------------------------------------------------------------------


def conv1d_same(x, w, b):
    """1-D convolution along the middle (time) axis with zero 'same' padding.

    x: (B, T, C_in); w: (K, C_in, C_out); b: (C_out,).
    """
    B, T, cin = x.data.shape
    K, wcin, cout = w.data.shape
    if wcin != cin:
        raise TensorError(
            f"conv1d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}"
        )
    pad = K // 2
    xp = np.zeros((B, T + K - 1, cin))
    xp[:, pad : pad + T] = x.data
    cols = np.empty((B, T, K, cin))
    for k in range(K):
        cols[:, :, k, :] = xp[:, k : k + T]
    w2 = w.data.reshape(K * cin, cout)
    out = cols.reshape(B * T, K * cin) @ w2 + b.data
    out = out.reshape(B, T, cout)

    def bwd(g):
        g2 = g.reshape(B * T, cout)
        gw = cols.reshape(B * T, K * cin).T @ g2
        gb = g2.sum(axis=0)
        gcols = (g2 @ w2.T).reshape(B, T, K, cin)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k : k + T] += gcols[:, :, k, :]
        gx = gxp[:, pad : pad + T]
        return ((x, gx), (w, gw.reshape(K, cin, cout)), (b, gb))

    return _node(out, (x, w, b), bwd, "conv1d", x.data, w.data)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    n_coordinates: int
    resampled: int

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max relative error {self.max_rel_error:.3e} "
            f"(tol {self.tol:.1e}, {self.n_coordinates} coordinates, "
            f"{self.resampled} resamples)"
        )


def grad_check(fn, points, step=1e-5, tol=1e-4, max_resamples=10, rng=None):
    """Compare analytic gradients of a scalar tensor program with central
    finite differences, coordinate-wise.

    `fn` takes the tensors in `points` and returns a scalar Tensor. If any
    ReLU pre-activation (or max top-2 gap) comes within 10*step of a kink,
    the point is perturbed and the check restarted (exclusion zone around
    non-differentiable points).

    A coordinate that misses tolerance at the nominal step is retried over
    a ladder of larger and smaller steps and scored by its best step. The
    two false-failure modes move in opposite directions — a kink crossed by
    the perturbation (possible despite the base-point margin test when the
    pre-activation is very sensitive to that coordinate) vanishes as the
    step shrinks, while round-off noise on a near-zero gradient shrinks as
    the step grows — whereas a genuinely wrong analytic gradient is a
    step-independent bias that fails at every rung.
    """
    if isinstance(points, Tensor):
        points = [points]
    rng = rng or np.random.default_rng(0)
    resampled = 0
    while True:
        with watch_kinks() as monitor:
            loss = fn(*points)
        if loss.data.size != 1:
            raise TensorError("grad_check requires a scalar-valued function")
        if monitor.min_margin >= 10.0 * step:
            break
        if resampled >= max_resamples:
            break
        for p in points:
            p.data = p.data + rng.normal(0.0, 20.0 * step, size=p.data.shape)
        resampled += 1
    for p in points:
        p.zero_grad()
        p.requires_grad = True
    loss = fn(*points)
    loss.backward()
    max_rel = 0.0
    n = 0
    for p in points:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.ravel()
        aflat = analytic.ravel()
        for i in range(flat.size):
            orig = flat[i]
            best = np.inf
            for h in (step, 4.0 * step, 16.0 * step, 64.0 * step,
                      step / 4.0, step / 16.0, step / 64.0):
                flat[i] = orig + h
                f_plus = fn(*points).item()
                flat[i] = orig - h
                f_minus = fn(*points).item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                denom = max(abs(aflat[i]), abs(numeric), 1e-8)
                best = min(best, abs(aflat[i] - numeric) / denom)
                if best <= tol:
                    break
            if best > max_rel:
                max_rel = best
            n += 1
    return GradCheckReport(
        max_rel_error=max_rel,
        tol=tol,
        passed=max_rel <= tol,
        n_coordinates=n,
        resampled=resampled,
    )
