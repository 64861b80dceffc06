"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Every value in the network is a 2-D double-precision matrix; vectors are
1 x n rows and scalars are 1 x 1. Operations run eagerly on numpy arrays and,
when a :class:`Tape` is active, record a node holding the local backward
closure. The tape is rebuilt on every forward pass (define-by-run), which
keeps recurrent, variable-length computations simple and correct.

A tape and the tensors created under it belong to one thread of execution;
separate evaluations on separate tapes may run concurrently. Parameter
values can be read concurrently, but optimizer writes need exclusive access.

Gradient freezing: a tensor may carry a ``grad_mask`` (same shape, 0/1).
Backward accumulation multiplies incoming gradients by the mask, so masked
coordinates (padding rows, pretrained embedding rows) keep an exactly-zero
gradient.
"""

from __future__ import annotations

import math

import numpy as np


class DimensionMismatchError(ValueError):
    """Operand shapes do not line up for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf, which signals an upstream bug."""


class NotScalarError(ValueError):
    """backward() was asked to differentiate a non-scalar value."""


def _check_finite(data: np.ndarray, op: str) -> None:
    # sum-then-test is one reduction instead of an elementwise isfinite scan;
    # any NaN/Inf entry makes the sum non-finite
    if not math.isfinite(data.sum()):
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    """A 2-D float64 matrix with an optional gradient buffer.

    ``grad`` is populated by :func:`backward` and is ``None`` until then.
    ``trainable`` marks optimizer-visible parameters; ``grad_mask`` freezes
    individual coordinates (see module docstring).
    """

    __slots__ = ("data", "grad", "grad_mask", "name", "trainable")

    def __init__(self, data, name=None, trainable=False, grad_mask=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionMismatchError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.grad = None
        self.name = name
        self.trainable = trainable
        if grad_mask is not None:
            grad_mask = np.asarray(grad_mask, dtype=np.float64)
            if grad_mask.shape != arr.shape:
                raise DimensionMismatchError("grad_mask shape must match data shape")
        self.grad_mask = grad_mask

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Construction fast path for op outputs (already 2-D float64)."""
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.name = None
        t.trainable = False
        t.grad_mask = None
        return t

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalarError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data[0, 0])

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended in execution order, so the list is already
    topologically sorted: every node's inputs precede it.
    """

    def __init__(self):
        self.nodes = []  # (out, parents, backward_fn)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def _record(out, parents, backward_fn):
    if _TAPE_STACK:
        _TAPE_STACK[-1].nodes.append((out, parents, backward_fn))


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse-accumulate gradients of ``loss`` through the tape.

    Gradients add into each tensor's ``grad`` buffer (callers zero parameter
    grads between batches). Every tensor that appears on the tape ends up
    with a grad buffer; tensors on no path to the loss get zeros.

    Backward closures read their input tensors' current values, so run
    backward before any optimizer step mutates parameter data.
    """
    if loss.data.size != 1:
        raise NotScalarError(f"loss must be scalar, got shape {loss.data.shape}")
    seen = []
    seen_ids = set()
    for out, parents, _ in tape.nodes:
        for t in (out, *parents):
            if id(t) not in seen_ids:
                seen_ids.add(id(t))
                seen.append(t)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for out, parents, backward_fn in reversed(tape.nodes):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for parent, g in zip(parents, grads):
            if g is None:
                continue
            if parent.grad_mask is not None:
                g = g * parent.grad_mask
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
    for t in seen:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionMismatchError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data
    _check_finite(out_data, "matmul")
    out = Tensor._wrap(out_data)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    _record(out, (a, b), bw)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor._wrap(a.data.T.copy())
    _record(out, (a,), lambda g: (g.T,))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a (1, n) second operand broadcast over rows."""
    if a.data.shape == b.data.shape:
        out = Tensor._wrap(a.data + b.data)
        _record(out, (a, b), lambda g: (g, g))
    elif b.data.shape == (1, a.data.shape[1]):
        out = Tensor._wrap(a.data + b.data)
        _record(out, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    else:
        raise DimensionMismatchError(f"add shapes {a.data.shape} vs {b.data.shape}")
    _check_finite(out.data, "add")
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(f"sub shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor._wrap(a.data - b.data)
    _check_finite(out.data, "sub")
    _record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(f"mul shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor._wrap(a.data * b.data)
    _check_finite(out.data, "mul")
    _record(out, (a, b), lambda g: (g * b.data, g * a.data))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor._wrap(a.data * c)
    _check_finite(out.data, "scale")
    _record(out, (a,), lambda g: (g * c,))
    return out


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)  # derivative at 0 is 0
    out = Tensor._wrap(a.data * mask)
    _record(out, (a,), lambda g: (g * mask,))
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = Tensor._wrap(out_data)
    _record(out, (a,), lambda g: (g * (1.0 - out_data * out_data),))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # capping the exponent avoids overflow; exp(709) is still finite, and the
    # result matches the exact sigmoid at double precision either way
    return 1.0 / (1.0 + np.exp(np.minimum(-x, 709.0)))


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)
    out = Tensor._wrap(out_data)
    _record(out, (a,), lambda g: (g * out_data * (1.0 - out_data),))
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    out = Tensor._wrap(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    _record(out, (a,), lambda g: (g * _sigmoid(x),))
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if a.data.shape[1] < 1:
        raise DimensionMismatchError("softmax_rows needs at least one column")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=1, keepdims=True)
    _check_finite(out_data, "softmax_rows")
    out = Tensor._wrap(out_data)

    def bw(g):
        inner = (g * out_data).sum(axis=1, keepdims=True)
        return (out_data * (g - inner),)

    _record(out, (a,), bw)
    return out


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    rows = tensors[0].data.shape[0]
    for t in tensors:
        if t.data.shape[0] != rows:
            raise DimensionMismatchError("concat_cols row counts differ")
    out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=1))
    widths = [t.data.shape[1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def bw(g):
        return tuple(np.hsplit(g, splits))

    _record(out, tuple(tensors), bw)
    return out


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    cols_ = tensors[0].data.shape[1]
    for t in tensors:
        if t.data.shape[1] != cols_:
            raise DimensionMismatchError("concat_rows column counts differ")
    out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=0))
    heights = [t.data.shape[0] for t in tensors]
    splits = np.cumsum(heights)[:-1]

    def bw(g):
        return tuple(np.vsplit(g, splits))

    _record(out, tuple(tensors), bw)
    return out


def row(a: Tensor, i: int) -> Tensor:
    out = Tensor._wrap(a.data[i:i + 1].copy())

    def bw(g):
        z = np.zeros_like(a.data)
        z[i:i + 1] = g
        return (z,)

    _record(out, (a,), bw)
    return out


def cols(a: Tensor, j0: int, j1: int) -> Tensor:
    out = Tensor._wrap(a.data[:, j0:j1].copy())

    def bw(g):
        z = np.zeros_like(a.data)
        z[:, j0:j1] = g
        return (z,)

    _record(out, (a,), bw)
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding); backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionMismatchError("gather_rows indices must be 1-D")
    out = Tensor._wrap(table.data[idx].copy())

    def bw(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx, g)
        return (z,)

    _record(out, (table,), bw)
    return out


def maxpool_cols(a: Tensor) -> Tensor:
    """Columnwise max over rows -> 1 x n. Ties route gradient to the first
    maximal row (np.argmax tie-break), keeping backward deterministic."""
    out = Tensor._wrap(a.data.max(axis=0, keepdims=True))
    arg = a.data.argmax(axis=0)

    def bw(g):
        z = np.zeros_like(a.data)
        z[arg, np.arange(a.data.shape[1])] = g[0]
        return (z,)

    _record(out, (a,), bw)
    return out


def meanpool_cols(a: Tensor) -> Tensor:
    m = a.data.shape[0]
    out = Tensor._wrap(a.data.mean(axis=0, keepdims=True))

    def bw(g):
        return (np.repeat(g, m, axis=0) / m,)

    _record(out, (a,), bw)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.array([[a.data.sum()]]))
    _check_finite(out.data, "sum_all")
    _record(out, (a,), lambda g: (np.full_like(a.data, g[0, 0]),))
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(a, Tensor(keep))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    """Outcome of a finite-difference gradient check.

    ``per_param`` maps parameter name to its worst relative error;
    ``max_rel_error`` / ``worst_param`` / ``worst_index`` locate the single
    worst coordinate overall.
    """

    def __init__(self, threshold):
        self.threshold = threshold
        self.per_param = {}
        self.max_rel_error = 0.0
        self.worst_param = None
        self.worst_index = None
        self.coords_checked = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def record(self, name, index, rel_error):
        self.coords_checked += 1
        self.per_param[name] = max(self.per_param.get(name, 0.0), rel_error)
        if rel_error > self.max_rel_error:
            self.max_rel_error = rel_error
            self.worst_param = name
            self.worst_index = index

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}"
                f" at {self.worst_param}{self.worst_index},"
                f" {self.coords_checked} coords)")


def _trainable_items(params):
    if hasattr(params, "trainable_items"):
        return list(params.trainable_items())
    return [(name, t) for name, t in params.items() if t.trainable]


def grad_check(f, params, eps: float = 1e-5, samples_per_tensor: int = 200,
               threshold: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``f(params)`` against central differences.

    ``f`` must be a deterministic scalar function of the parameters (run
    dropout-free). Analytic gradients come from one traced forward+backward;
    the numeric side perturbs sampled coordinates by ``eps`` with tracing
    off. Relative error per coordinate is |a-n| / max(|a|, |n|, 1e-8).
    Coordinates frozen by a grad_mask are not trainable and are skipped.
    Tensors with at most ``samples_per_tensor`` eligible coordinates are
    checked exhaustively; larger ones are subsampled without replacement.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    items = _trainable_items(params)
    for _, t in items:
        t.grad = None  # stale grads from an earlier backward would double-count
    tape = Tape()
    with tape:
        loss = f(params)
    if loss.data.size != 1:
        raise NotScalarError("grad_check target must be scalar")
    backward(tape, loss)
    analytic = {name: t.grad_or_zeros().copy() for name, t in items}

    report = GradCheckReport(threshold)
    rng = np.random.default_rng(seed)
    for name, t in items:
        flat = t.data.reshape(-1)
        if t.grad_mask is not None:
            eligible = np.flatnonzero(t.grad_mask.reshape(-1) != 0.0)
        else:
            eligible = np.arange(flat.size)
        if eligible.size == 0:
            continue
        if eligible.size > samples_per_tensor:
            eligible = rng.choice(eligible, size=samples_per_tensor, replace=False)
        a_flat = analytic[name].reshape(-1)
        for k in eligible:
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = f(params).item()
            flat[k] = orig - eps
            f_minus = f(params).item()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[k]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            report.record(name, np.unravel_index(int(k), t.data.shape), rel)
    return report
