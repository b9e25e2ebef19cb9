"""Dense-tensor math with reverse-mode automatic differentiation.

Design: a Tensor wraps a float32/float64 numpy array. Primitives are
module-level functions that validate shapes, compute the forward value,
verify it is finite, and record a tape entry when a Tape is active and
any input requires a gradient. backward() replays the tape once, in
reverse, accumulating gradients by summation.

Tapes are confined to one thread; a thread-local stack holds the active
tape so distinct models may train on distinct threads concurrently.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from fusemt.backend import kernels
from fusemt.errors import NumericError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense array with optional gradient-tape participation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar over the primitive functions.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class TapeEntry:
    rule: str
    inputs: tuple
    output: Tensor
    backward: callable  # grad_out -> tuple of grads aligned with inputs


_ACTIVE = threading.local()


def _tape_stack():
    if not hasattr(_ACTIVE, "stack"):
        _ACTIVE.stack = []
    return _ACTIVE.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def record(self, rule, inputs, output, backward):
        self.entries.append(TapeEntry(rule, inputs, output, backward))

    def backward(self, loss: Tensor):
        return backward(self, loss)


def backward(tape: Tape, loss: Tensor):
    """Populate .grad on every requires_grad tensor reachable from loss.

    Gradients accumulate (sum) across multiple uses of a tensor. Each
    tape entry is visited exactly once, in reverse recording order, so
    identical tapes yield bit-identical gradients.
    """
    if loss.size != 1:
        raise ShapeError("backward(loss not scalar)", loss.shape)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        # Entries are in topological order, so by the time we reach the
        # entry that created a tensor, every use of it has contributed.
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        if entry.output.requires_grad:
            out = entry.output
            out.grad = g if out.grad is None else out.grad + g
        for t, gin in zip(entry.inputs, entry.backward(g)):
            if gin is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gin
            else:
                grads[key] = gin
    # Whatever never appeared as an entry output is a leaf.
    for entry in tape.entries:
        for t in entry.inputs:
            if t.requires_grad and id(t) in grads:
                g = grads.pop(id(t))
                t.grad = g if t.grad is None else t.grad + g
    if loss.requires_grad and id(loss) in grads:
        g = grads.pop(id(loss))
        loss.grad = g if loss.grad is None else loss.grad + g


def _apply(rule: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, backward_fn):
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{rule}: non-finite value in forward output")
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(rule, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _apply("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _apply("mul", (a, b), out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _apply("scale", (a,), a.data * c, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _apply("matmul", (a, b), ad @ bd, bwd)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B,m,k) @ (B,k,n) -> (B,m,n)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError("bmm", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _apply("bmm", (a, b), ad @ bd, bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    split_points = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, split_points, axis=axis))

    return _apply("concat", tensors, out, bwd)


def stack(tensors, axis: int = 1) -> Tensor:
    """Stack equal-shape tensors along a new axis (encoder state matrix)."""
    tensors = tuple(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *[t.shape for t in tensors])
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _apply("stack", tensors, out, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _apply("reshape", (a,), out, bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _apply("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", (a,), out, bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", (a,), out, bwd)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _apply("exp", (a,), out, bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data

    def bwd(g):
        return (g / ad,)

    return _apply("log", (a,), out, bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax over `axis`, stabilized by subtracting the running max."""
    if a.ndim == 2 and axis in (-1, 1):
        out = kernels.softmax_rows(np.ascontiguousarray(a.data))
    else:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _apply("softmax", (a,), out, bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Log of softmax over `axis`: a - logsumexp(a), computed stably."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    with np.errstate(over="ignore"):
        e = np.exp(shifted)
    sums = e.sum(axis=axis, keepdims=True)
    out = shifted - np.log(sums)
    probs = e / sums

    def bwd(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _apply("log_softmax", (a,), out, bwd)


def tsum(a: Tensor) -> Tensor:
    """Full reduction to a scalar."""
    ad = a.data

    def bwd(g):
        return (np.broadcast_to(g, ad.shape).astype(ad.dtype),)

    return _apply("sum", (a,), np.asarray(a.data.sum(), dtype=a.dtype), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: output shape ids.shape + (width,)."""
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding: id out of range 0..{table.shape[0] - 1} "
            f"(got {int(ids.min())}..{int(ids.max())})"
        )
    width = table.shape[1]
    out = table.data[ids]

    def bwd(g):
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, ids.ravel(), g.reshape(-1, width))
        return (dtable,)

    return _apply("embedding", (table,), out, bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood of softmax(logits) at targets."""
    if logits.ndim != 2:
        raise ShapeError("cross_entropy", logits.shape)
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise IndexError(f"cross_entropy: target id out of range 0..{logits.shape[1] - 1}")
    nll, probs = kernels.softmax_xent(np.ascontiguousarray(logits.data), targets)

    def bwd(g):
        return (kernels.xent_backward(probs, targets, g),)

    return _apply("cross_entropy", (logits,), nll, bwd)


def gru_gates(ax: Tensor, ah: Tensor, h_prev: Tensor) -> Tensor:
    """Fused GRU cell arithmetic on packed preactivations (gate order z|r|c).

    ax = x @ Wx + bx and ah = h_prev @ Wh + bh are (B, 3h); h_prev is
    (B, h). Returns the next hidden state (B, h).
    """
    bsz, h = h_prev.shape if h_prev.ndim == 2 else (None, None)
    if h_prev.ndim != 2 or ax.shape != (bsz, 3 * h) or ah.shape != (bsz, 3 * h):
        raise ShapeError("gru_gates", ax.shape, ah.shape, h_prev.shape)
    axd = np.ascontiguousarray(ax.data)
    ahd = np.ascontiguousarray(ah.data)
    hpd = np.ascontiguousarray(h_prev.data)
    h_new, z, r, c = kernels.gru_gates(axd, ahd, hpd)

    def bwd(g):
        return kernels.gru_gates_backward(np.ascontiguousarray(g), z, r, c, ahd, hpd)

    return _apply("gru_gates", (ax, ah, h_prev), h_new, bwd)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    flagged: bool = False  # non-finite finite-difference estimate

    def __bool__(self):
        return self.passed


def grad_check(f, point: Tensor, tol: float = 1e-5, step: float = 1e-4) -> GradCheckReport:
    """Compare the tape gradient of scalar-valued f against central
    finite differences at `point` (evaluated elementwise, step h).

    Relative error uses denominator max(|a|, |b|, 1), so two zero
    gradients compare at error 0.
    """
    point.grad = None
    if not point.data.flags.c_contiguous:
        point.data = np.ascontiguousarray(point.data)
    with Tape() as tape:
        out = f(point)
        if out.size != 1:
            raise ShapeError("grad_check(f not scalar)", out.shape)
        backward(tape, out)
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)

    flat = point.data.reshape(-1)
    fd = np.zeros_like(flat)
    flagged = False
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(point).data)
        flat[i] = orig - step
        fm = float(f(point).data)
        flat[i] = orig
        fd[i] = (fp - fm) / (2.0 * step)
        if not np.isfinite(fd[i]):
            flagged = True

    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1.0)
    rel = np.abs(a - fd) / denom
    max_err = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_err, tol, passed=(max_err < tol) and not flagged, flagged=flagged)
