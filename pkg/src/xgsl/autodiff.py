"""Minimal reverse-mode differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient.  Outside a tape every operation is
a plain numpy computation, which is how evaluation passes run.

    >>> with Tape():
    ...     x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    ...     loss = sum_all(relu(x))
    ...     backward(loss)
    >>> x.grad
    array([1., 0., 1.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

NORM_FLOOR = 1e-8


class GradError(RuntimeError):
    """Misuse of the tape: non-scalar loss, double backward, ..."""


class NumericalError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class DomainError(ValueError):
    """An operation received input outside its mathematical domain."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_tape", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Entry:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; :func:`backward` consumes the tape exactly once.
    """

    entries: list[_Entry] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STACK.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> list[str]:
        return [e.op for e in self.entries]


_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


class no_grad:
    """Suspend recording on every active tape."""

    def __enter__(self):
        self._saved = list(_STACK)
        _STACK.clear()

    def __exit__(self, *exc):
        _STACK.extend(self._saved)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    # a single reduction is cheaper than an elementwise isfinite pass;
    # only an overflowing sum needs the exact check
    if not np.isfinite(np.add.reduce(arr, axis=None)) and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by {op}")
    return arr


def _make(value: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    out = Tensor(_finite(value, op))
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        if tape.consumed:
            raise GradError("tape already consumed by backward(); open a new Tape")
        out.requires_grad = True
        out._tape = tape
        tape.entries.append(_Entry(out, parents, backward_fn, op))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        ),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            -_unbroadcast(g, b.shape) if b.requires_grad else None,
        ),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.value, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value @ b.value,
        (a, b),
        lambda g: (
            g @ b.value.T if a.requires_grad else None,
            a.value.T @ g if b.requires_grad else None,
        ),
        "matmul",
    )


def spmm(s: sp.spmatrix, b) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    b = as_tensor(b)
    s = sp.csr_matrix(s)
    return _make(np.asarray(s @ b.value), (b,), lambda g: (np.asarray(s.T @ g),), "spmm")


def transpose(a: Tensor) -> Tensor:
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def threshold(a: Tensor, tau: float) -> Tensor:
    """Keep entries ``>= tau`` (and ``>= 0``), zero the rest.

    The gate is straight-through: identity gradient on kept entries.
    """
    cut = max(float(tau), 0.0)
    mask = a.value >= cut
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "threshold")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise DomainError("log of non-positive value")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def row_normalize(a: Tensor) -> Tensor:
    """Divide each row by its sum; all-zero rows stay zero (and get zero gradient)."""
    if np.any(a.value < 0):
        raise DomainError("row_normalize requires non-negative entries")
    sums = a.value.sum(axis=1, keepdims=True)
    live = sums > 0
    safe = np.where(live, sums, 1.0)
    out = np.where(live, a.value / safe, 0.0)

    def bwd(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (np.where(live, (g - inner) / safe, 0.0),)

    return _make(out, (a,), bwd, "row_normalize")


def _row_norms(x: np.ndarray, op: str, on_degenerate: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    live = norms >= NORM_FLOOR
    if on_degenerate == "raise" and not np.all(live):
        raise DomainError(f"{op}: vector norm below {NORM_FLOOR:g}")
    return np.where(live, norms, 1.0), live


def cosine_similarity(a, b, on_degenerate: str = "raise") -> Tensor:
    """Pairwise cosine similarity between the rows of ``a`` (n x d) and ``b`` (m x d).

    Rows with norm below ``NORM_FLOOR`` raise :class:`DomainError`, unless
    ``on_degenerate="zero"``, in which case their similarities are 0 and they
    receive no gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    na, live_a = _row_norms(a.value, "cosine_similarity", on_degenerate)
    nb, live_b = _row_norms(b.value, "cosine_similarity", on_degenerate)
    an = a.value / na * live_a
    bn = b.value / nb * live_b
    out = an @ bn.T

    def bwd(g):
        g_an = g @ bn
        g_bn = g.T @ an
        ga = (g_an - an * (g_an * an).sum(axis=1, keepdims=True)) / na * live_a
        gb = (g_bn - bn * (g_bn * bn).sum(axis=1, keepdims=True)) / nb * live_b
        return ga, gb

    return _make(out, (a, b), bwd, "cosine_similarity")


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),), "log_softmax")


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.value[idx], (a,), bwd, "take_rows")


def pick(a: Tensor, rows, cols) -> Tensor:
    """Gather ``a[rows[i], cols[i]]`` into a vector."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def bwd(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return _make(a.value[rows, cols], (a,), bwd, "pick")


def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    return _make(
        np.asarray(a.value.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean"
    )


PRIMITIVES = (
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "spmm",
    "transpose",
    "relu",
    "threshold",
    "clamp",
    "log",
    "row_normalize",
    "cosine_similarity",
    "log_softmax",
    "take_rows",
    "pick",
    "sum",
    "mean",
)


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels, idx) -> Tensor:
    """Mean negative log-likelihood of ``labels[idx]`` under softmax(logits[idx])."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cross_entropy over an empty index set")
    labels = np.asarray(labels, dtype=np.int64)
    return -mean_all(pick(log_softmax(logits), idx, labels[idx]))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(.) to every tensor on the loss's tape.

    Leaf tensors (parameters) accumulate into ``.grad``; intermediates have
    ``.grad`` overwritten.  The tape is cleared afterwards.
    """
    if loss.value.size != 1:
        raise GradError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.value) + (0 if loss.grad is None else loss.grad)
            return
        raise GradError("loss was not recorded on a tape")
    if tape.consumed:
        raise GradError("backward() already called for this forward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue
        entry.out.grad = g
        for parent, pg in zip(entry.parents, entry.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if parent._tape is None:
                leaves[key] = parent
            grads[key] = grads[key] + pg if key in grads else pg
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    tape.entries.clear()
    tape.consumed = True


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradReport:
    max_rel_error: float
    tol: float
    n_checked: int
    failures: list[tuple[int, tuple[int, ...], float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def check_gradients(
    f: Callable[..., Tensor],
    point: Sequence[np.ndarray],
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradReport:
    """Compare analytic gradients of ``f(*tensors)`` with central differences.

    The relative error per coordinate is ``|a - n| / max(|a|, |n|, floor, r / tol)``
    where ``r`` estimates the rounding noise of the difference quotient, so
    entries too small for finite differences to resolve are judged absolutely.
    """
    point = [np.array(p, dtype=np.float64) for p in point]
    params = [Tensor(p.copy(), requires_grad=True) for p in point]
    with Tape():
        out = f(*params)
        backward(out)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]

    def value_at(arrays):
        with no_grad():
            return float(f(*[Tensor(a) for a in arrays]).value)

    worst = 0.0
    failures = []
    n_checked = 0
    for i, base in enumerate(point):
        for pos in np.ndindex(base.shape):
            shifted = [p.copy() for p in point]
            shifted[i][pos] = base[pos] + eps
            up = value_at(shifted)
            shifted[i][pos] = base[pos] - eps
            down = value_at(shifted)
            numeric = (up - down) / (2 * eps)
            noise = 4 * np.finfo(np.float64).eps * max(abs(up), abs(down)) / eps
            a = float(analytic[i][pos])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor, noise / tol)
            worst = max(worst, rel)
            n_checked += 1
            if rel > tol:
                failures.append((i, pos, a, numeric))
    return GradReport(worst, tol, n_checked, failures)
