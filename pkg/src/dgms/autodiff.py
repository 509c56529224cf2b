"""A small reverse-mode autodiff engine over dense 2-D arrays.

Only the operations the matching model needs are provided, and none of them
broadcast: shapes must line up exactly, and any reshaping is an explicit op
(``repeat_rows``, ``transpose``, ``concat_cols``).

Operations are recorded only while a :class:`Tape` is active on the current
thread::

    with Tape() as tape:
        loss = hinge(...)
    grads = backward(loss)        # {leaf tensor: gradient array}

Without a tape, ops just compute values, which is what inference uses.
Tapes are thread-local, so independent forward passes can run concurrently
against the same parameter tensors.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

NORM_EPS = 1e-12

_local = threading.local()


class ShapeError(ValueError):
    pass


class KinkError(ArithmeticError):
    """The evaluation point lies too close to a non-differentiable kink."""


class Tensor:
    """A 2-D float array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of operations, in creation (topological) order."""

    def __init__(self, track_kinks: bool = False):
        self.ops: list[Tensor] = []
        self.track_kinks = track_kinks
        self.kink_margin = math.inf

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def note_kink(self, values: np.ndarray, keep_zeros: bool = False) -> None:
        """Record the smallest distance from a kink.

        Exact zeros are skipped by default: they come from structurally zero
        inputs that stay zero under parameter perturbation. ``keep_zeros``
        counts them, for singular points a perturbation can move.
        """
        values = np.asarray(values)
        v = np.abs(values if keep_zeros else values[values != 0])
        if v.size:
            self.kink_margin = min(self.kink_margin, float(v.min()))


def current_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._tape is not None


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(_tracked(p) for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._tape = tape
        tape.ops.append(out)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- ops ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return _result(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A))


_EW = {"add": add, "sub": sub, "mul": mul}


def ew(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``add``, ``sub`` or ``mul`` on equal shapes."""
    try:
        return _EW[op](a, b)
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant."""
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    A = a.data
    tape = current_tape()
    if tape is not None and tape.track_kinks and _tracked(a):
        tape.note_kink(A)
    mask = A > 0
    return _result(np.where(mask, A, 0).astype(A.dtype), (a,), lambda g: (g * mask,))


def hinge(x: Tensor) -> Tensor:
    """``max(0, x)`` on a scalar, subgradient 0 at 0."""
    if x.shape != (1, 1):
        raise ShapeError(f"hinge expects a scalar, got {x.shape}")
    return relu(x)


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T, (a,), lambda g: (g.T,))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    p = a.shape[1]
    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :p], g[:, p:]))


def repeat_rows(a: Tensor, m: int) -> Tensor:
    """Stack a single row ``m`` times: ``(1, n) -> (m, n)``."""
    if a.shape[0] != 1:
        raise ShapeError(f"repeat_rows expects one row, got {a.shape}")
    return _result(np.repeat(a.data, m, axis=0), (a,), lambda g: (g.sum(axis=0, keepdims=True),))


def col_max(a: Tensor) -> Tensor:
    """Per-column maximum; gradient goes to the first argmax row."""
    A = a.data
    m, n = A.shape
    if m == 0:
        raise ShapeError("col_max of an empty tensor")
    idx = A.argmax(axis=0)
    cols = np.arange(n)
    tape = current_tape()
    if tape is not None and tape.track_kinks and _tracked(a) and m > 1:
        top2 = np.sort(A, axis=0)[-2:]
        tape.note_kink(top2[1] - top2[0])

    def back(g):
        out = np.zeros_like(A)
        out[idx, cols] = g[0]
        return (out,)

    return _result(A[idx, cols].reshape(1, n), (a,), back)


def col_mean(a: Tensor) -> Tensor:
    A = a.data
    m = A.shape[0]
    if m == 0:
        raise ShapeError("col_mean of an empty tensor")
    return _result(A.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / m, m, axis=0),))


def sum_all(a: Tensor) -> Tensor:
    A = a.data
    return _result(A.sum().reshape(1, 1), (a,), lambda g: (np.full_like(A, g[0, 0]),))


def row_normalize(a: Tensor) -> Tensor:
    """Scale every row to unit L2 norm; rows with norm < 1e-12 become 0."""
    A = a.data
    norms = np.sqrt((A * A).sum(axis=1, keepdims=True))
    tape = current_tape()
    if tape is not None and tape.track_kinks and _tracked(a):
        tape.note_kink(norms)
    live = norms >= NORM_EPS
    safe = np.where(live, norms, 1)
    U = np.where(live, A / safe, 0).astype(A.dtype)

    def back(g):
        proj = (g * U).sum(axis=1, keepdims=True)
        return (np.where(live, (g - U * proj) / safe, 0).astype(A.dtype),)

    return _result(U, (a,), back)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two row vectors; 0 (with zero gradient) if either is ~0."""
    if u.shape[0] != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine expects equal row vectors, got {u.shape} and {v.shape}")
    U, V = u.data, v.data
    nu = float(np.sqrt((U * U).sum()))
    nv = float(np.sqrt((V * V).sum()))
    tape = current_tape()
    if tape is not None and tape.track_kinks and (_tracked(u) or _tracked(v)):
        # cosine is singular at the origin, and pooled vectors can sit there
        tape.note_kink(np.array([nu, nv]), keep_zeros=True)
    if nu < NORM_EPS or nv < NORM_EPS:
        zero = np.zeros((1, 1), dtype=U.dtype)
        return _result(zero, (u, v), lambda g: (np.zeros_like(U), np.zeros_like(V)))
    c = float((U * V).sum()) / (nu * nv)

    def back(g):
        s = g[0, 0]
        du = s * (V / (nu * nv) - c * U / (nu * nu))
        dv = s * (U / (nu * nv) - c * V / (nv * nv))
        return (du.astype(U.dtype), dv.astype(V.dtype))

    return _result(np.array([[c]], dtype=U.dtype), (u, v), back)


# -- differentiation ------------------------------------------------------------


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` for every ``requires_grad`` leaf it depends on.

    Fan-out contributions are summed. The returned mapping is keyed by the
    leaf tensor objects themselves.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not computed under an active Tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1), dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.ops):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not _tracked(parent):
                continue
            if parent._tape is None:
                leaves[id(parent)] = parent
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return {leaf: grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in leaves.values()}


def rel_error(analytic, numeric):
    """Per-coordinate ``|a - n| / max(1e-8, |a| + |n|)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def central_difference(f: Callable[[], Tensor], param: Tensor, index: int, h: float) -> float:
    """``(f(p + h e_i) - f(p - h e_i)) / 2h`` for one flat coordinate of ``param``."""
    flat = param.data.reshape(-1)
    orig = flat[index]
    try:
        flat[index] = orig + h
        fp = f().item()
        flat[index] = orig - h
        fm = f().item()
    finally:
        flat[index] = orig
    return (fp - fm) / (2 * h)


def grad_check_coords(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    kink_factor: float = 10.0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Analytic and central-difference gradients, one flat pair per param.

    Same float64 casting and kink policy as :func:`grad_check`, which is the
    max of :func:`rel_error` over this output.
    """
    saved = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
        with Tape(track_kinks=True) as tape:
            loss = f()
        if tape.kink_margin < kink_factor * h:
            raise KinkError(f"kink margin {tape.kink_margin:.3g} below {kink_factor * h:.3g}")
        grads = backward(loss)
        out = []
        for p in params:
            analytic = grads.get(p, np.zeros_like(p.data)).reshape(-1).copy()
            numeric = np.array([central_difference(f, p, i, h) for i in range(p.data.size)])
            out.append((analytic, numeric))
        return out
    finally:
        for p, d in zip(params, saved):
            p.data = d


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    kink_factor: float = 10.0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is a closure computing a scalar from ``params``; it is evaluated in
    float64 (params are cast for the duration of the check and restored after).
    The per-coordinate error is ``|a - n| / max(1e-8, |a| + |n|)``.

    Raises :class:`KinkError` if any ReLU/hinge input, max-pooling gap or
    normalized vector norm is within ``kink_factor * h`` of a kink, so the
    caller can resample the point.
    """
    worst = 0.0
    for analytic, numeric in grad_check_coords(f, params, h, kink_factor):
        if analytic.size:
            worst = max(worst, float(rel_error(analytic, numeric).max()))
    return worst
