"""Dense kernels and a minimal reverse-mode tape.

The tape is closed-world: it records exactly the primitives the model
needs (products, ELU, row softmax, concatenation/slicing, dropout,
row selection, elementwise add/mul, total sum, cross-entropy) and nothing
else. All values are 2-D float64 arrays; a scalar is a 1x1 matrix.

A ``GradMatrix`` is tracked when it carries a tape reference. Operations
record a backward closure when any input is tracked; ``Tape.backward``
replays the records in exact reverse order, accumulating into ``.grad``
arrays that are allocated lazily.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .graph import SparseAdj


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._records: list[tuple["GradMatrix", Callable[[np.ndarray], None]]] = []

    def record(self, out: "GradMatrix", backward: Callable[[np.ndarray], None]) -> None:
        out.node_id = len(self._records)
        self._records.append((out, backward))

    def backward(self, loss: "GradMatrix") -> None:
        """Accumulate d(loss)/d(leaf) into every tracked leaf's ``.grad``.

        One-shot: the records (and with them all saved activations) are
        released at the end of the sweep, so a finished pass never pins
        layer-sized buffers past its epoch.
        """
        if loss.value.shape != (1, 1):
            raise ValueError(f"backward needs a scalar loss, got {loss.value.shape}")
        if loss.tape is not self:
            return  # constant loss: all gradients stay zero
        loss.grad = np.ones((1, 1))
        for out, backward in reversed(self._records):
            if out.grad is not None:
                backward(out.grad)
        self._records.clear()


class GradMatrix:
    """A 2-D float64 value, optionally tracked on a tape."""

    __slots__ = ("value", "tape", "node_id", "grad")

    def __init__(self, value: np.ndarray, tape: Tape | None = None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError(f"GradMatrix must be 2-D, got shape {value.shape}")
        self.value = value
        self.tape = tape
        self.node_id: int | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def watch(self, tape: Tape | None) -> "GradMatrix":
        """(Re-)attach to a tape as a leaf, clearing any accumulated gradient."""
        self.tape = tape
        self.node_id = None
        self.grad = None
        return self

    def __repr__(self):
        return f"GradMatrix(shape={self.value.shape}, tracked={self.tape is not None})"


def constant(value: np.ndarray) -> GradMatrix:
    return GradMatrix(value, tape=None)


def _tape_of(*xs: GradMatrix) -> Tape | None:
    tapes = {x.tape for x in xs if x.tape is not None}
    if len(tapes) > 1:
        raise ValueError("operands belong to different tapes")
    return tapes.pop() if tapes else None


def _accum(x: GradMatrix, g: np.ndarray, own: bool = False) -> None:
    """Add ``g`` into ``x.grad``; ``own`` marks freshly allocated arrays
    that may be adopted without a defensive copy."""
    if x.tape is None:
        return
    if x.grad is None:
        x.grad = g if own else np.array(g)
    else:
        x.grad += g


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def matmul(a: GradMatrix, b: GradMatrix) -> GradMatrix:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    tape = _tape_of(a, b)
    out = GradMatrix(a.value @ b.value, tape)
    if tape is not None:
        av, bv = a.value, b.value

        def backward(g: np.ndarray) -> None:
            _accum(a, g @ bv.T, own=True)
            _accum(b, av.T @ g, own=True)

        tape.record(out, backward)
    return out


def spmm(a: SparseAdj, b: GradMatrix) -> GradMatrix:
    """Sparse-dense product; the sparse operand carries no gradient."""
    if a.n_cols != b.shape[0]:
        raise ValueError(
            f"spmm shape mismatch: ({a.n_rows}, {a.n_cols}) x {b.shape}"
        )
    tape = b.tape
    out = GradMatrix(a.matmul(b.value), tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            _accum(b, a.t_matmul(g), own=True)

        tape.record(out, backward)
    return out


def add(a: GradMatrix, b: GradMatrix) -> GradMatrix:
    tape = _tape_of(a, b)
    out = GradMatrix(a.value + b.value, tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            ga = _reduce_to(g, a.shape)
            _accum(a, ga, own=ga is not g)
            gb = _reduce_to(g, b.shape)
            _accum(b, gb, own=gb is not g)

        tape.record(out, backward)
    return out


def mul(a: GradMatrix, b: GradMatrix) -> GradMatrix:
    """Elementwise product; operands may broadcast along either axis."""
    tape = _tape_of(a, b)
    out = GradMatrix(a.value * b.value, tape)
    if tape is not None:
        av, bv = a.value, b.value

        def backward(g: np.ndarray) -> None:
            _accum(a, _reduce_to(g * bv, a.shape), own=True)
            _accum(b, _reduce_to(g * av, b.shape), own=True)

        tape.record(out, backward)
    return out


def elu(x: GradMatrix) -> GradMatrix:
    """Exponential linear unit: x for x > 0, exp(x) - 1 otherwise."""
    neg = np.minimum(x.value, 0.0)
    out_val = np.where(x.value > 0, x.value, np.expm1(neg))
    tape = x.tape
    out = GradMatrix(out_val, tape)
    if tape is not None:
        slope = np.where(x.value > 0, 1.0, np.exp(neg))

        def backward(g: np.ndarray) -> None:
            _accum(x, g * slope, own=True)

        tape.record(out, backward)
    return out


# the model's sigma nonlinearity is ELU throughout
sigma_nonlinearity = elu


def softmax_rows(x: GradMatrix) -> GradMatrix:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    tape = x.tape
    out = GradMatrix(s, tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            _accum(x, s * (g - (g * s).sum(axis=1, keepdims=True)), own=True)

        tape.record(out, backward)
    return out


def concat_cols(a: GradMatrix, b: GradMatrix) -> GradMatrix:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    tape = _tape_of(a, b)
    out = GradMatrix(np.hstack([a.value, b.value]), tape)
    if tape is not None:
        split = a.shape[1]

        def backward(g: np.ndarray) -> None:
            _accum(a, g[:, :split])
            _accum(b, g[:, split:])

        tape.record(out, backward)
    return out


def slice_cols(x: GradMatrix, start: int, stop: int) -> GradMatrix:
    tape = x.tape
    out = GradMatrix(x.value[:, start:stop].copy(), tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(x.value)
            full[:, start:stop] = g
            _accum(x, full, own=True)

        tape.record(out, backward)
    return out


def row_select(x: GradMatrix, idx: np.ndarray) -> GradMatrix:
    idx = np.asarray(idx, dtype=np.int64)
    tape = x.tape
    out = GradMatrix(x.value[idx], tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(x.value)
            np.add.at(full, idx, g)
            _accum(x, full, own=True)

        tape.record(out, backward)
    return out


def sum_all(x: GradMatrix) -> GradMatrix:
    tape = x.tape
    out = GradMatrix(np.array([[x.value.sum()]]), tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            _accum(x, np.full_like(x.value, g[0, 0]), own=True)

        tape.record(out, backward)
    return out


def dropout(
    x: GradMatrix, rate: float, training: bool, rng: np.random.Generator
) -> GradMatrix:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time,
    so evaluation is the identity and needs no rescaling."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    tape = x.tape
    out = GradMatrix(x.value * mask, tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            _accum(x, g * mask, own=True)

        tape.record(out, backward)
    return out


def cross_entropy_rows(logits: GradMatrix, targets: np.ndarray) -> GradMatrix:
    """Sum of -ln softmax(logits)[i, targets[i]] over all rows.

    Fused log-sum-exp form: stable for large logits, and the backward pass
    is softmax(logits) minus the one-hot targets.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if len(targets) != n:
        raise ValueError(f"{len(targets)} targets for {n} rows")
    if len(targets) and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"label index out of range for {c} classes")
    x = logits.value
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    loss = float((lse - x[np.arange(n), targets]).sum())
    tape = logits.tape
    out = GradMatrix(np.array([[loss]]), tape)
    if tape is not None:

        def backward(g: np.ndarray) -> None:
            soft = np.exp(x - lse[:, None])
            soft[np.arange(n), targets] -= 1.0
            _accum(logits, g[0, 0] * soft, own=True)

        tape.record(out, backward)
    return out


def xavier_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform on [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic and central-difference gradients.

    ``rel_err[p]`` is max over elements of |analytic - numeric| /
    max(|analytic|, |numeric|, 1): relative where gradients are O(1) or
    larger, absolute below that so near-zero entries do not divide away
    the tolerance.
    """

    rel_err: dict[str, float]
    abs_err: dict[str, float]
    h: float
    tol: float
    max_rel_err: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.max_rel_err = max(self.rel_err.values(), default=0.0)
        self.passed = self.max_rel_err <= self.tol


def gradcheck(
    f: Callable[[Mapping[str, GradMatrix]], GradMatrix],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Check the tape's backward pass against central finite differences.

    ``f`` maps named GradMatrix leaves to a scalar GradMatrix. The analytic
    gradient comes from one taped forward/backward; the numeric one
    perturbs every parameter element by +-h through untracked re-evaluation,
    so the two routes share no code beyond ``f`` itself.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    tape = Tape()
    leaves = {k: GradMatrix(np.array(v, dtype=np.float64), tape) for k, v in params.items()}
    out = f(leaves)
    if out.value.shape != (1, 1) or not np.isfinite(out.value[0, 0]):
        raise ValueError("gradcheck needs a finite scalar function value")
    tape.backward(out)
    analytic = {
        k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for k, leaf in leaves.items()
    }

    def eval_at(values: Mapping[str, np.ndarray]) -> float:
        consts = {k: constant(v) for k, v in values.items()}
        y = f(consts)
        if not np.isfinite(y.value[0, 0]):
            raise ValueError("non-finite function value during finite differences")
        return float(y.value[0, 0])

    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    rel_err: dict[str, float] = {}
    abs_err: dict[str, float] = {}
    for name, v in base.items():
        numeric = np.zeros_like(v)
        flat = v.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = eval_at(base)
            flat[i] = orig - h
            down = eval_at(base)
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)
        diff = np.abs(analytic[name] - numeric)
        denom = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(numeric)), 1.0)
        rel_err[name] = float((diff / denom).max()) if diff.size else 0.0
        abs_err[name] = float(diff.max()) if diff.size else 0.0
    return GradCheckReport(rel_err=rel_err, abs_err=abs_err, h=h, tol=tol)
