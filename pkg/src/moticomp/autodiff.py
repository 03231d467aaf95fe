"""Reverse-mode automatic differentiation over dense float64 tensors.

A Tape records every forward operation in construction order (which is a
topological order by construction) and replays it backwards to accumulate
gradients. Shapes must match exactly; the only broadcasting anywhere is
scalar * tensor (the `scale` and `scalar_mul` kinds). Every forward output
is checked finite.

Matmul nodes carry their multiply-accumulate count, so a tape doubles as
an instrumented operation counter for cost accounting.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

Array = np.ndarray


class Tensor:
    """A dense float64 array bound to the tape that produced it."""

    __slots__ = ("values", "requires_grad", "grad", "tape", "tid")

    def __init__(self, values: Array, requires_grad: bool, tape: "Tape", tid: int):
        self.values = values
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.tape = tape
        self.tid = tid

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded operation: ids of its operands and its backward closure."""

    __slots__ = ("kind", "input_ids", "output_id", "backward_fn", "macs")

    def __init__(self, kind, input_ids, output_id, backward_fn, macs=0):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward_fn = backward_fn
        self.macs = macs


OP_KINDS = (
    "matmul", "add", "hadamard", "tanh", "softmax_lastdim", "mean", "sum_sq",
    "concat_lastdim", "slice_lastdim", "scale",
    # extensions needed by the models; each has the same contract and
    # finite-difference coverage as the core kinds
    "exp", "sqrt", "div", "transpose", "repeat_rows", "reshape",
    "scalar_mul", "straight_through",
)


class Tape:
    """Single-use recording of a forward computation. Not thread-safe."""

    def __init__(self):
        self.tensors: list[Tensor] = []
        self.nodes: list[Node] = []
        self.mac_count: int = 0

    # ------------------------------------------------------------------
    # tensor construction

    def leaf(self, values, requires_grad: bool = False) -> Tensor:
        v = np.asarray(values, dtype=np.float64)
        if v.ndim > 0:  # ascontiguousarray would promote 0-d scalars to 1-d
            v = np.ascontiguousarray(v)
        if not np.all(np.isfinite(v)):
            raise NumericError("leaf tensor contains non-finite values")
        t = Tensor(v, requires_grad, self, len(self.tensors))
        self.tensors.append(t)
        return t

    def constant(self, values) -> Tensor:
        return self.leaf(values, requires_grad=False)

    def _emit(self, kind: str, inputs: Sequence[Tensor], values: Array,
              backward_fn: Callable, macs: int = 0) -> Tensor:
        for t in inputs:
            if t.tape is not self:
                raise ValueError(f"{kind}: input tensor belongs to a different tape")
        if not np.all(np.isfinite(values)):
            raise NumericError(f"{kind} produced non-finite values")
        rg = any(t.requires_grad for t in inputs)
        out = Tensor(values, rg, self, len(self.tensors))
        self.tensors.append(out)
        self.nodes.append(Node(kind, tuple(t.tid for t in inputs), out.tid,
                               backward_fn, macs))
        self.mac_count += macs
        return out

    # ------------------------------------------------------------------
    # operations

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not conform")
        av, bv = a.values, b.values
        na, nb = a.requires_grad, b.requires_grad

        def bwd(g):
            return (g @ bv.T if na else None, av.T @ g if nb else None)

        m, k = a.shape
        n = b.shape[1]
        return self._emit("matmul", (a, b), av @ bv, bwd, macs=m * k * n)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add shapes {a.shape} vs {b.shape}")
        return self._emit("add", (a, b), a.values + b.values, lambda g: (g, g))

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"hadamard shapes {a.shape} vs {b.shape}")
        av, bv = a.values, b.values
        return self._emit("hadamard", (a, b), av * bv, lambda g: (g * bv, g * av))

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.values)
        return self._emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))

    def exp(self, a: Tensor) -> Tensor:
        with np.errstate(over="ignore"):
            y = np.exp(a.values)
        return self._emit("exp", (a,), y, lambda g: (g * y,))

    def sqrt(self, a: Tensor) -> Tensor:
        with np.errstate(invalid="ignore"):  # negatives surface as NumericError
            y = np.sqrt(a.values)
        return self._emit("sqrt", (a,), y, lambda g: (g * 0.5 / y,))

    def div(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"div shapes {a.shape} vs {b.shape}")
        av, bv = a.values, b.values
        with np.errstate(divide="ignore", invalid="ignore"):
            y = av / bv
        return self._emit("div", (a, b), y, lambda g: (g / bv, -g * av / (bv * bv)))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        if not np.isfinite(c):
            raise NumericError("scale factor is not finite")
        return self._emit("scale", (a,), a.values * c, lambda g: (g * c,))

    def scalar_mul(self, a: Tensor, s: Tensor) -> Tensor:
        """Multiply a tensor by a one-element tensor (the allowed broadcast)."""
        if s.values.size != 1:
            raise ShapeError(f"scalar_mul scalar has shape {s.shape}")
        av = a.values
        sv = float(s.values.reshape(()))
        s_shape = s.shape

        def bwd(g):
            return (g * sv, np.sum(g * av).reshape(s_shape))

        return self._emit("scalar_mul", (a, s), av * sv, bwd)

    def softmax_lastdim(self, a: Tensor) -> Tensor:
        x = a.values
        shifted = x - np.max(x, axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / np.sum(e, axis=-1, keepdims=True)

        def bwd(g):
            dot = np.sum(g * y, axis=-1, keepdims=True)
            return (y * (g - dot),)

        return self._emit("softmax_lastdim", (a,), y, bwd)

    def mean(self, a: Tensor) -> Tensor:
        n = a.values.size
        shape = a.shape

        def bwd(g):
            return (np.full(shape, float(g) / n),)

        return self._emit("mean", (a,), np.asarray(a.values.mean()), bwd)

    def sum_sq(self, a: Tensor) -> Tensor:
        av = a.values
        return self._emit("sum_sq", (a,), np.asarray(np.sum(av * av)),
                          lambda g: (2.0 * float(g) * av,))

    def concat_lastdim(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeError("concat_lastdim of zero tensors")
        lead = parts[0].shape[:-1]
        for p in parts:
            if p.shape[:-1] != lead:
                raise ShapeError("concat_lastdim leading dimensions differ")
        widths = [p.shape[-1] for p in parts]
        splits = np.cumsum(widths)[:-1]

        def bwd(g):
            return tuple(np.ascontiguousarray(piece)
                         for piece in np.split(g, splits, axis=-1))

        values = np.concatenate([p.values for p in parts], axis=-1)
        return self._emit("concat_lastdim", tuple(parts), values, bwd)

    def slice_lastdim(self, a: Tensor, start: int, stop: int) -> Tensor:
        width = a.shape[-1]
        if not 0 <= start < stop <= width:
            raise ShapeError(f"slice [{start}:{stop}] outside width {width}")
        shape = a.shape

        def bwd(g):
            full = np.zeros(shape)
            full[..., start:stop] = g
            return (full,)

        values = np.ascontiguousarray(a.values[..., start:stop])
        return self._emit("slice_lastdim", (a,), values, bwd)

    def transpose(self, a: Tensor) -> Tensor:
        if a.values.ndim != 2:
            raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
        return self._emit("transpose", (a,), np.ascontiguousarray(a.values.T),
                          lambda g: (np.ascontiguousarray(g.T),))

    def repeat_rows(self, a: Tensor, n: int) -> Tensor:
        if a.values.ndim != 2 or a.shape[0] != 1:
            raise ShapeError(f"repeat_rows expects shape (1, d), got {a.shape}")
        if n < 1:
            raise ShapeError(f"repeat count must be >= 1, got {n}")
        return self._emit("repeat_rows", (a,), np.repeat(a.values, n, axis=0),
                          lambda g: (g.sum(axis=0, keepdims=True),))

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        if int(np.prod(shape, dtype=np.int64)) != a.values.size:
            raise ShapeError(f"cannot reshape {a.shape} to {shape}")
        old = a.shape
        return self._emit("reshape", (a,), a.values.reshape(shape),
                          lambda g: (g.reshape(old),))

    def straight_through(self, soft: Tensor) -> Tensor:
        """Row-wise one-hot of the argmax; backward passes gradients through.

        Ties break toward the lowest index. The output is the hard vector in
        the forward pass while the backward pass treats it as the soft input.
        """
        x = soft.values
        if x.ndim != 2:
            raise ShapeError(f"straight_through expects 2-D rows, got {x.shape}")
        hard = np.zeros_like(x)
        hard[np.arange(x.shape[0]), np.argmax(x, axis=1)] = 1.0
        return self._emit("straight_through", (soft,), hard, lambda g: (g,))

    # ------------------------------------------------------------------

    def forward_op(self, kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
        """Dispatch by kind name; the uniform entry point over all ops."""
        if kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {kind!r}")
        fn = getattr(self, kind)
        if kind == "concat_lastdim":
            return fn(inputs)
        return fn(*inputs, **kwargs)

    def backward(self, loss: Tensor) -> None:
        """Reverse accumulation from a scalar loss produced on this tape.

        Populates .grad on every requires_grad tensor; tensors with no path
        to the loss get zeros.
        """
        if loss.tape is not self:
            raise ValueError("loss tensor was not produced on this tape")
        if loss.values.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: list[Array | None] = [None] * len(self.tensors)
        grads[loss.tid] = np.ones_like(loss.values)
        for node in reversed(self.nodes):
            g = grads[node.output_id]
            if g is None:
                continue
            for tid, ig in zip(node.input_ids, node.backward_fn(g)):
                if ig is None or not self.tensors[tid].requires_grad:
                    continue
                # accumulation never mutates in place, so views are safe
                grads[tid] = ig if grads[tid] is None else grads[tid] + ig
        for t in self.tensors:
            if t.requires_grad:
                g = grads[t.tid]
                t.grad = np.zeros_like(t.values) if g is None else np.asarray(g)


def grad_check(f: Callable[[Tape, Tensor], Tensor], point, epsilon: float = 1e-4) -> float:
    """Max relative error between backward gradients and central differences.

    f maps (tape, tensor) to a scalar tensor. The relative error denominator
    is max(1, |analytic|, |numeric|) per coordinate.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    point = np.asarray(point, dtype=np.float64)
    tape = Tape()
    x = tape.leaf(point, requires_grad=True)
    out = f(tape, x)
    if out.values.size != 1:
        raise ShapeError("grad_check target must be scalar-valued")
    tape.backward(out)
    analytic = x.grad.reshape(-1)

    def evaluate(vals: Array) -> float:
        t = Tape()
        return f(t, t.leaf(vals)).item()

    flat = point.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + epsilon
        hi = evaluate(bumped.reshape(point.shape))
        bumped[i] = flat[i] - epsilon
        lo = evaluate(bumped.reshape(point.shape))
        numeric = (hi - lo) / (2.0 * epsilon)
        denom = max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
