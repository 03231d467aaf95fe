"""Shared building blocks for the tape-based models: linear layers, binding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor


@dataclass
class LinearParams:
    """Weight (fan_in, fan_out) and bias (1, fan_out) of one affine layer."""

    w: np.ndarray
    b: np.ndarray

    @property
    def fan_in(self) -> int:
        return self.w.shape[0]

    @property
    def fan_out(self) -> int:
        return self.w.shape[1]


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                zero: bool = False) -> LinearParams:
    """Fan-in-scaled uniform init; zero=True gives an all-zero layer."""
    if zero:
        return LinearParams(w=np.zeros((fan_in, fan_out)), b=np.zeros((1, fan_out)))
    bound = 1.0 / np.sqrt(fan_in)
    return LinearParams(w=rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                        b=np.zeros((1, fan_out)))


def linear(tape: Tape, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b, repeating the bias row when x has several rows."""
    y = tape.matmul(x, w)
    if y.shape[0] == 1:
        return tape.add(y, b)
    return tape.add(y, tape.repeat_rows(b, y.shape[0]))


def mlp(tape: Tape, x: Tensor, tensors: dict[str, Tensor], prefix: str,
        n_layers: int) -> Tensor:
    """Affine layers named `{prefix}{i}.w/.b` with tanh between them."""
    h = x
    for i in range(n_layers):
        h = linear(tape, h, tensors[f"{prefix}{i}.w"], tensors[f"{prefix}{i}.b"])
        if i < n_layers - 1:
            h = tape.tanh(h)
    return h


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    # sigmoid(x) = 0.5 * tanh(x / 2) + 0.5, composed from existing kinds
    half = tape.scale(tape.tanh(tape.scale(x, 0.5)), 0.5)
    return tape.add(half, tape.constant(np.full(x.shape, 0.5)))


def bind(tape: Tape, named: dict[str, np.ndarray],
         trainable: bool) -> dict[str, Tensor]:
    """Register a parameter dict on a tape, optionally as gradient leaves."""
    return {name: tape.leaf(arr, requires_grad=trainable)
            for name, arr in named.items()}
