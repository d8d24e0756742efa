"""Adam with bias correction.

``adam_step`` is the functional core over plain arrays; ``Adam`` binds it to
a dict of parameter tensors for training loops. Moments and the step counter
live in ``AdamState`` so optimizer state can be inspected or rebuilt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> dict[str, np.ndarray]:
    """One bias-corrected update; mutates ``state``, returns new parameters."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NonFiniteGradientError(
                f"gradient for {name!r} has {bad} non-finite entries at step {state.t + 1}"
            )
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    updated: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=p.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        mhat = m / bc1
        vhat = v / bc2
        updated[name] = p - state.learning_rate * mhat / (np.sqrt(vhat) + eps)
    return updated


class Adam:
    """Adam bound to named parameter tensors; rebinds ``data`` on step."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = dict(params)
        self.state = AdamState(learning_rate, beta1, beta2, epsilon)

    @property
    def learning_rate(self) -> float:
        return self.state.learning_rate

    @learning_rate.setter
    def learning_rate(self, value: float) -> None:
        self.state.learning_rate = value

    def step(self) -> None:
        values = {name: t.data for name, t in self.params.items()}
        grads = {
            name: t.grad for name, t in self.params.items() if t.grad is not None
        }
        updated = adam_step(values, grads, self.state)
        for name, t in self.params.items():
            t.data = updated[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()
