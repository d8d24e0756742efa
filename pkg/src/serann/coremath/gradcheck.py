"""Central finite-difference verification of tape gradients.

``fn`` rebuilds its graph from the current leaf data on every call, so
perturbing a leaf in place and re-evaluating yields the numeric directional
derivative. Checks should run on float64 leaves; float32 truncation noise is
larger than the errors being hunted.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .rng import Rng
from .tensor import Tensor


def finite_diff_grad_check(
    fn: Callable[[], Tensor],
    wrt: Iterable[Tensor],
    epsilon: float = 1e-4,
    max_checks_per_tensor: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    When ``max_checks_per_tensor`` is set, that many elements per tensor are
    sampled (seeded through ``rng``) instead of sweeping every element, which
    keeps checks on full models affordable.
    """
    wrt = list(wrt)
    for t in wrt:
        t.zero_grad()
    out = fn()
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt
    ]

    if rng is None:
        rng = Rng(0)
    worst = 0.0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_checks_per_tensor is not None and n > max_checks_per_tensor:
            picks = rng.choice_without_replacement(n, max_checks_per_tensor)
        else:
            picks = np.arange(n)
        aflat = a.reshape(-1)
        for i in picks:
            saved = flat[i]
            flat[i] = saved + epsilon
            f_plus = float(fn().data.reshape(-1)[0])
            flat[i] = saved - epsilon
            f_minus = float(fn().data.reshape(-1)[0])
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(float(aflat[i]) - numeric)
            denom = max(abs(float(aflat[i])) + abs(numeric), 1e-6)
            worst = max(worst, err / denom)
    return worst
