"""Bidirectional LSTM built from tape primitives.

Standard cell: sigmoid input/forget/output gates, tanh candidate, gates
packed along the last weight axis in (i, f, g, o) order. The bidirectional
form runs the same cell over the reversed sequence and concatenates both
hidden streams per timestep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, concat, index, mul, reshape, sigmoid, tanh


class EmptySequenceError(ValueError):
    pass


@dataclass
class LstmParams:
    wx: Tensor  # (D, 4U)
    wh: Tensor  # (U, 4U)
    b: Tensor  # (4U,)

    @property
    def units(self) -> int:
        return self.wh.shape[0]


def lstm_run(x: Tensor, p: LstmParams, reverse: bool = False) -> Tensor:
    """Run one direction over ``x`` (N, T, D), returning (N, T, U)."""
    n, t, d = x.shape
    u = p.units
    if p.wx.shape != (d, 4 * u):
        raise ShapeError(f"wx shape {p.wx.shape} must be ({d}, {4 * u})")
    h = Tensor(np.zeros((n, u), dtype=x.dtype))
    c = Tensor(np.zeros((n, u), dtype=x.dtype))
    steps = range(t - 1, -1, -1) if reverse else range(t)
    outputs: list[Tensor | None] = [None] * t
    for step in steps:
        xt = index(x, (slice(None), step))
        z = (xt @ p.wx) + (h @ p.wh) + p.b
        gi = sigmoid(index(z, (slice(None), slice(0, u))))
        gf = sigmoid(index(z, (slice(None), slice(u, 2 * u))))
        gg = tanh(index(z, (slice(None), slice(2 * u, 3 * u))))
        go = sigmoid(index(z, (slice(None), slice(3 * u, 4 * u))))
        c = mul(gf, c) + mul(gi, gg)
        h = mul(go, tanh(c))
        outputs[step] = reshape(h, (n, 1, u))
    return concat([o for o in outputs if o is not None], axis=1)


def bilstm(x: Tensor, forward: LstmParams, backward: LstmParams) -> Tensor:
    """Bidirectional pass over (N, T, D) or (T, D); output doubles the unit
    axis, with the backward stream re-aligned to forward time order."""
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError(f"bilstm input must be (N,T,D) or (T,D), got {x.ndim}-d")
    if x.shape[1] == 0:
        raise EmptySequenceError("bilstm requires at least one timestep")
    fwd = lstm_run(x, forward, reverse=False)
    bwd = lstm_run(x, backward, reverse=True)
    out = concat([fwd, bwd], axis=2)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out
