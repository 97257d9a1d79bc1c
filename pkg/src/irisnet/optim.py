"""Adam over a name -> Tensor parameter map."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from irisnet.tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor | np.ndarray],
    state: OptimizerState,
) -> tuple[dict[str, Tensor], OptimizerState]:
    """One bias-corrected Adam update.

    Returns new parameter tensors (inputs are immutable) and the advanced
    state.  Nothing is modified if any gradient is non-finite.
    """
    gs = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros(p.shape) if g is None else (g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64))
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}; step aborted")
        gs[name] = g

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1, bc2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    out = {}
    for name, p in params.items():
        g = gs[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        out[name] = Tensor._wrap(p.data - update)
    return out, state
