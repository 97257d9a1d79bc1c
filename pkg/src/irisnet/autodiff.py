"""Tape-based reverse-mode differentiation.

Differentiable ops call :func:`record` after computing their output.  When a
:class:`Tape` is active (``with Tape() as tape:``) the call appends a
:class:`Node`; otherwise it is a no-op, so inference pays nothing.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from irisnet.tensor import Tensor

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("irisnet_tape", default=None)


@dataclass(frozen=True)
class Node:
    """One executed op.

    ``backward`` maps the output gradient to one gradient (or None) per input.
    ``replay`` recomputes the output array from the recorded inputs.
    """

    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    replay: Callable[[], np.ndarray] | None = None


class Tape:
    """Ordered record of differentiable ops run while the tape is active."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise RuntimeError("tape is already active")
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def output(self) -> "Tensor":
        if not self.nodes:
            raise ValueError("tape is empty")
        return self.nodes[-1].output

    def leaves(self) -> list["Tensor"]:
        """Tensors consumed by recorded ops but produced by none of them, in first-use order."""
        produced = {id(n.output) for n in self.nodes}
        seen: dict[int, "Tensor"] = {}
        for n in self.nodes:
            for t in n.inputs:
                if t is not None and id(t) not in produced and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())

    def replay(self) -> bool:
        """True when recomputing every node reproduces its recorded output exactly."""
        return all(
            n.replay is None or np.array_equal(n.replay(), n.output.data) for n in self.nodes
        )


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def record(op: str, inputs: tuple, output: "Tensor", backward, replay=None) -> None:
    tape = _ACTIVE.get()
    if tape is not None:
        tape.nodes.append(Node(op, inputs, output, backward, replay))


class paused:
    """Context manager that suspends recording (e.g. for validation passes)."""

    def __enter__(self):
        self._token = _ACTIVE.set(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)


def backward_pass(
    tape: Tape,
    seed: "Tensor | np.ndarray | None" = None,
    wrt: Iterable["Tensor"] | None = None,
) -> dict["Tensor", "Tensor"]:
    """Propagate ``seed`` from the tape's final output back to its leaves.

    Returns a map from tensor (by identity) to its gradient.  With ``wrt``
    given, exactly those tensors are keyed, with zero gradients for any the
    output does not depend on; otherwise every leaf of the tape is keyed.
    A missing ``seed`` means ones, the usual choice for a scalar loss.
    """
    from irisnet.tensor import Tensor

    if not tape.nodes:
        raise ValueError("backward_pass needs a nonempty tape")
    final = tape.nodes[-1].output
    if seed is None:
        seed_arr = np.ones(final.shape)
    else:
        seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=np.float64)
        if seed_arr.shape != final.shape:
            raise ValueError(f"seed shape {seed_arr.shape} != final output shape {final.shape}")

    grads: dict[int, np.ndarray] = {id(final): np.array(seed_arr, dtype=np.float64)}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        for inp, g in zip(node.inputs, node.backward(g_out)):
            if inp is None or g is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.asarray(g, dtype=np.float64)

    targets = list(wrt) if wrt is not None else tape.leaves()
    out: dict[Tensor, Tensor] = {}
    for t in targets:
        g = grads.get(id(t))
        out[t] = Tensor._wrap(np.zeros(t.shape) if g is None else np.reshape(g, t.shape))
    return out


def grad_of(fn: Callable[["Tensor"], "Tensor"], x: "Tensor") -> np.ndarray:
    """Analytic gradient of a scalar-valued taped function at ``x``."""
    with Tape() as tape:
        y = fn(x)
    if y.size != 1:
        raise ValueError(f"function must return a single-element tensor, got shape {y.shape}")
    if not tape.nodes or tape.output is not y:
        # fn did not touch x through any recorded op
        return np.zeros(x.shape)
    return backward_pass(tape, wrt=[x])[x].numpy()


def finite_difference_check(
    fn: Callable[["Tensor"], "Tensor"], x: "Tensor", step: float = 1e-5
) -> float:
    """Max relative error between the taped gradient and central differences.

    Error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    from irisnet.tensor import Tensor

    if step <= 0:
        raise ValueError("step must be positive")
    analytic = grad_of(fn, x)
    base = x.numpy().ravel()
    numeric = np.empty_like(base)
    for i in range(base.size):
        vals = []
        for sign in (1.0, -1.0):
            probe = base.copy()
            probe[i] += sign * step
            v = float(fn(Tensor(probe, x.shape)))
            if not np.isfinite(v):
                raise FloatingPointError(f"fn is non-finite at coordinate {i}")
            vals.append(v)
        numeric[i] = (vals[0] - vals[1]) / (2.0 * step)
    a = analytic.ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
