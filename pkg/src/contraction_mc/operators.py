"""Continuous linear operators on path space with known operator norms.

Operators are small immutable expression trees.  ``apply_grid`` acts on a batch
``(t, V)`` sharing one grid, which is what the samplers use; ``apply`` wraps
it for a single :class:`Path`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .paths import Path, PathKind, combine_grids, dedupe_grid


@dataclass(frozen=True)
class Scale:
    c: float

    def apply_grid(self, kind, t, V):
        return t, self.c * V

    def norm(self) -> float:
        return abs(self.c)


@dataclass(frozen=True)
class FrontSplit:
    """phi_beta: f(beta t) on [0, 1/beta], then held at f(1)."""

    beta: float

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError(f"split parameter must exceed 1, got {self.beta}")

    def apply_grid(self, kind, t, V):
        new_t = np.append(t / self.beta, 1.0)
        new_V = np.concatenate((V, V[..., -1:]), axis=-1)
        return dedupe_grid(new_t, new_V)

    def norm(self) -> float:
        return 1.0


@dataclass(frozen=True)
class BackSplit:
    """psi_beta: held at f(0) on [0, 1/beta], then f((beta t - 1) / (beta - 1))."""

    beta: float

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError(f"split parameter must exceed 1, got {self.beta}")

    def apply_grid(self, kind, t, V):
        cut = 1.0 / self.beta
        mapped = cut + (1.0 - cut) * t
        mapped[-1] = 1.0
        new_t = np.concatenate(([0.0], mapped))
        new_V = np.concatenate((V[..., :1], V), axis=-1)
        return dedupe_grid(new_t, new_V)

    def norm(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Compose:
    """outer after inner."""

    outer: "PathOperator"
    inner: "PathOperator"

    def apply_grid(self, kind, t, V):
        t, V = self.inner.apply_grid(kind, t, V)
        return self.outer.apply_grid(kind, t, V)

    def norm(self) -> float:
        return self.outer.norm() * self.inner.norm()


@dataclass(frozen=True)
class Sum:
    left: "PathOperator"
    right: "PathOperator"

    def apply_grid(self, kind, t, V):
        a = self.left.apply_grid(kind, t, V)
        b = self.right.apply_grid(kind, t, V)
        return combine_grids(kind, [a, b])

    def norm(self) -> float:
        return self.left.norm() + self.right.norm()


PathOperator = Union[Scale, FrontSplit, BackSplit, Compose, Sum]


def scaled(c: float, op: PathOperator) -> PathOperator:
    return Compose(Scale(c), op)


def apply(op: PathOperator, f: Path) -> Path:
    t, V = op.apply_grid(f.kind, f.breakpoints, f.values[None, :])
    return Path(f.kind, t, V[0])


def op_norm(op: PathOperator) -> float:
    """Operator norm in sup-norm; exact for Scale and the splits, an upper bound
    (product / sum of parts) for Compose and Sum."""
    return op.norm()


def norm_is_exact(op: PathOperator) -> bool:
    if isinstance(op, (Scale, FrontSplit, BackSplit)):
        return True
    if isinstance(op, Compose):
        # a scalar factor commutes with everything, so the product is exact there
        return (isinstance(op.outer, Scale) or isinstance(op.inner, Scale)) and (
            norm_is_exact(op.outer) and norm_is_exact(op.inner)
        )
    return False


# ---------------------------------------------------------------------------
# JSON


def to_dict(op: PathOperator) -> dict:
    if isinstance(op, Scale):
        return {"kind": "scale", "params": {"c": op.c}, "children": []}
    if isinstance(op, FrontSplit):
        return {"kind": "front_split", "params": {"beta": op.beta}, "children": []}
    if isinstance(op, BackSplit):
        return {"kind": "back_split", "params": {"beta": op.beta}, "children": []}
    if isinstance(op, Compose):
        return {"kind": "compose", "params": {}, "children": [to_dict(op.outer), to_dict(op.inner)]}
    if isinstance(op, Sum):
        return {"kind": "sum", "params": {}, "children": [to_dict(op.left), to_dict(op.right)]}
    raise TypeError(f"not a path operator: {op!r}")


def from_dict(d: dict) -> PathOperator:
    kind, params, kids = d["kind"], d.get("params", {}), d.get("children", [])
    if kind == "scale":
        return Scale(float(params["c"]))
    if kind == "front_split":
        return FrontSplit(float(params["beta"]))
    if kind == "back_split":
        return BackSplit(float(params["beta"]))
    if kind == "compose":
        return Compose(from_dict(kids[0]), from_dict(kids[1]))
    if kind == "sum":
        return Sum(from_dict(kids[0]), from_dict(kids[1]))
    raise ValueError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# coefficient draws


@dataclass(frozen=True)
class CoefficientDraw:
    """One draw of (A_1, ..., A_K, b, I) for a recursion at size n."""

    operators: tuple
    indices: tuple
    shift: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(self.operators) != len(self.indices):
            raise ValueError("one subproblem index per operator")
        if any(i < 0 for i in self.indices):
            raise ValueError("subproblem indices must be nonnegative")

    @property
    def K(self) -> int:
        return len(self.operators)


def donsker_coefficients(n: int) -> CoefficientDraw:
    """Coefficients of the random-walk split into the first ceil(n/2) and last floor(n/2) steps."""
    if n < 2:
        raise ValueError("the random-walk recursion starts at n = 2")
    hi, lo = -(-n // 2), n // 2
    beta = n / hi
    return CoefficientDraw(
        operators=(
            scaled(math.sqrt(hi / n), FrontSplit(beta)),
            scaled(math.sqrt(lo / n), BackSplit(beta)),
        ),
        indices=(hi, lo),
    )
