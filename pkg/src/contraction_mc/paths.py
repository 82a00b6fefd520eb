"""Piecewise-linear and piecewise-constant paths on [0, 1].

Both kinds store one value per breakpoint.  For a piecewise-linear path the
value between breakpoints is the linear interpolant.  For a piecewise-constant
path ``values[i]`` holds on ``[t_i, t_{i+1})`` and ``values[-1]`` is the value
at ``t = 1``.  By default that end value equals the last interval value
("continuous in 1"); a jump at 1 is representable because the constant
interpolation of a random walk needs it, but such a path lies in no D_r class
and its mesh is reported as 0.

The batch helpers (``regrid``, ``combine_grids``, ...) work on a shared grid
``t`` with a value matrix ``V`` of shape ``(m, len(t))``; the ensemble and
recursion code is built on them.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEDUPE_TOL = 1e-12
COLLINEAR_TOL = 1e-12


class PathKind(str, enum.Enum):
    LINEAR = "piecewise_linear"
    CONSTANT = "piecewise_constant"


@dataclass(frozen=True)
class MetricOrder:
    """Order s = m + alpha of a Zolotarev metric, 0 < s <= 3."""

    s: float

    def __post_init__(self):
        if not 0 < self.s <= 3:
            raise ValueError(f"metric order must lie in (0, 3], got {self.s}")

    @property
    def m(self) -> int:
        return math.ceil(self.s) - 1

    @property
    def alpha(self) -> float:
        return self.s - self.m


# ---------------------------------------------------------------------------
# grid helpers


def dedupe_grid(t: np.ndarray, V: np.ndarray | None = None, tol: float = DEDUPE_TOL):
    """Merge breakpoints closer than ``tol``.

    A cluster keeps the location of its first member (or 0 / 1 when the cluster
    touches an endpoint) and the value of its last member.
    """
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        return (t, V) if V is not None else t
    starts = np.concatenate(([True], np.diff(t) > tol))
    if starts.all():
        return (t, V) if V is not None else t
    first = np.flatnonzero(starts)
    last = np.concatenate((first[1:] - 1, [t.size - 1]))
    new_t = t[first].copy()
    new_t[0] = t[0]
    if abs(t[-1] - 1.0) <= tol:
        new_t[-1] = 1.0
    if V is None:
        return new_t
    return new_t, V[..., last]


def union_grid(*grids: np.ndarray) -> np.ndarray:
    t = np.unique(np.concatenate([np.asarray(g, dtype=float) for g in grids]))
    return dedupe_grid(t)


def regrid(kind: PathKind, t: np.ndarray, V: np.ndarray, new_t: np.ndarray) -> np.ndarray:
    """Values of the batch ``(t, V)`` at the points ``new_t`` (exact for both kinds)."""
    new_t = np.asarray(new_t, dtype=float)
    if new_t.shape == t.shape and np.array_equal(new_t, t):
        return V
    if kind is PathKind.CONSTANT:
        idx = np.searchsorted(t, new_t + DEDUPE_TOL, side="right") - 1
        return V[..., np.clip(idx, 0, t.size - 1)]
    idx = np.clip(np.searchsorted(t, new_t, side="right") - 1, 0, t.size - 2)
    left = t[idx]
    w = (new_t - left) / (t[idx + 1] - left)
    w = np.clip(w, 0.0, 1.0)
    lo = V[..., idx]
    return lo + w * (V[..., idx + 1] - lo)


def combine_grids(kind: PathKind, parts, coeffs=None, shift=None):
    """Pointwise ``sum c_i * part_i + shift`` for batches on possibly different grids.

    ``parts`` is a sequence of ``(t, V)``; ``shift`` an optional ``(t, v)``
    with ``v`` broadcastable against the rows.
    """
    grids = [p[0] for p in parts]
    if shift is not None:
        grids.append(shift[0])
    grid = grids[0] if len(grids) == 1 else union_grid(*grids)
    total = None
    for i, (t, V) in enumerate(parts):
        term = regrid(kind, t, V, grid)
        if coeffs is not None:
            term = coeffs[i] * term
        total = term if total is None else total + term
    if shift is not None:
        total = total + regrid(kind, shift[0], np.asarray(shift[1]), grid)
    return grid, total


def _canonical_mask(kind: PathKind, t: np.ndarray, v: np.ndarray) -> np.ndarray:
    keep = np.ones(t.size, dtype=bool)
    if t.size <= 2:
        return keep
    if kind is PathKind.LINEAR:
        t0, t1, t2 = t[:-2], t[1:-1], t[2:]
        v0, v1, v2 = v[:-2], v[1:-1], v[2:]
        cross = (t1 - t0) * (v2 - v0) - (t2 - t0) * (v1 - v0)
        scale = np.maximum.reduce([np.ones_like(v0), np.abs(v0), np.abs(v1), np.abs(v2)])
        keep[1:-1] = np.abs(cross) > COLLINEAR_TOL * (t2 - t0) * scale
    else:
        v0, v1 = v[:-2], v[1:-1]
        scale = np.maximum(1.0, np.maximum(np.abs(v0), np.abs(v1)))
        keep[1:-1] = np.abs(v1 - v0) > COLLINEAR_TOL * scale
    return keep


# ---------------------------------------------------------------------------
# Path


class Path:
    """Immutable canonical path on [0, 1]."""

    __slots__ = ("kind", "breakpoints", "values")

    def __init__(self, kind, breakpoints, values):
        kind = PathKind(kind)
        t = np.array(breakpoints, dtype=float)
        v = np.array(values, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a path needs at least the breakpoints 0 and 1")
        if kind is PathKind.CONSTANT and v.size == t.size - 1:
            v = np.append(v, v[-1])
        if v.shape != t.shape:
            raise ValueError(f"{t.size} breakpoints but {v.size} values")
        if abs(t[0]) > DEDUPE_TOL or abs(t[-1] - 1.0) > DEDUPE_TOL:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(t) < -DEDUPE_TOL):
            raise ValueError("breakpoints must be increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        t[0], t[-1] = 0.0, 1.0
        t, v = dedupe_grid(t, v)
        if t.size < 2:
            raise ValueError("breakpoints collapse to a single point")
        keep = _canonical_mask(kind, t, v)
        t, v = t[keep], v[keep]
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("Path is immutable")

    # constructors
    @classmethod
    def linear(cls, points: Iterable[tuple[float, float]]) -> "Path":
        pts = list(points)
        return cls(PathKind.LINEAR, [p[0] for p in pts], [p[1] for p in pts])

    @classmethod
    def constant(cls, breakpoints, interval_values, end_value=None) -> "Path":
        vals = list(interval_values)
        vals.append(vals[-1] if end_value is None else end_value)
        return cls(PathKind.CONSTANT, breakpoints, vals)

    @classmethod
    def zero(cls, kind=PathKind.LINEAR) -> "Path":
        return cls(kind, [0.0, 1.0], [0.0, 0.0])

    @property
    def is_linear(self) -> bool:
        return self.kind is PathKind.LINEAR

    def __call__(self, t):
        return eval_path(self, t)

    def __eq__(self, other):
        if not isinstance(other, Path):
            return NotImplemented
        return (
            self.kind is other.kind
            and np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.kind, self.breakpoints.tobytes(), self.values.tobytes()))

    def __repr__(self):
        tag = "PL" if self.is_linear else "PC"
        pts = ", ".join(f"({a:.6g},{b:.6g})" for a, b in zip(self.breakpoints, self.values))
        return f"{tag}{{{pts}}}"

    def allclose(self, other: "Path", atol: float = 1e-12) -> bool:
        return (
            self.kind is other.kind
            and self.breakpoints.shape == other.breakpoints.shape
            and np.allclose(self.breakpoints, other.breakpoints, rtol=0, atol=atol)
            and np.allclose(self.values, other.values, rtol=0, atol=atol)
        )

    # serialization
    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "breakpoints": [float(x) for x in self.breakpoints],
            "values": [float(x) for x in self.values],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Path":
        return cls(d["kind"], d["breakpoints"], d["values"])

    @classmethod
    def from_json(cls, s: str) -> "Path":
        return cls.from_dict(json.loads(s))

    def to_csv(self, grid: Sequence[float]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(grid, eval_path(self, np.asarray(grid, dtype=float))):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# operations


def eval_path(f: Path, t):
    """Value of ``f`` at ``t`` (scalar or array); right-continuous for constant paths."""
    arr = np.asarray(t, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise ValueError("evaluation point outside [0, 1]")
    out = regrid(f.kind, f.breakpoints, f.values, np.atleast_1d(arr))
    return float(out[0]) if arr.ndim == 0 else out


def sup_norm(f: Path) -> float:
    return float(np.max(np.abs(f.values)))


def _segments(f: Path, g: Path | None = None):
    """Merged segments of ``f - g``: lengths, right limits at starts, left limits at ends."""
    if g is None:
        t = f.breakpoints
        parts = [(f, 1.0)]
    else:
        t = union_grid(f.breakpoints, g.breakpoints)
        parts = [(f, 1.0), (g, -1.0)]
    h = np.diff(t)
    a = np.zeros(h.size)
    b = np.zeros(h.size)
    for path, sign in parts:
        vals = regrid(path.kind, path.breakpoints, path.values, t)
        a += sign * vals[:-1]
        b += sign * (vals[1:] if path.is_linear else vals[:-1])
    return h, a, b


def _check_even(p: int, minimum: int) -> int:
    if int(p) != p or p < minimum or p % 2:
        raise ValueError(f"p must be an even integer >= {minimum}, got {p}")
    return int(p)


def lp_norm(f: Path, p: int) -> float:
    """(int_0^1 f(t)^p dt)^(1/p) for even ``p``, by exact per-segment integration."""
    p = _check_even(p, 2)
    M = sup_norm(f)
    if M == 0.0:
        return 0.0
    h, a, b = _segments(f)
    a, b = a / M, b / M
    j = np.arange(p + 1)
    # int_0^1 (a(1-u) + b u)^p du = sum_j a^j b^(p-j) / (p + 1)
    terms = (a[:, None] ** j) * (b[:, None] ** (p - j))
    seg = h * terms.sum(axis=1) / (p + 1)
    total = math.fsum(seg.tolist())
    return min(M, M * total ** (1.0 / p))


def psi_smooth(f: Path, y: Path, p: int) -> float:
    """L_p of sqrt(1 + (f - y)^2), integrated exactly (Gauss-Legendre on a degree-p polynomial)."""
    p = _check_even(p, 4)
    h, a, b = _segments(f, y)
    if not (np.any(a) or np.any(b)):
        return 1.0
    w_ends = np.sqrt(1.0 + np.maximum(a * a, b * b))
    scale = float(w_ends.max())
    nodes, weights = np.polynomial.legendre.leggauss(p // 2 + 1)
    u = 0.5 * (nodes + 1.0)
    g = a[:, None] + (b - a)[:, None] * u[None, :]
    integrand = ((1.0 + g * g) / scale**2) ** (p // 2)
    seg = h * (integrand @ (0.5 * weights))
    total = math.fsum(seg.tolist())
    return max(1.0, scale * total ** (1.0 / p))


def mesh(f: Path) -> float:
    """Largest r with f in C_r[0,1] (linear) or D_r[0,1] (constant); 0 if in none."""
    if not f.is_linear and f.values[-1] != f.values[-2]:
        return 0.0
    if f.breakpoints.size == 2:
        return 1.0
    return float(np.min(np.diff(f.breakpoints)))


def in_regular_class(f: Path, r: float) -> bool:
    return 0.0 < r <= mesh(f)


def _fraction_at_least(a, b, level):
    """Fraction of u in [0,1] with a + (b - a) u >= level."""
    out = np.where(a >= level, 1.0, 0.0)
    moving = a != b
    u = np.divide(level - a, b - a, out=np.zeros_like(a), where=moving)
    rising = moving & (b > a)
    falling = moving & (b < a)
    out = np.where(rising, np.clip(1.0 - u, 0.0, 1.0), out)
    out = np.where(falling, np.clip(u, 0.0, 1.0), out)
    return out


def excursion_measure(f: Path, g: Path, level: float) -> float:
    """Lebesgue measure of {t : |f(t) - g(t)| >= level}."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    if level == 0:
        return 1.0
    h, a, b = _segments(f, g)
    frac = _fraction_at_least(a, b, level) + _fraction_at_least(-a, -b, level)
    return min(1.0, math.fsum((h * frac).tolist()))


def affine_combine(coeffs: Sequence[float], paths: Sequence[Path], shift: Path | None = None) -> Path:
    """Canonical path equal to ``sum c_i f_i + shift``."""
    if len(paths) == 0 or len(coeffs) != len(paths):
        raise ValueError("need equally many (and at least one) coefficients and paths")
    kinds = {p.kind for p in paths}
    if shift is not None:
        kinds.add(shift.kind)
    if len(kinds) != 1:
        raise ValueError("cannot combine piecewise-linear and piecewise-constant paths")
    kind = kinds.pop()
    parts = [(p.breakpoints, p.values) for p in paths]
    sh = None if shift is None else (shift.breakpoints, shift.values)
    t, v = combine_grids(kind, parts, list(coeffs), sh)
    return Path(kind, t, v)


def difference(f: Path, g: Path) -> Path:
    return affine_combine([1.0, -1.0], [f, g])


# ---------------------------------------------------------------------------
# modulus of continuity (piecewise-linear paths only)


def modulus_of_continuity(g: Path, delta: float) -> float:
    """sup{|g(s) - g(t)| : |s - t| <= delta}, exact for a piecewise-linear g."""
    if not g.is_linear:
        raise ValueError("modulus of continuity is only defined here for continuous paths")
    if delta <= 0:
        return 0.0
    t = g.breakpoints
    cand = [t]
    for shift in (delta, -delta):
        s = t + shift
        cand.append(s[(s >= 0) & (s <= 1)])
    pts = np.unique(np.concatenate(cand))
    vals = eval_path(g, pts)
    # extremes sit at pairs where each end is a breakpoint or the pair spans exactly delta
    diff = np.abs(vals[:, None] - vals[None, :])
    close = np.abs(pts[:, None] - pts[None, :]) <= delta * (1 + 1e-14)
    return float(np.max(np.where(close, diff, 0.0)))


def modulus_inverse(g: Path, eps: float) -> float:
    """Largest delta in (0, 1] with modulus_of_continuity(g, delta) <= eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if modulus_of_continuity(g, 1.0) <= eps:
        return 1.0
    slopes = np.abs(np.diff(g.values) / np.diff(g.breakpoints))
    lo, hi = eps / float(slopes.max()), 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if modulus_of_continuity(g, mid) <= eps:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return lo


def excursion_bound_sixth(f: Path, g: Path, gamma: float, theta: float) -> float:
    """min(r, delta) / 6 with delta from g's modulus at gap theta * gamma."""
    delta = modulus_inverse(g, theta * gamma)
    return min(mesh(f), delta) / 6.0


def excursion_bound(f: Path, g: Path, gamma: float, theta: float) -> float:
    """A lower bound on excursion_measure(f, g, (1 - theta) gamma) valid whenever
    sup_norm(f - g) >= gamma and f is piecewise linear with mesh r:

        theta / (2 (4 - theta)) * min(r, delta),  delta = modulus_inverse(g, theta * gamma / 2).
    """
    delta = modulus_inverse(g, theta * gamma / 2.0)
    return theta / (2.0 * (4.0 - theta)) * min(mesh(f), delta)
