"""Finite path ensembles (empirical measures on path space).

Samples share one grid and are stored as a value matrix; a row together with the
grid is an exact (not necessarily canonical) representation of that path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .paths import Path, PathKind, regrid, union_grid

MAX_CELLS = 400_000_000


@dataclass(frozen=True, eq=False)
class Ensemble:
    kind: PathKind
    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] == 0:
            raise ValueError("an ensemble needs at least one sample")
        if values.shape[1] != grid.size:
            raise ValueError("value matrix does not match the grid")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "kind", PathKind(self.kind))
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def from_paths(cls, paths: Sequence[Path], meta: dict | None = None) -> "Ensemble":
        paths = list(paths)
        if not paths:
            raise ValueError("an ensemble needs at least one sample")
        kinds = {p.kind for p in paths}
        if len(kinds) != 1:
            raise ValueError("ensemble samples must all be of one kind")
        kind = kinds.pop()
        grid = union_grid(*[p.breakpoints for p in paths])
        if grid.size * len(paths) > MAX_CELLS:
            raise MemoryError("union grid too large for a shared-grid ensemble")
        values = np.stack([regrid(kind, p.breakpoints, p.values, grid) for p in paths])
        return cls(kind, grid, values, meta or {})

    @classmethod
    def from_rows(cls, kind, rows: Sequence[tuple[np.ndarray, np.ndarray]], meta=None) -> "Ensemble":
        """Stack per-sample ``(t, v)`` rows onto their union grid."""
        grids = [r[0] for r in rows]
        if all(g.shape == grids[0].shape and np.array_equal(g, grids[0]) for g in grids):
            grid = grids[0]
        else:
            grid = union_grid(*grids)
        values = np.stack([regrid(PathKind(kind), t, np.asarray(v).reshape(-1), grid) for t, v in rows])
        return cls(kind, grid, values, meta or {})

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def path(self, i: int) -> Path:
        return Path(self.kind, self.grid, self.values[i])

    def paths(self) -> list[Path]:
        return [self.path(i) for i in range(self.size)]

    def at(self, times) -> np.ndarray:
        """(size, k) matrix of sample values at ``times``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any((times < 0) | (times > 1)):
            raise ValueError("times must lie in [0, 1]")
        return regrid(self.kind, self.grid, self.values, times)

    def sup_norms(self) -> np.ndarray:
        return np.max(np.abs(self.values), axis=1)

    def maxima(self) -> np.ndarray:
        return np.max(self.values, axis=1)

    def take(self, idx) -> "Ensemble":
        return Ensemble(self.kind, self.grid, self.values[np.asarray(idx)], self.meta)

    def with_meta(self, **kw) -> "Ensemble":
        return Ensemble(self.kind, self.grid, self.values, {**self.meta, **kw})

    # persistence
    def write_jsonl(self, path, header: dict | None = None) -> None:
        head = {"type": "header", "kind": self.kind.value, "size": self.size}
        head.update(self.meta)
        head.update(header or {})
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(head, sort_keys=True, separators=(",", ":")) + "\n")
            for i in range(self.size):
                fh.write(self.path(i).to_json() + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "Ensemble":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty ensemble file")
        head = json.loads(lines[0])
        if head.get("type") != "header":
            raise ValueError(f"{path}: first line is not a header record")
        paths = [Path.from_json(ln) for ln in lines[1:]]
        meta = {k: v for k, v in head.items() if k not in ("type", "kind", "size")}
        return cls.from_paths(paths, meta)


def concat(parts: Iterable[Ensemble], meta: dict | None = None) -> Ensemble:
    parts = list(parts)
    grid = parts[0].grid
    if all(p.grid.shape == grid.shape and np.array_equal(p.grid, grid) for p in parts):
        values = np.concatenate([p.values for p in parts])
    else:
        grid = union_grid(*[p.grid for p in parts])
        values = np.concatenate([regrid(p.kind, p.grid, p.values, grid) for p in parts])
    return Ensemble(parts[0].kind, grid, values, meta or parts[0].meta)


def digest(obj) -> str:
    """Stable hash of a JSON-serializable object (key order irrelevant)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
