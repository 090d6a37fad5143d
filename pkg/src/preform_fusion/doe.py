"""Latin Hypercube Sampling over bounded parameter spaces.

Random numbers come from numpy's PCG64 bit generator (``np.random.default_rng``),
which produces the same stream on every platform for a given seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered box of named real dimensions, each given as ``(name, lower, upper)``."""

    dims: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        dims = tuple((str(n), float(lo), float(hi)) for n, lo, hi in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise ValueError("parameter space needs at least one dimension")
        names = [d[0] for d in dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        for name, lo, hi in dims:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"dimension {name!r} has non-finite bounds")
            if not lo < hi:
                raise ValueError(f"dimension {name!r}: lower {lo} must be < upper {hi}")

    @classmethod
    def from_bounds(cls, bounds: dict[str, Sequence[float]]) -> "ParameterSpace":
        return cls(tuple((name, lo, hi) for name, (lo, hi) in bounds.items()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d[0] for d in self.dims)

    @property
    def lower(self) -> np.ndarray:
        return np.array([d[1] for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d[2] for d in self.dims])

    def __len__(self) -> int:
        return len(self.dims)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    space: ParameterSpace
    points: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def to_csv(self, path) -> None:
        """Write a header of dimension names followed by one row per point."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.space.names)
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])


def lhs_sample(space: ParameterSpace, n: int, seed: int) -> DesignMatrix:
    """Draw an ``n``-point Latin hypercube design.

    Each dimension is cut into ``n`` equal-width strata. A random permutation
    assigns strata to rows and every point is placed uniformly at random inside
    its stratum. Permutations are drawn independently per dimension.
    """
    if not isinstance(space, ParameterSpace):
        raise TypeError("space must be a ParameterSpace")
    if int(n) != n or n < 1:
        raise ValueError(f"sample count must be a positive integer, got {n!r}")
    n = int(n)
    rng = np.random.default_rng(seed)
    d = len(space)
    unit = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        unit[:, j] = (strata + rng.random(n)) / n
    points = space.lower + unit * (space.upper - space.lower)
    # guard against rounding past the upper edge
    points = np.minimum(points, space.upper)
    points.flags.writeable = False
    return DesignMatrix(space=space, points=points, seed=int(seed))


def _strata(matrix: DesignMatrix) -> np.ndarray:
    space = matrix.space
    frac = (matrix.points - space.lower) / (space.upper - space.lower)
    idx = np.floor(frac * matrix.n).astype(np.int64)
    # the closed upper edge belongs to the last stratum
    return np.where(frac == 1.0, matrix.n - 1, idx)


def verify_stratification(matrix: DesignMatrix) -> bool:
    """True iff every column has exactly one point in each of its ``n`` strata."""
    pts = np.asarray(matrix.points)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("design matrix must contain at least one point")
    if pts.shape[1] != len(matrix.space):
        raise ValueError("design matrix width does not match its parameter space")
    if not np.all(np.isfinite(pts)):
        return False
    if np.any(pts < matrix.space.lower) or np.any(pts > matrix.space.upper):
        return False
    n = pts.shape[0]
    idx = _strata(matrix)
    if np.any(idx < 0) or np.any(idx >= n):
        return False
    return all(np.array_equal(np.sort(idx[:, j]), np.arange(n)) for j in range(pts.shape[1]))
