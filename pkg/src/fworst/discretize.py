"""Observation model for the consistent estimators.

Curves are replaced by step functions frozen at a random partition: a new
partition point is placed the first time any monitored coordinate has moved
by ``delta`` since the previous point.  The module also holds the truncation
operator applied to estimated eigenfunctions and the sample split that keeps
numerators, denominators and eigenfunction estimates independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import InvalidArgumentError, as_float_array, check_grid, make_rng
from .basis import BasisSpec, trapezoid_weights


@dataclass(frozen=True)
class Partition:
    points: np.ndarray
    indices: np.ndarray
    delta: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size < 2 or np.any(np.diff(pts) <= 0):
            raise InvalidArgumentError("partition points must be strictly increasing with >= 2 points")

    def to_list(self) -> list[float]:
        return self.points.tolist()


def delta_partition_mask(values, delta: float) -> np.ndarray:
    """Boolean partition-point masks for a batch of samples.

    ``values`` has shape ``(n_samples, n_coords, n_grid)``; every coordinate of
    a sample is monitored jointly.  The first and last grid points are always
    partition points.
    """
    if not delta > 0:
        raise InvalidArgumentError("delta must be > 0")
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise InvalidArgumentError("values must be (n_samples, n_coords, n_grid)")
    n, _, m = values.shape
    mask = np.zeros((n, m), dtype=bool)
    mask[:, 0] = True
    mask[:, -1] = True
    anchor = values[:, :, 0].copy()
    for j in range(1, m):
        col = values[:, :, j]
        jumped = np.abs(col - anchor).max(axis=1) >= delta
        mask[jumped, j] = True
        anchor[jumped] = col[jumped]
    return mask


def delta_partition(panel, grid, delta: float) -> Partition:
    """Partition of ``grid`` driven by one multi-curve sample.

    ``panel`` holds the sample's curves as ``(n_coords, n_grid)`` (or a single
    curve as ``(n_grid,)``).  Crossing times are resolved at grid resolution.
    """
    grid = check_grid(grid)
    values = as_float_array(panel, "panel")
    if values.ndim == 1:
        values = values[None, :]
    if values.shape[-1] != grid.size:
        raise InvalidArgumentError("curves and grid differ in length")
    mask = delta_partition_mask(values[None], delta)[0]
    idx = np.flatnonzero(mask)
    return Partition(grid[idx], idx, float(delta))


def step_index(mask: np.ndarray) -> np.ndarray:
    """For each grid position, the index of the latest partition point at or before it."""
    m = mask.shape[-1]
    marks = np.where(mask, np.arange(m), 0)
    return np.maximum.accumulate(marks, axis=-1)


def project_masked(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Batch left-value step projection; ``values`` is ``(n, c, m)``, ``mask`` is ``(n, m)``."""
    idx = step_index(mask)
    return np.take_along_axis(values, np.broadcast_to(idx[:, None, :], values.shape), axis=2)


def project_piecewise(curve, grid, partition: Partition, check: bool = True) -> np.ndarray:
    """Step function ``sum_i X(t_i) 1[t_i, t_{i+1})`` evaluated back on ``grid``.

    The last grid point keeps its own value (a null set for every integral).
    With ``check`` and a partition built from this curve, the sup distance to
    the original is verified to stay below ``partition.delta``.
    """
    grid = check_grid(grid)
    values = as_float_array(curve, "curve")
    if values.shape[-1] != grid.size:
        raise InvalidArgumentError("curve and grid differ in length")
    pos = np.searchsorted(grid, partition.points)
    if np.any(pos >= grid.size) or not np.allclose(grid[np.minimum(pos, grid.size - 1)], partition.points, rtol=0, atol=1e-12):
        raise InvalidArgumentError("partition points must lie on the curve's grid")
    mask = np.zeros(grid.size, dtype=bool)
    mask[pos] = True
    mask[0] = True
    idx = step_index(mask)
    projected = values[..., idx]
    if check and partition.delta is not None:
        dev = np.abs(projected - values).max(initial=0.0)
        if dev > partition.delta:
            raise InvalidArgumentError(
                f"projection error {dev:.3g} exceeds delta={partition.delta:.3g}; partition was not built from this curve"
            )
    return projected


def truncate(functions, M: float, grid=None, basis: BasisSpec | None = None) -> np.ndarray:
    """Truncation operator on vectors of functions.

    ``functions`` has the component axis second to last: ``(..., p, n_grid)``
    for grid functions (pass ``grid``) or ``(..., p, n_basis)`` for
    coefficient vectors (pass ``basis``).  Components whose L2 norm exceeds
    ``M`` become the constant function ``M``; for coefficient input that
    constant is projected onto the basis.
    """
    if not M > 1:
        raise InvalidArgumentError("truncation level M must be > 1")
    f = np.array(functions, dtype=float)
    if (grid is None) == (basis is None):
        raise InvalidArgumentError("pass exactly one of grid (grid functions) or basis (coefficients)")
    if grid is not None:
        grid = check_grid(grid)
        if f.shape[-1] != grid.size:
            raise InvalidArgumentError("functions and grid differ in length")
        norms = np.sqrt(np.clip((f**2) @ trapezoid_weights(grid), 0.0, None))
        replacement = np.full(grid.size, float(M))
    else:
        if f.shape[-1] != basis.n_basis:
            raise InvalidArgumentError("coefficient vectors and basis differ in length")
        norms = np.linalg.norm(f, axis=-1)
        fine = np.linspace(*basis.interval, 1000)
        replacement = float(M) * (basis.values(fine) @ trapezoid_weights(fine))
    over = norms > M
    f[over] = replacement
    return f


@dataclass(frozen=True)
class SplitPlan:
    main_indices: np.ndarray
    denom_indices: np.ndarray
    eigen_indices: np.ndarray

    def __post_init__(self):
        sets = [set(map(int, a)) for a in (self.main_indices, self.denom_indices, self.eigen_indices)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise InvalidArgumentError("split index sets must be disjoint")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.main_indices.size, self.denom_indices.size, self.eigen_indices.size)


def make_split(n: int, fractions=(0.5, 0.25, 0.25), rng_seed=None) -> SplitPlan:
    """Random disjoint (main, denominator, eigen) index sets of sizes ``floor(n * f)``."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise InvalidArgumentError("fractions must be three positive numbers summing to at most 1")
    sizes = [int(math.floor(n * f + 1e-9)) for f in fractions]
    if min(sizes) < 1:
        raise InvalidArgumentError(f"split of n={n} with fractions {fractions} leaves an empty set")
    perm = make_rng(rng_seed).permutation(n)
    cuts = np.cumsum(sizes)
    return SplitPlan(
        np.sort(perm[: cuts[0]]),
        np.sort(perm[cuts[0] : cuts[1]]),
        np.sort(perm[cuts[1] : cuts[2]]),
    )


def default_delta(n: int) -> float:
    """``d_n = n^{-1/4}``."""
    return float(n) ** -0.25


def default_truncation_index(n: int, n_basis: int, delta: float | None = None, eta: float = -0.5) -> int:
    """``min(n_basis, ceil(n^{1/4}))`` further capped by ``floor(d_n^eta)`` (at least 1)."""
    delta = default_delta(n) if delta is None else delta
    cap = max(1, int(math.floor(delta**eta + 1e-9)))
    return max(1, min(n_basis, math.ceil(float(n) ** 0.25 - 1e-12), cap))
