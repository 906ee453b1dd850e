"""Exceptions and small input checks shared across the package."""

from __future__ import annotations

import numpy as np


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericFailureError(ArithmeticError):
    """A linear-algebra step failed (singular system, eigensolver error)."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class RankDeficientError(NumericFailureError):
    """The combined Grammian is singular to working precision.

    ``det_zero`` mirrors the indicator used by the ON-basis minimizer: the
    solve is undefined and the caller has to change basis size or data.
    """

    det_zero = True


class DegenerateOperatorError(NumericFailureError):
    """Every eigenvalue of the pooled operator is below the kernel tolerance."""


class DegenerateDenominatorError(NumericFailureError):
    """An eigen-path denominator average vanished."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return arr


def check_grid(grid, interval=None, min_points: int = 2) -> np.ndarray:
    grid = as_float_array(grid, "grid", ndim=1)
    if grid.size < min_points:
        raise InvalidArgumentError(f"grid needs at least {min_points} points, got {grid.size}")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("grid must be strictly increasing")
    if interval is not None:
        lo, hi = interval
        span = hi - lo
        if grid[0] < lo - 1e-12 * span or grid[-1] > hi + 1e-12 * span:
            raise InvalidArgumentError(f"grid leaves the interval [{lo}, {hi}]")
    return grid


def check_symmetric(a: np.ndarray, name: str, atol: float = 1e-12) -> np.ndarray:
    a = as_float_array(a, name, ndim=2)
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > atol * scale:
        raise InvalidArgumentError(f"{name} is not symmetric")
    return a


def check_psd(a: np.ndarray, name: str, atol: float = 1e-10) -> np.ndarray:
    a = check_symmetric(a, name)
    if a.size and np.linalg.eigvalsh((a + a.T) / 2).min() < -atol:
        raise InvalidArgumentError(f"{name} is not positive semidefinite")
    return a


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox stream; normals come from numpy's ziggurat."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


RNG_DESCRIPTION = "numpy Philox4x64 (counter-based), ziggurat normals"
