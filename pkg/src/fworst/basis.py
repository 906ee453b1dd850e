"""Orthonormal bases, sampled curves and quadrature scores.

Everything downstream works in score coordinates: a curve ``y`` on a grid is
reduced to its inner products with an orthonormal system ``phi_1..phi_n``.
Scores are left-Riemann sums over the grid increments unless the trapezoid
rule is requested explicitly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import InvalidArgumentError, as_float_array, check_grid


class BasisKind(str, enum.Enum):
    FOURIER_SINE = "fourier_sine"
    CUSTOM = "custom"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BasisSpec:
    """An orthonormal system on ``[T1, T2]``.

    ``FOURIER_SINE`` is the rescaled system ``sqrt(2) sin(2 k pi s)`` with
    ``s = (t - T1) / (T2 - T1)``.  ``CUSTOM`` bases are tabulated on
    ``ref_grid`` (shape ``(n_basis, len(ref_grid))``) and linearly
    interpolated in between.
    """

    kind: BasisKind
    n_basis: int
    interval: tuple[float, float]
    ref_grid: np.ndarray | None = field(default=None, repr=False, compare=False)
    ref_values: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_basis) < 1:
            raise InvalidArgumentError("n_basis must be >= 1")
        lo, hi = (float(v) for v in self.interval)
        if not lo < hi:
            raise InvalidArgumentError("interval must satisfy T1 < T2")
        object.__setattr__(self, "interval", (lo, hi))
        object.__setattr__(self, "n_basis", int(self.n_basis))
        if self.kind is BasisKind.CUSTOM:
            if self.ref_grid is None or self.ref_values is None:
                raise InvalidArgumentError("custom basis needs ref_grid and ref_values")
            grid = check_grid(self.ref_grid, (lo, hi))
            vals = as_float_array(self.ref_values, "ref_values", ndim=2)
            if vals.shape != (self.n_basis, grid.size):
                raise InvalidArgumentError(
                    f"ref_values must have shape {(self.n_basis, grid.size)}, got {vals.shape}"
                )
            object.__setattr__(self, "ref_grid", _frozen(grid))
            object.__setattr__(self, "ref_values", _frozen(vals))

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def values(self, t) -> np.ndarray:
        """Evaluate all basis functions at ``t``; returns ``(n_basis, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.interval
        tol = 1e-12 * (hi - lo)
        if t.size and (t.min() < lo - tol or t.max() > hi + tol):
            raise InvalidArgumentError(f"evaluation points outside [{lo}, {hi}]")
        if self.kind is BasisKind.FOURIER_SINE:
            s = (t - lo) / (hi - lo)
            k = np.arange(1, self.n_basis + 1)[:, None]
            return np.sqrt(2.0 / (hi - lo)) * np.sin(2.0 * np.pi * k * s[None, :])
        return np.vstack([np.interp(t, self.ref_grid, row) for row in self.ref_values])

    def gram(self, n_points: int | None = None) -> np.ndarray:
        """Discrete Gram matrix on a uniform grid (trapezoid weights)."""
        n_points = n_points or 10 * self.n_basis + 1
        grid = np.linspace(*self.interval, n_points)
        phi = self.values(grid)
        return phi @ (phi * trapezoid_weights(grid)).T

    def sup_norms(self, n_points: int = 2001) -> np.ndarray:
        if self.kind is BasisKind.FOURIER_SINE:
            return np.full(self.n_basis, np.sqrt(2.0 / self.length))
        return np.abs(self.ref_values).max(axis=1)

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "n_basis": self.n_basis, "interval": list(self.interval)}
        if self.kind is BasisKind.CUSTOM:
            out["ref_grid"] = self.ref_grid.tolist()
            out["ref_values"] = self.ref_values.tolist()
        return out

    @classmethod
    def from_description(cls, desc: dict) -> "BasisSpec":
        kind = BasisKind(desc.get("kind", "fourier_sine"))
        interval = tuple(desc.get("interval", (0.0, 1.0)))
        if kind is BasisKind.FOURIER_SINE:
            return make_fourier_sine_basis(int(desc["n_basis"]), interval)
        return make_custom_basis(desc["ref_grid"], desc["ref_values"], interval)


def make_fourier_sine_basis(n_basis: int, interval=(0.0, 1.0)) -> BasisSpec:
    """Sine system ``sqrt(2/T) sin(2 k pi (t - T1) / T)``, ``k = 1..n_basis``."""
    if n_basis < 1:
        raise InvalidArgumentError("n_basis must be >= 1")
    return BasisSpec(BasisKind.FOURIER_SINE, n_basis, tuple(interval))


def make_custom_basis(ref_grid, ref_values, interval=None, check_orthonormal: bool = True) -> BasisSpec:
    """Tabulated basis; rejected unless its Gram matrix is within 1e-2 of identity."""
    ref_grid = np.asarray(ref_grid, dtype=float)
    ref_values = np.atleast_2d(np.asarray(ref_values, dtype=float))
    if interval is None:
        interval = (float(ref_grid[0]), float(ref_grid[-1]))
    basis = BasisSpec(BasisKind.CUSTOM, ref_values.shape[0], tuple(interval), ref_grid, ref_values)
    if check_orthonormal:
        n_points = max(10 * basis.n_basis, ref_grid.size)
        err = np.abs(basis.gram(n_points) - np.eye(basis.n_basis)).max()
        if err > 1e-2:
            raise InvalidArgumentError(f"custom basis is not orthonormal (Gram error {err:.3g})")
    return basis


def eval_basis(basis: BasisSpec, k: int, t: float) -> float:
    """Value of the ``k``-th basis function (1-based) at ``t``."""
    if not 1 <= k <= basis.n_basis:
        raise InvalidArgumentError(f"basis index {k} outside 1..{basis.n_basis}")
    lo, hi = basis.interval
    if not lo <= t <= hi:
        raise InvalidArgumentError(f"t={t} outside [{lo}, {hi}]")
    return float(basis.values([t])[k - 1, 0])


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    dt = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def left_riemann_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    w[:-1] = np.diff(grid)
    return w


def quadrature_weights(grid: np.ndarray, rule: str = "left") -> np.ndarray:
    if rule == "left":
        return left_riemann_weights(grid)
    if rule == "trapezoid":
        return trapezoid_weights(grid)
    raise InvalidArgumentError(f"unknown quadrature rule {rule!r}")


@dataclass(frozen=True)
class SampledCurve:
    """One coordinate process observed on a strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = as_float_array(self.grid, "grid", ndim=1)
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise InvalidArgumentError("grid must be strictly increasing")
        values = as_float_array(self.values, "values", ndim=1)
        if values.shape != grid.shape:
            raise InvalidArgumentError("values and grid differ in length")
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "values", _frozen(values))


def scores_on_grid(values, grid, basis: BasisSpec, rule: str = "left") -> np.ndarray:
    """Vectorised scores: ``values`` has the grid on its last axis.

    Returns an array shaped ``values.shape[:-1] + (n_basis,)``.
    """
    grid = check_grid(grid, basis.interval)
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.size:
        raise InvalidArgumentError("last axis of values must match the grid")
    weighted = basis.values(grid) * quadrature_weights(grid, rule)
    return values @ weighted.T


def riemann_scores(curve: SampledCurve, basis: BasisSpec, rule: str = "left") -> np.ndarray:
    """Scores ``sum_l (t_{l+1} - t_l) y(t_l) phi_k(t_l)`` for ``k = 1..n_basis``."""
    if curve.grid.size < 2:
        raise InvalidArgumentError("a curve needs at least 2 grid points for scores")
    return scores_on_grid(curve.values, curve.grid, basis, rule)


class EnvLabel(str, enum.Enum):
    O = "O"
    A = "A"


@dataclass(frozen=True)
class ScoreTable:
    """Per-sample scores, columns ordered variable-major (Y, X1, ..., Xp)."""

    env: EnvLabel
    n_basis: int
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "env", EnvLabel(self.env))
        scores = as_float_array(self.scores, "scores", ndim=2)
        if scores.shape[1] % self.n_basis or scores.shape[1] < self.n_basis:
            raise InvalidArgumentError(
                f"score table has {scores.shape[1]} columns, not a multiple n_vars * {self.n_basis}"
            )
        object.__setattr__(self, "scores", scores)

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_vars(self) -> int:
        return self.scores.shape[1] // self.n_basis

    @property
    def p(self) -> int:
        return self.n_vars - 1

    @property
    def target(self) -> np.ndarray:
        return self.scores[:, : self.n_basis]

    @property
    def covariates(self) -> np.ndarray:
        return self.scores[:, self.n_basis :]

    def subset(self, indices) -> "ScoreTable":
        return ScoreTable(self.env, self.n_basis, self.scores[np.asarray(indices, dtype=int)])


@dataclass
class CurvePanel:
    """All curves of one environment on a shared grid.

    ``Y`` has shape ``(n, m)`` and ``X`` has shape ``(n, p, m)``.
    """

    env: EnvLabel
    grid: np.ndarray
    Y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.env = EnvLabel(self.env)
        self.grid = check_grid(self.grid, min_points=1)
        self.Y = as_float_array(self.Y, "Y", ndim=2)
        self.X = as_float_array(self.X, "X", ndim=3)
        n, m = self.Y.shape
        if m != self.grid.size or self.X.shape[0] != n or self.X.shape[2] != m:
            raise InvalidArgumentError(
                f"panel shapes disagree: Y {self.Y.shape}, X {self.X.shape}, grid {self.grid.size}"
            )

    @property
    def n_samples(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def stacked(self) -> np.ndarray:
        """Curves as ``(n, p + 1, m)`` with the target first."""
        return np.concatenate([self.Y[:, None, :], self.X], axis=1)

    def subset(self, indices) -> "CurvePanel":
        idx = np.asarray(indices, dtype=int)
        return CurvePanel(self.env, self.grid, self.Y[idx], self.X[idx])

    def scores(self, basis: BasisSpec, rule: str = "left") -> ScoreTable:
        s = scores_on_grid(self.stacked(), self.grid, basis, rule)
        return ScoreTable(self.env, basis.n_basis, s.reshape(self.n_samples, -1))


CURVE_COLUMNS = ["env", "sample_id", "var", "t", "value"]


def _var_names(p: int) -> list[str]:
    return ["Y"] + [f"X{j}" for j in range(1, p + 1)]


def write_curve_csv(panel: CurvePanel, path) -> None:
    """Write ``env,sample_id,var,t,value`` rows ordered by sample, variable (Y, X1..Xp), t."""
    n, m = panel.Y.shape
    names = _var_names(panel.p)
    stacked = panel.stacked()
    frame = pd.DataFrame(
        {
            "env": panel.env.value,
            "sample_id": np.repeat(np.arange(n), (panel.p + 1) * m),
            "var": np.tile(np.repeat(names, m), n),
            "t": np.tile(panel.grid, n * (panel.p + 1)),
            "value": stacked.reshape(-1),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_curve_csv(path, p: int | None = None) -> dict[EnvLabel, CurvePanel]:
    """Parse a curve CSV into one panel per environment found in it.

    Every (sample, variable) pair must be observed on the same grid; gaps are
    reported with the offending sample and variable.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"env": str, "var": str}, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InvalidArgumentError(f"{path}: cannot parse curve CSV: {exc}") from exc
    if list(frame.columns) != CURVE_COLUMNS:
        raise InvalidArgumentError(f"{path}: header must be {','.join(CURVE_COLUMNS)}, got {','.join(frame.columns)}")
    for col in ("sample_id", "t", "value"):
        numeric = pd.to_numeric(frame[col], errors="coerce")
        bad = np.flatnonzero(numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=float)))
        if bad.size:
            raise InvalidArgumentError(f"{path}: row {bad[0] + 2}: non-numeric or non-finite {col}")
        frame[col] = numeric
    bad_env = np.flatnonzero(~frame["env"].isin(["O", "A"]).to_numpy())
    if bad_env.size:
        raise InvalidArgumentError(f"{path}: row {bad_env[0] + 2}: env must be O or A")

    panels = {}
    for env, part in frame.groupby("env", sort=True):
        xs = sorted(v for v in part["var"].unique() if v != "Y")
        p_env = p if p is not None else len(xs)
        names = _var_names(p_env)
        unknown = set(part["var"].unique()) - set(names)
        if unknown:
            raise InvalidArgumentError(f"{path}: env {env}: unexpected variable(s) {sorted(unknown)}")
        for name in names:
            if name not in set(part["var"]):
                raise InvalidArgumentError(f"{path}: env {env}: variable {name} missing")
        dup = np.flatnonzero(part.duplicated(["sample_id", "var", "t"]).to_numpy())
        if dup.size:
            raise InvalidArgumentError(f"{path}: row {part.index[dup[0]] + 2}: duplicate (sample_id, var, t)")
        grid = np.sort(part["t"].unique())
        sample_ids = np.sort(part["sample_id"].unique())
        n, m = sample_ids.size, grid.size
        counts = part.groupby(["sample_id", "var"]).size()
        short = counts[counts != m]
        if short.size or counts.size != n * len(names):
            if short.size:
                sid, var = short.index[0]
            else:
                full = pd.MultiIndex.from_product([sample_ids, names])
                sid, var = full.difference(counts.index)[0]
            raise InvalidArgumentError(f"{path}: env {env}: sample {sid} variable {var} is missing grid points")
        ordered = part.assign(
            vi=part["var"].map({v: i for i, v in enumerate(names)}),
            si=np.searchsorted(sample_ids, part["sample_id"]),
            ti=np.searchsorted(grid, part["t"]),
        )
        cube = np.empty((n, len(names), m))
        cube[ordered["si"].to_numpy(), ordered["vi"].to_numpy(), ordered["ti"].to_numpy()] = ordered["value"].to_numpy()
        panels[EnvLabel(env)] = CurvePanel(env, grid, cube[:, 0], cube[:, 1:])
    return panels
