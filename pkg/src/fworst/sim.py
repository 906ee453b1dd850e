"""Linear Gaussian structural equation models in score space.

Scores ``s = (zeta, xi_1, ..., xi_p)`` of the target and the covariates
solve ``s = B s + shift + eps``.  The observational environment has no shift;
the shifted environment adds ``scale * alpha`` with ``alpha ~ N(mu, Sigma_A)``
drawn independently of ``eps ~ N(0, Sigma)``.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg

from ._validation import (
    InvalidArgumentError,
    NumericFailureError,
    as_float_array,
    check_psd,
    make_rng,
)
from .basis import BasisSpec, CurvePanel, EnvLabel, ScoreTable, check_grid


@dataclass(frozen=True, eq=False)
class SemSpec:
    """Structural matrix, noise law and shift law over ``(p + 1) * n_basis`` scores.

    Variable order is the target block first, then ``X1 .. Xp``.
    """

    p: int
    n_basis: int
    B: np.ndarray
    sigma: np.ndarray
    shift_mean: np.ndarray
    shift_cov: np.ndarray
    _lu: tuple = field(init=False, repr=False)

    def __post_init__(self):
        d = (self.p + 1) * self.n_basis
        if self.p < 1 or self.n_basis < 1:
            raise InvalidArgumentError("p and n_basis must be >= 1")
        B = as_float_array(self.B, "B", ndim=2)
        mean = as_float_array(self.shift_mean, "shift_mean", ndim=1)
        sigma = check_psd(self.sigma, "sigma")
        shift_cov = check_psd(self.shift_cov, "shift_cov")
        for name, arr, shape in (
            ("B", B, (d, d)),
            ("sigma", sigma, (d, d)),
            ("shift_cov", shift_cov, (d, d)),
            ("shift_mean", mean, (d,)),
        ):
            if arr.shape != shape:
                raise InvalidArgumentError(f"{name} must have shape {shape}, got {arr.shape}")
        for name, arr in (("B", B), ("sigma", sigma), ("shift_mean", mean), ("shift_cov", shift_cov)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(np.eye(d) - B, check_finite=False)
            probe = scipy.linalg.lu_solve(lu, np.eye(d))
            resid = np.abs((np.eye(d) - B) @ probe - np.eye(d)).max()
        object.__setattr__(self, "_lu", lu)
        cond = self.condition
        if not (np.isfinite(cond) and resid <= 1e-8):
            raise NumericFailureError(f"I - B is singular (condition estimate {cond:.3g})", condition=cond)

    @property
    def dim(self) -> int:
        return (self.p + 1) * self.n_basis

    @cached_property
    def condition(self) -> float:
        with np.errstate(all="ignore"):
            return float(np.linalg.cond(np.eye(self.dim) - self.B))

    @cached_property
    def solution_operator(self) -> np.ndarray:
        """``(I - B)^{-1}`` as a dense matrix."""
        return scipy.linalg.lu_solve(self._lu, np.eye(self.dim))

    def block(self, var: int) -> slice:
        """Score columns of variable ``var`` (0 = target, j = X_j)."""
        return slice(var * self.n_basis, (var + 1) * self.n_basis)

    def shift_second_moment(self) -> np.ndarray:
        return self.shift_cov + np.outer(self.shift_mean, self.shift_mean)

    def with_shift(self, shift_mean=None, shift_cov=None) -> "SemSpec":
        return SemSpec(
            self.p,
            self.n_basis,
            self.B,
            self.sigma,
            self.shift_mean if shift_mean is None else shift_mean,
            self.shift_cov if shift_cov is None else shift_cov,
        )

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "n_basis": self.n_basis,
            "B": self.B.reshape(-1).tolist(),
            "sigma": self.sigma.reshape(-1).tolist(),
            "shift_mean": self.shift_mean.tolist(),
            "shift_cov": self.shift_cov.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SemSpec":
        try:
            p, nb = int(data["p"]), int(data["n_basis"])
            d = (p + 1) * nb
            return cls(
                p,
                nb,
                np.asarray(data["B"], dtype=float).reshape(d, d),
                np.asarray(data["sigma"], dtype=float).reshape(d, d),
                np.asarray(data["shift_mean"], dtype=float).reshape(d),
                np.asarray(data["shift_cov"], dtype=float).reshape(d, d),
            )
        except KeyError as exc:
            raise InvalidArgumentError(f"SemSpec JSON is missing field {exc}") from exc
        except ValueError as exc:
            if isinstance(exc, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"SemSpec JSON has wrongly sized arrays: {exc}") from exc

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def load_sem_spec(path) -> SemSpec:
    return SemSpec.from_dict(json.loads(Path(path).read_text()))


def save_sem_spec(spec: SemSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1))


def paper_example_spec(b_x1y: float = 1.0, b_yx2: float = 1.0, n_basis: int = 10) -> SemSpec:
    """Three-variable system X1 -> Y -> X2 with homogeneous effects per basis index.

    Noise is standard normal on all 30 scores; the shift acts on the two
    covariates only, with mean 0.1 and standard deviation 0.1 per score.
    """
    pattern = np.array([[0.0, b_x1y, 0.0], [0.0, 0.0, 0.0], [b_yx2, 0.0, 0.0]])
    d = 3 * n_basis
    on_x = np.r_[np.zeros(n_basis), np.ones(2 * n_basis)]
    return SemSpec(
        p=2,
        n_basis=n_basis,
        B=np.kron(pattern, np.eye(n_basis)),
        sigma=np.eye(d),
        shift_mean=0.1 * on_x,
        shift_cov=np.diag(0.01 * on_x),
    )


def solve_scores(spec: SemSpec, noise, shift) -> np.ndarray:
    """Solve ``(I - B) s = shift + noise``; also accepts row-stacked batches."""
    noise = np.asarray(noise, dtype=float)
    shift = np.asarray(shift, dtype=float)
    if noise.shape[-1] != spec.dim or shift.shape[-1] != spec.dim:
        raise InvalidArgumentError(f"noise and shift must have {spec.dim} coordinates")
    rhs = np.broadcast_to(shift + noise, np.broadcast_shapes(noise.shape, shift.shape))
    return scipy.linalg.lu_solve(spec._lu, rhs.T).T


def second_moment(spec: SemSpec, env: EnvLabel | str = "O", scale: float = 1.0, shift_moment=None) -> np.ndarray:
    """Population ``E[s s^T] = S (Sigma + scale^2 E[alpha alpha^T]) S^T`` with ``S = (I - B)^{-1}``.

    ``shift_moment`` overrides ``E[alpha alpha^T]`` (already including any scale).
    """
    S = spec.solution_operator
    inner = spec.sigma.copy()
    if shift_moment is not None:
        inner = inner + np.asarray(shift_moment, dtype=float)
    elif EnvLabel(env) is EnvLabel.A:
        inner = inner + scale**2 * spec.shift_second_moment()
    M = S @ inner @ S.T
    return (M + M.T) / 2


def _sqrt_cov(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class EnvSample:
    """Simulated scores of one environment, with the draws that produced them."""

    env: EnvLabel
    scale: float
    scores: ScoreTable
    noise: np.ndarray = field(repr=False)
    shift: np.ndarray | None = field(repr=False)

    @property
    def p(self) -> int:
        return self.scores.p


def simulate_env(spec: SemSpec, env, n: int, scale: float = 1.0, rng_seed=None) -> EnvSample:
    """Draw ``n`` i.i.d. score vectors from one environment.

    The noise block is drawn before the shift block, so at ``scale = 0`` the
    shifted environment reproduces the observational one for the same seed.
    """
    env = EnvLabel(env)
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if scale < 0:
        raise InvalidArgumentError("scale must be >= 0")
    rng = make_rng(rng_seed)
    noise = rng.standard_normal((n, spec.dim)) @ _sqrt_cov(spec.sigma).T
    shift = None
    rhs = noise
    if env is EnvLabel.A:
        shift = spec.shift_mean + rng.standard_normal((n, spec.dim)) @ _sqrt_cov(spec.shift_cov).T
        rhs = scale * shift + noise
    s = scipy.linalg.lu_solve(spec._lu, rhs.T).T
    return EnvSample(env, float(scale), ScoreTable(env, spec.n_basis, s), noise, shift)


def synthesize_curves(sample: EnvSample | ScoreTable, basis: BasisSpec, grid) -> CurvePanel:
    """Evaluate the finite basis expansion of every variable on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgumentError("grid is empty")
    grid = check_grid(grid, basis.interval, min_points=2)
    table = sample.scores if isinstance(sample, EnvSample) else sample
    if table.n_basis != basis.n_basis:
        raise InvalidArgumentError("score table and basis disagree on n_basis")
    coef = table.scores.reshape(table.n_samples, table.n_vars, table.n_basis)
    curves = coef @ basis.values(grid)
    return CurvePanel(table.env, grid, curves[:, 0], curves[:, 1:])
