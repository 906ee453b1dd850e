"""Worst-risk minimizing regression kernels.

A kernel is stored as coefficient matrices ``C_j`` with
``beta_j(t, tau) = sum_{k,l} C_j[k, l] phi_k(t) col_l^{(j)}(tau)``: rows run
over the target basis, columns over a column system which is either the
basis itself, a rotation of it (population eigenbasis), or tabulated
estimated eigenfunctions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import scipy.linalg

from ._validation import (
    DegenerateDenominatorError,
    DegenerateOperatorError,
    InvalidArgumentError,
    RankDeficientError,
    check_grid,
)
from .basis import BasisSpec, CurvePanel, EnvLabel, ScoreTable, make_fourier_sine_basis, quadrature_weights, trapezoid_weights
from .discretize import (
    default_delta,
    default_truncation_index,
    delta_partition_mask,
    make_split,
    project_masked,
    truncate,
)
from .moments import EigenFunctions, Grammians, PooledOperator, empirical_grammians, estimate_eigenfunctions

COND_MAX = 1e12
DENOM_MIN = 1e-12


class PhiColumns:
    """The target basis reused on the covariate side."""

    kind = "basis"

    def __init__(self, basis: BasisSpec):
        self.basis = basis
        self.n_col = basis.n_basis

    def evaluate(self, j: int, tau) -> np.ndarray:
        return self.basis.values(tau)

    def phi_coefficients(self, j: int) -> np.ndarray:
        return np.eye(self.n_col)

    def describe(self) -> dict:
        return {"kind": self.kind}


class RotatedColumns:
    """Columns ``psi_l = sum_m V[j * n + m, l] phi_m`` per covariate ``j``."""

    kind = "rotated"

    def __init__(self, basis: BasisSpec, V: np.ndarray):
        self.basis = basis
        self.V = np.asarray(V, dtype=float)
        self.n_col = self.V.shape[1]

    def phi_coefficients(self, j: int) -> np.ndarray:
        nb = self.basis.n_basis
        return self.V[j * nb : (j + 1) * nb].T

    def evaluate(self, j: int, tau) -> np.ndarray:
        return self.phi_coefficients(j) @ self.basis.values(tau)

    def describe(self) -> dict:
        return {"kind": self.kind, "V": self.V.tolist()}


class TabulatedColumns:
    """Grid functions, linearly interpolated; ``coef`` is kept when they lie in the basis span."""

    kind = "tabulated"

    def __init__(self, basis: BasisSpec, grid, values, coef=None):
        self.basis = basis
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.coef = None if coef is None else np.asarray(coef, dtype=float)
        self.n_col = self.values.shape[0]

    def evaluate(self, j: int, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return np.vstack([np.interp(tau, self.grid, row) for row in self.values[:, j]])

    def phi_coefficients(self, j: int) -> np.ndarray:
        nb = self.basis.n_basis
        if self.coef is not None:
            return self.coef[:, j * nb : (j + 1) * nb]
        fine = np.linspace(*self.basis.interval, 1000)
        return (self.evaluate(j, fine) * trapezoid_weights(fine)) @ self.basis.values(fine).T

    def describe(self) -> dict:
        return {"kind": self.kind, "grid": self.grid.tolist(), "values": self.values.tolist()}


@dataclass
class SolveReport:
    condition_estimate: float
    kernel_dim_excluded: int
    normal_eq_residual: float
    truncation_index: int
    summability_partial_sum: float | None = None
    summability_flag: bool = False
    delta: float | None = None
    n_samples: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class KernelCoeffs:
    basis: BasisSpec
    columns: object
    C: np.ndarray
    gamma: float
    provenance: str = "population"
    report: SolveReport | None = field(default=None, repr=False)

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim != 3 or self.C.shape[1] != self.basis.n_basis or self.C.shape[2] != self.columns.n_col:
            raise InvalidArgumentError(
                f"C must be (p, {self.basis.n_basis}, {self.columns.n_col}), got {self.C.shape}"
            )
        if not np.all(np.isfinite(self.C)):
            raise InvalidArgumentError("kernel coefficients must be finite")

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def phi_coefficients(self) -> np.ndarray:
        """Coefficients against ``phi_k (x) phi_m`` as ``(p, n_basis, n_basis)``."""
        return np.stack([self.C[j] @ self.columns.phi_coefficients(j) for j in range(self.p)])

    def stacked(self) -> np.ndarray:
        """The ``(p * n_basis, n_basis)`` layout of the Grammian normal equations."""
        return np.concatenate([Cj.T for Cj in self.phi_coefficients()], axis=0)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "basis": self.basis.describe(),
            "columns": self.columns.describe(),
            "provenance": self.provenance,
            "C": [Cj.reshape(-1).tolist() for Cj in self.C],
            "C_shape": list(self.C.shape),
            "C_phi": [Cj.reshape(-1).tolist() for Cj in self.phi_coefficients()],
            "report": None if self.report is None else self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelCoeffs":
        """Rebuild a kernel in basis coordinates (column systems collapse onto ``phi``)."""
        basis = BasisSpec.from_description(data["basis"])
        nb = basis.n_basis
        C = np.asarray(data["C_phi"], dtype=float).reshape(-1, nb, nb)
        return cls(basis, PhiColumns(basis), C, float(data["gamma"]), data.get("provenance", "population"))


def kernel_from_stacked(basis: BasisSpec, lam: np.ndarray, gamma: float, **kw) -> KernelCoeffs:
    """Wrap a ``(p * n, n)`` normal-equation solution (rows covariate, columns target)."""
    nb = basis.n_basis
    p = lam.shape[0] // nb
    C = np.stack([lam[j * nb : (j + 1) * nb].T for j in range(p)])
    return KernelCoeffs(basis, PhiColumns(basis), C, gamma, **kw)


def _symmetric_solve(G: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, float]:
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise RankDeficientError(
            f"combined Grammian is singular (condition estimate {cond:.3g} > {COND_MAX:.0e})", condition=cond
        )
    try:
        lam = scipy.linalg.solve(G, Z, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        lam = np.linalg.lstsq(G, Z, rcond=None)[0]
    return lam, cond


def _padded(gram: Grammians, lam_small: np.ndarray, n_terms: int) -> np.ndarray:
    nb = gram.n_basis
    lam = np.zeros((gram.p * nb, nb))
    for j in range(gram.p):
        lam[j * nb : j * nb + n_terms, :n_terms] = lam_small[j * n_terms : (j + 1) * n_terms]
    return lam


def _default_basis(gram: Grammians, basis: BasisSpec | None) -> BasisSpec:
    if basis is None:
        return make_fourier_sine_basis(gram.n_basis)
    if basis.n_basis != gram.n_basis:
        raise InvalidArgumentError("basis and Grammians disagree on n_basis")
    return basis


def solve_grammian(gram: Grammians, gamma: float, n_terms: int | None = None, basis: BasisSpec | None = None):
    """Solve ``[gamma G_A + (1 - gamma) G_O] lam = gamma Z_A + (1 - gamma) Z_O``.

    With ``n_terms`` only the first ``n_terms`` scores of every variable enter
    and the remaining coefficients are zero.  Returns ``(KernelCoeffs, SolveReport)``.
    """
    if gamma < 0:
        raise InvalidArgumentError("gamma must be >= 0")
    basis = _default_basis(gram, basis)
    n_terms = gram.n_basis if n_terms is None else int(n_terms)
    small = gram.truncated(n_terms) if n_terms < gram.n_basis else gram
    G, Z = small.combined(gamma)
    lam_small, cond = _symmetric_solve(G, Z)
    resid = float(np.linalg.norm(G @ lam_small - Z))
    lam = _padded(gram, lam_small, n_terms)
    report = SolveReport(cond, 0, resid, n_terms)
    return kernel_from_stacked(basis, lam, float(gamma), report=report), report


def solve_causal_limit(gram: Grammians, basis: BasisSpec | None = None):
    """The ``gamma -> infinity`` system ``(G_A - G_O)^{-1} (Z_A - Z_O)``."""
    basis = _default_basis(gram, basis)
    G = gram.G_A - gram.G_O
    Z = gram.Z_A - gram.Z_O
    lam, cond = _symmetric_solve((G + G.T) / 2, Z)
    report = SolveReport(cond, 0, float(np.linalg.norm(G @ lam - Z)), gram.n_basis)
    return kernel_from_stacked(basis, lam, math.inf, report=report), report


def solve_eigenbasis(gram: Grammians, pooled: PooledOperator, gamma: float | None = None, basis: BasisSpec | None = None):
    """Coordinatewise solve in the eigenbasis of the pooled operator.

    Response moments are rotated onto the eigenvectors and divided by the
    eigenvalues.  Kernel directions get coefficient zero, which picks the
    minimum-norm minimizer; their number is reported.
    """
    basis = _default_basis(gram, basis)
    gamma = pooled.gamma if gamma is None else float(gamma)
    if not np.isclose(gamma, pooled.gamma):
        raise InvalidArgumentError("gamma differs from the pooled operator's gamma")
    keep = ~pooled.kernel_mask
    if not keep.any():
        raise DegenerateOperatorError("every eigenvalue of the pooled operator is below the kernel tolerance")
    _, Z = gram.combined(gamma)
    V = pooled.eigenvectors[:, keep]
    lam_vals = pooled.eigenvalues[keep]
    coef = (V.T @ Z) / lam_vals[:, None]
    # same coefficient matrix for every covariate; the columns carry the covariate components
    C = np.repeat(coef.T[None], gram.p, axis=0)
    beta = KernelCoeffs(basis, RotatedColumns(basis, V), C, gamma)
    stacked = V @ coef
    resid = float(np.linalg.norm(pooled.K @ stacked - Z))
    contrib = (coef**2).sum(axis=1)
    total = float(contrib.sum())
    tail = contrib[-max(1, len(contrib) // 4) :].sum()
    report = SolveReport(
        condition_estimate=float(lam_vals.max() / lam_vals.min()),
        kernel_dim_excluded=int((~keep).sum()),
        normal_eq_residual=resid,
        truncation_index=int(keep.sum()),
        summability_partial_sum=total,
        summability_flag=bool(total > 0 and tail > 0.5 * total),
    )
    beta.report = report
    return beta, report


@dataclass
class FitConfig:
    """Settings of the empirical estimator.

    ``e_of_n`` and ``d_n`` accept a number, a callable of the sample size, or
    ``None`` for the defaults ``d_n = n^{-1/4}`` and
    ``e(n) = min(n_basis, ceil(n^{1/4}), floor(d_n^{-1/2}))``.
    """

    gamma: float
    basis: BasisSpec = field(default_factory=lambda: make_fourier_sine_basis(10))
    path: str = "grammian"
    e_of_n: int | Callable[[int], int] | None = None
    d_n: float | Callable[[int], float] | None = None
    M: float = 5.0
    split_fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)
    center_observational: bool = False
    quadrature: str = "left"

    def resolve(self, n: int) -> tuple[float, int]:
        d = self.d_n(n) if callable(self.d_n) else (default_delta(n) if self.d_n is None else float(self.d_n))
        if self.e_of_n is None:
            e = default_truncation_index(n, self.basis.n_basis, d)
        else:
            e = int(self.e_of_n(n) if callable(self.e_of_n) else self.e_of_n)
        if not 1 <= e <= self.basis.n_basis:
            raise InvalidArgumentError(f"e(n)={e} must lie in 1..{self.basis.n_basis}")
        if not d > 0:
            raise InvalidArgumentError("d_n must be > 0")
        return d, e

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "basis": self.basis.describe(),
            "path": self.path,
            "e_of_n": self.e_of_n if not callable(self.e_of_n) else "callable",
            "d_n": self.d_n if not callable(self.d_n) else "callable",
            "M": self.M,
            "split_fractions": list(self.split_fractions),
            "center_observational": self.center_observational,
            "quadrature": self.quadrature,
        }


def _check_panels(panel_O: CurvePanel, panel_A: CurvePanel, basis: BasisSpec) -> None:
    if panel_O.n_samples == 0 or panel_A.n_samples == 0:
        raise InvalidArgumentError("both panels must be nonempty")
    if panel_O.p != panel_A.p:
        raise InvalidArgumentError("panels disagree on the number of covariates")
    if panel_O.grid.shape != panel_A.grid.shape or not np.allclose(panel_O.grid, panel_A.grid, rtol=0, atol=1e-12):
        raise InvalidArgumentError("panels must share one grid")
    check_grid(panel_O.grid, basis.interval)


def _centered(panel_O: CurvePanel, panel_A: CurvePanel) -> tuple[CurvePanel, CurvePanel]:
    mY, mX = panel_O.Y.mean(axis=0), panel_O.X.mean(axis=0)
    return (
        CurvePanel(panel_O.env, panel_O.grid, panel_O.Y - mY, panel_O.X - mX),
        CurvePanel(panel_A.env, panel_A.grid, panel_A.Y - mY, panel_A.X - mX),
    )


def _paired_projection(stack_O: np.ndarray, stack_A: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Project the first ``min(n_O, n_A)`` samples on partitions monitoring both members of each pair.

    Unpaired trailing samples are partitioned on their own curves.
    """
    n = min(len(stack_O), len(stack_A))
    mask = delta_partition_mask(np.concatenate([stack_O[:n], stack_A[:n]], axis=1), delta)
    out_O = project_masked(stack_O[:n], mask)
    out_A = project_masked(stack_A[:n], mask)
    if len(stack_O) > n:
        rest = stack_O[n:]
        out_O = np.concatenate([out_O, project_masked(rest, delta_partition_mask(rest, delta))])
    if len(stack_A) > n:
        rest = stack_A[n:]
        out_A = np.concatenate([out_A, project_masked(rest, delta_partition_mask(rest, delta))])
    return out_O, out_A


def fit_empirical(panel_O: CurvePanel, panel_A: CurvePanel, config: FitConfig, rng_seed=None):
    """Estimate the worst-risk minimizer from sampled curves of both environments.

    ``grammian`` path: step-project every curve on its (paired) partition,
    take left-Riemann scores and solve the truncated plug-in normal
    equations.  ``eigen`` path: split the samples, estimate eigenfunctions on
    one part, numerators on another and denominators on the third, and
    expand the ratio over ``phi_k (x) T_M(psi_l)``.
    """
    basis = config.basis
    _check_panels(panel_O, panel_A, basis)
    if not config.M > 1:
        raise InvalidArgumentError("truncation level M must be > 1")
    if config.center_observational:
        panel_O, panel_A = _centered(panel_O, panel_A)
    n = min(panel_O.n_samples, panel_A.n_samples)
    delta, e = config.resolve(n)
    if config.path == "grammian":
        beta, report = _fit_grammian(panel_O, panel_A, config, delta, e)
    elif config.path == "eigen":
        beta, report = _fit_eigen(panel_O, panel_A, config, delta, e, rng_seed)
    else:
        raise InvalidArgumentError(f"unknown estimator path {config.path!r}")
    report.delta = delta
    report.n_samples = n
    beta.provenance = "empirical"
    beta.report = report
    return beta, report


def _fit_grammian(panel_O, panel_A, config, delta, e):
    basis = config.basis
    proj_O, proj_A = _paired_projection(panel_O.stacked(), panel_A.stacked(), delta)
    weights = basis.values(panel_O.grid) * quadrature_weights(panel_O.grid, config.quadrature)
    tables = [
        ScoreTable(env, basis.n_basis, (proj @ weights.T).reshape(len(proj), -1))
        for env, proj in ((EnvLabel.O, proj_O), (EnvLabel.A, proj_A))
    ]
    gram = empirical_grammians(*tables)
    return solve_grammian(gram, config.gamma, n_terms=e, basis=basis)


def _fit_eigen(panel_O, panel_A, config, delta, e, rng_seed):
    basis, gamma = config.basis, config.gamma
    n = min(panel_O.n_samples, panel_A.n_samples)
    grid = panel_O.grid
    plan = make_split(n, config.split_fractions, rng_seed)
    w = quadrature_weights(grid, config.quadrature)
    phi_w = basis.values(grid) * w

    eig_O = panel_O.subset(plan.eigen_indices).scores(basis, config.quadrature)
    eig_A = panel_A.subset(plan.eigen_indices).scores(basis, config.quadrature)
    psi = estimate_eigenfunctions((eig_O, eig_A), gamma, basis, grid)
    excluded = panel_O.p * basis.n_basis - psi.n_col
    n_col = min(e, psi.n_col)
    psi = psi.head(n_col)

    main_O, main_A = (pan.subset(plan.main_indices).stacked() for pan in (panel_O, panel_A))
    proj_O, proj_A = _paired_projection(main_O, main_A, delta)
    C_O = np.einsum("npm,lpm,m->nl", proj_O[:, 1:], psi.values, w)
    C_A = np.einsum("npm,lpm,m->nl", proj_A[:, 1:], psi.values, w)
    D_O = proj_O[:, 0] @ phi_w[:e].T
    D_A = proj_A[:, 0] @ phi_w[:e].T
    num = (gamma * D_A.T @ C_A + (1 - gamma) * D_O.T @ C_O) / len(plan.main_indices)

    den_O, den_A = (pan.X[plan.denom_indices] for pan in (panel_O, panel_A))
    dproj_O, dproj_A = _paired_projection(den_O, den_A, delta)
    Cp_O = np.einsum("npm,lpm,m->nl", dproj_O, psi.values, w)
    Cp_A = np.einsum("npm,lpm,m->nl", dproj_A, psi.values, w)
    den = (gamma * (Cp_A**2) + (1 - gamma) * (Cp_O**2)).mean(axis=0)
    low = np.flatnonzero(den < DENOM_MIN)
    if low.size:
        l = int(low[0]) + 1
        raise DegenerateDenominatorError(f"denominator average for eigenfunction l={l} is {den[l - 1]:.3g} < {DENOM_MIN}", l)

    coef = np.zeros((basis.n_basis, n_col))
    coef[:e] = num / den[None, :]
    truncated = truncate(psi.values, config.M, grid=grid)
    unchanged = np.array_equal(truncated, psi.values)
    columns = TabulatedColumns(basis, grid, truncated, psi.coef if unchanged else None)
    C = np.repeat(coef[None], panel_O.p, axis=0)
    beta = KernelCoeffs(basis, columns, C, gamma)

    main_tables = [
        ScoreTable(env, basis.n_basis, (proj @ phi_w.T).reshape(len(proj), -1))
        for env, proj in ((EnvLabel.O, proj_O), (EnvLabel.A, proj_A))
    ]
    G, Z = empirical_grammians(*main_tables).combined(gamma)
    resid = float(np.linalg.norm(G @ beta.stacked() - Z))
    contrib = (coef**2).sum(axis=0)
    total = float(contrib.sum())
    report = SolveReport(
        condition_estimate=float(np.abs(den).max() / np.abs(den).min()),
        kernel_dim_excluded=int(excluded),
        normal_eq_residual=resid,
        truncation_index=e,
        summability_partial_sum=total,
        summability_flag=bool(total > 0 and contrib[-max(1, n_col // 4) :].sum() > 0.5 * total),
    )
    return beta, report


def eval_beta_surface(beta: KernelCoeffs, grid_t, grid_tau) -> np.ndarray:
    """Surfaces ``beta_j(t, tau)`` as ``(p, len(grid_t), len(grid_tau))``."""
    grid_t = check_grid(grid_t, beta.basis.interval, min_points=1)
    grid_tau = check_grid(grid_tau, beta.basis.interval, min_points=1)
    phi_t = beta.basis.values(grid_t)
    return np.stack([phi_t.T @ beta.C[j] @ beta.columns.evaluate(j, grid_tau) for j in range(beta.p)])


def beta_l2_norm(beta: KernelCoeffs) -> float:
    """``L2([T1,T2]^2)^p`` norm through the basis coordinates (Parseval)."""
    return float(np.linalg.norm(beta.phi_coefficients()))


def beta_l2_distance(a: KernelCoeffs, b: KernelCoeffs) -> float:
    if a.basis != b.basis or a.p != b.p:
        raise InvalidArgumentError("kernels live on different bases")
    return float(np.linalg.norm(a.phi_coefficients() - b.phi_coefficients()))


def surface_l2_norm(beta: KernelCoeffs, n_grid: int = 1000) -> float:
    """Norm of the evaluated surfaces by tensor trapezoid quadrature."""
    grid = np.linspace(*beta.basis.interval, n_grid)
    w = trapezoid_weights(grid)
    surf = eval_beta_surface(beta, grid, grid)
    return float(np.sqrt(np.einsum("jst,s,t->", surf**2, w, w)))


def write_beta_json(beta: KernelCoeffs, path) -> None:
    Path(path).write_text(json.dumps(beta.to_dict(), indent=1))


def read_beta_json(path) -> KernelCoeffs:
    return KernelCoeffs.from_dict(json.loads(Path(path).read_text()))


def write_surface_csv(beta: KernelCoeffs, path, n_grid: int = 50) -> None:
    """``t,tau,var,value`` rows on an ``n_grid x n_grid`` product grid."""
    grid = np.linspace(*beta.basis.interval, n_grid)
    surf = eval_beta_surface(beta, grid, grid)
    tt, uu = np.meshgrid(grid, grid, indexing="ij")
    frames = [
        pd.DataFrame({"t": tt.ravel(), "tau": uu.ravel(), "var": f"X{j + 1}", "value": surf[j].ravel()})
        for j in range(beta.p)
    ]
    pd.concat(frames).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
