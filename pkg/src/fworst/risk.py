"""Prediction risk of a regression kernel under shifted environments.

By Parseval the integrated squared residual equals the sum of squared
residual scores ``r_k = zeta_k - sum_j sum_m C_j[k, m] xi_{j, m}``, so risks
are quadratic forms in the score second moment.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import InvalidArgumentError, make_rng
from .basis import EnvLabel
from .sim import SemSpec, second_moment, simulate_env
from .solver import KernelCoeffs


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    n_mc: int
    method: str

    def __post_init__(self):
        if self.value < 0 and self.value > -1e-12:
            object.__setattr__(self, "value", 0.0)


def residual_map(spec: SemSpec, beta: KernelCoeffs) -> np.ndarray:
    """``(dim, n_basis)`` matrix ``V`` with residual scores ``r = V^T s``."""
    if beta.p != spec.p or beta.basis.n_basis != spec.n_basis:
        raise InvalidArgumentError(
            f"kernel (p={beta.p}, n_basis={beta.basis.n_basis}) does not match SEM (p={spec.p}, n_basis={spec.n_basis})"
        )
    nb = spec.n_basis
    V = np.zeros((spec.dim, nb))
    V[:nb] = np.eye(nb)
    for j, Cj in enumerate(beta.phi_coefficients(), start=1):
        V[j * nb : (j + 1) * nb] = -Cj.T
    return V


def risk_from_moment(spec: SemSpec, beta: KernelCoeffs, M: np.ndarray) -> float:
    V = residual_map(spec, beta)
    return float(np.einsum("ik,ij,jk->", V, M, V))


def risk_closed_form(spec: SemSpec, env, scale: float, beta: KernelCoeffs) -> RiskEstimate:
    """Exact Gaussian risk ``trace(V^T E[s s^T] V)``."""
    M = second_moment(spec, EnvLabel(env), scale=scale)
    return RiskEstimate(risk_from_moment(spec, beta, M), 0.0, 0, "closed_form")


def risk_mc(spec: SemSpec, env, scale: float, beta: KernelCoeffs, n_mc: int, rng_seed=None) -> RiskEstimate:
    """Monte Carlo risk from ``n_mc`` simulated score vectors."""
    if n_mc < 2:
        raise InvalidArgumentError("n_mc must be >= 2")
    V = residual_map(spec, beta)
    sample = simulate_env(spec, EnvLabel(env), n_mc, scale, rng_seed)
    losses = ((sample.scores.scores @ V) ** 2).sum(axis=1)
    return RiskEstimate(float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(n_mc)), n_mc, "monte_carlo")


@dataclass
class DecompositionReport:
    """Worst risk at ``sqrt(gamma) A`` against ``R_+/2 + (gamma - 1/2) R_Delta``."""

    gamma: float
    lhs: float
    rhs: float
    diff: float
    std_error: float
    passed: bool
    method: str
    risk_O: float
    risk_A: float

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items()} | {"pass": self.passed}


def check_decomposition(
    spec: SemSpec,
    beta: KernelCoeffs,
    gamma: float,
    n_mc: int | None = None,
    rng_seed=None,
    rel_tol: float = 1e-10,
    n_se: float = 3.0,
    rhs_offset: float = 0.0,
) -> DecompositionReport:
    """Compare the attained worst risk with its two-environment decomposition.

    Closed form when ``n_mc`` is ``None`` (pass at ``rel_tol``), otherwise
    three independent Monte Carlo runs with a pass band of ``n_se`` combined
    standard errors.  ``rhs_offset`` perturbs the right-hand side and exists
    only to exercise failure handling.
    """
    if not gamma > 0:
        raise InvalidArgumentError("gamma must be > 0")
    root = math.sqrt(gamma)
    if n_mc is None:
        lhs = risk_closed_form(spec, EnvLabel.A, root, beta)
        r_A = risk_closed_form(spec, EnvLabel.A, 1.0, beta)
        r_O = risk_closed_form(spec, EnvLabel.O, 1.0, beta)
    else:
        seeds = np.random.SeedSequence(rng_seed).spawn(3)
        lhs = risk_mc(spec, EnvLabel.A, root, beta, n_mc, make_rng(seeds[0]))
        r_A = risk_mc(spec, EnvLabel.A, 1.0, beta, n_mc, make_rng(seeds[1]))
        r_O = risk_mc(spec, EnvLabel.O, 1.0, beta, n_mc, make_rng(seeds[2]))
    pooled = r_A.value + r_O.value
    delta = r_A.value - r_O.value
    rhs = 0.5 * pooled + (gamma - 0.5) * delta + rhs_offset
    diff = lhs.value - rhs
    se = math.sqrt(lhs.std_error**2 + (gamma * r_A.std_error) ** 2 + ((1 - gamma) * r_O.std_error) ** 2)
    if n_mc is None:
        passed = abs(diff) <= rel_tol * max(abs(rhs), abs(lhs.value), 1e-300)
        method = "closed_form"
    else:
        passed = abs(diff) <= n_se * se
        method = "monte_carlo"
    return DecompositionReport(float(gamma), lhs.value, rhs, diff, se, bool(passed), method, r_O.value, r_A.value)


@dataclass
class ContinuityProbe:
    sizes: np.ndarray
    differences: np.ndarray
    envelope: np.ndarray
    monotone: bool
    within_envelope: bool

    def rows(self) -> list[dict]:
        return [
            {"delta": float(d), "difference": float(v), "envelope": float(e)}
            for d, v, e in zip(self.sizes, self.differences, self.envelope)
        ]


def random_direction(spec: SemSpec, rng_seed=None, shifted_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """A zero-mean Gaussian shift direction ``(mean, cov)`` on the shifted coordinates."""
    rng = make_rng(rng_seed)
    d = spec.dim
    support = np.ones(d)
    if shifted_only:
        support = ((np.abs(spec.shift_mean) > 0) | (np.diag(spec.shift_cov) > 0)).astype(float)
        if not support.any():
            support = np.ones(d)
    L = rng.standard_normal((d, d)) * support[:, None] / math.sqrt(d)
    return np.zeros(d), L @ L.T


def risk_continuity_probe(
    spec: SemSpec,
    beta: KernelCoeffs,
    perturbation_sizes,
    direction_mean=None,
    direction_cov=None,
    rng_seed=None,
) -> ContinuityProbe:
    """Risk change along ``A + delta * D`` with ``D`` Gaussian and independent of ``A``.

    The envelope is the Cauchy-Schwarz bound
    ``|R' - R| <= ||H||^2 ||delta D|| (||A + delta D|| + ||A|| + 2 ||eps||)``
    with ``H`` the map from shift-plus-noise to residual scores and norms
    taken as root mean squares.
    """
    sizes = np.asarray(perturbation_sizes, dtype=float)
    if sizes.ndim != 1 or np.any(sizes < 0):
        raise InvalidArgumentError("perturbation sizes must be nonnegative")
    if direction_mean is None and direction_cov is None:
        direction_mean, direction_cov = random_direction(spec, rng_seed)
    m_D = np.zeros(spec.dim) if direction_mean is None else np.asarray(direction_mean, dtype=float)
    S_D = np.zeros((spec.dim, spec.dim)) if direction_cov is None else np.asarray(direction_cov, dtype=float)

    mu = spec.shift_mean
    base = spec.shift_second_moment()
    D2 = S_D + np.outer(m_D, m_D)
    r0 = risk_from_moment(spec, beta, second_moment(spec, shift_moment=base))
    H = residual_map(spec, beta).T @ spec.solution_operator
    h2 = float(np.linalg.norm(H, 2) ** 2)
    norm_A = math.sqrt(max(np.trace(base), 0.0))
    norm_eps = math.sqrt(max(np.trace(spec.sigma), 0.0))
    norm_D = math.sqrt(max(np.trace(D2), 0.0))

    diffs, env = [], []
    for d in sizes:
        moment = base + d * (np.outer(mu, m_D) + np.outer(m_D, mu)) + d**2 * D2
        diffs.append(abs(risk_from_moment(spec, beta, second_moment(spec, shift_moment=moment)) - r0))
        norm_Ap = math.sqrt(max(np.trace(moment), 0.0))
        env.append(h2 * d * norm_D * (norm_Ap + norm_A + 2 * norm_eps))
    diffs, env = np.array(diffs), np.array(env)
    order = np.argsort(-sizes)
    monotone = bool(np.all(np.diff(diffs[order]) <= 1e-12 * max(diffs.max(initial=0.0), 1.0)))
    return ContinuityProbe(sizes, diffs, env, monotone, bool(np.all(diffs <= env + 1e-12)))
