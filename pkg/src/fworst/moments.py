"""Second moments of scores and the pooled covariance operator.

Grammians ``G`` are covariate-score second moments, rotated responses ``Z``
are covariate-by-target cross moments.  Empirical versions are plug-in
uncentred averages; population versions come from the SEM in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import InvalidArgumentError, NumericFailureError, check_grid
from .basis import BasisSpec, EnvLabel, ScoreTable
from .shiftset import ShiftKernelGrid
from .sim import SemSpec, second_moment

KERNEL_TOL = 1e-10


@dataclass(frozen=True)
class Grammians:
    p: int
    n_basis: int
    G_O: np.ndarray
    G_A: np.ndarray
    Z_O: np.ndarray
    Z_A: np.ndarray
    n_O: int | None = None
    n_A: int | None = None

    def __post_init__(self):
        d = self.p * self.n_basis
        for name in ("G_O", "G_A"):
            G = np.asarray(getattr(self, name), dtype=float)
            if G.shape != (d, d):
                raise InvalidArgumentError(f"{name} must be {(d, d)}, got {G.shape}")
            if np.abs(G - G.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(G).max(initial=0.0)):
                raise InvalidArgumentError(f"{name} is not symmetric")
            object.__setattr__(self, name, (G + G.T) / 2)
        for name in ("Z_O", "Z_A"):
            Z = np.asarray(getattr(self, name), dtype=float)
            if Z.shape != (d, self.n_basis):
                raise InvalidArgumentError(f"{name} must be {(d, self.n_basis)}, got {Z.shape}")
            object.__setattr__(self, name, Z)

    def combined(self, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        """``gamma * G_A + (1 - gamma) * G_O`` and the matching response combination."""
        G = gamma * self.G_A + (1 - gamma) * self.G_O
        Z = gamma * self.Z_A + (1 - gamma) * self.Z_O
        return (G + G.T) / 2, Z

    def truncated(self, n_terms: int) -> "Grammians":
        """Moments of the first ``n_terms`` scores of each variable."""
        if not 1 <= n_terms <= self.n_basis:
            raise InvalidArgumentError("n_terms must lie in 1..n_basis")
        idx = np.concatenate([j * self.n_basis + np.arange(n_terms) for j in range(self.p)])
        return Grammians(
            self.p,
            n_terms,
            self.G_O[np.ix_(idx, idx)],
            self.G_A[np.ix_(idx, idx)],
            self.Z_O[np.ix_(idx, np.arange(n_terms))],
            self.Z_A[np.ix_(idx, np.arange(n_terms))],
            self.n_O,
            self.n_A,
        )

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "n_basis": self.n_basis,
            "G_O": self.G_O.reshape(-1).tolist(),
            "G_A": self.G_A.reshape(-1).tolist(),
            "Z_O": self.Z_O.reshape(-1).tolist(),
            "Z_A": self.Z_A.reshape(-1).tolist(),
            "n_samples": {"O": self.n_O, "A": self.n_A},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Grammians":
        p, nb = int(data["p"]), int(data["n_basis"])
        d = p * nb
        n = data.get("n_samples", {})
        return cls(
            p,
            nb,
            np.asarray(data["G_O"], dtype=float).reshape(d, d),
            np.asarray(data["G_A"], dtype=float).reshape(d, d),
            np.asarray(data["Z_O"], dtype=float).reshape(d, nb),
            np.asarray(data["Z_A"], dtype=float).reshape(d, nb),
            n.get("O"),
            n.get("A"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Grammians":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _split_moment(M: np.ndarray, n_basis: int) -> tuple[np.ndarray, np.ndarray]:
    return M[n_basis:, n_basis:], M[n_basis:, :n_basis]


def score_second_moment(table: ScoreTable) -> np.ndarray:
    if table.n_samples == 0:
        raise InvalidArgumentError("score table is empty")
    s = table.scores
    M = s.T @ s / table.n_samples
    return (M + M.T) / 2


def empirical_grammians(scores_O: ScoreTable, scores_A: ScoreTable) -> Grammians:
    """Plug-in Grammians from uncentred score second moments."""
    if scores_O.n_samples == 0 or scores_A.n_samples == 0:
        raise InvalidArgumentError("score tables must be nonempty")
    if scores_O.n_basis != scores_A.n_basis or scores_O.p != scores_A.p:
        raise InvalidArgumentError("score tables disagree on p or n_basis")
    if scores_O.p < 1:
        raise InvalidArgumentError("score tables need a target and at least one covariate")
    G_O, Z_O = _split_moment(score_second_moment(scores_O), scores_O.n_basis)
    G_A, Z_A = _split_moment(score_second_moment(scores_A), scores_A.n_basis)
    return Grammians(scores_O.p, scores_O.n_basis, G_O, G_A, Z_O, Z_A, scores_O.n_samples, scores_A.n_samples)


def population_grammians(spec: SemSpec, scale: float = 1.0) -> Grammians:
    """Exact Grammians of the SEM; the shifted environment uses ``scale * alpha``."""
    M_O = second_moment(spec, EnvLabel.O)
    M_A = second_moment(spec, EnvLabel.A, scale=scale)
    G_O, Z_O = _split_moment(M_O, spec.n_basis)
    G_A, Z_A = _split_moment(M_A, spec.n_basis)
    return Grammians(spec.p, spec.n_basis, G_O, G_A, Z_O, Z_A)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that the first non-negligible coordinate is positive."""
    v = np.array(vectors, dtype=float)
    for col in range(v.shape[1]):
        c = v[:, col]
        nz = np.flatnonzero(np.abs(c) > 1e-12 * max(np.abs(c).max(initial=0.0), 1e-300))
        if nz.size and c[nz[0]] < 0:
            v[:, col] = -c
    return v


@dataclass(frozen=True)
class PooledOperator:
    """``gamma K_A + (1 - gamma) K_O`` in covariate-score coordinates, diagonalised.

    Eigenvalues are in descending order.  ``kernel_mask`` flags directions
    with eigenvalue at or below ``kernel_tol * max(eigenvalue)``.
    """

    gamma: float
    K: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel_tol: float = KERNEL_TOL

    @property
    def kernel_mask(self) -> np.ndarray:
        top = max(float(self.eigenvalues.max(initial=0.0)), 0.0)
        return self.eigenvalues <= self.kernel_tol * top

    @property
    def kernel_dim(self) -> int:
        return int(self.kernel_mask.sum())


def pooled_operator(gram: Grammians, gamma: float, kernel_tol: float = KERNEL_TOL) -> PooledOperator:
    if gamma < 0:
        raise InvalidArgumentError("gamma must be >= 0")
    K, _ = gram.combined(gamma)
    return _diagonalise(K, gamma, kernel_tol)


def _diagonalise(K: np.ndarray, gamma: float, kernel_tol: float) -> PooledOperator:
    try:
        w, v = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    return PooledOperator(float(gamma), K, w[order], fix_signs(v[:, order]), kernel_tol)


def covariance_kernel_grid(scores: ScoreTable, basis: BasisSpec, grid) -> ShiftKernelGrid:
    """Empirical joint kernel ``phi(s)^T M_ij phi(t)`` of every variable in the table."""
    if scores.n_samples == 0:
        raise InvalidArgumentError("score table is empty")
    grid = check_grid(grid, basis.interval)
    return kernel_from_moment(score_second_moment(scores), basis, grid)


def kernel_from_moment(M: np.ndarray, basis: BasisSpec, grid) -> ShiftKernelGrid:
    M = np.asarray(M, dtype=float)
    n_vars = M.shape[0] // basis.n_basis
    P = np.kron(np.eye(n_vars), basis.values(grid))
    K = P.T @ M @ P
    return ShiftKernelGrid(np.asarray(grid, dtype=float), (K + K.T) / 2)


@dataclass(frozen=True)
class EigenFunctions:
    """Estimated eigenfunctions of the pooled operator, as functions in ``L2^p``.

    ``coef`` holds each function's coordinates in the covariate basis
    (``(n_col, p * n_basis)``); ``values`` the same functions tabulated on
    ``grid`` as ``(n_col, p, len(grid))``.
    """

    basis: BasisSpec
    grid: np.ndarray
    coef: np.ndarray
    values: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_col(self) -> int:
        return self.coef.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def head(self, n: int) -> "EigenFunctions":
        return EigenFunctions(self.basis, self.grid, self.coef[:n], self.values[:n], self.eigenvalues[:n])


def estimate_eigenfunctions(
    scores_eigen: tuple[ScoreTable, ScoreTable],
    gamma: float,
    basis: BasisSpec,
    grid,
    kernel_tol: float = KERNEL_TOL,
) -> EigenFunctions:
    """Eigenfunctions of the pooled operator estimated from one split only.

    The pooled second moment of the split's covariate scores is
    diagonalised; eigenvectors (unit norm, sign-fixed) are mapped to
    functions through the basis.  Kernel directions are dropped.
    """
    scores_O, scores_A = scores_eigen
    if scores_O.n_samples == 0 or scores_A.n_samples == 0:
        raise InvalidArgumentError("eigen split is empty")
    gram = empirical_grammians(scores_O, scores_A)
    op = pooled_operator(gram, gamma, kernel_tol)
    keep = ~op.kernel_mask
    V = op.eigenvectors[:, keep]
    grid = check_grid(grid, basis.interval)
    phi = basis.values(grid)
    coef = V.T
    values = coef.reshape(coef.shape[0], gram.p, basis.n_basis) @ phi
    return EigenFunctions(basis, grid, coef, values, op.eigenvalues[keep])
