"""Membership tests for the set of admissible future shifts.

A shift ``A'`` is admissible at level ``gamma`` when its covariance kernel is
dominated by ``gamma`` times the kernel of the observed shift ``A`` as a
quadratic form.  Three finite versions are provided: on score second
moments, on kernels sampled on a grid, and on autocovariances of stationary
shifts in the frequency domain.

Admissible sets are closed, so a limit of admissible shifts stays
admissible; this is what justifies testing truncations and grid
approximations and passing to the limit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import InvalidArgumentError, check_grid, check_symmetric
from .basis import trapezoid_weights

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class Membership:
    member: bool
    margin: float
    boundary: bool = False
    worst_frequency: float | None = None
    crossing_frequency: float | None = None

    @property
    def verdict(self) -> str:
        if not self.member:
            return "non-member"
        return "member-boundary" if self.boundary else "member"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        return out


def _verdict(margin: float, scale: float, tol: float) -> tuple[bool, bool]:
    thresh = tol * scale if scale > 0 else tol
    return margin >= -thresh, abs(margin) <= thresh


def psd_membership_scores(M_prime, M, gamma: float, tol: float = DEFAULT_TOL) -> Membership:
    """Is ``gamma * M - M_prime`` positive semidefinite (up to ``tol * trace(gamma M)``)?"""
    Mp = check_symmetric(M_prime, "M_prime", atol=1e-10)
    M = check_symmetric(M, "M", atol=1e-10)
    if Mp.shape != M.shape:
        raise InvalidArgumentError(f"moment shapes differ: {Mp.shape} vs {M.shape}")
    D = gamma * M - Mp
    margin = float(np.linalg.eigvalsh((D + D.T) / 2).min())
    member, boundary = _verdict(margin, float(np.trace(gamma * M)), tol)
    return Membership(member, margin, boundary)


@dataclass(frozen=True)
class ShiftKernelGrid:
    """Joint covariance kernel of ``n_vars`` processes sampled on ``grid``.

    ``K`` is ``(n_vars * m, n_vars * m)``; block ``(i, j)`` holds
    ``E[A_s(i) A_t(j)]`` for ``s, t`` on the grid.
    """

    grid: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        grid = check_grid(self.grid, min_points=1)
        K = check_symmetric(self.K, "K", atol=1e-10)
        if K.shape[0] % grid.size:
            raise InvalidArgumentError("kernel size is not a multiple of the grid size")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "K", (K + K.T) / 2)

    @property
    def n_vars(self) -> int:
        return self.K.shape[0] // self.grid.size

    def block(self, i: int, j: int) -> np.ndarray:
        m = self.grid.size
        return self.K[i * m : (i + 1) * m, j * m : (j + 1) * m]

    def to_csv(self, path) -> None:
        m, q = self.grid.size, self.n_vars
        ii, si, jj, ti = np.meshgrid(np.arange(q), np.arange(m), np.arange(q), np.arange(m), indexing="ij")
        frame = pd.DataFrame(
            {
                "i": ii.ravel(),
                "j": jj.ravel(),
                "s": self.grid[si.ravel()],
                "t": self.grid[ti.ravel()],
                "value": self.K[ii.ravel() * m + si.ravel(), jj.ravel() * m + ti.ravel()],
            }
        )
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path) -> "ShiftKernelGrid":
        frame = pd.read_csv(path, float_precision="round_trip")
        if list(frame.columns) != ["i", "j", "s", "t", "value"]:
            raise InvalidArgumentError(f"{path}: header must be i,j,s,t,value")
        grid = np.sort(frame["s"].unique())
        q = int(frame["i"].max()) + 1
        m = grid.size
        if len(frame) != (q * m) ** 2:
            raise InvalidArgumentError(f"{path}: expected {(q * m) ** 2} rows, got {len(frame)}")
        K = np.full((q * m, q * m), np.nan)
        rows = frame["i"].to_numpy(int) * m + np.searchsorted(grid, frame["s"].to_numpy())
        cols = frame["j"].to_numpy(int) * m + np.searchsorted(grid, frame["t"].to_numpy())
        K[rows, cols] = frame["value"].to_numpy(float)
        if np.isnan(K).any():
            raise InvalidArgumentError(f"{path}: kernel grid has missing entries")
        return cls(grid, K)


def mercer_membership_grid(K_prime: ShiftKernelGrid, K: ShiftKernelGrid, gamma: float, tol: float = DEFAULT_TOL) -> Membership:
    """Quadratic-form domination tested on grid functions with trapezoid weights."""
    if K_prime.grid.shape != K.grid.shape or not np.allclose(K_prime.grid, K.grid, rtol=0, atol=1e-12):
        raise InvalidArgumentError("kernel grids differ")
    if K_prime.K.shape != K.K.shape:
        raise InvalidArgumentError("kernels cover different numbers of variables")
    sw = np.sqrt(np.tile(trapezoid_weights(K.grid), K.n_vars))
    D = sw[:, None] * (gamma * K.K - K_prime.K) * sw[None, :]
    margin = float(np.linalg.eigvalsh((D + D.T) / 2).min())
    scale = float(np.trace(sw[:, None] * (gamma * K.K) * sw[None, :]))
    member, boundary = _verdict(margin, scale, tol)
    return Membership(member, margin, boundary)


def _spectral_density(acov: np.ndarray, fft_size: int, lag_step: float) -> np.ndarray:
    """DFT of a centred autocovariance sequence; returns ``(fft_size, q, q)`` Hermitian matrices."""
    L = acov.shape[0] // 2
    padded = np.zeros((fft_size,) + acov.shape[1:], dtype=float)
    padded[: L + 1] = acov[L:]
    padded[fft_size - L :] = acov[:L]
    F = np.fft.fft(padded, axis=0) * lag_step
    return (F + np.conj(np.swapaxes(F, 1, 2))) / 2


def _as_acov(acov) -> np.ndarray:
    a = np.asarray(acov, dtype=float)
    if a.ndim == 1:
        a = a[:, None, None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise InvalidArgumentError("autocovariance must be (n_lags,) or (n_lags, q, q)")
    if a.shape[0] % 2 == 0:
        raise InvalidArgumentError("lag grid must be symmetric: odd length centred on lag 0")
    if not np.allclose(a[::-1], np.swapaxes(a, 1, 2), rtol=1e-10, atol=1e-12):
        raise InvalidArgumentError("lag grid must be symmetric: K(-h) must equal K(h)^T")
    return a


def stationary_fourier_membership(
    acov_prime, acov, gamma: float, fft_size: int, lag_step: float = 1.0, tol: float = DEFAULT_TOL
) -> Membership:
    """Frequency-wise PSD test of ``gamma * f_A(w) - f_A'(w)``.

    Autocovariances are sampled at lags ``-L..L`` times ``lag_step`` and
    zero-padded to ``fft_size``; the almost-everywhere condition is only
    checked at the DFT bins.  ``worst_frequency`` is the bin with the most
    negative margin and ``crossing_frequency`` the smallest ``|w|`` at which
    membership fails (``None`` when it never does).
    """
    a_p, a = _as_acov(acov_prime), _as_acov(acov)
    if a_p.shape != a.shape:
        raise InvalidArgumentError("autocovariance arrays differ in shape")
    if fft_size < a.shape[0]:
        raise InvalidArgumentError("fft_size must be at least the number of lags")
    D = gamma * _spectral_density(a, fft_size, lag_step) - _spectral_density(a_p, fft_size, lag_step)
    mins = np.linalg.eigvalsh(D).min(axis=1)
    omega = 2 * np.pi * np.fft.fftfreq(fft_size, d=lag_step)
    scale = float(np.abs(np.trace(gamma * _spectral_density(a, fft_size, lag_step), axis1=1, axis2=2)).max())
    thresh = tol * scale if scale > 0 else tol
    worst = int(np.argmin(mins))
    margin = float(mins[worst])
    failing = mins < -thresh
    crossing = float(np.abs(omega[failing]).min()) if failing.any() else None
    return Membership(
        bool(not failing.any()),
        margin,
        bool(abs(margin) <= thresh),
        worst_frequency=float(abs(omega[worst])),
        crossing_frequency=crossing,
    )


def truncation_projector(n_vars: int, n_basis: int, level: int) -> np.ndarray:
    keep = np.zeros(n_vars * n_basis)
    for v in range(n_vars):
        keep[v * n_basis : v * n_basis + level] = 1.0
    return keep


def partial_sum_membership(shift_moment, gamma: float, n_terms: int, n_basis: int, tol: float = DEFAULT_TOL):
    """Test the basis truncations of a shift against ``gamma`` times the full shift.

    Level ``n`` keeps the first ``n`` scores of every variable.  Returns the
    per-level results and the first level from which all later levels are
    members (``None`` if the last level fails).
    """
    M = check_symmetric(shift_moment, "shift_moment", atol=1e-10)
    if M.shape[0] % n_basis:
        raise InvalidArgumentError("moment size is not a multiple of n_basis")
    if not 1 <= n_terms <= n_basis:
        raise InvalidArgumentError("n_terms must lie in 1..n_basis")
    n_vars = M.shape[0] // n_basis
    results = []
    for level in range(1, n_terms + 1):
        keep = truncation_projector(n_vars, n_basis, level)
        results.append(psd_membership_scores(keep[:, None] * M * keep[None, :], M, gamma, tol))
    first = None
    for level in range(n_terms, 0, -1):
        if not results[level - 1].member:
            break
        first = level
    return results, first


def save_verdict(membership: Membership, path, **extra) -> None:
    import json

    Path(path).write_text(json.dumps({**membership.to_dict(), **extra}, indent=1))
