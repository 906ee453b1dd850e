"""scikit-learn compatible wrappers.

``X`` is a 3-d array of covariate curves ``(n_samples, p, n_grid)`` and
``y`` a 2-d array of target curves ``(n_samples, n_grid)``; all curves share
the grid passed at construction (default: uniform on the basis interval).
The regressor additionally needs the environment label of every sample.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidArgumentError
from .basis import CurvePanel, EnvLabel, make_fourier_sine_basis, scores_on_grid
from .solver import FitConfig, eval_beta_surface, fit_empirical


def _resolve_grid(grid, n_grid: int, interval) -> np.ndarray:
    if grid is None:
        return np.linspace(interval[0], interval[1], n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid.size != n_grid:
        raise InvalidArgumentError(f"curves have {n_grid} points but grid has {grid.size}")
    return grid


def check_curves(X, ndim: int, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-dimensional, got shape {X.shape}")
    if X.shape[0] == 0:
        raise InvalidArgumentError(f"{name} has no samples")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return X


class RiemannScoreTransformer(TransformerMixin, BaseEstimator):
    """Map sampled curves to basis scores.

    Accepts ``(n, n_grid)`` or ``(n, p, n_grid)`` input and returns
    ``(n, n_basis)`` or ``(n, p * n_basis)`` respectively.
    """

    def __init__(self, n_basis=10, interval=(0.0, 1.0), grid=None, rule="left"):
        self.n_basis = n_basis
        self.interval = interval
        self.grid = grid
        self.rule = rule

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.basis_ = make_fourier_sine_basis(self.n_basis, self.interval)
        self.grid_ = _resolve_grid(self.grid, X.shape[-1], self.interval)
        self.n_features_in_ = X.shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = np.asarray(X, dtype=float)
        if X.ndim not in (2, 3):
            raise InvalidArgumentError("X must be (n, n_grid) or (n, p, n_grid)")
        s = scores_on_grid(X, self.grid_, self.basis_, self.rule)
        return s.reshape(X.shape[0], -1)


class FunctionalWorstRiskRegressor(RegressorMixin, BaseEstimator):
    """Function-on-function regression minimizing worst risk over shifted environments.

    Parameters
    ----------
    gamma : float
        Robustness level. ``0.5`` is pooled least squares; large values
        approach the causal solution.
    n_basis, interval : basis size and time interval of the sine basis.
    path : {"grammian", "eigen"}
        Plug-in normal equations in the sine basis, or the split-sample
        eigenbasis estimator.
    e_of_n, d_n, truncation_M, split_fractions, center_observational :
        Estimator settings, see :class:`fworst.solver.FitConfig`.
    grid : array, optional
        Common sampling grid of all curves.
    random_state : int, optional
        Seed of the sample split (eigen path).

    Attributes
    ----------
    coef_ : KernelCoeffs
    report_ : SolveReport
    """

    def __init__(
        self,
        gamma=0.5,
        n_basis=10,
        interval=(0.0, 1.0),
        path="grammian",
        e_of_n=None,
        d_n=None,
        truncation_M=5.0,
        split_fractions=(0.5, 0.25, 0.25),
        center_observational=False,
        grid=None,
        random_state=None,
    ):
        self.gamma = gamma
        self.n_basis = n_basis
        self.interval = interval
        self.path = path
        self.e_of_n = e_of_n
        self.d_n = d_n
        self.truncation_M = truncation_M
        self.split_fractions = split_fractions
        self.center_observational = center_observational
        self.grid = grid
        self.random_state = random_state

    def _config(self) -> FitConfig:
        return FitConfig(
            gamma=float(self.gamma),
            basis=make_fourier_sine_basis(self.n_basis, self.interval),
            path=self.path,
            e_of_n=self.e_of_n,
            d_n=self.d_n,
            M=self.truncation_M,
            split_fractions=tuple(self.split_fractions),
            center_observational=self.center_observational,
        )

    def fit(self, X, y, environment):
        """Fit on pooled samples; ``environment`` holds ``"O"`` or ``"A"`` per sample."""
        X = check_curves(X, 3)
        y = check_curves(y, 2, "y")
        env = np.asarray(environment).astype(str)
        if not (X.shape[0] == y.shape[0] == env.shape[0]):
            raise InvalidArgumentError("X, y and environment differ in length")
        if X.shape[2] != y.shape[1]:
            raise InvalidArgumentError("X and y are sampled on different grids")
        unknown = set(env) - {"O", "A"}
        if unknown:
            raise InvalidArgumentError(f"unknown environment labels {sorted(unknown)}")
        grid = _resolve_grid(self.grid, y.shape[1], self.interval)
        panels = {}
        for label in ("O", "A"):
            sel = env == label
            if not sel.any():
                raise InvalidArgumentError(f"no samples from environment {label}")
            panels[label] = CurvePanel(EnvLabel(label), grid, y[sel], X[sel])
        self.coef_, self.report_ = fit_empirical(panels["O"], panels["A"], self._config(), self.random_state)
        self.grid_ = grid
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Predicted target curves ``int beta(t, tau) X(tau) dtau`` on the fitted grid."""
        check_is_fitted(self, "coef_")
        X = check_curves(X, 3)
        if X.shape[1] != self.n_features_in_ or X.shape[2] != self.grid_.size:
            raise InvalidArgumentError("X does not match the fitted covariates or grid")
        surf = eval_beta_surface(self.coef_, self.grid_, self.grid_)
        w = np.zeros_like(self.grid_)
        w[:-1] = np.diff(self.grid_)
        return np.einsum("jtu,nju,u->nt", surf, X, w)

    def beta_surface(self, grid_t=None, grid_tau=None):
        check_is_fitted(self, "coef_")
        grid_t = self.grid_ if grid_t is None else grid_t
        grid_tau = grid_t if grid_tau is None else grid_tau
        return eval_beta_surface(self.coef_, grid_t, grid_tau)
