"""Classical synthetic control: simplex-constrained least squares.

Weights minimize the pre-period sum of squared discrepancies between the
treated series and the weighted donor combination, over the probability
simplex. The solver is projected gradient descent with step 1/L, which
is monotone in the objective, initialized at the uniform vector, and
stopped by a certified Frank-Wolfe duality gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    HeatscError,
    NonPositiveDenominatorError,
)
from .panel import LOG_RATE, SIMULATED_LOG_RATE


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cs = np.cumsum(u) - 1.0
    rho = np.nonzero(u - cs / np.arange(1, v.size + 1) > 0)[0][-1]
    lam = cs[rho] / (rho + 1.0)
    return np.maximum(v - lam, 0.0)


@dataclass(frozen=True)
class ScWeights:
    """Simplex weights with the achieved objective and a convergence flag."""

    w: np.ndarray
    objective: float
    gap: float
    n_iter: int
    converged: bool


@dataclass(frozen=True)
class ScFit:
    weights: ScWeights
    counterfactual_pre: np.ndarray = field(repr=False)
    counterfactual_post: np.ndarray = field(repr=False)
    rmse_pre: float = float("nan")


def fit_sc_weights(
    treated_pre: np.ndarray,
    donors_pre: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> ScWeights:
    """Solve min_{w in simplex} ||y - Aw||^2 for the pre period.

    Parameters
    ----------
    treated_pre : ndarray, shape (T_pre,)
    donors_pre : ndarray, shape (T_pre, J)
    tol : float
        Relative duality-gap threshold: iteration stops once the
        Frank-Wolfe gap is <= tol * max(1, objective), certifying the
        objective is within that gap of the optimum.
    max_iter : int
        Hard cap; hitting it returns the best iterate with
        ``converged=False`` rather than raising.
    """
    y = np.asarray(treated_pre, dtype=float).ravel()
    a = np.asarray(donors_pre, dtype=float)
    if a.ndim != 2 or a.shape[0] != y.size:
        raise DimensionMismatchError(
            f"donors_pre shape {a.shape} does not match pre length {y.size}"
        )
    j = a.shape[1]
    if j < 1:
        raise HeatscError("need at least one donor")
    w = np.full(j, 1.0 / j)
    if j == 1:
        r = a[:, 0] - y
        return ScWeights(w, float(r @ r), 0.0, 0, True)

    q = a.T @ a          # J x J Gram matrix
    b = a.T @ y
    yy = float(y @ y)
    lip = 2.0 * float(np.linalg.eigvalsh(q)[-1])

    def objective(wv: np.ndarray) -> float:
        return float(wv @ (q @ wv) - 2.0 * (b @ wv) + yy)

    obj = objective(w)
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (q @ w - b)
        # Frank-Wolfe gap over the simplex: <grad, w> - min_j grad_j
        gap = float(grad @ w - grad.min())
        if gap <= tol * max(1.0, abs(obj)):
            return ScWeights(w, obj, gap, it - 1, True)
        if lip <= 0.0:
            # zero donor matrix: objective is constant on the simplex
            return ScWeights(w, obj, 0.0, it - 1, True)
        w = project_simplex(w - grad / lip)
        obj = objective(w)
    return ScWeights(w, obj, gap, it, False)


def impute_counterfactual(weights: ScWeights | np.ndarray, donors_post: np.ndarray) -> np.ndarray:
    """Weighted donor combination for each post day."""
    w = weights.w if isinstance(weights, ScWeights) else np.asarray(weights, dtype=float)
    a = np.asarray(donors_post, dtype=float)
    if a.ndim != 2 or a.shape[1] != w.size:
        raise DimensionMismatchError(
            f"donors_post shape {a.shape} does not match {w.size} weights"
        )
    return a @ w


def relative_risk(
    observed_post: np.ndarray, counterfactual_post: np.ndarray, scale: str
) -> float:
    """Ratio of summed post-period rates, observed over counterfactual.

    Log-scale series are exponentiated back to rates before summation.
    """
    obs = np.asarray(observed_post, dtype=float)
    cf = np.asarray(counterfactual_post, dtype=float)
    if obs.shape != cf.shape:
        raise DimensionMismatchError("observed and counterfactual lengths differ")
    if scale in (LOG_RATE, SIMULATED_LOG_RATE):
        obs = np.exp(obs)
        cf = np.exp(cf)
    denom = float(cf.sum())
    if denom <= 0.0 or np.any(cf <= 0.0):
        raise NonPositiveDenominatorError("counterfactual rates must be positive")
    return float(obs.sum()) / denom


def fit_synthetic_control(
    treated_pre: np.ndarray,
    donors_pre: np.ndarray,
    donors_post: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> ScFit:
    """Convenience wrapper: fit weights, impute both windows, report fit error."""
    weights = fit_sc_weights(treated_pre, donors_pre, tol=tol, max_iter=max_iter)
    cf_pre = impute_counterfactual(weights, donors_pre)
    cf_post = impute_counterfactual(weights, donors_post)
    rmse_pre = float(np.sqrt(np.mean((np.asarray(treated_pre) - cf_pre) ** 2)))
    return ScFit(weights, cf_pre, cf_post, rmse_pre)
