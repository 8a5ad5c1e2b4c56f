"""Conditional expectations by cross-sectional polynomial regression.

All equations in scope are linear with deterministic coefficients, so their
true conditional expectations are affine in the conditioning state; a degree-2
monomial basis leaves slack while keeping the targets in span, which makes
the estimator exact up to Monte Carlo noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ConditionalEstimator", "RegressionError", "Projector", "estimate_conditional"]

COND_LIMIT = 1e12
RIDGE_CEILING = 1e-2


class RegressionError(RuntimeError):
    """Design matrix stayed rank-deficient through the ridge escalation."""


@dataclass(frozen=True)
class ConditionalEstimator:
    degree: int = 2
    ridge: float = 1e-8


def _poly_basis(x: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of the columns of x up to the given total degree."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.ndim != 2:
        raise ValueError("conditioning variables must form a (paths, vars) array")
    npaths, nvars = x.shape
    cols = [np.ones(npaths)]
    with np.errstate(over="ignore"):
        if degree >= 1:
            cols.extend(x[:, i] for i in range(nvars))
        if degree >= 2:
            for i in range(nvars):
                for j in range(i, nvars):
                    cols.append(x[:, i] * x[:, j])
        if degree >= 3:
            for i in range(nvars):
                for j in range(i, nvars):
                    for k in range(j, nvars):
                        cols.append(x[:, i] * x[:, j] * x[:, k])
    return np.column_stack(cols)


class Projector:
    """Least-squares projection onto the basis of one conditioning state.

    Building the projector factors the (tiny) normal-equation matrix once, so
    several targets at the same node reuse it.  Columns are centered and
    scaled for conditioning; the intercept is never penalized, so constants
    are reproduced exactly.
    """

    def __init__(self, cond: np.ndarray, est: ConditionalEstimator):
        basis = _poly_basis(cond, est.degree)
        npaths, nb = basis.shape
        with np.errstate(invalid="ignore", over="ignore"):
            mu = basis.mean(axis=0)
            mu[0] = 0.0
            sd = basis.std(axis=0)
            sd[~np.isfinite(sd) | (sd == 0.0)] = 1.0
            sd[0] = 1.0
            self._xs = (basis - mu) / sd
            penalty = np.ones(nb)
            penalty[0] = 0.0
            lam = est.ridge
            gram0 = self._xs.T @ self._xs / npaths
        while True:
            gram = gram0 + lam * np.diag(penalty)
            if np.all(np.isfinite(gram)) and np.linalg.cond(gram) <= COND_LIMIT:
                break
            lam *= 10.0
            if lam > RIDGE_CEILING:
                raise RegressionError(
                    f"design matrix rank-deficient even at ridge {RIDGE_CEILING:g}"
                )
        self._gram = gram
        self._npaths = npaths
        self.ridge_used = lam

    def fit(self, target: np.ndarray) -> np.ndarray:
        """Fitted values of the per-path target (paths,) or (paths, m)."""
        target = np.asarray(target, dtype=float)
        squeeze = target.ndim == 1
        if squeeze:
            target = target[:, None]
        beta = np.linalg.solve(self._gram, self._xs.T @ target / self._npaths)
        fitted = self._xs @ beta
        return fitted[:, 0] if squeeze else fitted


def estimate_conditional(cond: np.ndarray, target: np.ndarray, est: ConditionalEstimator = ConditionalEstimator()) -> np.ndarray:
    """One-shot regression of per-path targets on the conditioning state."""
    if not np.all(np.isfinite(np.asarray(target))):
        raise ValueError("regression target contains non-finite values")
    return Projector(cond, est).fit(target)
