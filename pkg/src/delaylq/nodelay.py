"""Independent classical pipeline for the problem without delay.

When every barred coefficient and weight vanishes the equations collapse to
the classical backward-LQ system.  This module integrates those classical
equations with scipy's adaptive solvers at tight tolerance and rebuilds the
classical feedback gain on its own, giving the reduction experiments an
oracle that shares no code with the production solvers.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .model import ProblemSpec

__all__ = ["UndelayedOracle", "build_undelayed_oracle"]

_RTOL = 1e-11
_ATOL = 1e-13


class UndelayedOracle:
    """Dense-output classical solutions on [s, T]."""

    def __init__(self, spec: ProblemSpec):
        g = spec.grid
        self.spec = spec
        self.n = spec.n
        half = g.half_times()
        dw = spec.derived()

        def interp(stack):
            def fn(t):
                out = np.empty(stack.shape[1:])
                for i in range(stack.shape[1]):
                    for j in range(stack.shape[2]):
                        out[i, j] = np.interp(t, half, stack[:, i, j])
                return out

            return fn

        self._a = interp(spec.A.values)
        self._b = interp(spec.B.values)
        self._qt = interp(dw.qt)
        self._rt = interp(dw.rt)
        self._cnc = interp(dw.cnc)
        self._ninv = interp(dw.script_n_inv)
        self._c = interp(spec.C.values)
        self._sigma_sol = None
        self._l_sol = None

    def _sigma_rhs(self, t, y):
        n = self.n
        sig = y.reshape(n, n)
        a = self._a(t)
        b = self._b(t)
        qt = self._qt(t)
        rt = self._rt(t)
        m = 2.0 * rt @ sig + np.eye(n)
        rhs = (
            -sig @ a.T
            - a @ sig
            + 2.0 * sig @ qt @ sig
            - b @ sig @ np.linalg.inv(m) @ b.T
            - self._cnc(t)
        )
        rhs = 0.5 * (rhs + rhs.T)
        return rhs.ravel()

    def solve_sigma(self, terminal=None):
        g = self.spec.grid
        n = self.n
        term = np.zeros((n, n)) if terminal is None else np.asarray(terminal, dtype=float)
        sol = solve_ivp(
            self._sigma_rhs,
            (g.T, g.s),
            term.ravel(),
            method="DOP853",
            dense_output=True,
            rtol=_RTOL,
            atol=_ATOL,
        )
        if not sol.success:
            raise RuntimeError(f"oracle backward integration failed: {sol.message}")
        self._sigma_sol = sol
        return sol

    def sigma(self, t) -> np.ndarray:
        if self._sigma_sol is None:
            self.solve_sigma()
        return self._sigma_sol.sol(t).reshape(self.n, self.n)

    def _l_rhs(self, t, y):
        n = self.n
        lmat = y.reshape(n, n)
        a = self._a(t)
        b = self._b(t)
        sig = self.sigma(t)
        rt = self._rt(t)
        m = 2.0 * rt @ sig + np.eye(n)
        quad = b @ sig @ np.linalg.inv(m) @ b.T + self._cnc(t)
        quad = 0.5 * (quad + quad.T)
        rhs = lmat @ a + a.T @ lmat + 2.0 * self._qt(t) - lmat @ quad @ lmat
        rhs = 0.5 * (rhs + rhs.T)
        return rhs.ravel()

    def solve_l(self):
        g = self.spec.grid
        init = 2.0 * 0.5 * (self.spec.G + self.spec.G.T)
        sol = solve_ivp(
            self._l_rhs,
            (g.s, g.T),
            init.ravel(),
            method="DOP853",
            dense_output=True,
            rtol=_RTOL,
            atol=_ATOL,
        )
        if not sol.success:
            raise RuntimeError(f"oracle forward integration failed: {sol.message}")
        self._l_sol = sol
        return sol

    def l_gain(self, t) -> np.ndarray:
        if self._l_sol is None:
            self.solve_l()
        return self._l_sol.sol(t).reshape(self.n, self.n)

    def feedback_gain(self, t) -> np.ndarray:
        """Multiplier of the backward state in the classical feedback."""
        return -self._ninv(t) @ self._c(t).T @ self.l_gain(t)

    def control(self, t, ystar: np.ndarray, shift: np.ndarray) -> np.ndarray:
        """Classical feedback: weighted image of (shift - gain * state)."""
        return (shift - ystar @ self.l_gain(t).T) @ (self._ninv(t) @ self._c(t).T).T

    def sigma_deviation(self, traj) -> float:
        g = self.spec.grid
        return max(
            float(np.linalg.norm(traj.values[k] - self.sigma(g.times[k]), 2))
            for k in range(g.idx_s, g.idx_T + 1)
        )

    def l_deviation(self, traj) -> float:
        g = self.spec.grid
        return max(
            float(np.linalg.norm(traj.values[k] - self.l_gain(g.times[k]), 2))
            for k in range(g.idx_s, g.idx_T + 1)
        )


def build_undelayed_oracle(spec: ProblemSpec) -> UndelayedOracle:
    """Oracle for a spec whose barred data all vanish (checked)."""
    g = spec.grid
    for name in ("Abar", "Bbar", "Cbar", "Qbar", "Rbar", "Nbar"):
        if not getattr(spec, name).is_zero(0, g.n_nodes - 1):
            raise ValueError(f"spec has nonzero {name}; the classical oracle does not apply")
    if np.any(spec.Gbar != 0.0):
        raise ValueError("spec has nonzero Gbar; the classical oracle does not apply")
    return UndelayedOracle(spec)
