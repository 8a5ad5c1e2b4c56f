"""Forward simulation of SDEs with delayed and time-advanced arguments.

The engine runs whole-interval Euler-Maruyama sweeps.  Within a sweep the
delayed argument and the conditional expectation of the advanced argument are
frozen from the previous iterate (the latter realized by cross-sectional
regression on the frozen state and the Brownian level), and sweeps repeat
until the ensemble stops moving: global Picard iteration, mirroring the
deterministic solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..model import Grid, GridFn
from ..riccati import MatrixTrajectory, PicardDiagnostics, PicardDivergenceError, compute_gamma, solve_aode
from .brownian import BrownianBundle
from .ensembles import PathEnsemble
from .regression import ConditionalEstimator, Projector

__all__ = ["simulate_asdde", "solve_linear_asde_explicit", "ExplicitAsdeResult"]


def _as_node_table(fn, grid: Grid, dim: int) -> np.ndarray:
    """Deterministic segment data as a (n_nodes, dim) table."""
    if fn is None:
        return np.zeros((grid.n_nodes, dim))
    if isinstance(fn, GridFn):
        return fn.at_nodes()[:, :, 0]
    if callable(fn):
        return np.stack([np.asarray(fn(t), dtype=float).reshape(dim) for t in grid.times])
    arr = np.asarray(fn, dtype=float)
    if arr.shape == (grid.n_nodes, dim):
        return arr
    return np.broadcast_to(arr.reshape(dim), (grid.n_nodes, dim)).copy()


def _diagnostics(residuals, converged) -> PicardDiagnostics:
    rate = float("nan")
    ratios = [
        residuals[i] / residuals[i - 1]
        for i in range(1, len(residuals))
        if residuals[i - 1] > 0 and residuals[i] > 0
    ]
    if ratios:
        rate = float(np.exp(np.mean(np.log(ratios))))
    return PicardDiagnostics(len(residuals), list(residuals), rate, converged)


def simulate_asdde(
    bundle: BrownianBundle,
    drift: Callable,
    diffusion: Callable,
    zeta,
    history=None,
    terminal_ext=None,
    est: ConditionalEstimator = ConditionalEstimator(),
    tol: float = 1e-9,
    max_sweeps: int = 60,
    delay_steps: Optional[int] = None,
    advance_steps: Optional[int] = None,
    dim: Optional[int] = None,
    name: str = "asdde",
) -> tuple:
    """Simulate dX = b dt + sigma dW with one-delay and one-advance arguments.

    ``drift`` and ``diffusion`` receive (k, x, x_delayed, adv) where adv is
    the conditional expectation of X(t+delta) given the time-t state (an
    exact read of the prescribed extension beyond the terminal node).  Both
    delays default to one grid delay; pass 0 to drop an argument.  Returns
    (PathEnsemble, PicardDiagnostics).
    """
    g = bundle.grid
    lo, hi = g.idx_s, g.idx_T
    zeta = np.asarray(zeta, dtype=float)
    if dim is None:
        dim = zeta.shape[-1]
    m1 = g.m if delay_steps is None else delay_steps
    m2 = g.m if advance_steps is None else advance_steps
    hist = _as_node_table(history, g, dim)
    term = _as_node_table(terminal_ext, g, dim)
    paths = bundle.paths
    zeta_paths = np.broadcast_to(zeta, (paths, dim))

    frozen = np.zeros((paths, g.n_nodes, dim))
    frozen[:, :lo] = hist[None, :lo]
    frozen[:, hi + 1 :] = term[None, hi + 1 :]
    frozen[:, lo] = zeta_paths

    h = g.h
    residuals = []
    converged = False
    cur = frozen
    for _ in range(max_sweeps):
        new = frozen.copy()
        new[:, lo] = zeta_paths
        # advanced conditional expectations, frozen iterate
        adv = np.zeros((paths, hi - lo, dim))
        if m2 > 0:
            for k in range(lo, hi):
                ka = k + m2
                if ka > hi:
                    adv[:, k - lo] = term[ka][None, :]
                else:
                    proj = Projector(np.column_stack([cur[:, k], bundle.w[:, k : k + 1]]), est)
                    adv[:, k - lo] = proj.fit(cur[:, ka])
        for k in range(lo, hi):
            x = new[:, k]
            kd = k - m1
            x_del = np.broadcast_to(hist[kd], (paths, dim)) if kd < lo else cur[:, kd]
            a = x if m2 == 0 else adv[:, k - lo]
            new[:, k + 1] = (
                x + h * drift(k, x, x_del, a) + diffusion(k, x, x_del, a) * bundle.dw[:, k][:, None]
            )
        if not np.all(np.isfinite(new[:, lo : hi + 1])):
            raise PicardDivergenceError(_diagnostics(residuals + [np.inf], False))
        res = float(np.max(np.abs(new[:, lo : hi + 1] - cur[:, lo : hi + 1])))
        residuals.append(res)
        cur = new
        scale = float(np.max(np.abs(new[:, lo : hi + 1])))
        if res <= tol * (1.0 + scale):
            converged = True
            break
        if len(residuals) >= 6 and all(residuals[-j] > residuals[-j - 1] for j in range(1, 6)):
            raise PicardDivergenceError(_diagnostics(residuals, False))
        if m1 == 0 and m2 == 0:
            converged = True  # no frozen arguments: one sweep is exact
            break
    ens = PathEnsemble(g, cur, adapted=True, name=name, seed=bundle.seed)
    return ens, _diagnostics(residuals, converged)


@dataclass
class ExplicitAsdeResult:
    """Closed-form solution of the linear advanced SDE: phi = upsilon * pi."""

    phi: PathEnsemble  # (paths, nodes, n*n), row-major matrix components
    pi: PathEnsemble
    upsilon: MatrixTrajectory
    gamma: MatrixTrajectory

    def phi_matrices(self) -> np.ndarray:
        p, k, _ = self.phi.values.shape
        n = self.upsilon.values.shape[1]
        return self.phi.values.reshape(p, k, n, n)


def solve_linear_asde_explicit(
    Ahat: GridFn,
    Bhat: GridFn,
    bundle: BrownianBundle,
    method: str = "euler",
    tol: float = 1e-10,
) -> ExplicitAsdeResult:
    """Build the advanced-SDE solution from its deterministic factorization.

    The deterministic advanced propagator and its martingale loading are
    solved first; the scalar-driven exponential martingale is then rolled
    per path (Euler form keeps the discrete mean exactly at the identity;
    ``method='log'`` selects the exact lognormal step for scalar loadings)
    and the solution is the deterministic factor times the martingale.
    """
    g = bundle.grid
    n = Ahat.shape[0]
    upsilon, _pos, _diag = solve_aode(Ahat, Bhat, tol=tol)
    gamma = compute_gamma(upsilon, Bhat)
    lo, hi = g.idx_s, g.idx_T
    paths = bundle.paths
    pi = np.zeros((paths, g.n_nodes, n, n))
    pi[:, : lo + 1] = np.eye(n)
    if method == "log" and n == 1:
        gam = gamma.values[:, 0, 0]
        for k in range(lo, hi):
            step = np.exp(gam[k] * bundle.dw[:, k] - 0.5 * gam[k] ** 2 * g.h)
            pi[:, k + 1, 0, 0] = pi[:, k, 0, 0] * step
    elif method == "euler":
        for k in range(lo, hi):
            incr = np.einsum("ij,pjl->pil", gamma.values[k], pi[:, k])
            pi[:, k + 1] = pi[:, k] + bundle.dw[:, k][:, None, None] * incr
    else:
        raise ValueError(f"unknown martingale discretization {method!r}")
    phi = np.einsum("kij,pkjl->pkil", upsilon.values, pi)
    phi[:, hi + 1 :] = 0.0
    phi_ens = PathEnsemble(g, phi.reshape(paths, g.n_nodes, n * n), name="advanced-propagator-paths", seed=bundle.seed)
    pi_ens = PathEnsemble(g, pi.reshape(paths, g.n_nodes, n * n), name="exponential-martingale", seed=bundle.seed)
    return ExplicitAsdeResult(phi_ens, pi_ens, upsilon, gamma)
