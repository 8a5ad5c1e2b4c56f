"""Regression Monte Carlo solver for the controlled linear delayed BSDE.

Backward sweep: at each node the pair conditional expectation / martingale
increment is projected on the Brownian level, the generator is evaluated
explicitly, and the delayed arguments are frozen from the previous outer
iterate (history segments below the start read the prescribed functions).

The regression state is the Brownian level plus optional exogenous feature
processes.  Both are fixed data, so every sweep is one fixed linear map of
(terminal value, control, histories); the verification experiments lean on
that exact linearity.  Plain level conditioning is exact for the additive-
noise backward pair itself; controls derived from a state with
multiplicative noise need that state passed as a feature.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..model import ProblemSpec
from ..riccati import PicardDiagnostics
from .brownian import BrownianBundle
from .ensembles import PathEnsemble
from .regression import ConditionalEstimator, Projector

__all__ = ["solve_delayed_bsde", "node_projectors", "verify_estimate_2_3"]


def node_projectors(
    bundle: BrownianBundle,
    est: ConditionalEstimator,
    features: Optional[np.ndarray] = None,
) -> list:
    """One conditioning projector per node (None outside [s, T]).

    The basis state is the Brownian level, optionally augmented with
    exogenous per-path feature processes ((paths, n_nodes, q) array).
    Features matter whenever targets are driven by a process with
    state-multiplicative noise: such targets are affine in that state, not
    polynomial in the Brownian level.
    """
    g = bundle.grid
    out = [None] * g.n_nodes
    for k in range(g.idx_s, g.idx_T + 1):
        cond = bundle.w[:, k : k + 1]
        if features is not None:
            cond = np.column_stack([features[:, k], cond])
        out[k] = Projector(cond, est)
    return out


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


def solve_delayed_bsde(
    spec: ProblemSpec,
    u: Optional[np.ndarray],
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    tol: float = 1e-9,
    max_sweeps: int = 40,
    projectors: Optional[list] = None,
    terminal_override: Optional[np.ndarray] = None,
    zero_inputs: bool = False,
    features: Optional[np.ndarray] = None,
) -> tuple:
    """Solve the controlled delayed BSDE under the given control samples.

    ``u`` is (paths, n_nodes, d) or None for the zero control.  Sweeps repeat
    with the delayed pair frozen until the ensembles settle.  Returns
    (Y, Z, diagnostics); the terminal node of Y matches the terminal sample
    exactly by assignment.

    ``terminal_override`` replaces the spec terminal with given per-path
    samples; ``zero_inputs`` zeroes terminal and histories (the homogeneous
    solve used for control-direction responses).  ``features`` augments the
    regression bases with exogenous per-path processes; because they are
    data, not unknowns, the sweep stays an exactly linear map of
    (terminal, control, histories) either way.
    """
    g = spec.grid
    n, d = spec.n, spec.d
    lo, hi = g.idx_s, g.idx_T
    paths = bundle.paths
    h = g.h
    if projectors is None:
        projectors = node_projectors(bundle, est, features)
    if zero_inputs:
        xi = np.zeros((paths, n))
        phi = np.zeros((g.n_nodes, n))
        psi = np.zeros((g.n_nodes, n))
        eta = np.zeros((g.n_nodes, d))
    else:
        xi = spec.terminal.sample(bundle.w_terminal()) if terminal_override is None else terminal_override
        phi = spec.phi.at_nodes()[:, :, 0]
        psi = spec.psi.at_nodes()[:, :, 0]
        eta = spec.eta.at_nodes()[:, :, 0]
    if u is None:
        u = np.zeros((paths, g.n_nodes, d))

    a2 = spec.A.values
    ab2 = spec.Abar.values
    b2 = spec.B.values
    bb2 = spec.Bbar.values
    c2 = spec.C.values
    cb2 = spec.Cbar.values

    has_delay = (
        np.max(np.abs(ab2[2 * lo : 2 * hi + 1])) > 0.0
        or np.max(np.abs(bb2[2 * lo : 2 * hi + 1])) > 0.0
    )
    m = g.m
    y = np.zeros((paths, g.n_nodes, n))
    z = np.zeros((paths, g.n_nodes, n))
    y[:, :lo] = phi[None, :lo]
    z[:, :lo] = psi[None, :lo]
    residuals = []
    converged = False
    max_outer = max_sweeps if has_delay else 2
    for _ in range(max_outer):
        ny = y.copy()
        nz = z.copy()
        ny[:, hi] = xi
        for k in range(hi - 1, lo - 1, -1):
            q = 2 * k
            proj = projectors[k]
            ey = proj.fit(ny[:, k + 1])
            # centered martingale increment: exact zero for conditionally
            # deterministic targets, and much lower regression noise otherwise
            zk = proj.fit((ny[:, k + 1] - ey) * bundle.dw[:, k][:, None]) / h
            kd = k - m
            if kd < lo:
                ydel = np.broadcast_to(phi[kd], (paths, n))
                zdel = np.broadcast_to(psi[kd], (paths, n))
                udel = np.broadcast_to(eta[kd], (paths, d))
            else:
                ydel = y[:, kd]
                zdel = z[:, kd]
                udel = u[:, kd]
            gen = (
                ey @ a2[q].T
                + ydel @ ab2[q].T
                + zk @ b2[q].T
                + zdel @ bb2[q].T
                + u[:, k] @ c2[q].T
                + udel @ cb2[q].T
            )
            ny[:, k] = ey + h * gen
            nz[:, k] = zk
        nz[:, hi] = nz[:, hi - 1]
        res = float(
            np.max(np.abs(ny[:, lo : hi + 1] - y[:, lo : hi + 1]))
            + np.max(np.abs(nz[:, lo : hi + 1] - z[:, lo : hi + 1]))
        )
        residuals.append(res)
        y, z = ny, nz
        scale = float(np.max(np.abs(y[:, lo : hi + 1])))
        if res <= tol * (1.0 + scale):
            converged = True
            break
    y_ens = PathEnsemble(g, y, name="backward-state", seed=bundle.seed)
    z_ens = PathEnsemble(g, z, name="martingale-integrand", seed=bundle.seed)
    y_ens.check_finite()
    z_ens.check_finite()
    return y_ens, z_ens, _diagnostics(residuals, converged)


def _trapz_weights(grid) -> np.ndarray:
    w = np.full(grid.idx_T - grid.idx_s + 1, grid.h)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def energy_norms(spec: ProblemSpec, y: PathEnsemble, z: PathEnsemble) -> np.ndarray:
    """Per-path sup |Y|^2 + integral |Z|^2 over the control interval."""
    g = spec.grid
    lo, hi = g.idx_s, g.idx_T
    sup_y2 = np.max(np.sum(y.values[:, lo : hi + 1] ** 2, axis=2), axis=1)
    wts = _trapz_weights(g)
    int_z2 = np.sum(np.sum(z.values[:, lo : hi + 1] ** 2, axis=2) * wts[None, :], axis=1)
    return sup_y2 + int_z2


def input_norms(spec: ProblemSpec, u: Optional[np.ndarray], bundle: BrownianBundle) -> np.ndarray:
    """Per-path |xi|^2 + integral |u|^2 + history energy."""
    g = spec.grid
    lo, hi = g.idx_s, g.idx_T
    xi = spec.terminal.sample(bundle.w_terminal())
    out = np.sum(xi**2, axis=1)
    wts = _trapz_weights(g)
    if u is not None:
        out = out + np.sum(np.sum(u[:, lo : hi + 1] ** 2, axis=2) * wts[None, :], axis=1)
    hist = 0.0
    for k in range(0, lo + 1):
        wk = 0.5 * g.h if k in (0, lo) else g.h
        hist += wk * (
            float(np.sum(spec.history_phi(k) ** 2))
            + float(np.sum(spec.history_psi(k) ** 2))
            + float(np.sum(spec.history_eta(k) ** 2))
        )
    return out + hist


def verify_estimate_2_3(
    specs,
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    controls=None,
) -> dict:
    """Ratio of the solution energy to the input energy per spec.

    Zero-input rows report ratio None (0/0 sentinel) and are excluded from
    the max.  The bound being checked is stability of this ratio, not its
    value.
    """
    rows = []
    for idx, spec in enumerate(specs):
        u = None if controls is None else controls[idx]
        y, z, _ = solve_delayed_bsde(spec, u, bundle, est)
        num = float(np.mean(energy_norms(spec, y, z)))
        den = float(np.mean(input_norms(spec, u, bundle)))
        ratio = None if den <= 1e-300 else num / den
        rows.append({"spec": idx, "numerator": num, "denominator": den, "ratio": ratio})
    valid = [r["ratio"] for r in rows if r["ratio"] is not None]
    return {"rows": rows, "max_ratio": max(valid) if valid else None}
