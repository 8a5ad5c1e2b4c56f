"""Control-law assembly, cost evaluation, and the identities tying them together.

Two equivalent representations of the optimal control are built: the feedback
form driven by the gain trajectory and the auxiliary shift state, and the
open-loop form read off the adjoint state.  Costs are evaluated two ways as
well: Monte Carlo quadrature of the quadratic functional along simulated
paths, and the closed-form expression in terms of the coupled solve.  The
verification experiments check that all four agree within their bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import COND_LIMIT, ConditioningError, ProblemSpec
from .riccati import MatrixTrajectory, PicardDiagnostics
from .stochastic.brownian import BrownianBundle
from .stochastic.bsde import node_projectors, solve_delayed_bsde
from .stochastic.dabsde import DabsdeResult, HamiltonianResult, NodeMatrices
from .stochastic.ensembles import PathEnsemble
from .stochastic.regression import ConditionalEstimator
from .stochastic.asdde import simulate_asdde

__all__ = [
    "ControlLaw",
    "CostReport",
    "ControlledPaths",
    "build_feedback_law",
    "build_openloop_from_adjoint",
    "evaluate_cost",
    "solve_controlled",
    "cost_bilinear",
    "control_with_history",
    "optimal_cost_formula",
    "solve_S",
]


@dataclass
class ControlLaw:
    """Per-path control samples plus the ingredients they were built from."""

    kind: str  # "feedback" | "open-loop"
    samples: np.ndarray  # (paths, n_nodes, d); history region filled below s
    refs: dict = field(default_factory=dict, repr=False)

    def at(self, k: int) -> np.ndarray:
        return self.samples[:, k]


@dataclass
class CostReport:
    mc_cost: Optional[float] = None
    mc_se: Optional[float] = None
    formula_cost: Optional[float] = None
    decomposition: dict = field(default_factory=dict)

    def gap(self) -> Optional[float]:
        if self.mc_cost is None or self.formula_cost is None:
            return None
        return self.mc_cost - self.formula_cost

    def summary(self) -> str:
        parts = []
        if self.mc_cost is not None:
            parts.append(f"mc_cost={self.mc_cost:.10g} (se={self.mc_se:.3g})")
        if self.formula_cost is not None:
            parts.append(f"formula_cost={self.formula_cost:.10g}")
        for key, val in self.decomposition.items():
            parts.append(f"{key}={val:.10g}")
        return "\n".join(parts)


def control_with_history(spec: ProblemSpec, paths: int, interior: Optional[np.ndarray] = None) -> np.ndarray:
    """Full-grid control array with the prescribed history below the start.

    ``interior`` is (paths, n_nodes, d) or None for zero control on [s, T].
    """
    g = spec.grid
    out = np.zeros((paths, g.n_nodes, spec.d)) if interior is None else interior.copy()
    out[:, : g.idx_s] = spec.eta.at_nodes()[None, : g.idx_s, :, 0]
    out[:, g.idx_T + 1 :] = 0.0
    return out


def _advanced_expectations(values: np.ndarray, grid, projector_at) -> np.ndarray:
    """E^{F_k}[ values(k+m) ] per node, zero past the terminal node.

    ``projector_at`` maps a node index to a fitted projector.
    """
    lo, hi, m = grid.idx_s, grid.idx_T, grid.m
    out = np.zeros_like(values)
    for k in range(lo, hi + 1):
        ka = k + m
        if ka <= hi:
            out[:, k] = projector_at(k).fit(values[:, ka])
    return out


def build_feedback_law(
    spec: ProblemSpec,
    Sigma: MatrixTrajectory,
    L: MatrixTrajectory,
    S: PathEnsemble,
    Lam: PathEnsemble,
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    dab: Optional[DabsdeResult] = None,
    zero_gain: bool = False,
) -> ControlLaw:
    """Feedback representation of the optimal control.

    The current-state term reads the optimal backward state through the
    closure identity Y = (I + Sigma L)^{-1} (Sigma S - Lam) obtained by
    combining the adjoint relations (the sign of the shift follows from the
    relations themselves; see the start-value check in the tests).  The
    advanced term substitutes the same identity at t + delta inside the
    conditional expectation, which is what makes the feedback computable.  ``zero_gain``
    replaces the gain trajectory by zero (the deliberately broken law used as
    a negative control).
    """
    g = spec.grid
    n, d = spec.n, spec.d
    lo, hi, m = g.idx_s, g.idx_T, g.m
    dw = spec.derived()
    dw.require_script_n(lo, hi)
    if dab is not None:
        projector_at = dab.state_projector
    else:
        plain = node_projectors(bundle, est)
        projector_at = lambda k: plain[k]
    eye = np.eye(n)
    lvals = np.zeros_like(L.values) if zero_gain else L.values

    es = _advanced_expectations(S.values, g, projector_at)
    elam = _advanced_expectations(Lam.values, g, projector_at)

    u = np.zeros((bundle.paths, g.n_nodes, d))
    c2, cb2 = spec.C.values, spec.Cbar.values
    for k in range(lo, hi + 1):
        q = 2 * k
        mat = eye + Sigma.values[k] @ lvals[k]
        cond = np.linalg.cond(mat)
        if cond > COND_LIMIT:
            raise ConditioningError("I+Sigma*L", g.times[k], cond)
        ystar = (S.values[:, k] @ Sigma.values[k].T - Lam.values[:, k]) @ np.linalg.inv(mat).T
        inner = -(ystar @ (c2[q].T @ lvals[k]).T) + S.values[:, k] @ c2[q]
        ka = k + m
        if ka <= hi:
            qa = q + 2 * m
            l_adv = lvals[ka] if ka < hi else lvals[hi]
            mat_adv = eye + Sigma.values[ka] @ l_adv
            y_adv = (es[:, k] @ Sigma.values[ka].T - elam[:, k]) @ np.linalg.inv(mat_adv).T
            inner = inner - y_adv @ (cb2[qa].T @ l_adv).T + es[:, k] @ cb2[qa]
        u[:, k] = inner @ dw.script_n_inv[q].T
    samples = control_with_history(spec, bundle.paths, u)
    return ControlLaw("feedback", samples, refs={"Sigma": Sigma, "L": L, "S": S, "Lam": Lam})


def build_openloop_from_adjoint(
    spec: ProblemSpec,
    Xstar: PathEnsemble,
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    projectors: Optional[list] = None,
    exp_adv: Optional[np.ndarray] = None,
) -> ControlLaw:
    """Adjoint representation: the weighted image of the adjoint state and
    the conditional expectation of its advanced barred image."""
    g = spec.grid
    lo, hi, m = g.idx_s, g.idx_T, g.m
    dw = spec.derived()
    dw.require_script_n(lo, hi)
    if exp_adv is None:
        if projectors is None:
            projectors = node_projectors(bundle, est)
        exp_adv = _advanced_expectations(Xstar.values, g, lambda k: projectors[k])
    u = np.zeros((bundle.paths, g.n_nodes, spec.d))
    for k in range(lo, hi + 1):
        q = 2 * k
        inner = Xstar.values[:, k] @ spec.C.values[q]
        if k + m <= hi:
            inner = inner + exp_adv[:, k] @ spec.Cbar.values[q + 2 * m]
        u[:, k] = inner @ dw.script_n_inv[q].T
    samples = control_with_history(spec, bundle.paths, u)
    return ControlLaw("open-loop", samples, refs={"Xstar": Xstar})


@dataclass
class ControlledPaths:
    """A solved state pair together with the control that produced it.

    The ensembles carry their own history segments below the start node
    (prescribed functions for an inhomogeneous solve, zeros for the
    homogeneous direction solves), so the cost quadrature never needs to
    know which case it is looking at.
    """

    y: PathEnsemble
    z: PathEnsemble
    u: np.ndarray
    diagnostics: Optional[PicardDiagnostics] = None


def solve_controlled(
    spec: ProblemSpec,
    u: Optional[np.ndarray],
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    projectors: Optional[list] = None,
    zero_inputs: bool = False,
    features: Optional[np.ndarray] = None,
    **kw,
) -> ControlledPaths:
    u_full = (
        np.zeros((bundle.paths, spec.grid.n_nodes, spec.d))
        if zero_inputs and u is None
        else (u if u is not None and zero_inputs else control_with_history(spec, bundle.paths, u))
    )
    y, z, diag = solve_delayed_bsde(
        spec, u_full, bundle, est, projectors=projectors, zero_inputs=zero_inputs,
        features=features, **kw
    )
    return ControlledPaths(y, z, u_full, diag)


def cost_bilinear(spec: ProblemSpec, a: ControlledPaths, b: ControlledPaths) -> np.ndarray:
    """Per-path value of the symmetric bilinear form underlying the cost.

    ``cost_bilinear(spec, a, a)`` is the per-path quadratic cost; the cross
    term gives exact epsilon-expansions of perturbed costs because the whole
    solver is linear in its inputs.  Trapezoidal quadrature in time; delayed
    integrand values below the start node read the arrays' history region.
    """
    g = spec.grid
    lo, hi, m = g.idx_s, g.idx_T, g.m
    ya, za, ua = a.y.values, a.z.values, a.u
    yb, zb, ub = b.y.values, b.z.values, b.u

    def quad(mat, xa, xb):
        return np.einsum("ij,pi,pj->p", mat, xa, xb)

    out = quad(spec.Gbar, ya[:, 0], yb[:, 0]) + quad(spec.G, ya[:, lo], yb[:, lo])
    for k in range(lo, hi + 1):
        w = g.h if lo < k < hi else 0.5 * g.h
        q = 2 * k
        kd = k - m
        term = (
            quad(spec.Q.values[q], ya[:, k], yb[:, k])
            + quad(spec.Qbar.values[q], ya[:, kd], yb[:, kd])
            + quad(spec.R.values[q], za[:, k], zb[:, k])
            + quad(spec.Rbar.values[q], za[:, kd], zb[:, kd])
            + quad(spec.N.values[q], ua[:, k], ub[:, k])
            + quad(spec.Nbar.values[q], ua[:, kd], ub[:, kd])
        )
        out = out + w * term
    return out


def evaluate_cost(
    spec: ProblemSpec,
    control,
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    projectors: Optional[list] = None,
    solved: Optional[ControlledPaths] = None,
    features: Optional[np.ndarray] = None,
) -> CostReport:
    """Monte Carlo cost of a control (a ControlLaw or a samples array).

    Solves the controlled backward state under the control, then averages
    the per-path quadratic functional.  Controls derived from the adjoint
    forward state should pass that state as regression ``features``.
    """
    u = control.samples if isinstance(control, ControlLaw) else control
    cp = solved or solve_controlled(spec, u, bundle, est, projectors=projectors, features=features)
    per_path = cost_bilinear(spec, cp, cp)
    mc = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(len(per_path))) if len(per_path) > 1 else 0.0
    return CostReport(mc_cost=mc, mc_se=se)


def optimal_cost_formula(
    spec: ProblemSpec,
    Sigma: MatrixTrajectory,
    Lam: PathEnsemble,
    Gam: PathEnsemble,
    mats: Optional[NodeMatrices] = None,
) -> CostReport:
    """Closed-form optimal cost from the coupled solve.

    Four pieces: the pre-start quadratic in the state history, the start-time
    quadratic in the shift, the history integral against the shifted barred
    weights, and the running integral of the shift and shift-integrand
    quadratics.  Expectations are ensemble means.
    """
    g = spec.grid
    lo, hi = g.idx_s, g.idx_T
    dw = spec.derived()
    if mats is None:
        mats = NodeMatrices(spec, Sigma)
    n = spec.n
    eye = np.eye(n)

    phi0 = spec.history_phi(0)
    t1 = float(phi0 @ spec.Gbar @ phi0)

    boundary = eye + 2.0 * Sigma.values[lo] @ spec.G
    cond = np.linalg.cond(boundary)
    if cond > COND_LIMIT:
        raise ConditioningError("I+2*Sigma(s)*G", g.s, cond)
    m2mat = np.linalg.inv(boundary) @ spec.G
    lam_s = Lam.values[:, lo]
    t2 = float(np.einsum("ij,pi,pj->p", m2mat, lam_s, lam_s).mean())

    t3 = 0.0
    for k in range(0, lo + 1):
        w = g.h if 0 < k < lo else 0.5 * g.h
        qa = 2 * k + 2 * g.m
        phi = spec.history_phi(k)
        psi = spec.history_psi(k)
        eta = spec.history_eta(k)
        t3 += w * (
            float(phi @ spec.Qbar.values[qa] @ phi)
            + float(psi @ spec.Rbar.values[qa] @ psi)
            + float(eta @ spec.Nbar.values[qa] @ eta)
        )

    t4 = 0.0
    for k in range(lo, hi + 1):
        w = g.h if lo < k < hi else 0.5 * g.h
        q = 2 * k
        mgam = dw.rt[q] @ mats.kr[k]
        gam_k = Gam.values[:, k]
        lam_k = Lam.values[:, k]
        t4 += w * float(
            (
                np.einsum("ij,pi,pj->p", mgam, gam_k, gam_k)
                + np.einsum("ij,pi,pj->p", dw.qt[q], lam_k, lam_k)
            ).mean()
        )
    total = t1 + t2 + t3 + t4
    return CostReport(
        formula_cost=total,
        decomposition={
            "pre_start_state": t1,
            "start_shift": t2,
            "history_integral": t3,
            "running_integral": t4,
        },
    )


def solve_S(
    spec: ProblemSpec,
    Sigma: MatrixTrajectory,
    L: MatrixTrajectory,
    dab: DabsdeResult,
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    tol: float = 1e-9,
    max_sweeps: int = 80,
    ham: Optional[HamiltonianResult] = None,
) -> tuple:
    """Forward solve of the auxiliary shift-state equation.

    Starts at zero, zero prescribed off [s, T]; the one-delay reads come from
    the frozen iterate and the one-advance reads are conditional expectations
    of the frozen iterate, all resolved by the generic Picard engine.  When
    the adjoint solution is supplied, the closure identity
    ``adjoint = -gain * state + shift`` is checked and reported.
    Returns (S ensemble, diagnostics, relation report or None).
    """
    g = spec.grid
    n = spec.n
    lo, hi, m = g.idx_s, g.idx_T, g.m
    dw = spec.derived()
    mats = dab.mats if dab.mats is not None else NodeMatrices(spec, Sigma)
    eye = np.eye(n)

    a2, ab2 = spec.A.values, spec.Abar.values
    b2, bb2 = spec.B.values, spec.Bbar.values
    c2, cb2 = spec.C.values, spec.Cbar.values
    ninv = dw.script_n_inv

    lam = dab.lam.values
    gam = dab.gam.values
    xbar = dab.xbar.values
    elam = _advanced_expectations(lam, g, dab.state_projector)

    def lval(k):
        if k < lo or k > hi:
            return np.zeros((n, n))
        return L.values[k]

    def sigval(k):
        return eye if k < lo else Sigma.values[min(k, hi)]

    # deterministic node stacks for the drift/diffusion assembly
    nk = hi - lo
    M1 = np.zeros((nk, n, n))
    Madv = np.zeros((nk, n, n))
    MG = np.zeros((nk, n, n))
    MD1 = np.zeros((nk, n, n))
    MC2 = np.zeros((nk, n, n))
    MGd = np.zeros((nk, n, n))
    MDc = np.zeros((nk, n, n))
    MCc = np.zeros((nk, n, n))
    Wadv = np.zeros((nk, n, n))
    Vdel = np.zeros((nk, n, n))
    KdelL = np.zeros((nk, n, n))
    D1 = np.zeros((nk, n, n))
    MN = np.zeros((nk, n, n))
    W2 = np.zeros((nk, n, n))
    W3 = np.zeros((nk, n, n))
    SigAdv = np.zeros((nk, n, n))
    for k in range(lo, hi):
        j = k - lo
        q = 2 * k
        qa = q + 2 * m
        qd = q - 2 * m
        Lk = lval(k)
        La = lval(k + m)
        Ld = lval(k - m)
        Sk = Sigma.values[k]
        Sa = sigval(k + m)
        Sd = sigval(k - m)
        SigAdv[j] = Sa
        M1[j] = a2[q].T - Lk @ (b2[q] @ mats.smi[k] @ b2[q].T) - Lk @ dw.cnc[q]
        Madv[j] = ab2[qa].T - Lk @ b2[q] @ mats.smi[k] @ bb2[qa].T - Lk @ c2[q] @ ninv[q] @ cb2[qa].T
        MG[j] = Lk @ b2[q] @ mats.kr[k]
        MD1[j] = Lk @ bb2[q] @ mats.smi[k - m] @ b2[qd].T
        MC2[j] = Lk @ bb2[q] @ mats.smi[k - m] @ bb2[q].T
        MGd[j] = Lk @ bb2[q] @ mats.kr[k - m]
        MDc[j] = Lk @ cb2[q] @ ninv[qd] @ c2[qd].T
        MCc[j] = Lk @ cb2[q] @ ninv[qd] @ cb2[q].T
        Wadv[j] = -Madv[j] @ La @ np.linalg.inv(eye + Sa @ La)
        inner = bb2[q] @ mats.smi[k - m] @ (b2[qd].T @ Ld) - ab2[q] + cb2[q] @ (ninv[qd] @ c2[qd].T @ Ld)
        Vdel[j] = Lk @ inner @ np.linalg.inv(eye + Sd @ Ld)
        KdelL[j] = Lk @ mats.kdel[k]
        ilm = (eye + Lk @ Sk) @ mats.minv[k]
        D1[j] = ilm
        MN[j] = (Lk - 2.0 * dw.rt[q]) @ mats.kr[k]
        W2[j] = ilm @ (bb2[qa].T @ La) @ np.linalg.inv(eye + Sa @ La)
        W3[j] = ilm @ (b2[q].T @ Lk) @ np.linalg.inv(eye + Sk @ Lk)

    def drift(k, s_cur, s_del, es_adv):
        j = k - lo
        ey_adv = es_adv @ SigAdv[j].T - elam[:, k]
        kd = k - m
        lam_del = lam[:, kd] if kd >= lo else np.zeros_like(s_cur)
        gam_del = gam[:, kd] if kd >= lo else np.zeros_like(s_cur)
        yd = s_del @ sigval(kd).T - lam_del
        out = (
            s_cur @ M1[j].T
            + es_adv @ Madv[j].T
            + gam[:, k] @ MG[j].T
            - s_del @ MD1[j].T
            - s_cur @ MC2[j].T
            + gam_del @ MGd[j].T
            - s_del @ MDc[j].T
            - s_cur @ MCc[j].T
            + ey_adv @ Wadv[j].T
            + yd @ Vdel[j].T
            - (dab.exp_del[:, k] - xbar[:, k]) @ KdelL[j].T
        )
        return out

    def diffusion(k, s_cur, s_del, es_adv):
        j = k - lo
        ey_adv = es_adv @ SigAdv[j].T - elam[:, k]
        out = (
            (s_cur @ b2[2 * k] + es_adv @ bb2[2 * (k + m)]) @ D1[j].T
            - gam[:, k] @ MN[j].T
            - ey_adv @ W2[j].T
            - (s_cur @ Sigma.values[k].T - lam[:, k]) @ W3[j].T
        )
        return out

    s_ens, diag = simulate_asdde(
        bundle, drift, diffusion, np.zeros(n), est=est, tol=tol, max_sweeps=max_sweeps, name="shift-state"
    )
    relation = None
    if ham is not None:
        resid_mean = np.zeros(hi - lo + 1)
        resid_se = np.zeros(hi - lo + 1)
        for k in range(lo, hi + 1):
            r = ham.xstar.values[:, k] + ham.ystar.values[:, k] @ lval(k).T - s_ens.values[:, k]
            mean_k = r.mean(axis=0)
            resid_mean[k - lo] = float(np.linalg.norm(mean_k))
            resid_se[k - lo] = float(np.linalg.norm(r.std(axis=0, ddof=1) / np.sqrt(r.shape[0])))
        relation = {"residual_mean": resid_mean, "residual_se": resid_se}
    return s_ens, diag, relation
