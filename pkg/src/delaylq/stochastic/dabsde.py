"""The coupled forward/backward system behind the optimal-cost representation.

A forward equation with advanced conditional expectations is coupled to a
backward equation with delayed arguments through an initial condition that
reads the backward solution at the start time.  The solver alternates a
regression backward sweep and an Euler forward sweep inside one outer Picard
loop.  Solvability of this system is an open question, so non-convergence is
a reported outcome carried in the diagnostics, never a crash.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import COND_LIMIT, ConditioningError, ProblemSpec
from ..riccati import MatrixTrajectory, PicardDiagnostics
from .brownian import BrownianBundle
from .ensembles import PathEnsemble
from .regression import ConditionalEstimator, Projector

__all__ = ["solve_dabsde", "solve_hamiltonian", "DabsdeResult", "HamiltonianResult", "NodeMatrices"]


class NodeMatrices:
    """Per-node deterministic matrices shared by the coupled solvers.

    smi[k]  = Sigma(t) [2(R+Rbar)(t) Sigma(t) + I]^{-1}   (identity history below s)
    kr[k]   = [2 Sigma(t) (R+Rbar)(t) + I]^{-1}
    kdel[k] = Bbar(t) smi(t-delta) Bbar(t)^T + Cbar(t) script_n(t-delta)^{-1} Cbar(t)^T
    """

    def __init__(self, spec: ProblemSpec, sigma: MatrixTrajectory):
        g = spec.grid
        dw = spec.derived()
        n = spec.n
        eye = np.eye(n)
        hi = g.idx_T
        self.spec = spec
        self.sigma = sigma
        self.smi = np.zeros((hi + 1, n, n))
        self.minv = np.zeros((hi + 1, n, n))
        self.kr = np.zeros((hi + 1, n, n))
        for k in range(hi + 1):
            q = 2 * k
            sig = sigma.values[k] if k >= g.idx_s else eye
            m_mat = 2.0 * dw.rt[q] @ sig + eye
            cond = np.linalg.cond(m_mat)
            if cond > COND_LIMIT:
                raise ConditioningError("scriptM", g.times[k], cond)
            self.minv[k] = np.linalg.inv(m_mat)
            self.smi[k] = sig @ self.minv[k]
            kr_mat = 2.0 * sig @ dw.rt[q] + eye
            cond = np.linalg.cond(kr_mat)
            if cond > COND_LIMIT:
                raise ConditioningError("2*Sigma*(R+Rbar)+I", g.times[k], cond)
            self.kr[k] = np.linalg.inv(kr_mat)
        self.kdel = np.zeros((hi + 1, n, n))
        m = g.m
        for k in range(g.idx_s, hi + 1):
            q = 2 * k
            bb = spec.Bbar.values[q]
            self.kdel[k] = bb @ self.smi[k - m] @ bb.T + dw.cbnc[q]
        self.kdel_nonzero = np.array([np.any(self.kdel[k] != 0.0) for k in range(hi + 1)])


@dataclass
class DabsdeResult:
    xbar: PathEnsemble
    lam: PathEnsemble
    gam: PathEnsemble
    diag: PicardDiagnostics
    exp_adv: np.ndarray  # (paths, n_nodes, n): E^{F_k}[ xbar(k+m) ], zero past T
    exp_del: np.ndarray  # (paths, n_nodes, n): E^{F_{k-m}}[ xbar(k) ]
    mats: NodeMatrices = field(repr=False, default=None)
    bundle: object = field(repr=False, default=None)
    est: ConditionalEstimator = ConditionalEstimator()

    @property
    def converged(self) -> bool:
        return self.diag.converged

    def state_projector(self, k: int) -> Projector:
        """Projector on (forward state, Brownian level) at node k.

        The forward component carries multiplicative noise, so conditional
        expectations of anything it drives are affine in it; rebuilding on
        demand keeps memory flat.
        """
        cond = np.column_stack([self.xbar.values[:, k], self.bundle.w[:, k : k + 1]])
        return Projector(cond, self.est)

    def features(self) -> np.ndarray:
        return self.xbar.values


def solve_dabsde(
    spec: ProblemSpec,
    Sigma: MatrixTrajectory,
    bundle: BrownianBundle,
    est: ConditionalEstimator = ConditionalEstimator(),
    tol: float = 1e-9,
    max_sweeps: int = 80,
) -> DabsdeResult:
    """Best-effort Picard solve of the coupled forward/backward system.

    The backward pair (lam, gam) is swept by regression with its delayed
    reads frozen; the forward component is then stepped with its advanced
    conditional expectations frozen and the start value tied to lam at s.
    All conditional expectations regress on (frozen forward state, Brownian
    level).  ``diag.converged`` reports the outcome; divergence does not
    raise.
    """
    g = spec.grid
    n = spec.n
    lo, hi = g.idx_s, g.idx_T
    m = g.m
    h = g.h
    paths = bundle.paths
    dwght = spec.derived()
    mats = NodeMatrices(spec, Sigma)

    a2 = spec.A.values
    ab2 = spec.Abar.values
    b2 = spec.B.values
    bb2 = spec.Bbar.values
    eye = np.eye(n)

    sig_s = Sigma.values[lo]
    boundary = eye + 2.0 * sig_s @ spec.G
    cond = np.linalg.cond(boundary)
    if cond > COND_LIMIT:
        raise ConditioningError("I+2*Sigma(s)*G", g.s, cond)
    start_map = 2.0 * spec.G @ np.linalg.inv(boundary)

    xi = spec.terminal.sample(bundle.w_terminal())

    # backward-drift matrices (row-vector form: value @ M.T)
    ld1 = np.zeros((hi, n, n))
    ld2 = np.zeros((hi, n, n))
    ld4 = np.zeros((hi, n, n))
    fd1 = np.zeros((hi, n, n))
    fdif1 = np.zeros((hi, n, n))
    fdif2 = np.zeros((hi, n, n))
    fdif3 = np.zeros((hi, n, n))
    abar_adv = np.zeros((hi, n, n))
    for k in range(lo, hi):
        q = 2 * k
        sig = Sigma.values[k]
        qt = dwght.qt[q]
        rt = dwght.rt[q]
        ld1[k] = 2.0 * sig @ qt - a2[q]
        ld2[k] = b2[q] @ mats.kr[k]
        ld4[k] = bb2[q] @ mats.kr[k - m]
        fd1[k] = a2[q].T - 2.0 * qt @ sig
        fdif1[k] = (eye - 2.0 * rt @ mats.smi[k]) @ b2[q].T
        qa = q + 2 * m
        abar_adv[k] = ab2[qa]
        fdif2[k] = (eye - 2.0 * rt @ mats.smi[k]) @ bb2[qa].T
        fdif3[k] = 2.0 * rt @ mats.kr[k]

    xbar = np.zeros((paths, g.n_nodes, n))
    lam = np.zeros((paths, g.n_nodes, n))
    gam = np.zeros((paths, g.n_nodes, n))
    residuals = []
    converged = False
    diverged = False
    for _ in range(max_sweeps):
        # regression state per node: frozen forward component + Brownian level
        # (the forward noise is state-multiplicative, so expectations of
        # anything it drives are affine in the state, not in the level)
        sweep_projs = [None] * g.n_nodes
        for k in range(lo, hi + 1):
            sweep_projs[k] = Projector(
                np.column_stack([xbar[:, k], bundle.w[:, k : k + 1]]), est
            )
        exp_del = np.zeros((paths, g.n_nodes, n))
        for k in range(lo, hi + 1):
            if mats.kdel_nonzero[k]:
                kd = k - m
                exp_del[:, k] = (
                    sweep_projs[kd].fit(xbar[:, k])
                    if kd >= lo
                    else np.broadcast_to(xbar[:, k].mean(axis=0), (paths, n))
                )
        exp_adv = np.zeros((paths, g.n_nodes, n))
        for k in range(lo, hi + 1):
            ka = k + m
            if ka <= hi:
                exp_adv[:, k] = sweep_projs[k].fit(xbar[:, ka])

        # backward sweep for (lam, gam), delayed pair frozen
        nlam = lam.copy()
        ngam = gam.copy()
        nlam[:, hi] = -xi
        for k in range(hi - 1, lo - 1, -1):
            proj = sweep_projs[k]
            el = proj.fit(nlam[:, k + 1])
            gk = proj.fit((nlam[:, k + 1] - el) * bundle.dw[:, k][:, None]) / h
            kd = k - m
            lam_del = lam[:, kd] if kd >= lo else 0.0
            gam_del = gam[:, kd] if kd >= lo else 0.0
            q = 2 * k
            drift = el @ ld1[k].T - gk @ ld2[k].T
            if kd >= lo:
                drift = drift - lam_del @ ab2[q].T - gam_del @ ld4[k].T
            if mats.kdel_nonzero[k]:
                drift = drift + (exp_del[:, k] - xbar[:, k]) @ mats.kdel[k].T
            nlam[:, k] = el - h * drift
            ngam[:, k] = gk
        ngam[:, hi] = ngam[:, hi - 1]

        # forward sweep, advanced expectations frozen, start tied to lam(s)
        nxbar = np.zeros_like(xbar)
        nxbar[:, lo] = nlam[:, lo] @ start_map.T
        for k in range(lo, hi):
            q = 2 * k
            x = nxbar[:, k]
            drift = x @ fd1[k].T + 2.0 * (nlam[:, k] @ dwght.qt[q].T) + exp_adv[:, k] @ abar_adv[k]
            diff = x @ fdif1[k].T + exp_adv[:, k] @ fdif2[k].T + ngam[:, k] @ fdif3[k].T
            nxbar[:, k + 1] = x + h * drift + diff * bundle.dw[:, k][:, None]

        if not np.all(np.isfinite(nxbar)) or not np.all(np.isfinite(nlam)):
            diverged = True
            residuals.append(float("inf"))
            break
        res = float(
            np.max(np.abs(nxbar[:, lo : hi + 1] - xbar[:, lo : hi + 1]))
            + np.max(np.abs(nlam[:, lo : hi + 1] - lam[:, lo : hi + 1]))
            + np.max(np.abs(ngam[:, lo : hi + 1] - gam[:, lo : hi + 1]))
        )
        residuals.append(res)
        xbar, lam, gam = nxbar, nlam, ngam
        scale = 1.0 + float(np.max(np.abs(lam[:, lo : hi + 1]))) + float(np.max(np.abs(xbar[:, lo : hi + 1])))
        if res <= tol * scale:
            converged = True
            break
        if len(residuals) >= 6 and all(residuals[-j] > residuals[-j - 1] for j in range(1, 6)):
            diverged = True
            break

    rate = float("nan")
    ratios = [
        residuals[i] / residuals[i - 1]
        for i in range(1, len(residuals))
        if np.isfinite(residuals[i]) and residuals[i - 1] > 0 and residuals[i] > 0
    ]
    if ratios:
        rate = float(np.exp(np.mean(np.log(ratios))))
    diag = PicardDiagnostics(len(residuals), residuals, rate, converged, notes={"diverged": diverged})

    # final expectations of the converged forward component, for downstream use
    exp_adv = np.zeros((paths, g.n_nodes, n))
    exp_del = np.zeros((paths, g.n_nodes, n))
    if converged:
        final_projs = [None] * g.n_nodes
        for k in range(lo, hi + 1):
            final_projs[k] = Projector(
                np.column_stack([xbar[:, k], bundle.w[:, k : k + 1]]), est
            )
        for k in range(lo, hi + 1):
            ka = k + m
            if ka <= hi:
                exp_adv[:, k] = final_projs[k].fit(xbar[:, ka])
            kd = k - m
            exp_del[:, k] = (
                final_projs[kd].fit(xbar[:, k])
                if kd >= lo
                else np.broadcast_to(xbar[:, k].mean(axis=0), (paths, n))
            )
    return DabsdeResult(
        xbar=PathEnsemble(g, xbar, name="adjoint-forward", seed=bundle.seed),
        lam=PathEnsemble(g, lam, name="shift", seed=bundle.seed),
        gam=PathEnsemble(g, gam, name="shift-integrand", seed=bundle.seed),
        diag=diag,
        exp_adv=exp_adv,
        exp_del=exp_del,
        mats=mats,
        bundle=bundle,
        est=est,
    )


@dataclass
class HamiltonianResult:
    xstar: PathEnsemble
    ystar: PathEnsemble
    zstar: PathEnsemble
    defect_rate: np.ndarray  # (forward nodes, n): ensemble-mean defect / h
    defect_se: np.ndarray

    def max_defect(self) -> float:
        return float(np.max(np.linalg.norm(self.defect_rate, axis=1)))


def solve_hamiltonian(
    spec: ProblemSpec,
    Sigma: MatrixTrajectory,
    dab: DabsdeResult,
    bundle: BrownianBundle,
) -> HamiltonianResult:
    """Assemble the adjoint-system solution from the coupled solve.

    The construction is the change of variables that proves solvability: the
    forward component is reused as the adjoint state, the backward state is
    its affine image through the state transform, and the integrand combines
    the transform with the shift integrand.  A residual pass then reports the
    node-wise defect of the discretized forward equation.
    """
    g = spec.grid
    n = spec.n
    lo, hi = g.idx_s, g.idx_T
    m = g.m
    h = g.h
    paths = bundle.paths
    dwght = spec.derived()
    mats = dab.mats if dab.mats is not None else NodeMatrices(spec, Sigma)

    xv = dab.xbar.values
    lamv = dab.lam.values
    gamv = dab.gam.values
    ystar = np.zeros((paths, g.n_nodes, n))
    zstar = np.zeros((paths, g.n_nodes, n))
    ystar[:, :lo] = spec.phi.at_nodes()[None, :lo, :, 0]
    zstar[:, :lo] = spec.psi.at_nodes()[None, :lo, :, 0]
    eye = np.eye(n)
    start_inv = np.linalg.inv(eye + 2.0 * Sigma.values[lo] @ spec.G)
    ystar[:, lo] = -lamv[:, lo] @ start_inv.T
    for k in range(lo + 1, hi + 1):
        ystar[:, k] = xv[:, k] @ Sigma.values[k].T - lamv[:, k]
    for k in range(lo, hi + 1):
        q = 2 * k
        bb_adv = spec.Bbar.values[q + 2 * m]
        term = xv[:, k] @ spec.B.values[q] + dab.exp_adv[:, k] @ bb_adv
        zstar[:, k] = term @ mats.smi[k].T - gamv[:, k] @ mats.kr[k].T

    # defect of the discretized forward adjoint equation
    defect = np.zeros((hi - lo, n))
    defect_se = np.zeros((hi - lo, n))
    for k in range(lo, hi):
        q = 2 * k
        drift = (
            xv[:, k] @ spec.A.values[q]
            - 2.0 * (ystar[:, k] @ dwght.qt[q].T)
            + dab.exp_adv[:, k] @ spec.Abar.values[q + 2 * m]
        )
        diff = (
            xv[:, k] @ spec.B.values[q]
            - 2.0 * (zstar[:, k] @ dwght.rt[q].T)
            + dab.exp_adv[:, k] @ spec.Bbar.values[q + 2 * m]
        )
        d = xv[:, k + 1] - xv[:, k] - h * drift - diff * bundle.dw[:, k][:, None]
        defect[k - lo] = d.mean(axis=0) / h
        defect_se[k - lo] = d.std(axis=0, ddof=1) / np.sqrt(paths) / h
    return HamiltonianResult(
        xstar=PathEnsemble(g, xv.copy(), name="adjoint-state", seed=bundle.seed),
        ystar=PathEnsemble(g, ystar, name="optimal-state", seed=bundle.seed),
        zstar=PathEnsemble(g, zstar, name="optimal-integrand", seed=bundle.seed),
        defect_rate=defect,
        defect_se=defect_se,
    )
