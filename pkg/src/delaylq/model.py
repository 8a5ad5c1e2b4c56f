"""Problem definition: time grid, coefficient functions, standing assumptions.

The control system is a linear backward SDE whose generator reads the pair
(Y, Z) and the control both at the current time and one delay ago, with a
quadratic cost.  Everything here is deterministic data: matrix-valued
coefficient functions sampled on a uniform grid, the weight matrices of the
cost, the terminal condition and the prescribed history segments.

Coefficients are stored as samples on a *half-step* grid (step h/2) covering
[s - delta, T + delta].  The half-step resolution exists so the 4-stage
Runge-Kutta sweeps in :mod:`delaylq.riccati` can read coefficients at stage
midpoints exactly instead of interpolating.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ModelError",
    "GridAlignmentError",
    "ConditioningError",
    "TimeHorizon",
    "Grid",
    "build_grid",
    "GridFn",
    "TerminalCondition",
    "ProblemSpec",
    "DerivedWeights",
    "AssumptionReport",
    "validate_assumptions",
    "check_compatibility",
    "COND_LIMIT",
    "PSD_TOL",
]

# Condition-number guard for every matrix inverse taken from problem data.
COND_LIMIT = 1e12
# Eigenvalue slack accepted as "positive semidefinite" (absorbs round-off).
PSD_TOL = -1e-10


class ModelError(ValueError):
    """Malformed problem data."""


class GridAlignmentError(ModelError):
    """Horizon length is not commensurate with the requested step."""


class ConditioningError(RuntimeError):
    """A required inverse is numerically singular (condition number > 1e12)."""

    def __init__(self, what: str, t: float, cond: float):
        super().__init__(f"{what} numerically singular at t={t:.12g} (cond={cond:.3g})")
        self.what = what
        self.t = t
        self.cond = cond


@dataclass(frozen=True)
class TimeHorizon:
    """Control interval [s, T] with delay length delta."""

    s: float
    T: float
    delta: float

    def __post_init__(self):
        if not (0.0 <= self.s < self.T):
            raise ModelError(f"need 0 <= s < T, got s={self.s}, T={self.T}")
        if self.delta <= 0.0:
            raise ModelError(f"delay must be positive, got {self.delta}")
        if self.delta > self.T - self.s + 1e-12:
            raise ModelError("delay longer than the horizon; no full delay block fits")


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on [s - delta, T + delta].

    ``m`` nodes span one delay, so shifting an index by +-m moves the time
    argument by +-delta exactly; no floating-point comparison is ever needed
    to resolve delayed or advanced arguments.
    """

    s: float
    T: float
    delta: float
    h: float
    m: int  # steps per delay
    steps: int  # steps on [s, T]
    times: np.ndarray  # node times, length n_nodes

    @property
    def n_nodes(self) -> int:
        return self.steps + 2 * self.m + 1

    @property
    def idx_s(self) -> int:
        return self.m

    @property
    def idx_T(self) -> int:
        return self.m + self.steps

    @property
    def n_half(self) -> int:
        """Number of half-grid samples (nodes plus midpoints)."""
        return 2 * (self.steps + 2 * self.m) + 1

    def half_times(self) -> np.ndarray:
        lo = self.s - self.delta
        return lo + 0.5 * self.h * np.arange(self.n_half)

    def node_index(self, t: float) -> int:
        j = round((t - (self.s - self.delta)) / self.h)
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ModelError(f"time {t} is not a grid node")
        return int(j)

    def refine(self, factor: int = 2) -> "Grid":
        return build_grid(TimeHorizon(self.s, self.T, self.delta), self.m * factor)


def build_grid(horizon: TimeHorizon, m: int) -> Grid:
    """Uniform grid with h = delta/m; fails if (T-s)/h is not an integer.

    The misalignment test is exact to one part in 1e9; callers must adjust T
    rather than rely on rounding.
    """
    if m < 1:
        raise ModelError(f"need m >= 1, got {m}")
    h = horizon.delta / m
    ratio = (horizon.T - horizon.s) / h
    steps = round(ratio)
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise GridAlignmentError(
            f"(T - s) = {horizon.T - horizon.s} is not an integer multiple of h = {h}"
        )
    lo = horizon.s - horizon.delta
    times = lo + h * np.arange(steps + 2 * m + 1)
    return Grid(horizon.s, horizon.T, horizon.delta, h, m, steps, times)


class GridFn:
    """Matrix-valued function sampled on the half-step grid of a Grid.

    ``values`` has shape (n_half, r, c); entry 2*k is node k, entry 2*k+1 the
    midpoint of cell (k, k+1).
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=float)
        if values.shape[0] != grid.n_half or values.ndim != 3:
            raise ModelError(f"grid function has shape {values.shape}, expected ({grid.n_half}, r, c)")
        self.grid = grid
        self.values = values

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    @classmethod
    def constant(cls, grid: Grid, value) -> "GridFn":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(grid, np.broadcast_to(value, (grid.n_half,) + value.shape).copy())

    @classmethod
    def zero(cls, grid: Grid, r: int, c: int) -> "GridFn":
        return cls(grid, np.zeros((grid.n_half, r, c)))

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable[[float], np.ndarray]) -> "GridFn":
        vals = np.stack([np.atleast_2d(np.asarray(fn(t), dtype=float)) for t in grid.half_times()])
        return cls(grid, vals)

    @classmethod
    def from_samples(cls, grid: Grid, times, values, mode: str = "linear") -> "GridFn":
        """Resample (times, values) onto the half grid.

        mode='linear' interpolates componentwise, mode='step' is piecewise
        constant (left-continuous jumps at the sample times).  Outside the
        sample range the nearest sample is held.
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        elif values.ndim == 2:
            values = values[:, :, None]
        if times.ndim != 1 or len(times) != values.shape[0]:
            raise ModelError("sample times and values disagree in length")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ModelError("sample times must be strictly increasing")
        ht = grid.half_times()
        out = np.empty((grid.n_half,) + values.shape[1:])
        if mode == "linear":
            for i in range(values.shape[1]):
                for j in range(values.shape[2]):
                    out[:, i, j] = np.interp(ht, times, values[:, i, j])
        elif mode == "step":
            idx = np.clip(np.searchsorted(times, ht + 1e-12 * max(1.0, grid.h), side="right") - 1, 0, len(times) - 1)
            out = values[idx]
        else:
            raise ModelError(f"unknown sampling mode {mode!r}")
        return cls(grid, out)

    def node(self, k: int) -> np.ndarray:
        return self.values[2 * k]

    def at_nodes(self) -> np.ndarray:
        return self.values[::2]

    def is_zero(self, lo_node: int, hi_node: int, tol: float = 0.0) -> bool:
        """True when every half-grid sample in [lo_node, hi_node] vanishes."""
        return bool(np.max(np.abs(self.values[2 * lo_node : 2 * hi_node + 1]), initial=0.0) <= tol)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def _check_symmetric(name: str, values: np.ndarray):
    dev = np.max(np.abs(values - np.swapaxes(values, -1, -2)))
    scale = 1.0 + np.max(np.abs(values))
    if dev > 1e-9 * scale:
        raise ModelError(f"weight {name} is not symmetric (max deviation {dev:.3g})")


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal value of the backward state: a constant vector c0, or the
    affine functional c0 + c1 * W(T)."""

    kind: str  # "constant" | "affine"
    c0: np.ndarray
    c1: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("constant", "affine"):
            raise ModelError(f"unknown terminal kind {self.kind!r}")
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=float).reshape(-1))
        if self.kind == "affine":
            if self.c1 is None:
                raise ModelError("affine terminal condition needs c1")
            object.__setattr__(self, "c1", np.asarray(self.c1, dtype=float).reshape(-1))

    def sample(self, w_T: np.ndarray) -> np.ndarray:
        """Evaluate per path; w_T has shape (P,), result (P, n)."""
        out = np.broadcast_to(self.c0, (len(w_T), len(self.c0))).copy()
        if self.kind == "affine":
            out += w_T[:, None] * self.c1[None, :]
        return out

    def scaled(self, lam: float) -> "TerminalCondition":
        c1 = None if self.c1 is None else lam * self.c1
        return TerminalCondition(self.kind, lam * self.c0, c1)


@dataclass
class ProblemSpec:
    """One complete problem instance on a fixed grid.

    Matrix shapes: A, Abar, B, Bbar, Q, Qbar, R, Rbar are n x n; C, Cbar are
    n x d; N, Nbar are d x d; G, Gbar are n x n; histories phi, psi (n x 1)
    and eta (d x 1) are read on [s - delta, s).
    """

    grid: Grid
    n: int
    d: int
    A: GridFn
    Abar: GridFn
    B: GridFn
    Bbar: GridFn
    C: GridFn
    Cbar: GridFn
    G: np.ndarray
    Gbar: np.ndarray
    Q: GridFn
    Qbar: GridFn
    R: GridFn
    Rbar: GridFn
    N: GridFn
    Nbar: GridFn
    terminal: TerminalCondition
    phi: GridFn
    psi: GridFn
    eta: GridFn
    _derived: Optional["DerivedWeights"] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n, d = self.n, self.d
        expect = {
            "A": (n, n), "Abar": (n, n), "B": (n, n), "Bbar": (n, n),
            "C": (n, d), "Cbar": (n, d), "Q": (n, n), "Qbar": (n, n),
            "R": (n, n), "Rbar": (n, n), "N": (d, d), "Nbar": (d, d),
            "phi": (n, 1), "psi": (n, 1), "eta": (d, 1),
        }
        for name, shape in expect.items():
            fn: GridFn = getattr(self, name)
            if fn.shape != shape:
                raise ModelError(f"{name} has shape {fn.shape}, expected {shape}")
            if not np.all(np.isfinite(fn.values)):
                raise ModelError(f"{name} has non-finite samples")
        self.G = np.asarray(self.G, dtype=float)
        self.Gbar = np.asarray(self.Gbar, dtype=float)
        for name in ("G", "Gbar"):
            mat = getattr(self, name)
            if mat.shape != (n, n):
                raise ModelError(f"{name} has shape {mat.shape}, expected {(n, n)}")
            _check_symmetric(name, mat[None])
        for name in ("Q", "Qbar", "R", "Rbar", "N", "Nbar"):
            _check_symmetric(name, getattr(self, name).values)
        if len(self.terminal.c0) != n:
            raise ModelError("terminal condition dimension mismatch")

    def derived(self) -> "DerivedWeights":
        if self._derived is None:
            self._derived = DerivedWeights(self)
        return self._derived

    def with_inputs_scaled(self, lam: float) -> "ProblemSpec":
        """Same dynamics and weights, inputs (terminal, histories) scaled by lam."""
        return ProblemSpec(
            grid=self.grid, n=self.n, d=self.d,
            A=self.A, Abar=self.Abar, B=self.B, Bbar=self.Bbar, C=self.C, Cbar=self.Cbar,
            G=self.G, Gbar=self.Gbar, Q=self.Q, Qbar=self.Qbar, R=self.R, Rbar=self.Rbar,
            N=self.N, Nbar=self.Nbar,
            terminal=self.terminal.scaled(lam),
            phi=GridFn(self.grid, lam * self.phi.values),
            psi=GridFn(self.grid, lam * self.psi.values),
            eta=GridFn(self.grid, lam * self.eta.values),
        )

    def history_phi(self, k: int) -> np.ndarray:
        return self.phi.node(k)[:, 0]

    def history_psi(self, k: int) -> np.ndarray:
        return self.psi.node(k)[:, 0]

    def history_eta(self, k: int) -> np.ndarray:
        return self.eta.node(k)[:, 0]


class DerivedWeights:
    """Half-grid stacks of the combined weights that enter every equation.

    qt  = Q(t) + Qbar(t+delta)
    rt  = R(t) + Rbar(t+delta)
    script_n = 2 N(t) + 2 Nbar(t+delta)        (must be uniformly positive)
    cnc  = C(t) script_n(t)^-1 C(t)^T
    cbnc = Cbar(t) script_n(t-delta)^-1 Cbar(t)^T   (zero below t = s)

    script_m and script_r depend on the running Riccati unknown and are formed
    inside the solvers; the helpers here only expose their fixed ingredients.
    """

    def __init__(self, spec: ProblemSpec):
        g = spec.grid
        m2 = 2 * g.m
        H = g.n_half
        self.spec = spec
        self.m2 = m2

        def shifted(fn: GridFn) -> np.ndarray:
            out = np.zeros_like(fn.values)
            out[: H - m2] = fn.values[m2:]
            return out

        self.qt = spec.Q.values + shifted(spec.Qbar)
        self.rt = spec.R.values + shifted(spec.Rbar)
        self.script_n = 2.0 * (spec.N.values + shifted(spec.Nbar))
        self.script_n_inv = np.zeros_like(self.script_n)
        self.script_n_cond = np.zeros(H)
        for q in range(H):
            mat = self.script_n[q]
            self.script_n_cond[q] = np.linalg.cond(mat) if np.linalg.det(mat) != 0 else np.inf
            if self.script_n_cond[q] < COND_LIMIT:
                self.script_n_inv[q] = np.linalg.inv(mat)
        cvals = spec.C.values
        self.cnc = np.einsum("qij,qjk,qlk->qil", cvals, self.script_n_inv, cvals)
        self.cbnc = np.zeros((H, spec.n, spec.n))
        cb = spec.Cbar.values
        self.cbnc[m2:] = np.einsum("qij,qjk,qlk->qil", cb[m2:], self.script_n_inv[:-m2] if m2 else self.script_n_inv, cb[m2:])

    def require_script_n(self, lo_node: int, hi_node: int):
        """Raise if script_n is ill-conditioned anywhere on [lo, hi] nodes."""
        g = self.spec.grid
        for q in range(2 * lo_node, 2 * hi_node + 1):
            if self.script_n_cond[q] > COND_LIMIT:
                raise ConditioningError("script_n", g.s - g.delta + 0.5 * g.h * q, self.script_n_cond[q])


@dataclass(frozen=True)
class AssumptionReport:
    """Margins for the standing positivity and boundary assumptions.

    Eigenvalue margins are minima over grid nodes after symmetrizing; a flag
    passes when its margin clears -1e-10.  ``alpha`` is the largest constant
    with N(t) + Nbar(t+delta) >= alpha I at every node.
    """

    a3_ok: bool
    alpha: float
    margin_G: float
    margin_Q: float
    margin_R: float
    boundary_ok: bool
    boundary_start_dev: float  # max |Abar|,|Bbar|,|Cbar| on [s, s+delta]
    boundary_end_dev: float  # max barred coefficient/weight on [T, T+delta]
    compat_residual: Optional[float] = None
    a4_a5_ok: Optional[bool] = None

    def summary(self) -> str:
        lines = [
            f"a3_ok={self.a3_ok} alpha={self.alpha:.6g}",
            f"margins: G={self.margin_G:.6g} Q+Qbar={self.margin_Q:.6g} R+Rbar={self.margin_R:.6g}",
            f"boundary_ok={self.boundary_ok} start_dev={self.boundary_start_dev:.3g} end_dev={self.boundary_end_dev:.3g}",
        ]
        if self.compat_residual is not None:
            lines.append(f"compat_residual={self.compat_residual:.6g}")
        if self.a4_a5_ok is not None:
            lines.append(f"a4_a5_ok={self.a4_a5_ok}")
        return "\n".join(lines)


def _min_eig_over(values: np.ndarray) -> float:
    """Minimum eigenvalue of the symmetric parts of a stack of matrices."""
    worst = np.inf
    for mat in values:
        worst = min(worst, float(np.linalg.eigvalsh(_sym(mat))[0]))
    return worst


def validate_assumptions(spec: ProblemSpec) -> AssumptionReport:
    """Check positivity of the weights and the boundary-vanishing hypotheses.

    Pure: identical specs produce identical reports.  The scan runs over the
    nodes of [s - delta, T]; alpha is the exact minimum eigenvalue found for
    N + Nbar(.+delta), so a3 requires alpha > 0.
    """
    g = spec.grid
    dw = spec.derived()
    lo, hi = 0, g.idx_T  # nodes covering [s - delta, T]
    margin_G = float(np.linalg.eigvalsh(_sym(spec.G))[0])
    margin_Q = _min_eig_over(dw.qt[2 * lo : 2 * hi + 1])
    margin_R = _min_eig_over(dw.rt[2 * lo : 2 * hi + 1])
    nt = spec.N.values + np.concatenate([spec.Nbar.values[dw.m2:], np.zeros((dw.m2, spec.d, spec.d))])
    alpha = _min_eig_over(nt[2 * lo : 2 * hi + 1])
    a3_ok = (
        margin_G >= PSD_TOL and margin_Q >= PSD_TOL and margin_R >= PSD_TOL and alpha > 0.0
    )

    start_dev = max(
        np.max(np.abs(fn.values[2 * g.idx_s : 2 * (g.idx_s + g.m) + 1]), initial=0.0)
        for fn in (spec.Abar, spec.Bbar, spec.Cbar)
    )
    end_dev = max(
        np.max(np.abs(fn.values[2 * g.idx_T :]), initial=0.0)
        for fn in (spec.Abar, spec.Bbar, spec.Cbar, spec.Qbar, spec.Rbar, spec.Nbar)
    )
    boundary_ok = start_dev == 0.0 and end_dev == 0.0
    return AssumptionReport(
        a3_ok=a3_ok,
        alpha=float(alpha),
        margin_G=margin_G,
        margin_Q=float(margin_Q),
        margin_R=float(margin_R),
        boundary_ok=boundary_ok,
        boundary_start_dev=float(start_dev),
        boundary_end_dev=float(end_dev),
    )


def check_compatibility(spec: ProblemSpec, P_i) -> float:
    """Sup-norm residual of the delay-compatibility identity.

    For the trajectory P on [s - delta, T] this is the largest spectral norm
    over nodes t of

        Abar(t+delta) + Bbar(t+delta) scriptR^-1(t) B(t)^T P(t)
                      + Cbar(t+delta) script_n^-1(t) C(t)^T P(t)

    with scriptR(t) = 2 R(t) + 2 Rbar(t+delta) + P(t).  The identity holding
    (residual ~ 0) is a hypothesis of the verification theorems, not of the
    solvers; callers decide what to do with a nonzero residual.
    """
    g = spec.grid
    dw = spec.derived()
    dw.require_script_n(0, g.idx_T)
    if hasattr(P_i, "values"):
        p_nodes = P_i.values
    else:
        p_nodes = np.broadcast_to(np.atleast_2d(np.asarray(P_i, dtype=float)), (g.n_nodes, spec.n, spec.n))
    worst = 0.0
    for k in range(0, g.idx_T + 1):
        q = 2 * k
        P = p_nodes[k]
        scriptR = 2.0 * dw.rt[q] + P
        cond = np.linalg.cond(scriptR)
        if cond > COND_LIMIT:
            raise ConditioningError("scriptR", g.times[k], cond)
        rinv = np.linalg.inv(scriptR)
        qa = q + dw.m2  # half-index of t + delta
        resid = (
            spec.Abar.values[qa]
            + spec.Bbar.values[qa] @ rinv @ spec.B.values[q].T @ P
            + spec.Cbar.values[qa] @ dw.script_n_inv[q] @ spec.C.values[q].T @ P
        )
        worst = max(worst, float(np.linalg.norm(resid, 2)))
    return worst
