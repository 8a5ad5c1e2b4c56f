"""Hot inner loops for the deterministic matrix-ODE sweeps.

Every function here is plain loop-and-ndarray code decorated through
:func:`delaylq.backend.njit`, so the module runs compiled under numba or
interpreted under the numpy fallback without change.

Conventions shared by all kernels
---------------------------------
* Coefficient stacks are sampled on the half grid: index ``q = 2k`` is node
  ``k``, odd ``q`` the midpoint of cell ``(k, k+1)``; a shift of one delay is
  ``m2 = 2m`` half-indices.
* Trajectory iterates carry node values plus left/right node derivatives so a
  cubic Hermite evaluation inside one cell recovers midpoint values to fourth
  order without ever crossing a segment boundary (boundaries sit on nodes).
* Reads of delayed/advanced arguments resolve the prescribed segments: the
  history stack below the start node, the overhang stack above the terminal
  node, with one-sided limits at the two junction nodes chosen to match the
  cell being integrated.
"""

import numpy as np

from .backend import njit


@njit(cache=True)
def _hermite(v0, d0, v1, d1, h):
    return 0.5 * (v0 + v1) + 0.125 * h * (d0 - d1)


@njit(cache=True)
def _read_past(qh, side, idxs, h, hist2, fv, fdl, fdr):
    """Value of a delayed argument at half-index qh.

    side: -1 left limit, +1 right limit (matters only at the history junction
    node idxs); midpoints (odd qh) resolve through their owning cell.
    """
    if qh % 2 == 1:
        j = (qh - 1) // 2
        if j + 1 <= idxs:
            return hist2[qh].copy()
        return _hermite(fv[j], fdr[j], fv[j + 1], fdl[j + 1], h)
    k = qh // 2
    if k < idxs or (k == idxs and side < 0):
        return hist2[qh].copy()
    return fv[k].copy()


@njit(cache=True)
def _read_future(qh, side, idxT, h, over2, fv, fdl, fdr):
    """Value of an advanced argument at half-index qh (overhang above idxT)."""
    if qh % 2 == 1:
        j = (qh - 1) // 2
        if j >= idxT:
            return over2[qh].copy()
        return _hermite(fv[j], fdr[j], fv[j + 1], fdl[j + 1], h)
    k = qh // 2
    if k > idxT or (k == idxT and side > 0):
        return over2[qh].copy()
    return fv[k].copy()


@njit(cache=True)
def _rhs_bwd(family, q, Y, D, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2):
    """Right-hand side of the backward matrix equations.

    family 0: quadratic equation for the delayed state transform (unknown
              appears with its own delayed value through the weighted inverse)
    family 1: quadratic equation for its inverse-family companion
    family 2: linear delayed equation (A2 <- Ahat, Bb2 <- Bhat, Hh2 <- Hhat)
    """
    n = Y.shape[0]
    eye = np.eye(n)
    if family == 0:
        Mi = np.linalg.inv(2.0 * (Rt2[q] @ Y) + eye)
        Mdi = np.linalg.inv(2.0 * (Rt2[q - m2] @ D) + eye)
        F = (
            -(Y @ A2[q].T)
            - (A2[q] @ Y)
            + 2.0 * (Y @ (Qt2[q] @ Y))
            - B2[q] @ (Y @ Mi) @ B2[q].T
            - CNC2[q]
            - Bb2[q] @ (D @ Mdi) @ Bb2[q].T
            - CbNC2[q]
        )
    elif family == 1:
        Ri = np.linalg.inv(2.0 * Rt2[q] + Y)
        Rdi = np.linalg.inv(2.0 * Rt2[q - m2] + D)
        core = B2[q] @ Ri @ B2[q].T + CNC2[q] + Bb2[q] @ Rdi @ Bb2[q].T + CbNC2[q]
        F = Y @ A2[q] + A2[q].T @ Y - 2.0 * Qt2[q] + Y @ core @ Y
    else:
        F = -(Y @ A2[q].T) - (A2[q] @ Y) - Y - Bb2[q] @ D @ Bb2[q].T - Hh2[q]
    return 0.5 * (F + F.T)


@njit(cache=True)
def sweep_backward(
    family, h, m, idxs, idxT, terminal,
    A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2,
    hist2, fv, fdl, fdr,
    out_v, out_dl, out_dr,
):
    """One backward RK4 pass from the terminal node, delayed reads frozen.

    Writes node values and node derivatives of the new iterate into the out
    arrays (interior range [idxs, idxT] only; segments are the caller's job).
    """
    m2 = 2 * m
    out_v[idxT] = terminal
    for k in range(idxT, idxs, -1):
        q = 2 * k
        y = out_v[k].copy()
        d1 = _read_past(q - m2, -1, idxs, h, hist2, fv, fdl, fdr)
        k1 = _rhs_bwd(family, q, y, d1, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2)
        dm = _read_past(q - 1 - m2, 0, idxs, h, hist2, fv, fdl, fdr)
        k2 = _rhs_bwd(family, q - 1, y - 0.5 * h * k1, dm, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2)
        k3 = _rhs_bwd(family, q - 1, y - 0.5 * h * k2, dm, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2)
        d4 = _read_past(q - 2 - m2, 1, idxs, h, hist2, fv, fdl, fdr)
        k4 = _rhs_bwd(family, q - 2, y - h * k3, d4, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2)
        out_v[k - 1] = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    for k in range(idxs, idxT + 1):
        q = 2 * k
        dl = _read_past(q - m2, -1, idxs, h, hist2, fv, fdl, fdr)
        out_dl[k] = _rhs_bwd(family, q, out_v[k], dl, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2)
        if k - m == idxs:
            dr = _read_past(q - m2, 1, idxs, h, hist2, fv, fdl, fdr)
            out_dr[k] = _rhs_bwd(family, q, out_v[k], dr, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, Hh2, m2)
        else:
            out_dr[k] = out_dl[k]


@njit(cache=True)
def sweep_advanced_forward(
    h, m, idxs, idxT, init,
    Ah2, Bh2,
    over2, fv, fdl, fdr,
    out_v, out_dl, out_dr,
):
    """One forward RK4 pass of the linear time-advanced equation.

    d/dt Y(t) = Ahat(t)^T Y(t) + Bhat(t+delta)^T Y(t+delta), advanced reads
    frozen from (fv, fdl, fdr) with the zero overhang stack over2.
    """
    m2 = 2 * m
    out_v[idxs] = init
    for k in range(idxs, idxT):
        q = 2 * k
        y = out_v[k].copy()
        d1 = _read_future(q + m2, 1, idxT, h, over2, fv, fdl, fdr)
        k1 = Ah2[q].T @ y + Bh2[q + m2].T @ d1
        dm = _read_future(q + 1 + m2, 0, idxT, h, over2, fv, fdl, fdr)
        y2 = y + 0.5 * h * k1
        k2 = Ah2[q + 1].T @ y2 + Bh2[q + 1 + m2].T @ dm
        y3 = y + 0.5 * h * k2
        k3 = Ah2[q + 1].T @ y3 + Bh2[q + 1 + m2].T @ dm
        d4 = _read_future(q + 2 + m2, -1, idxT, h, over2, fv, fdl, fdr)
        y4 = y + h * k3
        k4 = Ah2[q + 2].T @ y4 + Bh2[q + 2 + m2].T @ d4
        out_v[k + 1] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    for k in range(idxs, idxT + 1):
        q = 2 * k
        dr = _read_future(q + m2, 1, idxT, h, over2, fv, fdl, fdr)
        out_dr[k] = Ah2[q].T @ out_v[k] + Bh2[q + m2].T @ dr
        if k + m == idxT:
            dl = _read_future(q + m2, -1, idxT, h, over2, fv, fdl, fdr)
            out_dl[k] = Ah2[q].T @ out_v[k] + Bh2[q + m2].T @ dl
        else:
            out_dl[k] = out_dr[k]


@njit(cache=True)
def _l_rhs(q, Y, Sv, Sd, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2):
    n = Y.shape[0]
    eye = np.eye(n)
    Mi = np.linalg.inv(2.0 * (Rt2[q] @ Sv) + eye)
    Mdi = np.linalg.inv(2.0 * (Rt2[q - m2] @ Sd) + eye)
    K = (
        B2[q] @ (Sv @ Mi) @ B2[q].T
        + CNC2[q]
        + CbNC2[q]
        + Bb2[q] @ (Sd @ Mdi) @ Bb2[q].T
    )
    K = 0.5 * (K + K.T)
    F = Y @ A2[q] + A2[q].T @ Y + 2.0 * Qt2[q] - Y @ K @ Y
    return 0.5 * (F + F.T)


@njit(cache=True)
def sweep_l_forward(
    stride, h, m, idxs, idxT, init,
    A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2,
    sig_hist2, sig_v, sig_dl, sig_dr,
    out_v, out_dl, out_dr,
):
    """Forward RK4 pass of the undelayed quadratic gain equation.

    The companion state transform enters as a known trajectory (node values
    plus derivatives, with its identity history); stride > 1 integrates on a
    coarsened copy of the grid for step-doubling error estimates.
    """
    m2 = 2 * m
    hs = stride * h
    out_v[idxs] = init
    for k in range(idxs, idxT - stride + 1, stride):
        q = 2 * k
        qm = q + stride  # half-index of the cell midpoint
        qe = q + 2 * stride
        y = out_v[k].copy()
        sv1 = _read_past(q, 1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
        sd1 = _read_past(q - m2, 1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
        k1 = _l_rhs(q, y, sv1, sd1, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2)
        svm = _read_past(qm, 0, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
        sdm = _read_past(qm - m2, 0, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
        k2 = _l_rhs(qm, y + 0.5 * hs * k1, svm, sdm, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2)
        k3 = _l_rhs(qm, y + 0.5 * hs * k2, svm, sdm, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2)
        sv4 = _read_past(qe, -1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
        sd4 = _read_past(qe - m2, -1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
        k4 = _l_rhs(qe, y + hs * k3, sv4, sd4, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2)
        out_v[k + stride] = y + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if stride == 1:
        for k in range(idxs, idxT + 1):
            q = 2 * k
            sv = _read_past(q, 1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
            sd = _read_past(q - m2, 1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
            out_dr[k] = _l_rhs(q, out_v[k], sv, sd, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2)
            if k - m == idxs:
                svl = _read_past(q, -1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
                sdl = _read_past(q - m2, -1, idxs, h, sig_hist2, sig_v, sig_dl, sig_dr)
                out_dl[k] = _l_rhs(q, out_v[k], svl, sdl, A2, B2, Bb2, Qt2, Rt2, CNC2, CbNC2, m2)
            else:
                out_dl[k] = out_dr[k]


@njit(cache=True)
def martingale_paths(gamma_nodes, dw, idxs, idxT, out):
    """Unit-mean exponential-martingale recursion, Euler form.

    gamma_nodes: (n_nodes, n, n) deterministic integrand; dw: (P, intervals)
    Brownian increments; out: (P, n_nodes, n, n) with out[:, idxs] already
    set to the identity.  The discrete product is exactly mean-preserving.
    """
    P = dw.shape[0]
    for p in range(P):
        for k in range(idxs, idxT):
            out[p, k + 1] = out[p, k] + dw[p, k] * (gamma_nodes[k] @ out[p, k])
