"""Problem-instance and plan files: TOML or JSON with the same structure.

Schema (TOML shown; the JSON form is the same tree):

    [dimensions]        n = 1, d = 1
    [horizon]           s = 0.0, T = 1.0, delta = 0.2
    [grid]              m = 10                  # step h = delta / m
    [coefficients.A]    constant = [[0.3]]      # or samples = {...}
    [coefficients.Abar] samples = { times = [0.0, 1.0], values = [[[0.0]], [[0.0]]], mode = "linear" }
    # coefficients: A Abar B Bbar (n x n), C Cbar (n x d)
    [weights.G]         constant = [[0.4]]      # G, Gbar: constant n x n
    [weights.Q]         constant = [[0.6]]      # Q Qbar R Rbar (n x n), N Nbar (d x d)
    [terminal]          kind = "affine", c0 = [1.0], c1 = [0.5]
    [history.phi]       constant = [0.3]        # or samples = { times, values = [[...], ...] }
    [history.psi]       constant = [0.1]
    [history.eta]       constant = [0.2]

Omitted coefficients and weights default to zero; omitted histories to zero.
``samples`` are resampled onto the half-step grid (mode "linear" default,
"step" for piecewise-constant data).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import (
    GridFn,
    ModelError,
    ProblemSpec,
    TerminalCondition,
    TimeHorizon,
    build_grid,
)

try:
    import tomllib as _toml
except ImportError:  # Python < 3.11
    import tomli as _toml

__all__ = ["load_spec", "spec_from_dict", "dump_spec_json", "load_table", "SCHEMA"]

SCHEMA = __doc__

_COEFF_SHAPES = {
    "A": ("n", "n"), "Abar": ("n", "n"), "B": ("n", "n"), "Bbar": ("n", "n"),
    "C": ("n", "d"), "Cbar": ("n", "d"),
}
_WEIGHT_SHAPES = {
    "Q": ("n", "n"), "Qbar": ("n", "n"), "R": ("n", "n"), "Rbar": ("n", "n"),
    "N": ("d", "d"), "Nbar": ("d", "d"),
}


def load_table(path) -> dict:
    """Parse a TOML or JSON file into a plain dict."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(raw)
    if path.suffix.lower() == ".toml":
        return _toml.loads(raw.decode())
    try:
        return _toml.loads(raw.decode())
    except Exception:
        return json.loads(raw)


def _gridfn_from_entry(grid, entry, rows, cols, what) -> GridFn:
    if entry is None:
        return GridFn.zero(grid, rows, cols)
    if "constant" in entry:
        value = np.asarray(entry["constant"], dtype=float)
        if value.ndim == 1:
            value = value[:, None]
        if value.shape != (rows, cols):
            raise ModelError(f"{what}: constant has shape {value.shape}, expected {(rows, cols)}")
        return GridFn.constant(grid, value)
    if "samples" in entry:
        tab = entry["samples"]
        values = np.asarray(tab["values"], dtype=float)
        if values.ndim == 2:  # vector samples
            values = values[:, :, None]
        return GridFn.from_samples(grid, tab["times"], values, mode=tab.get("mode", "linear"))
    raise ModelError(f"{what}: need 'constant' or 'samples'")


def _const_matrix(entry, n, what) -> np.ndarray:
    if entry is None:
        return np.zeros((n, n))
    if "constant" not in entry:
        raise ModelError(f"{what} must be a constant matrix")
    mat = np.asarray(entry["constant"], dtype=float)
    if mat.shape != (n, n):
        raise ModelError(f"{what} has shape {mat.shape}, expected {(n, n)}")
    return mat


def spec_from_dict(table: dict) -> ProblemSpec:
    try:
        dims = table["dimensions"]
        n, d = int(dims["n"]), int(dims["d"])
        hz = table["horizon"]
        horizon = TimeHorizon(float(hz["s"]), float(hz["T"]), float(hz["delta"]))
        m = int(table["grid"]["m"])
    except KeyError as exc:
        raise ModelError(f"missing required section/field: {exc}") from exc
    grid = build_grid(horizon, m)
    dims_map = {"n": n, "d": d}

    coeffs = table.get("coefficients", {})
    weights = table.get("weights", {})
    fns = {}
    for name, (r, c) in _COEFF_SHAPES.items():
        fns[name] = _gridfn_from_entry(grid, coeffs.get(name), dims_map[r], dims_map[c], name)
    for name, (r, c) in _WEIGHT_SHAPES.items():
        fns[name] = _gridfn_from_entry(grid, weights.get(name), dims_map[r], dims_map[c], name)

    term_tab = table.get("terminal", {"kind": "constant", "c0": [0.0] * n})
    terminal = TerminalCondition(term_tab["kind"], term_tab["c0"], term_tab.get("c1"))

    hist = table.get("history", {})
    phi = _gridfn_from_entry(grid, hist.get("phi"), n, 1, "phi")
    psi = _gridfn_from_entry(grid, hist.get("psi"), n, 1, "psi")
    eta = _gridfn_from_entry(grid, hist.get("eta"), d, 1, "eta")

    return ProblemSpec(
        grid=grid, n=n, d=d,
        A=fns["A"], Abar=fns["Abar"], B=fns["B"], Bbar=fns["Bbar"],
        C=fns["C"], Cbar=fns["Cbar"],
        G=_const_matrix(weights.get("G"), n, "G"),
        Gbar=_const_matrix(weights.get("Gbar"), n, "Gbar"),
        Q=fns["Q"], Qbar=fns["Qbar"], R=fns["R"], Rbar=fns["Rbar"],
        N=fns["N"], Nbar=fns["Nbar"],
        terminal=terminal, phi=phi, psi=psi, eta=eta,
    )


def load_spec(path) -> ProblemSpec:
    return spec_from_dict(load_table(path))


def _fn_to_entry(fn: GridFn) -> dict:
    times = fn.grid.half_times()
    return {"samples": {"times": times.tolist(), "values": fn.values.tolist(), "mode": "linear"}}


def dump_spec_json(spec: ProblemSpec, path):
    """Write a JSON instance file that reloads to the same half-grid samples."""
    g = spec.grid
    table = {
        "dimensions": {"n": spec.n, "d": spec.d},
        "horizon": {"s": g.s, "T": g.T, "delta": g.delta},
        "grid": {"m": g.m},
        "coefficients": {name: _fn_to_entry(getattr(spec, name)) for name in _COEFF_SHAPES},
        "weights": {
            **{name: _fn_to_entry(getattr(spec, name)) for name in _WEIGHT_SHAPES},
            "G": {"constant": spec.G.tolist()},
            "Gbar": {"constant": spec.Gbar.tolist()},
        },
        "terminal": {
            "kind": spec.terminal.kind,
            "c0": spec.terminal.c0.tolist(),
            **({"c1": spec.terminal.c1.tolist()} if spec.terminal.c1 is not None else {}),
        },
        "history": {
            "phi": _fn_to_entry(spec.phi),
            "psi": _fn_to_entry(spec.psi),
            "eta": _fn_to_entry(spec.eta),
        },
    }
    Path(path).write_text(json.dumps(table, indent=1, sort_keys=True))
