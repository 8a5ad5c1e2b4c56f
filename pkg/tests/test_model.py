import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaylq import (
    GridAlignmentError,
    GridFn,
    ModelError,
    TerminalCondition,
    TimeHorizon,
    build_grid,
    check_compatibility,
    dump_spec_json,
    load_spec,
    spec_from_dict,
    validate_assumptions,
)
from delaylq.config import load_table
from delaylq.harness import make_scalar_spec, make_seeded_unit_b_spec, make_zero_spec


def test_horizon_invariants():
    with pytest.raises(ModelError):
        TimeHorizon(1.0, 0.5, 0.1)
    with pytest.raises(ModelError):
        TimeHorizon(0.0, 1.0, -0.1)
    with pytest.raises(ModelError):
        TimeHorizon(0.0, 1.0, 1.5)  # no full delay block fits


def test_build_grid_arithmetic():
    g = build_grid(TimeHorizon(0.0, 1.0, 0.25), 5)
    assert g.h == pytest.approx(0.05)
    assert g.n_nodes - 1 == 30  # intervals on [-0.25, 1.25]
    # delta = 0.3 with m = 3 gives h = 0.1 and (T-s)/h = 10: fine
    build_grid(TimeHorizon(0.0, 1.0, 0.3), 3)
    with pytest.raises(GridAlignmentError):
        build_grid(TimeHorizon(0.0, 1.0, 0.33), 3)


def test_grid_index_closure_scan():
    g = build_grid(TimeHorizon(0.5, 2.5, 0.5), 10)
    assert g.h == pytest.approx(0.05)
    for k in range(g.idx_s, g.idx_T + 1):
        t = g.times[k]
        assert g.node_index(t - g.delta) == k - g.m
        assert g.node_index(t + g.delta) == k + g.m


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 12), blocks=st.integers(1, 6))
def test_grid_closure_property(m, blocks):
    g = build_grid(TimeHorizon(0.0, blocks * 0.2, 0.2), m)
    ks = np.arange(g.idx_s, g.idx_T + 1)
    assert np.all(ks - g.m >= 0)
    assert np.all(ks + g.m <= g.n_nodes - 1)
    assert np.allclose(g.times[ks] - g.delta, g.times[ks - g.m])
    assert np.allclose(g.times[ks] + g.delta, g.times[ks + g.m])


def test_validate_identity_weights():
    # N = I, Nbar = 0: the largest alpha with N + Nbar(.+delta) >= alpha I is 1
    spec = make_scalar_spec(nw=1.0)
    rep = validate_assumptions(spec)
    assert rep.a3_ok
    assert rep.alpha == pytest.approx(1.0)
    # the derived control weight satisfies script_n >= 2 alpha I
    dw = spec.derived()
    assert np.min(dw.script_n[:: 2]) >= 2.0 * rep.alpha - 1e-12


def test_validate_sign_flip():
    spec = make_scalar_spec(nw=-1.0)
    rep = validate_assumptions(spec)
    assert not rep.a3_ok
    assert rep.alpha == pytest.approx(-1.0)


def test_validate_seeded_psd_brute_force():
    spec = make_seeded_unit_b_spec(3, n=2, m=8)
    rep = validate_assumptions(spec)
    assert rep.a3_ok
    # brute-force eigenvalue scan with independent index arithmetic
    g = spec.grid
    worst = np.inf
    for k in range(0, g.idx_T + 1):
        nmat = spec.N.node(k) + spec.Nbar.node(k + g.m)
        worst = min(worst, np.linalg.eigvalsh(0.5 * (nmat + nmat.T))[0])
    assert rep.alpha == pytest.approx(worst, abs=1e-12)


def test_validate_purity():
    spec = make_seeded_unit_b_spec(5, n=2, m=6)
    assert validate_assumptions(spec) == validate_assumptions(spec)


def test_nonsymmetric_weight_rejected():
    spec = make_scalar_spec()
    with pytest.raises(ModelError):
        spec.Q = GridFn.constant(spec.grid, [[0.0]])
        bad = make_seeded_unit_b_spec(1, n=2, m=4)
        bad.Q = GridFn.constant(bad.grid, np.array([[1.0, 0.5], [0.0, 1.0]]))
        bad.__post_init__()


def test_compatibility_zero_when_bars_vanish():
    spec = make_scalar_spec(a=0.4, b=0.7, c=0.5, q=0.3)
    assert check_compatibility(spec, np.array([[2.7]])) == 0.0


def test_compatibility_scalar_recipe():
    # R = Rbar = 0, C = 0, Abar(t+delta) = -Bbar(t+delta) B(t), P = 1
    spec = make_scalar_spec(a=0.1, b=0.8, bbar=0.5, abar=-0.5 * 0.8)
    assert check_compatibility(spec, np.array([[1.0]])) <= 1e-14


def test_compatibility_single_term():
    spec = make_scalar_spec(abar=1.0)
    assert check_compatibility(spec, np.array([[1.0]])) == pytest.approx(1.0)


def test_boundary_flags():
    spec = make_scalar_spec(abar=1.0)
    rep = validate_assumptions(spec)
    assert not rep.boundary_ok
    assert rep.boundary_end_dev == pytest.approx(1.0)
    zero = make_zero_spec()
    assert validate_assumptions(zero).boundary_ok


def test_gridfn_sampling_modes():
    g = build_grid(TimeHorizon(0.0, 1.0, 0.25), 4)
    lin = GridFn.from_samples(g, [-0.25, 1.25], [[[0.0]], [[3.0]]])
    assert lin.values[0, 0, 0] == pytest.approx(0.0)
    assert lin.values[-1, 0, 0] == pytest.approx(3.0)
    mid = lin.values[lin.values.shape[0] // 2, 0, 0]
    assert 0.0 < mid < 3.0
    step = GridFn.from_samples(g, [-0.25, 0.5], [[[1.0]], [[2.0]]], mode="step")
    assert step.node(g.idx_s)[0, 0] == pytest.approx(1.0)
    assert step.node(g.idx_T)[0, 0] == pytest.approx(2.0)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(-3.0, 3.0), w=st.floats(-2.0, 2.0))
def test_terminal_scaling(lam, w):
    term = TerminalCondition("affine", [1.0, -0.5], [0.2, 0.3])
    scaled = term.scaled(lam)
    ref = term.sample(np.array([w]))
    assert np.allclose(scaled.sample(np.array([w])), lam * ref)


def test_config_toml_and_json_round_trip(tmp_path):
    spec = load_spec("configs/nodelay.toml")
    assert spec.n == 1 and spec.grid.m == 20
    out = tmp_path / "dump.json"
    dump_spec_json(spec, out)
    spec2 = spec_from_dict(json.loads(out.read_text()))
    for name in ("A", "B", "C", "Q", "N", "phi", "psi", "eta"):
        assert np.array_equal(getattr(spec, name).values, getattr(spec2, name).values)
    assert np.array_equal(spec.G, spec2.G)
    assert spec.terminal == spec2.terminal


def test_config_missing_section(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dimensions": {"n": 1, "d": 1}}))
    with pytest.raises(ModelError):
        load_table(path) and spec_from_dict(json.loads(path.read_text()))


def test_inputs_scaling_helper():
    spec = make_scalar_spec(phi0=0.4, psi0=0.2, eta0=0.1, xi0=1.0, xi1=0.5)
    scaled = spec.with_inputs_scaled(2.0)
    assert scaled.terminal.c0[0] == pytest.approx(2.0)
    assert np.allclose(scaled.phi.values, 2.0 * spec.phi.values)
    assert np.array_equal(scaled.A.values, spec.A.values)
