import json

import numpy as np

from delaylq.harness import (
    ExperimentPlan,
    cost_identity_check,
    emit_reports,
    load_plan,
    make_flagship_spec,
    make_nodelay_spec,
    run_nodelay_reduction,
    run_perturbation_test,
    run_riccati_convergence,
    run_verify,
)


def small_plan(**kw):
    base = dict(
        name="t", spec_source="flagship", seed=11, paths=4000, grid_m=10,
        grid_levels=(5, 10), directions=6, i_values=(1, 2, 4, 8),
    )
    base.update(kw)
    return ExperimentPlan(**base)


def test_riccati_convergence_study_passes_and_negative_control_fails():
    plan = small_plan(negative_control=True)
    res = run_riccati_convergence(plan)
    by_name = {c.name: c for c in res.criteria}
    assert by_name["monotone_nonincreasing_m5"].passed
    assert by_name["monotone_nonincreasing_m10"].passed
    assert by_name["zero_spec_exact"].passed
    # the deliberately wrong reference was detected (its check "passes"
    # because detection is the criterion)
    assert by_name["negative_control_detected"].passed


def test_nodelay_reduction_study():
    plan = small_plan(spec_source="nodelay", paths=8000, grid_m=10, negative_control=True)
    res = run_nodelay_reduction(plan)
    assert res.passed, res.summary()
    assert res.metrics["mc_cost"] > 0


def test_perturbation_study_and_negative_control():
    plan = small_plan(paths=5000, grid_m=10, directions=6, negative_control=True)
    res = run_perturbation_test(plan)
    assert res.passed, res.summary()
    assert res.metrics["negative_control_min_z"] < -3.0


def test_verify_study_on_delayed_instance():
    plan = small_plan(paths=5000, grid_m=10)
    res = run_verify(plan)
    assert res.passed, res.summary()


def test_cost_identity_small():
    spec = make_flagship_spec(m=10)
    out = cost_identity_check(spec, i=4, seed=3, paths=5000)
    assert out["converged"]
    row = out["rows"][0]
    assert abs(row["discrepancy"]) <= 3.0 * row["se"] + 5.0 * spec.grid.h * max(1.0, row["mean_2J"])


def test_study_result_purity():
    plan = small_plan(grid_levels=(5,), i_values=(1, 2))
    r1 = run_riccati_convergence(plan)
    r2 = run_riccati_convergence(plan)
    assert r1.to_dict() == r2.to_dict()


def test_emit_reports_empty(tmp_path):
    summary = emit_reports([], tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["entries"] == ["summary.json"]
    assert summary["passed"]


def test_emit_reports_deterministic_and_counted(tmp_path):
    plan = small_plan(grid_levels=(5,), i_values=(1, 2, 4))
    res = run_riccati_convergence(plan)
    d1 = tmp_path / "a"
    d2 = tmp_path / "b"
    emit_reports([res], d1)
    emit_reports([run_riccati_convergence(plan)], d2)
    for name in sorted(p.name for p in d1.glob("*.csv")):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    crit = (d1 / "riccati-convergence.criteria.csv").read_text().strip().splitlines()
    assert len(crit) == 1 + len(res.criteria)


def test_emit_reports_figures(tmp_path):
    plan = small_plan(grid_levels=(5,), i_values=(1, 2, 4))
    res = run_riccati_convergence(plan)
    emit_reports([res], tmp_path, figures=True)
    svg = tmp_path / "riccati-convergence.convergence.svg"
    assert svg.exists()
    assert res.plan_digest in svg.read_text()


def test_plan_file_round_trip(tmp_path):
    path = tmp_path / "plan.json"
    path.write_text(
        json.dumps(
            {
                "plan": {
                    "name": "p",
                    "seed": 3,
                    "paths": 123,
                    "grid_m": 5,
                    "studies": ["verify"],
                    "negative_control": True,
                    "spec_source": "nodelay",
                }
            }
        )
    )
    plan = load_plan(path)
    assert plan.paths == 123
    assert plan.studies == ("verify",)
    spec = plan.build_spec()
    assert spec.grid.m == 5


def test_builders_are_deterministic():
    a = make_flagship_spec(m=8)
    b = make_flagship_spec(m=8)
    assert np.array_equal(a.Bbar.values, b.Bbar.values)
    n1 = make_nodelay_spec(m=8)
    n2 = make_nodelay_spec(m=8)
    assert np.array_equal(n1.phi.values, n2.phi.values)
