"""Surface diagnostics: obstacle, bounds, regularity, smooth fit, structure,
and the refinement study."""

import numpy as np
import pytest

from impulse_qvi.diagnostics import (CheckReport, check_bounds,
                                     check_obstacle, check_regularity,
                                     check_smooth_fit, check_theta_structure,
                                     convergence_study, standard_checks)
from impulse_qvi.fixtures import (closed_form_spec, fixture_reference,
                                  geometric_spec, intervention_spec,
                                  suggested_grid, zero_spec)
from impulse_qvi.solver import (Grid, PolicyMap, RegionMap, ValueSurface,
                                solve)


@pytest.fixture(scope="module")
def intervention_solution():
    spec = intervention_spec()
    grid = Grid(0.1, 4.1, 201, 100, 71)
    return spec, grid, solve(spec, grid)


def test_standard_checks_closed_form_all_pass():
    reports = standard_checks(closed_form_spec(), Grid(0.1, 2.1, 101, 100, 21),
                              seed=3)
    by_name = {r.name: r for r in reports}
    assert set(by_name) == {"obstacle", "bounds", "regularity", "smooth_fit",
                            "theta_structure"}
    assert all(r.passed for r in reports)
    # no interventions are ever profitable here, so smooth fit is vacuous
    assert by_name["smooth_fit"].vacuous
    assert by_name["theta_structure"].vacuous


def test_standard_checks_intervention_all_pass():
    reports = standard_checks(intervention_spec(), Grid(0.1, 4.1, 201, 100, 71),
                              seed=3)
    by_name = {r.name: r for r in reports}
    assert all(r.passed for r in reports), [r.line() for r in reports]
    assert not by_name["smooth_fit"].vacuous
    assert by_name["smooth_fit"].details["n_nodes"] > 0
    # region-edge nodes straddle a genuine kink and must be excluded
    assert by_name["smooth_fit"].details["excluded_boundary_nodes"] > 0
    assert by_name["theta_structure"].details["landing_violations"] == 0


def test_check_obstacle_detects_corruption(intervention_solution):
    spec, grid, res = intervention_solution
    good = check_obstacle(res.surface, spec)
    assert good.passed
    values = res.surface.values.copy()
    j, i = 5, 40
    values[j, i] = res.surface.iv_values[j, i] - 1e-3
    bad_surface = ValueSurface(grid, spec.T, values, res.surface.iv_values,
                               dict(res.surface.metadata))
    bad = check_obstacle(bad_surface, spec)
    assert not bad.passed
    assert bad.measured == pytest.approx(-1e-3, rel=0.3)
    assert bad.worst_location is not None


def test_smooth_fit_tightens_under_refinement():
    spec = intervention_spec()
    coarse = solve(spec, Grid(0.1, 4.1, 201, 100, 71))
    fine = solve(spec, Grid(0.1, 4.1, 401, 200, 141))
    rep_c = check_smooth_fit(coarse.surface, coarse.regions, coarse.policy, spec)
    rep_f = check_smooth_fit(fine.surface, fine.regions, fine.policy, spec)
    assert rep_c.passed and rep_f.passed
    assert not rep_c.vacuous and not rep_f.vacuous
    assert rep_f.threshold < rep_c.threshold  # 5h + 10 tol/h shrinks with h
    assert rep_f.measured <= rep_c.measured  # and the measured error shrinks


def test_smooth_fit_vacuous_on_empty_region():
    spec = geometric_spec()
    res = solve(spec, Grid(0.1, 3.1, 101, 50, 33))
    assert not res.regions.labels.any()
    rep = check_smooth_fit(res.surface, res.regions, res.policy, spec)
    assert rep.passed and rep.vacuous


def test_check_bounds_closed_form():
    spec = closed_form_spec()
    res = solve(spec, Grid(0.1, 2.1, 101, 100, 21))
    rep = check_bounds(res.surface, spec, n_paths=2000, seed=5)
    assert rep.passed
    # C1 = T sup f + sup g1 = 1 here, and V peaks at 2(1 - e^{-1/2}) < 1
    assert rep.details["c1"] == pytest.approx(1.0)
    assert rep.details["upper_margin"] > 0.2


def test_check_regularity_one_sided():
    spec = closed_form_spec()
    coarse = solve(spec, Grid(0.1, 2.1, 101, 50, 21)).surface
    fine = solve(spec, Grid(0.1, 2.1, 101, 100, 21)).surface
    ok = check_regularity(coarse, fine)
    assert ok.passed  # smooth data: proxies shrink under refinement
    # inflate the fine surface to force >10% proxy growth
    blown = ValueSurface(fine.grid, fine.T, fine.values * 3.0,
                         fine.iv_values, dict(fine.metadata))
    bad = check_regularity(coarse, blown)
    assert not bad.passed


def test_theta_structure_flags_landing_violation():
    # synthetic one-slice surface whose action region covers everything,
    # so every landing point is itself labeled action
    grid = Grid(0.1, 2.1, 21, 1, 5)
    costs = intervention_spec().costs
    values = np.zeros((2, 21))
    labels = np.ones((2, 21), dtype=bool)
    xi0 = np.full((2, 21), costs.k_min)
    surface = ValueSurface(grid, 2.0, values, values.copy(), {})
    rep = check_theta_structure(surface, RegionMap(labels, 1e-8),
                                PolicyMap(xi0, grid.k_nodes(costs)),
                                intervention_spec())
    assert not rep.passed
    assert rep.details["landing_violations"] > 0


def test_check_report_shape():
    rep = CheckReport(name="demo", passed=True, measured=0.5, threshold=1.0,
                      operation="op", tolerance_note="note", runtime=12.0,
                      details={"k": 1})
    d = rep.to_dict()
    assert "runtime" not in d  # wall clock never reaches artifacts
    assert d["details"] == {"k": 1}
    assert "demo" in rep.line() and "PASS" in rep.line()
    vac = CheckReport(name="v", passed=True, measured=0.0, threshold=0.0,
                      operation="op", tolerance_note="n", vacuous=True)
    assert "vacuous" in vac.line()


def test_convergence_study_closed_form():
    spec = closed_form_spec()
    ref = fixture_reference("closed-form")
    grids = [Grid(0.1, 2.1, 51, nt, 21) for nt in (50, 100, 200)]
    study = convergence_study(spec, grids, reference=ref)
    assert len(study.rows) == 3
    assert len(study.ratios) == 1
    assert len(study.reference_errors) == 3
    # first order in time: reference errors halve, Cauchy ratio near 2
    r01 = study.reference_errors[0] / study.reference_errors[1]
    r12 = study.reference_errors[1] / study.reference_errors[2]
    assert 1.6 <= r01 <= 2.4 and 1.6 <= r12 <= 2.4
    assert study.ratios[0] >= 1.8
    d = study.to_dict()
    assert d["rows"][0]["sup_diff_to_next"] > d["rows"][1]["sup_diff_to_next"]


def test_convergence_study_zero_fixture_degenerate():
    spec = zero_spec()
    grids = [Grid(0.1, 2.1, 31, nt, 9) for nt in (10, 20, 40)]
    study = convergence_study(spec, grids)
    assert all(d == 0.0 for d in
               (row["sup_diff_to_next"] for row in study.rows[:-1]))
    assert study.ratios[0] == np.inf  # 0/0 ladder reported as inf, not NaN
