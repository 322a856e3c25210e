"""Command-line front end: exit codes, artifact contents, reproducibility."""

import filecmp
import json
import subprocess
import sys
from dataclasses import replace

import pytest

from impulse_qvi import cli
from impulse_qvi.fixtures import closed_form_spec
from impulse_qvi.model import Curve


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def data_rows(path):
    """CSV rows that are neither `# meta` nor the header."""
    with open(path, "r", encoding="utf-8") as fh:
        return [ln for ln in fh.read().splitlines()
                if ln and not ln.startswith("#") and not ln[0].isalpha()]


# ------------------------------------------------------------- exit code 2


def test_missing_spec_file_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    rc = cli.main(["solve", "--spec", str(missing), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_fixture_exits_2(tmp_path, capsys):
    rc = cli.main(["solve", "--spec", "fixture:bogus", "--out", str(tmp_path)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["simulate", "check"])
def test_seed_required_exits_2(tmp_path, capsys, command):
    rc = cli.main([command, "--spec", "fixture:zero", "--out", str(tmp_path)])
    assert rc == 2
    assert "--seed" in capsys.readouterr().err


def test_inadmissible_schedule_exits_2(tmp_path, capsys):
    sched = tmp_path / "sched.json"
    sched.write_text("[[0.2, 99.0]]")  # size far above k_max
    rc = cli.main(["simulate", "--spec", "fixture:geometric",
                   "--out", str(tmp_path / "o"), "--seed", "1",
                   "--policy", "schedule", "--schedule", str(sched)])
    assert rc == 2
    assert "inadmissible schedule" in capsys.readouterr().err


def test_schedule_flag_needs_schedule_policy(tmp_path, capsys):
    sched = tmp_path / "sched.json"
    sched.write_text("[[0.2, 0.3]]")
    rc = cli.main(["simulate", "--spec", "fixture:geometric",
                   "--out", str(tmp_path / "o"), "--seed", "1",
                   "--schedule", str(sched)])
    assert rc == 2


def test_t0_beyond_horizon_exits_2(tmp_path, capsys):
    rc = cli.main(["solve", "--spec", "fixture:closed-form",
                   "--out", str(tmp_path), "--t0", "2.0"])
    assert rc == 2
    assert "t0" in capsys.readouterr().err


# ------------------------------------------------------------------- solve


def test_solve_zero_fixture_artifacts(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["solve", "--spec", "fixture:zero", "--out", str(out),
                   "--nx", "41", "--nt", "20", "--nk", "9"])
    assert rc == 0
    summary = read_json(out / "summary.json")
    assert summary["n_action_nodes"] == 0
    assert summary["grid"] == {"x_min": 0.1, "x_max": 2.1, "n_x": 41,
                               "n_t": 20, "n_k": 9}
    assert data_rows(out / "boundary.csv") == []  # empty action region
    assert data_rows(out / "policy.csv") == []
    v_col = {row.split(",")[2] for row in data_rows(out / "surface.csv")}
    assert v_col == {"0.0"}


def test_solve_closed_form_matches_formula(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["solve", "--spec", "fixture:closed-form", "--out", str(out),
                   "--nx", "51", "--nt", "400", "--nk", "5"])
    assert rc == 0
    summary = read_json(out / "summary.json")
    assert summary["max_rel_error_vs_formula"] <= 1e-3
    assert summary["min_obstacle_gap"] >= -1e-8
    assert summary["landing_violations"] == 0
    assert len(summary["config_hash"]) == 64


# ---------------------------------------------------------------- validate


def test_validate_intervention_passes(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["validate", "--spec", "fixture:intervention", "--out", str(out)])
    assert rc == 0
    payload = read_json(out / "validation.json")
    assert payload["report"]["passed"] is True
    assert (out / "validation.txt").read_text().rstrip().endswith("PASSED")


def test_validate_negative_hazard_fails(tmp_path):
    bad = replace(closed_form_spec(), beta=Curve.table([0.0, 1.0], [0.2, -0.1]))
    spec_path = tmp_path / "bad.json"
    bad.to_json(spec_path)
    out = tmp_path / "o"
    rc = cli.main(["validate", "--spec", str(spec_path), "--out", str(out)])
    assert rc == 1
    assert read_json(out / "validation.json")["report"]["passed"] is False


# ------------------------------------------------------------------- check


def test_check_zero_fixture_vacuous(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["check", "--spec", "fixture:zero", "--out", str(out),
                   "--seed", "9", "--nx", "31", "--nt", "10", "--nk", "5"])
    assert rc == 0
    payload = read_json(out / "checks.json")
    assert payload["passed"] is True
    by_name = {c["name"]: c for c in payload["checks"]}
    assert by_name["smooth_fit"]["vacuous"] is True
    assert "x_min > 0" in by_name["obstacle"]["domain_restriction"]
    assert "ALL CHECKS PASSED" in (out / "checks.txt").read_text()


def test_check_corrupted_surface_exits_1(tmp_path):
    sol = tmp_path / "sol"
    rc = cli.main(["solve", "--spec", "fixture:intervention", "--out", str(sol),
                   "--nx", "81", "--nt", "40", "--nk", "21"])
    assert rc == 0
    surf = sol / "surface.csv"
    lines = surf.read_text().splitlines()
    for n, ln in enumerate(lines):
        if ln.startswith("#") or ln.startswith("t,"):
            continue
        parts = ln.split(",")
        parts[2] = repr(float(parts[3]) - 1e-3)  # push V below IV
        lines[n] = ",".join(parts)
        break
    surf.write_text("\n".join(lines) + "\n")
    out = tmp_path / "o"
    rc = cli.main(["check", "--spec", "fixture:intervention", "--out", str(out),
                   "--seed", "3", "--nk", "21", "--surface", str(sol)])
    assert rc == 1
    payload = read_json(out / "checks.json")
    assert payload["passed"] is False
    by_name = {c["name"]: c for c in payload["checks"]}
    assert by_name["obstacle"]["passed"] is False
    # surface mode runs only the checks that read the artifact alone
    assert set(by_name) == {"obstacle", "smooth_fit", "theta_structure"}


# ---------------------------------------------------------------- simulate


def test_simulate_schedule_artifacts(tmp_path):
    sched = tmp_path / "sched.json"
    sched.write_text("[[0.2, 0.3], [0.8, 0.5]]")
    out = tmp_path / "o"
    rc = cli.main(["simulate", "--spec", "fixture:geometric", "--out", str(out),
                   "--seed", "11", "--paths", "2000", "--dt", "0.02",
                   "--policy", "schedule", "--schedule", str(sched),
                   "--record-paths", "2"])
    assert rc == 0
    payload = read_json(out / "mc_report.json")
    assert payload["control"] == {"kind": "schedule",
                                  "pairs": [[0.2, 0.3], [0.8, 0.5]]}
    red = payload["reduction"]
    assert red["n_paths"] == 2000 and red["seed"] == 11
    assert red["passed"] is True
    assert abs(red["difference"]) <= 3.0 * red["combined_se"]
    assert (out / "path_000.csv").exists() and (out / "path_001.csv").exists()
    assert not (out / "path_002.csv").exists()
    text = (out / "path_000.csv").read_text()
    assert "# seed=11" in text
    assert "# default_time=" in text  # default gates costs, not the path
    flagged = [r for r in data_rows(out / "path_000.csv")
               if r.split(",")[2] == "1"]
    assert [r.split(",")[0] for r in flagged] == ["0.2", "0.8"]
    assert [r.split(",")[3] for r in flagged] == ["0.3", "0.5"]


def test_simulate_feedback_surface_roundtrip(tmp_path):
    grid_flags = ["--nx", "81", "--nt", "40", "--nk", "21"]
    sol = tmp_path / "sol"
    rc = cli.main(["solve", "--spec", "fixture:intervention",
                   "--out", str(sol)] + grid_flags)
    assert rc == 0
    common = ["simulate", "--spec", "fixture:intervention", "--seed", "4",
              "--paths", "400", "--dt", "0.02", "--x0", "0.15",
              "--policy", "feedback"] + grid_flags
    fresh, loaded = tmp_path / "fresh", tmp_path / "loaded"
    assert cli.main(common + ["--out", str(fresh)]) == 0
    assert cli.main(common + ["--out", str(loaded), "--surface", str(sol)]) == 0
    a = read_json(fresh / "mc_report.json")
    b = read_json(loaded / "mc_report.json")
    assert a["control"]["source"] == "solved"
    assert b["control"]["source"] == "loaded-surface"
    # repr round-trip through the CSV is exact, so the policies coincide
    assert a["reduction"] == b["reduction"]


# ----------------------------------------------------------------- converge


def test_converge_writes_ladder(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["converge", "--spec", "fixture:closed-form", "--out", str(out),
                   "--nx", "31", "--nt", "25", "--nk", "5", "--levels", "3"])
    assert rc == 0
    payload = read_json(out / "convergence.json")
    study = payload["study"]
    assert [row["n_t"] for row in study["rows"]] == [25, 50, 100]
    assert len(study["ratios"]) == 1
    assert 1.6 <= study["ratios"][0] <= 2.4
    assert len(study["reference_errors"]) == 3
    txt = (out / "convergence.txt").read_text()
    assert txt.startswith("# config_hash=")
    assert "ratios=" in txt


def test_converge_zero_fixture_inf_ratio_serializes(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["converge", "--spec", "fixture:zero", "--out", str(out),
                   "--nx", "21", "--nt", "10", "--nk", "5", "--levels", "3"])
    assert rc == 0
    study = read_json(out / "convergence.json")["study"]
    assert study["ratios"] == ["inf"]  # strict JSON: non-finite as repr text


# ------------------------------------------------------------ repeatability


def test_reruns_are_byte_identical(tmp_path):
    def run_twice(cmd, extra):
        dirs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{cmd}_{tag}"
            rc = cli.main([cmd, "--out", str(out)] + extra)
            assert rc == 0
            dirs.append(out)
        return dirs

    jobs = [
        ("solve", ["--spec", "fixture:zero", "--nx", "31", "--nt", "10",
                   "--nk", "5"]),
        ("simulate", ["--spec", "fixture:geometric", "--seed", "7",
                      "--paths", "300", "--dt", "0.02", "--record-paths", "1"]),
        ("converge", ["--spec", "fixture:closed-form", "--nx", "31",
                      "--nt", "25", "--nk", "5", "--levels", "2"]),
    ]
    for cmd, extra in jobs:
        d1, d2 = run_twice(cmd, extra)
        names = sorted(p.name for p in d1.iterdir())
        assert names == sorted(p.name for p in d2.iterdir())
        for name in names:
            assert filecmp.cmp(d1 / name, d2 / name, shallow=False), (cmd, name)


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "impulse_qvi.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for word in ("solve", "simulate", "validate", "check", "converge"):
        assert word in proc.stdout


def test_installed_entry_point():
    proc = subprocess.run(["impulse-qvi", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
