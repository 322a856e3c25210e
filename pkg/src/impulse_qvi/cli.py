"""Batch front end: solve | simulate | validate | check | converge.

Loads a model spec (a JSON file, or ``fixture:NAME`` for a built-in), runs
one subcommand, and writes every artifact into --out.  Artifacts embed the
config hash and the seed, and rerunning the same invocation reproduces them
byte for byte.  Structured outputs are JSON, arrays are CSV; nothing binary.

Exit codes: 0 success, 1 check failure, 2 usage or spec error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .diagnostics import (check_obstacle, check_smooth_fit,
                          check_theta_structure, convergence_study,
                          standard_checks)
from .dynamics import (FeedbackPolicy, ImpulseSchedule,
                       filtration_reduction_check, simulate)
from .fixtures import FIXTURES, fixture_reference, get_fixture, suggested_grid
from .model import ModelSpec, validate
from .solver import (Grid, PolicyMap, RegionMap, ValueSurface, solve,
                     write_boundary_csv, write_policy_csv, write_surface_csv)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

# the smooth-fit hypothesis needs uniform ellipticity, which the state
# multiplying the volatility destroys at x=0; every report carries this
_DOMAIN_NOTE = "diagnostics restricted to x_min > 0 (ellipticity proxy sigma_tilde*x_min)"


class UsageError(Exception):
    """Bad flags, missing files, or an inadmissible input: exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """One resolved CLI invocation (flags + loaded spec + derived grid)."""

    command: str
    spec_source: str
    spec: ModelSpec
    out_dir: str
    grid: Grid
    n_paths: int
    dt: float
    seed: int
    tol_inner: float
    eps_region: float | None
    t0: float
    x0: float
    schedule_pairs: tuple | None
    policy: str
    surface_path: str | None
    record_paths: int
    levels: int

    def hash_payload(self) -> dict:
        payload = {
            "command": self.command,
            "spec_source": self.spec_source,
            "spec": self.spec.to_dict(),
            "grid": self.grid.to_dict(),
            "n_paths": self.n_paths,
            "dt": self.dt,
            "seed": self.seed,
            "tol_inner": self.tol_inner,
            "eps_region": self.eps_region,
            "t0": self.t0,
            "x0": self.x0,
            "schedule": None if self.schedule_pairs is None else list(self.schedule_pairs),
            "policy": self.policy,
            "record_paths": self.record_paths,
            "levels": self.levels,
        }
        if self.surface_path is not None:
            with open(self.surface_path, "rb") as fh:
                payload["surface_sha256"] = hashlib.sha256(fh.read()).hexdigest()
        return payload

    def config_hash(self) -> str:
        blob = json.dumps(self.hash_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _load_spec(source: str) -> ModelSpec:
    if source.startswith("fixture:"):
        name = source[len("fixture:"):]
        try:
            return get_fixture(name)
        except KeyError as exc:
            raise UsageError(str(exc)) from None
    if not os.path.exists(source):
        raise UsageError(f"spec file not found: {source}")
    try:
        return ModelSpec.from_json(source)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid spec {source}: {exc}") from None


def _build_grid(args, source: str) -> Grid:
    if source.startswith("fixture:"):
        base = suggested_grid(source[len("fixture:"):])
        nx = base.n_x if args.nx is None else args.nx
        nt = base.n_t if args.nt is None else args.nt
        nk = base.n_k if args.nk is None else args.nk
        xmin = base.x_min if args.xmin is None else args.xmin
        xmax = base.x_max if args.xmax is None else args.xmax
    else:
        nx = 201 if args.nx is None else args.nx
        nt = 200 if args.nt is None else args.nt
        nk = 33 if args.nk is None else args.nk
        xmin = 0.1 if args.xmin is None else args.xmin
        xmax = 4.1 if args.xmax is None else args.xmax
    if min(nx, nt, nk) <= 0:
        raise UsageError("--nx, --nt, --nk must be positive")
    if xmin <= 0.0:
        raise UsageError("--xmin must be > 0 (ellipticity restriction)")
    try:
        return Grid(xmin, xmax, nx, nt, nk)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _build_config(args) -> RunConfig:
    spec = _load_spec(args.spec)
    grid = _build_grid(args, args.spec)
    mc_command = args.command in ("simulate", "check")
    if mc_command and args.seed is None:
        raise UsageError(f"--seed is required for the {args.command} subcommand")
    seed = 0 if args.seed is None else args.seed
    if args.paths <= 0:
        raise UsageError("--paths must be positive")
    if args.dt <= 0.0:
        raise UsageError("--dt must be positive")
    if args.tol_inner <= 0.0:
        raise UsageError("--tol-inner must be positive")
    if not (0.0 <= args.t0 < spec.T):
        raise UsageError(f"--t0 must lie in [0, T) with T={spec.T}")
    if args.record_paths < 0:
        raise UsageError("--record-paths must be >= 0")
    if args.levels < 2:
        raise UsageError("--levels must be >= 2")

    schedule_pairs = None
    surface_path = None
    if args.command == "simulate":
        if args.policy == "schedule":
            if args.schedule is None:
                raise UsageError("--policy schedule needs --schedule PATH")
            if not os.path.exists(args.schedule):
                raise UsageError(f"schedule file not found: {args.schedule}")
            sched = ImpulseSchedule.from_json(args.schedule)
            try:
                sched.validate(spec, t0=args.t0)
            except ValueError as exc:
                raise UsageError(f"inadmissible schedule: {exc}") from None
            schedule_pairs = tuple((float(t), float(s))
                                   for t, s in zip(sched.times, sched.sizes))
        elif args.schedule is not None:
            raise UsageError("--schedule is only meaningful with --policy schedule")
        if args.policy == "feedback" and args.surface is not None:
            surface_path = os.path.join(args.surface, "surface.csv")
            if not os.path.exists(surface_path):
                raise UsageError(f"surface file not found: {surface_path}")
    elif args.command == "check" and args.surface is not None:
        surface_path = os.path.join(args.surface, "surface.csv")
        if not os.path.exists(surface_path):
            raise UsageError(f"surface file not found: {surface_path}")

    return RunConfig(
        command=args.command,
        spec_source=args.spec,
        spec=spec,
        out_dir=args.out,
        grid=grid,
        n_paths=args.paths,
        dt=args.dt,
        seed=seed,
        tol_inner=args.tol_inner,
        eps_region=args.eps_region,
        t0=args.t0,
        x0=args.x0,
        schedule_pairs=schedule_pairs,
        policy=args.policy,
        surface_path=surface_path,
        record_paths=args.record_paths,
        levels=args.levels,
    )


# ---------------------------------------------------------------- artifacts


def _sanitize(obj):
    """Strict-JSON payloads: non-finite floats become their repr strings."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_sanitize(payload), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _txt_header(fh, cfg: RunConfig, chash: str) -> None:
    fh.write(f"# config_hash={chash}\n# seed={cfg.seed}\n# {_DOMAIN_NOTE}\n")


def _load_solution(surface_path: str, n_k: int, costs, eps_region: float):
    """Rebuild (surface, regions, policy) from a solve artifact
    (columns t,x,V,IV,label,xi0)."""
    ts, xs, vs, ivs, lab, xi = [], [], [], [], [], []
    with open(surface_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("t,"):
                continue
            parts = line.split(",")
            ts.append(float(parts[0]))
            xs.append(float(parts[1]))
            vs.append(float(parts[2]))
            ivs.append(float(parts[3]))
            lab.append(parts[4] == "action")
            xi.append(float(parts[5]) if parts[5] else math.nan)
    tn = np.unique(np.asarray(ts))
    xn = np.unique(np.asarray(xs))
    shape = (tn.size, xn.size)
    if tn.size * xn.size != len(lab):
        raise UsageError(f"surface file is not a full grid: {surface_path}")
    grid = Grid(float(xn[0]), float(xn[-1]), xn.size, tn.size - 1, n_k)
    surface = ValueSurface(grid, float(tn[-1]),
                           np.asarray(vs).reshape(shape),
                           np.asarray(ivs).reshape(shape),
                           {"eps_region": eps_region})
    regions = RegionMap(np.asarray(lab, dtype=bool).reshape(shape), eps_region)
    policy = PolicyMap(np.asarray(xi, dtype=float).reshape(shape),
                       grid.k_nodes(costs))
    return surface, regions, policy


# --------------------------------------------------------------- subcommands


def cmd_solve(cfg: RunConfig) -> int:
    chash = cfg.config_hash()
    res = solve(cfg.spec, cfg.grid, tol_inner=cfg.tol_inner, eps_region=cfg.eps_region)
    meta = {"config_hash": chash, "seed": cfg.seed}
    write_surface_csv(os.path.join(cfg.out_dir, "surface.csv"),
                      res.surface, res.regions, res.policy, meta)
    write_boundary_csv(os.path.join(cfg.out_dir, "boundary.csv"),
                       res.surface, res.regions, meta)
    write_policy_csv(os.path.join(cfg.out_dir, "policy.csv"),
                     res.surface, res.regions, res.policy, meta)
    md = res.surface.metadata
    summary = {
        "command": "solve",
        "config_hash": chash,
        "seed": cfg.seed,
        "spec_source": cfg.spec_source,
        "grid": cfg.grid.to_dict(),
        "T": cfg.spec.T,
        "n_action_nodes": int(res.regions.labels.sum()),
        "min_obstacle_gap": float(np.min(res.surface.values - res.surface.iv_values)),
        "landing_violations": int(md["landing_violations"]),
        "max_inner_iterations": int(max(md["inner_iterations"], default=0)),
        "max_inner_residual": float(md["max_inner_residual"]),
        "c1_bound": float(md["c1_bound"]),
        "tol_inner": cfg.tol_inner,
        "eps_region": float(md["eps_region"]),
    }
    ref = (fixture_reference(cfg.spec_source[len("fixture:"):])
           if cfg.spec_source.startswith("fixture:") else None)
    if ref is not None:
        tn = res.surface.t_nodes()
        xn = cfg.grid.x_nodes()
        exact = np.array([[ref(t, x) for x in xn] for t in tn])
        err = np.abs(res.surface.values - exact)
        scale = np.maximum(np.abs(exact), 1e-12)
        summary["max_error_vs_formula"] = float(np.max(err))
        summary["max_rel_error_vs_formula"] = float(np.max(err / scale))
    _write_json(os.path.join(cfg.out_dir, "summary.json"), summary)
    print(f"solve: wrote surface.csv boundary.csv policy.csv summary.json to {cfg.out_dir}")
    return EXIT_OK


def _resolve_control(cfg: RunConfig):
    if cfg.policy == "none":
        return None, {"kind": "none"}
    if cfg.policy == "schedule":
        pairs = list(cfg.schedule_pairs or ())
        control = ImpulseSchedule(np.array([p[0] for p in pairs]),
                                  np.array([p[1] for p in pairs]))
        return control, {"kind": "schedule", "pairs": pairs}
    if cfg.surface_path is not None:
        loaded = _load_solution(cfg.surface_path, cfg.grid.n_k, cfg.spec.costs,
                                cfg.eps_region or 10.0 * cfg.tol_inner)
        return FeedbackPolicy.from_solution(*loaded), {
            "kind": "feedback", "source": "loaded-surface"}
    res = solve(cfg.spec, cfg.grid, tol_inner=cfg.tol_inner, eps_region=cfg.eps_region)
    return FeedbackPolicy.from_solution(res.surface, res.regions, res.policy), {
        "kind": "feedback", "source": "solved"}


def cmd_simulate(cfg: RunConfig) -> int:
    chash = cfg.config_hash()
    control, control_desc = _resolve_control(cfg)
    report = filtration_reduction_check(cfg.spec, cfg.t0, cfg.x0, control,
                                        cfg.dt, cfg.n_paths, cfg.seed)
    payload = {
        "command": "simulate",
        "config_hash": chash,
        "seed": cfg.seed,
        "spec_source": cfg.spec_source,
        "t0": cfg.t0,
        "x0": cfg.x0,
        "dt": cfg.dt,
        "n_paths": cfg.n_paths,
        "control": control_desc,
        "reduction": report.to_dict(),
    }
    _write_json(os.path.join(cfg.out_dir, "mc_report.json"), payload)
    for i in range(cfg.record_paths):
        rec = simulate(cfg.spec, cfg.t0, cfg.x0, control, cfg.dt, cfg.seed,
                       path_index=i)
        meta = {
            "config_hash": chash,
            "seed": cfg.seed,
            "path_index": i,
            "t0": repr(float(cfg.t0)),
            "x0": repr(float(cfg.x0)),
            "default_time": repr(rec.default_time),
            "realized_cost": repr(rec.realized_cost),
        }
        with open(os.path.join(cfg.out_dir, f"path_{i:03d}.csv"),
                  "w", encoding="utf-8", newline="\n") as fh:
            rec.to_csv(fh, meta)
    print(f"simulate: cost_g={report.cost_g.estimate:.6g} (se {report.cost_g.std_error:.2g}) "
          f"cost_f={report.cost_f.estimate:.6g} (se {report.cost_f.std_error:.2g}) "
          f"difference={report.difference:.3g} agree={report.passed}")
    print(f"simulate: wrote mc_report.json and {cfg.record_paths} path files to {cfg.out_dir}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    chash = cfg.config_hash()
    report = validate(cfg.spec, cfg.grid.x_nodes(),
                      k_sample=cfg.grid.k_nodes(cfg.spec.costs))
    payload = {
        "command": "validate",
        "config_hash": chash,
        "seed": cfg.seed,
        "spec_source": cfg.spec_source,
        "report": report.to_dict(),
    }
    _write_json(os.path.join(cfg.out_dir, "validation.json"), payload)
    with open(os.path.join(cfg.out_dir, "validation.txt"),
              "w", encoding="utf-8", newline="\n") as fh:
        _txt_header(fh, cfg, chash)
        for e in report.entries:
            status = "PASS" if e.passed else "FAIL"
            thr = "" if e.threshold is None else f" threshold={e.threshold!r}"
            fh.write(f"{e.name:24s} {status}  value={e.value!r}{thr}  {e.note}\n")
        for w in report.warnings:
            fh.write(f"warning: {w}\n")
        fh.write("PASSED\n" if report.passed else "FAILED\n")
    print(f"validate: {'PASSED' if report.passed else 'FAILED'} "
          f"({len(report.entries)} entries, {len(report.warnings)} warnings)")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_check(cfg: RunConfig) -> int:
    chash = cfg.config_hash()
    if cfg.surface_path is not None:
        # diagnose an existing artifact: only the checks that read the
        # surface alone (no re-solve for bounds/regularity comparisons)
        surface, regions, policy = _load_solution(
            cfg.surface_path, cfg.grid.n_k, cfg.spec.costs,
            cfg.eps_region or 10.0 * cfg.tol_inner)
        reports = [
            check_obstacle(surface, cfg.spec),
            check_smooth_fit(surface, regions, policy, cfg.spec),
            check_theta_structure(surface, regions, policy, cfg.spec),
        ]
    else:
        reports = standard_checks(cfg.spec, cfg.grid, tol_inner=cfg.tol_inner,
                                  eps_region=cfg.eps_region, seed=cfg.seed)
    entries = []
    for rep in reports:
        d = rep.to_dict()
        d["domain_restriction"] = _DOMAIN_NOTE
        entries.append(d)
    all_passed = all(r.passed for r in reports)
    payload = {
        "command": "check",
        "config_hash": chash,
        "seed": cfg.seed,
        "spec_source": cfg.spec_source,
        "grid": cfg.grid.to_dict(),
        "domain_restriction": _DOMAIN_NOTE,
        "passed": all_passed,
        "checks": entries,
    }
    _write_json(os.path.join(cfg.out_dir, "checks.json"), payload)
    with open(os.path.join(cfg.out_dir, "checks.txt"),
              "w", encoding="utf-8", newline="\n") as fh:
        _txt_header(fh, cfg, chash)
        for rep in reports:
            fh.write(rep.line() + "\n")
        fh.write("ALL CHECKS PASSED\n" if all_passed else "CHECK FAILURES\n")
    for rep in reports:
        print(rep.line())
    return EXIT_OK if all_passed else EXIT_CHECK_FAILED


def cmd_converge(cfg: RunConfig) -> int:
    chash = cfg.config_hash()
    grids = [Grid(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n_x,
                  cfg.grid.n_t * 2**i, cfg.grid.n_k)
             for i in range(cfg.levels)]
    ref = (fixture_reference(cfg.spec_source[len("fixture:"):])
           if cfg.spec_source.startswith("fixture:") else None)
    study = convergence_study(cfg.spec, grids, reference=ref,
                              tol_inner=cfg.tol_inner)
    payload = {
        "command": "converge",
        "config_hash": chash,
        "seed": cfg.seed,
        "spec_source": cfg.spec_source,
        "levels": cfg.levels,
        "study": study.to_dict(),
    }
    _write_json(os.path.join(cfg.out_dir, "convergence.json"), payload)
    with open(os.path.join(cfg.out_dir, "convergence.txt"),
              "w", encoding="utf-8", newline="\n") as fh:
        _txt_header(fh, cfg, chash)
        fh.write("n_t,dt,sup_diff_to_next,reference_error\n")
        for i, row in enumerate(study.rows):
            diff = row.get("sup_diff_to_next")
            ref_err = study.reference_errors[i] if study.reference_errors else None
            fh.write(f"{row['n_t']},{row['dt']!r},"
                     f"{'' if diff is None else repr(diff)},"
                     f"{'' if ref_err is None else repr(ref_err)}\n")
        fh.write(f"ratios={[round(r, 4) for r in study.ratios]!r}\n")
    print(f"converge: ratios {study.ratios}")
    return EXIT_OK


_DISPATCH = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "check": cmd_check,
    "converge": cmd_converge,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impulse-qvi",
        description="Finite-horizon impulse-control QVI: solve, simulate, "
                    "validate, check, converge.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("solve", "backward QVI sweep; writes surface/boundary/policy CSVs and a summary"),
        ("simulate", "controlled SDE paths with default; writes MC report and path CSVs"),
        ("validate", "standing-hypothesis checks on the model spec"),
        ("check", "solve then run all surface diagnostics; exit 1 on failure"),
        ("converge", "time-step refinement ladder with Cauchy ratios"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--spec", required=True,
                       help="spec JSON path, or fixture:NAME "
                            f"(known: {', '.join(sorted(FIXTURES))})")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--nx", type=int, default=None, help="space nodes")
        p.add_argument("--nt", type=int, default=None, help="time steps")
        p.add_argument("--nk", type=int, default=None, help="injection grid nodes")
        p.add_argument("--xmin", type=float, default=None, help="left edge (> 0)")
        p.add_argument("--xmax", type=float, default=None, help="right edge")
        p.add_argument("--paths", type=int, default=10000, help="MC sample size")
        p.add_argument("--dt", type=float, default=0.01, help="simulation step")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (required for simulate and check)")
        p.add_argument("--tol-inner", type=float, default=1e-9,
                       help="impulse projection tolerance")
        p.add_argument("--eps-region", type=float, default=None,
                       help="action-label threshold on V - IV")
        p.add_argument("--t0", type=float, default=0.0, help="simulation start time")
        p.add_argument("--x0", type=float, default=1.0, help="simulation start state")
        if name == "simulate":
            p.add_argument("--policy", choices=("none", "schedule", "feedback"),
                           default="none", help="control to simulate")
            p.add_argument("--schedule", default=None,
                           help="JSON [[time, size], ...] for --policy schedule")
            p.add_argument("--surface", default=None,
                           help="solve output dir to reuse for --policy feedback")
            p.add_argument("--record-paths", type=int, default=3,
                           help="number of individual path CSVs to write")
        elif name == "check":
            p.add_argument("--surface", default=None,
                           help="solve output dir to diagnose instead of re-solving "
                                "(surface-only checks)")
            p.set_defaults(policy="none", schedule=None, record_paths=0)
        else:
            p.set_defaults(policy="none", schedule=None, surface=None,
                           record_paths=0)
        if name == "converge":
            p.add_argument("--levels", type=int, default=3,
                           help="refinement levels (n_t doubles each level)")
        else:
            p.set_defaults(levels=2)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _build_config(args)
        os.makedirs(cfg.out_dir, exist_ok=True)
        return _DISPATCH[cfg.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
