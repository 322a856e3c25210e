"""Controlled paths, default sampling, and Monte Carlo cost functionals.

Paths follow the ratio SDE by Euler-Maruyama on a uniform step grid with
impulse times inserted exactly (never rounded).  The default time is the
first jump of a Cox clock with intensity beta(t), sampled by exact
inversion of the cumulative hazard; paths themselves are default-free
and the default only truncates the realized cost.

Two cost representations are computed from the same Brownian numbers:

* cost_g: running f up to default-or-horizon, terminal g1 on survival,
  default penalty g2 at the default time, plus undiscounted injection
  costs up to default-or-horizon;
* cost_f: survival-discounted running gain f - beta*g2 over the whole
  horizon, discounted terminal g1, and discounted injection costs.

Their expectations agree; the gap divided by the combined standard
error is the reduction check.

Per-path RNG streams derive from (master seed, path index), so results
are reproducible and growing the path count never perturbs earlier
paths.  Each path draws its default exponential first and its Brownian
row second; estimators that ignore the default still draw it, keeping
the Brownian numbers common across both representations.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import (ModelSpec, drift, diffusion, injection_cost,
                    invert_hazard, survival, survival_grid)

_CHUNK = 16384


class ImpulseEvent(NamedTuple):
    time: float
    size: float
    state_before: float
    state_after: float


class MCEstimate(NamedTuple):
    estimate: float
    std_error: float


@dataclass(frozen=True)
class ImpulseSchedule:
    """Deterministic injection times and sizes, one injection per time."""

    times: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.sizes, dtype=float)
        if t.ndim != 1 or t.shape != s.shape:
            raise ValueError("times and sizes must be matching 1-d arrays")
        t.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sizes", s)

    def validate(self, spec: ModelSpec, t0: float = 0.0) -> None:
        """Raise ValueError unless the schedule is admissible from t0."""
        if self.times.size == 0:
            return
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("impulse times must be strictly increasing")
        if self.times[0] < t0 or self.times[-1] >= spec.T:
            raise ValueError("impulse times must lie in [t0, T)")
        c = spec.costs
        if np.any(self.sizes < c.k_min) or np.any(self.sizes > c.k_max):
            raise ValueError("impulse sizes must lie in [k_min, k_max]")

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump([[float(t), float(s)] for t, s in zip(self.times, self.sizes)], fh)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ImpulseSchedule":
        with open(path, "r", encoding="utf-8") as fh:
            pairs = json.load(fh)
        pairs = [(float(t), float(s)) for t, s in pairs]
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


@dataclass
class PathRecord:
    """One simulated path: grid times, post-impulse states, applied impulses,
    the sampled default time (inf if beyond the horizon), and the realized
    cost in the default-truncated representation."""

    times: np.ndarray
    states: np.ndarray
    impulses_applied: list
    default_time: float
    realized_cost: float

    def to_csv(self, fh, meta: dict | None = None) -> None:
        """Long format: time, state, impulse_flag, impulse_size."""
        flags = {}
        for ev in self.impulses_applied:
            flags[float(ev.time)] = float(ev.size)
        if meta:
            for key in sorted(meta):
                fh.write(f"# {key}={meta[key]}\n")
        fh.write("time,state,impulse_flag,impulse_size\n")
        for t, x in zip(self.times, self.states):
            k = flags.get(float(t))
            if k is None:
                fh.write(f"{float(t)!r},{float(x)!r},0,0.0\n")
            else:
                fh.write(f"{float(t)!r},{float(x)!r},1,{k!r}\n")


class FeedbackPolicy:
    """Markov injection rule read off a solved surface.

    Queries snap (t, x) to the nearest grid node; action nodes return the
    recorded injection size, continuation nodes return 0.  A query is made
    at most once per grid time, so no two injections share an instant.
    """

    def __init__(self, t_nodes, x_nodes, action, xi0):
        self.t_nodes = np.asarray(t_nodes, dtype=float)
        self.x_nodes = np.asarray(x_nodes, dtype=float)
        self.action = np.asarray(action, dtype=bool)
        self.xi0 = np.asarray(xi0, dtype=float)
        if self.action.shape != (self.t_nodes.size, self.x_nodes.size):
            raise ValueError("action mask shape must be (n_t_nodes, n_x_nodes)")
        if self.xi0.shape != self.action.shape:
            raise ValueError("xi0 shape must match the action mask")

    @classmethod
    def from_solution(cls, surface, regions, policy) -> "FeedbackPolicy":
        return cls(surface.t_nodes(), surface.grid.x_nodes(), regions.labels, policy.xi0)

    def injections(self, t: float, x: np.ndarray) -> np.ndarray:
        j = int(np.argmin(np.abs(self.t_nodes - t)))
        h = self.x_nodes[1] - self.x_nodes[0]
        ix = np.clip(np.rint((np.asarray(x) - self.x_nodes[0]) / h), 0, self.x_nodes.size - 1).astype(int)
        return np.where(self.action[j, ix], self.xi0[j, ix], 0.0)


def sample_default(spec: ModelSpec, t0: float, seed) -> float:
    """Draw one default time from t0 by exact hazard inversion.

    Returns inf when the exponential clock exceeds the total hazard on
    [t0, T], i.e. default does not happen before the horizon.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e = rng.standard_exponential()
    return float(invert_hazard(spec.beta, t0, e, spec.T))


def _time_grid(t0: float, t_end: float, dt: float, extra=()) -> np.ndarray:
    if t_end < t0:
        raise ValueError("need t_end >= t0")
    if t_end == t0:
        return np.array([t0])
    n = max(1, math.ceil((t_end - t0) / dt - 1e-9))
    base = t0 + dt * np.arange(n + 1)
    base[-1] = t_end
    pts = [base]
    extra = np.asarray(extra, dtype=float)
    if extra.size:
        pts.append(extra[(extra >= t0) & (extra <= t_end)])
    return np.unique(np.concatenate(pts))


@dataclass
class PathBatch:
    """Raw output of the batch engine for one contiguous block of paths."""

    times: np.ndarray
    final_states: np.ndarray
    default_times: np.ndarray
    cost_g: np.ndarray
    run_f: np.ndarray
    imp_f: np.ndarray
    histories: np.ndarray | None = None
    events: list | None = None


def _worker_count(n_chunks: int) -> int:
    cap = os.environ.get("IMPULSE_QVI_THREADS", "")
    try:
        cap = max(1, int(cap))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_chunks))


def _prepare_control(spec, control, t0, times):
    """Return (schedule index->size map, policy or None)."""
    if control is None:
        return {}, None
    if isinstance(control, ImpulseSchedule):
        control.validate(spec, t0)
        at = {}
        idx = np.searchsorted(times, control.times)
        for i, t_imp, k in zip(idx, control.times, control.sizes):
            if i >= times.size or times[i] != t_imp:
                continue  # impulse after the simulated window
            at[int(i)] = float(k)
        return at, None
    if hasattr(control, "injections"):
        return {}, control
    raise ValueError("control must be None, an ImpulseSchedule, or a feedback policy")


def _run_chunk(spec, t0, x0, control, times, seed, start, count, record):
    u = spec.utilities
    costs = spec.costs
    n_step = times.size - 1
    dts = np.diff(times)
    rho = survival_grid(spec, t0, times)
    beta_t = np.asarray(spec.beta(times), dtype=float)

    e_draws = np.empty(count)
    z = np.empty((count, n_step))
    for j in range(count):
        rng = np.random.default_rng([seed, start + j])
        e_draws[j] = rng.standard_exponential()
        if n_step:
            z[j] = rng.standard_normal(n_step)
    tau = np.atleast_1d(invert_hazard(spec.beta, t0, e_draws, spec.T))

    sched_at, policy = _prepare_control(spec, control, t0, times)

    x = np.full(count, float(x0))
    run_g = np.zeros(count)
    run_f = np.zeros(count)
    imp_g = np.zeros(count)
    imp_f = np.zeros(count)
    g2_at_tau = np.zeros(count)
    hist = np.empty((count, times.size)) if record else None
    events = [[] for _ in range(count)] if record else None

    for k in range(times.size):
        tk = times[k]
        # injection at tk: scheduled, or queried from the policy (never at the
        # final grid time, so no injection can ride on the evaluation instant)
        xi = None
        if k in sched_at:
            xi = np.full(count, sched_at[k])
        elif policy is not None and k < n_step:
            xi = np.asarray(policy.injections(tk, x), dtype=float)
        if xi is not None and np.any(xi > 0):
            hit = xi > 0
            if record:
                before = x.copy()
            x = np.where(hit, x + xi, x)
            alive = tau >= tk
            imp_g += np.where(hit & alive, injection_cost(xi, costs), 0.0)
            imp_f += np.where(hit, rho[k] * injection_cost(xi, costs), 0.0)
            if record:
                for j in np.nonzero(hit)[0]:
                    events[j].append(ImpulseEvent(float(tk), float(xi[j]), float(before[j]), float(x[j])))
        if record:
            hist[:, k] = x
        if k == n_step:
            break
        d = dts[k]
        fx = np.asarray(u.f(x), dtype=float)
        g2x = np.asarray(u.g2(x), dtype=float)
        # left-rectangle running terms; the default-truncated one clips the
        # last partial interval at tau exactly
        overlap = np.clip(np.minimum(times[k + 1], tau) - tk, 0.0, d)
        run_g += fx * overlap
        run_f += rho[k] * (fx - beta_t[k] * g2x) * d
        at_tau = (tau >= tk) & (tau < times[k + 1])
        if np.any(at_tau):
            g2_at_tau[at_tau] = g2x[at_tau]
        x = x + np.asarray(drift(tk, x, spec), dtype=float) * d \
              + np.asarray(diffusion(tk, x, spec), dtype=float) * math.sqrt(d) * z[:, k]

    survive = tau >= spec.T
    g1x = np.asarray(u.g1(x), dtype=float)
    cost_g = run_g + np.where(survive, g1x, 0.0) - np.where(survive, 0.0, g2_at_tau) - imp_g
    return PathBatch(times, x, tau, cost_g, run_f, imp_f, hist, events)


def _simulate_batch(spec, t0, x0, control, dt, seed, n_paths, t_end=None, record=False,
                    path_offset=0) -> PathBatch:
    """Run n_paths Euler paths from (t0, x0); chunked, thread-cap aware."""
    if not 0.0 <= t0 <= spec.T:
        raise ValueError("t0 must lie in [0, T]")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_paths < 1:
        raise ValueError("need at least one path")
    t_end = spec.T if t_end is None else float(t_end)
    if t_end > spec.T:
        raise ValueError("t_end beyond the horizon")
    extra = control.times if isinstance(control, ImpulseSchedule) else ()
    times = _time_grid(t0, t_end, dt, extra)

    spans = [(s, min(_CHUNK, n_paths - s)) for s in range(0, n_paths, _CHUNK)]
    workers = _worker_count(len(spans))

    def work(span):
        s, c = span
        return _run_chunk(spec, t0, x0, control, times, seed, path_offset + s, c, record)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, spans))
    else:
        parts = [work(sp) for sp in spans]

    if len(parts) == 1:
        return parts[0]
    return PathBatch(
        times=times,
        final_states=np.concatenate([p.final_states for p in parts]),
        default_times=np.concatenate([p.default_times for p in parts]),
        cost_g=np.concatenate([p.cost_g for p in parts]),
        run_f=np.concatenate([p.run_f for p in parts]),
        imp_f=np.concatenate([p.imp_f for p in parts]),
        histories=np.concatenate([p.histories for p in parts]) if record else None,
        events=[e for p in parts for e in p.events] if record else None,
    )


def simulate(spec: ModelSpec, t0: float, x0: float, control, dt: float, seed,
             path_index: int = 0) -> PathRecord:
    """Simulate one controlled path; deterministic in (seed, path_index).

    The control is None, an ImpulseSchedule, or a FeedbackPolicy.  Impulse
    times are inserted into the step grid, states are post-impulse, and the
    realized cost is the default-truncated representation.
    """
    batch = _simulate_batch(spec, t0, x0, control, dt, seed, 1, record=True,
                            path_offset=int(path_index))
    return PathRecord(
        times=batch.times,
        states=batch.histories[0],
        impulses_applied=batch.events[0],
        default_time=float(batch.default_times[0]),
        realized_cost=float(batch.cost_g[0]),
    )


def _mean_se(values: np.ndarray) -> MCEstimate:
    n = values.size
    est = float(np.mean(values))  # numpy pairwise summation: deterministic
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(est, se)


def mc_cost_g(spec: ModelSpec, t0: float, x0: float, control, dt: float,
              n_paths: int, seed) -> MCEstimate:
    """MC estimate of the default-truncated cost representation."""
    batch = _simulate_batch(spec, t0, x0, control, dt, seed, n_paths)
    return _mean_se(batch.cost_g)


def _cost_f_values(spec, t0, batch) -> np.ndarray:
    rho_T = survival(t0, spec.T, spec)
    g1x = np.asarray(spec.utilities.g1(batch.final_states), dtype=float)
    return batch.run_f + rho_T * g1x - batch.imp_f


def mc_cost_f(spec: ModelSpec, t0: float, x0: float, control, dt: float,
              n_paths: int, seed) -> MCEstimate:
    """MC estimate of the survival-discounted cost on default-free paths."""
    batch = _simulate_batch(spec, t0, x0, control, dt, seed, n_paths)
    return _mean_se(_cost_f_values(spec, t0, batch))


@dataclass
class ReductionReport:
    """Agreement of the two cost representations at common Brownian numbers."""

    cost_g: MCEstimate
    cost_f: MCEstimate
    difference: float
    combined_se: float
    n_paths: int
    seed: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "cost_g": {"estimate": self.cost_g.estimate, "std_error": self.cost_g.std_error},
            "cost_f": {"estimate": self.cost_f.estimate, "std_error": self.cost_f.std_error},
            "difference": self.difference,
            "combined_se": self.combined_se,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "passed": self.passed,
        }


def filtration_reduction_check(spec: ModelSpec, t0: float, x0: float, control,
                               dt: float, n_paths: int, seed) -> ReductionReport:
    """Compare both cost representations on one set of Brownian draws.

    Passes when |difference| <= 3 * sqrt(se_g^2 + se_f^2).  With beta == 0
    the two representations agree path by path and the difference is 0.
    """
    batch = _simulate_batch(spec, t0, x0, control, dt, seed, n_paths)
    est_g = _mean_se(batch.cost_g)
    est_f = _mean_se(_cost_f_values(spec, t0, batch))
    diff = est_g.estimate - est_f.estimate
    combined = math.sqrt(est_g.std_error**2 + est_f.std_error**2)
    return ReductionReport(
        cost_g=est_g,
        cost_f=est_f,
        difference=diff,
        combined_se=combined,
        n_paths=int(n_paths),
        seed=int(seed),
        passed=bool(abs(diff) <= 3.0 * combined),
    )
