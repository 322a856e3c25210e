"""Finite-difference solver for the impulse-control quasi-variational
inequality of the ratio model.

Backward in time from V(T, x) = g1(x), each step solves one implicit
Euler step of

    -dV/dt - mu(t,x) V_x - 0.5 sigma(t,x)^2 V_xx - f(x)
        + beta(t) (V + g2(x)) = 0

(central second difference, drift upwinded so the system matrix is an
M-matrix; zero second difference at x_min, zero first difference at
x_max) and then projects onto the impulse obstacle

    v <- max(v, max_K v~(x + K) - (K + kappa))

until the sup-norm update drops below the inner tolerance.  Each
profitable injection costs at least kappa while values stay bounded, so
the projection count is certified by ceil((C1 - min v) / kappa) + 1.

A node is labeled "action" when V - IV <= eps_region; the maximizing
injection there is the policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_banded

from . import dynamics
from .model import (ModelSpec, diffusion, drift, injection_cost, survival,
                    validate)


@dataclass(frozen=True)
class Grid:
    """Uniform space-time-injection grid: n_x nodes on [x_min, x_max],
    n_t time steps on [0, T], n_k injection samples on [k_min, k_max]."""

    x_min: float
    x_max: float
    n_x: int
    n_t: int
    n_k: int = 33

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("need x_min < x_max")
        if self.n_x < 3 or self.n_t < 1 or self.n_k < 1:
            raise ValueError("need n_x >= 3, n_t >= 1, n_k >= 1")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    def t_nodes(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.n_t + 1)

    def k_nodes(self, costs) -> np.ndarray:
        if self.n_k == 1:
            return np.array([costs.k_min])
        return np.linspace(costs.k_min, costs.k_max, self.n_k)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_x": self.n_x,
                "n_t": self.n_t, "n_k": self.n_k}


def interp_extended(x_nodes: np.ndarray, v: np.ndarray, xq) -> np.ndarray:
    """Linear interpolation of a value slice, flat above the grid and
    linear (lowest-cell slope) below it."""
    xq = np.asarray(xq, dtype=float)
    out = np.interp(xq, x_nodes, v)
    below = xq < x_nodes[0]
    if np.any(below):
        slope = (v[1] - v[0]) / (x_nodes[1] - x_nodes[0])
        out = np.where(below, v[0] + slope * (xq - x_nodes[0]), out)
    return out


def impulse_max(v_slice: np.ndarray, grid: Grid, costs) -> tuple[np.ndarray, np.ndarray]:
    """Impulse operator on one slice: max over the injection grid of
    v~(x + K) - (K + kappa), with the interpolation extension above.

    Returns (values, maximizers); ties resolve to the smallest K because
    the injection grid is ascending and argmax takes the first maximum.
    """
    x = grid.x_nodes()
    k = grid.k_nodes(costs)
    gains = interp_extended(x, v_slice, x[:, None] + k[None, :]) - injection_cost(k, costs)[None, :]
    best = np.argmax(gains, axis=1)
    rows = np.arange(x.size)
    return gains[rows, best], k[best]


def pde_step(v_next: np.ndarray, t: float, grid: Grid, spec: ModelSpec) -> np.ndarray:
    """One implicit Euler step of the continuation PDE, from the slice at
    t + dt down to t.  Coefficients are evaluated at (t, x).

    The assembled tridiagonal system is strictly diagonally dominant with
    nonpositive off-diagonals (an M-matrix) whenever drift(t, x_min) >= 0;
    a negative drift at the lower boundary flips one corner sign, and the
    dominance assertion below rejects the step if it loses dominance.
    """
    dt = spec.T / grid.n_t
    x = grid.x_nodes()
    h = grid.h
    n = x.size
    u = spec.utilities

    mu = np.asarray(drift(t, x, spec), dtype=float)
    sig = np.asarray(diffusion(t, x, spec), dtype=float)
    beta_t = float(spec.beta(t))

    dcoef = 0.5 * sig**2 / h**2
    up = np.maximum(mu, 0.0) / h
    dn = np.maximum(-mu, 0.0) / h

    lower = -(dcoef + dn)          # coefficient of v[i-1] in row i
    upper = -(dcoef + up)          # coefficient of v[i+1] in row i
    diag = 1.0 / dt + beta_t + 2.0 * dcoef + up + dn

    # x_min: zero second difference (linear-extrapolation ghost) kills the
    # diffusion term and turns the drift into a forward difference
    diag[0] = 1.0 / dt + beta_t + mu[0] / h
    upper[0] = -mu[0] / h
    # x_max: flat ghost; diffusion one-sided, outgoing drift drops, incoming
    # drift upwinds into the interior
    diag[-1] = 1.0 / dt + beta_t + dcoef[-1] + dn[-1]
    lower[-1] = -(dcoef[-1] + dn[-1])

    margin = diag.copy()
    margin[1:] -= np.abs(lower[1:])
    margin[:-1] -= np.abs(upper[:-1])
    if not np.all(margin > 0.0):
        raise RuntimeError(
            "PDE step lost diagonal dominance (drift at x_min is strongly "
            "outgoing); shrink dt or move x_min"
        )

    rhs = v_next / dt + np.asarray(u.f(x), dtype=float) - beta_t * np.asarray(u.g2(x), dtype=float)

    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


@dataclass
class ValueSurface:
    """Solved value function on the grid, with the impulse-operator values
    of every slice and solver metadata."""

    grid: Grid
    T: float
    values: np.ndarray
    iv_values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def t_nodes(self) -> np.ndarray:
        return self.grid.t_nodes(self.T)

    def evaluate(self, t: float, x) -> np.ndarray:
        """Bilinear value lookup: linear in t, extended-linear in x."""
        tn = self.t_nodes()
        t = min(max(float(t), 0.0), self.T)
        j = int(np.searchsorted(tn, t, side="right")) - 1
        j = min(max(j, 0), tn.size - 2)
        w = (t - tn[j]) / (tn[j + 1] - tn[j])
        xn = self.grid.x_nodes()
        lo = interp_extended(xn, self.values[j], x)
        hi = interp_extended(xn, self.values[j + 1], x)
        out = (1.0 - w) * lo + w * hi
        return out if np.ndim(out) else float(out)


@dataclass
class RegionMap:
    """Action/continuation labels per node: True marks an action node,
    where V - IV <= eps_region."""

    labels: np.ndarray
    eps_region: float


@dataclass
class PolicyMap:
    """Maximizing injection xi0 at action nodes, NaN on continuation."""

    xi0: np.ndarray
    k_grid: np.ndarray


class SolveResult(NamedTuple):
    surface: ValueSurface
    regions: RegionMap
    policy: PolicyMap


def _label_slice(v, iv, ks, eps_region):
    lab = (v - iv) <= eps_region
    xi = np.full(v.shape, np.nan)
    xi[lab] = ks[lab]
    return lab, xi


def solve(spec: ModelSpec, grid: Grid, tol_inner: float = 1e-9,
          eps_region: float | None = None, check_spec: bool = True) -> SolveResult:
    """Backward QVI sweep; returns the value surface, region labels, and
    the injection policy.

    Raises ValueError when the spec fails hypothesis validation (unless
    check_spec=False) and RuntimeError when an inner projection exceeds
    its certified iteration cap.
    """
    if eps_region is None:
        eps_region = 10.0 * tol_inner
    x = grid.x_nodes()
    tn = grid.t_nodes(spec.T)
    u = spec.utilities

    if check_spec:
        rep = validate(spec, x, k_sample=grid.k_nodes(spec.costs))
        if not rep.passed:
            names = ", ".join(e.name for e in rep.failures())
            raise ValueError(f"model spec fails validation: {names}")

    # upper bound C1 for the projection cap: horizon * largest source level
    # plus the terminal bound (the scheme and the projection both respect it)
    beta_nodes = np.asarray(spec.beta(tn), dtype=float)
    fx = np.asarray(u.f(x), dtype=float)
    g2x = np.asarray(u.g2(x), dtype=float)
    source_max = float(np.max(fx[None, :] - beta_nodes[:, None] * g2x[None, :]))
    c1_bound = max(0.0, source_max) * spec.T + u.c_g1

    n_rows = grid.n_t + 1
    V = np.empty((n_rows, grid.n_x))
    IV = np.empty_like(V)
    LAB = np.zeros(V.shape, dtype=bool)
    XI = np.full(V.shape, np.nan)

    v = np.asarray(u.g1(x), dtype=float)
    iv, ks = impulse_max(v, grid, spec.costs)
    V[-1], IV[-1] = v, iv
    LAB[-1], XI[-1] = _label_slice(v, iv, ks, eps_region)

    inner_counts = []
    worst_residual = 0.0
    for j in range(grid.n_t - 1, -1, -1):
        v = pde_step(V[j + 1], tn[j], grid, spec)
        cap = math.ceil((c1_bound - float(np.min(v))) / spec.costs.kappa) + 1
        updates = 0
        while True:
            iv, ks = impulse_max(v, grid, spec.costs)
            residual = float(np.max(iv - v))
            if residual <= tol_inner:
                break
            if updates >= cap:
                raise RuntimeError(
                    f"impulse projection failed to settle at t={tn[j]:.6g}: "
                    f"residual {residual:.3e} after {updates} updates (cap {cap})"
                )
            v = np.maximum(v, iv)
            updates += 1
        V[j], IV[j] = v, iv
        LAB[j], XI[j] = _label_slice(v, iv, ks, eps_region)
        inner_counts.append(updates)
        worst_residual = max(worst_residual, residual)
    inner_counts.reverse()

    # landing nodes of the policy should be continuation (within one cell)
    land_violations = 0
    h = grid.h
    for j in range(n_rows):
        act = LAB[j]
        if not act.any():
            continue
        land = x[act] + XI[j, act]
        idx = np.clip(np.rint((land - grid.x_min) / h), 0, grid.n_x - 1).astype(int)
        land_violations += int(np.count_nonzero(LAB[j, idx]))

    metadata = {
        "tol_inner": tol_inner,
        "eps_region": eps_region,
        "inner_iterations": inner_counts,
        "max_inner_residual": worst_residual,
        "c1_bound": c1_bound,
        "terminal_layer_gap": float(np.max(np.abs(V[-2] - V[-1]))) if grid.n_t >= 1 else 0.0,
        "landing_violations": land_violations,
    }
    surface = ValueSurface(grid, spec.T, V, IV, metadata)
    regions = RegionMap(LAB, eps_region)
    policy = PolicyMap(XI, grid.k_nodes(spec.costs))
    return SolveResult(surface, regions, policy)


def extract_regions(surface: ValueSurface, spec: ModelSpec,
                    eps_region: float | None = None) -> tuple[RegionMap, PolicyMap]:
    """Recompute labels and maximizers from a (possibly loaded) surface."""
    if eps_region is None:
        eps_region = float(surface.metadata.get("eps_region", 1e-8))
    LAB = np.zeros(surface.values.shape, dtype=bool)
    XI = np.full(surface.values.shape, np.nan)
    for j in range(surface.values.shape[0]):
        iv, ks = impulse_max(surface.values[j], surface.grid, spec.costs)
        LAB[j], XI[j] = _label_slice(surface.values[j], iv, ks, eps_region)
    return RegionMap(LAB, eps_region), PolicyMap(XI, surface.grid.k_nodes(spec.costs))


def extract_injection(t: float, x: float, surface: ValueSurface, costs,
                      eps_region: float | None = None) -> float:
    """Maximizing injection at the grid node nearest (t, x).

    Raises ValueError on a continuation node and RuntimeError if the
    post-injection point fails to land in the continuation region
    (within one grid cell).
    """
    if eps_region is None:
        eps_region = float(surface.metadata.get("eps_region", 1e-8))
    tn = surface.t_nodes()
    xn = surface.grid.x_nodes()
    j = int(np.argmin(np.abs(tn - t)))
    i = int(np.argmin(np.abs(xn - x)))
    row = surface.values[j]
    k = surface.grid.k_nodes(costs)
    gains = interp_extended(xn, row, xn[i] + k) - injection_cost(k, costs)
    b = int(np.argmax(gains))
    if row[i] - gains[b] > eps_region:
        raise ValueError(f"({t}, {x}) is a continuation node; no injection prescribed")
    xi0 = float(k[b])
    i_land = int(np.clip(round((xn[i] + xi0 - xn[0]) / surface.grid.h), 0, xn.size - 1))
    land_gain = interp_extended(xn, row, xn[i_land] + k) - injection_cost(k, costs)
    if row[i_land] - float(np.max(land_gain)) <= eps_region:
        raise RuntimeError("post-injection point is itself an action node")
    return xi0


def dpp_residual(spec: ModelSpec, surface: ValueSurface, t: float, x: float,
                 theta: float, dt: float, n_paths: int, seed,
                 policy: dynamics.FeedbackPolicy | None = None) -> dynamics.MCEstimate:
    """Monte Carlo dynamic-programming residual at (t, x):

        E[ int_t^theta rho (f - beta g2) ds  -  sum rho(tau_n)(K_n + kappa)
           + rho(theta) V(theta, X(theta)) ]  -  V(t, x)

    under the surface's own feedback policy.  Returns (residual, se);
    theta == t gives exactly zero.
    """
    if not t <= theta <= spec.T:
        raise ValueError("need t <= theta <= T")
    if policy is None:
        regions, pol = extract_regions(surface, spec)
        policy = dynamics.FeedbackPolicy.from_solution(surface, regions, pol)
    batch = dynamics._simulate_batch(spec, t, x, policy, dt, seed, n_paths, t_end=theta)
    rho_end = survival(t, theta, spec)
    vals = batch.run_f - batch.imp_f + rho_end * surface.evaluate(theta, batch.final_states)
    # subtract V(t,x) per path, not after averaging: the theta == t case then
    # averages exact zeros instead of accumulating float-mean noise
    resid = np.asarray(vals) - float(surface.evaluate(t, x))
    return dynamics._mean_se(resid)


# ---------------------------------------------------------------------------
# exports


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_meta(fh, meta: dict | None) -> None:
    if meta:
        for key in sorted(meta):
            fh.write(f"# {key}={meta[key]}\n")


def write_surface_csv(path, surface: ValueSurface, regions: RegionMap,
                      policy: PolicyMap, meta: dict | None = None) -> None:
    """Long format: t, x, V, IV, label, xi0 (xi0 empty on continuation)."""
    tn = surface.t_nodes()
    xn = surface.grid.x_nodes()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_meta(fh, meta)
        fh.write("t,x,V,IV,label,xi0\n")
        for j, t in enumerate(tn):
            for i, xv in enumerate(xn):
                if regions.labels[j, i]:
                    fh.write(f"{_fmt(t)},{_fmt(xv)},{_fmt(surface.values[j, i])},"
                             f"{_fmt(surface.iv_values[j, i])},action,{_fmt(policy.xi0[j, i])}\n")
                else:
                    fh.write(f"{_fmt(t)},{_fmt(xv)},{_fmt(surface.values[j, i])},"
                             f"{_fmt(surface.iv_values[j, i])},continuation,\n")


def read_surface_csv(path, grid_hint: dict | None = None) -> ValueSurface:
    """Rebuild a ValueSurface from the long-format CSV written above."""
    ts, xs, vs, ivs = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        meta = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
                continue
            if line.startswith("t,"):
                continue
            parts = line.split(",")
            ts.append(float(parts[0]))
            xs.append(float(parts[1]))
            vs.append(float(parts[2]))
            ivs.append(float(parts[3]))
    tn = np.unique(np.asarray(ts))
    xn = np.unique(np.asarray(xs))
    n_t, n_x = tn.size - 1, xn.size
    V = np.asarray(vs).reshape(n_t + 1, n_x)
    IV = np.asarray(ivs).reshape(n_t + 1, n_x)
    n_k = int(grid_hint["n_k"]) if grid_hint and "n_k" in grid_hint else 33
    grid = Grid(float(xn[0]), float(xn[-1]), n_x, n_t, n_k)
    metadata = {}
    if "eps_region" in meta:
        metadata["eps_region"] = float(meta["eps_region"])
    return ValueSurface(grid, float(tn[-1]), V, IV, metadata)


def write_policy_csv(path, surface: ValueSurface, regions: RegionMap,
                     policy: PolicyMap, meta: dict | None = None) -> None:
    """Action nodes only: t, x, xi0."""
    tn = surface.t_nodes()
    xn = surface.grid.x_nodes()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_meta(fh, meta)
        fh.write("t,x,xi0\n")
        for j, t in enumerate(tn):
            for i in np.nonzero(regions.labels[j])[0]:
                fh.write(f"{_fmt(t)},{_fmt(xn[i])},{_fmt(policy.xi0[j, i])}\n")


def write_boundary_csv(path, surface: ValueSurface, regions: RegionMap,
                       meta: dict | None = None) -> None:
    """Upper edge of each connected action component as a (t, x) polyline."""
    from scipy import ndimage

    tn = surface.t_nodes()
    xn = surface.grid.x_nodes()
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    comp, n_comp = ndimage.label(regions.labels, structure=structure)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_meta(fh, meta)
        fh.write("component,t,boundary_x\n")
        for c in range(1, n_comp + 1):
            rows = np.nonzero((comp == c).any(axis=1))[0]
            for j in rows:
                cols = np.nonzero(comp[j] == c)[0]
                fh.write(f"{c},{_fmt(tn[j])},{_fmt(xn[cols.max()])}\n")
