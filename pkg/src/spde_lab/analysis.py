"""Discrete norms, Monte-Carlo moments, boundary exponents and refinement studies."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .domain import Grid, apply_stencil
from .errors import AnalysisError, ConfigurationError, ContractViolation
from .noise import TimeGrid, WienerBundle, sample_increments
from .solver import integrate_direct, solve_decomposition, solve_semilinear_picard

__all__ = [
    "NORM_KINDS",
    "NormReport",
    "RefinementReport",
    "ExponentFit",
    "SobolevAccumulator",
    "HolderRecorder",
    "EnergyMonitor",
    "sobolev_norm",
    "holder_norm",
    "fit_boundary_exponent",
    "aggregate_norms",
    "MaxErrorMonitor",
    "SupGradMonitor",
    "QUANTITY_KINDS",
    "run_monte_carlo",
    "mc_expected_norm",
    "refinement_study",
    "classify_ratios",
]

SOBOLEV_KINDS = ("Lp", "W1p", "W2p", "D1p", "D2p")
NORM_KINDS = SOBOLEV_KINDS + ("Holder", "HolderGrad")
PAIR_BUDGET = 10_000_000
NEAR_CELLS = 8
Z95 = 1.959963984540054


@dataclass
class NormReport:
    norm_kind: str
    p: float
    value: float
    resolution: tuple
    paths_used: int
    ci_halfwidth: Optional[float]
    poisoned: int
    mean_pth: float = float("nan")
    stderr: Optional[float] = None
    alpha: Optional[float] = None
    per_path: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {
            "norm_kind": self.norm_kind,
            "p": self.p,
            "value": self.value,
            "h": self.resolution[0],
            "dt": self.resolution[1],
            "paths_used": self.paths_used,
            "ci_halfwidth": self.ci_halfwidth,
            "poisoned": self.poisoned,
            "mean_pth": self.mean_pth,
            "stderr": self.stderr,
            "alpha": self.alpha,
        }


@dataclass
class RefinementReport:
    resolutions: list
    values: list
    classification: str
    growth_ratios: list
    reports: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "resolutions": [list(r) for r in self.resolutions],
            "values": list(self.values),
            "classification": self.classification,
            "growth_ratios": list(self.growth_ratios),
        }


@dataclass
class ExponentFit:
    alpha_hat: float
    stderr: float
    window: tuple
    r_squared: float
    n_points: int = 0
    intercept: float = 0.0

    def to_dict(self):
        return {
            "alpha_hat": self.alpha_hat,
            "stderr": self.stderr,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }


# ---------------------------------------------------------------------------
# Sobolev norms
# ---------------------------------------------------------------------------


def _derivative_terms(kind: str, nd: int):
    """List of stencil requests (operator, axes) summed by a norm kind; None = the field itself."""
    first = [("d", (i,)) for i in range(nd)]
    second = [("dd", (i, j)) for i in range(nd) for j in range(i, nd)]
    return {
        "Lp": [None],
        "W1p": [None] + first,
        "W2p": [None] + first + second,
        "D1p": first,
        "D2p": second,
    }[kind]


def _kind_for_order(order):
    if order not in (0, 1, 2):
        raise ContractViolation(f"Sobolev order must be 0, 1 or 2, got {order!r}")
    return SOBOLEV_KINDS[order]


def _abs_pow(x, p):
    return x * x if p == 2 else np.abs(x) ** p


class SobolevAccumulator:
    """Streaming per-path sums  sum_m sum_j sum_gamma |D^gamma u(t_m, x_j)|^p h^n dt.

    Used as a solver monitor: ``acc(m, t, u)`` with ``u`` of shape (P, *S).
    The initial level m = 0 is skipped; with ``final_only`` only the last
    level counts and the dt weight is dropped (a purely spatial norm).
    """

    def __init__(self, kind: str, p: float, grid: Grid, time_grid: TimeGrid, region=None,
                 final_only: bool = False):
        if kind not in SOBOLEV_KINDS:
            raise ContractViolation(f"unknown Sobolev norm kind {kind!r}")
        if p < 1:
            raise ContractViolation(f"p must be >= 1, got {p}")
        self.kind, self.p, self.grid = kind, float(p), grid
        self.num_steps = time_grid.num_steps
        self.final_only = final_only
        mask = grid.interior.copy()
        if region is not None:
            mask &= region if isinstance(region, np.ndarray) else grid.region_mask(region)
        if not mask.any():
            raise ContractViolation("norm region contains no interior nodes")
        self.mask = mask
        self.weight = grid.cell_volume * (1.0 if final_only else time_grid.dt)
        self.terms = _derivative_terms(kind, grid.ndim)
        self.sums = None

    def slice_sum(self, u):
        u = np.asarray(u, dtype=float)
        lead = u.shape[: u.ndim - self.grid.ndim]
        total = np.zeros(lead)
        for term in self.terms:
            d = u if term is None else apply_stencil(u, term[0], self.grid, term[1])
            total = total + _abs_pow(d[..., self.mask], self.p).sum(axis=-1)
        return total

    def __call__(self, m, t, u):
        if m == 0 or (self.final_only and m != self.num_steps):
            return
        s = self.slice_sum(u) * self.weight
        self.sums = s if self.sums is None else self.sums + s

    def result(self):
        """Per-path norms (NaN for paths that overflowed)."""
        if self.sums is None:
            return None
        return self.sums ** (1.0 / self.p)


def sobolev_norm(field, order, p, grid: Grid, time_grid=None, kind: Optional[str] = None, region=None) -> float:
    """Discrete space-time Sobolev norm of one path.

    ``field`` is (levels, *S).  With a TimeGrid and num_steps + 1 levels the
    initial level is dropped and every other level weighs dt; a float
    ``time_grid`` is used as the weight of every given level.  A single
    spatial slice (shape S) gives the purely spatial norm.  ``kind``
    overrides ``order`` (e.g. "D2p" for the pure second-derivative part).
    """
    kind = kind or _kind_for_order(order)
    u = np.asarray(field, dtype=float)
    if u.ndim == grid.ndim:
        levels, dt = u[None], 1.0
    elif isinstance(time_grid, TimeGrid):
        levels = u[1:] if u.shape[0] == time_grid.num_steps + 1 else u
        dt = time_grid.dt
    elif time_grid is None:
        raise ContractViolation("time_grid (or a dt weight) is required for a trajectory")
    else:
        levels, dt = u, float(time_grid)
    acc = SobolevAccumulator(kind, p, grid, TimeGrid(1.0, 1), region)
    total = math.fsum(acc.slice_sum(levels).tolist()) * grid.cell_volume * dt
    return float(total ** (1.0 / p))


# ---------------------------------------------------------------------------
# Hoelder norms
# ---------------------------------------------------------------------------


def _holder_sample(field, grid, times, gradient, region):
    """Stack of scalar fields (components, levels, *S), their validity mask, and times."""
    u = np.asarray(field, dtype=float)
    nd = grid.ndim
    if u.ndim == nd:
        u = u[None]
        times = np.zeros(1)
    times = np.zeros(u.shape[0]) if times is None else np.asarray(times, dtype=float)
    if times.shape[0] != u.shape[0]:
        raise ContractViolation(f"{times.shape[0]} times for {u.shape[0]} stored levels")
    if gradient:
        comps = np.stack([apply_stencil(u, "d", grid, (i,)) for i in range(nd)])
        base = grid.interior
    else:
        comps = u[None]
        base = grid.inside
    mask = base.copy()
    if region is not None:
        mask &= region if isinstance(region, np.ndarray) else grid.region_mask(region)
    if not mask.any():
        raise ContractViolation("Hoelder subdomain is empty")
    return comps, mask, times


def _pair_quotients_exact(vals, coords, times, alpha):
    """max |v_a - v_b| / (|t_a - t_b|^{alpha/2} + |x_a - x_b|^alpha) over all pairs."""
    n = vals.shape[0]
    best = 0.0
    chunk = max(1, 2_000_000 // max(n, 1))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        dv = np.abs(vals[s:e, None] - vals[None, :])
        dx = np.sqrt(((coords[s:e, None, :] - coords[None, :, :]) ** 2).sum(-1))
        dt = np.abs(times[s:e, None] - times[None, :])
        den = dt ** (alpha / 2) + dx**alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(den > 0, dv / np.where(den > 0, den, 1.0), 0.0)
        best = max(best, float(np.max(q)))
    return best


def _near_pairs(comp, mask, grid, times, alpha, reach):
    """Max quotient over pairs whose lattice offsets are all within ``reach`` (levels and cells)."""
    nd = grid.ndim
    h = np.array(grid.spacing)
    L = comp.shape[0]
    ranges = [range(0, min(reach, L - 1) + 1)] + [range(-reach, reach + 1)] * nd
    best = 0.0
    for off in itertools.product(*ranges):
        if all(o == 0 for o in off):
            continue
        if off[0] == 0 and next(o for o in off[1:] if o != 0) < 0:
            continue  # each unordered pair once
        sa, sb = [], []
        for ax, o in enumerate(off):
            n = comp.shape[ax]
            if abs(o) >= n:
                break
            sa.append(slice(max(0, -o), n - max(0, o)))
            sb.append(slice(max(0, o), n - max(0, -o)))
        else:
            a, b = comp[tuple(sa)], comp[tuple(sb)]
            ma = mask[tuple(sa[1:])] & mask[tuple(sb[1:])]
            if not ma.any():
                continue
            dx = float(np.sqrt(np.sum((np.array(off[1:]) * h) ** 2)))
            ta, tb = times[sa[0]], times[sb[0]]
            dt = np.abs(tb - ta).reshape((-1,) + (1,) * nd)
            den = dt ** (alpha / 2) + dx**alpha
            dv = np.abs(b - a)[:, ma]
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(den.reshape(-1, 1) > 0, dv / np.where(den > 0, den, 1.0).reshape(-1, 1), 0.0)
            if q.size:
                best = max(best, float(np.max(q)))
    return best


def holder_norm(field, alpha: float, grid: Grid, times=None, subdomain=None, gradient: bool = False,
                pair_budget: int = PAIR_BUDGET) -> float:
    """Parabolic Hoelder norm  sup|u| + sup |u(t,x)-u(s,y)| / (|t-s|^{alpha/2} + |x-y|^alpha).

    ``field`` is (levels, *S) with stored ``times`` or a single slice.  With
    ``gradient`` the norm of each first difference quotient u_{x^i}
    (interior nodes) is taken and the maximum over components returned.

    All pairs are scanned when their number is at most ``pair_budget``.
    Otherwise the supremum runs over pairs within 8 levels and 8 cells of
    each other plus all pairs of a fixed-stride subsample; strides depend
    only on the full lattice, so subdomain values never exceed whole-domain
    values.  Either way the result is a lower bound for the continuum norm.
    """
    if not 0 < alpha < 1:
        raise ContractViolation(f"alpha must lie in (0, 1), got {alpha}")
    comps, mask, times = _holder_sample(field, grid, times, gradient, subdomain)
    L = comps.shape[1]
    npts = L * int(mask.sum())
    X = np.stack([x[mask] for x in grid.mesh()], axis=-1)
    best = 0.0
    for comp in comps:
        sup = float(np.max(np.abs(comp[:, mask])))
        if npts * (npts - 1) // 2 <= pair_budget:
            coords = np.tile(X, (L, 1))
            tt = np.repeat(times, X.shape[0])
            semi = _pair_quotients_exact(comp[:, mask].ravel(), coords, tt, alpha)
        else:
            semi = _near_pairs(comp, mask, grid, times, alpha, NEAR_CELLS)
            # stride subsample fixed by the full lattice size
            target = int(math.sqrt(2 * pair_budget))
            total = L * int(np.prod(grid.shape))
            stride = max(1, int(math.ceil((total / target) ** (1.0 / (grid.ndim + 1)))))
            sub_levels = np.arange(0, L, stride)
            sub = np.zeros(grid.shape, dtype=bool)
            sub[tuple(slice(0, None, stride) for _ in range(grid.ndim))] = True
            smask = sub & mask
            if smask.any():
                vals = comp[np.ix_(sub_levels, *[np.arange(n) for n in grid.shape])][:, smask]
                coords = np.tile(np.stack([x[smask] for x in grid.mesh()], axis=-1), (sub_levels.size, 1))
                tt = np.repeat(times[sub_levels], int(smask.sum()))
                semi = max(semi, _pair_quotients_exact(vals.ravel(), coords, tt, alpha))
        if not np.isfinite(sup):
            return float("inf")
        best = max(best, sup + semi)
    return float(best)


class HolderRecorder:
    """Solver monitor collecting snapshots every ``stride`` steps for a Hoelder estimate."""

    def __init__(self, stride: int, times):
        self.stride = max(1, int(stride))
        self.all_times = np.asarray(times)
        self.levels = []
        self.times = []

    def __call__(self, m, t, u):
        if m % self.stride == 0:
            self.levels.append(np.array(u, copy=True))
            self.times.append(t)

    def result(self, alpha, grid, gradient=False, subdomain=None):
        stack = np.stack(self.levels, axis=1)
        return np.array([
            holder_norm(stack[i], alpha, grid, np.array(self.times), subdomain, gradient)
            if np.all(np.isfinite(stack[i])) else np.nan
            for i in range(stack.shape[0])
        ])


class EnergyMonitor:
    """Tracks the path average of e^{-lambda t} ||u(t)||_p^p after every step."""

    def __init__(self, grid: Grid, p: float = 2.0, lam: float = 0.0):
        self.grid, self.p, self.lam = grid, float(p), float(lam)
        self.times = []
        self.values = []

    def __call__(self, m, t, u):
        u = np.asarray(u)
        e = _abs_pow(u[..., self.grid.interior], self.p).sum(axis=-1) * self.grid.cell_volume
        self.times.append(float(t))
        self.values.append(float(np.exp(-self.lam * t) * np.mean(e)))

    def is_nonincreasing(self, rtol: float = 1e-12) -> bool:
        v = np.asarray(self.values)
        return bool(np.all(np.diff(v) <= rtol * np.maximum(v[:-1], 1e-300)))


# ---------------------------------------------------------------------------
# boundary exponent fits
# ---------------------------------------------------------------------------


def fit_boundary_exponent(profile, x, window=None, h: Optional[float] = None, diameter: Optional[float] = None) -> ExponentFit:
    """Least-squares slope of log|u| against log x over ``window``.

    ``x`` holds the distances to the wall, ``profile`` the values there.
    The default window is (4h, 0.1 * diameter); the lower edge must be at
    least 2h, the window must hold >= 5 points and the profile has to be
    one-signed and nonzero on it.
    """
    u = np.asarray(profile, dtype=float)
    x = np.asarray(x, dtype=float)
    if u.shape != x.shape:
        raise ContractViolation("profile and x must have the same shape")
    h = float(np.min(np.diff(np.sort(x)))) if h is None else float(h)
    if window is None:
        diameter = float(x.max() - x.min()) if diameter is None else float(diameter)
        window = (4 * h, 0.1 * diameter)
    lo, hi = float(window[0]), float(window[1])
    if lo < 2 * h * (1 - 1e-12):
        raise ContractViolation(f"window lower edge {lo} is below 2h = {2 * h}")
    sel = (x >= lo * (1 - 1e-12)) & (x <= hi * (1 + 1e-12))
    if sel.sum() < 5:
        raise ContractViolation(f"window ({lo}, {hi}) holds {int(sel.sum())} points, need >= 5")
    w = u[sel]
    if not (np.all(w > 0) or np.all(w < 0)):
        raise AnalysisError("profile is not one-signed and nonzero on the fit window")
    res = stats.linregress(np.log(x[sel]), np.log(np.abs(w)))
    return ExponentFit(
        alpha_hat=float(res.slope),
        stderr=float(res.stderr),
        window=(lo, hi),
        r_squared=float(res.rvalue**2),
        n_points=int(sel.sum()),
        intercept=float(res.intercept),
    )


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def aggregate_norms(per_path, p, kind, resolution, alpha=None) -> NormReport:
    """Mean of norm^p over finite paths (compensated, path order) with a 95% interval on that scale."""
    v = np.asarray(per_path, dtype=float)
    ok = np.isfinite(v)
    poisoned = int((~ok).sum())
    n = int(ok.sum())
    if n == 0:
        raise AnalysisError(f"all {v.size} paths poisoned", poisoned=poisoned)
    pth = (v[ok] ** p).tolist()
    mean = math.fsum(pth) / n
    ci = stderr = None
    if n > 1:
        var = math.fsum((x - mean) ** 2 for x in pth) / (n - 1)
        stderr = math.sqrt(var / n)
        ci = Z95 * stderr
    return NormReport(kind, float(p), mean ** (1.0 / p), tuple(resolution), n, ci, poisoned,
                      mean_pth=mean, stderr=stderr, alpha=alpha, per_path=v)


class MaxErrorMonitor:
    """max over steps and inside nodes of |u - reference(t, x)|, per path."""

    def __init__(self, reference, grid: Grid, region=None):
        self.reference = reference
        self.grid = grid
        mask = grid.inside.copy()
        if region is not None:
            mask &= grid.region_mask(region)
        self.mask = mask
        self.X = grid.mesh()
        self.err = None

    def __call__(self, m, t, u):
        ref = np.broadcast_to(self.reference(float(t), self.X), self.grid.shape)
        e = np.abs(np.asarray(u)[..., self.mask] - ref[self.mask]).max(axis=-1)
        self.err = e if self.err is None else np.maximum(self.err, e)

    def result(self):
        return self.err


class SupGradMonitor:
    """sup of |grad u| over a region, at the final level or over all levels."""

    def __init__(self, grid: Grid, time_grid: TimeGrid, region=None, final_only=True):
        self.grid = grid
        self.num_steps = time_grid.num_steps
        self.final_only = final_only
        mask = grid.interior.copy()
        if region is not None:
            mask &= grid.region_mask(region)
        if not mask.any():
            raise ContractViolation("gradient region contains no interior nodes")
        self.mask = mask
        self.value = None

    def __call__(self, m, t, u):
        if m == 0 or (self.final_only and m != self.num_steps):
            return
        g2 = sum(apply_stencil(u, "d", self.grid, (i,)) ** 2 for i in range(self.grid.ndim))
        v = np.sqrt(g2[..., self.mask].max(axis=-1))
        self.value = v if self.value is None else np.maximum(self.value, v)

    def result(self):
        return self.value


QUANTITY_KINDS = NORM_KINDS + ("MaxError", "SupGrad")


@dataclass
class MonteCarloResult:
    values: dict
    poisoned: np.ndarray
    grid: Grid
    time_grid: TimeGrid
    final: Optional[np.ndarray] = None


def _path_increments(seed, paths, modes, time_grid, noise_factor):
    fine = TimeGrid(time_grid.t_end, time_grid.num_steps * noise_factor)
    out = np.empty((len(paths), modes, time_grid.num_steps))
    for j, i in enumerate(paths):
        inc = sample_increments((seed, i), modes, fine)
        if noise_factor > 1:
            inc = inc.reshape(modes, time_grid.num_steps, noise_factor).sum(axis=2)
        out[j] = inc
    return out


def _make_monitor(req, grid, tg):
    kind = req["kind"]
    region = req.get("region")
    if kind in SOBOLEV_KINDS:
        return SobolevAccumulator(kind, req.get("p", 2.0), grid, tg, region, req.get("final_only", False))
    if kind in ("Holder", "HolderGrad"):
        return HolderRecorder(int(req.get("stride") or max(1, tg.num_steps // 64)), tg.times)
    if kind == "MaxError":
        return MaxErrorMonitor(req["reference"], grid, region)
    if kind == "SupGrad":
        return SupGradMonitor(grid, tg, region, req.get("final_only", True))
    raise ConfigurationError(f"unknown quantity kind {kind!r}; known: {list(QUANTITY_KINDS)}")


def _monitor_result(req, mon, grid, P):
    if isinstance(mon, HolderRecorder):
        return mon.result(req.get("alpha", 0.3), grid, req["kind"] == "HolderGrad", req.get("region"))
    res = mon.result()
    return np.zeros(P) if res is None else np.asarray(res, dtype=float).reshape(P)


def run_monte_carlo(scenario, paths: int, resolution=None, *, requests: Sequence[dict] = (),
                    seed: Optional[int] = None, threads: int = 1, batch_size: int = 64,
                    noise_factor: int = 1, pipeline: Optional[str] = None,
                    keep_final: bool = False) -> MonteCarloResult:
    """Solve ``paths`` sample paths and evaluate per-path quantities.

    A request is a dict with ``kind`` in QUANTITY_KINDS and optional
    ``p``, ``region``, ``final_only``, ``alpha``, ``stride`` (Hoelder
    snapshot spacing in steps) and ``reference`` (callable, for MaxError).
    Path i is driven by the stream keyed (seed, i); with ``noise_factor``
    > 1 it is the coarsening of a stream drawn on a finer time grid, so
    different resolutions can share Brownian paths.  Batches have a fixed
    composition, so the per-path numbers do not depend on ``threads``.
    """
    if paths < 1:
        raise ConfigurationError(f"paths must be >= 1, got {paths}")
    grid, tg = scenario.discretize(resolution)
    problem = scenario.problem()
    seed = scenario.seed if seed is None else int(seed)
    modes = problem.coeffs.modes
    pipeline = pipeline or scenario.pipeline
    requests = [dict(r) for r in requests]
    for r in requests:
        if r.get("kind") not in QUANTITY_KINDS:
            raise ConfigurationError(f"unknown quantity kind {r.get('kind')!r}")

    def run_batch(idx):
        inc = _path_increments(seed, idx, modes, tg, noise_factor)
        P = len(idx)
        if pipeline == "direct":
            mons = [_make_monitor(r, grid, tg) for r in requests]
            res = integrate_direct(problem, grid, tg, inc, monitors=mons)
            vals = [_monitor_result(r, m, grid, P) for r, m in zip(requests, mons)]
            return vals, res.poisoned, res.final if keep_final else None
        per, poisoned, finals = [], [], []
        for j in range(P):
            bundle = WienerBundle(inc[j], tg, (seed, idx[j]))
            if pipeline == "decomposition":
                sol = solve_decomposition(problem, bundle, grid, tg, degenerate_ok=scenario.degenerate)
            elif pipeline == "picard":
                sol, _ = solve_semilinear_picard(problem, bundle, grid, tg,
                                                 tol=float(scenario.parameters.get("tol", 1e-6)),
                                                 max_sweeps=int(scenario.parameters.get("max_sweeps", 12)))
            else:
                raise ConfigurationError(f"unknown pipeline {pipeline!r}")
            traj = sol.values
            mons = [_make_monitor(r, grid, tg) for r in requests]
            for m in range(traj.shape[0]):
                for mon in mons:
                    mon(m, tg.times[m], traj[m][None])
            per.append([_monitor_result(r, mon, grid, 1) for r, mon in zip(requests, mons)])
            poisoned.append(not np.all(np.isfinite(traj[-1])))
            finals.append(traj[-1])
        vals = [np.concatenate([v[k] for v in per]) for k in range(len(requests))]
        return vals, np.array(poisoned), np.stack(finals) if keep_final else None

    batches = [list(range(s, min(paths, s + batch_size))) for s in range(0, paths, batch_size)]
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_batch, batches))
    else:
        results = [run_batch(b) for b in batches]
    poisoned = np.concatenate([res[1] for res in results])
    values = {}
    for k in range(len(requests)):
        arr = np.concatenate([res[0][k] for res in results])
        values[k] = np.where(poisoned, np.nan, arr)
    final = np.concatenate([res[2] for res in results]) if keep_final else None
    return MonteCarloResult(values, poisoned, grid, tg, final)


def mc_expected_norm(scenario, M: int, norm_kind: str, p: float = 2.0, resolution=None, *,
                     seed: Optional[int] = None, threads: int = 1, region=None, final_only: bool = False,
                     alpha: float = 0.3, noise_factor: int = 1, stride: Optional[int] = None,
                     pipeline: Optional[str] = None) -> NormReport:
    """(E ||u||^p)^{1/p} over M paths, excluding poisoned ones."""
    req = {"kind": norm_kind, "p": p, "region": region, "final_only": final_only, "alpha": alpha,
           "stride": stride}
    mc = run_monte_carlo(scenario, M, resolution, requests=[req], seed=seed, threads=threads,
                         noise_factor=noise_factor, pipeline=pipeline)
    h = mc.grid.h
    return aggregate_norms(mc.values[0], p, norm_kind, (h, mc.time_grid.dt),
                           alpha if norm_kind.startswith("Holder") else None)


def classify_ratios(ratios, diverge: float = 1.5, band: float = 0.2) -> str:
    r = np.asarray(ratios, dtype=float)
    if r.size and np.all(r >= diverge):
        return "divergent"
    if r.size and np.all(np.abs(r - 1.0) <= band):
        return "convergent"
    return "inconclusive"


def _ratio(a, b):
    if a == 0 and b == 0:
        return 1.0
    if a == 0:
        return float("inf")
    return b / a


def refinement_study(scenario, resolutions, norm_kind: str, p: float = 2.0, M: int = 1, *,
                     seed: Optional[int] = None, threads: int = 1, region=None, final_only: bool = False,
                     alpha: float = 0.3, share_noise: bool = True, stride_time: Optional[float] = None,
                     pipeline: Optional[str] = None) -> RefinementReport:
    """Expected norms over strictly refining resolutions with matched master seed.

    With ``share_noise`` every resolution is driven by the same Brownian
    paths (coarsened from the finest time grid) whenever the step counts
    nest; otherwise each uses its own draw from the same seeds.
    ``stride_time`` fixes the physical spacing of Hoelder snapshots.
    """
    if len(resolutions) < 3:
        raise ConfigurationError("a refinement study needs at least three resolutions")
    discs = [scenario.discretize(r) for r in resolutions]
    hs = [g.h for g, _ in discs]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigurationError(f"resolutions must strictly refine, got h = {hs}")
    steps = [tg.num_steps for _, tg in discs]
    finest = max(steps)
    nest = share_noise and all(finest % s == 0 for s in steps)
    reports = []
    for res, (g, tg) in zip(resolutions, discs):
        factor = finest // tg.num_steps if nest else 1
        stride = None
        if stride_time is not None:
            stride = max(1, int(round(stride_time / tg.dt)))
        reports.append(mc_expected_norm(scenario, M, norm_kind, p, res, seed=seed, threads=threads,
                                        region=region, final_only=final_only, alpha=alpha,
                                        noise_factor=factor, stride=stride, pipeline=pipeline))
    values = [r.value for r in reports]
    ratios = [_ratio(a, b) for a, b in zip(values, values[1:])]
    return RefinementReport([r.resolution for r in reports], values, classify_ratios(ratios), ratios, reports)
