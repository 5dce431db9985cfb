"""Time stepping for one or many sample paths.

The direct scheme treats ``a^{ij} d_i d_j`` implicitly (backward Euler) and
everything else, including the Ito noise terms, explicitly at the left end
of the step:

    (I - dt A_m) u_{m+1} = u_m + dt (b . grad u_m + c u_m + F_m)
                           + sum_k (sigma^k . grad u_m + nu^k u_m + G^k_m) dW^k_m

Dirichlet rows carry the boundary data at t_{m+1}.  States are batched:
an array of shape (P, *grid.shape) holds P independent paths, and every
operation acts column-wise so that a path's numbers do not depend on which
other paths share its batch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .domain import Grid, apply_stencil, odd_extend, restrict_half, shift_field, symmetric_grid
from .errors import ContractViolation, NumericalError, PreconditionError
from .fields import CoefficientSet, _broadcast, _sym_eigs, evaluate_coefficients
from .noise import TimeGrid, TranslationPath, WienerBundle, translation_path

__all__ = [
    "Problem",
    "SolutionField",
    "ContractionDiagnostics",
    "DirectScheme",
    "TruncationWarning",
    "step_direct",
    "integrate_direct",
    "solve_direct",
    "solve_heat_reflection",
    "solve_random_pde",
    "translate_field",
    "correction_term",
    "solve_decomposition",
    "solve_semilinear_picard",
    "default_time_grid",
]

WALL_RATIO_LIMIT = 1e-6


class TruncationWarning(UserWarning):
    """Solution is not negligible next to an artificial half-space wall."""


@dataclass(frozen=True)
class Problem:
    """Coefficients plus initial and boundary data of one linear or semilinear SPDE."""

    coeffs: CoefficientSet
    initial: Optional[Callable] = None
    boundary: Optional[Callable] = None
    K_upper: Optional[float] = None


@dataclass(eq=False)
class SolutionField:
    values: np.ndarray
    times: np.ndarray
    grid: Grid
    scheme: str
    stride: int = 1
    poisoned: bool = False
    boundary_data: Optional[Callable] = None
    initial_data: Optional[np.ndarray] = None
    wall_ratio: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


@dataclass
class ContractionDiagnostics:
    iterate_distances: list
    ratios: list
    converged: bool
    tol: float

    @property
    def sweeps(self) -> int:
        return len(self.iterate_distances)

    def to_dict(self):
        return {
            "iterate_distances": list(self.iterate_distances),
            "ratios": list(self.ratios),
            "converged": self.converged,
            "sweeps": self.sweeps,
            "tol": self.tol,
        }


def default_time_grid(t_end: float, h: float, K_upper: float = 1.0) -> TimeGrid:
    """dt = h^2 * min(1, 1/K_upper), rounded so the grid ends on t_end."""
    return TimeGrid.from_dt(t_end, h * h * min(1.0, 1.0 / K_upper))


def _lattice_field(phi, grid, t=0.0):
    if phi is None:
        return np.zeros(grid.shape)
    return _broadcast(phi(float(t), grid.mesh()), grid.shape, "field", grid.mesh())


class _BandedLU:
    """LAPACK banded LU of a sparse square matrix."""

    def __init__(self, S: sp.spmatrix):
        S = sp.coo_matrix(S)
        n = S.shape[0]
        off = S.row - S.col
        self.kl = int(max(0, off.max(initial=0)))
        self.ku = int(max(0, -off.min(initial=0)))
        ab = np.zeros((2 * self.kl + self.ku + 1, n))
        np.add.at(ab, (self.kl + self.ku + S.row - S.col, S.col), S.data)
        lub, piv, info = lapack.dgbtrf(ab, self.kl, self.ku)
        if info != 0:
            raise NumericalError(f"banded LU failed (info={info}); implicit operator is singular")
        self.lub, self.piv = lub, piv

    def solve(self, rhs_T: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self.lub, self.kl, self.ku, rhs_T, self.piv)
        if info != 0:
            raise NumericalError(f"banded solve failed (info={info})")
        return x


def _operator_matrix(A, grid: Grid):
    """Sparse sum_ij a^{ij} d_i d_j restricted to interior rows, all lattice columns."""
    nd = grid.ndim
    shape = grid.shape
    h = grid.spacing
    strides = np.cumprod((1,) + shape[::-1])[:-1][::-1]
    I = np.flatnonzero(grid.interior.ravel())
    rows, cols, vals = [], [], []
    pos = np.arange(I.size)

    def add(offset, w):
        w = np.broadcast_to(w, shape).ravel()[I]
        nz = w != 0
        if not np.any(nz):
            return
        rows.append(pos[nz])
        cols.append(I[nz] + int(np.dot(offset, strides)))
        vals.append(w[nz])

    for i in range(nd):
        aii = A[i, i] / h[i] ** 2
        e = np.zeros(nd, dtype=int)
        e[i] = 1
        add(e, aii)
        add(-e, aii)
        add(np.zeros(nd, dtype=int), -2.0 * aii)
        for j in range(i + 1, nd):
            w = 2.0 * A[i, j] * (0.25 / (h[i] * h[j]))
            for si, sj, sgn in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                o = np.zeros(nd, dtype=int)
                o[i], o[j] = si, sj
                add(o, sgn * w)
    N = int(np.prod(shape))
    if rows:
        L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(I.size, N))
    else:
        L = sp.csr_matrix((I.size, N))
    return L


class DirectScheme:
    """Backward-Euler/explicit-noise stepper for one coefficient set on one grid.

    The implicit operator is factorized once when the coefficients are
    autonomous and refactorized every step otherwise.
    """

    def __init__(self, coeffs: CoefficientSet, grid: Grid, dt: float, boundary=None):
        self.coeffs = coeffs
        self.grid = grid
        self.dt = float(dt)
        self.boundary = boundary
        self.X = grid.mesh()
        self.S = grid.shape
        self.interior = np.flatnonzero(grid.interior.ravel())
        self.bnodes = np.flatnonzero(grid.boundary.ravel())
        self._cache_t = None
        self._static = None
        self._solver = None
        self._identity = False
        if coeffs.autonomous and not coeffs.semilinear:
            self._static = evaluate_coefficients(coeffs, 0.0, grid)
            self._factor(self._static.A)
        self._needs_grad = coeffs.b is not None or (coeffs.sigma is not None and coeffs.modes > 0)

    def _factor(self, A):
        L = _operator_matrix(A, self.grid)
        self._L_I = L[:, self.interior]
        self._L_B = L[:, self.bnodes]
        self._identity = self._L_I.nnz == 0
        if not self._identity:
            S = sp.identity(self.interior.size, format="csr") - self.dt * self._L_I
            self._solver = _BandedLU(S)

    def _coefficients(self, t):
        if self._static is not None:
            return self._static
        if self.coeffs.semilinear:
            lin = CoefficientSet(self.coeffs.n, self.coeffs.modes, self.coeffs.a, self.coeffs.b,
                                 self.coeffs.c, self.coeffs.sigma, self.coeffs.nu)
            sc = evaluate_coefficients(lin, t, self.grid)
            if self.coeffs.autonomous:
                if self._solver is None and not self._identity:
                    self._factor(sc.A)
                self._static = sc
            else:
                self._factor(sc.A)
            return sc
        sc = evaluate_coefficients(self.coeffs, t, self.grid)
        self._factor(sc.A)
        return sc

    def _forcing(self, t, u):
        if self.coeffs.semilinear:
            raise ContractViolation("semilinear reactions need frozen forcing from the Picard driver")
        F = None if self.coeffs.f is None else _broadcast(self.coeffs.f(t, self.X), self.S, "f", self.X)
        G = None
        if self.coeffs.g is not None and self.coeffs.modes:
            G = _broadcast(self.coeffs.g(t, self.X), (self.coeffs.modes,) + self.S, "g", self.X)
        return F, G

    def boundary_values(self, t):
        if self.boundary is None:
            return None
        return _lattice_field(self.boundary, self.grid, t).ravel()[self.bnodes]

    def step(self, u, t, dW, forcing=None, t_next=None):
        """Advance a batch ``u`` (P, *S) from t to t + dt with increments ``dW`` (P, K).

        ``forcing`` optionally replaces (F, G) for this step; either may be
        None, F broadcasts to (P, *S) and G to (P, K, *S).  ``t_next``
        (default t + dt) is the time at which boundary data is imposed.
        """
        dt = self.dt
        sc = self._coefficients(t)
        F, G = forcing if forcing is not None else self._forcing(t, u)
        P = u.shape[0]
        K = self.coeffs.modes
        nd = self.grid.ndim
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = u.copy()
            drift = None
            grads = None
            if self._needs_grad:
                grads = [apply_stencil(u, "d", self.grid, (i,)) for i in range(nd)]
            if sc.B is not None:
                drift = sum(sc.B[i] * grads[i] for i in range(nd))
            if sc.C is not None:
                drift = sc.C * u if drift is None else drift + sc.C * u
            if F is not None:
                drift = F if drift is None else drift + F
            if drift is not None:
                rhs += dt * drift
            if K:
                dW = np.asarray(dW, dtype=float).reshape(P, K)
                if sc.Sigma is not None:
                    # sum_k sigma^{ik} dW^k, shape (P, n, *S)
                    eff = np.einsum("ik...,pk->pi...", sc.Sigma, dW)
                    for i in range(nd):
                        rhs += eff[:, i] * grads[i]
                if sc.Nu is not None:
                    rhs += np.einsum("k...,pk->p...", sc.Nu, dW) * u
                if G is not None:
                    G = np.asarray(G)
                    if G.ndim == nd + 1:
                        rhs += np.einsum("k...,pk->p...", G, dW)
                    else:
                        rhs += np.einsum("pk...,pk->p...", G, dW)
            flat = rhs.reshape(P, -1)
            r = flat[:, self.interior]
            beta = self.boundary_values(t + dt if t_next is None else t_next)
            if beta is not None and not self._identity:
                r = r + dt * (self._L_B @ beta)[None, :]
            if self._identity:
                x = r
            else:
                x = self._solver.solve(np.ascontiguousarray(r.T)).T
            out = np.zeros_like(flat)
            out[:, self.interior] = x
            if beta is not None:
                out[:, self.bnodes] = beta[None, :]
        return out.reshape(u.shape)


def step_direct(u_m, coeffs: CoefficientSet, grid: Grid, t_m: float, dW_m, dt: float, boundary=None):
    """One step of the direct scheme for a single state (or a batch with leading axis)."""
    u = np.asarray(u_m, dtype=float)
    single = u.ndim == grid.ndim
    scheme = DirectScheme(coeffs, grid, dt, boundary)
    ub = u[None] if single else u
    dW = np.asarray(dW_m, dtype=float).reshape(ub.shape[0], coeffs.modes)
    out = scheme.step(ub, t_m, dW)
    return out[0] if single else out


def _initial_state(problem: Problem, grid: Grid, P: int):
    u0 = _lattice_field(problem.initial, grid, 0.0).copy()
    u0[~grid.inside] = 0.0
    if problem.boundary is not None:
        u0[grid.boundary] = _lattice_field(problem.boundary, grid, 0.0)[grid.boundary]
    else:
        u0[grid.boundary] = 0.0
    return np.repeat(u0[None], P, axis=0)


@dataclass(eq=False)
class BatchResult:
    final: np.ndarray
    stored: Optional[np.ndarray]
    times: np.ndarray
    poisoned: np.ndarray
    wall_ratio: Optional[np.ndarray]


def integrate_direct(problem: Problem, grid: Grid, time_grid: TimeGrid, increments, *,
                     stride: int = 0, monitors: Sequence = (), forcing: Optional[Callable] = None,
                     scheme: Optional[DirectScheme] = None) -> BatchResult:
    """Run the direct scheme over a batch of paths.

    Parameters
    ----------
    increments : array (P, K, num_steps)
    stride : store every ``stride``-th state (0 stores nothing but the final state).
    monitors : callables ``monitor(m, t, u)`` invoked on the initial state
        (m = 0) and after each step, ``u`` of shape (P, *S).
    forcing : optional ``forcing(m, t, u) -> (F, G)`` overriding f and g.
    """
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[None]
    P, K, M = inc.shape
    if M != time_grid.num_steps or K != problem.coeffs.modes:
        raise ContractViolation(
            f"increments shape {inc.shape} does not match modes={problem.coeffs.modes}, "
            f"steps={time_grid.num_steps}"
        )
    scheme = scheme or DirectScheme(problem.coeffs, grid, time_grid.dt, problem.boundary)
    times = time_grid.times
    u = _initial_state(problem, grid, P)
    poisoned = np.zeros(P, dtype=bool)
    stored = []
    stored_t = []
    if stride:
        stored.append(u.copy())
        stored_t.append(times[0])
    for mon in monitors:
        mon(0, times[0], u)
    half = grid.spec.is_half_space
    wall_max = np.zeros(P)
    all_max = np.zeros(P)
    for m in range(M):
        t = times[m]
        fz = forcing(m, t, u) if forcing is not None else None
        u = scheme.step(u, t, inc[:, :, m], fz, times[m + 1])
        bad = ~np.isfinite(u.reshape(P, -1)).all(axis=1)
        if np.any(bad & ~poisoned):
            poisoned |= bad
            u[poisoned] = np.nan
        if half:
            with np.errstate(invalid="ignore"):
                wall_max = np.fmax(wall_max, np.abs(u[:, -2]).reshape(P, -1).max(axis=1))
                all_max = np.fmax(all_max, np.abs(u).reshape(P, -1).max(axis=1))
        for mon in monitors:
            mon(m + 1, times[m + 1], u)
        if stride and (m + 1) % stride == 0:
            stored.append(u.copy())
            stored_t.append(times[m + 1])
    wall_ratio = None
    if half:
        with np.errstate(invalid="ignore", divide="ignore"):
            wall_ratio = np.where(all_max > 0, wall_max / np.where(all_max > 0, all_max, 1.0), 0.0)
        ok = ~poisoned
        if np.any(wall_ratio[ok] > WALL_RATIO_LIMIT):
            warnings.warn(
                f"solution reaches {wall_ratio[ok].max():.2e} of its maximum next to the truncation wall",
                TruncationWarning,
                stacklevel=2,
            )
    return BatchResult(
        final=u,
        stored=np.stack(stored, axis=1) if stride else None,
        times=np.array(stored_t),
        poisoned=poisoned,
        wall_ratio=wall_ratio,
    )


def _bundle_increments(bundle):
    if isinstance(bundle, WienerBundle):
        return bundle.increments[None]
    return np.asarray(bundle, dtype=float)


def solve_direct(problem: Problem, bundle, grid: Grid, time_grid: TimeGrid, stride: int = 1) -> SolutionField:
    """Full trajectory of one path (snapshots every ``stride`` steps)."""
    if problem.coeffs.semilinear:
        raise ContractViolation("solve_direct needs fixed f, g; use solve_semilinear_picard")
    res = integrate_direct(problem, grid, time_grid, _bundle_increments(bundle), stride=stride)
    return SolutionField(
        values=res.stored[0],
        times=res.times,
        grid=grid,
        scheme="direct",
        stride=stride,
        poisoned=bool(res.poisoned[0]),
        boundary_data=problem.boundary,
        initial_data=res.stored[0][0].copy(),
        wall_ratio=None if res.wall_ratio is None else float(res.wall_ratio[0]),
    )


# ---------------------------------------------------------------------------
# decomposition pipeline on half spaces
# ---------------------------------------------------------------------------


def _sigma_series_fn(sigma):
    """Normalise sigma to a callable t -> array (n, K)."""
    if callable(sigma):
        return lambda t: np.asarray(sigma(t), dtype=float)
    arr = np.asarray(sigma, dtype=float)
    return lambda t: arr


def _require_half(grid):
    if not grid.spec.is_half_space:
        raise ContractViolation(f"decomposition pipeline needs half_line or half_plane, got {grid.spec.kind}")


class _HeatReflection:
    """du = K Lap u dt + (sigma^{ik} d_i u + g^k) dW^k on the odd-extended grid."""

    def __init__(self, g_field, sigma, K_upper, grid_half, dt, modes):
        _require_half(grid_half)
        self.grid_half = grid_half
        self.sym = symmetric_grid(grid_half)
        self.sigma = _sigma_series_fn(sigma)
        self.modes = modes
        self.g_field = g_field
        n = grid_half.ndim
        sig0 = self.sigma(0.0)
        if sig0.shape != (n, modes):
            raise ContractViolation(f"sigma must have shape ({n}, {modes}), got {sig0.shape}")
        if np.any(sig0[0] != 0):
            raise ContractViolation("sigma^{1k} must vanish for the reflection construction")
        sigma_fn = self.sigma
        nd = n
        coeffs = CoefficientSet(
            n=n, modes=modes,
            a=lambda t, X: K_upper * np.eye(nd).reshape((nd, nd) + (1,) * nd),
            sigma=lambda t, X: sigma_fn(t).reshape((nd, modes) + (1,) * nd),
            x_independent_sigma=True,
            autonomous=not callable(sigma),
        )
        self.scheme = DirectScheme(coeffs, self.sym, dt)
        self.Xh = grid_half.mesh()

    def g_extended(self, t):
        if self.g_field is None or not self.modes:
            return None
        g = _broadcast(self.g_field(t, self.Xh), (self.modes,) + self.grid_half.shape, "g", self.Xh)
        return odd_extend(g, axis=1)

    def step(self, u_sym, t, dW):
        sig = self.sigma(t)
        if np.any(sig[0] != 0):
            raise ContractViolation("sigma^{1k} must vanish for the reflection construction")
        out = self.scheme.step(u_sym, t, dW, (None, self.g_extended(t)))
        axis = 1
        out = 0.5 * (out - np.flip(out, axis=axis))
        return out


def solve_heat_reflection(g_field, sigma, K_upper: float, grid_half: Grid, time_grid: TimeGrid,
                          bundle: WienerBundle, stride: int = 1, return_extended: bool = False):
    """Solve the constant-coefficient model problem with diffusion K_upper * Laplacian.

    The data ``g_field(t, X) -> (K, *S_half)`` is continued oddly in x^1,
    the problem is solved on the symmetric grid, and the result restricted
    back to x^1 >= 0 (where it vanishes on x^1 = 0).
    """
    hr = _HeatReflection(g_field, sigma, K_upper, grid_half, time_grid.dt, bundle.modes)
    u = np.zeros((1,) + hr.sym.shape)
    times = time_grid.times
    ext = [u[0].copy()]
    tt = [times[0]]
    for m in range(time_grid.num_steps):
        u = hr.step(u, times[m], bundle.increments[None, :, m])
        if (m + 1) % stride == 0:
            ext.append(u[0].copy())
            tt.append(times[m + 1])
    ext = np.stack(ext)
    half = restrict_half(ext, axis=1)
    sol = SolutionField(half, np.array(tt), grid_half, "decomposition", stride)
    if return_extended:
        return sol, ext
    return sol


def _effective_diffusion(a, sigma, t, grid, degenerate_ok):
    n = grid.ndim
    X = grid.mesh()
    A = _broadcast(a(t, X), (n, n) + grid.shape, "a", X)
    sig = np.asarray(sigma(t), dtype=float)
    Aeff = A - 0.5 * np.einsum("ik,jk->ij", sig, sig).reshape((n, n) + (1,) * n)
    lo = float(np.min(_sym_eigs(Aeff)[0]))
    scale = max(1.0, float(np.max(np.abs(A))))
    if lo < -1e-12 * scale:
        raise PreconditionError(f"effective diffusion a - sigma sigma^T / 2 is negative ({lo:.3e})")
    if lo <= 1e-12 * scale and not degenerate_ok:
        raise PreconditionError("effective diffusion is degenerate; enable degenerate test mode")
    return Aeff


class _RandomPDE:
    """dv/dt = (a - sigma sigma^T / 2) : D^2 v + forcing(t, x - xi_t), implicit Euler."""

    def __init__(self, a, sigma, grid_half, dt, degenerate_ok=False, autonomous=True):
        self.grid = grid_half
        self.a = a
        self.sigma = _sigma_series_fn(sigma)
        self.dt = dt
        self.degenerate_ok = degenerate_ok
        self.autonomous = autonomous
        self._scheme = None

    def _build(self, t):
        Aeff = _effective_diffusion(self.a, self.sigma, t, self.grid, self.degenerate_ok)
        n = self.grid.ndim
        coeffs = CoefficientSet(n=n, modes=0, a=lambda tt, X, A=Aeff: A)
        return DirectScheme(coeffs, self.grid, self.dt)

    def step(self, v, t, forcing_translated):
        if self._scheme is None or not self.autonomous:
            self._scheme = self._build(t)
        return self._scheme.step(v, t, np.zeros((v.shape[0], 0)), (forcing_translated, None))


def solve_random_pde(f_tilde, a, sigma, xi: TranslationPath, grid_half: Grid, time_grid: TimeGrid,
                     v0=None, degenerate_ok: bool = False, stride: int = 1) -> np.ndarray:
    """Pathwise parabolic solve; returns v at every stored step, shape (n_stored, *S).

    ``f_tilde`` is a callable ``(m, t) -> array S`` or an array with one
    lattice field per step.  It is evaluated at x - xi_{t_m} by linear
    interpolation (odd in x^1 on half spaces, zero beyond the grid).
    ``a`` is a coefficient callable ``(t, X) -> (n, n, ...)`` or a constant
    (n, n) array.
    """
    if not callable(a):
        a_arr = np.asarray(a, dtype=float)
        nd = grid_half.ndim
        a = lambda t, X: a_arr.reshape((nd, nd) + (1,) * nd)
    rp = _RandomPDE(a, sigma, grid_half, time_grid.dt, degenerate_ok)
    v = np.zeros((1,) + grid_half.shape)
    if v0 is not None:
        v[0] = v0
    times = time_grid.times
    out = [v[0].copy()]
    for m in range(time_grid.num_steps):
        f_m = f_tilde(m, times[m]) if callable(f_tilde) else (None if f_tilde is None else f_tilde[m])
        ft = None
        if f_m is not None:
            ft = shift_field(f_m, grid_half, -xi.values[m], odd_axis0=grid_half.spec.is_half_space)[None]
        v = rp.step(v, times[m], ft)
        if (m + 1) % stride == 0:
            out.append(v[0].copy())
    return np.stack(out)


def translate_field(v, xi, grid: Grid, steps=None) -> np.ndarray:
    """u~(t, x) = v(t, x + xi_t) for each stored time level of ``v``.

    ``xi`` is a TranslationPath (or an array of displacements); ``steps``
    maps stored levels to rows of ``xi`` (default: one row per level).
    """
    vals = xi.values if isinstance(xi, TranslationPath) else np.asarray(xi, dtype=float)
    if np.any(vals[:, 0] != 0.0):
        raise ContractViolation("translation must be tangential: xi^1 has to vanish identically")
    v = np.asarray(v, dtype=float)
    steps = np.arange(v.shape[0]) if steps is None else np.asarray(steps)
    return np.stack([shift_field(v[j], grid, vals[m]) for j, m in enumerate(steps)])


def _check_decomposable(problem: Problem, grid):
    _require_half(grid)
    c = problem.coeffs
    if c.semilinear:
        raise ContractViolation("decomposition handles linear problems only")
    if c.b is not None or c.c is not None or c.nu is not None:
        raise ContractViolation("decomposition supports a, sigma, f, g only (b = c = nu = 0)")
    if c.sigma is not None and c.modes and not c.x_independent_sigma:
        raise ContractViolation("decomposition needs x-independent sigma")
    if problem.K_upper is None:
        raise ContractViolation("decomposition needs K_upper")


def _sigma_of_t(coeffs, grid):
    n, K = coeffs.n, coeffs.modes
    if coeffs.sigma is None or K == 0:
        return lambda t: np.zeros((n, K))
    X = tuple(np.zeros(1) for _ in range(n))

    def fn(t):
        return np.asarray(coeffs.sigma(t, X), dtype=float).reshape(n, K, -1)[:, :, 0]

    return fn


def solve_decomposition(problem: Problem, bundle: WienerBundle, grid_half: Grid, time_grid: TimeGrid,
                        stride: int = 1, degenerate_ok: bool = False,
                        noise_threshold: float = 0.5) -> SolutionField:
    """u = u_hat + u~ with the reflection, random-PDE and translation steps.

    1. u_hat solves the K_upper-Laplacian model problem driven by g,
    2. f~ = f - (K delta - a) : D^2 u_hat,
    3. xi_t = int sigma dW,
    4. v solves the random PDE forced by f~(t, x - xi_t), v(0) = u0,
    5. u~(t, x) = v(t, x + xi_t).
    """
    _check_decomposable(problem, grid_half)
    c = problem.coeffs
    K = problem.K_upper
    n = grid_half.ndim
    dt = time_grid.dt
    times = time_grid.times
    sig_fn = _sigma_of_t(c, grid_half)
    steps = time_grid.num_steps
    sig_series = np.stack([sig_fn(times[m]) for m in range(steps)]) if steps else np.zeros((0, n, c.modes))
    xi = translation_path(sig_series, bundle)
    if not xi.first_component_zero:
        raise ContractViolation("sigma^{1k} must vanish: translation would leave the half space")

    autonomous = c.autonomous
    hr = _HeatReflection(c.g, sig_fn if not autonomous else sig_fn(0.0), K, grid_half, dt, c.modes)
    rp = _RandomPDE(c.a, sig_fn, grid_half, dt, degenerate_ok, autonomous)
    X = grid_half.mesh()

    u_hat = np.zeros((1,) + hr.sym.shape)
    v = np.zeros((1,) + grid_half.shape)
    if problem.initial is not None:
        v[0] = _lattice_field(problem.initial, grid_half)
        v[0][grid_half.boundary] = 0.0

    values = []
    stored_t = []
    noise_ratio = 0.0

    def snapshot(m):
        uh = restrict_half(u_hat[0], axis=0)
        ut = shift_field(v[0], grid_half, xi.values[m])
        u = uh + ut
        u[grid_half.boundary] = 0.0
        values.append(u)
        stored_t.append(times[m])

    snapshot(0)
    for m in range(steps):
        t = times[m]
        uh_half = restrict_half(u_hat[0], axis=0)
        A = _broadcast(c.a(t, X), (n, n) + grid_half.shape, "a", X)
        corr = correction_term(uh_half, A, K, grid_half)
        f = np.zeros(grid_half.shape) if c.f is None else _broadcast(c.f(t, X), grid_half.shape, "f", X)
        f_tilde = f - corr
        if (m + 1) % stride == 0 and np.any(corr):
            noise_ratio = max(noise_ratio, _stencil_noise(uh_half, grid_half, K, c.a(t, X)))
        ft = shift_field(f_tilde, grid_half, -xi.values[m], odd_axis0=True)
        v = rp.step(v, t, ft[None])
        u_hat = hr.step(u_hat, t, bundle.increments[None, :, m])
        if (m + 1) % stride == 0:
            snapshot(m + 1)

    sol = SolutionField(
        values=np.stack(values),
        times=np.array(stored_t),
        grid=grid_half,
        scheme="decomposition",
        stride=stride,
        poisoned=not bool(np.all(np.isfinite(values[-1]))),
        boundary_data=None,
        initial_data=values[0].copy(),
    )
    sol.diagnostics = {
        "translation": xi,
        "stencil_noise_ratio": noise_ratio,
        "stencil_noise_flag": bool(noise_ratio > noise_threshold),
    }
    if sol.diagnostics["stencil_noise_flag"]:
        warnings.warn(
            f"f~ correction dominated by stencil error (h vs 2h mismatch {noise_ratio:.2f})",
            RuntimeWarning,
            stacklevel=2,
        )
    return sol


def correction_term(u_hat, A, K_upper: float, grid: Grid) -> np.ndarray:
    """(K delta^{ij} - a^{ij}) d_i d_j u_hat on interior nodes (0 elsewhere).

    Uses the same central stencils as the implicit operator; the forcing
    of the random PDE is f minus this term.
    """
    n = grid.ndim
    out = np.zeros(grid.shape)
    for i in range(n):
        for j in range(n):
            w = (K_upper if i == j else 0.0) - A[i, j]
            if np.any(w != 0):
                out += w * apply_stencil(u_hat, "dd", grid, (i, j))
    return out


def _stencil_noise(uh, grid, K, A):
    """Relative mismatch of the u_hat second-difference correction at h and 2h (1-d proxy)."""
    u = np.moveaxis(uh, 0, -1)
    h = grid.spacing[0]
    fine = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / h**2
    coarse = (u[..., 4:] - 2 * u[..., 2:-2] + u[..., :-4]) / (4 * h**2)
    f = fine[..., 1:-1]
    num = np.linalg.norm(f - coarse)
    den = np.linalg.norm(f)
    return float(num / den) if den > 0 else 0.0


# ---------------------------------------------------------------------------
# semilinear equations by Picard iteration
# ---------------------------------------------------------------------------


def solve_semilinear_picard(problem: Problem, bundle, grid: Grid, time_grid: TimeGrid, tol: float = 1e-6,
                            max_sweeps: int = 12, p: float = 2.0):
    """Iterate u^{(k+1)} = T u^{(k)} from u^{(0)} = 0, T = linear solve with frozen reactions.

    Distances are discrete W^{2,p} space-time norms of successive iterates
    (root-mean-p over paths for a batch).  Returns ``(solution, diagnostics)``;
    ``solution`` is a SolutionField for a single bundle, else the stacked
    trajectories of shape (P, num_steps + 1, *S).
    """
    from .analysis import sobolev_norm

    c = problem.coeffs
    if not c.semilinear:
        lin_f, lin_g = c.f, c.g
        f_react = None if lin_f is None else (lambda t, X, u: np.broadcast_to(lin_f(t, X), u.shape))
        g_react = None
        if lin_g is not None:
            g_react = lambda t, X, u: np.broadcast_to(
                lin_g(t, X), u.shape[:1] + (c.modes,) + u.shape[1:]
            )
    else:
        f_react, g_react = c.f, c.g
    inc = _bundle_increments(bundle)
    P = inc.shape[0]
    X = grid.mesh()
    S = grid.shape
    linear = CoefficientSet(c.n, c.modes, c.a, c.b, c.c, c.sigma, c.nu,
                            x_independent_sigma=c.x_independent_sigma, autonomous=c.autonomous)
    lin_problem = Problem(linear, problem.initial, problem.boundary, problem.K_upper)
    scheme = DirectScheme(linear, grid, time_grid.dt, problem.boundary)
    times = time_grid.times
    prev = np.zeros((P, time_grid.num_steps + 1) + S)
    distances, ratios = [], []
    converged = False
    res = None
    for sweep in range(max_sweeps):
        frozen = prev

        def forcing(m, t, u, frozen=frozen):
            w = frozen[:, m]
            F = None if f_react is None else _broadcast(f_react(t, X, w), (P,) + S, "f", X)
            G = None
            if g_react is not None and c.modes:
                G = _broadcast(g_react(t, X, w), (P, c.modes) + S, "g", X)
            return F, G

        res = integrate_direct(lin_problem, grid, time_grid, inc, stride=1, forcing=forcing, scheme=scheme)
        cur = res.stored
        diff = cur - prev
        per_path = np.array([sobolev_norm(diff[i], 2, p, grid, time_grid) for i in range(P)])
        d = float(np.mean(per_path**p) ** (1.0 / p))
        if distances and distances[-1] > 0:
            ratios.append(d / distances[-1])
        distances.append(d)
        prev = cur
        if d <= tol:
            converged = True
            break
    diag = ContractionDiagnostics(distances, ratios, converged, tol)
    if isinstance(bundle, WienerBundle):
        sol = SolutionField(prev[0], times, grid, "picard", 1, bool(res.poisoned[0]), problem.boundary,
                            prev[0][0].copy())
        sol.diagnostics = {"contraction": diag}
        return sol, diag
    return prev, diag
