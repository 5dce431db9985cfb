"""Coefficients of  du = (a u_xx + b u_x + c u + f) dt + (sigma u_x + nu u + g) dW.

Every coefficient is a callable ``(t, X) -> array`` where ``X`` is a tuple
of coordinate arrays (one per spatial axis, all of the same shape ``S``).
Shapes of the results, broadcastable to:

====== =============== ==========================================
a      (n, n, *S)
b      (n, *S)
c      S
sigma  (n, K, *S)
nu     (K, *S)
f      S              ``f(t, X, u)`` -> (P, *S) when semilinear
g      (K, *S)        ``g(t, X, u)`` -> (P, K, *S) when semilinear
====== =============== ==========================================

``None`` stands for an identically zero coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, ContractViolation, EvaluationError

__all__ = [
    "CoefficientSet",
    "ParabolicityBounds",
    "ParabolicityReport",
    "SampledCoefficients",
    "verify_parabolicity",
    "evaluate_coefficients",
    "scalar_field",
    "FIELD_KINDS",
]


@dataclass(frozen=True)
class CoefficientSet:
    n: int
    modes: int
    a: Callable
    b: Optional[Callable] = None
    c: Optional[Callable] = None
    sigma: Optional[Callable] = None
    nu: Optional[Callable] = None
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    x_independent_sigma: bool = False
    semilinear: bool = False
    autonomous: bool = True
    lipschitz: Optional[float] = None

    def with_forcing(self, f=None, g=None, semilinear=False) -> "CoefficientSet":
        return replace(self, f=f, g=g, semilinear=semilinear)


@dataclass(frozen=True)
class ParabolicityBounds:
    kappa: float
    K_upper: float

    def __post_init__(self):
        if not (0 < self.kappa <= self.K_upper):
            raise ConfigurationError(
                f"need 0 < kappa <= K_upper, got kappa={self.kappa}, K_upper={self.K_upper}"
            )


@dataclass(frozen=True)
class ParabolicityReport:
    min_margin: float
    max_upper: float
    passed: bool

    def to_dict(self):
        return {"min_margin": self.min_margin, "max_eig_2a": self.max_upper, "pass": self.passed}


@dataclass(frozen=True, eq=False)
class SampledCoefficients:
    A: np.ndarray
    B: Optional[np.ndarray]
    C: Optional[np.ndarray]
    Sigma: Optional[np.ndarray]
    Nu: Optional[np.ndarray]
    F: Optional[np.ndarray]
    G: Optional[np.ndarray]


def _sym_eigs(M):
    """Closed-form (min, max) eigenvalues of symmetric 1x1 or 2x2 blocks, shape (n, n, ...)."""
    if M.shape[0] == 1:
        return M[0, 0], M[0, 0]
    if M.shape[0] != 2:
        raise ContractViolation("closed-form eigenvalues implemented for n <= 2 only")
    tr = M[0, 0] + M[1, 1]
    disc = np.hypot(M[0, 0] - M[1, 1], 2.0 * M[0, 1])
    return 0.5 * (tr - disc), 0.5 * (tr + disc)


def _broadcast(arr, shape, name, X):
    arr = np.asarray(arr, dtype=float)
    try:
        arr = np.broadcast_to(arr, shape)
    except ValueError:
        raise EvaluationError(f"{name} returned shape {arr.shape}, expected {shape}") from None
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        spatial = tuple(bad[-len(X):]) if X else ()
        loc = tuple(float(x[spatial]) for x in X) if X else ()
        raise EvaluationError(f"{name} is not finite at x = {loc}", loc)
    return arr


def _grid_points(grid):
    return grid.mesh()


def verify_parabolicity(coeffs: CoefficientSet, grid, time_samples, bounds: ParabolicityBounds,
                        rtol: float = 1e-12) -> ParabolicityReport:
    """min over grid x times of lambda_min(2a - sigma sigma^T), and the upper bound on 2a.

    Passes iff ``min_margin >= kappa`` and ``lambda_max(2a) <= K_upper`` up to
    a relative slack ``rtol`` that absorbs rounding in the closed forms.
    """
    X = _grid_points(grid)
    S = X[0].shape
    n = coeffs.n
    lo, hi = np.inf, -np.inf
    for t in time_samples:
        A = _broadcast(coeffs.a(float(t), X), (n, n) + S, "a", X)
        if not np.allclose(A, np.swapaxes(A, 0, 1), rtol=0, atol=1e-14 * max(1.0, np.max(np.abs(A)))):
            raise ContractViolation("diffusion matrix a is not symmetric")
        two_a = 2.0 * A
        M = two_a.copy()
        if coeffs.sigma is not None and coeffs.modes:
            Sig = _broadcast(coeffs.sigma(float(t), X), (n, coeffs.modes) + S, "sigma", X)
            M -= np.einsum("ik...,jk...->ij...", Sig, Sig)
        lo = min(lo, float(np.min(_sym_eigs(M)[0])))
        hi = max(hi, float(np.max(_sym_eigs(two_a)[1])))
    slack = rtol * max(1.0, abs(bounds.K_upper))
    passed = lo >= bounds.kappa - slack and hi <= bounds.K_upper + slack
    return ParabolicityReport(lo, hi, bool(passed))


def evaluate_coefficients(coeffs: CoefficientSet, t: float, grid, u_current=None) -> SampledCoefficients:
    """Sample every coefficient on the full lattice at time ``t``.

    ``u_current`` (shape (P, *S) or S) must be given iff the set is semilinear.
    """
    if coeffs.semilinear and u_current is None:
        raise ContractViolation("semilinear coefficients need the current solution")
    if not coeffs.semilinear and u_current is not None:
        raise ContractViolation("u_current given for a linear coefficient set")
    X = _grid_points(grid)
    S = X[0].shape
    n, K = coeffs.n, coeffs.modes
    t = float(t)
    A = _broadcast(coeffs.a(t, X), (n, n) + S, "a", X)
    B = None if coeffs.b is None else _broadcast(coeffs.b(t, X), (n,) + S, "b", X)
    C = None if coeffs.c is None else _broadcast(coeffs.c(t, X), S, "c", X)
    Sig = None
    if coeffs.sigma is not None and K:
        Sig = _broadcast(coeffs.sigma(t, X), (n, K) + S, "sigma", X)
    Nu = None if (coeffs.nu is None or not K) else _broadcast(coeffs.nu(t, X), (K,) + S, "nu", X)
    if coeffs.semilinear:
        u = np.asarray(u_current, dtype=float)
        lead = u.shape[: u.ndim - len(S)]
        F = None if coeffs.f is None else _broadcast(coeffs.f(t, X, u), lead + S, "f", X)
        G = None
        if coeffs.g is not None and K:
            G = _broadcast(coeffs.g(t, X, u), lead + (K,) + S, "g", X)
    else:
        F = None if coeffs.f is None else _broadcast(coeffs.f(t, X), S, "f", X)
        G = None if (coeffs.g is None or not K) else _broadcast(coeffs.g(t, X), (K,) + S, "g", X)
    return SampledCoefficients(A, B, C, Sig, Nu, F, G)


# ---------------------------------------------------------------------------
# named built-in fields for scenario files
# ---------------------------------------------------------------------------


def _bump01(s):
    """Smooth bump on (0, 1) normalised to 1 at s = 1/2."""
    out = np.zeros_like(s, dtype=float)
    m = (s > 0) & (s < 1)
    sm = s[m]
    out[m] = np.exp(4.0 - 1.0 / (sm * (1.0 - sm)))
    return out


def _scalar_kinds():
    def zero(p):
        return lambda t, X: np.zeros(X[0].shape)

    def constant(p):
        v = float(p.get("value", 1.0))
        return lambda t, X: np.full(X[0].shape, v)

    def sin_pi_x(p):
        A = float(p.get("amplitude", 1.0))
        k = float(p.get("frequency", 1.0))
        ax = int(p.get("axis", 0))
        return lambda t, X: A * np.sin(k * np.pi * X[ax])

    def linear(p):
        slope = float(p.get("slope", 1.0))
        c0 = float(p.get("intercept", 0.0))
        ax = int(p.get("axis", 0))
        return lambda t, X: c0 + slope * X[ax]

    def linear_in_t(p):
        rate = float(p.get("rate", 1.0))
        return lambda t, X: np.full(X[0].shape, rate * t)

    def bump(p):
        lo, hi = float(p["lo"]), float(p["hi"])
        A = float(p.get("amplitude", 1.0))
        ax = int(p.get("axis", 0))
        return lambda t, X: A * _bump01((X[ax] - lo) / (hi - lo))

    def radial_bump(p):
        c = [float(v) for v in p["center"]]
        r = float(p["radius"])
        A = float(p.get("amplitude", 1.0))

        def fn(t, X):
            rho2 = sum((x - ci) ** 2 for x, ci in zip(X, c)) / (r * r)
            out = np.zeros(X[0].shape)
            m = rho2 < 1
            out[m] = A * np.exp(1.0 - 1.0 / (1.0 - rho2[m]))
            return out

        return fn

    def gaussian(p):
        c = float(p.get("center", 0.0))
        w = float(p.get("width", 1.0))
        A = float(p.get("amplitude", 1.0))
        ax = int(p.get("axis", 0))
        return lambda t, X: A * np.exp(-(((X[ax] - c) / w) ** 2))

    def x_gauss(p):
        # vanishes at x^1 = 0; used as zero-trace noise forcing on half spaces
        A = float(p.get("amplitude", 1.0))
        w = float(p.get("width", 1.0))
        return lambda t, X: A * X[0] * np.exp(-((X[0] / w) ** 2))

    def blend(p):
        eps = float(p["epsilon"])
        A = float(p.get("amplitude", 0.8))
        return lambda t, X: (1.0 - eps) * A * np.sin(np.pi * X[0]) + eps

    def heat_manufactured_forcing(p):
        return lambda t, X: np.sin(np.pi * X[0]) * (1.0 + np.pi**2 * t)

    def t_sin_pi_x(p):
        A = float(p.get("amplitude", 1.0))
        return lambda t, X: A * t * np.sin(np.pi * X[0])

    def exp_t_sin_pi_x(p):
        rate = float(p["rate"])
        A = float(p.get("amplitude", 1.0))
        return lambda t, X: A * np.exp(rate * t) * np.sin(np.pi * X[0])

    def wall_gauss(p):
        # x^1 times a Gaussian; zero trace on x^1 = 0 in any dimension
        c = [float(v) for v in p["center"]]
        w = float(p.get("width", 1.0))
        A = float(p.get("amplitude", 1.0))

        def fn(t, X):
            r2 = sum((x - ci) ** 2 for x, ci in zip(X, c))
            return A * X[0] * np.exp(-r2 / (w * w))

        return fn

    return {
        "zero": zero,
        "constant": constant,
        "sin_pi_x": sin_pi_x,
        "linear": linear,
        "linear_in_t": linear_in_t,
        "bump": bump,
        "radial_bump": radial_bump,
        "gaussian": gaussian,
        "x_gauss": x_gauss,
        "blend": blend,
        "heat_manufactured_forcing": heat_manufactured_forcing,
        "t_sin_pi_x": t_sin_pi_x,
        "exp_t_sin_pi_x": exp_t_sin_pi_x,
        "wall_gauss": wall_gauss,
    }


FIELD_KINDS = _scalar_kinds()
TIME_DEPENDENT_KINDS = ("linear_in_t", "heat_manufactured_forcing", "t_sin_pi_x", "exp_t_sin_pi_x")


def scalar_field(spec) -> Callable:
    """Build ``phi(t, X)`` from ``{"kind": name, **params}`` (numbers mean constants)."""
    if spec is None:
        return None
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": float(spec)}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError(f"field spec must be a number or a dict with 'kind', got {spec!r}")
    params = {k: v for k, v in spec.items() if k != "kind"}
    try:
        factory = FIELD_KINDS[spec["kind"]]
    except KeyError:
        raise ConfigurationError(
            f"unknown field kind {spec['kind']!r}; known: {sorted(FIELD_KINDS)}"
        ) from None
    try:
        return factory(params)
    except KeyError as exc:
        raise ConfigurationError(f"field {spec['kind']!r} is missing parameter {exc}") from None


def _stack(fns, lead_shape):
    def fn(t, X):
        S = X[0].shape
        out = np.empty(lead_shape + S)
        flat = out.reshape((-1,) + S)
        for i, phi in enumerate(fns):
            flat[i] = phi(t, X)
        return out

    return fn


def _matrix(spec, n, name):
    """n x n (or for sigma n x K) field from a nested list of scalar specs."""
    rows = spec
    fns = [[scalar_field(e) for e in row] for row in rows]
    if len(fns) != n:
        raise ConfigurationError(f"{name} needs {n} rows, got {len(fns)}")
    cols = len(fns[0])
    if any(len(r) != cols for r in fns):
        raise ConfigurationError(f"{name} rows have unequal length")
    return _stack([f for r in fns for f in r], (n, cols)), cols


def _is_constant_spec(spec):
    return isinstance(spec, (int, float)) or (isinstance(spec, dict) and spec.get("kind") in ("constant", "zero"))


def _depends_on_t(spec):
    return isinstance(spec, dict) and spec.get("kind") in TIME_DEPENDENT_KINDS


def _flat_specs(spec):
    if isinstance(spec, list):
        out = []
        for s in spec:
            out.extend(_flat_specs(s))
        return out
    return [spec]


def _reaction(spec, K=None):
    """Semilinear reaction  r(t, X, u) = gamma * u  (optionally times a scalar field)."""
    gamma = float(spec.get("gamma", 0.0))
    shape = spec.get("shape")
    phi = scalar_field(shape) if shape is not None else None

    def fn(t, X, u):
        base = gamma * u if phi is None else gamma * phi(t, X) * u
        if K is None:
            return base
        k_axis = base.ndim - len(X)
        return np.repeat(np.expand_dims(base, k_axis), K, axis=k_axis)

    return fn, abs(gamma)


def coefficients_from_dict(d: dict, n: int) -> CoefficientSet:
    """Build a CoefficientSet from a scenario file ``coefficients`` block."""
    allowed = {"a", "b", "c", "sigma", "nu", "f", "g", "modes", "reaction_f", "reaction_g"}
    extra = set(d) - allowed
    if extra:
        raise ConfigurationError(f"unknown coefficient keys {sorted(extra)}")
    modes = int(d.get("modes", 1))
    sigma_spec = d.get("sigma")
    sigma = None
    x_indep = True
    if sigma_spec is not None:
        if not isinstance(sigma_spec, list):
            sigma_spec = [[sigma_spec]] if n == 1 else sigma_spec
        sigma, cols = _matrix(sigma_spec, n, "sigma")
        if cols != modes:
            raise ConfigurationError(f"sigma has {cols} columns but modes = {modes}")
        x_indep = all(_is_constant_spec(s) for s in _flat_specs(sigma_spec))

    a_spec = d.get("a", 1.0)
    if isinstance(a_spec, dict) and a_spec.get("kind") == "identity":
        scale = float(a_spec.get("scale", 1.0))
        a = lambda t, X: scale * np.eye(n).reshape((n, n) + (1,) * len(X))
    elif isinstance(a_spec, dict) and a_spec.get("kind") == "half_sigma_sigma_t":
        if sigma is None:
            raise ConfigurationError("a = half_sigma_sigma_t needs sigma")
        sig = sigma
        a = lambda t, X: 0.5 * np.einsum("ik...,jk...->ij...", sig(t, X), sig(t, X))
    elif isinstance(a_spec, list):
        a, cols = _matrix(a_spec, n, "a")
        if cols != n:
            raise ConfigurationError("a must be square")
    else:
        phi = scalar_field(a_spec)
        a = lambda t, X: np.eye(n).reshape((n, n) + (1,) * len(X)) * phi(t, X)

    b = None
    if d.get("b") is not None:
        bs = d["b"] if isinstance(d["b"], list) else [d["b"]]
        if len(bs) != n:
            raise ConfigurationError(f"b needs {n} components")
        b = _stack([scalar_field(s) for s in bs], (n,))
    c = scalar_field(d.get("c"))
    nu = None
    if d.get("nu") is not None:
        ns = d["nu"] if isinstance(d["nu"], list) else [d["nu"]]
        if len(ns) != modes:
            raise ConfigurationError(f"nu needs {modes} components")
        nu = _stack([scalar_field(s) for s in ns], (modes,))

    semilinear = "reaction_f" in d or "reaction_g" in d
    lip = None
    if semilinear:
        if d.get("f") is not None or d.get("g") is not None:
            raise ConfigurationError("give either f/g or reaction_f/reaction_g, not both")
        f, lf = _reaction(d["reaction_f"]) if "reaction_f" in d else (None, 0.0)
        g, lg = _reaction(d["reaction_g"], modes) if "reaction_g" in d else (None, 0.0)
        lip = lf + lg
    else:
        f = scalar_field(d.get("f"))
        g = None
        if d.get("g") is not None:
            gs = d["g"] if isinstance(d["g"], list) else [d["g"]]
            if len(gs) != modes:
                raise ConfigurationError(f"g needs {modes} components")
            g = _stack([scalar_field(s) for s in gs], (modes,))

    time_dep = any(
        _depends_on_t(s)
        for key in ("a", "b", "c", "sigma", "nu")
        for s in _flat_specs(d.get(key))
    )
    return CoefficientSet(
        n=n, modes=modes, a=a, b=b, c=c, sigma=sigma, nu=nu, f=f, g=g,
        x_independent_sigma=x_indep, semilinear=semilinear, autonomous=not time_dep,
        lipschitz=lip,
    )

