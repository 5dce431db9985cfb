"""Domains, uniform grids, boundary normals, compatibility checks and stencils.

Fields live on the full node lattice of a grid; the trailing ``grid.ndim``
axes of any array are spatial, leading axes (sample paths, time levels) are
carried along untouched by every operation here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, EvaluationError, PreconditionError

__all__ = [
    "DomainSpec",
    "Grid",
    "CompatibilityReport",
    "build_grid",
    "symmetric_grid",
    "outward_normal",
    "check_compatibility",
    "compatibility_residual",
    "odd_extend",
    "restrict_half",
    "apply_stencil",
    "shift_field",
]

KINDS = ("interval", "rectangle", "half_line", "half_plane", "disk")
_PARAMS = {
    "interval": ("a", "b"),
    "rectangle": ("a1", "b1", "a2", "b2"),
    "half_line": ("x_max",),
    "half_plane": ("x_max", "y_min", "y_max"),
    "disk": ("radius",),
}


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        names = _PARAMS[self.kind]
        if len(self.params) != len(names):
            raise ConfigurationError(f"{self.kind} takes parameters {names}, got {self.params}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ConfigurationError(f"degenerate extent [{lo}, {hi}] in {self}")

    @classmethod
    def interval(cls, a, b):
        return cls("interval", (a, b))

    @classmethod
    def rectangle(cls, a1, b1, a2, b2):
        return cls("rectangle", (a1, b1, a2, b2))

    @classmethod
    def half_line(cls, x_max):
        return cls("half_line", (x_max,))

    @classmethod
    def half_plane(cls, x_max, y_min, y_max):
        return cls("half_plane", (x_max, y_min, y_max))

    @classmethod
    def disk(cls, radius):
        return cls("disk", (radius,))

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind not in KINDS:
            raise ConfigurationError(f"unknown domain kind {kind!r}")
        names = _PARAMS[kind]
        extra = set(d) - set(names)
        missing = set(names) - set(d)
        if extra or missing:
            raise ConfigurationError(
                f"domain {kind} needs keys {names}; unknown {sorted(extra)}, missing {sorted(missing)}"
            )
        return cls(kind, tuple(d[k] for k in names))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(zip(_PARAMS[self.kind], self.params))}

    @property
    def ndim(self) -> int:
        return 1 if self.kind in ("interval", "half_line") else 2

    @property
    def is_half_space(self) -> bool:
        return self.kind in ("half_line", "half_plane")

    @property
    def bounds(self) -> tuple:
        p = self.params
        if self.kind == "interval":
            return ((p[0], p[1]),)
        if self.kind == "rectangle":
            return ((p[0], p[1]), (p[2], p[3]))
        if self.kind == "half_line":
            return ((0.0, p[0]),)
        if self.kind == "half_plane":
            return ((0.0, p[0]), (p[1], p[2]))
        return ((-p[0], p[0]), (-p[0], p[0]))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds)))


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform node lattice over a domain's bounding box.

    ``interior`` and ``boundary`` are boolean masks over the lattice; for the
    disk, nodes outside the closed disk belong to neither.  ``physical`` marks
    boundary nodes that lie on the true boundary of G (for half-space kinds
    the truncation walls are boundary nodes but not physical ones).
    """

    spec: DomainSpec
    cells: tuple
    axes: tuple
    interior: np.ndarray
    boundary: np.ndarray
    physical: np.ndarray
    boundary_index: np.ndarray
    normals: np.ndarray
    inside: np.ndarray = field(repr=False)

    @property
    def ndim(self) -> int:
        return self.spec.ndim

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self) -> tuple:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def h(self) -> float:
        return max(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mask(self) -> np.ndarray:
        return self.inside

    def mesh(self) -> tuple:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def interior_points(self) -> np.ndarray:
        return np.argwhere(self.interior)

    @property
    def boundary_points(self) -> np.ndarray:
        return self.boundary_index

    def region_mask(self, box) -> np.ndarray:
        """Lattice mask of nodes inside ``box = [(lo, hi), ...]`` (closed, per axis)."""
        X = self.mesh()
        m = np.ones(self.shape, dtype=bool)
        tol = 1e-12 * max(1.0, self.spec.diameter)
        for ax, (lo, hi) in enumerate(box):
            lo = -np.inf if lo is None else lo
            hi = np.inf if hi is None else hi
            m &= (X[ax] >= lo - tol) & (X[ax] <= hi + tol)
        return m


def build_grid(spec: DomainSpec, resolution) -> Grid:
    """Uniform grid with ``resolution`` cells per axis (an int or one int per axis)."""
    if isinstance(resolution, (int, np.integer)):
        cells = (int(resolution),) * spec.ndim
    else:
        cells = tuple(int(r) for r in resolution)
    if len(cells) != spec.ndim:
        raise ConfigurationError(f"{spec.kind} needs {spec.ndim} resolutions, got {cells}")
    if min(cells) < 4:
        raise ConfigurationError(f"resolution must be >= 4 per axis, got {cells}")
    axes = tuple(np.linspace(lo, hi, c + 1) for (lo, hi), c in zip(spec.bounds, cells))
    shape = tuple(c + 1 for c in cells)

    if spec.kind == "disk":
        return _disk_grid(spec, cells, axes)

    inside = np.ones(shape, dtype=bool)
    interior = np.zeros(shape, dtype=bool)
    interior[tuple(slice(1, -1) for _ in shape)] = True
    boundary = ~interior
    idx = np.argwhere(boundary)
    normals = np.zeros(idx.shape, dtype=float)
    for ax, c in enumerate(cells):
        normals[idx[:, ax] == 0, ax] -= 1.0
        normals[idx[:, ax] == c, ax] += 1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    physical = boundary.copy()
    if spec.is_half_space:
        # only x^1 = 0 is part of the boundary of the half space
        physical = np.zeros(shape, dtype=bool)
        physical[0] = True
        wall = idx[:, 0] == 0
        normals[wall] = 0.0
        normals[wall, 0] = -1.0
    return Grid(spec, cells, axes, interior, boundary, physical, idx, normals, inside)


def _disk_grid(spec, cells, axes):
    R = spec.params[0]
    X, Y = np.meshgrid(*axes, indexing="ij")
    h = max(a[1] - a[0] for a in axes)
    r = np.hypot(X, Y)
    inside = r <= R * (1 + 1e-12)
    # interior nodes need their full 3x3 neighbourhood inside so that every
    # central stencil (including the mixed one) only touches disk nodes
    full = np.zeros_like(inside)
    full[1:-1, 1:-1] = True
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            full[1:-1, 1:-1] &= inside[1 + dx : inside.shape[0] - 1 + dx, 1 + dy : inside.shape[1] - 1 + dy]
    interior = full & inside
    boundary = inside & ~interior
    idx = np.argwhere(boundary)
    pts = np.stack([X[boundary], Y[boundary]], axis=1)
    norm = np.linalg.norm(pts, axis=1, keepdims=True)
    if np.any(norm < h):
        raise ConfigurationError("disk radius too small for the requested resolution")
    normals = pts / norm
    return Grid(spec, tuple(cells), axes, interior, boundary, boundary.copy(), idx, normals, inside)


def symmetric_grid(grid: Grid) -> Grid:
    """Grid on the reflection of a half-space grid across {x^1 = 0}."""
    spec = grid.spec
    if spec.kind == "half_line":
        sym = DomainSpec.interval(-spec.params[0], spec.params[0])
        return build_grid(sym, 2 * grid.cells[0])
    if spec.kind == "half_plane":
        x_max, y0, y1 = spec.params
        sym = DomainSpec.rectangle(-x_max, x_max, y0, y1)
        return build_grid(sym, (2 * grid.cells[0], grid.cells[1]))
    raise ContractViolation(f"symmetric_grid needs a half-space grid, got {spec.kind}")


def _as_index(grid, boundary_index):
    idx = np.atleast_1d(np.asarray(boundary_index, dtype=int))
    if idx.size != grid.ndim:
        raise ContractViolation(f"index {boundary_index!r} does not address a {grid.ndim}-d lattice")
    return tuple(int(i) for i in idx)


def outward_normal(grid: Grid, boundary_index) -> np.ndarray:
    """Outward unit normal stored for a boundary node (lattice multi-index)."""
    idx = _as_index(grid, boundary_index)
    if any(i < 0 or i >= s for i, s in zip(idx, grid.shape)) or not grid.boundary[idx]:
        raise ContractViolation(f"node {idx} is not a boundary node")
    row = np.flatnonzero(np.all(grid.boundary_index == np.array(idx), axis=1))[0]
    return grid.normals[row].copy()


@dataclass(frozen=True)
class CompatibilityReport:
    max_residual: float
    worst_point: tuple
    tol: float
    passed: bool

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "worst_point": list(self.worst_point),
            "tol": self.tol,
            "pass": self.passed,
        }


def compatibility_residual(sigma: Callable, points, normals, time_samples):
    """max over points, times and modes of |n(x) . sigma^{.k}(t, x)|.

    ``sigma(t, X)`` takes a tuple of coordinate arrays and returns an array
    of shape (n, K, npts).  Returns ``(residual, worst_point, worst_time)``.
    """
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    X = tuple(points[:, i] for i in range(points.shape[1]))
    best = (-1.0, None, None)
    for t in time_samples:
        s = np.asarray(sigma(float(t), X), dtype=float)
        s = np.broadcast_to(s, s.shape[:2] + (points.shape[0],))
        if not np.all(np.isfinite(s)):
            bad = np.argwhere(~np.isfinite(s))[0]
            raise EvaluationError(f"sigma is not finite at {points[bad[-1]]}", tuple(points[bad[-1]]))
        res = np.abs(np.einsum("pi,ikp->kp", normals, s))
        if res.size == 0:
            continue
        k, p = np.unravel_index(np.argmax(res), res.shape)
        if res[k, p] > best[0]:
            best = (float(res[k, p]), tuple(points[p]), float(t))
    if best[1] is None:
        return 0.0, (), None
    return best


def check_compatibility(coeffs, grid: Grid, time_samples: Sequence[float], tol: float,
                        subset=None) -> CompatibilityReport:
    """Check that every noise vector sigma^{.k} is tangent to the boundary.

    Only physical boundary nodes are sampled (truncation walls of half-space
    domains are artificial).  ``subset`` optionally restricts the check to a
    lattice mask, e.g. a boundary portion Gamma.
    """
    sel = grid.physical[tuple(grid.boundary_index.T)]
    if subset is not None:
        sel &= np.asarray(subset)[tuple(grid.boundary_index.T)]
    idx = grid.boundary_index[sel]
    normals = grid.normals[sel]
    if coeffs.sigma is None or coeffs.modes == 0 or idx.size == 0:
        return CompatibilityReport(0.0, (), float(tol), True)
    pts = np.stack([grid.axes[ax][idx[:, ax]] for ax in range(grid.ndim)], axis=1)
    res, worst, _ = compatibility_residual(coeffs.sigma, pts, normals, time_samples)
    return CompatibilityReport(res, worst, float(tol), bool(res <= tol))


def odd_extend(field_half, axis: int = 0, tol=None) -> np.ndarray:
    """Odd continuation g(-x^1, x') = -g(x^1, x') across the node plane x^1 = 0.

    ``field_half`` has node 0 on ``axis`` at x^1 = 0.  The trace there must
    vanish within ``tol`` (default 1e-8 * max|field|); the returned array
    has exactly 0 on that plane and length 2N+1 along ``axis``.
    """
    g = np.asarray(field_half, dtype=float)
    g0 = np.take(g, 0, axis=axis)
    if tol is None:
        tol = 1e-8 * float(np.max(np.abs(g))) if g.size else 0.0
    worst = float(np.max(np.abs(g0))) if g0.size else 0.0
    if worst > tol:
        raise PreconditionError(
            f"field has nonzero trace {worst:.3e} on x^1 = 0 (tolerance {tol:.3e})"
        )
    pos = np.moveaxis(g, axis, 0).copy()
    pos[0] = 0.0
    ext = np.concatenate([-pos[:0:-1], pos], axis=0)
    return np.moveaxis(ext, 0, axis)


def restrict_half(field_sym, axis: int = 0) -> np.ndarray:
    """Inverse of odd_extend: keep nodes with x^1 >= 0."""
    f = np.moveaxis(np.asarray(field_sym), axis, 0)
    n = (f.shape[0] - 1) // 2
    return np.moveaxis(f[n:], 0, axis)


def _inner(nd):
    return (Ellipsis,) + (slice(1, -1),) * nd


def _shifted(u, nd, offsets):
    """View of u at lattice offset ``offsets`` relative to the inner block."""
    s = []
    for ax in range(nd):
        o = offsets[ax]
        n = u.shape[u.ndim - nd + ax]
        s.append(slice(1 + o, n - 1 + o))
    return u[(Ellipsis,) + tuple(s)]


def apply_stencil(field, operator: str, grid: Grid, axes=(0,)) -> np.ndarray:
    """Second-order central differences, returned on the full lattice.

    ``operator`` is ``"d"`` (first derivative along ``axes[0]``), ``"dd"``
    (second derivative along ``axes[0]``, ``axes[1]``) or ``"laplacian"``.
    Values are meaningful on interior nodes only; all other nodes are 0.
    """
    u = np.asarray(field, dtype=float)
    nd = grid.ndim
    h = grid.spacing
    out = np.zeros(u.shape)
    zero = (0,) * nd

    def e(ax, k):
        o = [0] * nd
        o[ax] = k
        return tuple(o)

    if operator == "d":
        i = axes[0]
        res = (_shifted(u, nd, e(i, 1)) - _shifted(u, nd, e(i, -1))) * (0.5 / h[i])
    elif operator == "dd":
        i, j = (axes[0], axes[1]) if len(axes) > 1 else (axes[0], axes[0])
        if i == j:
            res = (_shifted(u, nd, e(i, 1)) - 2.0 * _shifted(u, nd, zero) + _shifted(u, nd, e(i, -1))) / h[i] ** 2
        else:
            def d2(a, b):
                o = [0] * nd
                o[i] += a
                o[j] += b
                return _shifted(u, nd, tuple(o))

            res = (d2(1, 1) - d2(1, -1) - d2(-1, 1) + d2(-1, -1)) * (0.25 / (h[i] * h[j]))
    elif operator == "laplacian":
        res = 0.0
        for i in range(nd):
            res = res + (_shifted(u, nd, e(i, 1)) - 2.0 * _shifted(u, nd, zero) + _shifted(u, nd, e(i, -1))) / h[i] ** 2
    else:
        raise ContractViolation(f"unknown stencil operator {operator!r}")
    out[_inner(nd)] = res
    if grid.spec.kind == "disk":
        out[..., ~grid.interior] = 0.0
    return out


def shift_field(field, grid: Grid, shift, odd_axis0: bool = False) -> np.ndarray:
    """Evaluate a lattice field at x + shift by separable linear interpolation.

    Points that land outside the lattice read 0, except along axis 0 when
    ``odd_axis0`` is set: there the field is continued oddly across x^1 = 0
    (node 0 must sit at x^1 = 0).  A shift by a whole number of cells is an
    exact index copy.
    """
    out = np.asarray(field, dtype=float)
    nd = grid.ndim
    for ax in range(nd):
        s = float(shift[ax])
        if s == 0.0:
            continue
        if ax == 0 and odd_axis0:
            ext = odd_extend(out, axis=out.ndim - nd, tol=np.inf)
            sym = symmetric_grid(grid)
            shifted = _shift_axis(ext, out.ndim - nd, s / sym.spacing[0])
            out = restrict_half(shifted, axis=out.ndim - nd)
        else:
            out = _shift_axis(out, out.ndim - nd + ax, s / grid.spacing[ax])
    return out


def _shift_axis(u, axis, cells):
    q = int(np.floor(cells))
    theta = cells - q
    a = _roll_zero(u, axis, q)
    if theta == 0.0:
        return a
    b = _roll_zero(u, axis, q + 1)
    return (1.0 - theta) * a + theta * b


def _roll_zero(u, axis, q):
    """out[j] = u[j + q] along axis, 0 where j + q is off the lattice."""
    n = u.shape[axis]
    out = np.zeros_like(u)
    if abs(q) >= n:
        return out
    src = [slice(None)] * u.ndim
    dst = [slice(None)] * u.ndim
    if q >= 0:
        src[axis] = slice(q, n)
        dst[axis] = slice(0, n - q)
    else:
        src[axis] = slice(0, n + q)
        dst[axis] = slice(-q, n)
    out[tuple(dst)] = u[tuple(src)]
    return out
