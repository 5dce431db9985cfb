import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spde_lab.domain import (
    DomainSpec,
    apply_stencil,
    build_grid,
    check_compatibility,
    odd_extend,
    outward_normal,
    restrict_half,
    shift_field,
    symmetric_grid,
)
from spde_lab.errors import ConfigurationError, ContractViolation, PreconditionError
from spde_lab.fields import coefficients_from_dict


def test_interval_grid_counts_and_normals():
    g = build_grid(DomainSpec.interval(0, 1), 10)
    assert g.interior.sum() == 9
    assert np.array_equal(outward_normal(g, 0), [-1.0])
    assert np.array_equal(outward_normal(g, 10), [1.0])
    assert not np.any(g.interior & g.boundary)


def test_rectangle_interior_count():
    g = build_grid(DomainSpec.rectangle(0, 1, 0, 1), 10)
    assert g.interior.sum() == 81
    assert np.allclose(np.linalg.norm(g.normals, axis=1), 1.0, atol=1e-12)


def test_disk_normals_are_unit():
    g = build_grid(DomainSpec.disk(1.0), 64)
    assert np.all(np.abs(np.linalg.norm(g.normals, axis=1) - 1) < 1e-12)
    assert not np.any(g.interior & g.boundary)
    assert not np.any(g.interior & ~g.inside)


def test_disk_normal_near_east_point():
    g = build_grid(DomainSpec.disk(1.0), 64)
    i = np.argmin(np.abs(g.axes[0] - 1.0))
    j = np.argmin(np.abs(g.axes[1]))
    n = outward_normal(g, (i, j))
    assert np.linalg.norm(n - np.array([1.0, 0.0])) <= g.h


def test_half_line_wall_normal():
    g = build_grid(DomainSpec.half_line(4.0), 16)
    assert np.array_equal(outward_normal(g, 0), [-1.0])
    assert g.physical[0] and not g.physical[-1]


def test_half_plane_wall_normals_are_exactly_minus_e1():
    g = build_grid(DomainSpec.half_plane(2.0, -1.0, 1.0), (8, 8))
    wall = g.boundary_index[:, 0] == 0
    assert np.all(g.normals[wall] == np.array([-1.0, 0.0]))


def test_interior_index_is_rejected():
    g = build_grid(DomainSpec.interval(0, 1), 10)
    with pytest.raises(ContractViolation):
        outward_normal(g, 3)


@pytest.mark.parametrize("res", [3, [3, 8]])
def test_resolution_too_small(res):
    spec = DomainSpec.interval(0, 1) if isinstance(res, int) else DomainSpec.rectangle(0, 1, 0, 1)
    with pytest.raises(ConfigurationError):
        build_grid(spec, res)


@pytest.mark.parametrize("bad", [lambda: DomainSpec.interval(1, 1), lambda: DomainSpec.disk(-1.0),
                                 lambda: DomainSpec.half_line(0.0)])
def test_degenerate_extents(bad):
    with pytest.raises(ConfigurationError):
        bad()


def test_domain_spec_roundtrip():
    spec = DomainSpec.half_plane(3.0, -1.0, 2.0)
    assert DomainSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigurationError):
        DomainSpec.from_dict({"kind": "interval", "a": 0, "b": 1, "c": 2})


def test_compatibility_sin_passes():
    g = build_grid(DomainSpec.interval(0, 1), 64)
    c = coefficients_from_dict({"a": 1, "sigma": {"kind": "sin_pi_x"}, "modes": 1}, 1)
    rep = check_compatibility(c, g, [0.0, 0.5], 1e-12)
    assert rep.max_residual < 1e-12 and rep.pass_


def test_compatibility_constant_fails():
    g = build_grid(DomainSpec.interval(0, 1), 64)
    c = coefficients_from_dict({"a": 1, "sigma": 1.0, "modes": 1}, 1)
    rep = check_compatibility(c, g, [0.0], 1e-12)
    assert rep.max_residual == 1.0 and not rep.passed


def test_compatibility_disk_rotation_field():
    g = build_grid(DomainSpec.disk(1.0), 64)
    s = 0.7
    sigma = [[{"kind": "linear", "slope": -s, "axis": 1}], [{"kind": "linear", "slope": s, "axis": 0}]]
    c = coefficients_from_dict({"a": 1, "sigma": sigma, "modes": 1}, 2)
    rep = check_compatibility(c, g, [0.0], 5 * g.h)
    assert rep.passed
    assert rep.max_residual < 1e-10


def test_compatibility_ignores_truncation_wall():
    g = build_grid(DomainSpec.half_plane(2.0, -1.0, 1.0), (16, 16))
    c = coefficients_from_dict({"a": 1, "sigma": [[0.0], [1.0]], "modes": 1}, 2)
    assert check_compatibility(c, g, [0.0], 1e-14).passed


def test_odd_extend_linear():
    x = np.linspace(0, 1, 11)
    ext = odd_extend(x)
    assert np.allclose(ext, np.linspace(-1, 1, 21), atol=1e-15)
    assert ext[10] == 0.0


def test_odd_extend_rejects_trace():
    x = np.linspace(0, 1, 11)
    with pytest.raises(PreconditionError, match="5.000e-01"):
        odd_extend(0.5 + x, tol=1e-8)


def test_odd_extend_doubles_lp(rng):
    x = np.linspace(0, 1, 33)
    coef = rng.normal(size=4)
    g = sum(c * np.sin((k + 1) * np.pi * x / 2) for k, c in enumerate(coef))
    ext = odd_extend(g)
    assert np.sum(ext**2) == pytest.approx(2 * np.sum(g**2), rel=1e-13)


def test_laplacian_of_sine():
    g = build_grid(DomainSpec.interval(0, 1), 64)
    x = g.axes[0]
    lap = apply_stencil(np.sin(np.pi * x), "laplacian", g)
    err = np.abs(lap + np.pi**2 * np.sin(np.pi * x))[g.interior].max()
    assert err < np.pi**4 * g.h**2 / 12 * 1.1


def test_first_difference_of_constant_is_zero():
    g = build_grid(DomainSpec.rectangle(0, 1, 0, 2), 8)
    assert np.all(apply_stencil(np.full(g.shape, 3.7), "d", g, (0,)) == 0)


def test_mixed_difference_of_bilinear():
    g = build_grid(DomainSpec.rectangle(0, 1, 0, 1), 8)
    X, Y = g.mesh()
    d = apply_stencil(X * Y, "dd", g, (0, 1))
    assert np.allclose(d[g.interior], 1.0, rtol=0, atol=1e-12)
    assert np.all(d[~g.interior] == 0)


def test_unknown_operator():
    g = build_grid(DomainSpec.interval(0, 1), 8)
    with pytest.raises(ContractViolation):
        apply_stencil(np.zeros(g.shape), "curl", g)


def test_symmetric_grid_half_plane():
    g = build_grid(DomainSpec.half_plane(2.0, -1.0, 1.0), (8, 6))
    s = symmetric_grid(g)
    assert s.shape == (17, 7)
    assert s.spacing == pytest.approx(g.spacing)


def test_shift_by_whole_cell_is_copy(rng):
    g = build_grid(DomainSpec.half_plane(1.0, -1.0, 1.0), (8, 8))
    f = rng.normal(size=g.shape)
    out = shift_field(f, g, (0.0, g.spacing[1]))
    assert np.array_equal(out[:, :-1], f[:, 1:])
    assert np.all(out[:, -1] == 0)


# -- invariants ---------------------------------------------------------------

coef = st.floats(-3, 3, allow_nan=False)


@pytest.mark.invariant
@settings(max_examples=30, deadline=None)
@given(c=st.lists(coef, min_size=6, max_size=6))
def test_stencils_exact_on_quadratics(c):
    g = build_grid(DomainSpec.rectangle(0, 1, -1, 1), (8, 16))
    X, Y = g.mesh()
    u = c[0] + c[1] * X + c[2] * Y + c[3] * X**2 + c[4] * X * Y + c[5] * Y**2
    m = g.interior
    scale = 1e-11 * (1 + max(abs(v) for v in c))
    assert np.allclose(apply_stencil(u, "dd", g, (0,))[m], 2 * c[3], atol=scale)
    assert np.allclose(apply_stencil(u, "dd", g, (1,))[m], 2 * c[5], atol=scale)
    assert np.allclose(apply_stencil(u, "dd", g, (0, 1))[m], c[4], atol=scale)
    assert np.allclose(apply_stencil(u, "d", g, (0,))[m], (c[1] + 2 * c[3] * X + c[4] * Y)[m], atol=scale)


@pytest.mark.invariant
@settings(max_examples=20, deadline=None)
@given(perm_seed=st.integers(0, 1000), data=st.data())
def test_compatibility_residual_mode_permutation(perm_seed, data):
    g = build_grid(DomainSpec.rectangle(0, 1, 0, 1), 8)
    K = 3
    vals = data.draw(st.lists(st.lists(coef, min_size=K, max_size=K), min_size=2, max_size=2))
    perm = np.random.default_rng(perm_seed).permutation(K)
    c1 = coefficients_from_dict({"a": 1, "sigma": vals, "modes": K}, 2)
    c2 = coefficients_from_dict({"a": 1, "sigma": [[row[k] for k in perm] for row in vals], "modes": K}, 2)
    r1 = check_compatibility(c1, g, [0.0], 1e-12)
    r2 = check_compatibility(c2, g, [0.0], 1e-12)
    assert r1.max_residual == r2.max_residual


@pytest.mark.invariant
@settings(max_examples=20, deadline=None)
@given(vals=st.lists(coef, min_size=8, max_size=8))
def test_odd_extend_restrict_identity(vals):
    half = np.concatenate([[0.0], vals])
    ext = odd_extend(half)
    assert np.array_equal(odd_extend(restrict_half(ext)), ext)
    assert np.array_equal(restrict_half(ext), half)


@pytest.mark.invariant
@pytest.mark.parametrize("spec", [DomainSpec.interval(-0.3, 1.7), DomainSpec.rectangle(0, 2, 0, 3),
                                  DomainSpec.half_line(5.0)])
def test_refinement_halves_h(spec):
    g1 = build_grid(spec, 10)
    g2 = build_grid(spec, 20)
    assert g2.h == pytest.approx(g1.h / 2, rel=1e-14)
    for a1, a2 in zip(g1.axes, g2.axes):
        assert a1[0] == a2[0] and a1[-1] == a2[-1]
