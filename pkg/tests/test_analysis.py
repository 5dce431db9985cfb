import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spde_lab.analysis import (
    EnergyMonitor,
    aggregate_norms,
    classify_ratios,
    fit_boundary_exponent,
    holder_norm,
    mc_expected_norm,
    refinement_study,
    run_monte_carlo,
    sobolev_norm,
)
from spde_lab.domain import DomainSpec, build_grid
from spde_lab.errors import AnalysisError, ConfigurationError, ContractViolation
from spde_lab.noise import TimeGrid
from spde_lab.scenarios import Scenario, builtin_config


def scenario(name, **params):
    return Scenario.from_dict(builtin_config(name, params or None))


def interval(N):
    return build_grid(DomainSpec.interval(0, 1), N)


# -- Sobolev -------------------------------------------------------------------


def test_lp_of_sine_slice():
    g = interval(64)
    u = np.sin(np.pi * g.axes[0])
    assert sobolev_norm(u, 0, 2, g) == pytest.approx(np.sqrt(0.5), rel=1e-12)


def test_d2p_of_sine_slice():
    g = interval(256)
    u = np.sin(np.pi * g.axes[0])
    assert sobolev_norm(u, 2, 2, g, kind="D2p") == pytest.approx(np.pi**2 * np.sqrt(0.5), rel=1e-4)


def test_w2p_dominates_parts():
    g = interval(64)
    u = np.sin(np.pi * g.axes[0])
    vals = [sobolev_norm(u, 2, 2, g, kind=k) for k in ("Lp", "D1p", "D2p", "W2p")]
    assert vals[3] ** 2 == pytest.approx(vals[0] ** 2 + vals[1] ** 2 + vals[2] ** 2, rel=1e-12)


def test_trajectory_drops_initial_level():
    g = interval(16)
    tg = TimeGrid(1.0, 4)
    traj = np.ones((5,) + g.shape)
    traj[0] = 1e6
    assert sobolev_norm(traj, 0, 2, g, tg) == pytest.approx(np.sqrt(15 / 16), rel=1e-12)


def test_trajectory_needs_time_weight():
    g = interval(8)
    with pytest.raises(ContractViolation):
        sobolev_norm(np.zeros((3,) + g.shape), 0, 2, g)
    with pytest.raises(ContractViolation):
        sobolev_norm(np.zeros(g.shape), 3, 2, g)


def test_region_restricts():
    g = interval(64)
    u = np.ones(g.shape)
    left = sobolev_norm(u, 0, 2, g, region=[[0.0, 0.5]])
    full = sobolev_norm(u, 0, 2, g)
    assert left < full
    assert left == pytest.approx(np.sqrt(32 / 64), rel=1e-12)


# -- Hoelder -------------------------------------------------------------------


def test_holder_constant_and_linear():
    g = interval(32)
    assert holder_norm(np.full(g.shape, 2.0), 0.5, g) == pytest.approx(2.0)
    x = g.axes[0]
    # |x - y| / |x - y|^alpha <= 1 with equality at |x - y| = 1
    assert holder_norm(x, 0.5, g) == pytest.approx(1.0 + 1.0, rel=1e-12)


def test_holder_alpha_range():
    g = interval(8)
    with pytest.raises(ContractViolation):
        holder_norm(np.zeros(g.shape), 1.0, g)


@pytest.mark.invariant
@settings(max_examples=20, deadline=None)
@given(lam=st.floats(-5, 5, allow_nan=False).filter(lambda x: abs(x) > 1e-3), seed=st.integers(0, 99))
def test_holder_homogeneity(lam, seed):
    g = interval(16)
    u = np.random.default_rng(seed).normal(size=(3,) + g.shape)
    t = np.array([0.0, 0.1, 0.2])
    assert holder_norm(lam * u, 0.4, g, t) == pytest.approx(abs(lam) * holder_norm(u, 0.4, g, t), rel=1e-12)


def test_holder_subsampled_is_lower_bound(rng):
    g = interval(64)
    u = rng.normal(size=(20,) + g.shape)
    t = np.linspace(0, 1, 20)
    exact = holder_norm(u, 0.3, g, t)
    sub = holder_norm(u, 0.3, g, t, pair_budget=20_000)
    assert sub <= exact
    assert sub > 0.5 * exact


def test_holder_subdomain_monotone(rng):
    g = interval(64)
    u = rng.normal(size=(10,) + g.shape)
    t = np.linspace(0, 1, 10)
    for budget in (10_000_000, 5_000):
        assert holder_norm(u, 0.3, g, t, subdomain=[[0.0, 0.3]], pair_budget=budget) <= holder_norm(
            u, 0.3, g, t, pair_budget=budget)


def test_holder_gradient_of_linear():
    g = interval(32)
    assert holder_norm(3 * g.axes[0], 0.5, g, gradient=True) == pytest.approx(3.0, rel=1e-12)


# -- boundary exponent ---------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7])
def test_exponent_recovers_power(alpha):
    x = np.linspace(0, 1, 257)
    fit = fit_boundary_exponent(2.0 * x**alpha, x, window=(0.02, 0.5))
    assert fit.alpha_hat == pytest.approx(alpha, abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)


def test_exponent_default_window_and_errors():
    x = np.linspace(0, 1, 1025)
    fit = fit_boundary_exponent(np.sqrt(x), x)
    assert fit.window == pytest.approx((4 / 1024, 0.1))
    with pytest.raises(ContractViolation):
        fit_boundary_exponent(np.sqrt(x), x, window=(1 / 1024, 0.1))
    with pytest.raises(ContractViolation):
        fit_boundary_exponent(np.sqrt(x), x, window=(0.1, 0.102))
    with pytest.raises(AnalysisError):
        fit_boundary_exponent(np.sin(40 * x), x, window=(0.01, 0.5))


# -- Monte Carlo ---------------------------------------------------------------


def test_aggregate_excludes_poisoned():
    rep = aggregate_norms([1.0, np.nan, 3.0], 2, "Lp", (0.1, 0.01))
    assert rep.paths_used == 2 and rep.poisoned == 1
    assert rep.value == pytest.approx(np.sqrt(5.0))
    with pytest.raises(AnalysisError):
        aggregate_norms([np.nan], 2, "Lp", (0.1, 0.01))


def test_mc_single_path_equals_direct():
    sc = scenario("local_regularity")
    from spde_lab.noise import sample_wiener_bundle
    from spde_lab.solver import solve_direct

    grid, tg = sc.discretize(16)
    rep = mc_expected_norm(sc, 1, "W2p", 2, 16)
    sol = solve_direct(sc.problem(), sample_wiener_bundle((sc.seed, 0), 1, tg), grid, tg)
    assert rep.value == pytest.approx(sobolev_norm(sol.values, 2, 2, grid, tg), rel=1e-12)
    assert rep.ci_halfwidth is None


def test_ci_shrinks_with_sqrt_m():
    sc = scenario("additive_noise_benchmark")
    w = [mc_expected_norm(sc, M, "Lp", 2, 16, final_only=True).ci_halfwidth for M in (100, 400)]
    assert w[0] / w[1] == pytest.approx(2.0, rel=0.3)


@pytest.mark.invariant
def test_mc_independent_of_threads_and_batches():
    sc = scenario("example1_blowup")
    req = [{"kind": "W2p", "p": 2}]
    a = run_monte_carlo(sc, 10, 16, requests=req, threads=1, batch_size=64).values[0]
    b = run_monte_carlo(sc, 10, 16, requests=req, threads=4, batch_size=3).values[0]
    assert a.tobytes() == b.tobytes()


@pytest.mark.invariant
def test_serial_aggregation_reproducible():
    sc = scenario("example1_blowup")
    r1 = mc_expected_norm(sc, 8, "D2p", 2, 16)
    r2 = mc_expected_norm(sc, 8, "D2p", 2, 16)
    assert r1.value == r2.value and r1.ci_halfwidth == r2.ci_halfwidth


def test_mc_rejects_unknown_kind():
    with pytest.raises(ConfigurationError):
        run_monte_carlo(scenario("zero"), 1, 8, requests=[{"kind": "H3"}])


def test_additive_oracle_small():
    sc = scenario("additive_noise_benchmark")
    rep = mc_expected_norm(sc, 400, "Lp", 2, 32, final_only=True)
    exact = (1 - np.exp(-2 * np.pi**2 * 0.5)) / (4 * np.pi**2)
    assert abs(rep.mean_pth - exact) <= 3 * rep.stderr + 0.02 * exact


def test_energy_monitor_tracks_decay():
    g = interval(16)
    mon = EnergyMonitor(g)
    u = np.sin(np.pi * g.axes[0])[None]
    for m, s in enumerate([1.0, 0.8, 0.5]):
        mon(m, 0.1 * m, s * u)
    assert mon.is_nonincreasing()
    mon(3, 0.3, u)
    assert not mon.is_nonincreasing()


# -- refinement ----------------------------------------------------------------


def test_classify_ratios():
    assert classify_ratios([1.6, 1.7]) == "divergent"
    assert classify_ratios([1.05, 0.95]) == "convergent"
    assert classify_ratios([1.6, 1.1]) == "inconclusive"


def test_refinement_heat_convergent():
    rep = refinement_study(scenario("heat_manufactured"), [16, 32, 64], "W2p", 2, 1)
    assert rep.classification == "convergent"


def test_refinement_zero_convergent():
    rep = refinement_study(scenario("zero"), [8, 16, 32], "W2p", 2, 1)
    assert rep.values == [0.0, 0.0, 0.0] and rep.classification == "convergent"


def test_refinement_example1_grows():
    rep = refinement_study(scenario("example1_blowup"), [16, 32, 64], "D2p", 2, 20)
    assert all(r > 1.2 for r in rep.growth_ratios)


def test_refinement_needs_three_refining_levels():
    sc = scenario("heat_manufactured")
    with pytest.raises(ConfigurationError):
        refinement_study(sc, [16, 32], "W2p")
    with pytest.raises(ConfigurationError):
        refinement_study(sc, [32, 16, 64], "W2p")


# -- invariants ----------------------------------------------------------------


@pytest.mark.invariant
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), lam=st.floats(-4, 4, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-100))
def test_norm_nesting_and_homogeneity(seed, lam):
    g = interval(16)
    tg = TimeGrid(0.1, 5)
    u = np.random.default_rng(seed).normal(size=(6,) + g.shape)
    u[:, g.boundary] = 0
    n0, n1, n2 = (sobolev_norm(u, k, 2, g, tg) for k in (0, 1, 2))
    assert n0 <= n1 <= n2
    for k, base in enumerate((n0, n1, n2)):
        assert sobolev_norm(lam * u, k, 2, g, tg) == pytest.approx(abs(lam) * base, rel=1e-12, abs=1e-300)


def test_static_sine_space_time_norms():
    g = interval(128)
    T = 0.5
    tg = TimeGrid(T, 10)
    traj = np.repeat(np.sin(np.pi * g.axes[0])[None], 11, axis=0)
    assert sobolev_norm(traj, 0, 2, g, tg) == pytest.approx(np.sqrt(T / 2), abs=2 * g.h)
    # interior-only stencils drop the boundary terms, an O(h) deficit
    assert sobolev_norm(traj, 1, 2, g, tg) ** 2 == pytest.approx(T * (0.5 + np.pi**2 / 2), abs=2 * g.h * np.pi**2 * T)
    assert sobolev_norm(np.zeros_like(traj), 2, 2, g, tg) == 0.0


def test_exponent_ignores_scale():
    x = np.linspace(0, 1, 513)
    fit = fit_boundary_exponent(3 * x**0.3, x, window=(0.01, 0.2))
    assert fit.alpha_hat == pytest.approx(0.3, abs=1e-6)
