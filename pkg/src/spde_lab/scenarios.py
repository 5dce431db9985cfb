"""Scenario descriptions and the built-in experiment templates.

A scenario is a plain dict with a fixed schema (see ``SCHEMA``); the
built-ins below produce such dicts from a few named parameters.  The JSON
layout accepted by the CLI is exactly this dict.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .domain import DomainSpec, Grid, build_grid
from .errors import ConfigurationError
from .fields import CoefficientSet, ParabolicityBounds, coefficients_from_dict, scalar_field
from .noise import TimeGrid
from .solver import Problem

__all__ = ["SCHEMA", "Scenario", "BUILTINS", "builtin_config", "list_builtins"]

SCHEMA = {
    "name": str,
    "scenario": str,
    "description": str,
    "domain": dict,
    "time": {"t_end": float, "num_steps": int, "dt_factor": float},
    "resolution": (int, list),
    "coefficients": dict,
    "boundary_data": (str, dict, float, int),
    "initial_data": (str, dict, float, int),
    "noise": {"modes": int, "master_seed": int},
    "runs": {"paths": int, "pipeline": str, "stride": int, "threads": int},
    "analysis": list,
    "checks": {
        "kappa": float,
        "K_upper": float,
        "compat_tol": float,
        "expect_incompatible": bool,
        "degenerate": bool,
        "time_samples": list,
    },
    "parameters": dict,
}

ANALYSIS_KEYS = {"kind", "p", "region", "final_only", "alpha", "refine", "stride", "stride_time",
                 "reference", "label", "time", "window", "paths"}
PIPELINES = ("direct", "decomposition", "picard")


def _check_schema(d, schema, where):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where or 'config'} must be an object")
    for key, val in d.items():
        if key not in schema:
            raise ConfigurationError(f"unknown key {where + '.' if where else ''}{key}")
        spec = schema[key]
        path = f"{where}.{key}" if where else key
        if isinstance(spec, dict):
            _check_schema(val, spec, path)
            continue
        types = spec if isinstance(spec, tuple) else (spec,)
        if float in types:
            types = types + (int,)
        if isinstance(val, bool) and bool not in types:
            raise ConfigurationError(f"{path} has the wrong type ({type(val).__name__})")
        if not isinstance(val, types):
            raise ConfigurationError(f"{path} has the wrong type ({type(val).__name__})")


def _none_if_zero(spec):
    if spec is None or spec == "zero" or spec == 0:
        return None
    if isinstance(spec, str):
        raise ConfigurationError(f"unknown built-in field {spec!r}")
    return scalar_field(spec)


@dataclass
class Scenario:
    """Validated scenario with helpers to build grids, time grids and the problem."""

    config: dict
    name: str = ""
    domain: DomainSpec = None
    t_end: float = 1.0
    resolution: object = 64
    modes: int = 0
    seed: int = 0
    paths: int = 1
    pipeline: str = "direct"
    stride: int = 0
    threads: Optional[int] = None
    num_steps: Optional[int] = None
    dt_factor: Optional[float] = None
    kappa: float = 0.0
    K_upper: float = 1.0
    compat_tol: float = 1e-10
    expect_incompatible: bool = False
    degenerate: bool = False
    time_samples: Optional[list] = None
    analysis: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        _check_schema(d, SCHEMA, "")
        for key in ("domain", "time", "coefficients"):
            if key not in d:
                raise ConfigurationError(f"missing required key {key!r}")
        time = d["time"]
        if "t_end" not in time:
            raise ConfigurationError("time.t_end is required")
        runs = d.get("runs", {})
        pipeline = runs.get("pipeline", "direct")
        if pipeline not in PIPELINES:
            raise ConfigurationError(f"runs.pipeline must be one of {PIPELINES}, got {pipeline!r}")
        for i, req in enumerate(d.get("analysis", [])):
            if not isinstance(req, dict) or "kind" not in req:
                raise ConfigurationError(f"analysis[{i}] must be an object with a 'kind'")
            bad = set(req) - ANALYSIS_KEYS
            if bad:
                raise ConfigurationError(f"unknown key analysis[{i}].{sorted(bad)[0]}")
        noise = d.get("noise", {})
        checks = d.get("checks", {})
        domain = DomainSpec.from_dict(d["domain"])
        sc = cls(
            config=copy.deepcopy(d),
            name=d.get("name", d.get("scenario", "custom")),
            domain=domain,
            t_end=float(time["t_end"]),
            resolution=d.get("resolution", 64),
            modes=int(noise.get("modes", d["coefficients"].get("modes", 16))),
            seed=int(noise.get("master_seed", 0)),
            paths=int(runs.get("paths", 1)),
            pipeline=pipeline,
            stride=int(runs.get("stride", 0)),
            threads=runs.get("threads"),
            num_steps=time.get("num_steps"),
            dt_factor=time.get("dt_factor"),
            kappa=float(checks.get("kappa", 0.0)),
            K_upper=float(checks.get("K_upper", 1.0)),
            compat_tol=float(checks.get("compat_tol", 1e-10)),
            expect_incompatible=bool(checks.get("expect_incompatible", False)),
            degenerate=bool(checks.get("degenerate", False)),
            time_samples=checks.get("time_samples"),
            analysis=list(d.get("analysis", [])),
            parameters=dict(d.get("parameters", {})),
        )
        sc.coefficients()  # validate early
        return sc

    # -- construction helpers -------------------------------------------------

    def coefficients(self) -> CoefficientSet:
        coeffs = dict(self.config["coefficients"])
        coeffs["modes"] = self.modes
        return coefficients_from_dict(coeffs, self.domain.ndim)

    def problem(self) -> Problem:
        return Problem(
            coeffs=self.coefficients(),
            initial=_none_if_zero(self.config.get("initial_data")),
            boundary=_none_if_zero(self.config.get("boundary_data")),
            K_upper=self.K_upper,
        )

    def bounds(self) -> ParabolicityBounds:
        return ParabolicityBounds(self.kappa, self.K_upper)

    def check_times(self):
        if self.time_samples is not None:
            return [float(t) for t in self.time_samples]
        return list(np.linspace(0.0, self.t_end, 5))

    def _cells(self, resolution):
        lo_hi = self.domain.bounds
        extents = [hi - lo for lo, hi in lo_hi]
        if isinstance(resolution, (list, tuple)) and len(resolution) == self.domain.ndim \
                and all(isinstance(r, (int, np.integer)) for r in resolution):
            return [int(r) for r in resolution]
        n0 = int(resolution)
        h = extents[0] / n0
        return [n0] + [max(4, int(round(e / h))) for e in extents[1:]]

    def discretize(self, resolution=None):
        """(Grid, TimeGrid) for a cell count, a per-axis list, or an (h, dt) pair."""
        res = self.resolution if resolution is None else resolution
        dt = None
        if isinstance(res, tuple) and len(res) == 2 and isinstance(res[0], float):
            h, dt = res
            extent0 = self.domain.bounds[0][1] - self.domain.bounds[0][0]
            res = int(round(extent0 / h))
        grid = build_grid(self.domain, self._cells(res) if self.domain.ndim > 1 else res)
        if dt is not None:
            tg = TimeGrid.from_dt(self.t_end, dt)
        elif self.num_steps is not None and resolution is None:
            tg = TimeGrid(self.t_end, int(self.num_steps))
        else:
            factor = self.dt_factor if self.dt_factor is not None else min(1.0, 1.0 / self.K_upper)
            tg = TimeGrid.from_dt(self.t_end, factor * grid.h**2)
        return grid, tg


# ---------------------------------------------------------------------------
# built-ins
# ---------------------------------------------------------------------------


def _base(name, domain, t_end, coefficients, *, resolution=64, modes=1, paths=1, pipeline="direct",
          initial="zero", boundary="zero", checks=None, analysis=None, parameters=None, dt_factor=None):
    time = {"t_end": t_end}
    if dt_factor is not None:
        time["dt_factor"] = dt_factor
    return {
        "name": name,
        "scenario": name,
        "domain": domain,
        "time": time,
        "resolution": resolution,
        "coefficients": coefficients,
        "boundary_data": boundary,
        "initial_data": initial,
        "noise": {"modes": modes, "master_seed": 20240601},
        "runs": {"paths": paths, "pipeline": pipeline, "stride": 0},
        "analysis": analysis or [],
        "checks": checks or {},
        "parameters": parameters or {},
    }


def _zero(p):
    return _base("zero", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.25, {"a": 1.0}, modes=1,
                 paths=2, checks={"kappa": 1.0, "K_upper": 2.0},
                 analysis=[{"kind": "Lp", "p": 2}, {"kind": "W2p", "p": 2}], dt_factor=1.0)


def _example1(p):
    return _base(
        "example1_blowup", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.25,
        {"a": 1.0, "sigma": 1.0, "f": 1.0}, modes=1, paths=100,
        checks={"kappa": 1.0, "K_upper": 2.0, "expect_incompatible": True},
        analysis=[{"kind": "D2p", "p": 2, "refine": [64, 128, 256]}], dt_factor=1.0,
    )


def _example2(p):
    s0 = float(p.get("sigma0", 1.0))
    if not 0 < s0 * s0 < 2:
        raise ConfigurationError(f"sigma0 must satisfy 0 < sigma0^2 < 2, got {s0}")
    return _base(
        "example2_aux", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.25,
        {"a": 1.0, "sigma": s0, "f": 1.0 / s0}, modes=1, paths=1,
        boundary={"kind": "linear_in_t", "rate": 1.0 / s0},
        checks={"kappa": 2.0 - s0 * s0, "K_upper": 2.0, "expect_incompatible": True},
        analysis=[{"kind": "MaxError", "reference": {"kind": "linear_in_t", "rate": 1.0 / s0}}],
        parameters={"sigma0": s0}, dt_factor=1.0,
    )


def _krylov(p):
    lam = float(p["lambda"])
    if not 0 < lam < 2:
        raise ConfigurationError(f"lambda must lie in (0, 2), got {lam}")
    diam = 8.0
    return _base(
        "krylov_blowup", {"kind": "half_line", "x_max": diam}, 0.5,
        {"a": 1.0, "sigma": math.sqrt(2.0 - lam)}, resolution=2048, modes=1, paths=50,
        initial={"kind": "bump", "lo": 0.2, "hi": 2.2},
        checks={"kappa": lam, "K_upper": 2.0, "expect_incompatible": True},
        analysis=[
            {"kind": "boundary_exponent", "time": 0.5},
            {"kind": "SupGrad", "region": [[0.0, 0.1 * diam]], "refine": [512, 1024, 2048], "paths": 10},
        ],
        parameters={"lambda": lam, "threshold_exponent": math.exp(-1.0 / (2.0 * lam))}, dt_factor=1.0,
    )


def _heat(p):
    return _base(
        "heat_manufactured", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.25,
        {"a": 1.0, "f": {"kind": "heat_manufactured_forcing"}}, modes=0, paths=1,
        checks={"kappa": 1.0, "K_upper": 2.0},
        analysis=[{"kind": "MaxError", "reference": {"kind": "t_sin_pi_x"}},
                  {"kind": "W2p", "p": 2, "refine": [32, 64, 128]}],
        dt_factor=1.0,
    )


def _additive(p):
    return _base(
        "additive_noise_benchmark", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.5,
        {"a": 1.0, "g": [{"kind": "sin_pi_x"}]}, resolution=128, modes=1, paths=400,
        checks={"kappa": 1.0, "K_upper": 2.0},
        analysis=[{"kind": "Lp", "p": 2, "final_only": True}], dt_factor=1.0,
    )


def _transport(p):
    s = float(p.get("s", 1.0))
    return _base(
        "transport_identity", {"kind": "half_plane", "x_max": 2.0, "y_min": -2.0, "y_max": 2.0}, 0.25,
        {"a": [[0.0, 0.0], [0.0, 0.5 * s * s]], "sigma": [[0.0], [s]]},
        resolution=[64, 128], modes=1, paths=1, pipeline="decomposition",
        initial={"kind": "wall_gauss", "center": [0.8, 0.0], "width": 0.3},
        checks={"kappa": 0.0, "K_upper": s * s, "degenerate": True, "compat_tol": 1e-12},
        parameters={"s": s},
    )


def _compat(p):
    eps = float(p["epsilon"])
    if not 0 <= eps <= 1:
        raise ConfigurationError(f"epsilon must lie in [0, 1], got {eps}")
    return _base(
        "compat_dichotomy", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.25,
        {"a": 1.0, "sigma": {"kind": "blend", "epsilon": eps, "amplitude": 0.8}, "f": 1.0},
        modes=1, paths=100,
        checks={"kappa": 1.0, "K_upper": 2.0, "expect_incompatible": eps > 0},
        analysis=[{"kind": "D2p", "p": 2, "refine": [64, 128, 256]}],
        parameters={"epsilon": eps}, dt_factor=1.0,
    )


def _picard(p):
    gamma = float(p["gamma"])
    return _base(
        "picard_reaction", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.1,
        {"a": 1.0, "reaction_f": {"gamma": gamma}}, modes=0, paths=1, pipeline="picard",
        initial={"kind": "sin_pi_x"},
        checks={"kappa": 1.0, "K_upper": 2.0},
        analysis=[{"kind": "MaxError", "reference": {"kind": "exp_t_sin_pi_x", "rate": gamma - math.pi**2}}],
        parameters={"gamma": gamma, "lipschitz": abs(gamma), "tol": 1e-6, "max_sweeps": 12}, dt_factor=1.0,
    )


def _local(p):
    return _base(
        "local_regularity", {"kind": "interval", "a": 0.0, "b": 1.0}, 0.25,
        {"a": 1.0, "sigma": {"kind": "linear", "slope": 1.0}, "f": 1.0}, modes=1, paths=100,
        checks={"kappa": 1.0, "K_upper": 2.0, "expect_incompatible": True},
        analysis=[
            {"kind": "D2p", "p": 2, "region": [[0.0, 0.5]], "refine": [64, 128, 256], "label": "near_left"},
            {"kind": "D2p", "p": 2, "region": [[0.5, 1.0]], "refine": [64, 128, 256], "label": "near_right"},
        ],
        dt_factor=1.0,
    )


def _crosscheck(p):
    return _base(
        "decomposition_crosscheck", {"kind": "half_line", "x_max": 4.0}, 0.1,
        {"a": 1.0, "f": {"kind": "gaussian", "center": 1.0, "width": 0.3},
         "g": [{"kind": "x_gauss", "width": 0.5}]},
        resolution=512, modes=1, paths=1, pipeline="decomposition",
        checks={"kappa": 2.0, "K_upper": 2.5},
        analysis=[{"kind": "Lp", "p": 2}],
    )


@dataclass(frozen=True)
class Builtin:
    name: str
    factory: Callable
    anchor: str
    description: str
    required: tuple = ()
    optional: tuple = ()
    listed: bool = True


BUILTINS = {
    b.name: b
    for b in [
        Builtin("example1_blowup", _example1, "normal-noise blow-up example",
                "sigma = 1 on (0,1): noise normal to the boundary, E||u_xx||^2 diverges under refinement"),
        Builtin("example2_aux", _example2, "exact auxiliary solution t/sigma0",
                "auxiliary problem with exact solution t/sigma0", optional=("sigma0",)),
        Builtin("krylov_blowup", _krylov, "boundary blow-up at a noisy wall, threshold exp(-1/(2 lambda))",
                "sigma = sqrt(2 - lambda) on a half line; boundary exponent and gradient growth",
                required=("lambda",)),
        Builtin("heat_manufactured", _heat, "deterministic limit of the model equation",
                "manufactured solution t sin(pi x) of the heat equation"),
        Builtin("additive_noise_benchmark", _additive, "additive-noise second moment",
                "du = u_xx dt + sin(pi x) dW; closed-form E||u(T)||^2"),
        Builtin("transport_identity", _transport, "Ito-Wentzell translation step",
                "degenerate a = sigma sigma^T / 2: decomposition equals u0(x + xi_t)", optional=("s",)),
        Builtin("compat_dichotomy", _compat, "compatibility dichotomy: tangential noise vs blow-up",
                "sigma = (1-eps) 0.8 sin(pi x) + eps; eps = 0 compatible, eps = 1 not",
                required=("epsilon",)),
        Builtin("picard_reaction", _picard, "Picard contraction for semilinear reactions",
                "f(u) = gamma u with u0 = sin(pi x), closed form exp((gamma - pi^2) t) sin(pi x)",
                required=("gamma",)),
        Builtin("local_regularity", _local, "local regularity near the compatible boundary part",
                "sigma(x) = x: compatible at x = 0 only; norms on (0, 1/2) and (1/2, 1)"),
        Builtin("decomposition_crosscheck", _crosscheck, "reflection + random PDE decomposition",
                "half_line(4): reflection + random PDE + translation against the direct scheme"),
        Builtin("zero", _zero, "zero data", "all data zero; every norm vanishes", listed=False),
    ]
}


def builtin_config(name: str, parameters: Optional[dict] = None) -> dict:
    """Scenario dict of a built-in, with ``parameters`` filled in."""
    try:
        b = BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown built-in scenario {name!r}; known: {sorted(BUILTINS)}") from None
    params = dict(parameters or {})
    missing = [r for r in b.required if r not in params]
    if missing:
        raise ConfigurationError(f"scenario {name!r} requires parameter(s) {missing}")
    unknown = set(params) - set(b.required) - set(b.optional) - {"tol", "max_sweeps"}
    if unknown:
        raise ConfigurationError(f"scenario {name!r} has no parameter(s) {sorted(unknown)}")
    cfg = b.factory(params)
    cfg["description"] = b.description
    cfg["parameters"] = {**cfg["parameters"], **params}
    return cfg


def list_builtins():
    """Rows (name, anchor, required params, description) of the listed built-ins."""
    return [(b.name, b.anchor, b.required, b.description) for b in BUILTINS.values() if b.listed]
