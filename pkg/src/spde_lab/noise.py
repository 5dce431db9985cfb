"""Discrete Wiener processes and the translation path xi_t = int sigma dW.

Increments are drawn from a Philox counter-based generator keyed by
``(master_seed, path_index, mode)``; within a mode the Philox counter plays
the role of the step index.  A bundle can therefore be regenerated bit-exactly
from its seed pair regardless of which other paths were generated before it
or on which thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "TimeGrid",
    "WienerBundle",
    "TranslationPath",
    "sample_wiener_bundle",
    "sample_increments",
    "translation_path",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_m = m * dt, m = 0..num_steps, with dt = t_end / num_steps."""

    t_end: float
    num_steps: int

    def __post_init__(self):
        if not isinstance(self.num_steps, (int, np.integer)) or self.num_steps < 1:
            raise ConfigurationError(f"num_steps must be a positive integer, got {self.num_steps!r}")
        if not np.isfinite(self.t_end) or self.t_end <= 0:
            raise ConfigurationError(f"t_end must be positive and finite, got {self.t_end!r}")

    @property
    def dt(self) -> float:
        return self.t_end / self.num_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.num_steps + 1) * self.dt
        t[-1] = self.t_end
        return t

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_end, self.num_steps * int(factor))

    @classmethod
    def from_dt(cls, t_end: float, dt: float) -> "TimeGrid":
        """Grid with step as close to ``dt`` as possible while landing on ``t_end``."""
        if dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {dt!r}")
        return cls(float(t_end), max(1, int(round(t_end / dt))))


@dataclass(frozen=True, eq=False)
class WienerBundle:
    """K independent discrete Wiener processes on one time grid (one sample path)."""

    increments: np.ndarray
    time_grid: TimeGrid
    seed: tuple = (0, 0)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != self.time_grid.num_steps:
            raise ContractViolation(
                f"increments must have shape (modes, {self.time_grid.num_steps}), got {inc.shape}"
            )
        object.__setattr__(self, "increments", inc)

    @property
    def modes(self) -> int:
        return self.increments.shape[0]

    def path(self) -> np.ndarray:
        """W at every grid time, shape (modes, num_steps + 1), W_0 = 0."""
        w = np.zeros((self.modes, self.time_grid.num_steps + 1))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w

    def coarsen(self, factor: int) -> "WienerBundle":
        """Same Brownian path observed on a grid with ``factor`` times fewer steps."""
        factor = int(factor)
        if factor < 1 or self.time_grid.num_steps % factor:
            raise ConfigurationError(
                f"cannot coarsen {self.time_grid.num_steps} steps by a factor {factor}"
            )
        m = self.time_grid.num_steps // factor
        inc = self.increments.reshape(self.modes, m, factor).sum(axis=2)
        return WienerBundle(inc, TimeGrid(self.time_grid.t_end, m), self.seed)


def _generator(master: int, path_index: int, mode: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(master), int(path_index), int(mode)])
    return np.random.Generator(np.random.Philox(key))


def sample_increments(seed, modes: int, time_grid: TimeGrid) -> np.ndarray:
    """Raw increment array of shape (modes, num_steps) for ``seed = (master, path_index)``."""
    if not isinstance(time_grid, TimeGrid):
        raise ConfigurationError("time_grid must be a TimeGrid")
    if modes < 0:
        raise ConfigurationError(f"modes must be >= 0, got {modes}")
    master, path_index = seed
    sd = np.sqrt(time_grid.dt)
    out = np.empty((modes, time_grid.num_steps))
    for k in range(modes):
        out[k] = _generator(master, path_index, k).standard_normal(time_grid.num_steps)
    out *= sd
    return out


def sample_wiener_bundle(seed, modes: int, time_grid: TimeGrid) -> WienerBundle:
    """Draw a bundle of ``modes`` Wiener increment streams, each N(0, dt) per step.

    ``modes = 0`` gives an empty (noise-free) bundle.
    """
    seed = (int(seed[0]), int(seed[1]))
    return WienerBundle(sample_increments(seed, modes, time_grid), time_grid, seed)


@dataclass(frozen=True, eq=False)
class TranslationPath:
    """Discrete xi_t at every grid time, shape (num_steps + 1, n)."""

    values: np.ndarray
    first_component_zero: bool = field(default=False)

    def at(self, m: int) -> np.ndarray:
        return self.values[m]

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))


def translation_path(sigma_series, bundle: WienerBundle) -> TranslationPath:
    """Left-endpoint Ito sum xi_{m+1} = xi_m + sigma(t_m) dW_m.

    Parameters
    ----------
    sigma_series : array_like, shape (num_steps, n, K)
        x-independent sigma^{ik} sampled at the left end of every step.
        A (n, K) array is broadcast to all steps.
    bundle : WienerBundle
    """
    sig = np.asarray(sigma_series, dtype=float)
    steps = bundle.time_grid.num_steps
    if sig.ndim == 2:
        sig = np.broadcast_to(sig, (steps,) + sig.shape)
    if sig.ndim != 3 or sig.shape[0] != steps:
        raise ContractViolation(f"sigma_series must have shape ({steps}, n, K), got {sig.shape}")
    if sig.shape[2] != bundle.modes:
        raise ContractViolation(
            f"sigma has {sig.shape[2]} modes but the bundle has {bundle.modes}"
        )
    n = sig.shape[1]
    values = np.zeros((steps + 1, n))
    if bundle.modes:
        np.cumsum(np.einsum("mik,km->mi", sig, bundle.increments), axis=0, out=values[1:])
    first_zero = bool(np.all(sig[:, 0, :] == 0.0))
    if first_zero:
        values[:, 0] = 0.0
    return TranslationPath(values, first_zero)
