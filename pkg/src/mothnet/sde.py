"""Noisy firing-rate dynamics for one layer of neurons.

Each neuron obeys

    tau dx/dt = -x + S(drive) + noise

integrated with explicit Euler-Maruyama at a fixed step.  Rates are clamped
at zero after every step.

Random numbers come from numpy's ``PCG64`` bit generator seeded through
``SeedSequence``; streams are split with ``SeedSequence.spawn`` so that every
moth instance draws from an independent, platform-stable stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class IntegrationError(ValueError):
    """Raised when a drive or state becomes non-finite."""


@dataclass(frozen=True)
class SdeParams:
    tau: float = 1.0
    dt: float = 0.05
    noise_amplitude: float = 0.0

    def __post_init__(self):
        if self.tau <= 0 or self.dt <= 0:
            raise ValueError("tau and dt must be positive")
        if self.dt >= self.tau:
            raise ValueError(f"dt={self.dt} must be smaller than tau={self.tau}")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


@dataclass(frozen=True)
class SigmoidParams:
    max_rate: float = 1.0
    slope: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.max_rate <= 0 or self.slope <= 0:
            raise ValueError("max_rate and slope must be positive")


def make_rng(seed) -> np.random.Generator:
    """Generator used everywhere in the package (PCG64 via SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def sigmoid(x, params: SigmoidParams):
    """Logistic ``max_rate / (1 + exp(-slope (x - offset)))``.

    Works on scalars and arrays; saturates cleanly for extreme inputs.
    """
    z = params.slope * (np.asarray(x, dtype=float) - params.offset)
    # exp of a clipped argument keeps the result exact to double precision
    # while avoiding overflow warnings.
    out = params.max_rate / (1.0 + np.exp(-np.clip(z, -700.0, 700.0)))
    return float(out) if out.ndim == 0 else out


def euler_maruyama_step(
    state: np.ndarray,
    drive: np.ndarray,
    params: SdeParams,
    sig: SigmoidParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Advance ``state`` by one step of ``dt``.

    ``state`` and ``drive`` may be 1-D (one layer) or 2-D (a batch of layers,
    one per row); noise is drawn independently per entry.
    """
    state = np.asarray(state, dtype=float)
    drive = np.asarray(drive, dtype=float)
    if drive.shape != state.shape:
        raise IntegrationError(
            f"drive shape {drive.shape} does not match state shape {state.shape}"
        )
    if not np.all(np.isfinite(drive)):
        raise IntegrationError("non-finite drive")

    new = state + (params.dt / params.tau) * (-state + sigmoid(drive, sig))
    if params.noise_amplitude > 0:
        if rng is None:
            raise ValueError("a generator is required when noise_amplitude > 0")
        new = new + params.noise_amplitude * np.sqrt(params.dt) * rng.standard_normal(
            state.shape
        )
    np.maximum(new, 0.0, out=new)
    return new


def simulate_window(
    initial: np.ndarray,
    drive_fn: Callable[[float, np.ndarray], np.ndarray],
    duration: float,
    params: SdeParams,
    sig: SigmoidParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Integrate for ``duration`` and return the full trajectory.

    ``drive_fn(t, x)`` returns the drive at time ``t`` given the current
    state ``x`` (recurrent layers need the state).  The result has
    ``floor(duration / dt) + 1`` rows; row 0 is ``initial``.
    """
    if duration < params.dt:
        raise ValueError("duration must be at least one step")
    # Small tolerance so that e.g. 2.0 / 0.05 counts as 40 steps, not 39.
    n_steps = int(np.floor(duration / params.dt + 1e-9))
    x = np.array(initial, dtype=float)
    traj = np.empty((n_steps + 1,) + x.shape)
    traj[0] = x
    for k in range(n_steps):
        x = euler_maruyama_step(x, drive_fn(k * params.dt, x), params, sig, rng)
        traj[k + 1] = x
    return traj
