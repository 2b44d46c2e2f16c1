"""Brownian driver and the stochastic NLS integrator.

The Ito equation with its correction drift,

    du = (i Lap u - i |u|^sigma u) dt - i u <t>^-gamma V dB - 1/2 <t>^-2gamma V^2 u dt,

is the Stratonovich equation ``du = ... - i u <t>^-gamma V o dB``.  Because
``-i V`` is purely imaginary the noise acts as a pointwise phase, which the
stepper applies exactly.  Every substep is unitary or unit-modulus, so the
L^2 norm is conserved on each path up to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flows import (DampingSpec, FlowParams, Stepper, japanese_bracket, kinetic_array,
                    nonlinear_phase_array)
from .grid import ComplexField, SpatialGrid


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Single-mode noise ``W(x, t) = amplitude * profile(x) * B_t`` with decay <t>^-gamma."""

    profile: np.ndarray
    gamma: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        prof = np.asarray(self.profile)
        if np.iscomplexobj(prof):
            if np.any(prof.imag != 0):
                raise ValueError("noise potential must be real")
            prof = prof.real
        prof = prof.astype(np.float64)
        if not np.all(np.isfinite(prof)):
            raise ValueError("noise potential must be finite")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        object.__setattr__(self, "profile", prof)
        object.__setattr__(self, "_V", self.amplitude * prof)

    @classmethod
    def gaussian(cls, grid: SpatialGrid, amplitude=1.0, width=1.0, gamma=0.0):
        return cls(np.exp(-grid.r2 / (2 * width**2)), gamma, amplitude)

    @property
    def V(self) -> np.ndarray:
        return self._V

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0 or not np.any(self.profile)

    def envelope(self, t):
        return japanese_bracket(t) ** (-self.gamma)

    def ito_damping(self) -> DampingSpec:
        """Damping of the linear part of the Ito form: 1/2 <t>^-2gamma V^2."""
        return DampingSpec(self.V / math.sqrt(2.0), self.gamma)


@dataclass(eq=False)
class BrownianPath:
    seed: int
    dt: float
    increments: np.ndarray
    stream: int = 0
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=np.float64)
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.increments)])

    @property
    def n_steps(self) -> int:
        return self.increments.size

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def increment(self, k: int) -> float:
        if not 0 <= k < self.n_steps:
            raise IndexError(f"step {k} outside path with {self.n_steps} increments")
        return float(self.increments[k])

    def coarsen(self, factor: int) -> "BrownianPath":
        """The same path seen with step ``factor * dt`` (increments summed in blocks)."""
        if self.n_steps % factor:
            raise ValueError(f"{self.n_steps} increments not divisible by {factor}")
        inc = self.increments.reshape(-1, factor).sum(axis=1)
        return BrownianPath(self.seed, self.dt * factor, inc, self.stream)


def brownian_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def sample_path(seed: int, dt: float, horizon: float, stream: int = 0) -> BrownianPath:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if horizon < dt:
        raise ValueError(f"horizon {horizon} shorter than one step {dt}")
    n = int(math.ceil(horizon / dt - 1e-9))
    rng = brownian_generator(seed, stream)
    return BrownianPath(seed, dt, rng.standard_normal(n) * math.sqrt(dt), stream)


class SNLSStepper(Stepper):
    """Strang step: half kinetic, nonlinear phase, exact noise phase, half kinetic."""

    def __init__(self, params: FlowParams, noise: NoiseSpec, path: BrownianPath):
        super().__init__(params)
        if abs(path.dt - params.dt) > 1e-12 * params.dt:
            raise ValueError(f"path step {path.dt} differs from flow step {params.dt}")
        self.noise = noise
        self.path = path
        self.linear_damping = noise.ito_damping()

    def advance(self, values, k):
        dt = self.dt
        dB = self.path.increment(k)
        w = kinetic_array(values, self.grid, 0.5 * dt)
        w = nonlinear_phase_array(w, self.params.sigma, dt)
        if not self.noise.is_zero:
            g = self.noise.envelope((k + 0.5) * dt)
            w = w * np.exp(-1j * (g * dB) * self.noise.V)
        return kinetic_array(w, self.grid, 0.5 * dt)

    def convolution_increment(self, values, k, weight=None):
        """Left-point Ito integrand increment <t_k>^-gamma W u dB_k."""
        W = self.noise.V if weight is None else weight
        return (self.noise.envelope(k * self.dt) * self.path.increment(k)) * W * values

    def describe(self):
        return {**super().describe(), "gamma": self.noise.gamma,
                "amplitude": self.noise.amplitude, "seed": self.path.seed,
                "stream": self.path.stream}


class ItoSNLSStepper(SNLSStepper):
    """The literal Ito pair in place of the exact phase.

    ``scheme="euler"`` applies ``u - i g V u dB - 1/2 g^2 V^2 u dt``
    (Euler-Maruyama, strong order 1/2); ``scheme="milstein"`` adds the
    iterated-integral term ``-1/2 g^2 V^2 u (dB^2 - dt)``.
    """

    def __init__(self, params, noise, path, scheme="euler"):
        super().__init__(params, noise, path)
        if scheme not in ("euler", "milstein"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.scheme = scheme

    def advance(self, values, k):
        dt = self.dt
        dB = self.path.increment(k)
        w = kinetic_array(values, self.grid, 0.5 * dt)
        w = nonlinear_phase_array(w, self.params.sigma, dt)
        gV = self.noise.envelope((k + 0.5) * dt) * self.noise.V
        quad = dB * dB if self.scheme == "milstein" else dt
        w = w * (1.0 - 1j * gV * dB - 0.5 * gV * gV * quad)
        return kinetic_array(w, self.grid, 0.5 * dt)


def snls_step(u: ComplexField, params: FlowParams, noise: NoiseSpec, path: BrownianPath,
              k: int) -> ComplexField:
    return ComplexField(u.grid, SNLSStepper(params, noise, path).advance(u.values, k))


def stochastic_convolution_increment(u: ComplexField, noise: NoiseSpec, path: BrownianPath,
                                     k: int) -> ComplexField:
    g = noise.envelope(k * path.dt)
    return ComplexField(u.grid, (g * path.increment(k)) * noise.V * u.values)
