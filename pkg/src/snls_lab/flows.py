"""Deterministic split-step flows.

Sign convention used throughout the package::

    i u_t + Laplacian(u) = |u|^sigma u - i <t>^(-2 gamma) V^2 u,   sigma = 4/d

so the kinetic substep multiplies the transform by exp(-i dt |xi|^2), the
nonlinear substep is the pointwise phase exp(-i |u|^sigma dt), and the damping
substep is the real factor exp(-A V^2) with A the integral of <t>^(-2 gamma)
over the substep.  With this choice the damping removes mass at the rate
``2 <t>^(-2 gamma) * integral(V^2 |u|^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import ComplexField, SpatialGrid, free_propagate

AMPLITUDE_LIMIT = 1e6
MAX_DT = 0.1

# 2-point Gauss-Legendre nodes on [0, 1]
_GAUSS_NODES = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class FlowError(RuntimeError):
    """A time step produced an unusable state."""

    def __init__(self, message, time=None, max_amplitude=None):
        super().__init__(message)
        self.time = time
        self.max_amplitude = max_amplitude


def japanese_bracket(t):
    return np.sqrt(1.0 + np.square(t))


@dataclass(frozen=True)
class FlowParams:
    grid: SpatialGrid
    dt: float
    defocusing: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.dt <= MAX_DT):
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if not self.defocusing:
            raise ValueError("only the defocusing nonlinearity is supported")

    @property
    def sigma(self) -> float:
        return 4.0 / self.grid.d


@dataclass(frozen=True, eq=False)
class DampingSpec:
    """Damping ``<t>^(-2 gamma) V(x)^2`` with a real, rapidly decaying ``V``."""

    potential: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        V = np.asarray(self.potential)
        if np.iscomplexobj(V):
            if np.any(V.imag != 0):
                raise ValueError("damping potential must be real")
            V = V.real
        V = V.astype(np.float64)
        if not np.all(np.isfinite(V)):
            raise ValueError("damping potential must be finite")
        if self.gamma < 0:
            raise ValueError(f"decay exponent must be >= 0, got {self.gamma}")
        object.__setattr__(self, "potential", V)
        object.__setattr__(self, "_V2", V * V)

    @classmethod
    def gaussian(cls, grid: SpatialGrid, amplitude=1.0, width=1.0, gamma=0.0):
        return cls(amplitude * np.exp(-grid.r2 / (2 * width**2)), gamma)

    @property
    def V2(self) -> np.ndarray:
        return self._V2

    @property
    def is_zero(self) -> bool:
        return not np.any(self.potential)

    def envelope(self, t):
        return japanese_bracket(t) ** (-2.0 * self.gamma)

    def integral(self, t0: float, t1: float) -> float:
        """Integral of the envelope over [t0, t1] by 2-point Gauss quadrature."""
        if self.gamma == 0:
            return t1 - t0
        h = t1 - t0
        return 0.5 * h * sum(self.envelope(t0 + h * x) for x in _GAUSS_NODES)

    def factor(self, t0: float, t1: float) -> np.ndarray:
        return np.exp(-self.integral(t0, t1) * self._V2)

    def rate(self, values: np.ndarray, t: float, cell_volume: float) -> float:
        """Instantaneous mass loss 2 <t>^(-2 gamma) * integral(V^2 |u|^2)."""
        return float(2.0 * self.envelope(t) * np.sum(self._V2 * np.abs(values) ** 2) * cell_volume)


@lru_cache(maxsize=32)
def _kinetic(grid: SpatialGrid, tau: float) -> np.ndarray:
    return np.exp(-1j * tau * grid.xi2)


def kinetic_array(values: np.ndarray, grid: SpatialGrid, tau: float) -> np.ndarray:
    return grid.ifft(_kinetic(grid, tau) * grid.fft(values))


def nonlinear_phase_array(values: np.ndarray, sigma: float, dt: float) -> np.ndarray:
    amp = np.abs(values)
    peak = amp.max()
    if not peak <= AMPLITUDE_LIMIT:
        raise FlowError(f"amplitude {peak:.3e} exceeds {AMPLITUDE_LIMIT:g}", max_amplitude=float(peak))
    if sigma == 4.0:
        power = np.square(np.square(amp))
    elif sigma == 2.0:
        power = np.square(amp)
    else:
        power = amp**sigma
    return values * np.exp(-1j * dt * power)


class Stepper:
    """One Strang step of a flow, in terms of raw arrays.

    ``advance(values, k)`` maps the state at ``t_k = k * dt`` to ``t_{k+1}``.
    ``damping`` drives the dissipation ledger; ``linear_damping`` is the
    damping of the linear propagator H(t, s) used by the diagnostics.
    """

    damping: DampingSpec | None = None
    linear_damping: DampingSpec | None = None
    noise = None
    path = None
    nonlinear = True

    def __init__(self, params: FlowParams):
        self.params = params
        self.grid = params.grid
        self.dt = params.dt

    def advance(self, values: np.ndarray, k: int) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "dt": self.dt, "sigma": self.params.sigma}


class NLSStepper(Stepper):
    def advance(self, values, k):
        half = 0.5 * self.dt
        w = kinetic_array(values, self.grid, half)
        w = nonlinear_phase_array(w, self.params.sigma, self.dt)
        return kinetic_array(w, self.grid, half)


class DampedNLSStepper(Stepper):
    def __init__(self, params: FlowParams, damping: DampingSpec):
        super().__init__(params)
        self.damping = damping
        self.linear_damping = damping

    def advance(self, values, k):
        dt = self.dt
        t0 = k * dt
        w = kinetic_array(values, self.grid, 0.5 * dt)
        w = nonlinear_phase_array(w, self.params.sigma, dt)
        if not self.damping.is_zero:
            w = w * self.damping.factor(t0, t0 + dt)
        return kinetic_array(w, self.grid, 0.5 * dt)

    def describe(self):
        return {**super().describe(), "damping_gamma": self.damping.gamma}


class DampedLinearStepper(Stepper):
    nonlinear = False

    def __init__(self, params: FlowParams, damping: DampingSpec | None):
        super().__init__(params)
        self.damping = damping
        self.linear_damping = damping

    def advance(self, values, k):
        return damped_linear_array(values, self.grid, k * self.dt, (k + 1) * self.dt,
                                   self.linear_damping, self.dt)


def damped_linear_array(values: np.ndarray, grid: SpatialGrid, s: float, t: float,
                        damping: DampingSpec | None, dt: float) -> np.ndarray:
    if t < s:
        raise ValueError(f"H(t, s) needs t >= s, got s={s}, t={t}")
    if t == s:
        return values.copy()
    if damping is None or damping.is_zero:
        return kinetic_array(values, grid, t - s)
    n = int(math.floor((t - s) / dt + 1e-9))
    w = values
    tk = s
    for j in range(n):
        t_next = s + (j + 1) * dt
        w = kinetic_array(w, grid, 0.5 * dt)
        w = w * damping.factor(tk, t_next)
        w = kinetic_array(w, grid, 0.5 * dt)
        tk = t_next
    rest = t - tk
    if rest > 1e-12 * max(1.0, abs(t)):
        w = kinetic_array(w, grid, 0.5 * rest)
        w = w * damping.factor(tk, t)
        w = kinetic_array(w, grid, 0.5 * rest)
    return w


def nls_step(u: ComplexField, params: FlowParams, t: float = 0.0) -> ComplexField:
    """One Strang step of the defocusing mass-critical NLS (autonomous, ``t`` unused)."""
    return ComplexField(u.grid, NLSStepper(params).advance(u.values, 0))


def damped_linear_propagate(f: ComplexField, s: float, t: float, damping: DampingSpec | None,
                            dt: float) -> ComplexField:
    """H(t, s) f: the damped linear flow from s to t with Strang substeps of size dt."""
    if not (np.isfinite(s) and np.isfinite(t)):
        raise ValueError("times must be finite")
    if damping is None or damping.is_zero:
        if t < s:
            raise ValueError(f"H(t, s) needs t >= s, got s={s}, t={t}")
        return free_propagate(f, t - s)
    return ComplexField(f.grid, damped_linear_array(f.values, f.grid, s, t, damping, dt))


def damped_nls_step(u: ComplexField, params: FlowParams, damping: DampingSpec,
                    t: float) -> ComplexField:
    """One Strang step of the damped NLS over [t, t + dt]."""
    dt = params.dt
    w = kinetic_array(u.values, u.grid, 0.5 * dt)
    w = nonlinear_phase_array(w, params.sigma, dt)
    if not damping.is_zero:
        w = w * damping.factor(t, t + dt)
    return ComplexField(u.grid, kinetic_array(w, u.grid, 0.5 * dt))


def evolve(u0: ComplexField, stepper: Stepper, horizon: float, checkpoints=None, **kwargs):
    """Integrate ``u0`` with ``stepper`` up to ``horizon`` and record a trajectory.

    See :func:`snls_lab.record.integrate` for the keyword arguments.
    """
    from .record import integrate

    return integrate(u0, stepper, horizon, checkpoints, **kwargs)
