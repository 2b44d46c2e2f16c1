"""Measurements on trajectory records.

Time quadratures: stochastic integrals use left endpoints (Ito), Lebesgue
integrals in time use the trapezoid rule, and Strichartz time norms use the
left-endpoint rule on the checkpoint grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grid import ComplexField, lp_norm_array
from .flows import damped_linear_array, kinetic_array
from .record import RecordError, TrajectoryRecord
from .stochastic import brownian_generator

INF = math.inf


def _exact(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    x = float(x)
    if math.isinf(x):
        return INF
    return Fraction(x).limit_denominator(10**6)


def is_admissible(q, p, d) -> bool:
    """Strichartz admissibility 2/q + d/p = d/2, q, p >= 2, (q, p, d) != (2, inf, 2)."""
    q, p = _exact(q), _exact(p)
    if q < 2 or p < 2:
        return False
    if q == 2 and p == INF and d == 2:
        return False
    time_part = 0 if q == INF else Fraction(2) / q
    space_part = 0 if p == INF else Fraction(int(d)) / p
    return time_part + space_part == Fraction(int(d), 2)


@dataclass(frozen=True)
class StrichartzPair:
    """Time exponent q and space exponent p of an L_t^q L_x^p norm."""

    q: float
    p: float

    def admissible(self, d: int) -> bool:
        return is_admissible(self.q, self.p, d)


def default_pair(d: int) -> StrichartzPair:
    """(14/3, 14/5) in three dimensions; in d = 1, 2 keep p = 14/5 and solve for q."""
    p = Fraction(14, 5)
    if d == 3:
        return StrichartzPair(float(Fraction(14, 3)), float(p))
    q = 1 / (Fraction(d, 4) - Fraction(d, 2) / p)
    return StrichartzPair(float(q), float(p))


def _window_indices(times, a, b):
    tol = 1e-9 * max(1.0, abs(b))
    return [i for i, t in enumerate(times) if a - tol <= t <= b + tol]


def strichartz_time_norm(rec: TrajectoryRecord, pair: StrichartzPair, window=None) -> float:
    """(sum_k ||u(t_k)||_p^q dt_k)^(1/q) over checkpoints in ``window`` (left endpoints)."""
    times = rec.times
    a, b = window if window is not None else (times[0], times[-1])
    idx = _window_indices(times, a, b)
    if not idx:
        return 0.0
    norms = [lp_norm_array(rec.fields[i], rec.grid.cell_volume, pair.p) for i in idx]
    if math.isinf(pair.q):
        return float(max(norms))
    total = 0.0
    for i, n in zip(idx, norms):
        if i + 1 >= len(times):
            break
        dt = min(times[i + 1], b) - times[i]
        if dt > 0:
            total += n**pair.q * dt
    return total ** (1.0 / pair.q)


def mass_ledger_check(rec: TrajectoryRecord) -> float:
    """Largest relative mass drift max_k |m_k - m_0| / m_0 (0 for a zero field)."""
    m = np.asarray(rec.mass)
    if m[0] == 0:
        return 0.0
    return float(np.max(np.abs(m - m[0])) / m[0])


def dissipation_ledger_check(rec: TrajectoryRecord) -> float:
    """Balance residual max_k |m_k + D_k - m_0| / m_0 for damped flows."""
    if rec.dissipation is None:
        raise RecordError("record carries no dissipation accumulator")
    m = np.asarray(rec.mass)
    D = np.asarray(rec.dissipation)
    if m[0] == 0:
        return 0.0
    return float(np.max(np.abs(m + D - m[0])) / m[0])


def _propagate_stack(rec: TrajectoryRecord, stack: np.ndarray, i: int, j: int, dt: float):
    return damped_linear_array(stack, rec.grid, rec.times[i], rec.times[j], rec.linear_damping, dt)


@dataclass
class MaximalRecord:
    t: float
    value: float
    beta: float
    pair: tuple = (0, 0)


def _pairwise_max(stack: np.ndarray, endpoints, beta: float, cell_volume: float):
    best, arg = 0.0, (0, 0)
    pts = list(endpoints)
    axes = tuple(range(1, stack.ndim))
    for n, a in enumerate(pts[:-1]):
        later = pts[n + 1:]
        diff = np.abs(stack[later] - stack[a])
        if math.isinf(beta):
            vals = diff.max(axis=axes)
        else:
            vals = (np.sum(diff**beta, axis=axes) * cell_volume) ** (1.0 / beta)
        m = int(np.argmax(vals))
        if vals[m] > best:
            best, arg = float(vals[m]), (a, later[m])
    return best, arg


def maximal_function_series(rec: TrajectoryRecord, beta: float, weight: str = "V",
                            endpoints=None, dt: float | None = None, upto: int | None = None):
    """M(t_m) for every checkpoint t_m (m = 0 .. upto).

    M(t) = max over checkpoint pairs a < b <= t of
    || sum_{steps in [t_a, t_b)} H(t, t_k) inc_k ||_{L^beta}.
    ``endpoints`` restricts the pairs to a subset of checkpoint indices.
    """
    if weight not in rec.convolution:
        raise RecordError(f"record has no stochastic-convolution increments for weight {weight!r}")
    incs = rec.convolution[weight]
    K = len(rec.times) - 1
    if len(incs) != K:
        raise RecordError("stochastic-convolution increments do not match checkpoints")
    upto = K if upto is None else upto
    step = rec.dt if dt is None else dt
    allowed = set(range(K + 1)) if endpoints is None else set(endpoints)
    stack = np.zeros((1,) + rec.grid.shape, dtype=np.complex128)
    out = [MaximalRecord(rec.times[0], 0.0, beta)]
    for m in range(upto):
        stack = _propagate_stack(rec, stack, m, m + 1, step)
        stack = np.concatenate([stack, (stack[-1] + incs[m])[None]], axis=0)
        pts = [i for i in range(m + 2) if i in allowed]
        value, pair = _pairwise_max(stack, pts, beta, rec.grid.cell_volume)
        out.append(MaximalRecord(rec.times[m + 1], value, beta, pair))
    return out


def maximal_function(rec: TrajectoryRecord, beta: float, t: float, weight: str = "V",
                     endpoints=None, dt: float | None = None) -> MaximalRecord:
    m = rec.index_of(t)
    return maximal_function_series(rec, beta, weight, endpoints, dt, upto=m)[m]


def duhamel_residual(rec: TrajectoryRecord, window=None, stochastic: str = "auto") -> float:
    """Relative mismatch between u(b) and the Duhamel reconstruction from u(a).

    u(b) = H(b,a) u(a) - i int_a^b H(b,s) |u|^sigma u ds - i int_a^b H(b,s) g V u dB_s

    with the Lebesgue term by the trapezoid rule over checkpoints and the
    stochastic term from the stored increments.  ``stochastic="milstein"``
    (default on step-resolved records) adds the iterated-integral term
    ``-i/2 g^2 V^2 u (dB^2 - dt)`` of each step; ``"ito"`` uses the
    left-point increments alone.
    """
    a, b = window if window is not None else (rec.times[0], rec.times[-1])
    ia, ib = rec.index_of(a), rec.index_of(b)
    if ib < ia:
        raise ValueError("window end precedes start")
    if ib == ia:
        return 0.0
    noisy = "V" in rec.convolution and rec.noise is not None
    if stochastic == "auto":
        stochastic = "milstein" if rec.is_dense else "ito"
    if stochastic not in ("ito", "milstein"):
        raise ValueError(f"unknown stochastic quadrature {stochastic!r}")
    if noisy and stochastic == "milstein" and not rec.is_dense:
        raise RecordError("the iterated-integral correction needs a checkpoint at every step")
    sigma = rec.sigma

    def nonlinear(i):
        u = rec.fields[i]
        if sigma == 0:
            return np.zeros_like(u)
        return np.abs(u) ** sigma * u

    lin = rec.fields[ia]
    nl = np.zeros_like(lin)
    st = np.zeros_like(lin)
    F_prev = nonlinear(ia)
    for j in range(ia, ib):
        h = rec.times[j + 1] - rec.times[j]
        pre = [lin, nl + 0.5 * h * F_prev, st]
        if noisy and stochastic == "milstein":
            k = rec.step_of(rec.times[j])
            dB = rec.noise_increments[k]
            g = rec.noise.envelope(rec.times[j])
            pre[2] = st - 0.5j * g * g * rec.noise.V**2 * rec.fields[j] * (dB * dB - rec.dt)
        stack = _propagate_stack(rec, np.stack(pre), j, j + 1, rec.dt)
        F_next = nonlinear(j + 1)
        lin = stack[0]
        nl = stack[1] + 0.5 * h * F_next
        st = stack[2] + (rec.convolution["V"][j] if noisy else 0.0)
        F_prev = F_next
    rhs = lin - 1j * nl - 1j * st
    ub = rec.fields[ib]
    cv = rec.grid.cell_volume
    return lp_norm_array(ub - rhs, cv) / lp_norm_array(ub, cv)


@dataclass
class ScatteringReport:
    times: np.ndarray
    cauchy: np.ndarray
    residual: np.ndarray
    u_plus: ComplexField

    def rows(self):
        c = np.append(self.cauchy, np.nan)
        return list(zip(self.times.tolist(), c.tolist(), self.residual.tolist()))


def scattering_profile(rec: TrajectoryRecord) -> np.ndarray:
    """v(t_k) = e^{-i t_k Lap} u(t_k), stacked."""
    return np.stack([kinetic_array(f, rec.grid, -t) for t, f in zip(rec.times, rec.fields)])


def scattering_residual(rec: TrajectoryRecord) -> ScatteringReport:
    """Cauchy increments of v(t) = e^{-itLap} u(t) and distances to u+ := v(t_K)."""
    v = scattering_profile(rec)
    cv = rec.grid.cell_volume
    axes = tuple(range(1, v.ndim))
    cauchy = np.sqrt(np.sum(np.abs(np.diff(v, axis=0)) ** 2, axis=axes) * cv)
    residual = np.sqrt(np.sum(np.abs(v - v[-1]) ** 2, axis=axes) * cv)
    return ScatteringReport(np.asarray(rec.times, dtype=float), cauchy, residual,
                            ComplexField(rec.grid, v[-1]))


@dataclass
class BurkholderResult:
    lhs: float
    rhs: float
    ratio: float
    lhs_se: float
    paths: int

    @property
    def ratio_sq(self) -> float:
        return self.ratio**2


def burkholder_ratio(integrand, increments, rho: float, dt: float, anchored: bool = False
                     ) -> BurkholderResult:
    """Monte Carlo sides of the Burkholder inequality for scalar integrands.

    ``integrand[i, k]`` is sigma on path i over step k (adapted: built from
    increments before k), ``increments[i, k]`` the matching Brownian step.
    LHS = || sup_{a <= b} |int_a^b sigma dB| ||_{L^rho}, computed as the range
    of the running stochastic sum; RHS = || (int sigma^2 ds)^(1/2) ||_{L^rho}.
    ``anchored=True`` fixes a = 0, i.e. the Doob form sup_b |int_0^b sigma dB|.
    """
    if not (2 <= rho < INF):
        raise ValueError(f"moment rho must lie in [2, inf), got {rho}")
    sig = np.atleast_2d(np.asarray(integrand, dtype=float))
    dB = np.atleast_2d(np.asarray(increments, dtype=float))
    sig = np.broadcast_to(sig, dB.shape)
    running = np.cumsum(sig * dB, axis=1)
    running = np.concatenate([np.zeros((running.shape[0], 1)), running], axis=1)
    if anchored:
        sup = np.abs(running).max(axis=1)
    else:
        sup = running.max(axis=1) - running.min(axis=1)
    quad = np.sum(sig**2, axis=1) * dt
    samples = sup**rho
    lhs = float(np.mean(samples) ** (1 / rho))
    rhs = float(np.mean(quad ** (rho / 2)) ** (1 / rho))
    P = sig.shape[0]
    se = float(np.std(samples, ddof=1) / math.sqrt(P)) if P > 1 else math.inf
    ratio = 0.0 if rhs == 0 else lhs / rhs
    return BurkholderResult(lhs, rhs, ratio, se, P)


def brownian_increments(master_seed: int, paths: int, n_steps: int, dt: float) -> np.ndarray:
    """Increments of ``paths`` independent Brownian paths, path i keyed by (seed, i)."""
    out = np.empty((paths, n_steps))
    for i in range(paths):
        out[i] = brownian_generator(master_seed, i).standard_normal(n_steps) * math.sqrt(dt)
    return out


LEDGER_COLUMNS = ["time", "mass", "dissipation", "l2", "linf", "strichartz_window", "M0",
                  "scattering_residual"]


def ledger_rows(rec: TrajectoryRecord, pair: StrichartzPair, maximal=None) -> list:
    """One row per checkpoint; ``strichartz_window`` is the norm over [t_0, t_k]."""
    cv = rec.grid.cell_volume
    scat = scattering_residual(rec)
    rows = []
    acc = 0.0
    for i, t in enumerate(rec.times):
        if i > 0:
            n_prev = lp_norm_array(rec.fields[i - 1], cv, pair.p)
            acc += n_prev**pair.q * (t - rec.times[i - 1])
        rows.append({
            "time": t,
            "mass": rec.mass[i],
            "dissipation": rec.dissipation[i] if rec.dissipation is not None else 0.0,
            "l2": math.sqrt(rec.mass[i]),
            "linf": float(np.abs(rec.fields[i]).max()),
            "strichartz_window": acc ** (1.0 / pair.q),
            "M0": float(maximal[i]) if maximal is not None else float("nan"),
            "scattering_residual": float(scat.residual[i]),
        })
    return rows
