"""Trajectory records: the time loop, the ledgers it keeps, and their binary form."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flows import DampingSpec, FlowError, Stepper, damped_linear_array
from .grid import ComplexField, FieldFormatError, SpatialGrid, field_from_bytes, field_to_bytes

MAGIC = b"SNLSTRJ1"
_LEN = struct.Struct("<I")


class RecordError(ValueError):
    pass


_HEADER_KEYS = {"version", "dt", "sigma", "times", "mass", "dissipation", "convolution", "noise",
                "linear_damping", "n_increments", "metadata", "complete"}


@dataclass(eq=False)
class TrajectoryRecord:
    grid: SpatialGrid
    dt: float
    sigma: float  # nonlinearity exponent; 0 marks a linear flow
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    dissipation: list | None = None
    # per checkpoint interval j: sum over steps k in [t_j, t_{j+1}) of H(t_{j+1}, t_k) inc_k
    convolution: dict = field(default_factory=dict)
    noise_increments: np.ndarray | None = None
    linear_damping: DampingSpec | None = None
    noise: object | None = None
    metadata: dict = field(default_factory=dict)
    complete: bool = False

    @property
    def n_checkpoints(self) -> int:
        return len(self.times)

    def step_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise RecordError(f"time {t} is not a multiple of dt={self.dt}")
        return k

    def index_of(self, t: float) -> int:
        for i, tk in enumerate(self.times):
            if abs(tk - t) <= 1e-9 * max(1.0, abs(t)):
                return i
        raise RecordError(f"time {t} is not a checkpoint")

    def field(self, i: int) -> ComplexField:
        return ComplexField(self.grid, self.fields[i])

    @property
    def is_dense(self) -> bool:
        """Checkpoints at every step."""
        return all(abs(b - a - self.dt) <= 1e-9 * self.dt for a, b in zip(self.times, self.times[1:]))

    def propagate(self, values: np.ndarray, i: int, j: int) -> np.ndarray:
        """H(t_j, t_i) applied to ``values`` using the record's linear damping."""
        return damped_linear_array(values, self.grid, self.times[i], self.times[j],
                                   self.linear_damping, self.dt)

    # serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        names = sorted(self.convolution)
        header = {
            "version": 1,
            "dt": self.dt,
            "sigma": self.sigma,
            "times": list(map(float, self.times)),
            "mass": list(map(float, self.mass)),
            "dissipation": None if self.dissipation is None else list(map(float, self.dissipation)),
            "convolution": names,
            "noise": None if self.noise is None else {
                "gamma": self.noise.gamma, "amplitude": self.noise.amplitude},
            "linear_damping": None if self.linear_damping is None else {
                "gamma": self.linear_damping.gamma},
            "n_increments": 0 if self.noise_increments is None else int(self.noise_increments.size),
            "metadata": self.metadata,
            "complete": self.complete,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        parts = [MAGIC, _LEN.pack(len(blob)), blob]
        parts += [field_to_bytes(ComplexField(self.grid, f)) for f in self.fields]
        for name in names:
            parts += [field_to_bytes(ComplexField(self.grid, f)) for f in self.convolution[name]]
        if self.noise is not None:
            parts.append(field_to_bytes(ComplexField(self.grid, self.noise.profile)))
        if self.linear_damping is not None:
            parts.append(field_to_bytes(ComplexField(self.grid, self.linear_damping.potential)))
        if self.noise_increments is not None:
            parts.append(np.ascontiguousarray(self.noise_increments, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, source: str = "<bytes>") -> "TrajectoryRecord":
        from .stochastic import NoiseSpec

        if buf[:len(MAGIC)] != MAGIC:
            raise RecordError(f"{source}: not a trajectory record (bad magic)")
        pos = len(MAGIC)
        if len(buf) < pos + _LEN.size:
            raise RecordError(f"{source}: truncated header")
        (hlen,) = _LEN.unpack_from(buf, pos)
        pos += _LEN.size
        try:
            header = json.loads(buf[pos:pos + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RecordError(f"{source}: corrupted header ({exc})") from None
        pos += hlen
        missing = _HEADER_KEYS - set(header) if isinstance(header, dict) else _HEADER_KEYS
        if missing:
            raise RecordError(f"{source}: corrupted header (missing {', '.join(sorted(missing))})")

        def read_field():
            nonlocal pos
            try:
                f, pos = field_from_bytes(buf, pos, source)
            except FieldFormatError as exc:
                raise RecordError(str(exc)) from None
            return f

        times = header["times"]
        fields = [read_field() for _ in times]
        grid = fields[0].grid if fields else None
        if grid is None:
            raise RecordError(f"{source}: record holds no fields")
        if any(f.grid != grid for f in fields):
            raise RecordError(f"{source}: field grids disagree")
        conv = {name: [read_field().values for _ in times[1:]] for name in header["convolution"]}
        noise = None
        if header["noise"] is not None:
            noise = NoiseSpec(read_field().values.real, header["noise"]["gamma"],
                              header["noise"]["amplitude"])
        damping = None
        if header["linear_damping"] is not None:
            damping = DampingSpec(read_field().values.real, header["linear_damping"]["gamma"])
        increments = None
        n_inc = header["n_increments"]
        if n_inc:
            need = 8 * n_inc
            if len(buf) - pos < need:
                raise RecordError(f"{source}: truncated noise increments")
            increments = np.frombuffer(buf, dtype="<f8", count=n_inc, offset=pos).astype(np.float64)
            pos += need
        if pos != len(buf):
            raise RecordError(f"{source}: {len(buf) - pos} trailing bytes")
        if len(header["mass"]) != len(times):
            raise RecordError(f"{source}: ledger length mismatch")
        return cls(grid=grid, dt=header["dt"], sigma=header["sigma"], times=list(times),
                   fields=[f.values for f in fields], mass=list(header["mass"]),
                   dissipation=header["dissipation"], convolution=conv,
                   noise_increments=increments, linear_damping=damping, noise=noise,
                   metadata=header["metadata"], complete=header["complete"])

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "TrajectoryRecord":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), source=str(path))


def sqrt_weight(V: np.ndarray) -> np.ndarray:
    """Signed square root, the V^(1/2) weight of the iterated maximal functions."""
    return np.sign(V) * np.sqrt(np.abs(V))


def _checkpoint_steps(checkpoints, dt, k0, k_end, k_first=None):
    """Steps of the checkpoints still ahead of step ``k0``; ``k_first`` is the record start."""
    k_first = k0 if k_first is None else k_first
    steps = set()
    for t in checkpoints:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"checkpoint {t} is not aligned to dt={dt}")
        if k < k_first or k > k_end:
            raise ValueError(f"checkpoint {t} outside [{k_first * dt}, {k_end * dt}]")
        if k > k0:
            steps.add(k)
    if k_end > k0:
        steps.add(k_end)
    return sorted(steps)


def integrate(u0: ComplexField, stepper: Stepper, horizon: float, checkpoints=None, *,
              t0: float = 0.0, convolution: bool | None = None, weights: dict | None = None,
              resume: TrajectoryRecord | None = None, stop_at: float | None = None,
              on_checkpoint=None) -> TrajectoryRecord:
    """Run ``stepper`` from ``t0`` to ``horizon`` recording at ``checkpoints``.

    Stochastic steppers also accumulate the stochastic-convolution increments
    (one aggregate per checkpoint interval and weight) and keep the Brownian
    increments.  ``resume`` continues a partial record in place; ``stop_at``
    halts at the first checkpoint at or beyond that time, leaving the record
    incomplete; ``on_checkpoint(record)`` is called after every checkpoint.
    """
    dt = stepper.dt
    grid = stepper.grid
    has_noise = stepper.noise is not None
    if convolution is None:
        convolution = has_noise
    if convolution and not has_noise:
        raise ValueError("stochastic-convolution increments need a stochastic stepper")
    if weights is None:
        weights = {"V": None} if convolution else {}
    damping = stepper.damping

    k0 = int(round(t0 / dt))
    k_end = int(round(horizon / dt))
    if abs(k_end * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt={dt}")
    if k_end < k0:
        raise ValueError("horizon precedes start time")
    if has_noise and k_end > stepper.path.n_steps:
        raise ValueError(f"Brownian path covers {stepper.path.n_steps} steps, run needs {k_end}")

    if resume is None:
        values = np.asarray(u0.values, dtype=np.complex128).copy()
        rec = TrajectoryRecord(
            grid=grid, dt=dt, sigma=stepper.params.sigma if stepper.nonlinear else 0.0,
            times=[k0 * dt], fields=[values.copy()],
            mass=[ComplexField(grid, values).mass],
            dissipation=[0.0] if damping is not None else None,
            convolution={name: [] for name in weights},
            noise_increments=stepper.path.increments[:k_end].copy() if has_noise else None,
            linear_damping=stepper.linear_damping, noise=stepper.noise,
            metadata={"stepper": stepper.describe(), "horizon": horizon})
    else:
        rec = resume
        values = rec.fields[-1].copy()
        if has_noise:
            rec.noise_increments = stepper.path.increments[:k_end].copy()
    k = rec.step_of(rec.times[-1])
    resolved = {name: (stepper.noise.V if W is None else W) for name, W in weights.items()}
    acc = {name: np.zeros(grid.shape, dtype=np.complex128) for name in weights}
    D = rec.dissipation[-1] if damping is not None else 0.0
    rate = damping.rate(values, k * dt, grid.cell_volume) if damping is not None else 0.0

    for target in _checkpoint_steps(checkpoints or [], dt, k, k_end, rec.step_of(rec.times[0])):
        if stop_at is not None and rec.times[-1] >= stop_at - 1e-12:
            rec.complete = False
            return rec
        while k < target:
            tk = k * dt
            for name, W in resolved.items():
                inc = stepper.convolution_increment(values, k, W)
                acc[name] = damped_linear_array(acc[name] + inc, grid, tk, tk + dt,
                                                stepper.linear_damping, dt)
            try:
                new = stepper.advance(values, k)
            except FlowError as exc:
                if exc.time is None:
                    exc.time = tk
                    exc.args = (f"{exc.args[0]} at t={tk:.6g}",)
                raise
            if not np.all(np.isfinite(new)):
                peak = float(np.nanmax(np.abs(np.where(np.isfinite(new), new, 0))))
                raise FlowError(f"non-finite field at t={tk + dt:.6g} (max finite amplitude {peak:.3e})",
                                time=tk + dt, max_amplitude=peak)
            if damping is not None and not damping.is_zero:
                new_rate = damping.rate(new, tk + dt, grid.cell_volume)
                D += 0.5 * dt * (rate + new_rate)
                rate = new_rate
            values = new
            k += 1
        rec.times.append(k * dt)
        rec.fields.append(values.copy())
        rec.mass.append(ComplexField(grid, values).mass)
        if rec.dissipation is not None:
            rec.dissipation.append(D)
        for name in acc:
            rec.convolution[name].append(acc[name])
            acc[name] = np.zeros(grid.shape, dtype=np.complex128)
        if on_checkpoint is not None:
            on_checkpoint(rec)
    rec.complete = True
    return rec


def uniform_checkpoints(horizon: float, count: int, t0: float = 0.0) -> list:
    """``count`` equally spaced checkpoints in (t0, horizon]."""
    return [t0 + (horizon - t0) * (i + 1) / count for i in range(count)]


def aligned(t: float, dt: float) -> float:
    return round(t / dt) * dt


def ceil_steps(t: float, dt: float) -> int:
    return int(math.ceil(t / dt - 1e-9))
