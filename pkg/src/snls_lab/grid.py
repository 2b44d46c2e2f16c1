"""Periodic pseudospectral substrate.

The whole space is replaced by the torus ``[-L/2, L/2)^d`` sampled on ``N``
points per axis.  Transforms use :mod:`numpy.fft` unnormalised, so the
discrete Parseval identity reads

    sum(|u|^2) * h^d == sum(|fft(u)|^2) * h^d / N^d

with ``h = L/N`` the grid spacing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np


class GridError(ValueError):
    pass


class FieldFormatError(ValueError):
    pass


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpatialGrid:
    d: int
    L: float
    N: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension d must be 1, 2 or 3, got {self.d}")
        if not isinstance(self.N, (int, np.integer)) or not _is_power_of_two(int(self.N)):
            raise GridError(f"N must be a power of two, got {self.N}")
        if self.N < 16:
            raise GridError(f"N must be at least 16, got {self.N}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise GridError(f"extent L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L / 2 + self.h * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    @cached_property
    def r2(self) -> np.ndarray:
        """|x|^2 at every grid point."""
        return sum(c**2 for c in self.coords)

    @cached_property
    def xi(self) -> np.ndarray:
        """Angular frequencies 2*pi*k/L in FFT ordering."""
        return 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    @cached_property
    def xi2(self) -> np.ndarray:
        """|xi|^2 on the full frequency lattice."""
        grids = np.meshgrid(*([self.xi] * self.d), indexing="ij")
        return sum(g**2 for g in grids)

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values, axes=tuple(range(-self.d, 0)))

    def ifft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(values, axes=tuple(range(-self.d, 0)))


def make_grid(d: int, L: float, N: int) -> SpatialGrid:
    return SpatialGrid(int(d), float(L), int(N))


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.size != self.grid.size:
            raise GridError(f"field has {values.size} values, grid expects {self.grid.size}")
        object.__setattr__(self, "values", values.reshape(self.grid.shape))

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "ComplexField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    def norm(self, p: float = 2.0) -> float:
        return lp_norm(self, p)

    @property
    def mass(self) -> float:
        """Squared L^2 norm."""
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.grid, self.values + other.values)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.grid, self.values - other.values)

    def __mul__(self, scalar) -> "ComplexField":
        return ComplexField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def to_bytes(self) -> bytes:
        return field_to_bytes(self)


def lp_norm_array(values: np.ndarray, cell_volume: float, p: float = 2.0) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(values)
    if np.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p == 2:
        return float(np.sqrt(np.sum(a * a) * cell_volume))
    return float((np.sum(a**p) * cell_volume) ** (1.0 / p))


def lp_norm(u: ComplexField, p: float = 2.0) -> float:
    """Discrete L^p norm with quadrature weight h^d; p may be ``inf``."""
    return lp_norm_array(u.values, u.grid.cell_volume, p)


@dataclass(frozen=True, eq=False)
class SpectralMultiplier:
    grid: SpatialGrid
    symbol: np.ndarray

    @classmethod
    def schrodinger(cls, grid: SpatialGrid, t: float) -> "SpectralMultiplier":
        """The symbol exp(-i t |xi|^2) of the free propagator."""
        return cls(grid, np.exp(-1j * t * grid.xi2))

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        return self.grid.ifft(self.symbol * self.grid.fft(values))

    def __call__(self, u: ComplexField) -> ComplexField:
        return ComplexField(u.grid, self.apply_array(u.values))


def free_propagate(u: ComplexField, t: float) -> ComplexField:
    """Apply e^{it Laplacian}, i.e. multiply the transform by exp(-i t |xi|^2)."""
    if not np.isfinite(t):
        raise ValueError(f"time must be finite, got {t}")
    if t == 0:
        return ComplexField(u.grid, u.values.copy())
    return SpectralMultiplier.schrodinger(u.grid, t)(u)


def dealias(u: ComplexField) -> ComplexField:
    """Zero the top third of the spectrum in every direction (2/3 rule)."""
    grid = u.grid
    k = np.abs(np.fft.fftfreq(grid.N, d=1.0 / grid.N))
    keep1 = k < grid.N / 3
    mask = keep1
    for _ in range(grid.d - 1):
        mask = np.multiply.outer(mask, keep1)
    return ComplexField(grid, grid.ifft(grid.fft(u.values) * mask))


def gaussian(grid: SpatialGrid, width: float = 1.0, amplitude: float = 1.0,
             center: Iterable[float] | None = None) -> ComplexField:
    r2 = grid.r2
    if center is not None:
        r2 = sum((c - c0) ** 2 for c, c0 in zip(grid.coords, center))
    return ComplexField(grid, amplitude * np.exp(-r2 / (2 * width**2)) + 0j)


def normalized(u: ComplexField, l2: float) -> ComplexField:
    n = lp_norm(u, 2)
    if n == 0:
        raise ValueError("cannot normalise the zero field")
    return u * (l2 / n)


def boundary_mass_fraction(u: ComplexField) -> float:
    """Share of the mass sitting outside the ball |x| <= L/4."""
    total = np.sum(np.abs(u.values) ** 2)
    if total == 0:
        return 0.0
    outside = u.grid.r2 > (u.grid.L / 4) ** 2
    return float(np.sum(np.abs(u.values[outside]) ** 2) / total)


@dataclass
class DecayProfile:
    times: np.ndarray
    sup_norms: np.ndarray
    scaled: np.ndarray = field(init=False)
    d: int = 1

    def __post_init__(self):
        self.scaled = self.times ** (self.d / 2) * self.sup_norms

    def fitted_exponent(self) -> float:
        """Least-squares slope of -log(sup-norm) against log(t)."""
        slope = np.polyfit(np.log(self.times), np.log(self.sup_norms), 1)[0]
        return float(-slope)

    def rows(self):
        return list(zip(self.times.tolist(), self.sup_norms.tolist()))


def dispersive_decay_profile(u0: ComplexField, times) -> DecayProfile:
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be positive and strictly increasing")
    xi_hat = u0.grid.fft(u0.values)
    sups = np.empty(times.size)
    for i, t in enumerate(times):
        sups[i] = np.abs(u0.grid.ifft(np.exp(-1j * t * u0.grid.xi2) * xi_hat)).max()
    return DecayProfile(times, sups, d=u0.grid.d)


# binary field record: <u32 d, u32 N, f64 L> then N^d little-endian (re, im) f64 pairs
_FIELD_HEADER = struct.Struct("<IId")


def field_to_bytes(u: ComplexField) -> bytes:
    g = u.grid
    header = _FIELD_HEADER.pack(g.d, g.N, g.L)
    return header + np.ascontiguousarray(u.values, dtype="<c16").tobytes()


def field_record_size(grid: SpatialGrid) -> int:
    return _FIELD_HEADER.size + 16 * grid.size


def field_from_bytes(buf: bytes, offset: int = 0, source: str = "<bytes>") -> tuple[ComplexField, int]:
    """Decode one field record starting at ``offset``; return it and the next offset."""
    if len(buf) - offset < _FIELD_HEADER.size:
        raise FieldFormatError(f"{source}: truncated field header at byte {offset}")
    d, N, L = _FIELD_HEADER.unpack_from(buf, offset)
    try:
        grid = SpatialGrid(d, L, N)
    except GridError as exc:
        raise FieldFormatError(f"{source}: bad field header at byte {offset}: {exc}") from None
    start = offset + _FIELD_HEADER.size
    end = start + 16 * grid.size
    if end > len(buf):
        raise FieldFormatError(
            f"{source}: field at byte {offset} needs {16 * grid.size} data bytes, "
            f"only {len(buf) - start} present")
    values = np.frombuffer(buf, dtype="<c16", count=grid.size, offset=start)
    return ComplexField(grid, values.astype(np.complex128).reshape(grid.shape)), end
