"""Grids, complex fields on periodic boxes, and the weighted norms.

Conventions
-----------
The box is ``[-L, L)`` sampled at ``x_j = -L + j*dx``.  Fourier coefficients are
stored with the unitary DFT (``norm="ortho"``), so the discrete Parseval identity
holds without factors.  Where a quantity is compared against the transform on the
line, ``SpectralField.hat()`` returns the Riemann-sum approximation of
``f_hat(xi) = int f(x) exp(-i x xi) dx``, which differs from the unitary
coefficients by ``(-1)**k * 2L/sqrt(n)``.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AliasingError, ConfigurationError

FOCUSING = "focusing"
DEFOCUSING = "defocusing"


@dataclass(frozen=True)
class Params:
    """Physical parameters of the problem.

    ``sign`` selects the upper (focusing) or lower (defocusing) sign in the
    equations; ``sigma`` is the corresponding +1/-1.
    """

    a: float
    gamma: float = 0.0
    delta: float = 0.1
    sign: str = FOCUSING
    t0: float = 1.0
    t_max: float = 1.0e4

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigurationError(f"a must be positive, got {self.a}")
        if not 0 <= self.gamma < 0.25:
            raise ConfigurationError(f"gamma must lie in [0, 1/4), got {self.gamma}")
        if not (self.delta > 0 and self.gamma + self.delta < 0.25):
            raise ConfigurationError(
                f"need delta > 0 and gamma + delta < 1/4, got gamma={self.gamma}, delta={self.delta}"
            )
        if self.sign not in (FOCUSING, DEFOCUSING):
            raise ConfigurationError(f"sign must be 'focusing' or 'defocusing', got {self.sign!r}")
        if not 1 <= self.t0 < self.t_max:
            raise ConfigurationError(f"need 1 <= t0 < t_max, got t0={self.t0}, t_max={self.t_max}")

    @property
    def sigma(self) -> int:
        return 1 if self.sign == FOCUSING else -1

    def replace(self, **changes) -> "Params":
        d = dict(a=self.a, gamma=self.gamma, delta=self.delta, sign=self.sign, t0=self.t0, t_max=self.t_max)
        d.update(changes)
        return Params(**d)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)`` with ``n`` points."""

    half_length: float
    n: int

    def __post_init__(self):
        if not self.half_length > 0:
            raise ConfigurationError(f"half_length must be positive, got {self.half_length}")
        if int(self.n) != self.n or not _is_power_of_two(int(self.n)):
            raise ConfigurationError(f"n must be a power of two, got {self.n}")

    @property
    def L(self) -> float:
        return self.half_length

    @property
    def dx(self) -> float:
        return 2.0 * self.half_length / self.n

    @property
    def x(self) -> np.ndarray:
        return -self.half_length + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        """Integer wavenumbers in FFT order, ``-n/2 <= k < n/2``."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.int64)

    @property
    def xi(self) -> np.ndarray:
        return np.pi * self.k / self.half_length

    @property
    def dxi(self) -> float:
        return np.pi / self.half_length

    @property
    def xi_nyquist(self) -> float:
        return np.pi * (self.n // 2) / self.half_length

    @property
    def partner(self) -> np.ndarray:
        """Index of ``-xi`` for each index (the Nyquist mode is its own partner)."""
        return (-np.arange(self.n)) % self.n

    def low_mask(self, cutoff: float = 1.0) -> np.ndarray:
        """Boolean mask of frequencies with ``xi**2 <= cutoff`` (ties included)."""
        return self.xi ** 2 <= cutoff

    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: keep ``|k| <= n/3``."""
        return np.abs(self.k) <= self.n // 3

    def hat_factor(self) -> np.ndarray:
        """Multiplier taking unitary coefficients to the continuous transform."""
        sign = np.where(self.k % 2 == 0, 1.0, -1.0)
        return sign * (2.0 * self.half_length / np.sqrt(self.n))

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.half_length, self.n * factor)


PHYSICAL = "physical"
FOURIER = "fourier"


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A complex field on a ``Grid`` stored in one of two representations."""

    grid: Grid
    values: np.ndarray
    rep: str = PHYSICAL

    def __post_init__(self):
        if self.rep not in (PHYSICAL, FOURIER):
            raise ConfigurationError(f"unknown representation {self.rep!r}")
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.grid.n,):
            raise ConfigurationError(f"expected {self.grid.n} samples, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # constructors -----------------------------------------------------------
    @classmethod
    def from_physical(cls, grid: Grid, values) -> "SpectralField":
        return cls(grid, np.array(values, dtype=complex), PHYSICAL)

    @classmethod
    def from_coeffs(cls, grid: Grid, coeffs) -> "SpectralField":
        return cls(grid, np.array(coeffs, dtype=complex), FOURIER)

    @classmethod
    def from_hat(cls, grid: Grid, hat) -> "SpectralField":
        """Build from samples of the continuous transform at ``grid.xi``."""
        return cls(grid, np.asarray(hat, dtype=complex) / grid.hat_factor(), FOURIER)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.n, dtype=complex), PHYSICAL)

    # views ------------------------------------------------------------------
    def physical(self) -> np.ndarray:
        if self.rep == PHYSICAL:
            return self.values
        return np.fft.ifft(self.values, norm="ortho")

    def coeffs(self) -> np.ndarray:
        if self.rep == FOURIER:
            return self.values
        return np.fft.fft(self.values, norm="ortho")

    def hat(self) -> np.ndarray:
        return self.coeffs() * self.grid.hat_factor()

    def l2(self) -> float:
        return l2_norm(self)

    def linf(self) -> float:
        return float(np.max(np.abs(self.physical()))) if self.grid.n else 0.0

    # arithmetic (in physical space unless both are spectral) -----------------
    def _combine(self, other, op):
        if isinstance(other, SpectralField):
            if other.grid != self.grid:
                raise ConfigurationError("fields live on different grids")
            if self.rep == other.rep == FOURIER:
                return SpectralField(self.grid, op(self.values, other.values), FOURIER)
            return SpectralField(self.grid, op(self.physical(), other.physical()), PHYSICAL)
        return SpectralField(self.grid, op(self.values, other), self.rep)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            raise TypeError("pointwise products must go through .physical()")
        return SpectralField(self.grid, self.values * scalar, self.rep)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.values, self.rep)

    def conj(self) -> "SpectralField":
        return SpectralField(self.grid, np.conj(self.physical()), PHYSICAL)


def to_fourier(f: SpectralField) -> SpectralField:
    if f.rep != PHYSICAL:
        raise ConfigurationError("to_fourier expects a field in physical representation")
    if not _is_power_of_two(len(f.values)):
        raise ConfigurationError("length must be a power of two")
    return SpectralField(f.grid, np.fft.fft(f.values, norm="ortho"), FOURIER)


def from_fourier(f: SpectralField) -> SpectralField:
    if f.rep != FOURIER:
        raise ConfigurationError("from_fourier expects a field in Fourier representation")
    if not _is_power_of_two(len(f.values)):
        raise ConfigurationError("length must be a power of two")
    return SpectralField(f.grid, np.fft.ifft(f.values, norm="ortho"), PHYSICAL)


def spectral_derivative(f: SpectralField, order: int = 1) -> SpectralField:
    c = f.coeffs() * (1j * f.grid.xi) ** order
    if order % 2 == 1:
        c[f.grid.k == -(f.grid.n // 2)] = 0.0
    return SpectralField(f.grid, c, FOURIER)


def l2_norm(f: SpectralField) -> float:
    """L2 norm on the box; computed from whichever representation is stored."""
    return float(np.sqrt(f.grid.dx * np.sum(np.abs(f.values) ** 2)))


def _low_sup(f: SpectralField, gamma: float) -> float:
    mask = f.grid.low_mask()
    if not mask.any():
        raise ConfigurationError("no grid frequency satisfies xi^2 <= 1")
    xi = np.abs(f.grid.xi[mask])
    return float(np.max(np.power(xi, 2.0 * gamma) * np.abs(f.hat()[mask])))


def norm_X(f: SpectralField, t0: float, gamma: float) -> float:
    """Weighted L2 plus low-frequency sup norm of a single field."""
    if t0 < 1:
        raise ConfigurationError("t0 must be >= 1")
    return t0 ** -0.25 * l2_norm(f) + t0 ** (gamma - 0.5) * _low_sup(f, gamma)


def norm_Y_sample(snapshots: Sequence[tuple[float, SpectralField]], t0: float, gamma: float, a: float) -> float:
    """Sampled version of the space-time norm: supremum over the given (t, field) pairs."""
    best = 0.0
    for t, g in snapshots:
        if t < t0:
            raise ConfigurationError(f"snapshot time {t} precedes t0={t0}")
        val = t0 ** -0.25 * l2_norm(g) + (t0 / t) ** (a * a) * t0 ** (gamma - 0.5) * _low_sup(g, gamma)
        best = max(best, val)
    return best


def norm_L4Linf(snapshots: Sequence, times: Sequence[float]) -> float:
    """(int ||g(t)||_inf^4 dt)^(1/4) by the trapezoid rule over the sampled window."""
    times = np.asarray(times, dtype=float)
    if len(times) < 2 or len(snapshots) != len(times):
        raise ConfigurationError("need at least two snapshots with matching times")
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("times must be strictly increasing")
    sup = np.array([
        s.linf() if isinstance(s, SpectralField) else float(np.max(np.abs(s))) for s in snapshots
    ])
    return float(np.trapezoid(sup ** 4, times) ** 0.25)


def nyquist_fraction(f: SpectralField, fraction: float = 0.9) -> float:
    """Share of spectral mass with ``|xi| > fraction * xi_nyquist``."""
    c2 = np.abs(f.coeffs()) ** 2
    total = c2.sum()
    if total == 0:
        return 0.0
    hi = np.abs(f.grid.xi) > fraction * f.grid.xi_nyquist
    return float(c2[hi].sum() / total)


def check_nyquist(f: SpectralField, limit: float = 1e-6, fraction: float = 0.9) -> None:
    frac = nyquist_fraction(f, fraction)
    if frac > limit:
        raise AliasingError(f"{frac:.3e} of the spectral mass lies above {fraction} x Nyquist (limit {limit:g})")


# serialization ---------------------------------------------------------------

def field_to_csv(f: SpectralField, rep: str | None = None) -> str:
    """CSV with columns ``index, x, re, im`` (physical) or ``index, xi, re, im`` (Fourier)."""
    rep = rep or f.rep
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if rep == PHYSICAL:
        w.writerow(["index", "x", "re", "im"])
        coords, vals = f.grid.x, f.physical()
    else:
        w.writerow(["index", "xi", "re", "im"])
        coords, vals = f.grid.xi, f.coeffs()
    # Fourier rows need L explicitly since xi alone does not fix the box offset.
    for j, (c, v) in enumerate(zip(coords, vals)):
        w.writerow([j, repr(float(c)), repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()


def field_from_csv(text: str, half_length: float | None = None) -> SpectralField:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    n = len(body)
    coords = np.array([float(r[1]) for r in body])
    vals = np.array([float(r[2]) + 1j * float(r[3]) for r in body])
    if header[1] == "x":
        grid = Grid(-coords[0], n)
        return SpectralField(grid, vals, PHYSICAL)
    if header[1] == "xi":
        L = half_length if half_length is not None else np.pi / coords[1]
        return SpectralField(Grid(L, n), vals, FOURIER)
    raise ConfigurationError(f"unrecognized header {header}")


_BIN_MAGIC = b"NLSF"


def field_to_bytes(f: SpectralField) -> bytes:
    """Little-endian binary: magic, n (int64), L (float64), rep flag (int64), then re/im pairs."""
    flag = 0 if f.rep == PHYSICAL else 1
    head = _BIN_MAGIC + struct.pack("<qdq", f.grid.n, f.grid.half_length, flag)
    body = np.empty(2 * f.grid.n, dtype="<f8")
    body[0::2] = f.values.real
    body[1::2] = f.values.imag
    return head + body.tobytes()


def field_from_bytes(data: bytes) -> SpectralField:
    if data[:4] != _BIN_MAGIC:
        raise ConfigurationError("not a serialized field")
    n, L, flag = struct.unpack("<qdq", data[4:28])
    body = np.frombuffer(data[28:], dtype="<f8")
    vals = body[0::2] + 1j * body[1::2]
    return SpectralField(Grid(L, n), vals, PHYSICAL if flag == 0 else FOURIER)
