"""Filament function, pseudo-conformal map and the self-similar profile.

    psi = c exp(i int_0^x tau)                          (filament function)
    (T v)(t, x) = exp(i x^2/4t)/sqrt(t) conj(v)(1/t, x/t)  (an L2 isometry, T T = id)
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import czt

from .core import PHYSICAL, Grid, Params, SpectralField, spectral_derivative
from .errors import ConfigurationError, DomainError


@dataclass(frozen=True, eq=False)
class CurvatureTorsion:
    """Curvature and torsion sampled on a grid in arclength; tau is nan where undefined."""
    grid: Grid
    c: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, float)
        tau = np.asarray(self.tau, float)
        if c.shape != (self.grid.n,) or tau.shape != (self.grid.n,):
            raise ConfigurationError("c and tau must match the grid")
        if np.any(c < 0):
            raise ConfigurationError("curvature must be nonnegative")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "tau", tau)

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.tau)


def psi_a(t, x, a):
    """Filament function of the self-similar solution: a exp(i x^2/4t)/sqrt(t)."""
    x = np.asarray(x, float)
    return a * np.exp(1j * x * x / (4 * t)) / np.sqrt(t)


def selfsimilar_ct(grid: Grid, t: float, a: float) -> CurvatureTorsion:
    return CurvatureTorsion(grid, np.full(grid.n, a / np.sqrt(t)), grid.x / (2 * t))


def _zero_index(grid: Grid) -> int:
    return int(np.argmin(np.abs(grid.x)))


def hasimoto(ct: CurvatureTorsion) -> SpectralField:
    g = ct.grid
    j0 = _zero_index(g)
    tau = np.where(np.isfinite(ct.tau), ct.tau, 0.0)
    # cumulative trapezoid outward from the node nearest x = 0
    right = cumulative_trapezoid(tau[j0:], g.x[j0:], initial=0.0)
    left = -cumulative_trapezoid(tau[:j0 + 1][::-1], -g.x[:j0 + 1][::-1], initial=0.0)[::-1]
    phase = np.concatenate([left[:-1], right])
    return SpectralField(g, ct.c * np.exp(1j * phase), PHYSICAL)


def _fd_derivative(f, dx):
    # sixth-order central differences, lower order at the two ends
    d = np.gradient(f, dx, edge_order=2)
    w = (-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60)
    inner = sum(wk * f[k:len(f) - 6 + k] for k, wk in enumerate(w) if wk) / dx
    d[3:-3] = inner
    return d


def inverse_hasimoto(psi: SpectralField, threshold: float = 1e-8, derivative: str = "spectral") -> CurvatureTorsion:
    """c = |psi|, tau = Im(psi_x / psi); tau is nan where |psi| < threshold.

    ``derivative="fd"`` uses finite differences, for fields that are not periodic on the box
    (chirps such as psi_a).
    """
    p = psi.physical()
    if derivative == "spectral":
        px = spectral_derivative(psi).physical()
    elif derivative == "fd":
        px = _fd_derivative(p, psi.grid.dx)
    else:
        raise ConfigurationError(f"unknown derivative {derivative!r}")
    c = np.abs(p)
    ok = c >= threshold
    tau = np.full(psi.grid.n, np.nan)
    tau[ok] = np.imag(px[ok] / p[ok])
    return CurvatureTorsion(psi.grid, c, tau)


# ---------------------------------------------------------------------------
# band-limited evaluation and the pseudo-conformal map

def eval_bandlimited(f: SpectralField, y0: float, h: float, m: int) -> np.ndarray:
    """Trigonometric interpolant of f at y0 + h*j, j < m (chirp-z transform, Nyquist term split)."""
    g = f.grid
    n, L = g.n, g.L
    c = np.fft.fftshift(f.coeffs()).astype(complex)   # index k' = k + n/2, k' = 0 is k = -n/2
    nyq = c[0] / 2
    c[0] = nyq
    yp = y0 + L
    A = np.exp(-1j * np.pi * yp / L)
    W = np.exp(1j * np.pi * h / L)
    s = czt(c, m=m, w=W, a=A)
    y = yp + h * np.arange(m)
    out = np.exp(-1j * np.pi * (n // 2) * y / L) * s + nyq * np.exp(1j * np.pi * (n // 2) * y / L)
    return out / np.sqrt(n)


def pseudo_conformal(v: SpectralField, t: float, out_grid: Grid | None = None) -> SpectralField:
    """psi(t, x) = exp(i x^2/4t)/sqrt(t) conj(v)(1/t, x/t), v given at time 1/t.

    Default target grid: half-length t L, so the samples x/t land on the input nodes.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    g = v.grid
    if out_grid is None:
        out_grid = Grid(g.half_length * t, g.n)
    x = out_grid.x
    y0, h = x[0] / t, out_grid.dx / t
    ymax = x[-1] / t
    if y0 < -g.L * (1 + 1e-12) or ymax > g.L * (1 + 1e-12):
        raise DomainError(f"resampled points x/t reach {max(-y0, ymax):.4g}, outside the box of half-length {g.L:.4g}")
    vals = eval_bandlimited(v, y0, h, out_grid.n)
    return SpectralField(out_grid, np.exp(1j * x * x / (4 * t)) / np.sqrt(t) * np.conj(vals), PHYSICAL)


def pseudo_conformal_inverse(psi: SpectralField, t: float, out_grid: Grid | None = None) -> SpectralField:
    """v(1/t, .) from psi(t, .): the map is an involution with t -> 1/t."""
    return pseudo_conformal(psi, 1.0 / t, out_grid)


def assemble_psi(u_field: SpectralField, t: float, params: Params, out_grid: Grid | None = None,
                 small_data: bool = False) -> SpectralField:
    """psi_a(t) + exp(i sigma a^2 ln t) T u(t), with u given at time 1/t."""
    if not 0 < t <= 1:
        raise DomainError("assemble_psi works for t in (0, 1]")
    pert = pseudo_conformal(u_field, t, out_grid)
    g = pert.grid
    psi = psi_a(t, g.x, params.a) + np.exp(1j * params.sigma * params.a ** 2 * np.log(t)) * pert.physical()
    out = SpectralField(g, psi, PHYSICAL)
    if small_data:
        lo, hi = amplitude_window(out, t, params.a)
        if lo < 0.5 or hi > 1.5:
            warnings.warn(f"|psi| sqrt(t)/a spans [{lo:.3f}, {hi:.3f}], outside [1/2, 3/2]: data not small enough",
                          RuntimeWarning, stacklevel=2)
    return out


def amplitude_window(psi: SpectralField, t: float, a: float):
    """(min, max) of |psi| sqrt(t)/a; small data keeps both inside [1/2, 3/2]."""
    r = np.abs(psi.physical()) * np.sqrt(t) / a
    return float(r.min()), float(r.max())


def assemble_psi_derivatives(u_field: SpectralField, t: float, params: Params, out_grid: Grid):
    """psi, psi_x, psi_xx on out_grid from u at time 1/t, with the x-derivatives taken exactly.

    psi = exp(i x^2/4t) t^{-1/2} (a + U),  U(x) = exp(i sigma a^2 ln t) conj(u)(1/t, x/t).
    """
    if not 0 < t <= 1:
        raise DomainError("t must lie in (0, 1]")
    g = u_field.grid
    x = out_grid.x
    y0, h = x[0] / t, out_grid.dx / t
    if y0 < -g.L * (1 + 1e-12) or x[-1] / t > g.L * (1 + 1e-12):
        raise DomainError(f"resampled points x/t reach {abs(y0):.4g}, outside the box of half-length {g.L:.4g}")
    ph = np.exp(1j * params.sigma * params.a ** 2 * np.log(t))
    U = ph * np.conj(eval_bandlimited(u_field, y0, h, out_grid.n))
    Ux = ph * np.conj(eval_bandlimited(spectral_derivative(u_field), y0, h, out_grid.n)) / t
    Uxx = ph * np.conj(eval_bandlimited(spectral_derivative(u_field, 2), y0, h, out_grid.n)) / t ** 2
    chirp = np.exp(1j * x * x / (4 * t)) / np.sqrt(t)
    k = 0.5j * x / t
    base = params.a + U
    psi = chirp * base
    psi_x = chirp * (k * base + Ux)
    psi_xx = chirp * ((0.5j / t + k * k) * base + 2 * k * Ux + Uxx)
    return psi, psi_x, psi_xx
