"""Independent reference computations used only by the tests.

They deliberately avoid the package's own integrators and closed forms:
brute-force fixed-step RK4, refined composite quadrature, arbitrary precision.
"""
import numpy as np
import mpmath as mp
from numba import njit


@njit(cache=True)
def _pair_rhs(t, up, um, x2, a2, s):
    c = s * 1j * a2 / t * np.exp(-2j * s * a2 * np.log(t))
    return -1j * x2 * up + c * np.conj(um), -1j * x2 * um + c * np.conj(up)


@njit(cache=True)
def rk4_pair(xi, up, um, t0, t1, a, s, dt):
    """Fixed-step classical RK4 on the raw pair equation."""
    n = int(np.ceil(abs(t1 - t0) / dt))
    h = (t1 - t0) / n
    x2, a2 = xi * xi, a * a
    t = t0
    for _ in range(n):
        k1p, k1m = _pair_rhs(t, up, um, x2, a2, s)
        k2p, k2m = _pair_rhs(t + h / 2, up + h / 2 * k1p, um + h / 2 * k1m, x2, a2, s)
        k3p, k3m = _pair_rhs(t + h / 2, up + h / 2 * k2p, um + h / 2 * k2m, x2, a2, s)
        k4p, k4m = _pair_rhs(t + h, up + h * k3p, um + h * k3m, x2, a2, s)
        up = up + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        um = um + h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
        t = t0 + (_ + 1) * h
    return up, um


@njit(cache=True)
def rk4_pair_history(xi, up, um, t0, times, a, s, dt):
    """RK4 from t0 recording at each of the increasing ``times``."""
    out_p = np.empty(len(times), np.complex128)
    out_m = np.empty(len(times), np.complex128)
    t = t0
    for i in range(len(times)):
        up, um = rk4_pair(xi, up, um, t, times[i], a, s, dt)
        t = times[i]
        out_p[i] = up
        out_m[i] = um
    return out_p, out_m


def phase_tail_mp(s, a, sigma=1, dps=30):
    """Tail integral of the ring phase in arbitrary precision (cancellation-free integrand)."""
    with mp.workdps(dps):
        k2 = sigma * mp.mpf(a) ** 2

        def f(x):
            k = k2 / x
            return -k * k / (mp.sqrt(1 - 2 * k) + 1 - k)

        s = mp.mpf(s)
        return float(mp.quad(f, [s, 10 * s, 1000 * s, mp.inf]))


def composite_gauss(f, a, b, panels, order=8):
    """Fixed-panel Gauss-Legendre rule, vectorized f."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        m, r = (hi + lo) / 2, (hi - lo) / 2
        total = total + r * np.sum(w * f(m + r * x))
    return total
