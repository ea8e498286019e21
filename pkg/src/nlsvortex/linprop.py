"""Linear propagator on whole fields, the Duhamel integral and linear scattering.

Fields are advanced pair by pair with the shared ``ModePropagator`` of
``modes``; the zero mode follows its closed-form law.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import modes
from .core import FOURIER, Grid, Params, SpectralField, l2_norm, norm_L4Linf, norm_X
from .errors import ConfigurationError, DomainError, InconsistencyError


def _pairs(grid: Grid):
    """Index arrays (pos, neg) covering every nonzero mode once; Nyquist pairs with itself."""
    n = grid.n
    pos = np.arange(1, n // 2 + 1)
    neg = (n - pos) % n
    return pos, neg


def propagate(f: SpectralField, t0: float, t1: float, params: Params, tol: float = 1e-10,
              propagator: modes.ModePropagator | None = None) -> SpectralField:
    """Solution of the linear equation at t1 given f at t0 (either direction)."""
    if t0 <= 0 or t1 <= 0:
        raise DomainError("times must be positive")
    if tol < 1e-12:
        raise ConfigurationError("the shared mode propagator is built for tol >= 1e-12")
    a, sg = params.a, params.sigma
    grid = f.grid
    c = f.coeffs()
    out = np.empty_like(c)
    prop = propagator or modes.get_propagator(a, sg)
    pos, neg = _pairs(grid)
    xi = np.abs(grid.xi[pos])
    Y, Z = modes.pair_to_YZ(c[pos], c[neg], t0, a, sg)
    Y1, Z1 = prop.propagate(Y, Z, xi * xi * t0, xi * xi * t1)
    up, um = modes.YZ_to_pair(Y1, Z1, t1, a, sg)
    out[neg] = um
    out[pos] = up  # Nyquist: both entries coincide up to rounding, keep the +xi one
    out[0] = modes.zero_mode_u(c[0], t0, t1, a, sg) if t1 >= t0 else _zero_mode_back(c[0], t0, t1, a, sg)
    return SpectralField(grid, out, FOURIER)


def _zero_mode_back(c0, t0, t1, a, sg):
    # the zero-mode law is linear in (Re w, Im w) and invertible: solve for w(t1)
    w0 = c0 * np.exp(1j * sg * a * a * np.log(t0))
    y = w0.real
    z = w0.imag - sg * 2 * a * a * y * np.log(t0 / t1)
    return complex((y + 1j * z) * np.exp(-1j * sg * a * a * np.log(t1)))


def free_propagate(f: SpectralField, t0: float, t1: float) -> SpectralField:
    xi = f.grid.xi
    return SpectralField(f.grid, f.coeffs() * np.exp(-1j * (t1 - t0) * xi * xi), FOURIER)


def free_from_asymptotic(u_plus: SpectralField, t: float) -> SpectralField:
    """exp(-i t xi^2) u_+ : the free evolution started at time 0."""
    return free_propagate(u_plus, 0.0, t)


# ---------------------------------------------------------------------------

def probe_indices(grid: Grid, kmax: int = 40):
    """Grid indices nearest to xi = 2^-k (k >= 0, distinct) plus the zero mode."""
    out = [0]
    xi = grid.xi
    for k in range(kmax):
        target = 2.0 ** -k
        if target < grid.dxi / 2:
            break
        j = int(np.argmin(np.abs(xi - target) + (xi < 0) * 1e300))
        if j not in out:
            out.append(j)
    return np.array(out)


@dataclass
class LinearRun:
    params: Params
    initial: SpectralField
    t0: float
    times: np.ndarray
    snapshots: list
    probes: modes.ModeHistory | None = None
    zero_mode_growth: bool = False

    def snapshot_pairs(self):
        return list(zip(self.times, self.snapshots))


def linear_run(f: SpectralField, params: Params, times, probes=True) -> LinearRun:
    """Snapshots of the linear solution from f at times[0]."""
    times = np.asarray(times, float)
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("snapshot times must increase")
    t0 = float(times[0])
    snaps = [f]
    for t in times[1:]:
        snaps.append(propagate(f, t0, t, params))
    hist = None
    if probes:
        g = f.grid
        idx = probe_indices(g)
        c = f.coeffs()
        hist = modes.mode_history(np.abs(g.xi[idx]), c[idx], c[g.partner[idx]], times, params)
    w0 = f.coeffs()[0] * np.exp(1j * params.sigma * params.a ** 2 * np.log(t0))
    return LinearRun(params, f, t0, times, snaps, hist, bool(abs(w0.real) > 1e-12))


# ---------------------------------------------------------------------------
# Duhamel integral

def _gauss(order=8):
    return np.polynomial.legendre.leggauss(order)


def duhamel_A(t1: float, t2: float, xi: float, mode_history, params: Params, quad_tol: float = 1e-10) -> complex:
    """a^2 int_{t1}^{t2} exp(-i (t2 - tau) xi^2) conj(u(tau, -xi)) tau^-1 exp(-2 i sigma a^2 ln tau) dtau.

    ``mode_history`` is a vectorized callable tau -> u(tau, -xi) or a ModePair
    (any time) from which the pair is propagated.  Panels are no wider than
    pi/(4 xi^2) and are bisected until an 8-point and two 8-point Gauss rules
    agree to quad_tol (scaled by the panel share of the interval).
    """
    if xi == 0:
        raise DomainError("the Duhamel integral is taken for xi != 0")
    if t2 < t1:
        raise DomainError("need t1 <= t2")
    if t1 == t2:
        return 0j
    a, sg = params.a, params.sigma
    um = _history_callable(mode_history, xi, params)
    x2 = xi * xi

    def integrand(tau):
        return a * a * np.exp(-1j * (t2 - tau) * x2) * np.conj(um(tau)) / tau * np.exp(-2j * sg * a * a * np.log(tau))

    x, w = _gauss()
    width = min(np.pi / (4 * x2), t2 - t1)
    npan = int(np.ceil((t2 - t1) / width))
    edges = np.linspace(t1, t2, npan + 1)
    lo, hi = edges[:-1], edges[1:]
    total = 0j
    span = t2 - t1
    for _ in range(30):
        mid = (lo + hi) / 2
        r = (hi - lo) / 2
        nodes = mid[:, None] + r[:, None] * x
        whole = r * (integrand(nodes.ravel()).reshape(nodes.shape) @ w)
        q = r / 2
        left = (mid - q)[:, None] + q[:, None] * x
        right = (mid + q)[:, None] + q[:, None] * x
        halves = q * (integrand(left.ravel()).reshape(left.shape) @ w + integrand(right.ravel()).reshape(right.shape) @ w)
        bad = np.abs(halves - whole) > quad_tol * (hi - lo) / span
        total += halves[~bad].sum()
        if not bad.any():
            return complex(total)
        lo, hi = np.concatenate([lo[bad], mid[bad]]), np.concatenate([mid[bad], hi[bad]])
    raise InconsistencyError("Duhamel quadrature did not settle")


def _history_callable(h, xi, params):
    if callable(h):
        return h
    if isinstance(h, modes.ModePair):
        a, sg = params.a, params.sigma
        prop = modes.get_propagator(a, sg)
        Y0, Z0 = modes.pair_to_YZ(h.u_plus, h.u_minus, h.t, a, sg)
        x2 = h.xi ** 2

        def um(tau):
            tau = np.asarray(tau, float)
            Y, Z = prop.propagate(Y0, Z0, x2 * h.t, x2 * tau)
            return modes.YZ_to_pair(Y, Z, tau, a, sg)[1]

        return um
    raise ConfigurationError("mode_history must be a callable or a ModePair")


# ---------------------------------------------------------------------------
# scattering

@dataclass
class ScatterState:
    u_plus: SpectralField
    direct: SpectralField          # exp(i T xi^2) u(T) at T_limit
    T_limit: float
    zero_mode_growth: bool
    consistency_ratio: float       # worst |ring - direct| over the envelope, relative to the fitted constant
    envelope_C: float


def asymptotic_state(f: SpectralField, t0: float, params: Params) -> SpectralField:
    """u_+ with u_hat(t) ~ exp(-i t xi^2) u_+ for every nonzero mode; the zero mode is left at f's value."""
    a, sg = params.a, params.sigma
    grid = f.grid
    c = f.coeffs()
    prop = modes.get_propagator(a, sg)
    pos, neg = _pairs(grid)
    xi = np.abs(grid.xi[pos])
    Y, Z = modes.pair_to_YZ(c[pos], c[neg], t0, a, sg)
    Yp, Zp = prop.ring_limit(Y, Z, xi * xi * t0)
    up, um = modes.u_plus_from_ring(Zp, Yp, xi, a, sg)
    out = np.empty_like(c)
    out[neg] = um
    out[pos] = up
    out[0] = c[0]
    return SpectralField(grid, out, FOURIER)


def from_asymptotic_state(u_plus: SpectralField, t: float, params: Params) -> SpectralField:
    """Inverse of ``asymptotic_state``: the linear solution at time t with the given u_+."""
    a, sg = params.a, params.sigma
    grid = u_plus.grid
    c = u_plus.coeffs()
    prop = modes.get_propagator(a, sg)
    pos, neg = _pairs(grid)
    xi = np.abs(grid.xi[pos])
    Yp, Zp = modes.ring_from_u_plus(c[pos], c[neg], xi, a, sg)
    Y, Z = prop.from_ring_limit(Yp, Zp, xi * xi * t)
    up, um = modes.YZ_to_pair(Y, Z, t, a, sg)
    out = np.empty_like(c)
    out[neg] = um
    out[pos] = up
    out[0] = c[0]
    return SpectralField(grid, out, FOURIER)


def scattering_details(run: LinearRun, T_limit: float, delta: float | None = None) -> ScatterState:
    p = run.params
    delta = p.delta if delta is None else delta
    up = asymptotic_state(run.initial, run.t0, p)
    uT = propagate(run.initial, run.t0, T_limit, p)
    direct = free_propagate(uT, T_limit, 0.0)
    g = run.initial.grid
    pos, neg = _pairs(g)
    c0 = run.initial.coeffs()
    base = np.abs(c0[pos]) + np.abs(c0[neg])
    x2 = g.xi[pos] ** 2
    diff = np.maximum(np.abs(up.coeffs()[pos] - direct.coeffs()[pos]), np.abs(up.coeffs()[neg] - direct.coeffs()[neg]))
    env = base * (1.0 + (x2 * run.t0) ** -delta) / (x2 * T_limit)
    sel = (x2 * T_limit >= 4 * p.a ** 2) & (base > 1e-8 * max(base.max(), 1e-300))
    ratio, C = 0.0, 0.0
    if sel.any():
        r = diff[sel] / env[sel]
        # fit the constant where the envelope is uniform (xi^2 t0 >= 1), check everywhere
        ref = (x2[sel] * run.t0 >= 1)
        C = float(r[ref].max() if ref.any() else r.max())
        ratio = float(r.max() / C) if C > 0 else 0.0
        big = diff[sel] > 1e-9 * base.max()
        if C > 0 and np.any((r > 10 * C) & big):
            raise InconsistencyError(f"ring asymptotics and direct pullback disagree (ratio {ratio:.3g})")
    return ScatterState(up, direct, T_limit, run.zero_mode_growth, ratio, C)


def scattering_state(run: LinearRun, T_limit: float) -> SpectralField:
    return scattering_details(run, T_limit).u_plus


def residual_norm(u: SpectralField, u_plus: SpectralField, t: float, skip_zero: bool = True) -> float:
    """L2 distance between u(t) and the free evolution of u_+, zero mode excluded by default."""
    d = u.coeffs() - free_from_asymptotic(u_plus, t).coeffs()
    if skip_zero:
        d = d.copy()
        d[0] = 0
    return float(np.sqrt(u.grid.dx * np.sum(np.abs(d) ** 2)))


def residual_series(run: LinearRun, u_plus: SpectralField, skip_zero: bool = True):
    return np.array([residual_norm(s, u_plus, t, skip_zero) for t, s in zip(run.times, run.snapshots)])


def rate_fit(samples, window=None):
    """Least squares of ln(value) on ln(t); returns (decay exponent, intercept, r^2).

    ``samples`` is a sequence of (t, value) pairs or a 2-row array.  ``window``
    restricts to t in [lo, hi].
    """
    arr = np.asarray(samples, float)
    if arr.ndim == 2 and arr.shape[1] == 2 and arr.shape[0] != 2:
        t, v = arr[:, 0], arr[:, 1]
    elif arr.ndim == 2 and arr.shape[0] == 2:
        t, v = arr
    else:
        t, v = arr[:, 0], arr[:, 1]
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, v = t[m], v[m]
    if np.any(v <= 0):
        raise ConfigurationError("rate_fit needs positive values")
    if len(t) < 8 or t.max() / t.min() < 100 * (1 - 1e-9):
        raise ConfigurationError("rate_fit needs at least 8 samples spanning two decades")
    x, y = np.log(t), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - pred) ** 2) / ss if ss > 0 else 1.0
    return float(-slope), float(icpt), float(r2)


def check_u_plus_lowfreq(u_plus: SpectralField, u_t0: SpectralField, params: Params) -> dict:
    """max over 0 < xi^2 <= 1 of |xi|^{2(gamma+delta)} |u_+ hat| / norm_X(u(1))."""
    g = u_plus.grid
    m = g.low_mask() & (g.xi != 0)
    nx = norm_X(u_t0, 1.0, params.gamma)
    w = np.abs(g.xi[m]) ** (2 * (params.gamma + params.delta)) * np.abs(u_plus.hat()[m])
    if nx == 0:
        return {"max_ratio": 0.0, "norm_X": 0.0, "profile": w}
    return {"max_ratio": float(w.max()) / nx if w.size else 0.0, "norm_X": nx,
            "xi": g.xi[m], "profile": w / nx}


def strichartz_diagnostic(run: LinearRun, u_plus: SpectralField | None = None):
    """(L4 Linf of the run, L4 Linf of run minus free evolution of u_+) over the snapshot window."""
    if len(run.times) < 2:
        raise ConfigurationError("need at least two snapshots")
    if u_plus is None:
        u_plus = asymptotic_state(run.initial, run.t0, run.params)
    # the L^inf norm uses the physical samples scaled to the continuous normalization
    val = norm_L4Linf(run.snapshots, run.times)
    diffs = []
    for t, s in zip(run.times, run.snapshots):
        d = s.coeffs() - free_from_asymptotic(u_plus, t).coeffs()
        d[0] = 0
        diffs.append(SpectralField(s.grid, d, FOURIER))
    return val, norm_L4Linf(diffs, run.times)
