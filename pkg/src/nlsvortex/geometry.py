"""Frenet frames, the self-similar curves G_a and curve reconstruction from filament functions.

Frame equations in arclength:  T' = c N,  N' = -c T + tau B,  B' = -tau N,  chi' = T.
Under the binormal flow chi_t = c B the frame at a fixed material point turns with
angular velocity  Omega = (c_xx - c tau^2)/c T - c_x N - c tau B.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .core import Grid, SpectralField
from .errors import ConfigurationError, ConvergenceError, CurvaturePositivityError, IntegrationError
from .transforms import CurvatureTorsion, _fd_derivative, assemble_psi_derivatives

# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _rhs(s, c, tau, out):
    # s: (4, 3) rows T, N, B, chi
    for i in range(3):
        out[0, i] = c * s[1, i]
        out[1, i] = -c * s[0, i] + tau * s[2, i]
        out[2, i] = -tau * s[1, i]
        out[3, i] = s[0, i]


@numba.njit(cache=True)
def _axpy(out, s, h, k):
    for a in range(4):
        for i in range(3):
            out[a, i] = s[a, i] + h * k[a, i]


@numba.njit(cache=True)
def _rk4(s, h, c0, t0, c1, t1, c2, t2, k1, k2, k3, k4, tmp):
    _rhs(s, c0, t0, k1)
    _axpy(tmp, s, 0.5 * h, k1)
    _rhs(tmp, c1, t1, k2)
    _axpy(tmp, s, 0.5 * h, k2)
    _rhs(tmp, c1, t1, k3)
    _axpy(tmp, s, h, k3)
    _rhs(tmp, c2, t2, k4)
    for a in range(4):
        for i in range(3):
            s[a, i] += h / 6.0 * (k1[a, i] + 2.0 * k2[a, i] + 2.0 * k3[a, i] + k4[a, i])


@numba.njit(cache=True)
def _drift(s):
    d = 0.0
    for a in range(3):
        for b in range(3):
            dot = s[a, 0] * s[b, 0] + s[a, 1] * s[b, 1] + s[a, 2] * s[b, 2]
            target = 1.0 if a == b else 0.0
            d = max(d, abs(dot - target))
    return d


@numba.njit(cache=True)
def _gram_schmidt(s):
    n = np.sqrt(s[0, 0] ** 2 + s[0, 1] ** 2 + s[0, 2] ** 2)
    for i in range(3):
        s[0, i] /= n
    d = s[1, 0] * s[0, 0] + s[1, 1] * s[0, 1] + s[1, 2] * s[0, 2]
    for i in range(3):
        s[1, i] -= d * s[0, i]
    n = np.sqrt(s[1, 0] ** 2 + s[1, 1] ** 2 + s[1, 2] ** 2)
    for i in range(3):
        s[1, i] /= n
    s[2, 0] = s[0, 1] * s[1, 2] - s[0, 2] * s[1, 1]
    s[2, 1] = s[0, 2] * s[1, 0] - s[0, 0] * s[1, 2]
    s[2, 2] = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]


@numba.njit(cache=True)
def _frenet_nodes(x, c, tau, j0, init, out, tol):
    """Integrate from node j0 outward in steps of two nodes; the middle node is the RK4 half stage.

    Fills out[j] for j = j0 + 2m inside the grid.  Returns -1 or the index where the
    orthonormality drift before correction exceeded tol.
    """
    n = x.shape[0]
    k1 = np.empty((4, 3))
    k2 = np.empty((4, 3))
    k3 = np.empty((4, 3))
    k4 = np.empty((4, 3))
    tmp = np.empty((4, 3))
    for direction in (1, -1):
        s = init.copy()
        out[j0] = s
        j = j0
        while 0 <= j + 2 * direction < n:
            jm, j2 = j + direction, j + 2 * direction
            h = x[j2] - x[j]
            _rk4(s, h, c[j], tau[j], c[jm], tau[jm], c[j2], tau[j2], k1, k2, k3, k4, tmp)
            if _drift(s[:3]) > tol:
                return j2
            _gram_schmidt(s)
            out[j2] = s
            j = j2
    return -1


@numba.njit(cache=True)
def _frenet_selfsimilar(a, X, h, every, init, xs, out):
    """c = a, tau = x/2 on [0, X] (h > 0) or [-X, 0] (h < 0); stores every ``every`` steps."""
    k1 = np.empty((4, 3))
    k2 = np.empty((4, 3))
    k3 = np.empty((4, 3))
    k4 = np.empty((4, 3))
    tmp = np.empty((4, 3))
    nsteps = int(round(X / abs(h)))
    s = init.copy()
    out[0] = s
    xs[0] = 0.0
    m = 1
    for i in range(nsteps):
        x0 = i * h
        _rk4(s, h, a, 0.5 * x0, a, 0.5 * (x0 + 0.5 * h), a, 0.5 * (x0 + h), k1, k2, k3, k4, tmp)
        _gram_schmidt(s)
        if (i + 1) % every == 0:
            out[m] = s
            xs[m] = (i + 1) * h
            m += 1
    return m


# ---------------------------------------------------------------------------
# data types


@dataclass
class FrameState:
    T: np.ndarray
    N: np.ndarray
    B: np.ndarray
    chi: np.ndarray
    x: float = 0.0

    def __post_init__(self):
        for name in ("T", "N", "B", "chi"):
            setattr(self, name, np.asarray(getattr(self, name), float).reshape(3))

    @classmethod
    def standard(cls, chi=(0.0, 0.0, 0.0)):
        return cls(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.asarray(chi, float))

    def matrix(self) -> np.ndarray:
        return np.array([self.T, self.N, self.B, self.chi])

    def orthonormality_error(self) -> float:
        M = np.array([self.T, self.N, self.B])
        return float(max(np.max(np.abs(M @ M.T - np.eye(3))), abs(np.linalg.det(M) - 1)))


@dataclass
class Curve:
    x: np.ndarray
    chi: np.ndarray        # (m, 3)
    T: np.ndarray
    N: np.ndarray
    B: np.ndarray
    meta: dict = field(default_factory=dict)

    def frame(self, i) -> FrameState:
        return FrameState(self.T[i], self.N[i], self.B[i], self.chi[i], float(self.x[i]))

    def to_csv(self) -> str:
        head = "x,chi1,chi2,chi3,T1,T2,T3,N1,N2,N3,B1,B2,B3"
        rows = [head]
        for i in range(len(self.x)):
            vals = [self.x[i], *self.chi[i], *self.T[i], *self.N[i], *self.B[i]]
            rows.append(",".join(repr(float(v)) for v in vals))
        return "\r\n".join(rows) + "\r\n"

    @classmethod
    def from_csv(cls, text: str) -> "Curve":
        lines = [ln for ln in text.replace("\r\n", "\n").split("\n") if ln]
        arr = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(arr[:, 0], arr[:, 1:4], arr[:, 4:7], arr[:, 7:10], arr[:, 10:13])


def _to_curve(x, states, meta) -> Curve:
    return Curve(np.asarray(x, float), states[:, 3].copy(), states[:, 0].copy(), states[:, 1].copy(),
                 states[:, 2].copy(), dict(meta))


# ---------------------------------------------------------------------------
# integration


def frenet_integrate(ct: CurvatureTorsion, init: FrameState, tol: float = 1e-6) -> Curve:
    """Frame and position at every other node, outward from the node nearest x = 0.

    Each RK4 step spans two grid nodes so the half-step stage uses the sampled middle node.
    """
    if init.orthonormality_error() > 1e-9:
        raise ConfigurationError("initial frame is not orthonormal")
    g = ct.grid
    x = g.x
    j0 = int(np.argmin(np.abs(x)))
    tau = ct.tau
    if not np.all(np.isfinite(tau)):
        raise CurvaturePositivityError("torsion undefined (curvature below threshold) on part of the grid")
    out = np.full((g.n, 4, 3), np.nan)
    bad = _frenet_nodes(x, ct.c, tau, j0, init.matrix(), out, tol)
    if bad >= 0:
        raise IntegrationError(f"frame drift above {tol:g} before re-orthonormalization", t=None, xi=float(x[bad]))
    keep = np.arange(j0 % 2, g.n, 2)
    keep = keep[np.isfinite(out[keep, 0, 0])]
    return _to_curve(x[keep], out[keep], {"x0_index": int(j0)})


def selfsimilar_profile(a: float, X_max: float, h: float | None = None, store_step: float | None = None,
                        init: FrameState | None = None) -> Curve:
    """G_a: c = a, tau = x/2 on [-X_max, X_max].

    Default frame at 0 is the standard basis with G(0) = 2a B(0), the placement for which
    sqrt(t) G(x/sqrt(t)) moves by c B under the binormal flow.
    """
    if a <= 0:
        raise ConfigurationError("a must be positive")
    if h is None:
        h = min(1e-2, 0.1 / max(X_max, 1.0))
    if store_step is None:
        store_step = max(h, min(1e-2, X_max / 2e5))
    every = max(1, int(round(store_step / h)))
    if init is None:
        init = FrameState.standard(chi=(0.0, 0.0, 2 * a))
    nsteps = int(round(X_max / h))
    m = nsteps // every + 1
    sides = []
    for sgn in (1.0, -1.0):
        xs = np.empty(m)
        out = np.empty((m, 4, 3))
        cnt = _frenet_selfsimilar(a, X_max, sgn * h, every, init.matrix(), xs, out)
        sides.append((xs[:cnt], out[:cnt]))
    (xp, sp), (xm, sm) = sides
    x = np.concatenate([xm[:0:-1], xp])
    states = np.concatenate([sm[:0:-1], sp])
    return _to_curve(x, states, {"a": a, "X_max": X_max, "h": h})


def curvature_from_positions(curve: Curve) -> np.ndarray:
    """|chi''| by second differences on the stored nodes (assumes uniform spacing)."""
    dx = np.diff(curve.x)
    if not np.allclose(dx, dx[0], rtol=1e-9):
        raise ConfigurationError("node spacing must be uniform")
    d2 = (curve.chi[2:] - 2 * curve.chi[1:-1] + curve.chi[:-2]) / dx[0] ** 2
    return np.linalg.norm(d2, axis=1)


def reflect_across(v, normal):
    n = np.asarray(normal, float) / np.linalg.norm(normal)
    v = np.asarray(v, float)
    return v - 2 * np.outer(v @ n, n) if v.ndim == 2 else v - 2 * (v @ n) * n


# ---------------------------------------------------------------------------
# corner angle


@dataclass
class TangentLimits:
    A_plus: np.ndarray
    A_minus: np.ndarray
    theta: float
    envelope_plus: np.ndarray
    envelope_minus: np.ndarray

    @property
    def sin_half(self) -> float:
        return float(np.sin(self.theta / 2))


def _cesaro(curve, lo, hi):
    x = curve.x
    i0, i1 = np.argmin(np.abs(x - lo)), np.argmin(np.abs(x - hi))
    d = curve.chi[i1] - curve.chi[i0]
    return d / (x[i1] - x[i0]), i0, i1


def _envelope(curve, A, lo, hi, parts=4):
    edges = np.geomspace(lo, hi, parts + 1)
    env = []
    ax = np.abs(curve.x)
    side = np.sign(lo) if lo != 0 else 1
    for k in range(parts):
        m = (ax >= edges[k]) & (ax <= edges[k + 1]) & (np.sign(curve.x) == side)
        env.append(np.max(np.linalg.norm(curve.T[m] - A, axis=1)) if m.any() else np.nan)
    return np.array(env)


def tangent_limits(curve: Curve, decade: float = 10.0) -> TangentLimits:
    """Cesaro averages of T over the last decade on each side and the angle between A+ and -A-."""
    X = min(curve.x.max(), -curve.x.min())
    if X <= 0:
        raise ConfigurationError("curve must extend on both sides of 0")
    Ap, _, _ = _cesaro(curve, X / decade, X)
    Am, _, _ = _cesaro(curve, -X, -X / decade)
    Ap_u, Am_u = Ap / np.linalg.norm(Ap), Am / np.linalg.norm(Am)
    cos = np.clip(Ap_u @ (-Am_u), -1.0, 1.0)
    theta = float(np.arccos(cos))
    env_p = _envelope(curve, Ap_u, X / decade, X)
    env_m = -_envelope(Curve(-curve.x, curve.chi, curve.T, curve.N, curve.B), Am_u, X / decade, X) * -1
    for env in (env_p, env_m):
        if np.nanmax(env) > 1e-10 and not np.all(np.diff(env) < 0):
            raise ConvergenceError(f"tangent oscillation envelope does not decrease: {env}")
    return TangentLimits(Ap_u, Am_u, theta, env_p, env_m)


def corner_angle_law(a: float) -> float:
    """sin(theta/2) for c = a, tau = x/2: exp(-pi a^2/2), which the integration reproduces."""
    return float(np.exp(-np.pi * a * a / 2))


def corner_angle_stated(a: float) -> float:
    """exp(-a^2/2), the form quoted without the factor pi; kept for side-by-side reports."""
    return float(np.exp(-a * a / 2))


# ---------------------------------------------------------------------------
# filament-function snapshots and reconstruction


@dataclass
class PsiSnapshot:
    """psi(t, .) with its first two x-derivatives (finite differences if not supplied)."""
    t: float
    psi: SpectralField
    psi_x: np.ndarray | None = None
    psi_xx: np.ndarray | None = None

    def __post_init__(self):
        dx = self.psi.grid.dx
        p = self.psi.physical()
        if self.psi_x is None:
            self.psi_x = _fd_derivative(p, dx)
        if self.psi_xx is None:
            self.psi_xx = _fd_derivative(np.asarray(self.psi_x), dx)
        self.psi_x = np.asarray(self.psi_x, complex)
        self.psi_xx = np.asarray(self.psi_xx, complex)

    @property
    def grid(self) -> Grid:
        return self.psi.grid

    def curvature_torsion(self, threshold: float = 1e-8):
        """(c, tau, c_x, c_xx) from psi_x/psi = c_x/c + i tau and psi_xx/psi = c_xx/c + 2i tau c_x/c + i tau_x - tau^2."""
        p = self.psi.physical()
        c = np.abs(p)
        if np.any(c < threshold):
            raise CurvaturePositivityError(f"|psi| drops below {threshold:g} at t={self.t:g}")
        r1 = self.psi_x / p
        r2 = self.psi_xx / p
        tau = r1.imag
        cx = c * r1.real
        cxx = c * (r2.real + tau * tau)
        return c, tau, cx, cxx


def psi_a_snapshot(grid: Grid, t: float, a: float) -> PsiSnapshot:
    x = grid.x
    p = a * np.exp(1j * x * x / (4 * t)) / np.sqrt(t)
    px = (0.5j * x / t) * p
    pxx = (0.5j / t - x * x / (4 * t * t)) * p
    return PsiSnapshot(t, SpectralField.from_physical(grid, p), px, pxx)


def snapshots_from_run(run, grid: Grid, t_min: float = 0.0) -> list:
    """psi snapshots at t = 1/s for every recorded u-time s of a run started at s = 1."""
    if abs(run.times[0] - 1.0) > 1e-12:
        raise ConfigurationError("the run must start at time 1")
    out = []
    for s, u in zip(run.times, run.snapshots):
        t = 1.0 / s
        if t < t_min * (1 - 1e-12):
            continue
        p, px, pxx = assemble_psi_derivatives(u, t, run.params, grid)
        out.append(PsiSnapshot(t, SpectralField.from_physical(grid, p), px, pxx))
    return out


@dataclass
class Reconstruction:
    times: np.ndarray                 # descending from 1
    curves: list
    chi_0: np.ndarray                 # on the common node set
    x: np.ndarray
    frames0: list                     # frame at x = 0 per snapshot
    c_dev: np.ndarray                 # sup_x |c - a/sqrt(t)| per snapshot
    tau_dev: np.ndarray               # sup_{|x| <= X} |tau - x/2t|
    meta: dict = field(default_factory=dict)

    def manifest(self) -> str:
        return json.dumps({"schema": 1, "times": [float(t) for t in self.times],
                           "nodes": int(len(self.x)), **self.meta}, indent=2)


def _omega(c, tau, cx, cxx):
    return np.array([(cxx - c * tau * tau) / c, -cx, -c * tau])


def _frame_transport(times, omegas, cs, frame1: FrameState):
    """Frame and position at x = 0 for each time, integrating from t = 1 downward in ln t."""
    order = np.argsort(times)
    lt = np.log(np.asarray(times)[order])
    W = np.asarray(omegas)[order] * np.asarray(times)[order][:, None]   # t Omega, smooth in ln t
    C = np.asarray(cs)[order] * np.asarray(times)[order]                  # t c
    if len(lt) == 1:
        return [frame1]
    spl_w = CubicSpline(lt, W, axis=0)
    spl_c = CubicSpline(lt, C)

    def rhs(s, y):
        F = y[:9].reshape(3, 3)      # rows T, N, B
        w = spl_w(s)                  # components in the moving frame, times t
        Om = w[0] * F[0] + w[1] * F[1] + w[2] * F[2]
        dF = np.cross(Om, F)
        dchi = spl_c(s) * F[2]
        return np.concatenate([dF.ravel(), dchi])

    y0 = np.concatenate([np.array([frame1.T, frame1.N, frame1.B]).ravel(), frame1.chi])
    grid = lt[::-1]                   # from ln 1 = max down to min
    sol = solve_ivp(rhs, (grid[0], grid[-1]), y0, t_eval=grid, method="DOP853", rtol=1e-11, atol=1e-12)
    if not sol.success:
        raise IntegrationError(f"frame transport failed: {sol.message}")
    frames = [None] * len(lt)
    for k in range(len(sol.t)):
        F = sol.y[:9, k].reshape(3, 3)
        # re-orthonormalize (tiny drift from the ODE solver)
        U, _, Vt = np.linalg.svd(F)
        F = U @ Vt
        frames[order[len(lt) - 1 - k]] = FrameState(F[0], F[1], F[2], sol.y[9:, k])
    return frames


def binormal_reconstruct(snapshots, frame_at_t1: FrameState, a: float, tau_window: float | None = None,
                         amplitude_check: bool = True) -> Reconstruction:
    """Curves chi(t, .) for each snapshot plus chi_0 = chi(1) - int_0^1 c b dt.

    Rigid motions are fixed by transporting the x = 0 frame in t.  The time integral uses
    s = sqrt(t) (c b ~ t^{-1/2}) and a sqrt(t)-weighted piece on [0, t_min].
    """
    snaps = sorted(snapshots, key=lambda s: -s.t)
    if abs(snaps[0].t - 1.0) > 1e-12:
        raise ConfigurationError("the ladder must start at t = 1")
    g = snaps[0].grid
    if any(s.grid != g for s in snaps):
        raise ConfigurationError("snapshots must share one grid")
    times = np.array([s.t for s in snaps])
    j0 = int(np.argmin(np.abs(g.x)))
    cts, oms, c0s, c_dev, tau_dev = [], [], [], [], []
    X = tau_window if tau_window is not None else g.L
    win = np.abs(g.x) <= X
    for s in snaps:
        if amplitude_check:
            r = np.abs(s.psi.physical()) * np.sqrt(s.t) / a
            if r.min() < 0.5 or r.max() > 1.5:
                raise CurvaturePositivityError(
                    f"|psi| sqrt(t)/a spans [{r.min():.3f}, {r.max():.3f}] at t={s.t:g}, outside [1/2, 3/2]")
        c, tau, cx, cxx = s.curvature_torsion()
        cts.append(CurvatureTorsion(g, c, tau))
        oms.append(_omega(c[j0], tau[j0], cx[j0], cxx[j0]))
        c0s.append(c[j0])
        c_dev.append(np.max(np.abs(c - a / np.sqrt(s.t))))
        tau_dev.append(np.max(np.abs(tau - g.x / (2 * s.t))[win]))
    frames = _frame_transport(times, oms, c0s, frame_at_t1)
    curves = [frenet_integrate(ct, fr) for ct, fr in zip(cts, frames)]
    x = curves[0].x
    node_idx = np.searchsorted(g.x, x)
    # chi_0 by quadrature in s = sqrt(t): int c b dt = int 2 s c b ds
    s_vals = np.sqrt(times)
    cb = np.array([ct.c[node_idx][:, None] * cv.B for ct, cv in zip(cts, curves)])
    integrand = 2 * s_vals[:, None, None] * cb
    integral = -np.trapezoid(integrand, s_vals, axis=0)      # s descends
    # [0, t_min]: c b = t^{-1/2} beta with beta's mean taken as its Cesaro average in s over
    # [s_min, 2 s_min]; the part of b spiralling with phase x^2/4t averages out there
    tm = times[-1]
    last = times <= 4 * tm * (1 + 1e-12)
    if last.sum() >= 3:
        integral += -np.trapezoid(integrand[last], s_vals[last], axis=0) * np.sqrt(tm) / (s_vals[last][0] - np.sqrt(tm))
    else:
        integral += 2 * tm * cb[-1]
    chi_0 = curves[0].chi - integral
    return Reconstruction(times, curves, chi_0, x, frames, np.array(c_dev), np.array(tau_dev),
                          {"a": a, "tau_window": float(X)})


# ---------------------------------------------------------------------------
# reports


def _exponent(t, dev):
    """Exponent p of dev ~ t^{-p} by least squares in ln t (nan if deviations vanish)."""
    t, dev = np.asarray(t), np.asarray(dev)
    m = dev > 0
    if m.sum() < 3:
        return float("nan")
    return float(-np.polyfit(np.log(t[m]), np.log(dev[m]), 1)[0])


def ctau_deviation(rec: Reconstruction, window=None) -> dict:
    """Fitted exponents of sup|c - a/sqrt t| ~ t^{-p_c} and sup|tau - x/2t| ~ t^{-p_tau} as t -> 0."""
    t = rec.times
    m = np.ones_like(t, bool) if window is None else (t >= window[0]) & (t <= window[1])
    pc = _exponent(t[m], rec.c_dev[m])
    pt = _exponent(t[m], rec.tau_dev[m])
    return {"c_exponent": pc, "tau_exponent": pt, "gap": pt - pc,
            "c_dev_max": float(rec.c_dev.max()), "tau_dev_max": float(rec.tau_dev.max()),
            "c_envelope": 0.25, "tau_envelope": 0.75}


def chi_trace_convergence(rec: Reconstruction, window=None) -> dict:
    """sup over nodes of |chi(t,x) - chi_0(x)| against sqrt(t)."""
    t = rec.times
    d = np.array([np.max(np.linalg.norm(cv.chi - rec.chi_0, axis=1)) for cv in rec.curves])
    m = np.ones_like(t, bool) if window is None else (t >= window[0]) & (t <= window[1])
    if m.sum() < 3 or np.all(d[m] == 0):
        return {"exponent": float("nan"), "distances": d, "C": 0.0}
    p = -_exponent(t[m], d[m])
    return {"exponent": p, "distances": d, "C": float(np.max(d[m] / np.sqrt(t[m])))}


def align_rigid(P, Q):
    """Best rotation R and shift b with R P + b ~ Q (Kabsch); returns (R, b, max node error)."""
    P, Q = np.asarray(P, float), np.asarray(Q, float)
    pc, qc = P.mean(0), Q.mean(0)
    H = (P - pc).T @ (Q - qc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1, 1, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    b = qc - R @ pc
    err = np.max(np.linalg.norm(P @ R.T + b - Q, axis=1))
    return R, b, float(err)


def selfsimilar_at(curve_G: Curve, t: float, x) -> np.ndarray:
    """sqrt(t) G(x/sqrt(t)) by cubic interpolation of the stored profile."""
    y = np.asarray(x) / np.sqrt(t)
    if np.max(np.abs(y)) > np.max(np.abs(curve_G.x)):
        raise ConfigurationError("profile too short for the requested nodes")
    spl = CubicSpline(curve_G.x, curve_G.chi, axis=0)
    return np.sqrt(t) * spl(y)
