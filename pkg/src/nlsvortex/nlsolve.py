"""Split-step solver for the nonlinear equation around the constant background a.

The evolved variable is v = a + w.  Internally only w is stored, which keeps
small perturbations at full relative precision; v and u are views:

    w = u exp(i sigma a^2 ln t),   v = a + w.

One step is Strang splitting: half free flow, exact nonlinear phase rotation
v -> v exp(i sigma (|v|^2 - a^2) ln(t1/t0)), half free flow.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linprop
from .core import FOURIER, PHYSICAL, Grid, Params, SpectralField, norm_X, norm_Y_sample, nyquist_fraction
from .errors import AliasingError, ConfigurationError, ConvergenceError, DomainError, GuardRefusal, InstabilityError


def gauge(t, params: Params) -> complex:
    """exp(i sigma a^2 ln t): multiplies u to give w."""
    return np.exp(1j * params.sigma * params.a ** 2 * np.log(t))


def u_to_w(u: SpectralField, t, params: Params) -> SpectralField:
    return u * gauge(t, params)


def w_to_u(w: SpectralField, t, params: Params) -> SpectralField:
    return w * np.conj(gauge(t, params))


def v_from_u(u: SpectralField, t, params: Params) -> SpectralField:
    return SpectralField(u.grid, params.a + u.physical() * gauge(t, params), PHYSICAL)


def u_from_v(v: SpectralField, t, params: Params) -> SpectralField:
    return SpectralField(v.grid, (v.physical() - params.a) * np.conj(gauge(t, params)), PHYSICAL)


def _N(w, a):
    # (|a+w|^2 - a^2)(a+w) with the linear part a^2 (w + conj w) removed
    return np.abs(w) ** 2 * w + a * (w * w + 2 * np.abs(w) ** 2)


def F_of_u(u_field: SpectralField, t: float, params: Params) -> SpectralField:
    """Quadratic plus cubic part of the nonlinearity, de-aliased; no 1/t factor."""
    if t <= 0:
        raise DomainError("t must be positive")
    g = gauge(t, params)
    w = u_field.physical() * g
    f = params.sigma * _N(w, params.a) * np.conj(g)
    c = np.fft.fft(f, norm="ortho")
    c[~u_field.grid.dealias_mask()] = 0
    return SpectralField(u_field.grid, c, FOURIER)


# ---------------------------------------------------------------------------
# the split step

def _rotate(w, a, sigma, lg, linear=False):
    """Exact flow of the pointwise part over a step with ln(t1/t0) = lg."""
    if linear:
        # i w_t = -sigma a^2/t (w + conj w): Re w frozen, Im w grows with ln t
        return w + 2j * sigma * a * a * w.real * lg
    rho = np.abs(w) ** 2 + 2 * a * w.real          # |v|^2 - a^2 without cancellation
    th = sigma * rho * lg
    # (a + w) e^{i th} - a, with e^{i th} - 1 = 2i sin(th/2) e^{i th/2}
    return w * np.exp(1j * th) + a * (2j * np.sin(0.5 * th) * np.exp(0.5j * th))


def _w_step(c, xi2, a, sigma, t, dt, mask, linear=False, nyq_limit=None, grid=None):
    """One Strang step on unitary Fourier coefficients of w.  Returns new coefficients."""
    half = np.exp(-0.5j * dt * xi2)
    w = np.fft.ifft(c * half, norm="ortho")
    w = _rotate(w, a, sigma, np.log1p(dt / t), linear)
    c1 = np.fft.fft(w, norm="ortho")
    if nyq_limit is not None:
        frac = nyquist_fraction(SpectralField(grid, c1.copy(), FOURIER))
        if frac > nyq_limit:
            raise AliasingError(f"spectral mass {frac:.3e} near Nyquist at t={t:.6g} (limit {nyq_limit:g})")
    if mask is not None:
        c1[~mask] = 0
    return c1 * half


def step_strang(v_field: SpectralField, t: float, dt: float, params: Params,
                dealias: bool = True, nyquist_limit: float | None = 1e-6) -> SpectralField:
    """One Strang step of the v equation from t to t + dt."""
    if t < 1 or dt <= 0:
        raise DomainError("need t >= 1 and dt > 0")
    g = v_field.grid
    w = v_field.physical() - params.a
    c = np.fft.fft(w, norm="ortho")
    c1 = _w_step(c, g.xi ** 2, params.a, params.sigma, t, dt,
                 g.dealias_mask() if dealias else None, nyq_limit=nyquist_limit, grid=g)
    return SpectralField(g, params.a + np.fft.ifft(c1, norm="ortho"), PHYSICAL)


# ---------------------------------------------------------------------------
# conserved and monotone quantities

def _Q_w(w, a, dx):
    return float(dx * np.sum(np.abs(w) ** 2 + 2 * a * w.real))


def conservation_Q(v_field: SpectralField, a: float) -> float:
    """int (|v|^2 - a^2) dx over the box."""
    w = v_field.physical() - a
    return _Q_w(w, a, v_field.grid.dx)


def _E_w(c, w, xi, a, sigma, t, dx):
    # spectral derivative; the unitary DFT makes sum |c|^2 = sum |w|^2
    kin = 0.5 * dx * np.sum(np.abs(c * xi) ** 2)
    pot = dx * np.sum((np.abs(w) ** 2 + 2 * a * w.real) ** 2)
    return float(kin - sigma * pot / (4 * t)), float(pot)


def energy_E(v_field: SpectralField, t: float, a: float, sign) -> float:
    """1/2 int |v_x|^2 -/+ 1/(4t) int (|v|^2 - a^2)^2, upper sign focusing."""
    sigma = _sigma(sign)
    w = v_field.physical() - a
    c = np.fft.fft(w, norm="ortho")
    xi = v_field.grid.xi.copy()
    xi[v_field.grid.k == -(v_field.grid.n // 2)] = 0
    return _E_w(c, w, xi, a, sigma, t, v_field.grid.dx)[0]


def _sigma(sign):
    if sign in (1, -1):
        return int(sign)
    if sign == "focusing":
        return 1
    if sign == "defocusing":
        return -1
    raise ConfigurationError(f"unknown sign {sign!r}")


# ---------------------------------------------------------------------------
# runs

@dataclass
class StepPolicy:
    """dt(t) = min(dt_max, dt0 * t/t0): small steps where the coefficients vary fast."""
    dt_max: float = 1e-2
    dt0: float | None = None

    def dt(self, t, t0):
        d0 = self.dt_max if self.dt0 is None else self.dt0
        return min(self.dt_max, d0 * t / t0)


@dataclass
class NonlinearRun:
    params: Params
    initial: SpectralField            # u(t0)
    policy: StepPolicy = field(default_factory=StepPolicy)
    ladder_ratio: float = 2 ** 0.125
    diag_every: int = 10
    guard: float = 0.1                # norm_X(u(t0)) <= guard * a
    linear: bool = False              # drop F, keep the exact linear substep
    dealias: bool = True
    nyquist_limit: float = 1e-6
    representation: str = "v"
    # state
    t: float = field(init=False)
    w: np.ndarray = field(init=False, repr=False)   # Fourier coefficients of w
    steps: int = field(init=False, default=0)
    times: list = field(init=False, default_factory=list)
    snapshots: list = field(init=False, default_factory=list)
    diagnostics: dict = field(init=False, default_factory=dict)
    growth_C: float = field(init=False, default=0.0)
    _next_rung: float = field(init=False, repr=False)

    def __post_init__(self):
        self.t0 = float(self.params.t0)
        if self.t0 < 1:
            raise ConfigurationError("runs start at t0 >= 1")
        if self.representation != "v":
            raise ConfigurationError("only the v-representation is integrated; u and w are views")
        self.t = self.t0
        self.w = u_to_w(self.initial, self.t0, self.params).coeffs().copy()
        self.diagnostics = {k: [] for k in ("t", "Q", "E", "P", "phi", "int_w", "l2", "linf", "xu")}
        self.times, self.snapshots = [self.t0], [self.initial]
        self._next_rung = self.t0 * self.ladder_ratio
        self.nx0 = norm_X(self.initial, self.t0, self.params.gamma)
        self.linf0 = self.initial.linf()
        self._record()

    @property
    def grid(self) -> Grid:
        return self.initial.grid

    def u(self) -> SpectralField:
        return SpectralField(self.grid, self.w * np.conj(gauge(self.t, self.params)), FOURIER)

    def v(self) -> SpectralField:
        return SpectralField(self.grid, self.params.a + np.fft.ifft(self.w, norm="ortho"), PHYSICAL)

    def _record(self):
        g, p = self.grid, self.params
        c = self.w
        wp = np.fft.ifft(c, norm="ortho")
        xi = g.xi.copy()
        xi[g.k == -(g.n // 2)] = 0
        E, P = _E_w(c, wp, xi, p.a, p.sigma, self.t, g.dx)
        hf0 = g.hat_factor()[0]
        d = self.diagnostics
        int_w = complex(c[0] * hf0)
        d["t"].append(self.t)
        d["Q"].append(_Q_w(wp, p.a, g.dx))
        d["E"].append(E)
        d["P"].append(P)
        d["int_w"].append(int_w)
        d["phi"].append(int_w * np.conj(gauge(self.t, p)))
        d["l2"].append(float(np.sqrt(g.dx * np.sum(np.abs(wp) ** 2))))
        linf = float(np.max(np.abs(wp)))
        d["linf"].append(linf)
        d["xu"].append(float(np.sqrt(g.dx * np.sum(np.abs(g.x * wp) ** 2))))
        if not np.isfinite(linf) or (self.linf0 > 0 and linf > 1e3 * self.linf0):
            raise InstabilityError(f"sup norm {linf:.3e} exceeds 1e3 x initial", t=self.t)
        if self.nx0 > 0:
            self.growth_C = max(self.growth_C, d["l2"][-1] / self.nx0)

    def diagnostics_csv(self) -> str:
        d = self.diagnostics
        rows = ["t,Q,E,re_phi,im_phi,l2,linf"]
        for i in range(len(d["t"])):
            ph = d["phi"][i]
            rows.append(f"{d['t'][i]!r},{d['Q'][i]!r},{d['E'][i]!r},{ph.real!r},{ph.imag!r},"
                        f"{d['l2'][i]!r},{d['linf'][i]!r}")
        return "\r\n".join(rows) + "\r\n"

    def series(self, name):
        return np.asarray(self.diagnostics[name])


def start_run(u1: SpectralField, params: Params, **kw) -> NonlinearRun:
    return NonlinearRun(params, u1, **kw)


def evolve_nonlinear(run: NonlinearRun, t_end: float) -> NonlinearRun:
    """Advance ``run`` in place to t_end; snapshots land on the geometric ladder and at t_end."""
    p, g = run.params, run.grid
    if t_end < run.t:
        raise DomainError("the solver only steps forward")
    if run.t == run.t0 and not run.linear and run.nx0 > run.guard * p.a:
        raise GuardRefusal(f"norm_X(u(t0)) = {run.nx0:.4g} exceeds {run.guard:g} * a = {run.guard * p.a:.4g}")
    xi2 = g.xi ** 2
    mask = g.dealias_mask() if run.dealias else None
    eps = 1e-12 * max(1.0, t_end)
    while run.t < t_end - eps:
        dt = run.policy.dt(run.t, run.t0)
        stop = min(run._next_rung, t_end)
        if run.t + dt > stop - eps:
            dt = stop - run.t
        check = run.steps % run.diag_every == 0
        run.w = _w_step(run.w, xi2, p.a, p.sigma, run.t, dt, mask, run.linear,
                        run.nyquist_limit if check else None, g)
        run.t = stop if abs(run.t + dt - stop) <= eps else run.t + dt
        run.steps += 1
        at_rung = run.t >= run._next_rung - eps
        if run.steps % run.diag_every == 0 or at_rung or run.t >= t_end - eps:
            run._record()
        if at_rung or run.t >= t_end - eps:
            run.times.append(run.t)
            run.snapshots.append(run.u())
            while run._next_rung <= run.t + eps:
                run._next_rung *= run.ladder_ratio
    return run


def energy_identity_residual(run: NonlinearRun):
    """Centered-difference dE/dt minus sigma/(4t^2) int(|v|^2-a^2)^2 at interior samples."""
    t, E, P = run.series("t"), run.series("E"), run.series("P")
    # drop repeated times (a record can coincide with a rung)
    keep = np.concatenate([[True], np.diff(t) > 0])
    t, E, P = t[keep], E[keep], P[keep]
    if len(t) < 3:
        raise ConfigurationError("need three diagnostic samples")
    dE = np.gradient(E, t, edge_order=2)
    r = dE - run.params.sigma * P / (4 * t * t)
    return t[1:-1], r[1:-1]


def q_drift_rate(run: NonlinearRun) -> float:
    """max |Q(t) - Q(t0)| / (t - t0) over the recorded samples."""
    t, Q = run.series("t"), run.series("Q")
    m = t > run.t0
    if not m.any():
        return 0.0
    return float(np.max(np.abs(Q[m] - Q[0]) / (t[m] - run.t0)))


def norm_Y_of_run(run: NonlinearRun) -> float:
    p = run.params
    return norm_Y_sample(list(zip(run.times, run.snapshots)), run.t0, p.gamma, p.a)


def l4linf_of_run(run: NonlinearRun) -> float:
    t, s = run.series("t"), run.series("linf")
    keep = np.concatenate([[True], np.diff(t) > 0])
    return float(np.trapezoid(s[keep] ** 4, t[keep]) ** 0.25)


# ---------------------------------------------------------------------------
# the u-form of the equation, integrated directly (independent route for the gauge check)

def _u_rhs(c, t, grid, params, linear=False):
    # nonlinear and conjugate terms of  i u_t + u_xx + sigma a^2/t e^{-2 i sigma a^2 ln t} conj(u) + F/t = 0
    a, sg = params.a, params.sigma
    u = np.fft.ifft(c, norm="ortho")
    rhs = sg * a * a * np.exp(-2j * sg * a * a * np.log(t)) * np.conj(u)
    if not linear:
        g = gauge(t, params)
        rhs = rhs + sg * _N(u * g, a) * np.conj(g)
    out = 1j * np.fft.fft(rhs, norm="ortho") / t
    out[~grid.dealias_mask()] = 0
    return out


def evolve_u_form(u1: SpectralField, t0: float, t1: float, params: Params, dt: float, linear=False) -> SpectralField:
    """Integrating-factor RK4 on u_hat; the dispersive part is exact."""
    g = u1.grid
    xi2 = g.xi ** 2
    c = u1.coeffs().copy()
    nsteps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / nsteps
    e2 = np.exp(-0.5j * h * xi2)
    t = t0
    for _ in range(nsteps):
        k1 = _u_rhs(c, t, g, params, linear)
        k2 = _u_rhs(e2 * (c + 0.5 * h * k1), t + 0.5 * h, g, params, linear)
        k3 = _u_rhs(e2 * c + 0.5 * h * k2, t + 0.5 * h, g, params, linear)
        k4 = _u_rhs(e2 * e2 * c + h * e2 * k3, t + h, g, params, linear)
        c = e2 * e2 * c + h / 6 * (e2 * e2 * k1 + 2 * e2 * (k2 + k3) + k4)
        t += h
    return SpectralField(g, c, FOURIER)


# ---------------------------------------------------------------------------
# scattering

def pullback(u: SpectralField, t: float, t_ref: float = 1.0) -> SpectralField:
    """exp(-i (t - t_ref) d_xx) u(t), i.e. multiply the transform by exp(i (t - t_ref) xi^2)."""
    return linprop.free_propagate(u, t, t_ref)


def free_from_f_plus(f_plus: SpectralField, t: float, t_ref: float = 1.0) -> SpectralField:
    return linprop.free_propagate(f_plus, t_ref, t)


@dataclass
class NonlinearScatter:
    f_plus: SpectralField            # linear completion of u(T)
    pullback_mean: SpectralField     # mean pullback over the last rungs
    increments: np.ndarray           # ||P(t_k+1) - P(t_k)||, zero mode excluded
    increment_slope: float           # informational: slow for gamma = 0 data
    completion_gap: float            # ||f_plus - pullback_mean|| (zero mode excluded)
    T_limit: float
    residual_t: np.ndarray
    residual: np.ndarray
    residual_slope: float


def _tail_slope(t, y):
    """log-log slope over the second half of a positive sequence (0 if undefined)."""
    h = len(y) // 2
    t, y = np.asarray(t)[h:], np.asarray(y)[h:]
    if len(y) < 3 or np.any(y <= 0):
        return 0.0
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])


def _l2_nozero(c, grid):
    c = c.copy()
    c[0] = 0
    return float(np.sqrt(grid.dx * np.sum(np.abs(c) ** 2)))


def nonlinear_scattering_details(run: NonlinearRun, T_limit: float | None = None, rungs: int = 4) -> NonlinearScatter:
    p, g = run.params, run.grid
    times = np.asarray(run.times)
    T = times[-1] if T_limit is None else T_limit
    sel = [i for i, t in enumerate(times) if t <= T * (1 + 1e-12)]
    if len(sel) < rungs + 2:
        raise ConfigurationError("not enough ladder rungs recorded before T_limit")
    t_ref = run.t0
    pb = [pullback(run.snapshots[i], times[i], t_ref).coeffs() for i in sel]
    inc = np.array([_l2_nozero(pb[k + 1] - pb[k], g) for k in range(len(pb) - 1)])
    mean = np.mean(pb[-rungs:], axis=0)
    # linear completion: the nonlinear forcing beyond T is of higher order
    uT = run.snapshots[sel[-1]]
    up = linprop.asymptotic_state(uT, times[sel[-1]], p).coeffs()
    fp = up * np.exp(-1j * t_ref * g.xi ** 2)
    fp[0] = mean[0]
    f_plus = SpectralField(g, fp, FOURIER)
    gap = _l2_nozero(fp - mean, g)
    # distance of each pullback to the limit; it equals the scattering residual
    res = np.array([_l2_nozero(q - fp, g) for q in pb])
    inc_slope = _tail_slope(times[sel][1:], inc)
    res_slope = _tail_slope(times[sel][:-1], res[:-1])  # the last rung anchors the completion
    if res.max() > 0 and not res_slope < 0:
        raise ConvergenceError(f"pullbacks do not approach the limit (log-log slope {res_slope:.3g})")
    return NonlinearScatter(f_plus, SpectralField(g, mean, FOURIER), inc, inc_slope, gap, float(times[sel[-1]]),
                            times[sel], res, res_slope)


def nonlinear_scattering_state(run: NonlinearRun, T_limit: float | None = None) -> SpectralField:
    return nonlinear_scattering_details(run, T_limit).f_plus


def nonlinear_residual(u: SpectralField, f_plus: SpectralField, t: float, t_ref: float = 1.0) -> float:
    """||u(t) - exp(i (t - t_ref) d_xx) f_plus||, zero mode excluded (it grows logarithmically)."""
    d = u.coeffs() - free_from_f_plus(f_plus, t, t_ref).coeffs()
    return _l2_nozero(d, u.grid)


def check_f_plus_lowfreq(f_plus: SpectralField, u1: SpectralField, params: Params) -> dict:
    """max over 0 < xi^2 <= 1 of |xi|^{2(gamma+delta)} |f_plus hat| / norm_X(u(1))."""
    return linprop.check_u_plus_lowfreq(f_plus, u1, params)


def zero_mode_growth(run: NonlinearRun, window=None) -> dict:
    """Fit Im int w against ln t and compare with the leading coefficient sigma a Q(t0)."""
    p = run.params
    t = run.series("t")
    iw = run.series("int_w")
    m = np.ones_like(t, bool) if window is None else (t >= window[0]) & (t <= window[1])
    lt = np.log(t[m] / run.t0)
    if lt.size < 2 or np.ptp(lt) == 0:
        raise ConfigurationError("need samples spanning a range of t")
    slope = float(np.polyfit(lt, iw.imag[m], 1)[0])
    Q0 = run.series("Q")[0]
    w0 = iw[0]
    predicted = p.sigma * (2 * p.a ** 2 * w0.real if run.linear else p.a * Q0)
    xu = run.series("xu")
    xu_exp = float("nan")
    if xu[0] > 0 and t[-1] / t[0] > 2:
        xu_exp = float(np.polyfit(np.log(t), np.log(xu), 1)[0])
    return {
        "slope": slope,
        "predicted": float(predicted),
        "relative_gap": float(abs(slope - predicted) / abs(predicted)) if predicted else float("nan"),
        "Q0": float(Q0),
        "growth_regime": bool(Q0 > 0),
        "re_int_w0": float(w0.real),
        "xu_exponent": xu_exp,
    }
