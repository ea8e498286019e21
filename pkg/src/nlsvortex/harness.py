"""Experiments from INI configs, and the ``nlsvortex`` command line.

One config describes one experiment; running it writes ``report.json``, CSV
series and ``manifest.json`` into the output directory.  Outputs carry no
timestamps, so the same config reproduces the same bytes.

Exit codes: 0 all checks passed, 2 a check failed, 3 smallness guard refused
the data, 4 numerical failure, 5 bad configuration.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

from . import geometry as geo
from . import linprop, modes, nlsolve, waveops
from .core import Grid, Params, SpectralField, field_to_csv, norm_X
from .errors import ConfigurationError, GuardRefusal, NLSVortexError

SCHEMA = 1
KINDS = ("linear-evolve", "linear-scatter", "nonlinear-evolve", "nonlinear-scatter", "modes", "wave-op",
         "curve", "corner-angle", "sweep")
FAMILIES = ("gaussian", "band", "lowfreq-cap", "random-phase", "bump")
EXIT_PASS, EXIT_CHECK, EXIT_GUARD, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class DataSpec:
    family: str = "bump"
    amplitude: float = 0.01
    width: float = 1.0            # gaussian / random-phase spectral width, lowfreq-cap tail width
    lo: float = 0.25              # band: lo <= xi^2 <= hi
    hi: float = 1.0
    exponent: float = 0.0         # lowfreq-cap: |xi|^{2 exponent} |u_hat| constant on xi^2 <= 1
    seed: int = 0


@dataclass(frozen=True)
class LadderSpec:
    t_end: float = 100.0
    per_decade: int = 8

    def times(self, t0: float = 1.0) -> np.ndarray:
        k = max(1, int(round(self.per_decade * np.log10(self.t_end / t0))))
        return t0 * (self.t_end / t0) ** (np.arange(k + 1) / k)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: Params = field(default_factory=lambda: Params(a=0.5))
    half_length: float = 64.0
    n: int = 512
    data: DataSpec = field(default_factory=DataSpec)
    ladder: LadderSpec = field(default_factory=LadderSpec)
    out: str = ""
    thresholds: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    name: str = ""
    base_dir: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.data.family not in FAMILIES:
            raise ConfigurationError(f"unknown data family {self.data.family!r}; choose from {', '.join(FAMILIES)}")

    @property
    def grid(self) -> Grid:
        return Grid(self.half_length, self.n)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "kind": self.kind, "name": self.name,
            "params": {"a": p.a, "gamma": p.gamma, "delta": p.delta, "sign": p.sign, "t0": p.t0, "t_max": p.t_max},
            "grid": {"half_length": self.half_length, "n": self.n},
            "data": asdict(self.data), "ladder": asdict(self.ladder),
            "thresholds": dict(sorted(self.thresholds.items())), "options": dict(sorted(self.options.items())),
        }

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def threshold(self, key, default):
        return float(self.thresholds.get(key, default))

    def opt(self, key, default, cast=None):
        if key not in self.options:
            return default
        v = self.options[key]
        if cast is bool:
            return str(v).strip().lower() in ("1", "true", "yes", "on")
        if cast is list:
            return [s.strip() for s in str(v).split(",") if s.strip()]
        if cast is not None:
            return cast(v)
        return v


def _floats(section, names):
    out = {}
    for k in names:
        if k in section:
            try:
                out[k] = float(section[k])
            except ValueError:
                raise ConfigurationError(f"{k} = {section[k]!r} is not a number") from None
    return out


def parse_config(text: str, name: str = "", base_dir: str = "") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"unreadable config: {e}") from None
    if "experiment" not in cp or "kind" not in cp["experiment"]:
        raise ConfigurationError("config needs [experiment] kind = ...")
    ex = cp["experiment"]
    pk = _floats(cp["params"] if "params" in cp else {}, ("a", "gamma", "delta", "t0", "t_max"))
    if "params" in cp and "sign" in cp["params"]:
        pk["sign"] = cp["params"]["sign"].strip()
    pk.setdefault("a", 0.5)
    params = Params(**pk)
    gs = cp["grid"] if "grid" in cp else {}
    try:
        half_length = float(gs.get("half_length", 64.0))
        n = int(gs.get("n", 512))
    except ValueError as e:
        raise ConfigurationError(f"invalid grid: {e}") from None
    Grid(half_length, n)  # validates
    ds = cp["data"] if "data" in cp else {}
    dk = _floats(ds, ("amplitude", "width", "lo", "hi", "exponent"))
    if "family" in ds:
        dk["family"] = ds["family"].strip()
    if "seed" in ds:
        dk["seed"] = int(ds["seed"])
    ls = cp["ladder"] if "ladder" in cp else {}
    lk = _floats(ls, ("t_end",))
    if "per_decade" in ls:
        lk["per_decade"] = int(ls["per_decade"])
    th = {k: float(v) for k, v in cp["thresholds"].items()} if "thresholds" in cp else {}
    opts = dict(cp["options"].items()) if "options" in cp else {}
    return ExperimentConfig(ex["kind"].strip(), params, half_length, n, DataSpec(**dk), LadderSpec(**lk),
                            ex.get("out", ""), th, opts, ex.get("name", name), base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from None
    return parse_config(text, path.stem, str(path.parent))


# ---------------------------------------------------------------------------
# initial data

def initial_data(spec: DataSpec, grid: Grid) -> SpectralField:
    """Deterministic u(1) for a named family; amplitude 0 gives the zero field."""
    xi = grid.xi
    A, w = spec.amplitude, spec.width
    if spec.family == "gaussian":
        return SpectralField.from_physical(grid, A * np.exp(-grid.x ** 2 / (2 * w * w)) + 0j)
    if spec.family == "band":
        if not 0 <= spec.lo < spec.hi:
            raise ConfigurationError("band needs 0 <= lo < hi")
        rng = np.random.default_rng(spec.seed)
        x2 = xi * xi
        inside = (x2 >= spec.lo) & (x2 <= spec.hi)
        s = np.clip((np.abs(xi) - np.sqrt(spec.lo)) / (np.sqrt(spec.hi) - np.sqrt(spec.lo)), 0, 1)
        phase = rng.normal() * xi + rng.normal() * x2
        return SpectralField.from_hat(grid, np.where(inside, A * np.sin(np.pi * s) ** 2 * np.exp(1j * phase), 0))
    if spec.family == "lowfreq-cap":
        g = spec.exponent
        ax = np.abs(xi)
        hat = np.zeros(grid.n, complex)
        low = (ax > 0) & (ax <= 1)
        hat[low] = A * ax[low] ** (-2 * g)
        hat[ax > 1] = A * np.exp(-((ax[ax > 1] - 1) / w) ** 2)
        if g == 0:
            hat[ax == 0] = A
        return SpectralField.from_hat(grid, hat)
    if spec.family == "random-phase":
        rng = np.random.default_rng(spec.seed)
        ph = rng.uniform(0, 2 * np.pi, grid.n)
        return SpectralField.from_hat(grid, A * np.exp(-(xi * w) ** 2 / 2) * np.exp(1j * ph))
    if spec.family == "bump":
        hat = np.zeros(grid.n, complex)
        m = np.abs(xi) < 1
        hat[m] = A * np.exp(1 - 1 / (1 - xi[m] ** 2)) * (1 + 0.5j * xi[m])
        return SpectralField.from_hat(grid, hat)
    raise ConfigurationError(f"unknown data family {spec.family!r}")


# ---------------------------------------------------------------------------
# reports

@dataclass
class ScatterReport:
    kind: str
    config_hash: str
    config: dict
    exponents: dict = field(default_factory=dict)     # name -> {value, ci_low, ci_high, window}
    constants: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def flag(self, ident, inequality, value, threshold, passed):
        self.flags.append({"id": ident, "inequality": inequality, "value": _jsonable(value),
                           "threshold": _jsonable(threshold), "passed": bool(passed), "config": self.config_hash})

    @property
    def passed(self) -> bool:
        return all(f["passed"] for f in self.flags)

    def to_json(self) -> str:
        d = {"schema": SCHEMA, "kind": self.kind, "config_hash": self.config_hash, "config": self.config,
             "passed": self.passed, "flags": self.flags, "exponents": self.exponents,
             "constants": self.constants, "values": self.values, "provenance": self.provenance}
        return json.dumps(_jsonable(d), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def fit_exponent(t, v, window=None, level=0.95) -> dict:
    """Decay exponent p in v ~ t^-p by least squares in log-log, with a confidence interval."""
    t, v = np.asarray(t, float), np.asarray(v, float)
    if window is not None:
        m = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
        t, v = t[m], v[m]
    p, _, r2 = linprop.rate_fit(np.c_[t, v])
    lr = stats.linregress(np.log(t), np.log(v))
    q = stats.t.ppf(0.5 + level / 2, len(t) - 2)
    return {"value": p, "ci_low": -lr.slope - q * lr.stderr, "ci_high": -lr.slope + q * lr.stderr,
            "r2": r2, "window": [float(t.min()), float(t.max())], "samples": int(len(t))}


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"package": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


# ---------------------------------------------------------------------------
# experiment kinds; each returns a dict of output files

def _data(cfg: ExperimentConfig, rep: ScatterReport, grid=None):
    g = grid or cfg.grid
    f = initial_data(cfg.data, g)
    rep.values["norm_X"] = norm_X(f, cfg.params.t0, cfg.params.gamma) if g.low_mask().any() else float("nan")
    return f


def _int_w(u: SpectralField, t, p: Params):
    return complex(u.coeffs()[0] * u.grid.hat_factor()[0] * nlsolve.gauge(t, p))


def run_linear_evolve(cfg, rep):
    p = cfg.params
    f = _data(cfg, rep)
    times = cfg.ladder.times(p.t0)
    files = {}
    if cfg.opt("engine", "modes") == "split":
        dt = cfg.opt("dt", 0.05, float)
        r = nlsolve.start_run(f, p, policy=nlsolve.StepPolicy(dt_max=dt), linear=True,
                              ladder_ratio=10 ** (1 / cfg.ladder.per_decade), diag_every=cfg.opt("diag_every", 10, int))
        nlsolve.evolve_nonlinear(r, cfg.ladder.t_end)
        ts, snaps = np.asarray(r.times), r.snapshots
    else:
        run = linprop.linear_run(f, p, times, probes=False)
        ts, snaps = run.times, run.snapshots
    iw = np.array([_int_w(s, t, p) for t, s in zip(ts, snaps)])
    w1 = iw[0]
    law = w1.real + 1j * (w1.imag + 2 * p.sigma * p.a ** 2 * w1.real * np.log(ts / ts[0]))
    err = float(np.max(np.abs(iw - law)))
    rep.values.update(int_w_final=complex(iw[-1]), t_final=float(ts[-1]))
    rep.flag("linear-evolve/zero-mode-law", "|int w(t) - (Re w1 + i(Im w1 + 2 sigma a^2 Re w1 ln t))| <= tol",
             err, cfg.threshold("zero_mode_abs", 1e-8), err <= cfg.threshold("zero_mode_abs", 1e-8))
    files["series.csv"] = csv_text(["t", "l2", "linf", "re_int_w", "im_int_w"],
                                   [(t, s.l2(), s.linf(), w.real, w.imag) for t, s, w in zip(ts, snaps, iw)])
    return files


def run_linear_scatter(cfg, rep):
    p = cfg.params
    f = _data(cfg, rep)
    times = np.geomspace(p.t0, cfg.ladder.t_end, cfg.opt("points", 33, int))
    run = linprop.linear_run(f, p, times, probes=False)
    det = linprop.scattering_details(run, cfg.ladder.t_end)
    res = np.asarray(linprop.residual_series(run, det.u_plus))
    rep.constants.update(envelope_C=det.envelope_C, consistency_ratio=det.consistency_ratio)
    files = {"residual.csv": csv_text(["t", "residual"], zip(times, res)),
             "u_plus.csv": field_to_csv(det.u_plus, "fourier")}
    lo = cfg.threshold("fit_lo", times[0])
    hi = cfg.threshold("fit_hi", times[-1])
    need = cfg.threshold("min_exponent", 0.0)
    if np.all(res[(times >= lo) & (times <= hi)] == 0):
        rep.values["note"] = "residual identically zero"
        rep.flag("linear-scatter/rate", "fitted decay exponent of ||u(t) - free(u_+)|| >= threshold", "zero",
                 need, True)
        return files
    fit = fit_exponent(times, res, (lo, hi))
    rep.exponents["residual"] = fit
    rep.flag("linear-scatter/rate", "fitted decay exponent of ||u(t) - free(u_+)|| >= threshold", fit["value"],
             need, fit["value"] >= need)
    lf = linprop.check_u_plus_lowfreq(det.u_plus, f, p)
    rep.constants["u_plus_lowfreq_ratio"] = lf["max_ratio"]
    return files


def _nl_run(cfg, f, p, t_end, dt=None, linear=False):
    dt = cfg.opt("dt", 0.05, float) if dt is None else dt
    pol = nlsolve.StepPolicy(dt_max=dt, dt0=cfg.opt("dt0", None, float))
    r = nlsolve.start_run(f, p, policy=pol, guard=cfg.opt("guard", 0.1, float), linear=linear,
                          ladder_ratio=2 ** (1 / cfg.opt("per_octave", 8, int)), diag_every=cfg.opt("diag_every", 10, int))
    return nlsolve.evolve_nonlinear(r, t_end)


def _order_checks(cfg, rep, f, p):
    t_end = cfg.opt("order_t", 2.0, float)
    dt = cfg.opt("order_dt", 0.02, float)
    us = [_nl_run(cfg, f, p, t_end, dt / k).u().coeffs() for k in (1, 2, 8)]
    e1, e2 = np.linalg.norm(us[0] - us[2]), np.linalg.norm(us[1] - us[2])
    ratio = float(e1 / e2) if e2 > 0 else float("inf")
    lo, hi = cfg.threshold("order_ratio_lo", 3.5), cfg.threshold("order_ratio_hi", 4.5)
    rep.values["dt_halving_ratio"] = ratio
    rep.flag("nonlinear-evolve/dt-halving", "error(dt)/error(dt/2) within [lo, hi] (second order)", ratio,
             [lo, hi], lo <= ratio <= hi)
    g = cfg.grid
    g2 = Grid(g.half_length, 2 * g.n)
    u1 = _nl_run(cfg, f, p, t_end, dt).u()
    u2 = _nl_run(cfg, initial_data(cfg.data, g2), p, t_end, dt).u()
    d = grid_doubling_difference(u1, u2)
    rep.values["grid_doubling_difference"] = d
    tol = cfg.threshold("grid_doubling", 1e-8)
    rep.flag("nonlinear-evolve/grid-doubling", "||u_n - u_2n|| on the coarse modes <= tol", d, tol, d <= tol)
    tc = transform_checks(cfg.data.seed)
    rep.values["transform_round_trips"] = tc
    for k, err in tc.items():
        rep.flag(f"transforms/{k}", "round-trip error <= tol", err, TRANSFORM_TOLERANCES[k], err <= TRANSFORM_TOLERANCES[k])


def transform_checks(seed: int = 0) -> dict:
    """Relative errors of the DFT, Parseval, ring-variable, filament and pseudo-conformal round trips."""
    from . import transforms as tr
    rng = np.random.default_rng(seed)
    g = Grid(20.0, 1024)
    f = SpectralField.from_physical(g, rng.normal(size=g.n) + 1j * rng.normal(size=g.n))
    v = f.physical()
    back = SpectralField.from_coeffs(g, f.coeffs()).physical()
    out = {"dft": float(np.max(np.abs(back - v)) / np.max(np.abs(v)))}
    out["parseval"] = float(abs(np.linalg.norm(f.coeffs()) - np.linalg.norm(v)) / np.linalg.norm(v))
    Y, Z = rng.normal(size=64) + 1j * rng.normal(size=64), rng.normal(size=64) + 1j * rng.normal(size=64)
    s = rng.uniform(1.5, 50, 64)
    Y2, Z2 = modes._YZ_vec(*modes._ring_vec(Y, Z, s, 0.5, 1), s, 0.5, 1)
    out["ring"] = float(max(np.max(np.abs(Y2 - Y)), np.max(np.abs(Z2 - Z))) / max(np.max(np.abs(Y)), np.max(np.abs(Z))))
    gh = Grid(np.pi, 32768)
    ct = tr.CurvatureTorsion(gh, 1 + 0.3 * np.exp(-4 * gh.x ** 2), 2 + np.cos(gh.x))
    b = tr.inverse_hasimoto(tr.hasimoto(ct))
    out["hasimoto"] = float(max(np.max(np.abs(b.c - ct.c)), np.max(np.abs(b.tau - ct.tau))))
    sm = SpectralField.from_physical(g, np.exp(-g.x ** 2 / 4) * (1 + 0.5j * g.x))
    pc = tr.pseudo_conformal_inverse(tr.pseudo_conformal(sm, 0.6), 0.6)
    out["pseudo_conformal"] = float(np.max(np.abs(pc.physical() - sm.physical())))
    return out


TRANSFORM_TOLERANCES = {"dft": 1e-12, "parseval": 1e-12, "ring": 1e-12, "hasimoto": 1e-8, "pseudo_conformal": 1e-10}


def grid_doubling_difference(u1: SpectralField, u2: SpectralField) -> float:
    """L2 distance of two band-limited results on the coarse grid's modes (same box, n vs 2n)."""
    g1, g2 = u1.grid, u2.grid
    idx = {int(k): i for i, k in enumerate(g2.k)}
    h2 = u2.hat()
    d = u1.hat() - np.array([h2[idx[int(k)]] for k in g1.k])
    return float(np.sqrt(np.sum(np.abs(d) ** 2) * g1.dxi / (2 * np.pi)))


def run_nonlinear_evolve(cfg, rep):
    p = cfg.params
    f = _data(cfg, rep)
    r = _nl_run(cfg, f, p, cfg.ladder.t_end)
    drift = nlsolve.q_drift_rate(r)
    _, res = nlsolve.energy_identity_residual(r)
    resmax = float(np.max(np.abs(res))) if len(res) else 0.0
    tq, te = cfg.threshold("q_drift", 1e-8), cfg.threshold("energy_identity", 1e-5)
    rep.flag("nonlinear-evolve/Q-drift", "|dQ/dt| <= tol", drift, tq, drift <= tq)
    rep.flag("nonlinear-evolve/energy-identity", "max |E(t) - E(t0) - int dE/dt| <= tol", resmax, te, resmax <= te)
    rep.values.update(steps=r.steps, t_final=r.t)
    if cfg.opt("fixed_point", False, bool):
        fp = fixed_point_check(cfg.grid, p)
        rep.values.update(fixed_point=fp)
        rep.flag("nonlinear-evolve/fixed-point", "v = a stays a and E(v_a) = 0 exactly", fp, 0.0,
                 fp["max_dev"] == 0 and fp["energy"] == 0)
    if cfg.opt("order_check", False, bool):
        _order_checks(cfg, rep, f, p)
    return {"diagnostics.csv": r.diagnostics_csv()}


def fixed_point_check(grid: Grid, p: Params, steps: int = 20, dt: float = 0.05) -> dict:
    v = SpectralField.from_physical(grid, np.full(grid.n, p.a + 0j))
    t = 1.0
    e0 = nlsolve.energy_E(v, t, p.a, p.sign)
    for _ in range(steps):
        v = nlsolve.step_strang(v, t, dt, p)
        t += dt
    return {"max_dev": float(np.max(np.abs(v.physical() - p.a))), "energy": float(e0)}


def run_nonlinear_scatter(cfg, rep):
    p = cfg.params
    f = _data(cfg, rep)
    T = cfg.ladder.t_end
    r = _nl_run(cfg, f, p, T)
    det = nlsolve.nonlinear_scattering_details(r)
    lo = cfg.threshold("fit_lo", 5.0)
    fit = fit_exponent(det.residual_t[:-1], det.residual[:-1], (lo, T))
    need = cfg.threshold("min_exponent", 0.10)
    rep.exponents["residual"] = fit
    rep.flag("nonlinear-scatter/rate", "fitted decay exponent of the pullback residual >= threshold",
             fit["value"], need, fit["value"] >= need)
    lf = nlsolve.check_f_plus_lowfreq(det.f_plus, f, p)["max_ratio"]
    rep.constants.update(f_plus_lowfreq_ratio=lf, completion_gap=det.completion_gap,
                         increment_slope=det.increment_slope)
    rep.flag("nonlinear-scatter/lowfreq-finite", "|xi|^{2(gamma+delta)} |f_+| / norm_X finite on xi^2 <= 1",
             lf, "finite", bool(np.isfinite(lf)))
    files = {"residual.csv": csv_text(["t", "residual"], zip(det.residual_t, det.residual)),
             "f_plus.csv": field_to_csv(det.f_plus, "fourier"), "diagnostics.csv": r.diagnostics_csv()}
    if cfg.opt("refine", False, bool):
        g2 = cfg.grid.refine(2)
        r2 = _nl_run(cfg, initial_data(cfg.data, g2), p, T)
        lf2 = nlsolve.check_f_plus_lowfreq(nlsolve.nonlinear_scattering_state(r2), initial_data(cfg.data, g2), p)
        lf2 = lf2["max_ratio"]
        d = abs(lf2 - lf) / lf if lf > 0 else abs(lf2)
        tol = cfg.threshold("refinement", 1e-2)
        rep.constants["f_plus_lowfreq_ratio_refined"] = lf2
        rep.flag("nonlinear-scatter/lowfreq-refinement", "relative change of the low-frequency ratio under refinement",
                 d, tol, d <= tol)
    return files


def run_modes(cfg, rep):
    """Mode ceiling with constant 1 over a sweep of a, plus the fitted two-sided constants."""
    alist = [float(s) for s in cfg.opt("a_list", [str(cfg.params.a)], list)]
    rng = np.random.default_rng(cfg.data.seed)
    xs = np.geomspace(cfg.opt("xi_min", 1e-2, float), cfg.opt("xi_max", 3.0, float), cfg.opt("modes", 30, int))
    times = np.geomspace(cfg.params.t0, cfg.ladder.t_end, cfg.opt("points", 25, int))
    up = rng.normal(size=len(xs)) + 1j * rng.normal(size=len(xs))
    um = rng.normal(size=len(xs)) + 1j * rng.normal(size=len(xs))
    slack = cfg.threshold("slack", 1e-9)
    files = {}
    worst = -np.inf
    for a in alist:
        p = cfg.params.replace(a=a)
        h = modes.mode_history(xs, up, um, times, p)
        base = np.abs(up) + np.abs(um)
        mag = np.maximum(np.abs(h.u_plus), np.abs(h.u_minus))
        excess = float(np.max(mag - (times[:, None] / times[0]) ** (a * a) * base))
        worst = max(worst, excess)
        ctl = modes.check_controls_bounds(h, p, p.delta)
        be = waveops.check_backward_estimates(h, p, p.delta, p.delta)
        rep.constants[f"a={a:g}"] = {"growth_max_ratio": ctl["growth_max_ratio"],
                                     "fitted_C": ctl["lowfreq_fitted_C"], "C_spread": ctl["lowfreq_C_spread"],
                                     "backward_C_high": be["C_high"], "backward_C_spread": be["C_high_spread"],
                                     "backward_low_excess": be["low_excess"]}
        files[f"history_a{a:g}.csv"] = h.to_csv()
    rep.flag("modes/growth-ceiling", "max |u(t,xi)| - (t/t0)^{a^2}(|u(t0,xi)|+|u(t0,-xi)|) <= slack", worst, slack,
             worst <= slack)
    return files


def run_wave_op(cfg, rep):
    p = cfg.params
    target = _data(cfg, rep)
    mode = cfg.opt("mode", "linear")
    if mode == "linear":
        T = cfg.threshold("T_infinity", 1e4)
        rt = waveops.linear_round_trip(target, p, T)
        tol = cfg.threshold("round_trip", 1e-3)
        rep.values.update({k: v for k, v in rt.items() if k != "u1"})
        err = max(rt["ring_error"], rt["pullback_error"])
        rep.flag("wave-op/linear-round-trip", "relative L2 error of the recovered u_+ (both routes) <= tol",
                 err, tol, err <= tol)
        return {"u1.csv": field_to_csv(rt["u1"], "fourier")}
    if mode != "nonlinear":
        raise ConfigurationError(f"wave-op mode must be linear or nonlinear, got {mode!r}")
    T = cfg.threshold("T_infinity", 200.0)
    pol = nlsolve.StepPolicy(dt_max=cfg.opt("dt", 0.05, float), dt0=cfg.opt("dt0", 0.01, float))
    res = waveops.nonlinear_wave_operator(target, p, T, policy=pol, guard=cfg.opt("guard", 0.1, float))
    rt = waveops.nonlinear_round_trip(res)
    r = res.report()
    rep.values.update(r)
    rep.values["round_trip_error"] = rt["error"]
    tol, rmax = cfg.threshold("round_trip", 5e-3), cfg.threshold("picard_ratio", 0.5)
    rep.flag("wave-op/picard-geometric", "max ratio of successive Picard differences <= threshold",
             r["max_ratio"], rmax, res.converged and r["max_ratio"] <= rmax)
    rep.flag("wave-op/nonlinear-round-trip", "relative L2 error of the recovered f_+ <= tol", rt["error"], tol,
             rt["error"] <= tol)
    return {"u1.csv": field_to_csv(res.u1, "fourier"),
            "picard.csv": csv_text(["iteration", "difference"], enumerate(res.diffs, 1))}


def run_curve(cfg, rep):
    """G_a profile and the reconstruction of chi_a from psi_a; optionally a perturbed run."""
    a = cfg.params.a
    X = cfg.opt("X_max", 50.0, float)
    G = geo.selfsimilar_profile(a, X)
    files = {"profile.csv": G.to_csv()}
    n_psi = cfg.opt("psi_n", 4096, int)
    gp = Grid(cfg.opt("psi_half_length", 1.0, float), n_psi)
    t_min = cfg.opt("t_min", 1e-2, float)
    per_oct = cfg.opt("per_octave", 16, int)
    k = int(round(per_oct * np.log2(1 / t_min)))
    times = 2.0 ** (-np.arange(k + 1) / per_oct)
    rec = geo.binormal_reconstruct([geo.psi_a_snapshot(gp, t, a) for t in times],
                                   geo.FrameState.standard(chi=(0, 0, 2 * a)), a)
    Gf = geo.selfsimilar_profile(a, 1.05 * gp.half_length / np.sqrt(t_min), h=2e-4, store_step=2e-4)
    err = 0.0
    for t, cv in zip(rec.times, rec.curves):
        _, _, e = geo.align_rigid(cv.chi, geo.selfsimilar_at(Gf, t, cv.x))
        err = max(err, e)
    tol = cfg.threshold("node_error", 1e-4)
    rep.flag("curve/selfsimilar-reconstruction", "node error of chi vs sqrt(t) G_a(x/sqrt t) after rigid alignment",
             err, tol, err <= tol)
    cd = geo.ctau_deviation(rec)
    dev = max(cd["c_dev_max"], cd["tau_dev_max"])
    rep.flag("curve/selfsimilar-ctau", "c and tau deviations on psi_a vanish (rounding)", dev,
             cfg.threshold("ctau_zero", 1e-12), dev <= cfg.threshold("ctau_zero", 1e-12))
    files["reconstruction_tmin.csv"] = rec.curves[-1].to_csv()
    if cfg.opt("perturbed", False, bool):
        files.update(_perturbed_reconstruction(cfg, rep))
    return files


def _perturbed_reconstruction(cfg, rep):
    p = cfg.params
    a = p.a
    f = _data(cfg, rep)
    s_max = cfg.ladder.t_end
    r = nlsolve.start_run(f, p, policy=nlsolve.StepPolicy(dt_max=cfg.opt("dt", 0.05, float), dt0=0.01),
                          ladder_ratio=2 ** (1 / cfg.opt("run_per_octave", 32, int)), diag_every=50)
    nlsolve.evolve_nonlinear(r, s_max)
    gp = Grid(cfg.opt("run_psi_half_length", 0.5, float), cfg.opt("run_psi_n", 16384, int))
    snaps = geo.snapshots_from_run(r, gp)
    rec = geo.binormal_reconstruct(snaps, geo.FrameState.standard(chi=(0, 0, 2 * a)), a,
                                   tau_window=gp.half_length)
    window = (1 / s_max, cfg.threshold("fit_hi", 0.1))
    cd = geo.ctau_deviation(rec, window)
    ch = geo.chi_trace_convergence(rec, window)
    rep.exponents.update(c_deviation=cd["c_exponent"], tau_deviation=cd["tau_exponent"], chi_trace=ch["exponent"])
    cmin = cfg.threshold("c_exponent_min", 0.2)
    gap, gtol = cd["gap"], cfg.threshold("gap_tol", 0.1)
    lo, hi = cfg.threshold("chi_lo", 0.45), cfg.threshold("chi_hi", 0.55)
    rep.flag("curve/c-exponent", "c-deviation exponent >= threshold", cd["c_exponent"], cmin, cd["c_exponent"] >= cmin)
    rep.flag("curve/tau-gap", "|tau exponent - c exponent - 1/2| <= tol", gap, [0.5, gtol], abs(gap - 0.5) <= gtol)
    rep.flag("curve/chi-trace", "chi-trace exponent in [lo, hi]", ch["exponent"], [lo, hi], lo <= ch["exponent"] <= hi)
    rows = zip(rec.times, rec.c_dev, rec.tau_dev, ch["distances"])
    return {"perturbed_deviation.csv": csv_text(["t", "c_dev", "tau_dev", "chi_distance"], rows),
            "perturbed_chi0.csv": csv_text(["x", "chi1", "chi2", "chi3"], ((x, *c) for x, c in zip(rec.x, rec.chi_0)))}


def run_corner_angle(cfg, rep):
    alist = [float(s) for s in cfg.opt("a_list", [str(cfg.params.a)], list)]
    X = cfg.opt("X_max", 1000.0, float)
    tol = cfg.threshold("law_tol", 1e-2)
    rows = []
    for a in alist:
        seq = []
        for XX in (X / 4, X / 2, X):
            seq.append(geo.tangent_limits(geo.selfsimilar_profile(a, XX)).sin_half)
        s = seq[-1]
        stated, classical = geo.corner_angle_stated(a), geo.corner_angle_law(a)
        steps = np.abs(np.diff(seq))
        # changes below the floor are at the resolution of the Cesaro averages
        mono = bool(steps[1] <= steps[0] or steps[1] <= cfg.threshold("refinement_floor", 1e-5))
        rep.values[f"a={a:g}"] = {"sin_half": s, "refinement": seq, "stated_law": stated,
                                  "classical_law": classical, "gap_stated": abs(s - stated),
                                  "gap_classical": abs(s - classical)}
        rep.flag(f"corner-angle/stated-law/a={a:g}", "|sin(theta/2) - exp(-a^2/2)| <= tol", abs(s - stated), tol,
                 abs(s - stated) <= tol)
        rep.flag(f"corner-angle/refinement/a={a:g}", "changes under X_max doubling shrink or fall below the floor",
                 steps, cfg.threshold("refinement_floor", 1e-5), mono)
        rows.append((a, s, stated, classical, *seq))
    return {"corner_angle.csv": csv_text(["a", "sin_half", "exp(-a^2/2)", "exp(-pi a^2/2)",
                                          "sin_half_X/4", "sin_half_X/2", "sin_half_X"], rows)}


RUNNERS = {
    "linear-evolve": run_linear_evolve, "linear-scatter": run_linear_scatter,
    "nonlinear-evolve": run_nonlinear_evolve, "nonlinear-scatter": run_nonlinear_scatter,
    "modes": run_modes, "wave-op": run_wave_op, "curve": run_curve, "corner-angle": run_corner_angle,
}


# ---------------------------------------------------------------------------
# orchestration

def _write(out: Path, files: dict, rep: ScatterReport):
    out.mkdir(parents=True, exist_ok=True)
    files = dict(files)
    files["report.json"] = rep.to_json()
    entries = {}
    for name in sorted(files):
        data = files[name].encode("utf-8")
        (out / name).write_bytes(data)
        entries[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
    man = {"schema": SCHEMA, "kind": rep.kind, "config_hash": rep.config_hash, "files": entries,
           "passed": rep.passed}
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[ScatterReport, dict]:
    """Run one experiment; write its files when ``out_dir`` (or cfg.out) is set.  Returns (report, files)."""
    if cfg.kind == "sweep":
        return _run_sweep(cfg, out_dir)
    rep = ScatterReport(cfg.kind, cfg.hash(), cfg.to_dict(), provenance=_versions())
    files = RUNNERS[cfg.kind](cfg, rep)
    out = out_dir or cfg.out
    if out:
        _write(Path(out), files, rep)
    return rep, files


def _run_sweep(cfg, out_dir):
    rep = ScatterReport("sweep", cfg.hash(), cfg.to_dict(), provenance=_versions())
    out = Path(out_dir or cfg.out) if (out_dir or cfg.out) else None
    codes = {}
    for item in cfg.opt("configs", [], list):
        path = Path(cfg.base_dir) / item
        sub = load_config(path)
        try:
            r, _ = run_experiment(sub, out / sub.name if out else None)
            code = EXIT_PASS if r.passed else EXIT_CHECK
            rep.flags.extend(r.flags)
        except NLSVortexError as e:
            code = exit_code(e)
            rep.flag(f"sweep/{sub.name}", "experiment completed", f"{type(e).__name__}: {e}", "no error", False)
        codes[sub.name] = code
    rep.values["exit_codes"] = codes
    if out:
        _write(out, {}, rep)
    return rep, {}


def exit_code(err: Exception) -> int:
    if isinstance(err, GuardRefusal):
        return EXIT_GUARD
    if isinstance(err, ConfigurationError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nlsvortex", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for k in KINDS:
        sp = sub.add_parser(k)
        if k == "wave-op":
            sp.add_argument("mode", nargs="?", choices=("linear", "nonlinear"))
        sp.add_argument("--config", type=Path)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)
    say = (lambda *a: None) if args.quiet else (lambda *a: print(*a))
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig(args.command)
        if cfg.kind != args.command:
            raise ConfigurationError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        if args.seed is not None:
            cfg = replace(cfg, data=replace(cfg.data, seed=args.seed))
        if getattr(args, "mode", None):
            cfg = replace(cfg, options={**cfg.options, "mode": args.mode})
        out = args.out or (Path(cfg.out) if cfg.out else Path("out") / (cfg.name or cfg.kind))
        rep, _ = run_experiment(cfg, out)
    except NLSVortexError as e:
        code = exit_code(e)
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return code
    for f in rep.flags:
        say(f"{'PASS' if f['passed'] else 'FAIL'}  {f['id']}  value={f['value']}  threshold={f['threshold']}")
    say(f"report: {out / 'report.json'}")
    if rep.kind == "sweep":
        codes = rep.values.get("exit_codes", {}).values()
        return max(codes, default=EXIT_PASS)
    return EXIT_PASS if rep.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
