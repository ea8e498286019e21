import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsvortex import linprop
from nlsvortex import nlsolve as nl
from nlsvortex.core import PHYSICAL, Grid, Params, SpectralField, norm_X
from nlsvortex.errors import ConvergenceError, GuardRefusal, InstabilityError

TINY = 1e-12


def gaussian(g, amp, phase=0.3):
    return SpectralField.from_physical(g, amp * np.exp(-g.x ** 2 / 4) * (1 + 1j * phase))


def bump_data(g, amp):
    xi = g.xi
    b = np.where(np.abs(xi) < 1, np.exp(1 - 1 / np.maximum(1 - xi ** 2, 1e-300)), 0.0)
    return SpectralField.from_hat(g, amp * b * (1 + 0.5j * xi))


def run_to(u1, p, T, dt, **kw):
    r = nl.start_run(u1, p, policy=nl.StepPolicy(dt_max=dt), **kw)
    return nl.evolve_nonlinear(r, T)


# ---------------------------------------------------------------------------
# the nonlinearity

def test_F_zero():
    g = Grid(10.0, 64)
    assert np.all(nl.F_of_u(SpectralField.zeros(g), 2.0, Params(a=1.0)).coeffs() == 0)


@pytest.mark.parametrize("sign,sg", [("focusing", 1), ("defocusing", -1)])
def test_F_constant_real(sign, sg):
    g = Grid(10.0, 64)
    a, eps = 0.7, 0.01
    F = nl.F_of_u(SpectralField.from_physical(g, np.full(g.n, eps)), 1.0, Params(a=a, sign=sign))
    assert np.allclose(F.physical(), sg * (eps ** 3 + 3 * a * eps ** 2), rtol=1e-12, atol=0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), a=st.floats(0.1, 2.0), t=st.floats(1.0, 50.0))
def test_F_L1_bound(seed, a, t):
    # band-limited so the cubic products sit inside the de-aliasing window
    g = Grid(20.0, 256)
    rng = np.random.default_rng(seed)
    c = np.zeros(g.n, complex)
    keep = np.abs(g.k) <= g.n // 9
    c[keep] = rng.normal(size=keep.sum()) + 1j * rng.normal(size=keep.sum())
    u = SpectralField.from_coeffs(g, 0.05 * c)
    F = nl.F_of_u(u, t, Params(a=a))
    dx = g.dx
    lhs = dx * np.sum(np.abs(F.physical()))
    up = u.physical()
    rhs = max(1.0, 3 * a) * (dx * np.sum(np.abs(up) ** 2) + dx * np.sum(np.abs(up) ** 3))
    assert lhs <= rhs * (1 + 1e-9)


# ---------------------------------------------------------------------------
# one split step

def test_background_is_fixed_point():
    g = Grid(30.0, 256)
    for a in (0.3, 1.0, 2.5):
        v = SpectralField.from_physical(g, np.full(g.n, a, complex))
        out = nl.step_strang(v, 1.7, 0.05, Params(a=a))
        assert np.array_equal(out.physical(), v.physical())


def test_zero_background_zero_field():
    g = Grid(30.0, 256)
    out = nl.step_strang(SpectralField.zeros(g), 1.0, 0.1, Params(a=TINY))
    assert np.max(np.abs(out.physical())) <= 1e-24


def test_step_second_order():
    g = Grid(40.0, 512)
    p = Params(a=0.8)
    rng = np.random.default_rng(3)
    c = np.zeros(g.n, complex)
    keep = np.abs(g.xi) <= 2
    c[keep] = rng.normal(size=keep.sum()) + 1j * rng.normal(size=keep.sum())
    u1 = SpectralField.from_coeffs(g, 0.002 * c * np.exp(-g.xi ** 2))
    finals = [run_to(u1, p, 1.5, dt).u().coeffs() for dt in (0.05, 0.025, 0.0125)]
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert 3.5 < e1 / e2 < 4.5


def test_constant_field_integrals():
    g = Grid(12.0, 128)
    a, t = 0.6, 3.0
    zero = SpectralField.zeros(g)
    assert nl.conservation_Q(zero, a) == pytest.approx(-2 * g.L * a ** 2, rel=1e-13)
    for sign, sg in (("focusing", 1), ("defocusing", -1)):
        assert nl.energy_E(zero, t, a, sign) == pytest.approx(-sg * 2 * g.L * a ** 4 / (4 * t), rel=1e-13)
    back = SpectralField.from_physical(g, np.full(g.n, a, complex))
    assert nl.conservation_Q(back, a) == 0.0
    assert nl.energy_E(back, t, a, "focusing") == 0.0


# ---------------------------------------------------------------------------
# runs

def test_zero_run_stays_zero():
    g = Grid(20.0, 128)
    r = run_to(SpectralField.zeros(g), Params(a=1.0), 3.0, 0.01)
    assert all(np.all(s.coeffs() == 0) for s in r.snapshots)
    assert np.all(r.series("Q") == 0) and np.all(r.series("E") == 0)


def test_conservation_and_energy_identity():
    g = Grid(64.0, 1024)
    p = Params(a=1.0)
    r = run_to(gaussian(g, 0.01), p, 3.0, 1e-3, diag_every=1)
    assert nl.q_drift_rate(r) <= 1e-8
    _, res = nl.energy_identity_residual(r)
    assert np.max(np.abs(res)) <= 1e-5


def test_views_are_consistent():
    g = Grid(32.0, 256)
    p = Params(a=0.7)
    r = run_to(gaussian(g, 0.01), p, 2.0, 0.01)
    v = r.v()
    v2 = nl.v_from_u(r.u(), r.t, p)
    assert np.max(np.abs(v.physical() - v2.physical())) <= 1e-12
    u2 = nl.u_from_v(v, r.t, p)
    assert np.max(np.abs(u2.physical() - r.u().physical())) <= 1e-12


def test_gauge_consistency_with_u_form():
    g = Grid(64.0, 1024)
    p = Params(a=1.0)
    u1 = gaussian(g, 0.01)
    r = run_to(u1, p, 2.0, 5e-4)
    direct = nl.evolve_u_form(u1, 1.0, 2.0, p, 1e-3)
    scale = np.max(np.abs(direct.coeffs()))
    assert np.max(np.abs(r.u().coeffs() - direct.coeffs())) <= 1e-6 * scale


def test_grid_doubling_band_limited():
    p = Params(a=0.5)
    out = []
    for n in (512, 1024):
        g = Grid(64.0, n)
        out.append((g, run_to(bump_data(g, 0.01), p, 3.0, 0.01).u()))
    (g1, u1), (g2, u2) = out
    # compare on the coarse grid's modes
    c1 = u1.hat()
    c2 = dict(zip(np.round(g2.xi, 12), u2.hat()))
    d = np.array([c1[i] - c2[np.round(g1.xi[i], 12)] for i in range(g1.n)])
    assert np.sqrt(np.sum(np.abs(d) ** 2) * g1.dxi / (2 * np.pi)) < 1e-8


def test_guard_refusal():
    g = Grid(32.0, 256)
    with pytest.raises(GuardRefusal):
        run_to(gaussian(g, 0.5), Params(a=0.5), 2.0, 0.01)


def test_instability_detected():
    g = Grid(32.0, 256)
    r = nl.start_run(gaussian(g, 0.001), Params(a=1.0))
    r.w = r.w * 1e4
    with pytest.raises(InstabilityError):
        r._record()


def test_diagnostics_csv():
    g = Grid(32.0, 256)
    r = run_to(gaussian(g, 0.001), Params(a=1.0), 1.2, 0.01)
    lines = r.diagnostics_csv().split("\r\n")
    assert lines[0] == "t,Q,E,re_phi,im_phi,l2,linf"
    assert len(lines) - 2 == len(r.series("t"))


# ---------------------------------------------------------------------------
# scattering and zero modes

def test_scattering_of_zero_run():
    g = Grid(64.0, 256)
    r = run_to(SpectralField.zeros(g), Params(a=0.5), 50.0, 0.1)
    fp = nl.nonlinear_scattering_state(r)
    assert np.all(fp.coeffs() == 0)


def test_pure_cubic_tiny_data_scatters():
    g = Grid(256.0, 1024)
    p = Params(a=TINY)
    out = []
    for amp in (1e-3, 5e-4):
        r = nl.start_run(bump_data(g, amp), p, policy=nl.StepPolicy(dt_max=0.05), guard=np.inf)
        nl.evolve_nonlinear(r, 60.0)
        d = nl.nonlinear_scattering_details(r)
        # linear completion and the pullback agree: the pullback has converged
        assert d.completion_gap <= 1e-6 * amp
        out.append(d.f_plus.coeffs() / amp)
    # halving the amplitude changes the normalized limit only at the cubic order
    assert np.max(np.abs(out[0] - out[1])) <= 1e-3 * np.max(np.abs(out[0]))


def test_nonlinear_residual_decays():
    g = Grid(512.0, 1024)
    p = Params(a=0.5)
    r = run_to(bump_data(g, 0.02), p, 150.0, 0.05)
    d = nl.nonlinear_scattering_details(r)
    assert d.residual_slope < 0
    rate, _, _ = linprop.rate_fit(np.c_[d.residual_t, d.residual], window=(1.4, 150.0))
    assert rate > 0.05


def test_non_cauchy_pullback_detected():
    g = Grid(64.0, 256)
    r = run_to(bump_data(g, 0.01), Params(a=0.5), 20.0, 0.05)
    # tamper with the recorded snapshots so the pullbacks drift away
    r.snapshots = [s * np.exp(2j * k) for k, s in enumerate(r.snapshots)]
    with pytest.raises(ConvergenceError):
        nl.nonlinear_scattering_details(r)


def test_f_plus_lowfreq_zero():
    g = Grid(64.0, 256)
    z = SpectralField.zeros(g)
    assert nl.check_f_plus_lowfreq(z, z, Params(a=0.5))["max_ratio"] == 0.0


def test_linear_only_run_matches_linprop():
    g = Grid(512.0, 1024)
    p = Params(a=0.5)
    u1 = bump_data(g, 0.02)
    r = run_to(u1, p, 100.0, 0.02, linear=True)
    fp = nl.nonlinear_scattering_state(r)
    up = linprop.asymptotic_state(u1, 1.0, p)
    mine = nl.check_f_plus_lowfreq(fp, u1, p)["max_ratio"]
    ref = linprop.check_u_plus_lowfreq(up, u1, p)["max_ratio"]
    assert mine == pytest.approx(ref, rel=1e-3)


def test_zero_mode_flat_without_real_part():
    g = Grid(32.0, 256)
    u1 = SpectralField.from_physical(g, 1j * np.exp(-g.x ** 2) * 0.01)
    r = run_to(u1, Params(a=1.0), 20.0, 0.05, linear=True)
    phi = r.series("int_w")
    assert np.max(np.abs(phi - phi[0])) <= 1e-14


def test_zero_mode_linear_slope_exact():
    g = Grid(32.0, 256)
    w1 = np.exp(-g.x ** 2) / np.sqrt(np.pi)        # integral 1
    r = run_to(SpectralField.from_physical(g, w1), Params(a=1.0), 50.0, 0.05, linear=True)
    rep = nl.zero_mode_growth(r)
    assert rep["slope"] == pytest.approx(2.0, abs=1e-10)
    iw = r.series("int_w")
    assert np.allclose(iw, 1 + 2j * np.log(r.series("t")), atol=1e-10)


def test_zero_mode_nonlinear_leading_term():
    g = Grid(128.0, 1024)
    p = Params(a=0.5)
    u1 = SpectralField.from_physical(g, 0.008 * np.exp(-g.x ** 2 / 4))
    r = run_to(u1, p, 40.0, 0.02)
    rep = nl.zero_mode_growth(r)
    assert rep["growth_regime"]
    assert rep["relative_gap"] <= 0.25
