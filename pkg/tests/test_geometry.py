import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsvortex import geometry as geo
from nlsvortex.core import Grid, SpectralField
from nlsvortex.errors import ConvergenceError, CurvaturePositivityError
from nlsvortex.transforms import CurvatureTorsion


def const_ct(g, c, tau):
    return CurvatureTorsion(g, np.full(g.n, float(c)), np.full(g.n, float(tau)))


def helix_frame(c, tau):
    d = c * c + tau * tau
    r, h, k = c / d, tau / d, 1 / np.sqrt((c / d) ** 2 + (tau / d) ** 2)
    T = np.array([0.0, r * k, h * k])
    N = np.array([-1.0, 0.0, 0.0])
    return geo.FrameState(T, N, np.cross(T, N), np.array([r, 0.0, 0.0])), r, h, k


def helix_points(r, h, k, s):
    return np.c_[r * np.cos(k * s), r * np.sin(k * s), h * k * s]


# ---------------------------------------------------------------------------
# Frenet integration

def test_circle_closes():
    R = 2.0
    g = Grid(np.pi * R, 2048)
    cv = geo.frenet_integrate(const_ct(g, 1 / R, 0.0), geo.FrameState.standard())
    center = np.array([0.0, R, 0.0])
    assert np.max(np.abs(np.linalg.norm(cv.chi - center, axis=1) - R)) <= 1e-10
    # the two ends meet on the far side
    assert np.linalg.norm(cv.chi[0] - np.array([0.0, 2 * R, 0.0])) <= 1e-10


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.2, 2.0), tau=st.floats(-2.0, 2.0))
def test_helix_closed_form(c, tau):
    g = Grid(10.0, 4096)
    init, r, h, k = helix_frame(c, tau)
    cv = geo.frenet_integrate(const_ct(g, c, tau), init)
    assert np.max(np.linalg.norm(cv.chi - helix_points(r, h, k, cv.x), axis=1)) <= 1e-7
    # radius c/(c^2+tau^2), pitch 2 pi tau/(c^2+tau^2)
    assert np.allclose(np.hypot(cv.chi[:, 0], cv.chi[:, 1]), c / (c * c + tau * tau), atol=1e-7)


def test_frame_stays_orthonormal():
    g = Grid(20.0, 8192)
    x = g.x
    ct = CurvatureTorsion(g, 1 + 0.5 * np.sin(x), x / 2)
    cv = geo.frenet_integrate(ct, geo.FrameState.standard())
    M = np.stack([cv.T, cv.N, cv.B], axis=1)
    err = np.abs(np.einsum("nij,nkj->nik", M, M) - np.eye(3))
    assert err.max() <= 1e-9


def test_closed_loop_curvature_torsion():
    g = Grid(8.0, 8192)
    x = g.x
    c = 1 + 0.3 * np.cos(x)
    tau = 0.5 * np.sin(x / 2)
    cv = geo.frenet_integrate(CurvatureTorsion(g, c, tau), geo.FrameState.standard())
    h = cv.x[1] - cv.x[0]
    d1 = np.gradient(cv.chi, h, axis=0)
    d2 = np.gradient(d1, h, axis=0)
    d3 = np.gradient(d2, h, axis=0)
    sl = slice(5, -5)
    cc = np.linalg.norm(np.cross(d1, d2), axis=1)
    tt = np.einsum("ij,ij->i", np.cross(d1, d2), d3) / cc ** 2
    xs = cv.x
    assert np.max(np.abs(cc - (1 + 0.3 * np.cos(xs)))[sl]) <= 1e-4
    assert np.max(np.abs(tt - 0.5 * np.sin(xs / 2))[sl]) <= 1e-3


def test_bad_initial_frame():
    g = Grid(1.0, 64)
    bad = geo.FrameState(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), np.zeros(3))
    with pytest.raises(Exception):
        geo.frenet_integrate(const_ct(g, 1.0, 0.0), bad)


def test_undefined_torsion_refused():
    g = Grid(1.0, 64)
    tau = np.zeros(g.n)
    tau[3] = np.nan
    with pytest.raises(CurvaturePositivityError):
        geo.frenet_integrate(CurvatureTorsion(g, np.ones(g.n), tau), geo.FrameState.standard())


def test_curve_csv_round_trip():
    g = Grid(2.0, 64)
    cv = geo.frenet_integrate(const_ct(g, 1.0, 0.5), geo.FrameState.standard())
    text = cv.to_csv()
    assert text.split("\r\n")[0] == "x,chi1,chi2,chi3,T1,T2,T3,N1,N2,N3,B1,B2,B3"
    back = geo.Curve.from_csv(text)
    assert np.array_equal(back.chi, cv.chi) and np.array_equal(back.B, cv.B)


# ---------------------------------------------------------------------------
# the self-similar profile

@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_profile_curvature_and_osculating_circle(a):
    G = geo.selfsimilar_profile(a, 5.0, h=5e-4, store_step=5e-4)
    k = geo.curvature_from_positions(G)
    assert np.max(np.abs(k - a)) <= 1e-6
    i0 = int(np.argmin(np.abs(G.x)))
    assert 1 / k[i0 - 1] == pytest.approx(1 / a, abs=1e-6)


def test_profile_reflection_symmetry():
    # c even and tau odd: G(-x) is the mirror image of G(x) in the plane normal to T(0)
    G = geo.selfsimilar_profile(0.8, 10.0, h=1e-3, store_step=1e-2)
    i0 = int(np.argmin(np.abs(G.x)))
    m = min(i0, len(G.x) - 1 - i0)
    Tp, Tm = G.T[i0:i0 + m + 1], G.T[i0 - m:i0 + 1][::-1]
    assert np.max(np.abs(Tm + geo.reflect_across(Tp, G.T[i0]))) <= 1e-10
    cp, cm = G.chi[i0:i0 + m + 1] - G.chi[i0], G.chi[i0 - m:i0 + 1][::-1] - G.chi[i0]
    assert np.max(np.abs(cm - geo.reflect_across(cp, G.T[i0]))) <= 1e-10


def test_straight_line_limits():
    g = Grid(100.0, 1024)
    cv = geo.frenet_integrate(const_ct(g, 0.0, 0.3), geo.FrameState.standard())
    tl = geo.tangent_limits(cv)
    assert np.allclose(tl.A_plus, tl.A_minus, atol=1e-12)
    # no corner: the angle between A+ and -A- is pi
    assert tl.sin_half == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("a", [0.5, 1.0])
def test_corner_angle_closed_form(a):
    # classical value for curvature a and torsion x/2
    tl = geo.tangent_limits(geo.selfsimilar_profile(a, 250.0))
    assert tl.sin_half == pytest.approx(np.exp(-np.pi * a * a / 2), abs=5e-5)
    assert np.all(np.diff(tl.envelope_plus) < 0)


def test_tangent_limits_not_converged():
    g = Grid(200.0, 16384)
    cv = geo.frenet_integrate(const_ct(g, 1.0, 0.5), geo.FrameState.standard())
    with pytest.raises(ConvergenceError):
        geo.tangent_limits(cv)


# ---------------------------------------------------------------------------
# reconstruction from filament functions

def ladder(t_min, per_octave):
    return 2.0 ** (-np.arange(0, int(round(per_octave * np.log2(1 / t_min))) + 1) / per_octave)


def test_reconstruct_selfsimilar_family():
    a = 0.5
    g = Grid(1.0, 4096)
    times = ladder(1e-2, 16)
    rec = geo.binormal_reconstruct([geo.psi_a_snapshot(g, t, a) for t in times],
                                   geo.FrameState.standard(chi=(0, 0, 2 * a)), a)
    G = geo.selfsimilar_profile(a, 10.5, h=2e-4, store_step=2e-4)
    for t, cv in zip(times, rec.curves):
        target = geo.selfsimilar_at(G, t, cv.x)
        _, _, err = geo.align_rigid(cv.chi, target)
        assert err <= 1e-4
        assert np.max(np.linalg.norm(cv.chi - target, axis=1)) <= 1e-4
    assert np.max(rec.c_dev * np.sqrt(rec.times)) <= 1e-13
    assert np.max(rec.tau_dev * rec.times) <= 1e-13
    rep = geo.chi_trace_convergence(rec, window=(1e-2, 0.1))
    assert rep["exponent"] == pytest.approx(0.5, abs=5e-3)


def test_chi0_quadrature_converges_like_sqrt_tmin():
    a = 0.5
    g = Grid(1.0, 4096)
    tl = geo.tangent_limits(geo.selfsimilar_profile(a, 1000.0))
    errs = []
    for t_min in (4e-2, 1e-2):
        rec = geo.binormal_reconstruct([geo.psi_a_snapshot(g, t, a) for t in ladder(t_min, 32)],
                                       geo.FrameState.standard(chi=(0, 0, 2 * a)), a)
        x = rec.x[:, None]
        corner = np.where(x >= 0, x * tl.A_plus, x * tl.A_minus)
        errs.append(np.max(np.linalg.norm(rec.chi_0 - corner, axis=1)))
    assert errs[1] < errs[0]
    assert errs[1] <= 1.5 * np.sqrt(1e-2)
    assert 1.4 < errs[0] / errs[1] < 2.8


def test_single_snapshot_is_frenet():
    a = 0.7
    g = Grid(2.0, 1024)
    snap = geo.psi_a_snapshot(g, 1.0, a)
    fr = geo.FrameState.standard(chi=(0, 0, 2 * a))
    rec = geo.binormal_reconstruct([snap], fr, a)
    c, tau, _, _ = snap.curvature_torsion()
    direct = geo.frenet_integrate(CurvatureTorsion(g, c, tau), fr)
    assert np.array_equal(rec.curves[0].chi, direct.chi)


def test_helix_moves_rigidly():
    # chi_t = chi_s x chi_ss turns the helix about its axis at rate -h k^3 and lifts it by r^2 k^3
    c, tau = 1.0, 0.6
    init, r, h, k = helix_frame(c, tau)
    g = Grid(4.0, 2048)
    times = ladder(0.1, 16)
    snaps = [geo.PsiSnapshot(t, SpectralField.from_physical(g, c * np.exp(1j * tau * g.x)),
                             1j * tau * c * np.exp(1j * tau * g.x), -tau * tau * c * np.exp(1j * tau * g.x))
             for t in times]
    rec = geo.binormal_reconstruct(snaps, init, c, amplitude_check=False)
    om = -h * k ** 3
    for t, cv in zip(times, rec.curves):
        ang = om * (t - 1)
        Rz = np.array([[np.cos(ang), -np.sin(ang), 0], [np.sin(ang), np.cos(ang), 0], [0, 0, 1]])
        want = helix_points(r, h, k, cv.x) @ Rz.T + np.array([0, 0, r * r * k ** 3 * (t - 1)])
        assert np.max(np.linalg.norm(cv.chi - want, axis=1)) <= 1e-7


def test_amplitude_window_refused():
    a = 0.5
    g = Grid(1.0, 256)
    snap = geo.psi_a_snapshot(g, 1.0, a)
    bad = geo.PsiSnapshot(1.0, SpectralField.from_physical(g, 2 * snap.psi.physical()), 2 * snap.psi_x, 2 * snap.psi_xx)
    with pytest.raises(CurvaturePositivityError):
        geo.binormal_reconstruct([bad], geo.FrameState.standard(), a)


def test_ctau_deviation_zero_for_selfsimilar():
    a = 1.0
    g = Grid(1.0, 2048)
    rec = geo.binormal_reconstruct([geo.psi_a_snapshot(g, t, a) for t in ladder(0.1, 8)],
                                   geo.FrameState.standard(chi=(0, 0, 2 * a)), a)
    rep = geo.ctau_deviation(rec)
    assert rep["c_dev_max"] <= 1e-12 and rep["tau_dev_max"] <= 1e-12
