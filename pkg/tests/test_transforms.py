import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsvortex import transforms as tr
from nlsvortex.core import PHYSICAL, Grid, Params, SpectralField, l2_norm
from nlsvortex.errors import DomainError


def smooth_field(g, seed, width=2.0, band=3.0):
    rng = np.random.default_rng(seed)
    c = (rng.normal(size=g.n) + 1j * rng.normal(size=g.n)) * np.exp(-(g.xi / band) ** 2 * 8)
    f = SpectralField.from_coeffs(g, c).physical() * np.exp(-(g.x / (g.L / 4)) ** 2)
    return SpectralField.from_physical(g, f)


# ---------------------------------------------------------------------------
# filament function

def test_constant_curvature_no_torsion():
    g = Grid(5.0, 128)
    psi = tr.hasimoto(tr.CurvatureTorsion(g, np.full(g.n, 0.7), np.zeros(g.n)))
    assert np.array_equal(psi.physical(), np.full(g.n, 0.7 + 0j))


def test_selfsimilar_filament_function():
    g = Grid(4.0, 4096)
    t, a = 0.5, 0.8
    psi = tr.hasimoto(tr.selfsimilar_ct(g, t, a)).physical()
    # trapezoid of a linear torsion is exact
    assert np.max(np.abs(psi - tr.psi_a(t, g.x, a))) <= 1e-12


def test_round_trip_periodic():
    g = Grid(np.pi, 512)
    x = g.x
    c = 1.0 + 0.3 * np.exp(-4 * x ** 2)
    tau = 2.0 + np.cos(x)                # integral over the box is 4 pi, so psi is periodic
    ct = tr.CurvatureTorsion(g, c, tau)
    back = tr.inverse_hasimoto(tr.hasimoto(ct))
    assert np.max(np.abs(back.c - c)) <= 1e-12
    # the cumulative trapezoid sets the accuracy of the phase
    assert np.max(np.abs(back.tau - tau)) <= 1e-4


def test_inverse_constant_and_plane_wave():
    g = Grid(np.pi, 64)
    ct = tr.inverse_hasimoto(SpectralField.from_physical(g, np.full(g.n, 2.0 + 0j)))
    assert np.allclose(ct.c, 2.0) and np.max(np.abs(ct.tau)) <= 1e-13
    lam = 3.0
    ct = tr.inverse_hasimoto(SpectralField.from_physical(g, 0.5 * np.exp(1j * lam * g.x)))
    assert np.allclose(ct.tau, lam, atol=1e-12)


def test_inverse_on_chirp_with_finite_differences():
    g = Grid(3.0, 8192)
    t, a = 0.4, 1.2
    ct = tr.inverse_hasimoto(SpectralField.from_physical(g, tr.psi_a(t, g.x, a)), derivative="fd")
    assert np.allclose(ct.c, a / np.sqrt(t), rtol=1e-13)
    assert np.max(np.abs(ct.tau - g.x / (2 * t))[3:-3]) <= 1e-8


def test_torsion_undefined_where_curvature_vanishes():
    g = Grid(np.pi, 64)
    p = np.exp(1j * g.x) * np.maximum(np.cos(g.x), 0)
    ct = tr.inverse_hasimoto(SpectralField.from_physical(g, p), threshold=1e-8)
    assert np.all(np.isnan(ct.tau[np.cos(g.x) <= 1e-8]))
    assert not ct.defined.all()


# ---------------------------------------------------------------------------
# band-limited evaluation and the pseudo-conformal map

def test_eval_bandlimited_matches_direct_sum():
    g = Grid(6.0, 64)
    f = smooth_field(g, 1)
    y = np.linspace(-5.5, 5.3, 37)
    direct = np.array([np.sum(f.hat() * np.exp(1j * g.xi * yy)) / (2 * g.L) for yy in y])
    # trigonometric interpolant with the Nyquist term split in half
    nq = g.k == -(g.n // 2)
    direct -= np.array([f.hat()[nq][0] / (2 * g.L) * (np.exp(1j * g.xi[nq][0] * yy) - np.cos(g.xi[nq][0] * yy))
                        for yy in y])
    got = tr.eval_bandlimited(f, y[0], y[1] - y[0], len(y))
    assert np.max(np.abs(got - direct)) <= 1e-12


def test_eval_bandlimited_reproduces_nodes():
    g = Grid(6.0, 64)
    f = smooth_field(g, 2)
    got = tr.eval_bandlimited(f, g.x[0], g.dx, g.n)
    assert np.max(np.abs(got - f.physical())) <= 1e-12


def test_background_maps_to_psi_a():
    g = Grid(40.0, 512)
    a, t = 0.9, 0.25
    v = SpectralField.from_physical(g, np.full(g.n, a + 0j))
    psi = tr.pseudo_conformal(v, t)
    # the chirp phase reaches ~100 at the box edge, so allow for its rounding
    assert np.max(np.abs(psi.physical() - tr.psi_a(t, psi.grid.x, a))) <= 1e-10


def test_form_at_t_one():
    g = Grid(20.0, 256)
    v = smooth_field(g, 3)
    psi = tr.pseudo_conformal(v, 1.0)
    want = np.exp(1j * g.x ** 2 / 4) * np.conj(v.physical())
    assert np.max(np.abs(psi.physical() - want)) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), t=st.floats(0.2, 5.0))
def test_isometry_and_involution(seed, t):
    g = Grid(30.0, 512)
    v = smooth_field(g, seed)
    psi = tr.pseudo_conformal(v, t)
    assert abs(l2_norm(psi) - l2_norm(v)) <= 1e-6 * l2_norm(v)
    back = tr.pseudo_conformal_inverse(psi, t)
    assert back.grid.n == g.n and back.grid.half_length == pytest.approx(g.half_length, rel=1e-14)
    assert np.max(np.abs(back.physical() - v.physical())) <= 1e-10 * np.max(np.abs(v.physical()))


def test_isometry_off_nodes():
    g = Grid(30.0, 512)
    v = smooth_field(g, 7)
    out = Grid(20.9, 1024)             # covers x/t up to the input box edge
    psi = tr.pseudo_conformal(v, 0.7, out)
    assert abs(l2_norm(psi) - l2_norm(v)) <= 1e-6 * l2_norm(v)


def test_box_too_small():
    g = Grid(10.0, 64)
    with pytest.raises(DomainError):
        tr.pseudo_conformal(SpectralField.zeros(g), 0.5, Grid(10.0, 64))


# ---------------------------------------------------------------------------
# assembling psi from u

def test_assemble_zero_perturbation():
    g = Grid(64.0, 256)
    p = Params(a=0.6)
    for t in (1.0, 0.3):
        psi = tr.assemble_psi(SpectralField.zeros(g), t, p)
        assert np.array_equal(psi.physical(), tr.psi_a(t, psi.grid.x, p.a))


def test_assemble_at_t_one():
    g = Grid(32.0, 256)
    p = Params(a=0.6)
    u = smooth_field(g, 4)
    psi = tr.assemble_psi(u, 1.0, p).physical()
    want = np.exp(1j * g.x ** 2 / 4) * (p.a + np.conj(u.physical()))
    assert np.max(np.abs(psi - want)) <= 1e-12


def test_assemble_derivatives_match_finite_differences():
    g = Grid(64.0, 512)
    p = Params(a=0.6)
    u = SpectralField.from_physical(g, 0.05 * np.exp(-g.x ** 2 / 8) * (1 + 0.5j * g.x))
    t = 0.5
    out = Grid(3.0, 4096)
    psi, px, pxx = tr.assemble_psi_derivatives(u, t, p, out)
    assert np.max(np.abs(psi - tr.assemble_psi(u, t, p, out).physical())) <= 1e-12
    fd = tr._fd_derivative(psi, out.dx)
    fd2 = tr._fd_derivative(px, out.dx)
    assert np.max(np.abs(fd - px)[3:-3]) <= 1e-8 * np.max(np.abs(px))
    assert np.max(np.abs(fd2 - pxx)[3:-3]) <= 1e-7 * np.max(np.abs(pxx))


def test_amplitude_window_warning():
    g = Grid(64.0, 256)
    p = Params(a=0.5)
    big = SpectralField.from_physical(g, 0.6 * np.exp(-g.x ** 2))
    with pytest.warns(RuntimeWarning):
        tr.assemble_psi(big, 1.0, p, small_data=True)
    small = SpectralField.from_physical(g, 0.05 * np.exp(-g.x ** 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        psi = tr.assemble_psi(small, 1.0, p, small_data=True)
    lo, hi = tr.amplitude_window(psi, 1.0, p.a)
    assert 0.5 <= lo <= hi <= 1.5


def test_assemble_requires_unit_interval():
    g = Grid(8.0, 64)
    with pytest.raises(DomainError):
        tr.assemble_psi(SpectralField.zeros(g), 2.0, Params(a=1.0))
