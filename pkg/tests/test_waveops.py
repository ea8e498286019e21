import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsvortex import linprop, modes, nlsolve
from nlsvortex import waveops as wo
from nlsvortex.core import Grid, Params, SpectralField
from nlsvortex.errors import ConvergenceError, GuardRefusal


def band_data(g, lo=0.25, hi=1.0, amp=1.0):
    xi = g.xi
    m = (xi ** 2 >= lo) & (xi ** 2 <= hi)
    return SpectralField.from_hat(g, np.where(m, amp * np.exp(-((np.abs(xi) - 0.75) / 0.15) ** 2) * (1 + 0.3j * xi), 0))


def bump(g, amp):
    xi = g.xi
    hat = np.zeros(g.n, complex)
    m = np.abs(xi) < 1
    hat[m] = amp * np.exp(1 - 1 / (1 - xi[m] ** 2)) * (1 + 0.5j * xi[m])
    return SpectralField.from_hat(g, hat)


def rel(x, ref):
    d, r = x.coeffs().copy() - ref.coeffs(), ref.coeffs().copy()
    d[0] = r[0] = 0
    return np.linalg.norm(d) / np.linalg.norm(r)


@pytest.fixture(scope="module")
def table_half():
    return wo.ring_table(0.5, 1, s_low=1e-6)


# ---------------------------------------------------------------------------
# linear

def test_ring_picard_contracts(table_half):
    # the kernel integrates to (1/2) ln 2 over [4a^2, inf)
    assert table_half.ratios.max() < 0.5 * np.log(2)
    assert table_half.diffs[-1] <= 1e-13


def test_zero_target(table_half):
    g = Grid(32.0, 256)
    u1 = wo.linear_wave_operator(SpectralField.zeros(g), Params(a=0.5), table=table_half)
    assert np.array_equal(u1.coeffs(), np.zeros(g.n))


def test_vanishing_a_is_free_pullback():
    g = Grid(32.0, 256)
    up = SpectralField.from_hat(g, np.exp(-g.xi ** 2) * (1 + 0.5j * g.xi))
    u1 = wo.linear_wave_operator(up, Params(a=1e-9))
    free = linprop.free_from_asymptotic(up, 1.0)
    assert np.max(np.abs(u1.coeffs() - free.coeffs())[1:]) <= 1e-14


@pytest.mark.parametrize("sign", ["focusing", "defocusing"])
def test_band_round_trip(sign):
    g = Grid(64.0, 1024)
    p = Params(a=0.5, sign=sign)
    rt = wo.linear_round_trip(band_data(g), p, 1e4)
    assert rt["ring_error"] <= 1e-3
    assert rt["pullback_error"] <= 1e-3


@pytest.mark.parametrize("a", [0.3, 0.5, 2.0])
def test_matches_mode_propagator_inverse(a):
    # independent route: dense DOP853 propagator from the ring limit, including modes below s = 4a^2
    g = Grid(64.0, 512)
    up = SpectralField.from_hat(g, np.exp(-g.xi ** 2) * (1 + 0.5j * g.xi))
    p = Params(a=a)
    u1 = wo.linear_wave_operator(up, p)
    ref = linprop.from_asymptotic_state(up, 1.0, p)
    assert np.max(np.abs(u1.coeffs() - ref.coeffs())) <= 1e-6 * np.max(np.abs(ref.coeffs()))


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_inverse_of_asymptotic_state(seed, table_half):
    g = Grid(16.0, 128)
    rng = np.random.default_rng(seed)
    up = SpectralField.from_hat(g, (rng.normal(size=g.n) + 1j * rng.normal(size=g.n)) * np.exp(-g.xi ** 2 / 4))
    p = Params(a=0.5)
    back = linprop.asymptotic_state(wo.linear_wave_operator(up, p, table=table_half), 1.0, p)
    assert np.max(np.abs(back.coeffs() - up.coeffs())) <= 1e-6 * np.max(np.abs(up.coeffs()))


def test_zero_mode_kept():
    g = Grid(16.0, 64)
    c = np.zeros(g.n, complex)
    c[0] = 0.3 + 0.1j
    u1 = wo.linear_wave_operator(SpectralField.from_coeffs(g, c), Params(a=0.5))
    assert u1.coeffs()[0] == c[0]


def test_problem_guard():
    g = Grid(32.0, 256)
    with pytest.raises(GuardRefusal):
        wo.WaveOpProblem(bump(g, 1.0), Params(a=0.5))
    prob = wo.WaveOpProblem(bump(g, 0.01), Params(a=0.5))
    assert np.allclose(prob.linear().coeffs(), linprop.from_asymptotic_state(prob.target, 1.0, prob.params).coeffs(),
                       atol=1e-8)


# ---------------------------------------------------------------------------
# backward estimates

def history(a, seed=1):
    rng = np.random.default_rng(seed)
    xs = np.geomspace(1e-2, 3, 30)
    up = rng.normal(size=30) + 1j * rng.normal(size=30)
    um = rng.normal(size=30) + 1j * rng.normal(size=30)
    p = Params(a=a)
    return modes.mode_history(xs, up, um, np.geomspace(1, 1e4, 25), p), p


def test_backward_estimates_free_flow():
    h, p = history(1e-9)
    rep = wo.check_backward_estimates(h, p, 0.1, 0.1)
    assert rep["raw_spread"] <= 1e-9


def test_backward_estimates_regimes():
    h, p = history(0.5)
    rep = wo.check_backward_estimates(h, p, 0.1, 0.1)
    assert 0.1 <= rep["C_high"] <= 10
    assert rep["C_high_spread"] <= 0.2
    assert rep["low_excess"] <= 2.0


# ---------------------------------------------------------------------------
# nonlinear

def test_nonlinear_zero_data():
    g = Grid(32.0, 128)
    r = wo.nonlinear_wave_operator(SpectralField.zeros(g), Params(a=0.5), 10.0)
    assert np.array_equal(r.u1.coeffs(), np.zeros(g.n)) and r.converged


def test_forcing_off_is_linear_flow():
    g = Grid(64.0, 256)
    p = Params(a=0.5)
    f = bump(g, 0.02)
    r = wo.nonlinear_wave_operator(f, p, 20.0, nonlinear=False)
    assert np.array_equal(r.u1.coeffs(), f.coeffs())
    # the stored ladder is S(t,1) f
    t, u = r.ladder[-1]
    ref = linprop.propagate(f, 1.0, t, p)
    assert rel(u, ref) <= 1e-3


def test_nonlinear_reference_round_trip():
    g = Grid(512.0, 1024)
    p = Params(a=0.5)
    f = bump(g, 0.02)
    r = wo.nonlinear_wave_operator(f, p, 200.0)
    rep = r.report()
    assert r.converged and rep["iterations"] <= 8
    assert rep["max_ratio"] <= 0.5
    assert np.all(np.diff(np.log(r.diffs)) < 0)
    assert np.isfinite(rep["tail_bound"]) and rep["forcing_exponent"] > 1
    rt = wo.nonlinear_round_trip(r)
    assert rt["error"] <= 5e-3
    # the nonlinear correction is visible: u(1) differs from f_plus
    assert rel(r.u1, f) > 1e-3


def test_contraction_failure():
    g = Grid(128.0, 512)
    with pytest.raises(ConvergenceError):
        wo.nonlinear_wave_operator(bump(g, 3.0), Params(a=0.5), 20.0, guard=None)


def test_nonlinear_guard():
    g = Grid(128.0, 512)
    with pytest.raises(GuardRefusal):
        wo.nonlinear_wave_operator(bump(g, 1.0), Params(a=0.5), 20.0)
