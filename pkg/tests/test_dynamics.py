import numpy as np
import pytest
from scipy.interpolate import CubicHermiteSpline

from reldiff import dynamics
from reldiff.dynamics import (IntegratorToleranceExceeded, ParticleParams, PhasePoint, lab_step, propagate,
                              proper_step)
from reldiff.field import sample_realization
from reldiff.minkowski import lorentz_force, minkowski_dot


@pytest.fixture(scope="module")
def realization():
    from reldiff.field import make_spectrum
    return sample_realization(make_spectrum("reference"), 4096, 17, epsilon=0.1)


def test_phase_point_validation():
    with pytest.raises(ValueError, match="mass shell"):
        PhasePoint(np.zeros(4), [1.0, 0.5, 0, 0])
    with pytest.raises(ValueError, match="p0"):
        PhasePoint(np.zeros(4), [-1.0, 0, 0, 0])
    with pytest.raises(ValueError):
        PhasePoint(np.zeros(3), [1.0, 0, 0, 0])
    with pytest.raises(ValueError):
        ParticleParams(m=0.0)
    pt = PhasePoint.from_momentum([0.3, 0.4, 0.0], params=ParticleParams(2.0, 1.5))
    assert pt.p[0] == pytest.approx(np.sqrt(9.0 + 0.25))


def test_free_proper_step():
    prm = ParticleParams(2.0, 1.5)
    st = PhasePoint.from_momentum([0.3, -0.2, 0.7], x=[1.0, 2.0, 3.0, 4.0], params=prm)
    new = proper_step(st, None, 0.25)
    np.testing.assert_allclose(new.x, st.x + 0.25 / prm.mc * st.p, rtol=1e-15)
    np.testing.assert_array_equal(new.p, st.p)


def test_free_lab_step():
    prm = ParticleParams(1.0, 2.0)
    st = PhasePoint.from_momentum([0.3, -0.2, 0.7], params=prm)
    new = lab_step(st, None, 0.1)
    np.testing.assert_allclose(new.x[1:], st.p[1:] / st.p[0] * prm.c * 0.1, rtol=1e-12)
    assert abs(new.x[0] - prm.c * 0.1) <= 1e-12 * prm.c * 0.1
    np.testing.assert_array_equal(new.p, st.p)


def test_steps_require_positive_increment():
    st = PhasePoint.at_rest()
    with pytest.raises(ValueError):
        proper_step(st, None, 0.0)
    with pytest.raises(ValueError):
        lab_step(st, None, -1.0)
    with pytest.raises(ValueError):
        propagate(st, None, 0.0, 0.1)
    with pytest.raises(TypeError):
        proper_step(st, np.zeros(5), 0.1)


def test_magnetic_gyration():
    B, prm = 0.8, ParticleParams(1.0, 1.0)
    st = PhasePoint.from_momentum([0.6, 0.0, 0.0], params=prm)
    f = np.array([0, 0, 0, 0, 0, B])
    one = proper_step(st, f, 0.05)
    assert abs(np.linalg.norm(one.p[1:]) - 0.6) <= 1e-12
    period = 2 * np.pi * prm.mc / B
    n = 1000
    traj = propagate(st, f, period, period / n)
    np.testing.assert_allclose(traj.p[-1], st.p, atol=1e-11)
    np.testing.assert_allclose(traj.x[-1, 1:], st.x[1:], atol=1e-10)
    # the spatial orbit is a circle of radius |p| / B
    centre = np.array([0.0, -0.6 / B])
    radius = np.linalg.norm(traj.x[:, 1:3] - centre, axis=1)
    np.testing.assert_allclose(radius, 0.6 / B, rtol=1e-9)


def test_hyperbolic_motion_proper_time():
    E, mc = 0.5, 1.0
    traj = propagate(PhasePoint.at_rest(), np.array([E, 0, 0, 0, 0, 0]), 4.0, 1e-3)
    tau = traj.s
    np.testing.assert_allclose(traj.p[:, 0], mc * np.cosh(E * tau / mc), rtol=1e-8)
    np.testing.assert_allclose(traj.p[1:, 1], mc * np.sinh(E * tau[1:] / mc), rtol=1e-8)
    np.testing.assert_allclose(traj.x[:, 0], mc / E * np.sinh(E * tau / mc), rtol=1e-8, atol=1e-15)
    np.testing.assert_allclose(traj.x[:, 1], mc / E * (np.cosh(E * tau / mc) - 1), rtol=1e-8, atol=1e-15)


def test_hyperbolic_motion_lab_time():
    # on the lab clock: p1 = E x0, p0 = sqrt(m^2 c^2 + p1^2)
    E = 0.5
    traj = propagate(PhasePoint.at_rest(), np.array([E, 0, 0, 0, 0, 0]), 4.0, 1e-3, clock="lab")
    x0 = traj.x[:, 0]
    np.testing.assert_allclose(traj.p[1:, 1], E * x0[1:], rtol=1e-8)
    np.testing.assert_allclose(traj.p[:, 0], np.sqrt(1 + (E * x0) ** 2), rtol=1e-8)
    np.testing.assert_allclose(traj.tau, np.arcsinh(E * x0) / E, rtol=1e-8, atol=1e-15)


def test_lab_landing(realization):
    st = PhasePoint.from_momentum([0.5, -1.0, 0.3])
    dt = 0.05
    for _ in range(50):
        new = lab_step(st, realization, dt)
        assert abs(new.x[0] - (st.x[0] + dt)) <= 1e-12 * dt
        st = new


def test_free_propagation_straight_line():
    st = PhasePoint.from_momentum([0.2, 0.1, -0.4])
    traj = propagate(st, None, 10.0, 0.5)
    assert traj.mass_shell_drift == 0.0
    np.testing.assert_allclose(traj.x, traj.s[:, None] * st.p[None, :], rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("clock", ["proper", "lab"])
def test_mass_shell_in_random_field(realization, clock):
    st = PhasePoint.from_momentum([0.3, 0.2, -0.1])
    traj = propagate(st, realization, 100.0, 0.01, clock=clock)
    assert len(traj) == 10_001
    shell = minkowski_dot(traj.p, traj.p)
    assert np.max(np.abs(shell - 1.0)) <= 1e-9
    assert traj.mass_shell_drift <= 1e-9
    assert np.all(traj.p[:, 0] > 0)


def test_propagation_is_deterministic(realization):
    st = PhasePoint.from_momentum([0.3, 0.2, -0.1])
    a = propagate(st, realization, 5.0, 0.1)
    b = propagate(st, realization, 5.0, 0.1)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.p, b.p)


@pytest.mark.parametrize("clock", ["proper", "lab"])
def test_second_order_convergence(realization, clock):
    st = PhasePoint.from_momentum([0.5, 0.0, 0.2])
    ends = [propagate(st, realization, 2.0, h, clock=clock) for h in (0.04, 0.02, 0.01)]
    y = [np.concatenate([t.x[-1], t.p[-1]]) for t in ends]
    ratio = np.linalg.norm(y[0] - y[1]) / np.linalg.norm(y[1] - y[2])
    assert 3.4 < ratio < 4.6
    # halving the step cuts the error against the quarter-step run by about (1 - 1/16)/(1/4 - 1/16) = 5
    ratio_ref = np.linalg.norm(y[0] - y[2]) / np.linalg.norm(y[1] - y[2])
    assert 4.0 < ratio_ref < 6.0


def test_clock_equivalence(realization):
    st = PhasePoint.from_momentum([0.4, -0.3, 0.2])
    proper = propagate(st, realization, 2.0, 2e-4)
    lab = propagate(st, realization, 1.5, 2e-4, clock="lab")
    mc = st.params.mc
    # Hermite interpolation of the proper-time run in x0, using dx/dx0 = p/p0 and dp/dx0 = force/p0
    x0 = proper.x[:, 0]
    F = realization(proper.x)
    force = lorentz_force(F, proper.p) / mc
    dx = proper.p / proper.p[:, :1]
    dp = force / (proper.p[:, :1] / mc)
    xs = CubicHermiteSpline(x0, proper.x, dx)(lab.x[:, 0])
    ps = CubicHermiteSpline(x0, proper.p, dp)(lab.x[:, 0])
    assert np.max(np.abs(xs - lab.x)) <= 1e-6
    assert np.max(np.abs(ps - lab.p)) <= 1e-6
    tau = np.interp(lab.x[:, 0], x0, proper.s)
    assert np.max(np.abs(tau - lab.tau)) <= 1e-6


def test_integrator_tolerance_error(monkeypatch, realization):
    monkeypatch.setattr(dynamics, "DRIFT_LIMIT", -1.0)
    with pytest.raises(IntegratorToleranceExceeded, match="integrator tolerance exceeded"):
        propagate(PhasePoint.at_rest(), realization, 1.0, 0.1)


def test_trajectory_csv(tmp_path, realization):
    traj = propagate(PhasePoint.at_rest(), realization, 1.0, 0.25)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,x0,x1,x2,x3,p0,p1,p2,p3"
    assert len(lines) == len(traj) + 1
    np.testing.assert_allclose(np.loadtxt(path, delimiter=",", skiprows=1)[:, 5:], traj.p, rtol=1e-15)


def test_unit_scaling_of_physical_constants():
    # with c != 1 the lab step advances x0 by c dt, and dx/dtau = p/(mc)
    prm = ParticleParams(2.0, 3.0)
    st = PhasePoint.from_momentum([1.0, 0, 0], params=prm)
    new = lab_step(st, None, 0.2)
    assert new.x[0] == pytest.approx(0.6, rel=1e-12)
    np.testing.assert_allclose(new.x[1], 0.6 * st.p[1] / st.p[0], rtol=1e-12)
