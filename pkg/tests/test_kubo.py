import numpy as np
import pytest
from scipy import integrate

from reldiff.field import DegenerateSpectralDensity, make_spectrum
from reldiff.kubo import (AnalyticProfile, CorrelationNotResolved, ProfileNotAdmissible, TabulatedProfile,
                          constant_profile, default_grid, diffusion_constant, gaussian_profile, h_profiles_from_field,
                          kappa2_from_g, kappa2_from_H, oracle_profile, power_profile, predict_covariance_growth)
from reldiff.minkowski import boost_matrix


def _exp_profile(extent=20.0, n=20001):
    s = np.linspace(0.0, extent, n)
    return TabulatedProfile(s, np.exp(-s), np.zeros_like(s))


@pytest.fixture(scope="module")
def ir_oracle():
    return oracle_profile(make_spectrum("kubo-ir"), 0.1)


# --------------------------------------------------------------------------- profiles


def test_tabulated_profile_validation():
    with pytest.raises(ValueError):
        TabulatedProfile(np.array([0.5, 1.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        TabulatedProfile(np.array([0.0, 1.0, 0.5]), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        TabulatedProfile(np.array([0.0, 1.0]), np.zeros(3), np.zeros(2))


def test_default_grid():
    s = default_grid(2.0)
    assert s.size == 512 and s[0] == 0.0 and s[-1] == 20.0


def test_analytic_profile_relations():
    prof = gaussian_profile(1.3, 0.7)
    s = np.linspace(0, 3, 7)
    np.testing.assert_allclose(prof.H1(s), 2 * prof.dg(s * s))
    np.testing.assert_allclose(prof.H(s), 4 * s * s * prof.d2g(s * s))
    tab = prof.tabulate()
    np.testing.assert_array_equal(tab.H1, prof.H1(tab.s))
    assert tab.H[0] == 0.0


def test_second_derivatives_by_finite_differences():
    prof = power_profile(0.8, 1.5, 2.0)
    eta = np.diag([1.0, -1, -1, -1])
    g = lambda x: prof.g(x @ eta @ x)  # noqa: E731
    x = np.array([0.4, 0.3, -0.2, 0.1])
    h = 1e-4
    num = np.zeros((4, 4))
    for m in range(4):
        for n in range(4):
            em, en = h * np.eye(4)[m], h * np.eye(4)[n]
            num[m, n] = (g(x + em + en) - g(x + em - en) - g(x - em + en) + g(x - em - en)) / (4 * h * h)
    np.testing.assert_allclose(prof.second_derivatives(x), num, atol=1e-6)


def test_profile_csv(tmp_path, ir_oracle):
    path = tmp_path / "profile.csv"
    ir_oracle.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,H1,H,stderr_H1,stderr_H"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], ir_oracle.H1)


# --------------------------------------------------------------------------- Monte Carlo profiles


def test_zero_field_profiles():
    prof = h_profiles_from_field(make_spectrum("reference"), 64, 3, [1.0, 0, 0, 0], epsilon=0.0)
    assert np.all(prof.H1 == 0) and np.all(prof.H == 0)
    assert kappa2_from_H(prof) == 0.0


def test_zero_spectral_density_is_degenerate():
    with pytest.raises(DegenerateSpectralDensity):
        h_profiles_from_field(make_spectrum("zero"), 64, 3, [1.0, 0, 0, 0])


def test_profile_estimation_arguments():
    spec = make_spectrum("kubo-ir")
    with pytest.raises(ValueError, match="n_seeds"):
        h_profiles_from_field(spec, 64, 1, [1.0, 0, 0, 0])
    with pytest.raises(ValueError, match="mass shell"):
        h_profiles_from_field(spec, 64, 4, [1.0, 0.5, 0, 0])


@pytest.mark.slow
def test_rest_frame_profile_matches_oracle(ir_oracle):
    mc = h_profiles_from_field(make_spectrum("kubo-ir"), 2048, 60, [1.0, 0, 0, 0], seed=1, epsilon=0.1)
    for name in ("H1", "H"):
        est, se, ref = getattr(mc, name), getattr(mc, "stderr_" + name), getattr(ir_oracle, name)
        z = np.abs(est - ref) / np.where(se > 0, se, np.inf)
        assert np.max(z) <= 5.0, name
    assert mc.H[0] == 0.0


@pytest.mark.slow
def test_co_boosted_profile_is_invariant(ir_oracle):
    L = boost_matrix([0.5, -0.3, 0.2])
    p = L @ np.array([1.0, 0, 0, 0])
    mc = h_profiles_from_field(make_spectrum("kubo-ir"), 2048, 60, p, seed=2, epsilon=0.1, frame=L)
    for name in ("H1", "H"):
        z = np.abs(getattr(mc, name) - getattr(ir_oracle, name)) / np.maximum(getattr(mc, "stderr_" + name), 1e-300)
        assert np.max(z[1:]) <= 5.0, name


def test_direct_estimator_matches_mode_estimator(ir_oracle):
    s = ir_oracle.s[::16]
    spec = make_spectrum("kubo-ir")
    a = h_profiles_from_field(spec, 512, 20, [1.0, 0, 0, 0], s=s, seed=4, epsilon=0.1, estimator="direct")
    z = np.abs(a.H1 - ir_oracle.H1[::16]) / np.maximum(a.stderr_H1, 1e-300)
    assert np.max(z) <= 5.0


# --------------------------------------------------------------------------- Kubo constant


def test_kappa2_from_exponential_profile():
    s = default_grid(1.0)
    prof = TabulatedProfile(s, np.exp(-s), np.zeros_like(s))
    assert kappa2_from_H(prof) == pytest.approx(4.0, rel=1e-3)


def test_kappa2_of_zero_profiles():
    s = default_grid(1.0)
    assert kappa2_from_H(TabulatedProfile(s, np.zeros_like(s), np.zeros_like(s))) == 0.0
    assert kappa2_from_g(constant_profile(2.5)) == 0.0


def test_kappa2_gaussian_closed_form():
    assert kappa2_from_g(gaussian_profile()) == pytest.approx(-2 * np.sqrt(np.pi), rel=1e-12)
    assert kappa2_from_g(gaussian_profile(2.0, 3.0)) == pytest.approx(-2 * 2.0 * np.sqrt(np.pi) / 3.0, rel=1e-12)


@pytest.mark.parametrize("prof, grid", [
    (gaussian_profile(), None),
    (gaussian_profile(0.5, 2.0), None),
    (power_profile(1.0, 1.0, 2.0), np.linspace(0.0, 200.0, 20001)),
    (power_profile(1.0, 1.0, 3.5), np.linspace(0.0, 100.0, 10001)),
])
def test_kappa2_routes_agree(prof, grid):
    a = kappa2_from_g(prof)
    b = kappa2_from_H(prof.tabulate(grid))
    assert abs(a - b) <= 1e-8 * abs(a)


def test_undecayed_profile_is_rejected():
    s = default_grid(1.0)
    with pytest.raises(CorrelationNotResolved, match="correlation not resolved"):
        kappa2_from_H(TabulatedProfile(s, np.exp(-s / 100.0), np.zeros_like(s)))


def test_reference_spectrum_profile_does_not_decay():
    # the sharp k0 cutoff leaves an oscillating tail at ~1% of the peak at s = 10
    with pytest.raises(CorrelationNotResolved):
        kappa2_from_H(oracle_profile(make_spectrum("reference"), 0.1))


def test_stderr_widens_decay_allowance():
    s = default_grid(1.0)
    H1 = np.exp(-s) + 0.02 * (s == s[-1])
    with pytest.raises(CorrelationNotResolved):
        kappa2_from_H(TabulatedProfile(s, H1, np.zeros_like(s)))
    noisy = TabulatedProfile(s, H1, np.zeros_like(s), stderr_q=np.full(s.size, 0.02))
    assert kappa2_from_H(noisy) == pytest.approx(4.0, rel=1e-2)


@pytest.mark.parametrize("power", [-0.5, -1.0])
def test_inadmissible_power_profiles(power):
    with pytest.raises(ProfileNotAdmissible, match="profile not admissible"):
        kappa2_from_g(power_profile(1.0, 1.0, power))


def test_power_profile_closed_form():
    # 4 int_0^inf -n (1 + s^2)^(-n-1) ds = -4 n sqrt(pi) Gamma(n + 1/2) / (2 Gamma(n + 1))
    from scipy.special import gamma
    n = 2.0
    expected = -4 * n * np.sqrt(np.pi) * gamma(n + 0.5) / (2 * gamma(n + 1))
    assert kappa2_from_g(power_profile(1.0, 1.0, n)) == pytest.approx(expected, rel=1e-10)


def test_diffusion_constant_records_sign():
    assert diffusion_constant(-2.5) == (2.5, -1)
    assert diffusion_constant(0.3) == (0.3, 1)
    assert diffusion_constant(0.0) == (0.0, 0)


def test_kubo_ir_oracle_value(ir_oracle):
    # |kappa^2| = eps^2 scale for the infrared spectrum
    assert kappa2_from_H(ir_oracle) == pytest.approx(-0.01, rel=1e-6)


# --------------------------------------------------------------------------- pre-Markov predictor


def test_growth_at_zero():
    assert predict_covariance_growth(_exp_profile(), 0.0) == 0.0
    assert predict_covariance_growth(gaussian_profile(), 0.0) == 0.0
    with pytest.raises(ValueError):
        predict_covariance_growth(_exp_profile(), -1.0)


def test_growth_exponential_closed_form():
    tau = np.array([0.1, 0.5, 1.0, 2.0, 5.0, 15.0])
    got = predict_covariance_growth(_exp_profile(), tau)
    np.testing.assert_allclose(got, 2 * (tau - 1 + np.exp(-tau)), rtol=1e-6)


def test_growth_analytic_matches_tabulated():
    prof = gaussian_profile(1.0, 1.5)
    tau = np.array([0.3, 1.0, 4.0])
    fine = prof.tabulate(np.linspace(0, 15, 30001))
    np.testing.assert_allclose(predict_covariance_growth(prof, tau), predict_covariance_growth(fine, tau), rtol=1e-7)


def test_growth_large_tau_ratio():
    prof = _exp_profile()
    tau = 100.0
    ratio = predict_covariance_growth(prof, tau) / tau / (kappa2_from_H(prof) / 2)
    # for H1 = e^{-s} the ratio is exactly 1 - 1/tau, i.e. at the 1% edge; allow rounding only
    assert abs(ratio - 1.0) <= 0.01 + 1e-9
    g = gaussian_profile()
    ratio = predict_covariance_growth(g, 100.0 * g.decay_scale) / 100.0 / (kappa2_from_g(g) / 2)
    assert abs(ratio - 1.0) <= 0.01


def test_growth_nondecreasing_and_slope():
    prof = _exp_profile()
    tau = np.linspace(0, 300, 601)
    c = predict_covariance_growth(prof, tau)
    assert np.all(np.diff(c) >= 0)
    slope = (c[-1] - c[400]) / (tau[-1] - tau[400])
    assert slope == pytest.approx(kappa2_from_H(prof) / 2, rel=0.01)


def test_growth_integrand_identity():
    # the double integral equals int_0^tau (tau - s) q(s) ds by direct quadrature
    prof = power_profile(1.0, 1.0, 2.0)
    q = lambda s: 2 * prof.H1(s) + prof.H(s)  # noqa: E731
    inner = lambda s: integrate.quad(q, 0, s)[0]  # noqa: E731
    expected = integrate.quad(inner, 0, 3.0)[0]
    assert predict_covariance_growth(prof, 3.0) == pytest.approx(expected, rel=1e-8)
