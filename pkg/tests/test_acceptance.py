"""Acceptance suite at full scale; one PASS/FAIL line per criterion is printed at the end.

Ensemble criteria drive the command line on the shipped ``configs/acceptance*.ini``
files, so the suite checks exactly what a user reproduces with ``reldiff``.
Run it alone with ``pytest -m acceptance``.
"""
import json
import os
from pathlib import Path

import numpy as np
import pytest
from scipy.interpolate import CubicHermiteSpline

from reldiff.cli import main
from reldiff.diffusion import DiffusionParams, Kind, MomentumGrid, diffusion_matrix, generator_matrix, \
    sde_diffusion_root, stationary_flux
from reldiff.dynamics import ParticleParams, PhasePoint, propagate
from reldiff.field import make_spectrum, sample_realization
from reldiff.harness import ExperimentConfig, run_diffusion_ensemble
from reldiff.kubo import kappa2_from_g, kappa2_from_H, power_profile
from reldiff.minkowski import lorentz_force, minkowski_dot

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
WORKERS = os.cpu_count() or 1


def _cli(tmp_path_factory, command, config, workers=WORKERS):
    out = tmp_path_factory.mktemp(config.replace(".ini", ""))
    code = main([command, "--config", str(CONFIGS / config), "--out", str(out), "--workers", str(workers)])
    man = json.loads((out / "manifest.json").read_text())
    timings = json.loads((out / man["timings"]).read_text())
    return code, man, timings, out


@pytest.fixture(scope="module")
def field_run(tmp_path_factory):
    return _cli(tmp_path_factory, "validate-field", "acceptance_field.ini")


@pytest.fixture(scope="module")
def ensemble_run(tmp_path_factory):
    return _cli(tmp_path_factory, "run", "acceptance.ini")


@pytest.fixture(scope="module")
def realization():
    return sample_realization(make_spectrum("reference"), 4096, 101, epsilon=0.1)


def _details(run, name):
    exp = run[1]["experiments"][name]
    return exp["status"], exp["details"]


# --------------------------------------------------------------------------- 1-3: field


@pytest.mark.criterion(1, "covariance fidelity (36 components, 10 separations, 1e4 x 4096 modes)")
def test_covariance_fidelity(field_run, record_property):
    status, d = _details(field_run, "two_point")
    seconds = field_run[2]["two_point"]
    record_property("detail", f"max z = {d['max_z']:.2f}, {seconds:.0f} s")
    assert d["n_realizations"] == 10_000 and field_run[1]["config"]["base"]["n_modes"] == 4096
    assert status == "pass" and d["max_z"] <= 5.0
    assert seconds <= 600.0
    rows = (field_run[3] / "two_point.csv").read_text().splitlines()[1:]
    assert len(rows) == 36 * 10


@pytest.mark.criterion(2, "positivity sharpness (1e3 causal PSD, 1e3 spacelike not PSD)")
def test_positivity_sharpness(field_run, record_property):
    status, d = _details(field_run, "positivity")
    seconds = field_run[2]["positivity"]
    record_property("detail", f"causal PSD {d['causal_psd']}/{d['n']}, spacelike PSD {d['spacelike_psd']}/{d['n']}, "
                              f"{seconds:.2f} s")
    assert status == "pass" and d["n"] == 1000
    assert d["causal_psd"] == 1000 and d["spacelike_psd"] == 0
    assert seconds <= 10.0


@pytest.mark.criterion(3, "Bianchi constraint (per mode <= 1e-10, finite differences O(h^2))")
def test_bianchi_constraint(field_run, record_property):
    status, d = _details(field_run, "bianchi")
    record_property("detail", f"per mode {d['per_mode_max']:.1e}, orders {[round(o, 2) for o in d['fd_orders']]}")
    assert status == "pass" and d["per_mode_max"] <= 1e-10
    assert all(1.5 < o < 2.5 for o in d["fd_orders"])


# --------------------------------------------------------------------------- 4-5: dynamics


@pytest.mark.criterion(4, "mass shell (1e4 steps at eps = 0.1; hyperbolic motion to 1e-8)")
@pytest.mark.parametrize("clock", ["proper", "lab"])
def test_mass_shell(realization, clock, record_property):
    traj = propagate(PhasePoint.from_momentum([0.3, 0.2, -0.1]), realization, 100.0, 0.01, clock=clock)
    drift = float(np.max(np.abs(minkowski_dot(traj.p, traj.p) - 1.0)))
    record_property("detail", f"{clock} drift {drift:.1e}")
    assert len(traj) == 10_001 and drift <= 1e-9


@pytest.mark.criterion(4, "mass shell (1e4 steps at eps = 0.1; hyperbolic motion to 1e-8)")
def test_hyperbolic_motion(record_property):
    E = 0.5
    traj = propagate(PhasePoint.at_rest(), np.array([E, 0, 0, 0, 0, 0]), 4.0, 1e-3)
    t = traj.s
    rel = max(float(np.max(np.abs(traj.p[:, 0] / np.cosh(E * t) - 1))),
              float(np.max(np.abs(traj.p[1:, 1] / np.sinh(E * t[1:]) - 1))),
              float(np.max(np.abs(traj.x[1:, 0] / (np.sinh(E * t[1:]) / E) - 1))))
    record_property("detail", f"hyperbolic {rel:.1e}")
    assert rel <= 1e-8


@pytest.mark.criterion(5, "clock equivalence (proper vs lab through one realization, 1e-6)")
def test_clock_equivalence(realization, record_property):
    st = PhasePoint.from_momentum([0.4, -0.3, 0.2])
    proper = propagate(st, realization, 2.0, 2e-4)
    lab = propagate(st, realization, 1.5, 2e-4, clock="lab")
    # Hermite interpolation of the proper-time run at the lab run's x0 values
    x0 = proper.x[:, 0]
    force = lorentz_force(realization(proper.x), proper.p)
    xs = CubicHermiteSpline(x0, proper.x, proper.p / proper.p[:, :1])(lab.x[:, 0])
    ps = CubicHermiteSpline(x0, proper.p, force / proper.p[:, :1])(lab.x[:, 0])
    tau = CubicHermiteSpline(x0, proper.s, 1.0 / proper.p[:, 0])(lab.x[:, 0])
    dev = max(float(np.max(np.abs(xs - lab.x))), float(np.max(np.abs(ps - lab.p))),
              float(np.max(np.abs(tau - lab.tau))))
    record_property("detail", f"max deviation {dev:.1e}")
    assert dev <= 1e-6


# --------------------------------------------------------------------------- 6: Kubo routes


@pytest.mark.criterion(6, "Kubo routes (1e-8 analytic, 2% Monte Carlo)")
def test_kubo_routes_analytic(tmp_path_factory, record_property):
    code, man, _, _ = _cli(tmp_path_factory, "kubo", "kubo_gaussian.ini")
    rel = [man["experiments"]["kubo"]["details"]["relative_difference"]]
    for prof, grid in ((power_profile(1.0, 1.0, 2.0), np.linspace(0.0, 200.0, 20001)),
                       (power_profile(1.0, 1.0, 3.5), np.linspace(0.0, 100.0, 10001))):
        a, b = kappa2_from_g(prof), kappa2_from_H(prof.tabulate(grid))
        rel.append(abs(a - b) / abs(a))
    record_property("detail", f"analytic max {max(rel):.1e}")
    assert code == 0 and max(rel) <= 1e-8


@pytest.mark.criterion(6, "Kubo routes (1e-8 analytic, 2% Monte Carlo)")
def test_kubo_routes_monte_carlo(tmp_path_factory, record_property):
    code, man, _, _ = _cli(tmp_path_factory, "kubo", "acceptance_kubo.ini")
    d = man["experiments"]["kubo"]["details"]
    record_property("detail", f"Monte Carlo {100 * d['relative_difference']:.2f}%")
    assert code == 0 and d["relative_difference"] <= 0.02


# --------------------------------------------------------------------------- 7: Markov limit


@pytest.mark.criterion(7, "Markov limit (early-window growth = kappa^2 m^2 c^2 within 10%, 1e5 particles)")
def test_markov_limit(ensemble_run, record_property):
    status, d = _details(ensemble_run, "markov_limit")
    seconds = ensemble_run[2]["field"] + ensemble_run[2]["markov_limit"]
    record_property("detail", f"rel. dev. {[round(r, 4) for r in d['rel_dev']]}, off-diag z {d['offdiag_z']:.2f}, "
                              f"{seconds / 60:.1f} min")
    assert ensemble_run[1]["experiments"]["field"]["details"]["n_particles"] == 100_000
    assert status == "pass" and max(d["rel_dev"]) <= 0.1
    assert seconds <= 1800.0


# --------------------------------------------------------------------------- 8: generator identities


@pytest.mark.criterion(8, "generator identities (symmetry 1e-10, sigma sigma^T 1e-12, zero flux 1e-10)")
def test_generator_identities(record_property):
    worst = 0.0
    for kind in (Kind.SCHAY_DUDLEY, Kind.JUTTNER_LAB):
        L, omega = generator_matrix(kind, MomentumGrid(15, 3.0))
        W = (L.T.multiply(omega)).T.tocsr()
        worst = max(worst, abs(W - W.T).max() / abs(W).max())
    rng = np.random.default_rng(8)
    dp = DiffusionParams(0.8, ParticleParams(1.2, 1.0))
    p = rng.standard_normal((1000, 3)) * 2
    S = sde_diffusion_root(p, dp)
    target = dp.kappa2 * diffusion_matrix(p, dp.params)
    recon = float(np.max(np.abs(S @ np.swapaxes(S, -1, -2) - target)) / np.abs(target).max())
    flux = float(np.max(np.abs(stationary_flux(rng.standard_normal((1000, 3)) * 3,
                                               DiffusionParams(1.0, kind=Kind.JUTTNER_LAB)))))
    record_property("detail", f"symmetry {worst:.1e}, sigma {recon:.1e}, flux {flux:.1e}")
    assert worst <= 1e-10 and recon <= 1e-12 and flux <= 1e-10


# --------------------------------------------------------------------------- 9-10: long-time behaviour


@pytest.mark.criterion(9, "Juttner equilibration (1e5 walkers, chi-square at 1%, control at T = 2 fails)")
def test_juttner_equilibration(ensemble_run, record_property):
    status, d = _details(ensemble_run, "equilibration")
    cfg = ensemble_run[1]["config"]
    record_property("detail", f"p = {d['p_value']:.3f}, control p = {d['control_p_value']:.1e}, "
                              f"stopped at {d['stop_time']}, halving max z {max(d['halving']['z'].values()):.2f}")
    assert cfg["experiments"]["equilibration"]["n_particles"] == 100_000 and cfg["equilibration"]["n_bins"] >= 30
    assert status == "pass" and d["mixed"]
    assert d["p_value"] >= 0.01 and d["control_p_value"] < 0.01


@pytest.mark.criterion(10, "no proper-time equilibrium (late growth > 5 combined standard errors)")
def test_proper_time_growth(ensemble_run, record_property):
    status, d = _details(ensemble_run, "proper_growth")
    record_property("detail", f"<|p|^2> {d['p_sq'][0]:.2f} -> {d['p_sq'][1]:.2f}, z = {d['z']:.1f}")
    assert status == "pass" and d["z"] > 5.0


# --------------------------------------------------------------------------- 11: determinism


@pytest.mark.criterion(11, "determinism (bit-identical manifests, worker-count independence)")
def test_determinism(tmp_path_factory, record_property):
    runs = [_cli(tmp_path_factory, "run", "smoke.ini", workers=w) for w in (1, 1, 3)]
    texts = [(r[3] / "manifest.json").read_bytes() for r in runs]
    assert all(r[0] == 0 for r in runs)
    assert texts[0] == texts[1] == texts[2]
    cfg = ExperimentConfig(name="workers", diffusion_kind="juttner-lab", kappa2=1.0, n_particles=5000,
                           horizon=1.0, step=0.01, checkpoints=4)
    a, b = run_diffusion_ensemble(cfg, workers=1), run_diffusion_ensemble(cfg, workers=3)
    rel = max(float(np.max(np.abs(a[k] - b[k]) / np.maximum(np.abs(a[k]), 1e-300)))
              for k in ("mean_p", "mean_pp", "mean_p0", "mean_p0sq"))
    record_property("detail", f"manifests identical, moment rel. diff {rel:.1e}")
    assert rel <= 1e-10
