"""Command-line entry point: ``reldiff {validate-field,kubo,run} --config FILE``.

Exit codes: 0 all checks passed, 1 an experiment or check failed, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import TAG_MISC, generator
from .config import ConfigError, RunConfig, load_config
from .field import (CovarianceNotPSD, DegenerateSpectralDensity, PSD_TOL, analytic_two_point,
                    bianchi_residual, empirical_two_point_many, mode_bianchi_residuals,
                    mode_covariance, sample_realization)
from .harness import (compare_reports, lab_vs_proper_discrepancy, markov_limit_check, proper_time_growth,
                      run_diffusion_ensemble, run_equilibration, run_field_ensemble, step_halving_check)
from .kubo import (CorrelationNotResolved, ProfileNotAdmissible, constant_profile, gaussian_profile,
                   h_profiles_from_field, kappa2_from_g, kappa2_from_H, oracle_profile, power_profile,
                   spectrum_decay_scale)
from .oracle import SpectralTwoPoint
from .stats import z_scores

log = logging.getLogger("reldiff")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ANALYTIC_ROUTE_TOL = 1e-8
MC_ROUTE_TOL = 0.02
BIANCHI_TOL = 1e-10


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _rows_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])
    return path


class Session:
    """Collects per-experiment verdicts, output files and timings for one command."""

    def __init__(self, command: str, cfg: RunConfig, out: Path | None):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.results: dict[str, dict] = {}
        self.timings: dict[str, float] = {}
        self.lines: list[str] = []

    def report(self, line: str) -> None:
        self.lines.append(line)
        print(line)

    def record(self, name: str, passed: bool, files=(), **details) -> None:
        self.results[name] = {"status": "pass" if passed else "fail", "files": [Path(f) for f in files],
                              "details": details}
        self.report(f"{'PASS' if passed else 'FAIL'} {name}" + (f": {details['message']}" if "message" in details else ""))

    @property
    def passed(self) -> bool:
        return all(r["status"] == "pass" for r in self.results.values())

    def finish(self) -> int:
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            summary = self.out / "summary.txt"
            write_atomic(summary, "\n".join(self.lines) + "\n")
            experiments = {}
            for name, r in self.results.items():
                experiments[name] = {
                    "status": r["status"],
                    "details": _jsonable(r["details"]),
                    "outputs": {f.name: {"path": str(f.relative_to(self.out)), "sha256": sha256(f)}
                                for f in r["files"]},
                }
            manifest = {
                "tool": "reldiff", "version": __version__, "command": self.command,
                "seed": self.cfg.run.seed,
                "config": json.loads(self.cfg.model_dump_json(by_alias=True, exclude={"source"})),
                "experiments": experiments,
                "summary": {"path": summary.name, "sha256": sha256(summary)},
                "timings": "timings.json",
                "passed": self.passed,
            }
            write_atomic(self.out / "timings.json", json.dumps(self.timings, indent=2, sort_keys=True) + "\n")
            write_atomic(self.out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return EXIT_OK if self.passed else EXIT_FAIL


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else str(float(obj))
    return obj if obj is None or isinstance(obj, str) else str(obj)


# --------------------------------------------------------------------------- validate-field


def _random_wavevectors(rng, n: int, k_max: float, t_lo: float, t_hi: float) -> np.ndarray:
    k0 = rng.uniform(0.05, k_max, n)
    t = rng.uniform(t_lo, t_hi, n)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.column_stack([k0, (t * k0)[:, None] * d])


def _psd_flags(k: np.ndarray) -> np.ndarray:
    M = mode_covariance(k)
    lam = np.linalg.eigvalsh(M)
    return lam[:, 0] >= -PSD_TOL * np.trace(M, axis1=1, axis2=2)


def cmd_validate_field(session: Session, workers: int) -> None:
    cfg = session.cfg.base
    opts = session.cfg.validate_
    seed = cfg.seed
    spec = cfg.spectral_density()
    rng = generator(seed, TAG_MISC, 1)

    t0 = time.perf_counter()
    causal = _psd_flags(_random_wavevectors(rng, opts.n_positivity, cfg.k_max, 0.0, 1.0))
    spacelike = _psd_flags(_random_wavevectors(rng, opts.n_positivity, cfg.k_max, 1.0 + 1e-3, 2.0))
    session.record("positivity", bool(causal.all() and not spacelike.any()),
                   causal_psd=int(causal.sum()), spacelike_psd=int(spacelike.sum()), n=opts.n_positivity)
    session.timings["positivity"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        real = sample_realization(spec, cfg.n_modes, seed, cfg.epsilon)
    except (CovarianceNotPSD, DegenerateSpectralDensity) as exc:
        session.record("sampling", False, message=str(exc))
        return
    session.record("sampling", True, n_modes=real.n_modes)
    per_mode = float(np.max(mode_bianchi_residuals(real))) if real.n_modes else 0.0
    x = rng.uniform(-1, 1, 4)
    fd = [bianchi_residual(real, x, h) for h in opts.bianchi_steps]
    orders = [float(np.log(fd[i] / fd[i + 1]) / np.log(opts.bianchi_steps[i] / opts.bianchi_steps[i + 1]))
              for i in range(len(fd) - 1) if fd[i + 1] > 0]
    fd_ok = all(o > 1.5 for o in orders) or max(fd) < 1e-12
    session.record("bianchi", per_mode <= BIANCHI_TOL and fd_ok, per_mode_max=per_mode,
                   fd_residuals=fd, fd_orders=orders)
    session.timings["bianchi"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    u = np.array([1.0, 0.6, -0.3, 0.2])
    u /= np.linalg.norm(u)
    xs = np.outer(np.linspace(0, opts.max_separation, opts.n_separations), u)
    emp = empirical_two_point_many(spec, cfg.n_modes, opts.n_realizations, xs, np.zeros(4), seed, cfg.epsilon)
    oracle = SpectralTwoPoint(spec, cfg.epsilon)
    rows, zmax = [], 0.0
    for e in emp:
        a = analytic_two_point(oracle, e.separation).values
        z = z_scores(e.values, a, e.stderr, 0.0)
        zmax = max(zmax, float(np.max(z)))
        for i in range(6):
            for j in range(6):
                rows.append([*e.separation, i, j, e.values[i, j], e.stderr[i, j], a[i, j], z[i, j]])
    files = []
    if session.out is not None:
        session.out.mkdir(parents=True, exist_ok=True)
        files.append(_rows_csv(session.out / "two_point.csv",
                               ["dx0", "dx1", "dx2", "dx3", "a", "b", "empirical", "stderr", "analytic", "z"],
                               rows))
    session.record("two_point", zmax <= opts.z_max, files, max_z=zmax, n_realizations=opts.n_realizations)
    session.timings["two_point"] = time.perf_counter() - t0


# --------------------------------------------------------------------------- kubo


def cmd_kubo(session: Session, workers: int) -> None:
    cfg = session.cfg.base
    opts = session.cfg.kubo
    t0 = time.perf_counter()
    profiles = {}
    files = []

    def export():
        if session.out is not None:
            session.out.mkdir(parents=True, exist_ok=True)
            for name, prof in profiles.items():
                prof.to_csv(session.out / name)
                files.append(session.out / name)

    try:
        if opts.source == "spectrum":
            if cfg.spectrum == "zero" or cfg.epsilon == 0:
                session.report("kappa2_from_H = 0\nkappa2 (second route) = 0\ndifference = 0")
                session.record("kubo", True, kappa2=0.0)
                return
            spec = cfg.spectral_density()
            s = np.linspace(0.0, opts.grid_extent * spectrum_decay_scale(spec), opts.grid_points)
            prof = oracle_profile(spec, cfg.epsilon, s)
            profiles = {"profile_quadrature.csv": prof}
            k_h = kappa2_from_H(prof)
            routes = {"kappa2_from_H[quadrature]": k_h}
            tol = None
            if opts.n_seeds:
                mc = h_profiles_from_field(spec, cfg.n_modes, opts.n_seeds, np.array([cfg.particle.mc, 0, 0, 0]), s, cfg.seed,
                                           cfg.epsilon, cfg.particle.mc)
                profiles["profile_monte_carlo.csv"] = mc
                routes["kappa2_from_H[monte-carlo]"] = kappa2_from_H(mc)
                tol = MC_ROUTE_TOL
        else:
            profile = {"gaussian": lambda: gaussian_profile(opts.amplitude, opts.scale),
                       "constant": lambda: constant_profile(opts.amplitude),
                       "power": lambda: power_profile(opts.amplitude, opts.scale, opts.power)}[opts.source]()
            s = np.linspace(0.0, opts.grid_extent * opts.scale, opts.grid_points)
            profiles = {"profile.csv": profile.tabulate(s)}
            routes = {"kappa2_from_g": kappa2_from_g(profile),
                      "kappa2_from_H": kappa2_from_H(profiles["profile.csv"])}
            tol = ANALYTIC_ROUTE_TOL
    except (CorrelationNotResolved, ProfileNotAdmissible) as exc:
        export()
        session.record("kubo", False, files, message=str(exc))
        return
    finally:
        session.timings["kubo"] = time.perf_counter() - t0
    export()
    for name, val in routes.items():
        session.report(f"{name} = {val:.12g}")
    vals = list(routes.values())
    if len(vals) == 2:
        diff = abs(vals[0] - vals[1])
        rel = diff / max(abs(vals[0]), abs(vals[1]), 1e-300)
        session.report(f"difference = {diff:.3e} (relative {rel:.3e})")
        session.record("kubo", rel <= tol, files, routes=routes, relative_difference=rel)
    else:
        session.record("kubo", True, files, routes=routes)


# --------------------------------------------------------------------------- run


def cmd_run(session: Session, workers: int) -> None:
    rc = session.cfg
    out = session.out
    wanted = rc.run.experiments or tuple(rc.experiments)
    if not wanted:
        raise ConfigError(f"{rc.source}: [run] experiments: nothing to run")
    reports = {}

    def attempt(name, fn):
        """Run one experiment; an exception fails it without stopping the others."""
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:            # recorded in the manifest, exit status 1
            log.exception("%s failed", name)
            session.record(name, False, message=f"{type(exc).__name__}: {exc}")
        finally:
            session.timings[name] = time.perf_counter() - t0
            log.info("%s finished in %.2f s", name, session.timings[name])

    def field():
        rep = run_field_ensemble(rc.experiment("field"), workers, keep_samples="markov_limit" in wanted)
        reports["field"] = rep
        session.record("field", rep.valid, rep.write(out, "field"), n_failed=rep.n_failed,
                       n_particles=rep.n_particles)

    def diffusion():
        rep = run_diffusion_ensemble(rc.experiment("diffusion"), workers)
        reports["diffusion"] = rep
        session.record("diffusion", True, rep.write(out, "diffusion"), kappa2=rep.meta["kappa2"],
                       markov=rep.meta["markov"])

    def compare():
        if not {"field", "diffusion"} <= set(reports):
            raise RuntimeError("field or diffusion ensemble missing")
        o = rc.compare
        v = compare_reports(reports["field"], reports["diffusion"], o.rel_tol, o.z_max, window=o.window)
        rows = [[reports["field"].s[k], name, float(np.max(z[k]))] for name, z in v.z.items() for k in range(len(z))]
        f = _rows_csv(out / "compare.csv", ["s", "moment", "max_z"], rows)
        session.record("compare", v.passed, [f], worst=v.worst)

    def markov_limit():
        if "field" not in reports:
            raise RuntimeError("field ensemble missing")
        o = rc.markov_limit
        m = markov_limit_check(reports["field"], rc.experiment("field"), o.window, o.rel_tol, o.z_max)
        rows = [[j + 1, l + 1, m.slope[j, l], m.stderr[j, l], m.expected * (j == l)]
                for j in range(3) for l in range(3)]
        f = _rows_csv(out / "markov_limit.csv", ["j", "l", "slope", "stderr", "expected"], rows)
        session.record("markov_limit", m.passed, [f], expected=m.expected, kappa2_sign=m.kappa2_sign,
                       diagonal=np.diag(m.slope), rel_dev=m.rel_dev, offdiag_z=m.offdiag_z, window=m.window)

    def proper_growth():
        rep = run_diffusion_ensemble(rc.experiment("proper_growth"), workers)
        g = proper_time_growth(rep, rc.proper_growth.z_min)
        passed = g.pop("passed")
        session.record("proper_growth", passed, rep.write(out, "proper_growth"), **g)

    def equilibration():
        cfg = rc.experiment("equilibration")
        o = rc.equilibration
        eq = run_equilibration(cfg, o.min_horizon, o.n_bins, workers, o.temperature, o.control_temperature)
        files = eq.report.write(out, "equilibration")
        files.append(_rows_csv(out / "equilibration_chi2.csv", ["s", "chi2"], eq.chi2_series))
        files.append(_rows_csv(out / "equilibration_bins.csv", ["bin", "observed", "expected"],
                               [[i, c, e] for i, (c, e) in enumerate(zip(eq.test.counts, eq.test.expected))]))
        details = {"stop_time": eq.stop_time, "mixed": eq.mixed, "chi2": eq.test.statistic,
                   "p_value": eq.test.p_value, "control_p_value": eq.negative_control.p_value,
                   "mean_energy": eq.mean_energy, "target_mean_energy": eq.target_mean_energy}
        ok = eq.test.passed and not eq.negative_control.passed
        if o.halving_walkers:
            half = step_halving_check(cfg, eq.report, o.halving_walkers, workers)
            details["halving"] = half
            ok = ok and half["passed"]
        session.record("equilibration", ok, files, **details)

    def lab_vs_proper():
        o = rc.lab_vs_proper
        d = lab_vs_proper_discrepancy(rc.experiment("lab_vs_proper"), workers=workers,
                                      growth_factor=o.growth_factor, rel_tol=o.rel_tol)
        files = []
        for kind, rep in d.reports.items():
            files += rep.write(out, f"lab_vs_proper_{kind.replace('-', '_')}")
        session.record("lab_vs_proper", d.passed, files, divergence=d.divergence, saturates=d.saturates,
                       grows=d.grows)

    steps = {"field": field, "diffusion": diffusion, "compare": compare, "markov_limit": markov_limit,
             "equilibration": equilibration, "lab_vs_proper": lab_vs_proper, "proper_growth": proper_growth}
    needed = set(wanted) | ({"field", "diffusion"} if "compare" in wanted else set())
    needed |= {"field"} if "markov_limit" in wanted else set()
    for name, fn in steps.items():
        if name in needed:
            attempt(name, fn)


COMMANDS = {"validate-field": cmd_validate_field, "kubo": cmd_kubo, "run": cmd_run}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reldiff", description="Relativistic diffusion in random fields.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("validate-field", "two-point, Bianchi and positivity checks of the field model"),
                        ("kubo", "diffusion constant by two routes"),
                        ("run", "run harness experiments into an output directory")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path, help="configuration file")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides [run] seed)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out
        if args.command == "run" and out is None:
            out = Path(f"run-{cfg.run.name}")
        session = Session(args.command, cfg, out)
        try:
            COMMANDS[args.command](session, args.workers)
        except ConfigError:
            raise
        except Exception as exc:
            log.exception("%s failed", args.command)
            session.record(args.command, False, message=f"{type(exc).__name__}: {exc}")
    except ConfigError as exc:
        print(f"reldiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return session.finish()


if __name__ == "__main__":
    sys.exit(main())
