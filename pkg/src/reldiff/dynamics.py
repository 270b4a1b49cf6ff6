"""Deterministic test-particle motion in a given field.

Proper-time form:  dx/dtau = p/(mc),  dp^mu/dtau = F^mu_nu p^nu/(mc).
The lab-time form uses x0 as the clock; it is realized by proper-time steps whose
length is tuned so that every step lands exactly on the target x0.

Each step evaluates the field at a predicted midpoint and then applies the exact
flow of the frozen field: ``p -> exp(Z) p`` and ``x -> x + (dtau/mc) phi1(Z) p`` with
``Z = (dtau/mc) F^mu_nu``.  ``exp(Z)`` is a Lorentz transformation, so the mass
shell is kept to rounding error.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .field import FieldRealization
from .minkowski import minkowski_dot

MASS_SHELL_TOL = 1e-9
DRIFT_LIMIT = 1e-6
LANDING_TOL = 1e-13


class IntegratorToleranceExceeded(RuntimeError):
    def __init__(self, drift: float):
        super().__init__(f"integrator tolerance exceeded: mass-shell drift {drift:.3e} > {DRIFT_LIMIT:g}")
        self.drift = drift


@dataclass(frozen=True)
class ParticleParams:
    m: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if not (self.m > 0 and self.c > 0):
            raise ValueError(f"m and c must be positive, got m={self.m}, c={self.c}")

    @property
    def mc(self) -> float:
        return self.m * self.c


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """Position and on-shell momentum, both upper-index four-vectors."""

    x: np.ndarray
    p: np.ndarray
    params: ParticleParams = ParticleParams()
    tol: float = MASS_SHELL_TOL

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        p = np.array(self.p, dtype=float)
        if x.shape != (4,) or p.shape != (4,):
            raise ValueError(f"x and p must be four-vectors, got shapes {x.shape}, {p.shape}")
        if not p[0] > 0:
            raise ValueError(f"p0 must be positive, got {p[0]}")
        m2c2 = self.params.mc**2
        shell = abs(minkowski_dot(p, p) - m2c2) / m2c2
        if shell > self.tol:
            raise ValueError(f"momentum off the mass shell: relative deviation {shell:.3e}")
        x.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_momentum(cls, p3, x=None, params: ParticleParams = ParticleParams()) -> "PhasePoint":
        p3 = np.asarray(p3, dtype=float)
        p0 = np.sqrt(params.mc**2 + p3 @ p3)
        x = np.zeros(4) if x is None else x
        return cls(x, np.concatenate([[p0], p3]), params)

    @classmethod
    def at_rest(cls, params: ParticleParams = ParticleParams(), x=None) -> "PhasePoint":
        return cls.from_momentum(np.zeros(3), x, params)


def source_arrays(source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel mode arrays for a realization, a constant packed tensor, or ``None`` (no field)."""
    if isinstance(source, FieldRealization):
        return source.kernel_arrays
    if source is None:
        f = np.zeros(6)
    else:
        f = np.asarray(source, dtype=float)
        if f.shape != (6,):
            raise TypeError("field source must be a FieldRealization, a packed 6-vector or None")
    # a single k = 0 mode is a constant field
    return np.zeros((4, 1)), f.reshape(6, 1).copy(), np.zeros((6, 1))


def _step_buffers(n_modes: int):
    return np.empty(4), np.empty(4), np.empty(6), np.empty(n_modes), np.empty(n_modes)


def proper_step(state: PhasePoint, source, dtau: float, params: ParticleParams | None = None) -> PhasePoint:
    if not dtau > 0:
        raise ValueError(f"dtau must be positive, got {dtau}")
    params = params or state.params
    k, wzr, wzi = source_arrays(source)
    xo, po, f, c, s = _step_buffers(k.shape[1])
    _kernels.proper_step_modes(state.x, state.p, float(dtau), params.mc, k, wzr, wzi, xo, po, f, c, s)
    return PhasePoint(xo, po, params, state.tol)


def lab_step(state: PhasePoint, source, dt: float, params: ParticleParams | None = None) -> PhasePoint:
    """Advance the lab time x0 by exactly ``c dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    params = params or state.params
    k, wzr, wzi = source_arrays(source)
    xo, po, f, c, s = _step_buffers(k.shape[1])
    _kernels.lab_step_modes(state.x, state.p, params.c * float(dt), params.mc, k, wzr, wzi,
                            xo, po, f, c, s, LANDING_TOL, 20)
    return PhasePoint(xo, po, params, state.tol)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples ``(s, x, p)``; ``s`` is the proper time or the lab time ``x0/c``."""

    s: np.ndarray
    x: np.ndarray
    p: np.ndarray
    clock: str
    tau: np.ndarray
    mass_shell_drift: float

    def __len__(self) -> int:
        return self.s.shape[0]

    def point(self, i: int, params: ParticleParams = ParticleParams()) -> PhasePoint:
        return PhasePoint(self.x[i], self.p[i], params, tol=max(MASS_SHELL_TOL, 2 * self.mass_shell_drift))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x0", "x1", "x2", "x3", "p0", "p1", "p2", "p3"])
            for row in np.column_stack([self.s, self.x, self.p]):
                w.writerow([repr(float(v)) for v in row])


def propagate(state: PhasePoint, source, horizon: float, step: float, clock: str = "proper",
              params: ParticleParams | None = None) -> Trajectory:
    """Fixed-step propagation over ``horizon`` (proper time, or lab time for ``clock='lab'``)."""
    if not (horizon > 0 and step > 0):
        raise ValueError(f"horizon and step must be positive, got {horizon}, {step}")
    if clock not in ("proper", "lab"):
        raise ValueError(f"clock must be 'proper' or 'lab', got {clock!r}")
    params = params or state.params
    n_steps = int(np.ceil(horizon / step - 1e-9))
    k, wzr, wzi = source_arrays(source)
    xs = np.empty((n_steps + 1, 4))
    ps = np.empty((n_steps + 1, 4))
    taus = np.empty(n_steps + 1)
    lab = clock == "lab"
    h = params.c * step if lab else step
    drift = _kernels.propagate_modes(state.x, state.p, float(h), n_steps, lab, params.mc,
                                     k, wzr, wzi, xs, ps, taus)
    if drift > DRIFT_LIMIT:
        raise IntegratorToleranceExceeded(drift)
    s = (xs[:, 0] - xs[0, 0]) / params.c if lab else taus.copy()
    return Trajectory(s, xs, ps, clock, taus, float(drift))
