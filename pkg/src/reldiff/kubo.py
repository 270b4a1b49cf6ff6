"""Correlation profiles and the Kubo diffusion constant.

Along a straight worldline ``x(s) = (s/mc) p`` the field correlations reduce to two
scalar profiles.  With ``n = p/mc``, ``E_mu = F_{mu nu} n^nu`` and the invariant form
of the two-point function,

    X(s) = eta^{mu sigma} <E_mu(0) E_sigma(x(s))> = 6 H1 + 3 H,
    Y(s) = <F_{mu nu}(0) F^{mu nu}(x(s))>         = 24 H1 + 6 H,

so ``H1 = (Y - 2X)/12`` and ``H = X/3 - 2 H1``.  The Kubo constant is

    kappa^2 = 2 int_0^inf (2 H1 + H) ds = 2 int_0^inf u^{-1/2} g'(u) du.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from ._rng import TAG_PROFILE, derive_seed
from .field import DEFAULT_EPSILON, SpectralDensity, sample_realization
from .minkowski import METRIC, lower, tensor_matrix

DEFAULT_GRID_POINTS = 512
DECAY_FRACTION = 0.01


class CorrelationNotResolved(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("correlation not resolved" + (f": {detail}" if detail else ""))


class ProfileNotAdmissible(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("profile not admissible" + (f": {detail}" if detail else ""))


@dataclass(frozen=True, eq=False)
class AnalyticProfile:
    """Scalar correlation ``g(u)``, ``u = x^2``, with its first two derivatives."""

    g: Callable
    dg: Callable
    d2g: Callable
    decay_scale: float = 1.0
    label: str = "analytic"

    def H1(self, s):
        s = np.asarray(s, dtype=float)
        return 2.0 * self.dg(s * s)

    def H(self, s):
        s = np.asarray(s, dtype=float)
        return 4.0 * s * s * self.d2g(s * s)

    def second_derivatives(self, dx) -> np.ndarray:
        """``d_mu d_nu g(x^2) = 2 g'(u) eta_{mu nu} + 4 g''(u) x_mu x_nu``."""
        dx = np.asarray(dx, dtype=float)
        u = float(dx[0] ** 2 - dx[1:] @ dx[1:])
        xl = lower(dx)
        return 2.0 * self.dg(u) * METRIC + 4.0 * self.d2g(u) * np.outer(xl, xl)

    def tabulate(self, s=None) -> "TabulatedProfile":
        s = default_grid(self.decay_scale) if s is None else np.asarray(s, dtype=float)
        return TabulatedProfile(s, self.H1(s), self.H(s), decay_scale=self.decay_scale, label=self.label)


def gaussian_profile(amplitude: float = 1.0, scale: float = 1.0) -> AnalyticProfile:
    """``g(u) = amplitude exp(-u / scale^2)``."""
    a, b = float(amplitude), 1.0 / float(scale) ** 2
    return AnalyticProfile(lambda u: a * np.exp(-b * np.asarray(u)),
                           lambda u: -a * b * np.exp(-b * np.asarray(u)),
                           lambda u: a * b * b * np.exp(-b * np.asarray(u)),
                           decay_scale=float(scale), label=f"gaussian(a={a:g},scale={scale:g})")


def constant_profile(value: float = 1.0) -> AnalyticProfile:
    zero = lambda u: np.zeros_like(np.asarray(u, dtype=float))  # noqa: E731
    return AnalyticProfile(lambda u: value + zero(u), zero, zero, label="constant")


def power_profile(amplitude: float = 1.0, scale: float = 1.0, power: float = 1.0) -> AnalyticProfile:
    """``g(u) = amplitude (1 + u/scale^2)^(-power)``; not admissible for ``power <= -1/2``."""
    a, b, n = float(amplitude), 1.0 / float(scale) ** 2, float(power)
    return AnalyticProfile(lambda u: a * (1 + b * np.asarray(u)) ** (-n),
                           lambda u: -a * n * b * (1 + b * np.asarray(u)) ** (-n - 1),
                           lambda u: a * n * (n + 1) * b * b * (1 + b * np.asarray(u)) ** (-n - 2),
                           decay_scale=float(scale), label=f"power(a={a:g},scale={scale:g},n={n:g})")


@dataclass(frozen=True, eq=False)
class TabulatedProfile:
    s: np.ndarray
    H1: np.ndarray
    H: np.ndarray
    stderr_H1: np.ndarray | None = None
    stderr_H: np.ndarray | None = None
    decay_scale: float = 1.0
    label: str = "tabulated"
    stderr_q: np.ndarray | None = None
    stderr_kappa2: float | None = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.ndim != 1 or s.size < 2 or s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise ValueError("tabulated grid must be strictly increasing from s = 0")
        for name in ("H1", "H"):
            if np.shape(getattr(self, name)) != s.shape:
                raise ValueError(f"{name} does not match the grid")

    @property
    def q(self) -> np.ndarray:
        """Kubo integrand ``2 H1 + H``."""
        return 2.0 * np.asarray(self.H1) + np.asarray(self.H)

    def to_csv(self, path) -> None:
        n = len(self.s)
        se1 = self.stderr_H1 if self.stderr_H1 is not None else np.zeros(n)
        se = self.stderr_H if self.stderr_H is not None else np.zeros(n)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "H1", "H", "stderr_H1", "stderr_H"])
            for row in zip(self.s, self.H1, self.H, se1, se):
                w.writerow([repr(float(v)) for v in row])


def default_grid(decay_scale: float, n: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 10.0 * decay_scale, n)


def spectrum_decay_scale(spec: SpectralDensity) -> float:
    """Correlation time of a spectrum: ``2/scale`` for the infrared kind, else ``1/scale``."""
    scale = float(spec.params.get("scale", 1.0))
    return (2.0 if spec.params.get("kind") == "kubo-ir" else 1.0) / scale


# --------------------------------------------------------------------------- estimation


def _xy_from_contractions(X, Y):
    H1 = (Y - 2.0 * X) / 12.0
    H = X / 3.0 - 2.0 * H1
    return H1, H


def _mode_xy(real, n, s):
    """Per-realization estimate of X(s), Y(s) keeping only the same-mode terms.

    Averaging the product of two plane-wave sums over the independent phase of
    each mode amplitude removes all cross-mode terms (their mean is zero); what
    remains is ``(w^2/2) Re[conj(a) . b] cos(s k.n)`` per mode.
    """
    Z = tensor_matrix(real.z)                       # (N, 4, 4) lower
    E = Z @ n                                       # E_mu per mode
    w2 = 0.5 * real.w**2
    x_amp = w2 * np.einsum("nm,nm->n", E.conj() * np.array([1.0, -1.0, -1.0, -1.0]), E).real
    zz = real.z
    y_amp = w2 * 2.0 * (np.sum(np.abs(zz[:, 3:]) ** 2, axis=1) - np.sum(np.abs(zz[:, :3]) ** 2, axis=1))
    omega = real.k @ lower(n)                       # k.n
    c = np.cos(np.outer(s, omega))
    return c @ x_amp, c @ y_amp


def _direct_xy(real, n, s):
    from .field import evaluate_field
    pts = np.outer(s, n)
    F = evaluate_field(real, pts)
    Fm = tensor_matrix(F)
    E = Fm @ n
    eta = np.array([1.0, -1.0, -1.0, -1.0])
    X = (E[0] * eta) @ E.T
    Fup = np.einsum("m,n,...mn->...mn", eta, eta, Fm)
    Y = np.einsum("mn,smn->s", Fm[0], Fup)
    return X, Y


def h_profiles_from_field(spec: SpectralDensity, n_modes: int, n_seeds: int, p, s=None,
                          seed: int = 0, epsilon: float = DEFAULT_EPSILON, mc: float = 1.0,
                          frame: np.ndarray | None = None, estimator: str = "modes") -> TabulatedProfile:
    """Monte Carlo ``H1(s)``, ``H(s)`` along ``x(s) = (s/mc) p``.

    ``frame`` (a boost matrix ``L``) boosts every realization before use, so the
    estimate refers to the field ensemble seen from ``x' = L x``.  ``estimator`` is
    ``"modes"`` (same-mode terms only, lower variance) or ``"direct"`` (products of
    synthesized field values).
    """
    if n_seeds < 2:
        raise ValueError(f"n_seeds must be >= 2, got {n_seeds}")
    p = np.asarray(p, dtype=float)
    shell = (p[0] ** 2 - p[1:] @ p[1:]) / mc**2
    if p[0] <= 0 or abs(shell - 1.0) > 1e-9:
        raise ValueError("p must lie on the mass shell")
    decay = spectrum_decay_scale(spec)
    s = default_grid(decay) if s is None else np.asarray(s, dtype=float)
    n = p / mc
    fn = {"modes": _mode_xy, "direct": _direct_xy}[estimator]
    acc = np.zeros((4, s.size))          # H1, H, q, X and their squares
    sq = np.zeros((4, s.size))
    k_sum = k_sq = 0.0
    for i in range(n_seeds):
        real = sample_realization(spec, n_modes, derive_seed(seed, TAG_PROFILE, i), epsilon)
        if frame is not None:
            real = real.boosted(frame)
        X, Y = fn(real, n, s)
        H1, H = _xy_from_contractions(X, Y)
        H = np.where(s == 0.0, 0.0, H)      # degenerate contraction at s = 0: limit convention H(0) = 0
        row = np.stack([H1, H, 2 * H1 + H, X])
        acc += row
        sq += row * row
        k = 2.0 * integrate.trapezoid(row[2], s)
        k_sum += k
        k_sq += k * k
    mean = acc / n_seeds
    var = (sq / n_seeds - mean**2) * n_seeds / (n_seeds - 1)
    se = np.sqrt(np.maximum(var, 0.0) / n_seeds)
    k_mean = k_sum / n_seeds
    k_se = np.sqrt(max(k_sq / n_seeds - k_mean**2, 0.0) / (n_seeds - 1))
    return TabulatedProfile(s, mean[0], mean[1], se[0], se[1], decay, f"mc:{spec.label}", se[2], k_se)


def oracle_profile(spec: SpectralDensity, epsilon: float, s=None) -> TabulatedProfile:
    """Rest-frame profiles of a spectrum by deterministic quadrature."""
    from .oracle import SpectralTwoPoint
    decay = spectrum_decay_scale(spec)
    s = default_grid(decay) if s is None else np.asarray(s, dtype=float)
    H1, H = SpectralTwoPoint(spec, epsilon).rest_frame_profiles(s)
    return TabulatedProfile(s, H1, H, decay_scale=decay, label=f"oracle:{spec.label}")


# --------------------------------------------------------------------------- Kubo constant


def kappa2_from_H(profile) -> float:
    """``kappa^2 = 2 int (2 H1 + H) ds`` by the trapezoidal rule on the profile grid."""
    if isinstance(profile, AnalyticProfile):
        profile = profile.tabulate()
    q = profile.q
    peak = float(np.max(np.abs(q)))
    if peak == 0.0:
        return 0.0
    allowance = DECAY_FRACTION * peak
    if profile.stderr_q is not None:
        allowance += 3.0 * float(profile.stderr_q[-1])
    if abs(q[-1]) >= allowance:
        raise CorrelationNotResolved(f"|2H1 + H| at s = {profile.s[-1]:g} is "
                                     f"{abs(q[-1]) / peak:.2%} of its maximum")
    return float(2.0 * integrate.trapezoid(q, profile.s))


def kappa2_from_g(profile: AnalyticProfile) -> float:
    """``kappa^2 = 2 int_0^inf u^{-1/2} g'(u) du`` evaluated as ``4 int_0^inf g'(s^2) ds``."""
    f = lambda s: 4.0 * float(profile.dg(s * s))  # noqa: E731
    cut = 50.0 * profile.decay_scale

    def piece(a, b):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(f, a, b, limit=400, epsabs=1e-15, epsrel=1e-13)
            except integrate.IntegrationWarning as exc:
                raise ProfileNotAdmissible(str(exc).splitlines()[0]) from None
        return val

    body = piece(0.0, cut)
    tail1 = piece(cut, 2.0 * cut)
    tail2 = piece(2.0 * cut, 4.0 * cut)
    # a convergent tail shrinks geometrically; s^-1 or slower does not
    scale = max(abs(body), 1e-300)
    if abs(tail2) > 1e-10 * scale and abs(tail2) > 0.5 * abs(tail1):
        raise ProfileNotAdmissible("integral does not converge at large u")
    rest = piece(4.0 * cut, np.inf) if abs(tail2) > 1e-14 * scale else 0.0
    return float(body + tail1 + tail2 + rest)


def diffusion_constant(kappa2: float) -> tuple[float, int]:
    """Magnitude used for diffusion runs and the recorded sign of the computed value."""
    return abs(float(kappa2)), int(np.sign(kappa2))


def predict_covariance_growth(profile, tau) -> np.ndarray | float:
    """``int_0^tau int_0^s (2H1 + H)(s') ds' ds = int_0^tau (tau - s) q(s) ds``.

    Tabulated profiles are taken as zero beyond their last grid point.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0):
        raise ValueError("tau must be >= 0")
    if isinstance(profile, AnalyticProfile):
        q = lambda s: 2.0 * profile.H1(s) + profile.H(s)  # noqa: E731
        out = [integrate.quad(lambda s: (t - s) * q(s), 0.0, t, limit=400)[0] if t > 0 else 0.0
               for t in np.atleast_1d(tau_arr)]
        out = np.array(out)
    else:
        s = profile.s
        q = profile.q
        # exact double integral of the piecewise-linear interpolant of q
        h = np.diff(s)
        Q = integrate.cumulative_trapezoid(q, s, initial=0.0)
        C = np.concatenate([[0.0], np.cumsum(Q[:-1] * h + h * h * (2 * q[:-1] + q[1:]) / 6)])
        t = np.atleast_1d(tau_arr)
        i = np.clip(np.searchsorted(s, t, side="right") - 1, 0, s.size - 2)
        d = np.minimum(t, s[-1]) - s[i]
        slope = (q[i + 1] - q[i]) / (s[i + 1] - s[i])
        inside = C[i] + Q[i] * d + q[i] * d * d / 2 + slope * d**3 / 6
        out = np.where(t <= s[-1], inside, C[-1] + Q[-1] * (t - s[-1]))
    return float(out[0]) if tau_arr.ndim == 0 else out
