"""Lorentz-covariant Gaussian random field-strength tensors.

A realization is a finite sum of plane waves

    F(x) = sum_n w_n Re[z_n exp(-i k_n.x)],

with wavevectors ``k_n`` on the forward cone and complex amplitudes ``z_n`` whose
covariance is the mode matrix ``M(k_n)``.  The ensemble two-point function is

    <F_{mu nu}(x) F_{sigma rho}(x')> = eps^2 int d^4k G(k) M(k) cos(k.(x - x')).

Wavevectors are drawn from the density proportional to ``G(k) tr M(k)`` and the
weights compensate, ``w_n = eps sqrt(2 Z / (N tr M(k_n)))`` with
``Z = int G tr M d^4k``; this keeps the estimator unbiased and every mode at the
same expected power.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _kernels
from ._rng import TAG_TWO_POINT, derive_seed, generator
from .minkowski import (
    LEVI_CIVITA,
    METRIC,
    lower,
    pair_matrix,
    tensor_matrix,
    tensor_transform_6x6,
)

PSD_TOL = 1e-10
MAX_REJECTIONS = 1_000_000
DEFAULT_EPSILON = 0.1
DEFAULT_N_MODES = 4096

FORMAT_TAG = "reldiff-field-realization"


class CovarianceNotPSD(ValueError):
    """A mode covariance has a genuinely negative eigenvalue."""

    def __init__(self, detail: str = ""):
        super().__init__("covariance not PSD" + (f": {detail}" if detail else ""))


class DegenerateSpectralDensity(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("degenerate spectral density" + (f": {detail}" if detail else ""))


# --------------------------------------------------------------------------- spectra


class ExpRadial:
    """G(k) = exp(-k0 / scale)."""

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def __call__(self, k0, r):
        return np.exp(-np.asarray(k0) / self.scale) * np.ones_like(r)


class PowerGaussRadial:
    """G(k) = amp (scale / k0)^5 exp(-k0^2 / scale^2).

    The k0^-5 infrared weight makes the zero-frequency force spectrum of a particle
    at rest nonzero, so the Kubo constant is finite and nonzero.
    """

    def __init__(self, scale: float = 1.0, amp: float | None = None):
        self.scale = float(scale)
        self.amp = 15.0 / (16.0 * np.pi**2 * self.scale**4) if amp is None else float(amp)

    def __call__(self, k0, r):
        k0 = np.asarray(k0, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            val = self.amp * (self.scale / k0) ** 5 * np.exp(-(k0 / self.scale) ** 2)
        return np.where(k0 > 0, val, 0.0) * np.ones_like(r)


class ZeroRadial:
    def __call__(self, k0, r):
        return np.zeros(np.broadcast(np.asarray(k0), np.asarray(r)).shape)


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Isotropic spectral weight ``G(k0, |k|)`` on a truncated forward support.

    The support is ``0 < k0 <= k_max`` and ``t_min <= |k|/k0 <= t_max``.  Causal
    densities have ``t_max <= 1`` (i.e. ``k^2 >= 0``); ``causal=False`` is only used
    to build deliberately invalid test inputs.  On the causal support
    ``|k^i| <= k0``, so the box ``|k^mu| <= k_max`` reduces to ``k0 <= k_max``.
    """

    radial: Callable[[np.ndarray, np.ndarray], np.ndarray]
    k_max: float
    label: str
    t_min: float = 0.0
    t_max: float = 1.0
    causal: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.k_max > 0:
            raise ValueError(f"k_max must be positive, got {self.k_max}")
        if not 0.0 <= self.t_min < self.t_max:
            raise ValueError(f"need 0 <= t_min < t_max, got {self.t_min}, {self.t_max}")
        if self.causal and self.t_max > 1.0:
            raise ValueError("a causal density cannot extend past the light cone (t_max > 1)")

    def profile(self, k) -> np.ndarray:
        """G(k) for upper-index wavevectors ``k`` (..., 4); zero off the support."""
        k = np.asarray(k, dtype=float)
        k0 = k[..., 0]
        r = np.linalg.norm(k[..., 1:], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(k0 > 0, r / np.where(k0 > 0, k0, 1.0), np.inf)
        inside = (k0 > 0) & (k0 <= self.k_max) & (t >= self.t_min) & (t <= self.t_max)
        if self.causal:
            inside &= k0 * k0 - r * r >= 0
        val = np.where(inside, self.radial(np.where(inside, k0, 1.0), r), 0.0)
        return np.maximum(val, 0.0)

    def weight(self, k0, t) -> np.ndarray:
        """Sampling weight ``G tr M`` times the Jacobian ``k0^3 t^2`` (per unit solid angle)."""
        k0 = np.asarray(k0, dtype=float)
        t = np.asarray(t, dtype=float)
        g = self.radial(k0, t * k0)
        return k0**5 * t**2 * (3.0 + t**2) * g

    @cached_property
    def _quadrature(self):
        x0, w0 = leggauss(400)
        xt, wt = leggauss(64)
        k0 = 0.5 * self.k_max * (x0 + 1.0)
        wk = 0.5 * self.k_max * w0
        t = self.t_min + 0.5 * (self.t_max - self.t_min) * (xt + 1.0)
        wt = 0.5 * (self.t_max - self.t_min) * wt
        return k0, wk, t, wt

    @cached_property
    def normalization(self) -> float:
        """``Z = int G(k) tr M(k) d^4k`` over the truncated support."""
        k0, wk, t, wt = self._quadrature
        W = self.weight(k0[:, None], t[None, :])
        return float(4.0 * np.pi * wk @ W @ wt)

    @cached_property
    def envelope(self) -> float:
        return float(np.max(self.cell_envelope[2])) if self.cell_envelope[2].size else 0.0

    @cached_property
    def cell_envelope(self):
        """Piecewise-constant bound on the sampling weight over a (k0, t) cell grid.

        Returns ``(k0_edges, t_edges, bound)``; ``bound`` is 1.2x the maximum of the
        weight on a 9x9 sub-grid of every cell (the weights used are smooth).
        """
        nk, nt, sub = 64, 16, 9
        ke = np.linspace(0.0, self.k_max, nk + 1)
        te = np.linspace(self.t_min, self.t_max, nt + 1)
        fk = np.linspace(0.0, 1.0, sub)
        k0 = (ke[:-1, None] + np.diff(ke)[:, None] * fk[None, :]).reshape(-1)
        t = (te[:-1, None] + np.diff(te)[:, None] * fk[None, :]).reshape(-1)
        k0 = np.where(k0 > 0, k0, 1e-9 * self.k_max)
        W = self.weight(k0[:, None], t[None, :]).reshape(nk, sub, nt, sub)
        bound = 1.2 * np.max(W, axis=(1, 3))
        return ke, te, bound


def reference_spectrum(scale: float = 1.0, k_max: float = 5.0) -> SpectralDensity:
    """G(k) = exp(-k0 / scale) on the truncated forward cone."""
    return SpectralDensity(ExpRadial(scale), k_max, f"exp(scale={scale:g},k_max={k_max:g})",
                           params={"kind": "reference", "scale": scale, "k_max": k_max})


def kubo_spectrum(scale: float = 1.0, k_max: float = 5.0) -> SpectralDensity:
    """Forward-cone density with a nonzero Kubo constant, ``|kappa^2| = eps^2 scale``."""
    return SpectralDensity(PowerGaussRadial(scale), k_max * scale,
                           f"kubo-ir(scale={scale:g},k_max={k_max * scale:g})",
                           params={"kind": "kubo-ir", "scale": scale, "k_max": k_max * scale})


def spacelike_spectrum(scale: float = 1.0, k_max: float = 5.0) -> SpectralDensity:
    """Deliberately invalid density supported outside the light cone (1 < |k|/k0 <= 2)."""
    return SpectralDensity(ExpRadial(scale), k_max, f"spacelike(scale={scale:g})",
                           t_min=1.0 + 1e-9, t_max=2.0, causal=False,
                           params={"kind": "spacelike", "scale": scale, "k_max": k_max})


def zero_spectrum(k_max: float = 5.0) -> SpectralDensity:
    return SpectralDensity(ZeroRadial(), k_max, "zero", params={"kind": "zero", "k_max": k_max})


SPECTRA = {
    "reference": reference_spectrum,
    "kubo-ir": kubo_spectrum,
    "spacelike": spacelike_spectrum,
}


def make_spectrum(kind: str, scale: float = 1.0, k_max: float = 5.0) -> SpectralDensity:
    if kind == "zero":
        return zero_spectrum(k_max)
    try:
        return SPECTRA[kind](scale=scale, k_max=k_max)
    except KeyError:
        raise ValueError(f"unknown spectrum kind {kind!r}; choose from "
                         f"{sorted(SPECTRA) + ['zero']}") from None


# --------------------------------------------------------------------------- mode covariance


def _rank4_covariance(k) -> np.ndarray:
    kl = lower(k)
    eta = METRIC
    T = (np.einsum("ms,...n,...r->...mnsr", eta, kl, kl)
         - np.einsum("mr,...n,...s->...mnsr", eta, kl, kl)
         + np.einsum("nr,...m,...s->...mnsr", eta, kl, kl)
         - np.einsum("ns,...m,...r->...mnsr", eta, kl, kl))
    return -T


def mode_covariance(k) -> np.ndarray:
    """Mode covariance ``M(k)`` in the packed pair basis, shape (..., 6, 6)."""
    return pair_matrix(_rank4_covariance(np.asarray(k, dtype=float)))


def mode_factor(k) -> np.ndarray:
    """A 6x3 factor ``B`` with ``B B^T = M(k)`` for causal ``k`` (k0 > 0, |k| <= k0).

    Built from a transverse-shrunk vector potential: with ``P`` the projector on
    ``khat`` and ``c = 1 - sqrt(1 - t^2)``, ``a = (I - c P) xi`` gives
    ``e = k0 a`` and ``b = k x a``.
    """
    k = np.asarray(k, dtype=float)
    k0 = k[..., 0]
    kv = k[..., 1:]
    r = np.linalg.norm(kv, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        khat = np.where(r[..., None] > 0, kv / np.where(r > 0, r, 1.0)[..., None], 0.0)
        t = np.where(k0 > 0, r / np.where(k0 > 0, k0, 1.0), 0.0)
    c = 1.0 - np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    A = np.eye(3) - c[..., None, None] * np.einsum("...i,...j->...ij", khat, khat)
    cross = np.zeros(k.shape[:-1] + (3, 3))
    cross[..., 0, 1] = -kv[..., 2]
    cross[..., 0, 2] = kv[..., 1]
    cross[..., 1, 0] = kv[..., 2]
    cross[..., 1, 2] = -kv[..., 0]
    cross[..., 2, 0] = -kv[..., 1]
    cross[..., 2, 1] = kv[..., 0]
    top = k0[..., None, None] * A
    bottom = cross @ A
    return np.concatenate([top, bottom], axis=-2)


def _factor_amplitudes(k: np.ndarray, t: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``mode_factor(k) @ xi`` without forming the factors."""
    k0 = k[:, 0]
    kv = k[:, 1:]
    r = t * k0
    with np.errstate(invalid="ignore", divide="ignore"):
        khat = np.where(r[:, None] > 0, kv / np.where(r > 0, r, 1.0)[:, None], 0.0)
    c = 1.0 - np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    a = xi - (c * np.einsum("ni,ni->n", khat, xi))[:, None] * khat
    z = np.empty((k.shape[0], 6), dtype=complex)
    z[:, :3] = k0[:, None] * a
    z[:, 3:] = np.cross(kv, a)
    return z


def _check_psd(k: np.ndarray) -> None:
    M = mode_covariance(k)
    lam = np.linalg.eigvalsh(M)
    tr = np.trace(M, axis1=-2, axis2=-1)
    bad = lam[..., 0] < -PSD_TOL * np.abs(tr)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CovarianceNotPSD(f"min eigenvalue {lam[i, 0]:.3e} at k = {k[i].tolist()}")


def _eigh_amplitudes(k: np.ndarray, xi: np.ndarray) -> np.ndarray:
    M = mode_covariance(k)
    lam, V = np.linalg.eigh(M)
    tr = np.trace(M, axis1=-2, axis2=-1)[..., None]
    if np.any(lam < -PSD_TOL * np.abs(tr)):
        _check_psd(k)
    lam = np.where(lam < 1e-12 * np.abs(tr), 0.0, lam)
    return np.einsum("nij,nj->ni", V, np.sqrt(lam) * xi)


# --------------------------------------------------------------------------- realizations


@dataclass(frozen=True, eq=False)
class FieldRealization:
    """Frozen finite-mode sample. ``k`` (N, 4) upper index, ``z`` (N, 6) complex, ``w`` (N,)."""

    k: np.ndarray
    z: np.ndarray
    w: np.ndarray
    seed: int
    spectral_label: str
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        k = np.ascontiguousarray(self.k, dtype=float)
        z = np.ascontiguousarray(self.z, dtype=complex)
        w = np.ascontiguousarray(self.w, dtype=float)
        if k.ndim != 2 or k.shape[1] != 4 or z.shape != (k.shape[0], 6) or w.shape != (k.shape[0],):
            raise ValueError(f"inconsistent mode arrays: k{k.shape}, z{z.shape}, w{w.shape}")
        for arr in (k, z, w):
            arr.flags.writeable = False
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)

    @property
    def n_modes(self) -> int:
        return self.k.shape[0]

    @cached_property
    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Struct-of-arrays layout used by the compiled kernels."""
        kT = np.ascontiguousarray(self.k.T)
        wz = self.w[:, None] * self.z
        return kT, np.ascontiguousarray(wz.real.T), np.ascontiguousarray(wz.imag.T)

    def __call__(self, x) -> np.ndarray:
        return evaluate_field(self, x)

    def boosted(self, L: np.ndarray) -> "FieldRealization":
        """The same field seen from the frame ``x' = L x``."""
        k = np.einsum("mn,in->im", L, self.k)
        T = tensor_transform_6x6(L)
        z = np.einsum("ab,ib->ia", T, self.z)
        return FieldRealization(k, z, self.w, self.seed, self.spectral_label, self.epsilon)

    def scaled(self, epsilon: float) -> "FieldRealization":
        """Same modes with coupling ``epsilon`` instead of the current one."""
        if self.epsilon == 0:
            raise ValueError("cannot rescale a zero-coupling realization")
        return FieldRealization(self.k, self.z, self.w * (epsilon / self.epsilon), self.seed,
                                self.spectral_label, epsilon)

    def to_text(self) -> str:
        header = {"format": FORMAT_TAG, "version": 1, "seed": self.seed,
                  "spectral_label": self.spectral_label, "n_modes": self.n_modes,
                  "epsilon": self.epsilon,
                  "columns": ["k0", "k1", "k2", "k3"] + [f"re_z{i}" for i in range(6)]
                  + [f"im_z{i}" for i in range(6)] + ["w"]}
        rows = np.hstack([self.k, self.z.real, self.z.imag, self.w[:, None]])
        lines = [json.dumps(header)]
        lines += [" ".join(f"{v:.17g}" for v in row) for row in rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FieldRealization":
        lines = text.strip("\n").split("\n")
        header = json.loads(lines[0])
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"not a field realization file (format={header.get('format')!r})")
        n = int(header["n_modes"])
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=float)
        rows = rows.reshape(n, 17)
        z = rows[:, 4:10] + 1j * rows[:, 10:16]
        return cls(rows[:, :4], z, rows[:, 16], int(header["seed"]),
                   header["spectral_label"], float(header["epsilon"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "FieldRealization":
        return cls.from_text(Path(path).read_text())


def zero_realization(n_modes: int = 1, label: str = "zero") -> FieldRealization:
    k = np.tile([1.0, 0.0, 0.0, 0.0], (n_modes, 1))
    return FieldRealization(k, np.zeros((n_modes, 6), complex), np.zeros(n_modes), 0, label, 0.0)


def _sample_wavevectors(spec: SpectralDensity, n: int, rng: np.random.Generator):
    """Rejection sampling of ``(k0, t)`` under a piecewise-constant envelope."""
    ke, te, bound = spec.cell_envelope
    if not (np.all(np.isfinite(bound)) and np.max(bound) > 0):
        raise DegenerateSpectralDensity(f"sampling weight has no positive finite maximum ({spec.label})")
    nt = bound.shape[1]
    mass = (bound * np.diff(ke)[:, None] * np.diff(te)[None, :]).reshape(-1)
    cum = np.cumsum(mass)
    cum /= cum[-1]
    rate = spec.normalization / (4.0 * np.pi * float(np.sum(mass)))
    k0s, ts = [], []
    have = 0
    since_accept = 0
    while have < n:
        # batches sized from the expected acceptance rate
        batch = int(min(max(1.2 * (n - have) / max(rate, 1e-3), 1024), 4_000_000))
        cell = np.minimum(np.searchsorted(cum, rng.random(batch), side="right"), cum.size - 1)
        ik, it = np.divmod(cell, nt)
        k0 = ke[ik + 1] - (ke[ik + 1] - ke[ik]) * rng.random(batch)     # (lo, hi]
        t = te[it] + (te[it + 1] - te[it]) * rng.random(batch)
        env = bound[ik, it]
        w = spec.weight(k0, t)
        if np.any(w > env):
            raise DegenerateSpectralDensity(f"sampling weight exceeds its envelope ({spec.label})")
        idx = np.flatnonzero(env * rng.random(batch) < w)
        if idx.size == 0:
            since_accept += batch
        elif since_accept + idx[0] >= MAX_REJECTIONS:
            since_accept += idx[0]
        else:
            since_accept = batch - 1 - idx[-1]
        if since_accept >= MAX_REJECTIONS:
            raise DegenerateSpectralDensity(f"{since_accept} consecutive rejections ({spec.label})")
        k0s.append(k0[idx])
        ts.append(t[idx])
        have += idx.size
    k0 = np.concatenate(k0s)[:n]
    t = np.concatenate(ts)[:n]
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    kvec = (t * k0)[:, None] * direction
    return np.column_stack([k0, kvec]), t


def sample_realization(spec: SpectralDensity, n_modes: int = DEFAULT_N_MODES, seed: int = 0,
                       epsilon: float = DEFAULT_EPSILON, method: str = "factor") -> FieldRealization:
    """Draw a realization with ``n_modes`` plane waves.

    ``method="factor"`` uses the closed-form factor of ``M(k)``; ``method="eigh"``
    uses an eigendecomposition (slower, same distribution).
    """
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if method not in ("factor", "eigh"):
        raise ValueError(f"unknown sampling method {method!r}")
    rng = generator(seed)
    k, t = _sample_wavevectors(spec, n_modes, rng)
    spacelike = t > 1.0
    if np.any(spacelike):
        _check_psd(k[spacelike])
    if method == "factor":
        xi = (rng.standard_normal((n_modes, 3)) + 1j * rng.standard_normal((n_modes, 3))) / np.sqrt(2)
        z = _factor_amplitudes(k, t, xi)
    else:
        xi = (rng.standard_normal((n_modes, 6)) + 1j * rng.standard_normal((n_modes, 6))) / np.sqrt(2)
        z = _eigh_amplitudes(k, xi)
    trM = k[:, 0] ** 2 * (3.0 + t * t)
    w = epsilon * np.sqrt(2.0 * spec.normalization / (n_modes * trM))
    return FieldRealization(k, z, w, int(seed), spec.label, float(epsilon))


def evaluate_field(real: FieldRealization, x) -> np.ndarray:
    """Packed ``F(x)`` for one point (4,) or a batch (..., 4)."""
    x = np.asarray(x, dtype=float)
    pts = np.ascontiguousarray(x.reshape(-1, 4))
    out = np.empty((pts.shape[0], 6))
    _kernels.field_at_points(*real.kernel_arrays, pts, out)
    return out.reshape(x.shape[:-1] + (6,))


# --------------------------------------------------------------------------- two-point functions


@dataclass(frozen=True, eq=False)
class TwoPointTensor:
    """``<F_a(x) F_b(x')>`` in the packed pair basis with separation ``x - x'``."""

    values: np.ndarray
    separation: np.ndarray
    stderr: np.ndarray | None = None


def assemble_two_point(G) -> np.ndarray:
    """``eta_{ms} G_{nr} - eta_{mr} G_{ns} + eta_{nr} G_{sm} - eta_{ns} G_{mr}`` as 6x6."""
    eta = METRIC
    T = (np.einsum("ms,...nr->...mnsr", eta, G)
         - np.einsum("mr,...ns->...mnsr", eta, G)
         + np.einsum("nr,...sm->...mnsr", eta, G)
         - np.einsum("ns,...mr->...mnsr", eta, G))
    return pair_matrix(T)


def analytic_two_point(g, dx) -> TwoPointTensor:
    """Two-point tensor from a profile exposing ``second_derivatives(dx) -> G_{mu nu}``."""
    dx = np.asarray(dx, dtype=float)
    return TwoPointTensor(assemble_two_point(g.second_derivatives(dx)), dx)


def empirical_two_point_many(spec: SpectralDensity, n_modes: int, n_seeds: int, xs, x_ref,
                             seed: int = 0, epsilon: float = DEFAULT_EPSILON,
                             transform: np.ndarray | None = None) -> list[TwoPointTensor]:
    """Monte Carlo ``<F(x_i) F(x_ref)^T>`` for several points sharing one reference point.

    If ``transform`` (a boost ``L``) is given, every realization is boosted by ``L``
    before evaluation, i.e. the estimate is for the field seen in the frame ``L x``.
    """
    if n_seeds < 2:
        raise ValueError(f"n_seeds must be >= 2, got {n_seeds}")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    x_ref = np.asarray(x_ref, dtype=float)
    pts = np.vstack([xs, x_ref[None, :]])
    P = xs.shape[0]
    s1 = np.zeros((P, 6, 6))
    s2 = np.zeros((P, 6, 6))
    for i in range(n_seeds):
        real = sample_realization(spec, n_modes, derive_seed(seed, TAG_TWO_POINT, i), epsilon)
        if transform is not None:
            real = real.boosted(transform)
        F = evaluate_field(real, pts)
        prod = F[:P, :, None] * F[P, None, :]
        s1 += prod
        s2 += prod * prod
    mean = s1 / n_seeds
    var = (s2 / n_seeds - mean * mean) * n_seeds / (n_seeds - 1)
    se = np.sqrt(np.maximum(var, 0.0) / n_seeds)
    return [TwoPointTensor(mean[j], xs[j] - x_ref, se[j]) for j in range(P)]


def empirical_two_point(spec: SpectralDensity, n_modes: int, n_seeds: int, x, x_prime,
                        seed: int = 0, epsilon: float = DEFAULT_EPSILON) -> TwoPointTensor:
    return empirical_two_point_many(spec, n_modes, n_seeds, [x], x_prime, seed, epsilon)[0]


# --------------------------------------------------------------------------- Bianchi constraint


def mode_bianchi_residuals(real: FieldRealization) -> np.ndarray:
    """Per-mode ``max_beta |eps^{a beta m n} k_a z_{mn}|`` relative to ``|k| |z|``."""
    kl = lower(real.k)
    Z = tensor_matrix(real.z)
    res = np.einsum("abmn,ia,imn->ib", LEVI_CIVITA, kl, Z)
    scale = np.linalg.norm(real.k, axis=1) * np.linalg.norm(real.z, axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    return np.max(np.abs(res), axis=1) / scale


def bianchi_residual(real: FieldRealization, x, h: float) -> float:
    """``max_beta |eps^{a beta m n} d_a F_{mn}|`` at ``x`` with central differences of step h."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    offsets = np.vstack([h * np.eye(4), -h * np.eye(4)])
    F = evaluate_field(real, x[None, :] + offsets)
    dF = (F[:4] - F[4:]) / (2.0 * h)          # d_alpha F_packed, alpha = 0..3
    res = np.einsum("abmn,amn->b", LEVI_CIVITA, tensor_matrix(dF))
    return float(np.max(np.abs(res)))
