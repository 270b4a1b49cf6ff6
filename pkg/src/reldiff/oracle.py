"""Deterministic quadrature of spectral correlation functions.

Independent of the Monte Carlo sampler: the four-dimensional integrals

    G_{mu nu}(dx) = -eps^2 int d^4k G(k) k_mu k_nu cos(k.dx)

are reduced to two dimensions, ``(k0, t = |k|/k0)``, by doing the angular
integrals in closed form with spherical Bessel functions.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import spherical_jn

from .field import SpectralDensity


def _j1_over_z(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 / 3.0 - z * z / 30.0 + z**4 / 840.0, spherical_jn(1, zs) / zs)


class SpectralTwoPoint:
    """Exact-by-quadrature ``G_{mu nu}(dx)`` for a spectral density.

    Exposes ``second_derivatives(dx)`` so it can be passed to
    :func:`reldiff.field.analytic_two_point`.
    """

    def __init__(self, spec: SpectralDensity, epsilon: float, n_k0: int = 600, n_t: int = 96):
        self.spec = spec
        self.epsilon = float(epsilon)
        x0, w0 = leggauss(n_k0)
        xt, wt = leggauss(n_t)
        k0 = 0.5 * spec.k_max * (x0 + 1.0)
        t = spec.t_min + 0.5 * (spec.t_max - spec.t_min) * (xt + 1.0)
        self.k0 = k0[:, None]
        self.r = t[None, :] * self.k0
        # d^4k -> 4 pi r^2 dr dk0 with dr = k0 dt; 4 pi and r^2 are folded in below
        self.w = (0.5 * spec.k_max * w0)[:, None] * (0.5 * (spec.t_max - spec.t_min) * wt)[None, :] * self.k0
        self.g = spec.radial(self.k0, self.r)

    def second_derivatives(self, dx) -> np.ndarray:
        dx = np.asarray(dx, dtype=float)
        T = dx[0]
        X = dx[1:]
        R = float(np.linalg.norm(X))
        xhat = X / R if R > 0 else np.zeros(3)
        k0, r, g = self.k0, self.r, self.g
        z = r * R
        base = 4.0 * np.pi * self.w * g * self.epsilon**2
        c = np.cos(k0 * T)
        s = np.sin(k0 * T)
        j0 = spherical_jn(0, z)
        j1 = spherical_jn(1, z)
        j2 = spherical_jn(2, z)
        G = np.zeros((4, 4))
        G[0, 0] = -np.sum(base * r**2 * k0**2 * c * j0)
        g0j = np.sum(base * k0 * r**3 * j1 * s)
        G[0, 1:] = g0j * xhat
        G[1:, 0] = g0j * xhat
        iso = -np.sum(base * r**4 * c * _j1_over_z(z))
        aniso = np.sum(base * r**4 * c * j2)
        G[1:, 1:] = iso * np.eye(3) + aniso * np.outer(xhat, xhat)
        return G

    def rest_frame_xy(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Contractions ``X(s)``, ``Y(s)`` for a particle at rest, ``x(s) = (s, 0, 0, 0)``.

        ``X = eta^{mu sigma} <E_mu(0) E_sigma(x(s))>`` with ``E_mu = F_{mu nu} n^nu``, and
        ``Y = <F_{mu nu}(0) F^{mu nu}(x(s))>``.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        k0, r, g = self.k0, self.r, self.g
        base = 4.0 * np.pi * self.w * g * r**2 * self.epsilon**2
        cos = np.cos(s[:, None, None] * k0[None])
        X = -np.sum(base * (3.0 * k0**2 - r**2) * cos, axis=(1, 2))
        Y = 6.0 * np.sum(base * (r**2 - k0**2) * cos, axis=(1, 2))
        return X, Y

    def rest_frame_profiles(self, s) -> tuple[np.ndarray, np.ndarray]:
        """``H1(s)``, ``H(s)`` in the rest frame from the two contractions."""
        X, Y = self.rest_frame_xy(s)
        H1 = (Y - 2.0 * X) / 12.0
        H = X / 3.0 - 2.0 * H1
        return H1, H
