"""Minkowski-space tensor algebra.

Conventions used everywhere in the package:

* metric ``eta = diag(+1, -1, -1, -1)``;
* four-vectors are stored with upper (contravariant) indices, ``a = (a0, a1, a2, a3)``;
* an antisymmetric field-strength tensor ``F_{mu nu}`` (lower indices) is packed
  into six reals ``(e1, e2, e3, b1, b2, b3)`` with

      e_j = F_{0j},   b1 = F_{32},   b2 = F_{13},   b3 = F_{21}.

  With this packing ``dp^mu/dtau = F^mu_nu p^nu / (m c)`` reads
  ``dp0 = e.p``, ``dp = e p0 + p x b`` (unit positive charge).

Arrays may carry leading batch axes; the component axis is always last.
"""
from __future__ import annotations

import itertools

import numpy as np

METRIC = np.diag([1.0, -1.0, -1.0, -1.0])
_SIGN = np.array([1.0, -1.0, -1.0, -1.0])

# (mu, nu) index pair carried by each slot of the packed 6-vector
PAIRS = ((0, 1), (0, 2), (0, 3), (3, 2), (1, 3), (2, 1))


def _levi_civita() -> np.ndarray:
    eps = np.zeros((4, 4, 4, 4))
    for perm in itertools.permutations(range(4)):
        inv = sum(1 for i in range(4) for j in range(i + 1, 4) if perm[i] > perm[j])
        eps[perm] = -1.0 if inv % 2 else 1.0
    return eps


# totally antisymmetric symbol with eps^{0123} = +1
LEVI_CIVITA = _levi_civita()


def lower(a: np.ndarray) -> np.ndarray:
    """Flip the sign of the spatial components (raising is the same map)."""
    return np.asarray(a, dtype=float) * _SIGN


raise_index = lower


def minkowski_dot(a, b) -> np.ndarray | float:
    """``a0 b0 - a.b`` over the last axis."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a[..., 0] * b[..., 0] - np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def tensor_matrix(f) -> np.ndarray:
    """Full antisymmetric ``F_{mu nu}`` (lower indices) from the packed 6-vector."""
    f = np.asarray(f)
    out = np.zeros(f.shape[:-1] + (4, 4), dtype=f.dtype)
    for slot, (mu, nu) in enumerate(PAIRS):
        out[..., mu, nu] = f[..., slot]
        out[..., nu, mu] = -f[..., slot]
    return out


def tensor_from_matrix(F) -> np.ndarray:
    """Inverse of :func:`tensor_matrix` (reads the upper-triangle-equivalent slots)."""
    F = np.asarray(F)
    return np.stack([F[..., mu, nu] for mu, nu in PAIRS], axis=-1)


def mixed_matrix(f) -> np.ndarray:
    """``F^mu_nu = eta^{mu a} F_{a nu}``, the generator acting on upper-index momenta."""
    return np.einsum("m,...mn->...mn", _SIGN, tensor_matrix(f))


def lorentz_force(f, p) -> np.ndarray:
    """Raised force ``F^mu_nu p^nu``; Minkowski-orthogonal to ``p``."""
    return np.einsum("...mn,...n->...m", mixed_matrix(f), np.asarray(p, dtype=float))


def boost_matrix(v, c: float = 1.0) -> np.ndarray:
    """Pure boost ``Lambda^mu_nu`` to a frame moving with 3-velocity ``-v``.

    A particle at rest is mapped to one moving with velocity ``v``.
    """
    beta = np.asarray(v, dtype=float) / c
    b2 = float(beta @ beta)
    if b2 >= 1.0:
        raise ValueError(f"boost speed |v| = {np.sqrt(b2) * c} is not below c = {c}")
    L = np.eye(4)
    if b2 == 0.0:
        return L
    gamma = 1.0 / np.sqrt(1.0 - b2)
    L[0, 0] = gamma
    L[0, 1:] = gamma * beta
    L[1:, 0] = gamma * beta
    L[1:, 1:] += (gamma - 1.0) * np.outer(beta, beta) / b2
    return L


def boost(v, a, c: float = 1.0) -> np.ndarray:
    return np.einsum("mn,...n->...m", boost_matrix(v, c), np.asarray(a, dtype=float))


def transform_tensor(L: np.ndarray, f) -> np.ndarray:
    """Transform a packed lower-index antisymmetric tensor under ``x -> L x``."""
    Linv = np.linalg.inv(L)
    F = tensor_matrix(f)
    Fp = np.einsum("am,bn,...ab->...mn", Linv, Linv, F)
    return tensor_from_matrix(Fp)


def pair_matrix(T: np.ndarray) -> np.ndarray:
    """Map a rank-4 array ``T[mu, nu, sigma, rho]`` onto the 6x6 pair basis."""
    idx = np.array(PAIRS)
    return T[..., idx[:, 0][:, None], idx[:, 1][:, None], idx[:, 0][None, :], idx[:, 1][None, :]]


def tensor_transform_6x6(L: np.ndarray) -> np.ndarray:
    """Linear map on packed 6-vectors induced by :func:`transform_tensor`."""
    return np.stack([transform_tensor(L, e) for e in np.eye(6)], axis=-1)


def mass_shell_p0(p3, m: float = 1.0, c: float = 1.0) -> np.ndarray:
    p3 = np.asarray(p3, dtype=float)
    return np.sqrt((m * c) ** 2 + np.sum(p3 * p3, axis=-1))


def on_shell(p3, m: float = 1.0, c: float = 1.0) -> np.ndarray:
    """Four-momentum with the time component fixed by the mass shell."""
    p3 = np.asarray(p3, dtype=float)
    p0 = mass_shell_p0(p3, m, c)
    return np.concatenate([np.asarray(p0)[..., None], p3], axis=-1)
