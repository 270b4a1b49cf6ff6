"""Relativistic momentum diffusions on the mass shell.

Two generators act on functions of the spatial momentum ``p``:

* Schay-Dudley (proper-time clock)
      Delta_H f = (m^2c^2 delta^{jl} + p^j p^l) d_j d_l f + 3 p^l d_l f
* Juttner drift (the same operator plus friction)
      Delta_beta f = Delta_H f - (p0 / mc) p^j d_j f

The diffusion itself is generated by ``(kappa^2 / 2) Delta``.  The Juttner kind is
normally run on the lab clock: a lab-time step ``dt`` is a proper-time step
``dt m c^2 / p0``, and this time change turns the stationary density
``exp(-p0/mc) / p0`` of the proper-time process into the Juttner density
``exp(-p0/mc)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .dynamics import ParticleParams


class Kind(str, Enum):
    SCHAY_DUDLEY = "schay-dudley-proper"
    JUTTNER_LAB = "juttner-lab"

    @property
    def code(self) -> int:
        return _kernels.SCHAY_DUDLEY if self is Kind.SCHAY_DUDLEY else _kernels.JUTTNER_LAB


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionParams:
    kappa2: float
    params: ParticleParams = ParticleParams()
    kind: Kind = Kind.SCHAY_DUDLEY

    def __post_init__(self):
        if not self.kappa2 >= 0:
            raise ValueError(f"kappa2 must be >= 0, got {self.kappa2}")
        object.__setattr__(self, "kind", Kind(self.kind))


@dataclass(frozen=True, eq=False)
class MomentumState:
    """Spatial momentum; ``p0`` is derived from the mass shell."""

    p: np.ndarray
    params: ParticleParams = ParticleParams()
    x: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (3,):
            raise ValueError(f"p must be a 3-vector, got shape {p.shape}")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)
        if self.x is not None:
            x = np.array(self.x, dtype=float)
            x.flags.writeable = False
            object.__setattr__(self, "x", x)

    @property
    def p0(self) -> float:
        return float(np.sqrt(self.params.mc**2 + self.p @ self.p))


def _p0(p, mc):
    p = np.asarray(p, dtype=float)
    return np.sqrt(mc * mc + np.sum(p * p, axis=-1))


def diffusion_matrix(p, params: ParticleParams = ParticleParams()) -> np.ndarray:
    """``a^{jl} = m^2c^2 delta^{jl} + p^j p^l``."""
    p = np.asarray(p, dtype=float)
    return params.mc**2 * np.eye(3) + p[..., :, None] * p[..., None, :]


def drift_field(kind: Kind, p, params: ParticleParams = ParticleParams()) -> np.ndarray:
    """First-order coefficient of ``Delta``: ``3p`` or ``(3 - p0/mc) p``."""
    p = np.asarray(p, dtype=float)
    if Kind(kind) is Kind.SCHAY_DUDLEY:
        return 3.0 * p
    return (3.0 - _p0(p, params.mc) / params.mc)[..., None] * p


# --------------------------------------------------------------------------- generators


def _apply_callable(kind: Kind, f, p, h: float, params: ParticleParams) -> float:
    p = np.asarray(p, dtype=float)
    E = np.eye(3) * h
    f0 = f(p)
    grad = np.empty(3)
    hess = np.empty((3, 3))
    for j in range(3):
        fp, fm = f(p + E[j]), f(p - E[j])
        grad[j] = (fp - fm) / (2 * h)
        hess[j, j] = (fp - 2 * f0 + fm) / (h * h)
        for l in range(j + 1, 3):
            v = (f(p + E[j] + E[l]) - f(p + E[j] - E[l]) - f(p - E[j] + E[l]) + f(p - E[j] - E[l])) / (4 * h * h)
            hess[j, l] = hess[l, j] = v
    a = diffusion_matrix(p, params)
    return float(np.sum(a * hess) + drift_field(kind, p, params) @ grad)


def generator_apply(kind: Kind, f, p, h: float = 1e-3, params: ParticleParams = ParticleParams(),
                    grid: "MomentumGrid | None" = None) -> float:
    """``Delta f`` at ``p`` by central differences (second-order in h).

    ``f`` is a callable on 3-vectors, or an array of node values when ``grid`` is
    given; in the grid case ``p`` must be an interior node and ``h`` is the grid
    spacing.
    """
    kind = Kind(kind)
    if grid is None:
        if not h > 0:
            raise ValueError(f"h must be positive, got {h}")
        return _apply_callable(kind, f, p, h, params)
    values = np.asarray(f, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"grid function shape {values.shape} does not match grid {grid.shape}")
    idx = grid.index_of(p)
    if any(i <= 0 or i >= grid.n - 1 for i in idx):
        raise DomainError(f"p = {np.asarray(p).tolist()} is a boundary point of the grid")
    def nodal(q):
        j = grid.index_of(q)
        return values[j]

    return _apply_callable(kind, nodal, grid.node(idx), grid.h, params)


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform cubic grid with ``n`` nodes per axis over ``[-half_width, half_width]^3``."""

    n: int
    half_width: float

    def __post_init__(self):
        if self.n < 3 or not self.half_width > 0:
            raise ValueError("grid needs n >= 3 and positive half_width")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n)

    def node(self, idx) -> np.ndarray:
        return self.axis[np.asarray(idx)]

    def index_of(self, p) -> tuple[int, int, int]:
        p = np.asarray(p, dtype=float)
        pos = (p + self.half_width) / self.h
        idx = np.rint(pos).astype(int)
        if np.any(np.abs(pos - idx) > 1e-6) or np.any(idx < 0) or np.any(idx >= self.n):
            raise DomainError(f"p = {p.tolist()} is not a grid node")
        return tuple(int(i) for i in idx)

    def points(self) -> np.ndarray:
        ax = self.axis
        return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)

    def evaluate(self, f) -> np.ndarray:
        """Node values of a vectorized callable."""
        return np.asarray(f(self.points()), dtype=float)


def generator_matrix(kind: Kind, grid: MomentumGrid, params: ParticleParams = ParticleParams()):
    """Divergence-form discretization on the interior nodes (zero outside).

    ``Delta f = (1/omega) d_j(omega a^{jl} d_l f)`` with ``omega = 1/p0`` for the
    Schay-Dudley kind and ``omega = exp(-p0/mc)/p0`` for the Juttner kind.  Returns
    ``(L, omega)`` with ``L`` sparse over interior nodes in C order and ``omega`` the
    matching node weights; ``diag(omega) L`` is symmetric by construction.
    """
    kind = Kind(kind)
    mc = params.mc
    n, h = grid.n, grid.h
    m = n - 2
    ax = grid.axis

    def omega_at(P):
        p0 = _p0(P, mc)
        w = 1.0 / p0
        if kind is Kind.JUTTNER_LAB:
            w = w * np.exp(-p0 / mc)
        return w

    def coef(P):
        # omega a^{jl}
        return omega_at(P)[..., None, None] * diffusion_matrix(P, params)

    idx = np.arange(m)
    I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
    lin = lambda a, b, c: (a * m + b) * m + c  # noqa: E731
    nodes = np.stack([I, J, K], axis=-1) + 1          # full-grid indices of interior nodes
    P = ax[nodes]
    rows, cols, vals = [], [], []

    def add(target_off, coeff):
        tgt = np.stack([I, J, K], axis=-1) + np.asarray(target_off)
        ok = np.all((tgt >= 0) & (tgt < m), axis=-1)
        rows.append(lin(I, J, K)[ok])
        cols.append(lin(tgt[..., 0], tgt[..., 1], tgt[..., 2])[ok])
        vals.append(np.broadcast_to(coeff, ok.shape)[ok])

    E = np.eye(3, dtype=int)
    for j in range(3):
        # face-centred diagonal terms
        cp = coef(P + 0.5 * h * E[j])[..., j, j]
        cm = coef(P - 0.5 * h * E[j])[..., j, j]
        add(E[j], cp / h**2)
        add(-E[j], cm / h**2)
        add(np.zeros(3, int), -(cp + cm) / h**2)
        for l in range(3):
            if l == j:
                continue
            c_plus = coef(P + h * E[j])[..., j, l]
            c_minus = coef(P - h * E[j])[..., j, l]
            s = 1.0 / (4 * h * h)
            add(E[j] + E[l], c_plus * s)
            add(E[j] - E[l], -c_plus * s)
            add(-E[j] + E[l], -c_minus * s)
            add(-E[j] - E[l], c_minus * s)
    D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m**3, m**3))
    omega = omega_at(P).reshape(-1)
    L = sp.diags(1.0 / omega) @ D
    return L.tocsr(), omega


# --------------------------------------------------------------------------- SDE coefficients


def sde_drift(p, dparams: DiffusionParams) -> np.ndarray:
    """Ito drift of the generator ``(kappa^2/2) Delta`` on its own clock."""
    return 0.5 * dparams.kappa2 * drift_field(dparams.kind, p, dparams.params)


def sde_diffusion_root(p, dparams: DiffusionParams) -> np.ndarray:
    """``sigma = kappa (mc I + (p0 - mc) phat phat^T)``, so that ``sigma sigma^T = kappa^2 a``."""
    p = np.asarray(p, dtype=float)
    mc = dparams.params.mc
    p0 = _p0(p, mc)
    pp = np.sum(p * p, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(pp > 0, (p0 - mc) / np.where(pp > 0, pp, 1.0), 0.0)
    outer = p[..., :, None] * p[..., None, :]
    return np.sqrt(dparams.kappa2) * (mc * np.eye(3) + scale[..., None, None] * outer)


def effective_step(p, dparams: DiffusionParams, ds: float) -> np.ndarray:
    """Proper-time increment of one step: ``ds``, or ``ds m c^2 / p0`` on the lab clock."""
    if dparams.kind is Kind.SCHAY_DUDLEY:
        return np.full(np.shape(p)[:-1], float(ds))
    prm = dparams.params
    return ds * prm.mc * prm.c / _p0(p, prm.mc)


def sde_step(state: MomentumState, dparams: DiffusionParams, ds: float, noise) -> MomentumState:
    """One Euler-Maruyama step ``p += b ds_eff + sigma sqrt(ds_eff) noise``."""
    if not ds > 0:
        raise ValueError(f"ds must be positive, got {ds}")
    noise = np.asarray(noise, dtype=float)
    p = state.p
    dse = float(effective_step(p, dparams, ds))
    p_new = p + sde_drift(p, dparams) * dse + sde_diffusion_root(p, dparams) @ noise * np.sqrt(dse)
    x_new = state.x
    if x_new is not None and dparams.kind is Kind.SCHAY_DUDLEY:
        mc = dparams.params.mc
        p4 = np.concatenate([[state.p0], p])
        x_new = state.x + p4 / mc * ds
    return MomentumState(p_new, state.params, x_new)


def sde_evolve(p, dparams: DiffusionParams, ds: float, noise, kappa2_scale=None) -> np.ndarray:
    """Vectorized Euler-Maruyama: ``p`` (n, 3) advanced over ``noise.shape[0]`` steps (copy)."""
    p = np.array(p, dtype=float, order="C")
    noise = np.ascontiguousarray(noise, dtype=float)
    if kappa2_scale is None:
        kappa2_scale = np.ones(noise.shape[0])
    prm = dparams.params
    _kernels.sde_steps(p, noise, float(ds), float(dparams.kappa2), dparams.kind.code, prm.mc, prm.c,
                       np.ascontiguousarray(kappa2_scale, dtype=float))
    return p


# --------------------------------------------------------------------------- stationary densities


def stationary_flux(p, dparams: DiffusionParams, alpha: float = -1.0, beta: float | None = None) -> np.ndarray:
    """Flux ``J^j = d_l(a^{jl} rho) - b^j rho`` of the Juttner generator at ``rho = p0^alpha exp(-beta p0)``.

    Closed form: ``J = rho p [1 + alpha + p0 (1/mc - beta)]``; ``beta`` defaults to
    ``1/mc``, the zero-flux value together with ``alpha = -1``.  The flux omits the
    overall ``kappa^2/2``.
    """
    prm = dparams.params
    mc = prm.mc
    beta = 1.0 / mc if beta is None else beta
    p = np.asarray(p, dtype=float)
    p0 = _p0(p, mc)
    rho = p0**alpha * np.exp(-beta * p0)
    return (rho * (1.0 + alpha + p0 * (1.0 / mc - beta)))[..., None] * p


def juttner_density(p, params: ParticleParams = ParticleParams(), temperature: float = 1.0) -> np.ndarray:
    """Unnormalized ``exp(-p0 / (mc T))`` with ``T`` in units of ``mc^2``."""
    return np.exp(-_p0(p, params.mc) / (params.mc * temperature))
