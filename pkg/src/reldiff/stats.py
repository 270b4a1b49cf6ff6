"""Mergeable moment accumulators and goodness-of-fit tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats


@dataclass
class MomentSums:
    """Raw power sums of momentum samples at a set of checkpoints.

    Merging is plain addition, so partial sums from independent blocks combine
    associatively; merging in a fixed block order gives reproducible rounding.
    """

    n: np.ndarray        # (K,)
    p: np.ndarray        # (K, 3)
    pp: np.ndarray       # (K, 3, 3)
    pp2: np.ndarray      # (K, 3, 3)  sums of (p_j p_l)^2
    p0: np.ndarray       # (K,)
    p0sq: np.ndarray     # (K,)
    p0quad: np.ndarray   # (K,)

    @classmethod
    def zeros(cls, k: int) -> "MomentSums":
        return cls(np.zeros(k), np.zeros((k, 3)), np.zeros((k, 3, 3)), np.zeros((k, 3, 3)),
                   np.zeros(k), np.zeros(k), np.zeros(k))

    def add(self, cp: int, p3: np.ndarray, mc: float = 1.0) -> None:
        """Add samples ``p3`` (n, 3) at checkpoint index ``cp``."""
        p3 = np.asarray(p3, dtype=float)
        if p3.size == 0:
            return
        outer = p3[:, :, None] * p3[:, None, :]
        e2 = mc * mc + np.sum(p3 * p3, axis=1)
        self.n[cp] += p3.shape[0]
        self.p[cp] += p3.sum(axis=0)
        self.pp[cp] += outer.sum(axis=0)
        self.pp2[cp] += (outer * outer).sum(axis=0)
        self.p0[cp] += np.sqrt(e2).sum()
        self.p0sq[cp] += e2.sum()
        self.p0quad[cp] += (e2 * e2).sum()

    def merge(self, other: "MomentSums") -> "MomentSums":
        return MomentSums(*(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__))

    def moments(self) -> dict[str, np.ndarray]:
        """Means and standard errors of ``p``, ``p p^T``, ``p0`` and ``p0^2``."""
        n = self.n
        nb = n[:, None]
        nbb = n[:, None, None]
        safe = np.maximum(n - 1, 1)
        with np.errstate(invalid="ignore", divide="ignore"):     # empty checkpoints give NaN
            return self._moments(n, nb, nbb, safe)

    def _moments(self, n, nb, nbb, safe):
        def se(mean, meansq, count, dof):
            return np.sqrt(np.maximum(meansq - mean * mean, 0.0) * count / dof / np.maximum(count, 1))

        mean_p = self.p / nb
        mean_pp = self.pp / nbb
        mean_p0 = self.p0 / n
        mean_p0sq = self.p0sq / n
        diag = np.einsum("kjj->kj", mean_pp)
        return {
            "n": n,
            "mean_p": mean_p,
            "se_p": se(mean_p, diag, nb, safe[:, None]),
            "mean_pp": mean_pp,
            "se_pp": se(mean_pp, self.pp2 / nbb, nbb, safe[:, None, None]),
            "mean_p0": mean_p0,
            "se_p0": se(mean_p0, mean_p0sq, n, safe),
            "mean_p0sq": mean_p0sq,
            "se_p0sq": se(mean_p0sq, self.p0quad / n, n, safe),
        }


def z_scores(a, b, se_a, se_b, rel_tol: float = 0.0) -> np.ndarray:
    """``|a - b| / (combined standard error + rel_tol |b|)``; zero where both terms vanish."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.hypot(np.asarray(se_a, float), np.asarray(se_b, float)) + rel_tol * np.abs(b)
    diff = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), np.where(diff > 0, np.inf, 0.0))
    return z


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    passed: bool
    counts: np.ndarray
    expected: np.ndarray
    edges: np.ndarray


def equal_probability_edges(cdf, n_bins: int, lo: float, hi: float) -> np.ndarray:
    """Interior edges ``e_i`` with ``cdf(e_i) = i / n_bins``, found by root bracketing."""
    edges = []
    a = lo
    for i in range(1, n_bins):
        target = i / n_bins
        b = a
        step = max(hi - lo, 1.0) * 1e-3
        while cdf(b) < target:
            b = b + step
            step *= 2
        edges.append(optimize.brentq(lambda x: cdf(x) - target, a, b, xtol=1e-13))
        a = edges[-1]
    return np.array(edges)


def chi_square_gof(samples, cdf, n_bins: int = 30, lo: float = -np.inf, hi: float = np.inf,
                   alpha: float = 0.01, two_sided: bool = True) -> ChiSquareResult:
    """Pearson test of ``samples`` against a continuous target with equal-expected-count bins.

    ``lo`` is the lower end of the support (finite), used to start the edge search.
    Two-sided: fails if the upper tail probability is below ``alpha/2`` or above
    ``1 - alpha/2`` (a fit that is too good is also flagged).
    """
    samples = np.asarray(samples, dtype=float)
    if n_bins < 2:
        raise ValueError("need at least two bins")
    start = lo if np.isfinite(lo) else float(np.min(samples)) - 1.0
    inner = equal_probability_edges(cdf, n_bins, start, hi if np.isfinite(hi) else start + 10.0)
    counts = np.bincount(np.searchsorted(inner, samples, side="right"), minlength=n_bins).astype(float)
    expected = np.full(n_bins, samples.size / n_bins)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    dof = n_bins - 1
    p = float(stats.chi2.sf(chi2, dof))
    if two_sided:
        passed = alpha / 2 < p < 1 - alpha / 2
    else:
        passed = p > alpha
    return ChiSquareResult(chi2, dof, p, passed, counts, expected, inner)


class JuttnerEnergy:
    """Marginal density of ``p0`` for ``rho ~ exp(-p0 / (mc T))`` on the mass shell.

    ``f(p0) ~ p0 sqrt(p0^2 - m^2c^2) exp(-p0 / (mc T))`` on ``[mc, inf)``; ``T`` is in
    units of ``mc^2``.
    """

    def __init__(self, mc: float = 1.0, temperature: float = 1.0):
        self.mc = float(mc)
        self.temperature = float(temperature)
        self._beta = 1.0 / (self.mc * self.temperature)
        self._norm = integrate.quad(self._raw, self.mc, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
        hi = self.mc * (1.0 + 80.0 * self.temperature)
        self._grid = np.concatenate([self.mc + (hi - self.mc) * np.linspace(0, 1, 400001) ** 2])
        raw = self._raw(self._grid)
        self._cdf = integrate.cumulative_trapezoid(raw, self._grid, initial=0.0)
        self._cdf /= self._cdf[-1]

    def _raw(self, e):
        e = np.asarray(e, dtype=float)
        return e * np.sqrt(np.maximum(e * e - self.mc**2, 0.0)) * np.exp(-self._beta * (e - self.mc))

    def pdf(self, e):
        return self._raw(e) / self._norm

    def cdf(self, e):
        """Exact-by-quadrature CDF (scalar)."""
        if e <= self.mc:
            return 0.0
        return float(integrate.quad(self._raw, self.mc, e, epsabs=0, epsrel=1e-12, limit=200)[0] / self._norm)

    def mean(self) -> float:
        num = integrate.quad(lambda e: e * self._raw(e), self.mc, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
        return float(num / self._norm)

    def test(self, p0_samples, n_bins: int = 30, alpha: float = 0.01) -> ChiSquareResult:
        return chi_square_gof(p0_samples, self.cdf, n_bins, lo=self.mc, alpha=alpha)

    def chi2_distance(self, p0_samples, n_bins: int = 30) -> float:
        """Pearson statistic per sample, used as a cheap mixing diagnostic."""
        edges = np.interp(np.arange(1, n_bins) / n_bins, self._cdf, self._grid)
        counts = np.bincount(np.searchsorted(edges, p0_samples, side="right"), minlength=n_bins)
        n = len(p0_samples)
        return float(np.sum((counts - n / n_bins) ** 2 / (n / n_bins)) / n)
