"""Precision sampling: the weight law W(k), weight generation and the
deterministic sum reconstruction.

A weight ``w ~ W(k)`` is the maximum of ``k`` reciprocals of independent
uniforms, so ``Pr[w <= x] = (1 - 1/x)^k`` on ``[1, inf)``. Given weights
``w_i`` and estimates ``a_hat_i`` that are each accurate to within additive
``1/w_i``, :func:`reconstruct` returns an estimate of ``sum_i a_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import hashing

WEIGHT_MODES = ("inverse", "columns")


@dataclass(frozen=True)
class PslParams:
    """Accuracy parameters of the reconstruction.

    ``k`` and ``t`` default to ``ceil(zeta / (rho * epsilon**2))`` and
    ``4 / epsilon``; either may be given explicitly instead.
    """

    epsilon: float | None = None
    rho: float | None = None
    zeta: float = 8.0
    k: int | None = None
    t: float | None = None

    def __post_init__(self):
        if self.k is None:
            if self.epsilon is None or self.rho is None:
                raise ValueError("need epsilon and rho to derive k")
            object.__setattr__(self, "k", math.ceil(self.zeta / (self.rho * self.epsilon ** 2)))
        if self.t is None:
            if self.epsilon is None:
                raise ValueError("need epsilon to derive t")
            object.__setattr__(self, "t", 4.0 / self.epsilon)
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.t <= 0:
            raise ValueError("t must be positive")


@dataclass(frozen=True)
class ApproximatorSpec:
    rho: float
    f: float = 1.0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not 1.0 <= self.f <= 2.0:
            raise ValueError("f must lie in [1, 2]")


def is_approximator(tau_hat: float, tau: float, spec: ApproximatorSpec) -> bool:
    """True iff ``tau/f - rho <= tau_hat <= f*tau + rho``."""
    return tau / spec.f - spec.rho <= tau_hat <= spec.f * tau + spec.rho


@dataclass(frozen=True)
class PrecisionWeights:
    """Pairwise independent weights ``w_i ~ W(k)``, recomputed from seeds.

    ``mode="columns"`` keeps ``k`` independent affine seeds and sets
    ``w_i = max_j 1/u_{i,j}`` literally; the per-column values are also
    available through :meth:`columns`. ``mode="inverse"`` draws a single
    pairwise independent uniform ``u_i`` and maps it through the inverse CDF
    of W(k), which has the same marginal law at O(1) cost per index.
    """

    k: int
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    mode: str = "inverse"
    P: int = hashing.MERSENNE61

    @classmethod
    def from_master(cls, master_seed: int, k: int, mode: str = "inverse") -> "PrecisionWeights":
        if mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight mode {mode!r}")
        if mode == "columns":
            a, b = hashing.derive_seed_arrays(master_seed, hashing.ROLE_WEIGHT_COLUMN, k)
        else:
            a, b = hashing.derive_seed_arrays(master_seed, hashing.ROLE_WEIGHT_INVERSE, 1)
        return cls(k=k, a=a, b=b, mode=mode)

    def seed(self, column: int) -> hashing.AffineSeed:
        return hashing.AffineSeed(int(self.a[column]), int(self.b[column]), self.P)

    def uniforms(self, indices) -> np.ndarray:
        """Raw uniforms in (0, 1]; shape ``(k, n)`` for columns, ``(1, n)`` otherwise."""
        raw = hashing.affine_raw_many(self.a, self.b, indices, self.P)
        return (raw.astype(np.float64) + 1.0) / float(self.P)

    def columns(self, indices) -> np.ndarray:
        """Per-column weights ``w_{i,j} = 1/u_{i,j}``, shape ``(k, n)``."""
        if self.mode != "columns":
            raise ValueError("per-column weights need mode='columns'")
        return 1.0 / self.uniforms(indices)

    def column_block(self, indices, lo: int, hi: int) -> np.ndarray:
        """``w_{i,j}`` for columns ``lo <= j < hi``, shape ``(hi - lo, n)``."""
        if self.mode != "columns":
            raise ValueError("per-column weights need mode='columns'")
        raw = hashing.affine_raw_many(self.a[lo:hi], self.b[lo:hi], indices, self.P)
        return 1.0 / ((raw.astype(np.float64) + 1.0) / float(self.P))

    def weights(self, indices, chunk: int = 1 << 22) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        if self.mode == "inverse":
            u = self.uniforms(idx)[0]
            return inverse_cdf(u, self.k)
        step = max(1, chunk // self.k)
        out = np.empty(idx.shape[0], dtype=np.float64)
        for lo in range(0, idx.shape[0], step):
            part = idx[lo:lo + step]
            # max_j 1/u_j == 1/min_j u_j exactly in floating point
            out[lo:lo + step] = 1.0 / self.uniforms(part).min(axis=0)
        return out

    def weight(self, i: int) -> float:
        return float(self.weights(np.array([i]))[0])


def inverse_cdf(u: np.ndarray, k: int) -> np.ndarray:
    """Map uniforms in (0, 1] to W(k) by solving ``(1 - 1/w)^k = 1 - u``."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return -1.0 / np.expm1(np.log1p(-u) / k)


def sample_weight(weights: PrecisionWeights, i: int) -> float:
    return weights.weight(i)


def weight_cdf(x, k: int):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 1.0, (1.0 - 1.0 / np.maximum(x, 1.0)) ** k, 0.0)


@dataclass
class ReconstructDiagnostics:
    contributing: int = 0
    degenerate: int = 0
    terms: np.ndarray | None = None


def reconstruct(weights, estimates, params: PslParams,
                diagnostics: ReconstructDiagnostics | None = None) -> float:
    """Deterministic sum estimate ``t * sum_i s_i``.

    ``s_i = 1/k + (k-1)/k * (a_hat_i*w_i/t - 1)/(w_i - 1)`` when
    ``a_hat_i*w_i >= t`` and 0 otherwise. ``weights`` is either an array of
    ``w_i`` values or a :class:`PrecisionWeights` (evaluated on ``0..n-1``).
    A weight of exactly 1 above threshold takes the limit value ``1/k``.
    """
    a_hat = np.asarray(estimates, dtype=np.float64)
    if isinstance(weights, PrecisionWeights):
        w = weights.weights(np.arange(a_hat.shape[0]))
    else:
        w = np.asarray(weights, dtype=np.float64)
    if w.shape != a_hat.shape:
        raise ValueError("weights and estimates must have the same length")
    if np.any(a_hat < 0):
        raise ValueError("estimates must be non-negative")
    k, t = params.k, params.t
    z = a_hat * w / t
    hit = z >= 1.0
    s = np.zeros_like(z)
    regular = hit & (w > 1.0)
    s[regular] = 1.0 / k + (k - 1) / k * (z[regular] - 1.0) / (w[regular] - 1.0)
    degenerate = hit & ~regular
    s[degenerate] = 1.0 / k
    if diagnostics is not None:
        diagnostics.contributing = int(hit.sum())
        diagnostics.degenerate = int(degenerate.sum())
        diagnostics.terms = s
    return float(t * s.sum())


def expected_weight_power(k: int, alpha: float) -> float:
    """``E[w^alpha]`` for ``w ~ W(k)`` by adaptive quadrature.

    Uses ``u = 1/w`` and then ``y = k*u``, giving
    ``k^alpha * int_0^k y^-alpha (1 - y/k)^(k-1) dy``; the integrable
    singularity at 0 is handled by an algebraic weight.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    opts = dict(epsabs=0.0, epsrel=1e-10, limit=500)
    if k == 1:
        return integrate.quad(lambda u: 1.0, 0.0, 1.0, weight="alg", wvar=(-alpha, 0.0), **opts)[0]

    def tail(y):
        return math.exp((k - 1) * math.log1p(-y / k)) if y < k else 0.0

    head = integrate.quad(tail, 0.0, 1.0, weight="alg", wvar=(-alpha, 0.0), **opts)[0]
    body = 0.0
    if k > 1:
        # the integrand is negligible past y ~ 800; split so quad sees the bulk
        cut = min(float(k), 60.0)
        body = integrate.quad(lambda y: y ** -alpha * tail(y), 1.0, cut, **opts)[0]
        if cut < k:
            body += integrate.quad(lambda y: y ** -alpha * tail(y), cut, min(float(k), 2000.0), **opts)[0]
    return k ** alpha * (head + body)


def conditional_weight_mean_bound(k: int, n: int) -> float:
    """``k * ln(n^5) / (1 - n^-5)``: the mean of ``sum_j 1/u_j`` given ``w <= n^5``."""
    return k * 5.0 * math.log(n) / (1.0 - float(n) ** -5)
