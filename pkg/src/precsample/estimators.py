"""Reconstruction from a :class:`~precsample.sketch.LinearSketch`.

Per index, ``x_hat_i = median_j |H_j(h_j(i)) / r|^p / w_i``; the vector of
``x_hat`` together with the weights goes through the precision-sampling
reconstruction. Norm drivers pick ``r`` either from the AMS counters (p > 2)
or by halving from a large power of two until the reconstructed sum clears
``(1 + 2 eps) / 4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .psl import PslParams, reconstruct
from .sketch import LinearSketch, ams_estimate

R_MIN = 2.0 ** -20


class InconsistentStreamError(RuntimeError):
    """The AMS counters and the hash tables disagree about whether x is zero."""


@dataclass
class EstimateReport:
    value: float
    r_used: float
    halving_trace: list[tuple[float, float]] = field(default_factory=list)
    success_flag: bool = True

    def lines(self) -> list[str]:
        out = [f"value={self.value!r}", f"r_used={self.r_used!r}",
               f"success={'true' if self.success_flag else 'false'}"]
        out += [f"trace r={r!r} sigma={s!r}" for r, s in self.halving_trace]
        return out


def psl_params(sketch: LinearSketch) -> PslParams:
    c = sketch.config
    return PslParams(epsilon=c.epsilon, zeta=c.zeta, k=c.k, t=c.t)


def median_magnitudes(sketch: LinearSketch, indices=None) -> np.ndarray:
    """``median_j |H_j(h_j(i))|`` for each index (exact middle element, l is odd)."""
    idx = np.arange(sketch.config.n) if indices is None else np.asarray(indices, dtype=np.int64)
    cells = np.abs(sketch.cell_values(idx))
    return np.median(cells, axis=0)


def recover_xhat(sketch: LinearSketch, r: float, i: int) -> float:
    if r <= 0:
        raise ValueError("r must be positive")
    med = median_magnitudes(sketch, [i])[0]
    return float((med / r) ** sketch.config.p / sketch.weights.weight(i))


def recover_xhat_all(sketch: LinearSketch, r: float, med: np.ndarray | None = None) -> np.ndarray:
    if r <= 0:
        raise ValueError("r must be positive")
    if med is None:
        med = median_magnitudes(sketch)
    return (med / r) ** sketch.config.p / sketch.all_weights()


def _sigma(sketch: LinearSketch, r: float, med: np.ndarray) -> float:
    return reconstruct(sketch.all_weights(), recover_xhat_all(sketch, r, med), psl_params(sketch))


def estimate_at_r(sketch: LinearSketch, r: float) -> float:
    """``r^p * sigma_hat(r)``: the reconstructed p-th moment at a fixed guess ``r``."""
    return r ** sketch.config.p * _sigma(sketch, r, median_magnitudes(sketch))


def estimate_fk(sketch: LinearSketch) -> EstimateReport:
    c = sketch.config
    if c.problem != "fk" or sketch.ams is None:
        raise ValueError("estimate_fk needs an fk sketch with AMS counters")
    med = median_magnitudes(sketch)
    r = ams_estimate(sketch.ams)
    if r == 0.0:
        if np.any(med != 0.0):
            raise InconsistentStreamError("AMS estimate is 0 but the hash tables are not empty")
        return EstimateReport(0.0, 0.0, [], True)
    sigma = _sigma(sketch, r, med)
    return EstimateReport(r ** c.p * sigma, r, [(r, sigma)], True)


def r_max(n: int, max_entry: int) -> float:
    return 2.0 ** math.ceil(math.log2(n * max_entry))


def halving_search(sketch: LinearSketch, med: np.ndarray | None = None,
                   r_min: float = R_MIN) -> EstimateReport:
    """Try ``r = r_max, r_max/2, ...`` and stop at the first ``sigma_hat(r) > (1+2eps)/4``."""
    c = sketch.config
    if med is None:
        med = median_magnitudes(sketch)
    threshold = (1.0 + 2.0 * c.epsilon) / 4.0
    trace = []
    r = r_max(c.n, c.max_entry)
    if not np.any(med):
        return EstimateReport(0.0, r_min, [], False)
    while r >= r_min:
        sigma = _sigma(sketch, r, med)
        trace.append((r, sigma))
        if sigma > threshold:
            return EstimateReport(r ** c.p * sigma, r, trace, True)
        r /= 2.0
    return EstimateReport(0.0, trace[-1][0], trace, False)


def estimate_l1(sketch: LinearSketch) -> EstimateReport:
    if sketch.config.problem != "l1":
        raise ValueError("estimate_l1 needs an l1 sketch")
    return halving_search(sketch)


def estimate_lp(sketch: LinearSketch) -> EstimateReport:
    if sketch.config.problem not in ("lp", "l1"):
        raise ValueError("estimate_lp needs an lp sketch")
    return halving_search(sketch)


def estimate(sketch: LinearSketch) -> EstimateReport:
    """Dispatch on the sketch's problem kind."""
    problem = sketch.config.problem
    if problem == "fk":
        return estimate_fk(sketch)
    if problem in ("l1", "lp"):
        return halving_search(sketch)
    raise ValueError(f"no norm estimator for problem {problem!r}; use the sampler")


def estimate_median(sketches: list[LinearSketch]) -> EstimateReport:
    """Median over independent replicas; the report of the median replica is returned."""
    reports = [estimate(s) for s in sketches]
    order = sorted(range(len(reports)), key=lambda j: reports[j].value)
    return reports[order[(len(order) - 1) // 2]]
