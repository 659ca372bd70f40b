"""l_p sampling from a sampler sketch.

Index ``i`` survives column ``j`` when ``x_hat_i * w_{i,j} >= t``; the
output is the sole survivor of the first column that has exactly one, and
FAIL when no column does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import EstimateReport, halving_search, median_magnitudes
from .sketch import LinearSketch

COLUMN_CHUNK = 64


@dataclass
class SampleOutcome:
    index: int
    value: float
    j_star: int
    failed: bool

    def line(self) -> str:
        if self.failed:
            return "FAIL"
        return f"index={self.index} value={self.value!r} column={self.j_star}"


FAIL = SampleOutcome(-1, 0.0, -1, True)


def sampler_xhat(sketch: LinearSketch, r: float) -> np.ndarray:
    """``median_j |H_j(h_j(i))|^p / (r * w_i)``; with ``r ~ ||x||_p^p`` this is ``~|x_i|^p / r``."""
    med = median_magnitudes(sketch)
    return med ** sketch.config.p / (r * sketch.all_weights())


def sample(sketch: LinearSketch, r: float) -> SampleOutcome:
    c = sketch.config
    if c.problem != "sampler":
        raise ValueError("sample needs a sampler sketch")
    if not r > 0:
        return FAIL
    xhat = sampler_xhat(sketch, r)
    live = np.flatnonzero(xhat > 0.0)
    if live.size == 0:
        return FAIL
    xl = xhat[live][None, :]
    # columns are scanned in chunks; the first qualifying one is usually early
    for lo in range(0, c.k, COLUMN_CHUNK):
        hi = min(c.k, lo + COLUMN_CHUNK)
        alive = sketch.weights.column_block(live, lo, hi) * xl >= c.t
        counts = alive.sum(axis=1)
        hits = np.flatnonzero(counts == 1)
        if hits.size:
            j = int(hits[0])
            i_star = int(live[np.flatnonzero(alive[j])[0]])
            return SampleOutcome(i_star, float(xhat[i_star] * r), lo + j, False)
    return FAIL


def sampler_r(sketch: LinearSketch) -> EstimateReport:
    """Estimate of ``||x||_p^p`` from the sampler's companion l_p sketch."""
    if sketch.aux is None:
        raise ValueError("sketch has no companion norm sketch")
    return halving_search(sketch.aux)


def sample_auto(sketch: LinearSketch) -> tuple[SampleOutcome, EstimateReport]:
    report = sampler_r(sketch)
    if not report.success_flag:
        return FAIL, report
    return sample(sketch, report.value), report
