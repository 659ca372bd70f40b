"""Exact references and a seeded Monte Carlo trial harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import hashing
from .psl import PslParams, reconstruct

ADVERSARY_MODES = ("zero", "plus", "minus", "greedy", "honest")


def exact_norm(x, p: float) -> float:
    """``sum_i |x_i|^p`` with exactly rounded summation."""
    x = np.asarray(x, dtype=np.float64).ravel()
    return math.fsum(np.abs(x) ** p)


def exact_cascaded(x, p: float, q: float) -> float:
    """``||x||_{p,q} = (sum_i (sum_j |x_ij|^q)^(p/q))^(1/p)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a matrix")
    rows = [math.fsum(np.abs(row) ** q) ** (p / q) for row in x]
    return math.fsum(rows) ** (1.0 / p)


def exact_sampling_target(x, p: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mass = np.abs(x) ** p
    total = math.fsum(mass)
    if total == 0.0:
        raise ValueError("the zero vector has no sampling distribution")
    return mass / total


def binomial_ci_low(successes: int, trials: int, level: float = 0.99) -> float:
    """One-sided exact (Clopper-Pearson) lower confidence bound."""
    if trials == 0 or successes == 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - level, successes, trials - successes + 1))


@dataclass
class TrialReport:
    trials: int
    successes: int
    diagnostics: list[Any] = field(default_factory=list, repr=False)
    level: float = 0.99

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def binomial_ci_low(self) -> float:
        return binomial_ci_low(self.successes, self.trials, self.level)

    def merge(self, other: "TrialReport") -> "TrialReport":
        return TrialReport(self.trials + other.trials, self.successes + other.successes,
                           self.diagnostics + other.diagnostics, self.level)

    def text(self, name: str = "trials") -> str:
        return (f"{name}: trials={self.trials} successes={self.successes} "
                f"success_rate={self.success_rate:.4f} ci_low={self.binomial_ci_low:.4f}")


def trial_seed(harness_seed: int, trial: int) -> int:
    return hashing.derive_master(harness_seed, hashing.ROLE_TRIAL, trial)


def run_trials(experiment: Callable[[int], Any], trials: int,
               success: Callable[[Any], bool], harness_seed: int = 0,
               keep_diagnostics: bool = False) -> TrialReport:
    """Run ``experiment(seed)`` with an independent derived seed per trial."""
    wins = 0
    diag = []
    for t in range(trials):
        outcome = experiment(trial_seed(harness_seed, t))
        wins += bool(success(outcome))
        if keep_diagnostics:
            diag.append(outcome)
    return TrialReport(trials, wins, diag)


def psl_adversary(a, weights, mode: str = "greedy", params: PslParams | None = None,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Estimates ``a_hat_i = max(0, a_i + c_i / w_i)`` with ``c_i`` in {-1, 0, +1}.

    ``zero``/``plus``/``minus`` fix ``c``; ``honest`` draws ``c_i`` uniform in
    [-1, 1]; ``greedy`` starts from whichever constant sign moves the
    reconstruction further and then flips single coordinates while that
    increases ``|sigma_hat - sigma|``. The reconstruction is monotone in every
    ``a_hat_i``, so for ``greedy`` the result equals the best constant sign.
    Clamping at 0 keeps every output a valid ``(1/w_i, 1)``-approximator.
    """
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if mode not in ADVERSARY_MODES:
        raise ValueError(f"unknown adversary mode {mode!r}")
    if mode == "zero":
        return a.copy()
    if mode == "honest":
        rng = rng if rng is not None else np.random.default_rng(0)
        return np.maximum(0.0, a + rng.uniform(-1.0, 1.0, a.shape) / w)
    if mode in ("plus", "minus"):
        c = 1.0 if mode == "plus" else -1.0
        return np.maximum(0.0, a + c / w)
    if params is None:
        raise ValueError("greedy mode needs the reconstruction parameters")
    sigma = float(a.sum())

    def deviation(c):
        return abs(reconstruct(w, np.maximum(0.0, a + c / w), params) - sigma)

    c = max((np.ones_like(a), -np.ones_like(a)), key=deviation)
    best = deviation(c)
    if a.shape[0] <= 64:
        improved = True
        while improved:
            improved = False
            for i in range(a.shape[0]):
                c[i] = -c[i]
                d = deviation(c)
                if d > best:
                    best, improved = d, True
                else:
                    c[i] = -c[i]
    return np.maximum(0.0, a + c / w)
