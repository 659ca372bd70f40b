"""Seeded end-to-end experiments behind the acceptance checks and scripts/.

Each ``run_*`` function returns a plain dict of measurements plus a boolean
``passed``; thresholds are fixed here so tests and scripts agree.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import cascaded, hashing
from .estimators import estimate_fk, estimate_l1, estimate_lp
from .oracle import (TrialReport, exact_cascaded, exact_norm, exact_sampling_target, psl_adversary,
                     run_trials)
from .psl import PrecisionWeights, PslParams, expected_weight_power, reconstruct
from .sampler import sample_auto
from .sketch import create, merge, serialize


def _within(value: float, truth: float, factor: float) -> bool:
    return truth / factor <= value <= truth * factor


# -- precision sampling -------------------------------------------------------

def psl_regime(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if name == "equal":
        return np.full(n, 0.5)
    if name == "sparse":
        a = np.zeros(n)
        a[rng.choice(n, n // 100, replace=False)] = 1.0
        return a
    if name == "heavy":
        # Pareto(1.2) scaled so most mass sits in a few large entries, clipped to [0, 1]
        return np.minimum(1.0, 0.002 * (rng.pareto(1.2, n) + 1.0))
    raise ValueError(name)


def run_psl_accuracy(n=10_000, eps=0.2, rho=0.1, trials=500, seed=1) -> dict:
    params = PslParams(epsilon=eps, rho=rho)
    f = math.exp(eps)
    rows = {}
    start = time.perf_counter()
    for regime in ("equal", "sparse", "heavy"):
        for mode in ("plus", "minus", "greedy"):
            def trial(s, regime=regime, mode=mode):
                rng = np.random.default_rng(s % (1 << 63))
                a = psl_regime(regime, n, rng)
                w = PrecisionWeights.from_master(s, params.k).weights(np.arange(n))
                est = psl_adversary(a, w, mode, params)
                sigma = math.fsum(a)
                return sigma / f - rho <= reconstruct(w, est, params) <= f * sigma + rho

            rep = run_trials(trial, trials, bool, harness_seed=hashing.derive_master(seed, 1, len(rows)))
            rows[(regime, mode)] = rep
    elapsed = time.perf_counter() - start
    worst = min(r.binomial_ci_low for r in rows.values())
    return dict(rows=rows, worst_ci_low=worst, seconds=elapsed, k=params.k, t=params.t,
                passed=worst >= 0.60 and elapsed < 60)


def run_weight_cost(k=20, n=10_000, draws=1_000_000, seed=2) -> dict:
    start = time.perf_counter()
    w = PrecisionWeights.from_master(seed, k, "columns").weights(np.arange(draws))
    cond = w[w <= float(n) ** 5]
    cond_mean = float(cond.mean())
    bound = 6 * k * math.log(n)
    mc_half = float(np.mean(np.sqrt(w)))
    quad = expected_weight_power(k, 0.5)
    elapsed = time.perf_counter() - start
    rel = abs(mc_half / quad - 1)
    return dict(cond_mean=cond_mean, bound=bound, mc_half=mc_half, quad_half=quad, rel_err=rel,
                seconds=elapsed, passed=cond_mean <= bound and rel <= 0.02 and elapsed < 30)


# -- norm estimators ----------------------------------------------------------

def l1_family(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if name == "dense":
        return rng.integers(-10, 11, n).astype(float)
    if name == "spike":
        x = np.zeros(n)
        x[rng.integers(n)] = 1000.0
        return x
    if name == "two_scale":
        x = rng.choice([-1.0, 1.0], n)
        x[rng.choice(n, 8, replace=False)] = 400.0
        return x
    raise ValueError(name)


def _norm_trials(make, estimate_fn, problem, n, p, eps, factor, trials, harness_seed) -> TrialReport:
    def trial(s):
        x = make(np.random.default_rng(s % (1 << 63)))
        sk = create(problem, n, p, eps, master_seed=s).ingest(x)
        return estimate_fn(sk).value, exact_norm(x, p)

    return run_trials(trial, trials, lambda o: _within(o[0], o[1], factor), harness_seed)


def run_l1(n=4096, eps=0.2, trials=300, seed=3) -> dict:
    start = time.perf_counter()
    rows = {}
    for j, fam in enumerate(("dense", "spike", "two_scale")):
        rows[fam] = _norm_trials(lambda rng, fam=fam: l1_family(fam, n, rng), estimate_l1, "l1", n, 1.0,
                                 eps, 1 + 2 * eps, trials, hashing.derive_master(seed, 1, j))
    elapsed = time.perf_counter() - start
    worst = min(r.binomial_ci_low for r in rows.values())
    return dict(rows=rows, worst_ci_low=worst, seconds=elapsed, passed=worst >= 0.45 and elapsed < 300)


def run_fk(n=512, p=3.0, eps=0.3, trials=200, seed=4) -> dict:
    spike = np.zeros(n)
    spike[0] = 10.0
    vectors = {"spike": spike, "ones": np.ones(n)}
    start = time.perf_counter()
    rows = {}
    for j, (name, x) in enumerate(vectors.items()):
        rows[name] = _norm_trials(lambda rng, x=x: x, estimate_fk, "fk", n, p, eps, 1 + eps, trials,
                                  hashing.derive_master(seed, 1, j))
    elapsed = time.perf_counter() - start
    worst = min(r.binomial_ci_low for r in rows.values())
    return dict(rows=rows, worst_ci_low=worst, seconds=elapsed, passed=worst >= 0.45 and elapsed < 300)


def lp_family(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if name == "signs":
        return rng.choice([-1.0, 1.0], n)
    if name == "skewed":
        x = rng.integers(-3, 4, n).astype(float)
        x[rng.choice(n, 4, replace=False)] = 60.0
        return x
    raise ValueError(name)


def run_lp(n=1024, eps=0.25, trials=200, seed=5) -> dict:
    start = time.perf_counter()
    rows = {}
    j = 0
    for p in (1.5, 2.0):
        for fam in ("signs", "skewed"):
            rows[(p, fam)] = _norm_trials(lambda rng, fam=fam: lp_family(fam, n, rng), estimate_lp, "lp", n, p,
                                          eps, 1 + eps, trials, hashing.derive_master(seed, 1, j))
            j += 1
    elapsed = time.perf_counter() - start
    worst = min(r.binomial_ci_low for r in rows.values())
    return dict(rows=rows, worst_ci_low=worst, seconds=elapsed, passed=worst >= 0.45 and elapsed < 300)


# -- sampling -----------------------------------------------------------------

def sampler_vector(n: int = 256) -> np.ndarray:
    x = np.ones(n)
    x[: n // 8] = 8.0
    return x


def run_sampler(n=256, p=1.0, eps=0.25, samples=20_000, seed=6) -> dict:
    x = sampler_vector(n)
    target = exact_sampling_target(x, p)
    counts = np.zeros(n)
    fails = value_ok = attempts = 0
    start = time.perf_counter()
    while counts.sum() < samples:
        s = hashing.derive_master(seed, hashing.ROLE_TRIAL, attempts)
        attempts += 1
        sk = create("sampler", n, p, eps, master_seed=s).ingest(x)
        out, _ = sample_auto(sk)
        if out.failed:
            fails += 1
            continue
        counts[out.index] += 1
        value_ok += _within(out.value, abs(x[out.index]) ** p, 1 + 3 * eps)
    elapsed = time.perf_counter() - start
    freq = counts / counts.sum()
    slack = 3 * eps * target + 3.0 / n ** 2
    worst_excess = float(np.max(np.abs(freq - target) - slack))
    tv = 0.5 * float(np.abs(freq - target).sum())
    fail_rate = fails / attempts
    value_rate = value_ok / samples
    passed = (worst_excess <= 0 and tv <= 3 * eps + 0.02 and fail_rate <= 0.05
              and value_rate >= 0.95 and elapsed < 600)
    return dict(worst_excess=worst_excess, tv=tv, fail_rate=fail_rate, value_rate=value_rate,
                attempts=attempts, seconds=elapsed, freq=freq, target=target, passed=passed)


# -- cascaded -----------------------------------------------------------------

def expected_cascaded_width(p: float, q: float, n1: int, eps: float, zeta: float = 8.0) -> int:
    """Outer width written out per regime, independent of :mod:`cascaded`'s selection logic."""
    k = math.ceil(zeta / (eps / 8 * eps ** 2))
    w = 3 * p * (10 * k * math.log(float(n1) ** 5)) / eps
    candidates = []
    if p <= q <= 2:
        candidates.append(81 * w)
    if q >= 2 and p >= 2:
        candidates.append(81 * q ** 2 * w ** (2 / p) * n1 ** (1 - 2 / p))
    if q >= 2 and p < 2:
        candidates.append(81 * q ** 2 * w ** (2 / p))
    if q < p and p >= 1:
        candidates.append(9 * n1 ** (1 - 1 / p) * w ** (1 / p))
    if q < p and p < 1:
        candidates.append(9 * w ** (1 / p))
    return math.ceil(min(candidates))


def run_cascaded(n1=64, n2=64, eps=0.3, trials=100, seed=7) -> dict:
    start = time.perf_counter()
    rows, space_ok = {}, True
    for j, (p, q) in enumerate(((1.0, 2.0), (3.0, 3.0))):
        cfg = cascaded.CascadedConfig(n1, n2, p, q, eps)
        width = expected_cascaded_width(p, q, n1, eps)
        l = cfg.l
        space_ok &= cfg.m == width and cfg.space == l * width * n2

        def trial(s, p=p, q=q):
            x = np.random.default_rng(s % (1 << 63)).integers(-5, 6, (n1, n2)).astype(float)
            est = cascaded.estimate(cascaded.create(n1, n2, p, q, eps, master_seed=s).ingest(x)).value
            return est, exact_cascaded(x, p, q) ** p

        rows[(p, q)] = run_trials(trial, trials, lambda o: _within(o[0], o[1], 1 + eps),
                                  hashing.derive_master(seed, 1, j))
    elapsed = time.perf_counter() - start
    worst = min(r.binomial_ci_low for r in rows.values())
    return dict(rows=rows, worst_ci_low=worst, space_ok=space_ok, seconds=elapsed,
                passed=worst >= 0.45 and space_ok and elapsed < 600)


# -- linearity ----------------------------------------------------------------

def run_linearity(pairs=100, n=256, seed=8) -> dict:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    problems = [("l1", 1.0), ("lp", 1.5), ("fk", 3.0), ("sampler", 2.0)]
    for j in range(pairs):
        problem, p = problems[j % len(problems)]
        x = rng.integers(-1000, 1001, n).astype(float)
        y = rng.integers(-1000, 1001, n).astype(float)
        s = int(rng.integers(0, 2 ** 63))
        sx = create(problem, n, p, 0.3, master_seed=s).ingest(x)
        sy = create(problem, n, p, 0.3, master_seed=s).ingest(y)
        sxy = create(problem, n, p, 0.3, master_seed=s).ingest(x + y)
        m = merge(sx, sy)
        keys = np.union1d(m.store.keys, sxy.store.keys)
        got, ref = m.store.lookup(keys), sxy.store.lookup(keys)
        scale = np.maximum(np.abs(sx.store.lookup(keys)) + np.abs(sy.store.lookup(keys)), 1e-300)
        worst = max(worst, float(np.max(np.abs(got - ref) / scale, initial=0.0)))
        if m.ams is not None:
            scale = np.abs(sx.ams.counters) + np.abs(sy.ams.counters) + 1e-300
            worst = max(worst, float(np.max(np.abs(m.ams.counters - sxy.ams.counters) / scale)))
    elapsed = time.perf_counter() - start
    return dict(worst_rel_err=worst, seconds=elapsed, passed=worst <= 1e-9)


def determinism_digest(seed: int = 99) -> str:
    """Digest of sketches of a fixed stream; compared across separate processes."""
    import hashlib

    rng = np.random.default_rng(seed)
    h = hashlib.sha256()
    for problem, n, p in (("l1", 512, 1.0), ("lp", 512, 2.0), ("fk", 128, 3.0), ("sampler", 128, 1.0)):
        idx = rng.integers(0, n, 5000)
        d = rng.integers(-50, 51, 5000).astype(float)
        sk = create(problem, n, p, 0.3, master_seed=seed)
        sk.update_batch(idx, d)
        h.update(serialize(sk))
    nested = cascaded.create(32, 16, 3.0, 3.0, 0.3, master_seed=seed)
    nested.update_batch(rng.integers(0, 32, 2000), rng.integers(0, 16, 2000), rng.integers(-9, 10, 2000))
    h.update(cascaded.serialize(nested))
    return h.hexdigest()


# -- Khintchine-type bound ----------------------------------------------------

def khintchine_vectors(n: int, rng: np.random.Generator) -> dict:
    return {"gaussian": rng.standard_normal(n), "signs": rng.choice([-1.0, 1.0], n),
            "decay": 1.0 / np.arange(1, n + 1) ** 0.75}


def run_khintchine(n=128, alpha=0.125, draws=200_000, trials=500, seed=9) -> dict:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    vectors = khintchine_vectors(n, rng)
    mean_rows, pair_rows = {}, {}
    m = round(1 / alpha)
    for p in (1.0, 1.5, 2.0):
        for name, x in vectors.items():
            norm = exact_norm(x, p)
            total, done = 0.0, 0
            while done < draws:
                b = min(20_000, draws - done)
                g = rng.choice([-1.0, 1.0], (b, n))
                chi = rng.random((b, n)) < alpha
                total += float(np.sum(np.abs((g * chi) @ x) ** p))
                done += b
            mean_rows[(p, name)] = (total / draws) / (alpha * norm)
            bound = 3 ** (2 + p) * alpha * norm

            def trial(s, x=x, p=p, bound=bound):
                bs = hashing.derive_seed(s, hashing.ROLE_BUCKET, 0)
                ss = hashing.derive_seed(s, hashing.ROLE_SIGN, 0)
                idx = np.arange(n)
                chi = hashing.bucket(bs, idx, m) == 0
                g = hashing.sign(ss, idx)
                return abs(float(np.sum(g * chi * x))) ** p <= bound

            pair_rows[(p, name)] = run_trials(trial, trials, bool, hashing.derive_master(seed, 2, len(pair_rows)))
    elapsed = time.perf_counter() - start
    worst_ratio = max(mean_rows.values())
    worst_ci = min(r.binomial_ci_low for r in pair_rows.values())
    return dict(mean_ratios=mean_rows, pair_rows=pair_rows, worst_mean_ratio=worst_ratio,
                worst_ci_low=worst_ci, seconds=elapsed,
                passed=worst_ratio <= 1.02 and worst_ci >= 7 / 9 - 0.05 and elapsed < 60)
