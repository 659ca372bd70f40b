"""Cascaded norms ``||x||_{p,q}^p = sum_i ||x_i||_q^p`` of an ``n1 x n2`` matrix.

An outer weight-scaled CountSketch over rows whose cells are themselves
linear images ``L_X(x_i)`` of the rows. The inner map is either the identity
(exact rows, practical for small ``n2``), an l_q sketch (q in [1, 2]) or an
F_q sketch with AMS counters (q > 2).

All cells live in one sparse store keyed by the pair ``(outer_key, inner_key)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import hashing
from .estimators import EstimateReport, R_MIN, estimate_fk, halving_search, r_max
from .psl import PrecisionWeights, PslParams, reconstruct
from .sketch import (AmsSketch, CellStore, ConfigMismatchError, LinearSketch, SketchConfig,
                     SketchFormatError, _Reader, table_count)

NESTED_MAGIC = b"PSN1"
FORMAT_VERSION = 1
INNER_KINDS = ("exact", "sketch")

# rows of the space table, by (p, q) regime
REGIMES = {
    "a": "0 < p <= q <= 2",
    "b_low": "q >= 2, 0 < p < 2",
    "b_high": "p >= 2, q >= 2",
    "c_high": "p >= 1, 0 < q < p",
    "c_low": "0 < p < 1, 0 < q < p",
}


def corollary_regime(p: float, q: float) -> list[str]:
    """Every regime that covers ``(p, q)``."""
    if not (p > 0 and q > 0):
        raise ValueError(f"p and q must be positive, got p={p}, q={q}")
    out = []
    if p <= q <= 2:
        out.append("a")
    if q >= 2:
        out.append("b_high" if p >= 2 else "b_low")
    if q < p:
        out.append("c_high" if p >= 1 else "c_low")
    return out


def regime_bound(regime: str, p: float, q: float, n: int, omega: float,
                 q_exponent: float = 2.0) -> float:
    """Subsampling width that keeps the cross-talk of a cell at most 1 w.p. 2/3."""
    if regime == "a":
        return 81.0 * omega
    if regime == "b_high":
        return 81.0 * q ** q_exponent * omega ** (2.0 / p) * n ** (1.0 - 2.0 / p)
    if regime == "b_low":
        return 81.0 * q ** q_exponent * omega ** (2.0 / p)
    if regime == "c_high":
        return 9.0 * n ** (1.0 - 1.0 / p) * omega ** (1.0 / p)
    if regime == "c_low":
        return 9.0 * omega ** (1.0 / p)
    raise ValueError(f"unknown regime {regime!r}")


def select_regime(p: float, q: float, n: int, omega: float, q_exponent: float = 2.0) -> str:
    regimes = corollary_regime(p, q)
    if not regimes:
        raise ValueError(f"(p, q) = ({p}, {q}) is outside every supported regime")
    return min(regimes, key=lambda g: regime_bound(g, p, q, n, omega, q_exponent))


def p_type_bound(p: float, q: float, n: int, omega: float, q_exponent: float = 2.0) -> float:
    """Smallest width among the regimes that apply to ``(p, q)``."""
    regime = select_regime(p, q, n, omega, q_exponent)
    return regime_bound(regime, p, q, n, omega, q_exponent)


def regime_kappa(regime: str, q: float) -> int:
    return 2 * math.ceil(q) + 2 if regime.startswith("b") else 2


class PairCellStore:
    """Sparse cells keyed by ``(outer, inner)`` int64 pairs, kept in lexicographic order.

    Same folding rule as :class:`~precsample.sketch.CellStore`: pending
    additions are summed in arrival order and exact zeros are dropped.
    """

    def __init__(self, outer=None, inner=None, vals=None):
        empty_i, empty_f = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
        self._outer = empty_i if outer is None else np.asarray(outer, dtype=np.int64)
        self._inner = empty_i if inner is None else np.asarray(inner, dtype=np.int64)
        self._vals = empty_f if vals is None else np.asarray(vals, dtype=np.float64)
        self._pending: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def add(self, outer, inner, vals) -> None:
        self._pending.append((np.asarray(outer, dtype=np.int64).ravel(),
                              np.asarray(inner, dtype=np.int64).ravel(),
                              np.asarray(vals, dtype=np.float64).ravel()))

    def _flush(self) -> None:
        if not self._pending:
            return
        outer = np.concatenate([self._outer] + [o for o, _, _ in self._pending])
        inner = np.concatenate([self._inner] + [i for _, i, _ in self._pending])
        vals = np.concatenate([self._vals] + [v for _, _, v in self._pending])
        self._pending = []
        pairs = np.stack([outer, inner], axis=1)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        sums = np.bincount(inv.ravel(), weights=vals, minlength=uniq.shape[0])
        keep = sums != 0.0
        self._outer, self._inner, self._vals = uniq[keep, 0], uniq[keep, 1], sums[keep]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        self._flush()
        return self._outer, self._inner, self._vals

    def __len__(self) -> int:
        return self.arrays()[0].shape[0]

    def as_dict(self) -> dict:
        o, i, v = self.arrays()
        return {(int(a), int(b)): float(c) for a, b, c in zip(o, i, v)}

    def copy(self) -> "PairCellStore":
        o, i, v = self.arrays()
        return PairCellStore(o.copy(), i.copy(), v.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairCellStore):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True)
class CascadedConfig:
    n1: int
    n2: int
    p: float
    q: float
    epsilon: float
    zeta: float = 8.0
    master_seed: int = 0
    l_multiplier: int = 4
    max_entry: int = 1 << 31
    inner: str = "exact"
    q_exponent: float = 2.0
    m_override: int = 0

    rho: float = field(init=False)
    k: int = field(init=False)
    t: float = field(init=False)
    omega: float = field(init=False)
    omega_type: float = field(init=False)
    regime: str = field(init=False)
    m: int = field(init=False)
    l: int = field(init=False)
    kappa: int = field(init=False)

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 1:
            raise ValueError("need n1 >= 2 and n2 >= 1")
        if not 0.0 < self.epsilon < 1.0 / 3.0:
            raise ValueError(f"epsilon must lie in (0, 1/3), got {self.epsilon}")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")
        if self.inner not in INNER_KINDS:
            raise ValueError(f"inner must be one of {INNER_KINDS}")
        if self.inner == "sketch":
            if self.n2 < 8:
                raise ValueError("inner sketches need n2 >= 8")
            if self.q < 1:
                raise ValueError("inner sketches need q >= 1; use inner='exact'")
        if self.m_override < 0:
            raise ValueError("m_override must be non-negative")
        rho = self.epsilon / 8.0
        k = math.ceil(self.zeta / (rho * self.epsilon ** 2))
        omega = 10.0 * k * math.log(float(self.n1) ** 5)
        omega_type = 3.0 * self.p * omega / self.epsilon
        regime = select_regime(self.p, self.q, self.n1, omega_type, self.q_exponent)
        m = self.m_override or math.ceil(regime_bound(regime, self.p, self.q, self.n1,
                                                       omega_type, self.q_exponent))
        for name, value in (("rho", rho), ("k", k), ("t", 4.0 / self.epsilon), ("omega", omega),
                            ("omega_type", omega_type), ("regime", regime), ("m", m),
                            ("l", table_count(self.n1, self.l_multiplier)),
                            ("kappa", regime_kappa(regime, self.q))):
            object.__setattr__(self, name, value)

    def inner_config(self) -> SketchConfig | None:
        if self.inner == "exact":
            return None
        problem = "lp" if self.q <= 2 else "fk"
        return SketchConfig(problem, self.n2, float(self.q), self.epsilon / 2.0, self.zeta,
                            hashing.derive_master(self.master_seed, hashing.ROLE_INNER_SKETCH),
                            self.l_multiplier, self.max_entry)

    @property
    def inner_size(self) -> int:
        """Words per outer cell."""
        ic = self.inner_config()
        if ic is None:
            return self.n2
        rows = 0
        if ic.problem == "fk":
            rows = AmsSketch(ic.n, ic.p, 0).rows
        return ic.space + rows

    @property
    def space(self) -> int:
        return self.l * self.m * self.inner_size


class NestedSketch:
    def __init__(self, config: CascadedConfig, store: PairCellStore | None = None, update_count: int = 0):
        self.config = config
        self.store = store if store is not None else PairCellStore()
        self.update_count = update_count
        c = config
        if c.l * c.m >= 1 << 63:
            raise ValueError("outer cell ids would overflow 64 bits")
        self.weights = PrecisionWeights.from_master(c.master_seed, c.k, "inverse")
        self._poly = c.kappa > 2
        if self._poly:
            self._bucket_coeffs = hashing.derive_poly_arrays(c.master_seed, hashing.ROLE_POLY_BUCKET, c.l, c.kappa)
            self._sign_coeffs = hashing.derive_poly_arrays(c.master_seed, hashing.ROLE_POLY_SIGN, c.l, c.kappa)
        else:
            self._bucket_a, self._bucket_b = hashing.derive_seed_arrays(c.master_seed, hashing.ROLE_BUCKET, c.l)
            self._sign_a, self._sign_b = hashing.derive_seed_arrays(c.master_seed, hashing.ROLE_SIGN, c.l)
        ic = c.inner_config()
        self.inner = LinearSketch(ic) if ic is not None else None
        self._row_weights: np.ndarray | None = None

    def _raw(self, idx, which: str) -> np.ndarray:
        if self._poly:
            coeffs = self._bucket_coeffs if which == "bucket" else self._sign_coeffs
            return hashing.poly_raw_many(coeffs, idx)
        if which == "bucket":
            return hashing.affine_raw_many(self._bucket_a, self._bucket_b, idx)
        return hashing.affine_raw_many(self._sign_a, self._sign_b, idx)

    def outer_keys(self, rows) -> np.ndarray:
        """Flat outer cell ids ``j*m + h_j(i)``, shape ``(l, len(rows))``."""
        c = self.config
        b = (self._raw(rows, "bucket") % np.uint64(c.m)).astype(np.int64)
        return b + (np.arange(c.l, dtype=np.int64) * c.m)[:, None]

    def signs(self, rows) -> np.ndarray:
        return 1.0 - 2.0 * (self._raw(rows, "sign") & np.uint64(1)).astype(np.float64)

    def row_weights(self) -> np.ndarray:
        if self._row_weights is None:
            self._row_weights = self.weights.weights(np.arange(self.config.n1))
        return self._row_weights

    def _inner_unit(self, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Keys and values of ``L_X e_j`` per record, each of shape ``(N, c)``."""
        if self.inner is None:
            return cols[:, None], np.ones((cols.shape[0], 1))
        ones = np.ones(cols.shape[0])
        keys, vals = self.inner.contributions(cols, ones)
        keys = keys.reshape(cols.shape[0], -1)
        vals = vals.reshape(cols.shape[0], -1)
        if self.inner.config.problem == "fk":
            ams = AmsSketch(self.inner.config.n, self.inner.config.p,
                            hashing.derive_master(self.inner.config.master_seed, hashing.ROLE_AMS_SIGN))
            rows, avals = ams.contributions(cols, ones)
            keys = np.concatenate([keys, rows.reshape(cols.shape[0], -1) + self.inner.config.space], axis=1)
            vals = np.concatenate([vals, avals.reshape(cols.shape[0], -1)], axis=1)
        return keys, vals

    def update_batch(self, rows, cols, deltas, chunk: int = 1 << 14) -> None:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        deltas = np.atleast_1d(np.asarray(deltas, dtype=np.float64))
        c = self.config
        if not rows.shape == cols.shape == deltas.shape:
            raise ValueError("rows, cols and deltas must have the same length")
        if rows.size and (rows.min() < 0 or rows.max() >= c.n1):
            raise IndexError(f"row index outside [0, {c.n1})")
        if cols.size and (cols.min() < 0 or cols.max() >= c.n2):
            raise IndexError(f"column index outside [0, {c.n2})")
        w = self.row_weights()
        for lo in range(0, rows.shape[0], chunk):
            r, cl, d = rows[lo:lo + chunk], cols[lo:lo + chunk], deltas[lo:lo + chunk]
            outer = self.outer_keys(r).T                                  # (N, l)
            scale = (self.signs(r) * (np.power(w[r], 1.0 / c.p) * d)[None, :]).T
            ikeys, ivals = self._inner_unit(cl)                           # (N, c)
            shape = (outer.shape[0], outer.shape[1], ikeys.shape[1])
            okeys = np.broadcast_to(outer[:, :, None], shape)
            ikeys = np.broadcast_to(ikeys[:, None, :], shape)
            vals = scale[:, :, None] * ivals[:, None, :]
            self.store.add(okeys.ravel(), ikeys.ravel(), vals.ravel())
        self.update_count += rows.shape[0]

    def update(self, i: int, j: int, delta: float) -> None:
        self.update_batch([i], [j], [delta])

    def ingest(self, x) -> "NestedSketch":
        x = np.asarray(x, dtype=np.float64)
        r, cl = np.nonzero(x)
        self.update_batch(r, cl, x[r, cl])
        return self

    # -- reads -------------------------------------------------------------------

    def cell_vector(self, outer_key: int) -> tuple[np.ndarray, np.ndarray]:
        """Inner keys and values stored in one outer cell."""
        outer, inner, vals = self.store.arrays()
        lo, hi = np.searchsorted(outer, [outer_key, outer_key + 1])
        return inner[lo:hi], vals[lo:hi]

    def _inner_norms_pow(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted outer keys present in the store and ``||H||_q^q`` of each."""
        outer, inner, vals = self.store.arrays()
        uniq, starts = np.unique(outer, return_index=True)
        if self.inner is None:
            counts = np.diff(np.append(starts, outer.shape[0]))
            group = np.repeat(np.arange(uniq.shape[0]), counts)
            return uniq, np.bincount(group, weights=np.abs(vals) ** self.config.q,
                                     minlength=uniq.shape[0])
        bounds = np.append(starts, outer.shape[0])
        out = np.empty(uniq.shape[0])
        for g in range(uniq.shape[0]):
            sl = slice(bounds[g], bounds[g + 1])
            out[g] = self._inner_estimate(inner[sl], vals[sl])
        return uniq, out

    def _inner_estimate(self, sub_keys: np.ndarray, sub_vals: np.ndarray) -> float:
        ic = self.inner.config
        cells = sub_keys < ic.space
        sk = LinearSketch(ic, CellStore(sub_keys[cells], sub_vals[cells]))
        if ic.problem == "fk":
            counters = np.zeros(sk.ams.rows)
            counters[sub_keys[~cells] - ic.space] = sub_vals[~cells]
            sk.ams.counters = counters
            return estimate_fk(sk).value
        return halving_search(sk).value

    def row_norm_medians(self) -> np.ndarray:
        """``median_j ||H_j(h_j(i))||_q`` for every row."""
        present, pow_q = self._inner_norms_pow()
        keys = self.outer_keys(np.arange(self.config.n1))
        if present.shape[0] == 0:
            return np.zeros(self.config.n1)
        pos = np.minimum(np.searchsorted(present, keys), present.shape[0] - 1)
        norms_q = np.where(present[pos] == keys, pow_q[pos], 0.0)
        return np.median(np.maximum(norms_q, 0.0) ** (1.0 / self.config.q), axis=0)

    def copy(self) -> "NestedSketch":
        return NestedSketch(self.config, self.store.copy(), self.update_count)


def create(n1: int, n2: int, p: float, q: float, epsilon: float, zeta: float = 8.0,
           master_seed: int = 0, **options) -> NestedSketch:
    return NestedSketch(CascadedConfig(n1, n2, float(p), float(q), epsilon, zeta, master_seed, **options))


def estimate(nested: NestedSketch, r_min: float = R_MIN) -> EstimateReport:
    """Halving search on ``median_j ||H_j(h_j(i))||_q^p / (r^p w_i)``; value ``~ ||x||_{p,q}^p``."""
    c = nested.config
    med = nested.row_norm_medians()
    w = nested.row_weights()
    params = PslParams(epsilon=c.epsilon, zeta=c.zeta, k=c.k, t=c.t)
    threshold = (1.0 + 2.0 * c.epsilon) / 4.0
    if not np.any(med):
        return EstimateReport(0.0, r_min, [], False)
    trace = []
    r = r_max(c.n1 * c.n2, c.max_entry)
    while r >= r_min:
        sigma = reconstruct(w, (med / r) ** c.p / w, params)
        trace.append((r, sigma))
        if sigma > threshold:
            return EstimateReport(r ** c.p * sigma, r, trace, True)
        r /= 2.0
    return EstimateReport(0.0, trace[-1][0], trace, False)


def merge(a: NestedSketch, b: NestedSketch) -> NestedSketch:
    if a.config != b.config:
        raise ConfigMismatchError("cascaded sketch configurations differ")
    store = a.store.copy()
    store.add(*b.store.arrays())
    return NestedSketch(a.config, store, a.update_count + b.update_count)


# "PSN1" u16 version
# u64 n1 u64 n2 f64 p f64 q f64 epsilon f64 zeta u64 master_seed u32 l_multiplier
# u64 max_entry u8 inner f64 q_exponent u64 m_override u64 update_count
# u64 k u64 m u32 l u32 kappa   (derived, checked)
# u64 nnz, nnz i64 outer keys, nnz i64 inner keys, nnz f64 values
_HEAD = struct.Struct("<4sHQQddddQIQBdQQQQII")


def serialize(nested: NestedSketch) -> bytes:
    c = nested.config
    outer, inner, vals = nested.store.arrays()
    return b"".join([
        _HEAD.pack(NESTED_MAGIC, FORMAT_VERSION, c.n1, c.n2, c.p, c.q, c.epsilon, c.zeta,
                   c.master_seed, c.l_multiplier, c.max_entry, INNER_KINDS.index(c.inner),
                   c.q_exponent, c.m_override, nested.update_count, c.k, c.m, c.l, c.kappa),
        struct.pack("<Q", outer.shape[0]), outer.astype("<i8").tobytes(),
        inner.astype("<i8").tobytes(), vals.astype("<f8").tobytes()])


def deserialize(data: bytes) -> NestedSketch:
    reader = _Reader(data)
    (magic, version, n1, n2, p, q, eps, zeta, seed, lmul, max_entry, inner, q_exp, m_over, count,
     k, m, l, kappa) = reader.unpack(_HEAD.format)
    if magic != NESTED_MAGIC:
        raise SketchFormatError(f"bad magic {bytes(magic)!r}; not a cascaded sketch file")
    if version != FORMAT_VERSION:
        raise SketchFormatError(f"unsupported format version {version}")
    if inner >= len(INNER_KINDS):
        raise SketchFormatError("unknown inner kind")
    try:
        config = CascadedConfig(n1, n2, p, q, eps, zeta, seed, lmul, max_entry, INNER_KINDS[inner], q_exp, m_over)
    except ValueError as exc:
        raise SketchFormatError(f"invalid configuration: {exc}") from exc
    if (config.k, config.m, config.l, config.kappa) != (k, m, l, kappa):
        raise SketchFormatError("derived parameters do not match the recomputed configuration")
    (nnz,) = reader.unpack("<Q")
    outer = reader.array("<i8", nnz)
    inner = reader.array("<i8", nnz)
    vals = reader.array("<f8", nnz)
    if reader.pos != len(reader.data):
        raise SketchFormatError("trailing bytes after cascaded sketch")
    if nnz > 1:
        step_o, step_i = np.diff(outer), np.diff(inner)
        if np.any((step_o < 0) | ((step_o == 0) & (step_i <= 0))):
            raise SketchFormatError("cell keys must be strictly increasing")
    return NestedSketch(config, PairCellStore(outer, inner, vals), count)
