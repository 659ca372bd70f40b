"""The weight-scaled CountSketch: ``l`` hash tables of ``m`` cells where cell
``H_j(z)`` holds ``sum_{i: h_j(i)=z} g_j(i) * w_i^(1/p) * x_i``.

Also holds the AMS sign sketch used to normalise moment estimates, the
per-problem dimensioning arithmetic, merging and the binary file format.

Table widths prescribed by the dimensioning formulas are far larger than the
number of distinct indices at desk scale, so cells are kept sparsely: only
non-zero cells are stored, as sorted flat keys ``j*m + z``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import hashing
from .psl import PrecisionWeights, expected_weight_power

PROBLEMS = ("fk", "l1", "lp", "sampler")
PROBLEM_TAGS = {"fk": 1, "l1": 2, "lp": 3, "sampler": 4}
MODE_TAGS = {"inverse": 0, "columns": 1}

MAGIC = b"PSK1"
BUNDLE_MAGIC = b"PSKB"
FORMAT_VERSION = 1

# the sampler's companion norm sketch; must stay inside (0, 1/3)
AUX_EPSILON = 0.3
AMS_GROUP = 6
# domains up to this size get all weights computed once and kept
WEIGHT_CACHE_LIMIT = 1 << 20


class SketchFormatError(ValueError):
    """Raised on a malformed, truncated or inconsistent sketch file."""


class ConfigMismatchError(ValueError):
    """Raised when combining sketches built with different configurations."""


def table_count(n: int, multiplier: int = 4) -> int:
    """Smallest odd integer at least ``multiplier * ceil(log2 n)``, and at least 3."""
    l = max(3, multiplier * math.ceil(math.log2(n)))
    return l if l % 2 else l + 1


@dataclass(frozen=True)
class SketchConfig:
    """Every dimensioning parameter of one sketch, derived from a few inputs."""

    problem: str
    n: int
    p: float
    epsilon: float
    zeta: float = 8.0
    master_seed: int = 0
    l_multiplier: int = 4
    max_entry: int = 1 << 31
    weight_mode: str = ""

    rho: float = field(init=False)
    k: int = field(init=False)
    t: float = field(init=False)
    omega: float = field(init=False)
    alpha_blowup: float = field(init=False)
    m: int = field(init=False)
    l: int = field(init=False)

    def __post_init__(self):
        problem, n, p, eps = self.problem, self.n, self.p, self.epsilon
        if problem not in PROBLEMS:
            raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
        if n < 8:
            raise ValueError(f"n must be at least 8, got {n}")
        if not 0.0 < eps < 1.0 / 3.0:
            raise ValueError(f"epsilon must lie in (0, 1/3), got {eps}")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if not 0 <= self.master_seed < 1 << 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.l_multiplier < 1:
            raise ValueError("l_multiplier must be positive")
        if problem == "fk" and not p > 2:
            raise ValueError(f"fk needs p > 2, got {p}")
        if problem == "l1" and p != 1:
            raise ValueError(f"l1 needs p = 1, got {p}")
        if problem in ("lp", "sampler") and not 1.0 <= p <= 2.0:
            raise ValueError(f"{problem} needs p in [1, 2], got {p}")
        mode = self.weight_mode or ("columns" if problem == "sampler" else "inverse")
        if mode not in MODE_TAGS:
            raise ValueError(f"unknown weight mode {mode!r}")
        if problem == "sampler" and mode != "columns":
            raise ValueError("the sampler needs per-column weights (weight_mode='columns')")

        t = 4.0 / eps
        if problem == "fk":
            rho = (eps / 4.0) / n ** (p / 2.0 - 1.0)
            k = math.ceil(self.zeta / (rho * eps ** 2))
            omega = 9.0 * expected_weight_power(k, 2.0 / p)
            alpha = (6.0 * p) ** 2 / eps ** (2.0 - 2.0 / p)
        elif problem == "sampler":
            rho = math.nan
            k = math.ceil(self.zeta * t * math.log2(n))
            omega = 10.0 * k * math.log(float(n) ** 5)
            alpha = 3.0 ** (2.0 + p) * eps ** (1.0 - p)
        else:
            rho = eps / 8.0
            k = math.ceil(self.zeta / (rho * eps ** 2))
            omega = 10.0 * k * math.log(float(n) ** 5)
            alpha = 3.0 if problem == "l1" else 3.0 ** (2.0 + p) * eps ** (1.0 - p)
        m = math.ceil(alpha * omega)

        for name, value in (("weight_mode", mode), ("rho", rho), ("k", k), ("t", t),
                            ("omega", omega), ("alpha_blowup", alpha), ("m", m),
                            ("l", table_count(n, self.l_multiplier))):
            object.__setattr__(self, name, value)

    @property
    def space(self) -> int:
        """Number of table cells, ``l * m``."""
        return self.l * self.m

    def derived(self) -> dict:
        return dict(k=self.k, t=self.t, m=self.m, l=self.l, omega=self.omega,
                    alpha=self.alpha_blowup, rho=self.rho)


class CellStore:
    """Sparse real vector keyed by non-negative int64 cell ids.

    Additions are buffered and folded in arrival order, so any split of a
    sequence of additions into batches yields bit-identical cells. Cells
    that cancel to exactly zero are dropped.
    """

    def __init__(self, keys=None, vals=None):
        self._keys = np.zeros(0, dtype=np.int64) if keys is None else np.asarray(keys, dtype=np.int64)
        self._vals = np.zeros(0, dtype=np.float64) if vals is None else np.asarray(vals, dtype=np.float64)
        self._pending: list[tuple[np.ndarray, np.ndarray]] = []

    def add(self, keys: np.ndarray, vals: np.ndarray) -> None:
        self._pending.append((np.asarray(keys, dtype=np.int64).ravel(),
                              np.asarray(vals, dtype=np.float64).ravel()))

    def _flush(self) -> None:
        if not self._pending:
            return
        keys = np.concatenate([self._keys] + [k for k, _ in self._pending])
        vals = np.concatenate([self._vals] + [v for _, v in self._pending])
        self._pending = []
        uniq, inv = np.unique(keys, return_inverse=True)
        # bincount accumulates sequentially, i.e. a left fold in arrival order
        sums = np.bincount(inv.ravel(), weights=vals, minlength=uniq.shape[0])
        keep = sums != 0.0
        self._keys, self._vals = uniq[keep], sums[keep]

    @property
    def keys(self) -> np.ndarray:
        self._flush()
        return self._keys

    @property
    def vals(self) -> np.ndarray:
        self._flush()
        return self._vals

    def __len__(self) -> int:
        return self.keys.shape[0]

    def lookup(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        have_k, have_v = self.keys, self.vals
        if have_k.shape[0] == 0:
            return np.zeros(keys.shape, dtype=np.float64)
        pos = np.searchsorted(have_k, keys)
        pos_c = np.minimum(pos, have_k.shape[0] - 1)
        found = have_k[pos_c] == keys
        return np.where(found, have_v[pos_c], 0.0)

    def copy(self) -> "CellStore":
        return CellStore(self.keys.copy(), self.vals.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CellStore):
            return NotImplemented
        return np.array_equal(self.keys, other.keys) and np.array_equal(self.vals, other.vals)


class AmsSketch:
    """Random-sign projections ``Z_r = sum_i s_r(i) x_i`` with 4-wise independent signs.

    ``rows = 6 * ceil(p^2 ln n)`` counters, estimated by median of means over
    groups of six.
    """

    def __init__(self, n: int, p: float, master_seed: int, counters: np.ndarray | None = None):
        self.n = n
        self.p = p
        self.master_seed = master_seed
        self.rows = AMS_GROUP * math.ceil(p * p * math.log(n))
        self._coeffs = hashing.derive_poly_arrays(master_seed, hashing.ROLE_AMS_SIGN, self.rows, 4)
        if counters is None:
            counters = np.zeros(self.rows, dtype=np.float64)
        elif counters.shape != (self.rows,):
            raise SketchFormatError("AMS counter count does not match configuration")
        self.counters = counters

    def signs(self, idx) -> np.ndarray:
        raw = hashing.poly_raw_many(self._coeffs, idx)
        return 1.0 - 2.0 * (raw & np.uint64(1)).astype(np.float64)

    def contributions(self, idx, deltas) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(row, value)`` pairs in record-major order."""
        deltas = np.asarray(deltas, dtype=np.float64)
        vals = (self.signs(idx) * deltas[None, :]).T
        rows = np.broadcast_to(np.arange(self.rows), vals.shape)
        return rows.ravel(), vals.ravel()

    def update_batch(self, idx, deltas) -> None:
        rows, vals = self.contributions(idx, deltas)
        np.add.at(self.counters, rows, vals)

    def l2_squared(self) -> float:
        groups = (self.counters ** 2).reshape(-1, AMS_GROUP).mean(axis=1)
        return float(np.median(groups))

    def copy(self) -> "AmsSketch":
        return AmsSketch(self.n, self.p, self.master_seed, self.counters.copy())


def ams_estimate(ams: AmsSketch) -> float:
    """``r`` aimed at ``(1 - 1/p) ||x||_2 <= r <= ||x||_2``.

    The median-of-means value of ``||x||_2`` is shrunk by ``sqrt(1 - 1/p)``,
    the geometric centre of the admissible window.
    """
    return math.sqrt(1.0 - 1.0 / ams.p) * math.sqrt(ams.l2_squared())


class LinearSketch:
    """Alg.-1 style sketch of a vector ``x`` in ``R^n`` under turnstile updates."""

    def __init__(self, config: SketchConfig, store: CellStore | None = None,
                 update_count: int = 0, ams: AmsSketch | None = None,
                 aux: "LinearSketch | None" = None):
        self.config = config
        self.store = store if store is not None else CellStore()
        self.update_count = update_count
        c = config
        self._bucket_a, self._bucket_b = hashing.derive_seed_arrays(c.master_seed, hashing.ROLE_BUCKET, c.l)
        self._sign_a, self._sign_b = hashing.derive_seed_arrays(c.master_seed, hashing.ROLE_SIGN, c.l)
        self.weights = PrecisionWeights.from_master(c.master_seed, c.k, c.weight_mode)
        if c.problem == "fk" and ams is None:
            ams = AmsSketch(c.n, c.p, hashing.derive_master(c.master_seed, hashing.ROLE_AMS_SIGN))
        if c.problem == "sampler" and aux is None:
            aux = LinearSketch(aux_config(c))
        self.ams = ams
        self.aux = aux
        self._weight_cache: np.ndarray | None = None

    # -- hashing ---------------------------------------------------------------

    def bucket_seed(self, j: int) -> hashing.AffineSeed:
        return hashing.AffineSeed(int(self._bucket_a[j]), int(self._bucket_b[j]))

    def sign_seed(self, j: int) -> hashing.AffineSeed:
        return hashing.AffineSeed(int(self._sign_a[j]), int(self._sign_b[j]))

    def buckets(self, idx) -> np.ndarray:
        """``h_j(i)`` for every table, shape ``(l, len(idx))``."""
        raw = hashing.affine_raw_many(self._bucket_a, self._bucket_b, idx)
        return (raw % np.uint64(self.config.m)).astype(np.int64)

    def signs(self, idx) -> np.ndarray:
        raw = hashing.affine_raw_many(self._sign_a, self._sign_b, idx)
        return 1.0 - 2.0 * (raw & np.uint64(1)).astype(np.float64)

    def cell_keys(self, idx) -> np.ndarray:
        l, m = self.config.l, self.config.m
        return self.buckets(idx) + (np.arange(l, dtype=np.int64) * m)[:, None]

    def all_weights(self) -> np.ndarray:
        """``w_i`` for the whole domain, computed once per sketch."""
        if self._weight_cache is None:
            self._weight_cache = self.weights.weights(np.arange(self.config.n))
        return self._weight_cache

    def _weights_for(self, idx: np.ndarray) -> np.ndarray:
        if self._weight_cache is not None or self.config.n <= WEIGHT_CACHE_LIMIT:
            return self.all_weights()[idx]
        return self.weights.weights(idx)

    # -- updates ---------------------------------------------------------------

    def contributions(self, idx, deltas) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(cell key, value)`` pairs of ``L(sum_r deltas[r] e_{idx[r]})``, record-major."""
        idx = np.asarray(idx, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.float64)
        scale = np.power(self._weights_for(idx), 1.0 / self.config.p)
        vals = self.signs(idx) * (scale * deltas)[None, :]
        return self.cell_keys(idx).T.ravel(), vals.T.ravel()

    def _check_indices(self, idx: np.ndarray) -> None:
        if idx.size and (idx.min() < 0 or idx.max() >= self.config.n):
            bad = idx[(idx < 0) | (idx >= self.config.n)][0]
            raise IndexError(f"index {bad} outside [0, {self.config.n})")

    def update_batch(self, idx, deltas, chunk: int = 1 << 16) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        deltas = np.atleast_1d(np.asarray(deltas, dtype=np.float64))
        if idx.shape != deltas.shape:
            raise ValueError("indices and deltas must have the same length")
        self._check_indices(idx)
        for lo in range(0, idx.shape[0], chunk):
            i_part, d_part = idx[lo:lo + chunk], deltas[lo:lo + chunk]
            self.store.add(*self.contributions(i_part, d_part))
            if self.ams is not None:
                self.ams.update_batch(i_part, d_part)
        if self.aux is not None:
            self.aux.update_batch(idx, deltas, chunk)
        self.update_count += idx.shape[0]

    def update(self, i: int, delta: float) -> None:
        self.update_batch(np.array([i]), np.array([delta], dtype=np.float64))

    def ingest(self, x) -> "LinearSketch":
        """Feed a dense vector as one update per non-zero coordinate."""
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        self.update_batch(nz, x[nz])
        return self

    # -- reads -----------------------------------------------------------------

    def cell_values(self, idx) -> np.ndarray:
        """``H_j(h_j(i))`` for every table, shape ``(l, len(idx))``."""
        return self.store.lookup(self.cell_keys(idx))

    def cell(self, j: int, z: int) -> float:
        return float(self.store.lookup(np.array([j * self.config.m + z]))[0])

    def dense_tables(self, limit: int = 1 << 24) -> np.ndarray:
        c = self.config
        if c.space > limit:
            raise MemoryError(f"{c.space} cells exceed the dense limit {limit}")
        out = np.zeros(c.space, dtype=np.float64)
        out[self.store.keys] = self.store.vals
        return out.reshape(c.l, c.m)

    def copy(self) -> "LinearSketch":
        return LinearSketch(self.config, self.store.copy(), self.update_count,
                            None if self.ams is None else self.ams.copy(),
                            None if self.aux is None else self.aux.copy())

    def same_cells(self, other: "LinearSketch") -> bool:
        if self.store != other.store:
            return False
        if (self.ams is None) != (other.ams is None):
            return False
        if self.ams is not None and not np.array_equal(self.ams.counters, other.ams.counters):
            return False
        if (self.aux is None) != (other.aux is None):
            return False
        return self.aux is None or self.aux.same_cells(other.aux)


def aux_config(config: SketchConfig) -> SketchConfig:
    """The companion l_p sketch a sampler keeps to estimate ``||x||_p^p``."""
    return SketchConfig("lp", config.n, config.p, AUX_EPSILON, config.zeta,
                        hashing.derive_master(config.master_seed, hashing.ROLE_AUX_SKETCH),
                        config.l_multiplier, config.max_entry)


def create(problem: str, n: int, p: float, epsilon: float, zeta: float = 8.0,
           master_seed: int = 0, **options) -> LinearSketch:
    """A zeroed sketch dimensioned for ``problem`` (one of fk, l1, lp, sampler)."""
    if problem == "l1" and p is None:
        p = 1.0
    return LinearSketch(SketchConfig(problem, n, float(p), epsilon, zeta, master_seed, **options))


def replica_seeds(master_seed: int, count: int) -> list[int]:
    """Master seeds of independent replicas; replica 0 keeps the given seed."""
    return [master_seed] + [hashing.derive_master(master_seed, hashing.ROLE_REPLICA, r)
                            for r in range(1, count)]


def merge(a: LinearSketch, b: LinearSketch) -> LinearSketch:
    """Cell-wise sum of two sketches built from the same configuration."""
    if a.config != b.config:
        raise ConfigMismatchError(_describe_mismatch(a.config, b.config))
    store = a.store.copy()
    store.add(b.store.keys, b.store.vals)
    ams = None
    if a.ams is not None:
        ams = AmsSketch(a.ams.n, a.ams.p, a.ams.master_seed, a.ams.counters + b.ams.counters)
    aux = merge(a.aux, b.aux) if a.aux is not None else None
    return LinearSketch(a.config, store, a.update_count + b.update_count, ams, aux)


def _describe_mismatch(x: SketchConfig, y: SketchConfig) -> str:
    diffs = [f"{name}: {getattr(x, name)!r} != {getattr(y, name)!r}"
             for name in ("problem", "n", "p", "epsilon", "zeta", "master_seed", "l_multiplier",
                          "max_entry", "weight_mode")
             if getattr(x, name) != getattr(y, name)]
    return "sketch configurations differ (" + "; ".join(diffs) + ")"


# -- binary format -------------------------------------------------------------
#
# little endian:
#   "PSK1" u16 version u8 problem u8 weight_mode
#   u64 n  f64 p  f64 epsilon  f64 zeta  u64 master_seed  u32 l_multiplier
#   u64 max_entry  u64 update_count
#   u64 k  f64 t  u64 m  u32 l  f64 omega  f64 alpha  f64 rho       (derived, checked)
#   u8 encoding: 0 dense -> l*m f64 cells; 1 sparse -> u64 nnz, nnz i64 keys, nnz f64 values
#   u8 has_ams [u32 rows, rows f64 counters]
#   u8 has_aux [u64 length, nested PSK1 record]

_HEAD = struct.Struct("<4sHBBQdddQIQQQdQIddd")


def serialize(sketch: LinearSketch, encoding: str = "auto") -> bytes:
    """Binary record; ``encoding`` is "dense", "sparse" or "auto" (the smaller)."""
    c = sketch.config
    parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, PROBLEM_TAGS[c.problem], MODE_TAGS[c.weight_mode],
                        c.n, c.p, c.epsilon, c.zeta, c.master_seed, c.l_multiplier, c.max_entry,
                        sketch.update_count, c.k, c.t, c.m, c.l, c.omega, c.alpha_blowup, c.rho)]
    keys, vals = sketch.store.keys, sketch.store.vals
    if encoding not in ("auto", "dense", "sparse"):
        raise ValueError(f"unknown encoding {encoding!r}")
    dense_cheaper = keys.shape[0] * 16 >= c.space * 8
    if encoding == "dense" or (encoding == "auto" and dense_cheaper):
        dense = np.zeros(c.space, dtype="<f8")
        dense[keys] = vals
        parts += [b"\x00", dense.tobytes()]
    else:
        parts += [b"\x01", struct.pack("<Q", keys.shape[0]),
                  keys.astype("<i8").tobytes(), vals.astype("<f8").tobytes()]
    if sketch.ams is not None:
        parts += [b"\x01", struct.pack("<I", sketch.ams.rows), sketch.ams.counters.astype("<f8").tobytes()]
    else:
        parts.append(b"\x00")
    if sketch.aux is not None:
        blob = serialize(sketch.aux)
        parts += [b"\x01", struct.pack("<Q", len(blob)), blob]
    else:
        parts.append(b"\x00")
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, size: int) -> memoryview:
        if self.pos + size > len(self.data):
            raise SketchFormatError("truncated sketch data")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(size * count), dtype=dtype).astype(dtype[1:], copy=True)


def _read_sketch(reader: _Reader) -> LinearSketch:
    head = reader.unpack(_HEAD.format)
    (magic, version, ptag, mtag, n, p, eps, zeta, seed, lmul, max_entry, count,
     k, t, m, l, omega, alpha, rho) = head
    if magic != MAGIC:
        raise SketchFormatError(f"bad magic {bytes(magic)!r}; not a sketch file")
    if version != FORMAT_VERSION:
        raise SketchFormatError(f"unsupported format version {version}")
    problems = {v: k_ for k_, v in PROBLEM_TAGS.items()}
    modes = {v: k_ for k_, v in MODE_TAGS.items()}
    if ptag not in problems or mtag not in modes:
        raise SketchFormatError("unknown problem or weight-mode tag")
    try:
        config = SketchConfig(problems[ptag], n, p, eps, zeta, seed, lmul, max_entry, modes[mtag])
    except ValueError as exc:
        raise SketchFormatError(f"invalid configuration: {exc}") from exc
    stored = dict(k=k, t=t, m=m, l=l, omega=omega, alpha=alpha, rho=rho)
    for name, value in config.derived().items():
        have = stored[name]
        if not (value == have or (isinstance(value, float) and math.isnan(value) and math.isnan(have))):
            raise SketchFormatError(f"derived parameter {name} mismatch: file {have}, recomputed {value}")
    (encoding,) = reader.unpack("<B")
    if encoding == 0:
        dense = reader.array("<f8", config.space)
        keys = np.flatnonzero(dense).astype(np.int64)
        store = CellStore(keys, dense[keys])
    elif encoding == 1:
        (nnz,) = reader.unpack("<Q")
        keys = reader.array("<i8", nnz)
        vals = reader.array("<f8", nnz)
        if nnz and (np.any(np.diff(keys) <= 0) or keys[0] < 0 or keys[-1] >= config.space):
            raise SketchFormatError("sparse cell keys must be strictly increasing and in range")
        store = CellStore(keys, vals)
    else:
        raise SketchFormatError(f"unknown cell encoding {encoding}")
    ams = None
    (has_ams,) = reader.unpack("<B")
    if has_ams:
        (rows,) = reader.unpack("<I")
        ams = AmsSketch(n, p, hashing.derive_master(seed, hashing.ROLE_AMS_SIGN), reader.array("<f8", rows))
    aux = None
    (has_aux,) = reader.unpack("<B")
    if has_aux:
        (length,) = reader.unpack("<Q")
        sub = _Reader(bytes(reader.take(length)))
        aux = _read_sketch(sub)
        if aux.config != aux_config(config):
            raise SketchFormatError("companion sketch does not match configuration")
    if (config.problem == "fk") != (ams is not None) or (config.problem == "sampler") != (aux is not None):
        raise SketchFormatError("companion structures do not match the problem kind")
    return LinearSketch(config, store, count, ams, aux)


def deserialize(data: bytes) -> LinearSketch:
    reader = _Reader(data)
    sketch = _read_sketch(reader)
    if reader.pos != len(reader.data):
        raise SketchFormatError("trailing bytes after sketch record")
    return sketch


def serialize_bundle(sketches: list[LinearSketch]) -> bytes:
    """Several sketches in one file; a single sketch is written as a plain record."""
    if len(sketches) == 1:
        return serialize(sketches[0])
    blobs = [serialize(s) for s in sketches]
    return b"".join([BUNDLE_MAGIC, struct.pack("<HI", FORMAT_VERSION, len(blobs))]
                    + [struct.pack("<Q", len(b)) + b for b in blobs])


def deserialize_bundle(data: bytes) -> list[LinearSketch]:
    if data[:4] != BUNDLE_MAGIC:
        return [deserialize(data)]
    reader = _Reader(data)
    reader.take(4)
    version, count = reader.unpack("<HI")
    if version != FORMAT_VERSION:
        raise SketchFormatError(f"unsupported format version {version}")
    out = []
    for _ in range(count):
        (length,) = reader.unpack("<Q")
        out.append(deserialize(bytes(reader.take(length))))
    if reader.pos != len(reader.data):
        raise SketchFormatError("trailing bytes after bundle")
    return out
