"""Seeded hash families over a prime field.

Affine maps ``(a*i + b) mod P`` give pairwise independence; degree-(kappa-1)
polynomials give kappa-wise independence. Every function accepts either a
Python ``int`` index or a numpy integer array and is a pure function of
(seed, index).

Seed derivation is counter based: a 64-bit master seed and a
``(role, index, word)`` triple are fed through SplitMix64 finalizers, so the
same master seed always expands into the same tree of role seeds::

    z = mix64(master ^ mix64(role * GOLDEN))
    z = mix64(z ^ mix64(index + GOLDEN))
    value = mix64(z + word * GOLDEN)

Field elements are then ``a = 1 + value_0 % (P - 1)`` and
``b = value_1 % P``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MERSENNE61 = (1 << 61) - 1
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# seed roles; never reuse a role id for a different purpose
ROLE_BUCKET = 1
ROLE_SIGN = 2
ROLE_WEIGHT_COLUMN = 3
ROLE_WEIGHT_INVERSE = 4
ROLE_AMS_SIGN = 5
ROLE_POLY_BUCKET = 6
ROLE_POLY_SIGN = 7
ROLE_AUX_SKETCH = 8
ROLE_REPLICA = 9
ROLE_INNER_SKETCH = 10
ROLE_TRIAL = 11

_U64 = np.uint64
_P61 = _U64(MERSENNE61)
_M32 = _U64(0xFFFFFFFF)
_M29 = _U64((1 << 29) - 1)


@dataclass(frozen=True)
class AffineSeed:
    a: int
    b: int
    P: int = MERSENNE61

    def __post_init__(self):
        if not 1 <= self.a < self.P:
            raise ValueError(f"a must lie in [1, P), got {self.a}")
        if not 0 <= self.b < self.P:
            raise ValueError(f"b must lie in [0, P), got {self.b}")


@dataclass(frozen=True)
class PolySeed:
    """Coefficients ``c_0 .. c_{kappa-1}`` of a polynomial over GF(P)."""

    coeffs: tuple[int, ...]
    P: int = MERSENNE61

    def __post_init__(self):
        if len(self.coeffs) < 2:
            raise ValueError("kappa must be at least 2")
        if any(not 0 <= c < self.P for c in self.coeffs):
            raise ValueError("coefficients must be field elements")

    @property
    def kappa(self) -> int:
        return len(self.coeffs)


# -- SplitMix64 ---------------------------------------------------------------

def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(_U64, copy=True)
    z ^= z >> _U64(30)
    z *= _U64(0xBF58476D1CE4E5B9)
    z ^= z >> _U64(27)
    z *= _U64(0x94D049BB133111EB)
    z ^= z >> _U64(31)
    return z


def derive_word(master: int, role: int, index: int, word: int = 0) -> int:
    z = mix64(master ^ mix64(role * GOLDEN))
    z = mix64(z ^ mix64(index + GOLDEN))
    return mix64(z + word * GOLDEN)


def derive_words(master: int, role: int, indices: np.ndarray, word: int) -> np.ndarray:
    """Vectorised :func:`derive_word` over an array of indices."""
    base = _U64(mix64(master ^ mix64(role * GOLDEN)))
    idx = np.asarray(indices, dtype=_U64)
    z = _mix64_vec(base ^ _mix64_vec(idx + _U64(GOLDEN)))
    return _mix64_vec(z + _U64((word * GOLDEN) & MASK64))


def derive_seed(master: int, role: int, index: int, P: int = MERSENNE61) -> AffineSeed:
    a = 1 + derive_word(master, role, index, 0) % (P - 1)
    b = derive_word(master, role, index, 1) % P
    return AffineSeed(a, b, P)


def derive_seed_arrays(master: int, role: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """``count`` affine seeds over GF(2^61-1) as parallel ``(a, b)`` uint64 arrays.

    Agrees element-wise with ``derive_seed(master, role, j)`` for ``j < count``.
    """
    idx = np.arange(count, dtype=_U64)
    a = _U64(1) + derive_words(master, role, idx, 0) % _U64(MERSENNE61 - 1)
    b = derive_words(master, role, idx, 1) % _P61
    return a, b


def derive_poly_seed(master: int, role: int, index: int, kappa: int,
                     P: int = MERSENNE61) -> PolySeed:
    coeffs = tuple(derive_word(master, role, index, w) % P for w in range(kappa))
    if coeffs[-1] == 0:
        coeffs = coeffs[:-1] + (1,)
    return PolySeed(coeffs, P)


def derive_master(master: int, role: int, index: int = 0) -> int:
    """A fresh 64-bit master seed for a sub-structure (aux sketch, replica, trial)."""
    return derive_word(master, role, index, 0)


# -- field arithmetic ---------------------------------------------------------

def mulmod61(a, b):
    """``a * b mod 2^61-1`` for uint64 arrays with entries below the modulus."""
    a = np.asarray(a, dtype=_U64)
    b = np.asarray(b, dtype=_U64)
    a_lo, a_hi = a & _M32, a >> _U64(32)
    b_lo, b_hi = b & _M32, b >> _U64(32)
    lolo = a_lo * b_lo
    mid = a_hi * b_lo + a_lo * b_hi
    hihi = a_hi * b_hi
    # 2^61 = 1 and 2^64 = 8 in this field
    r = (lolo & _P61) + (lolo >> _U64(61))
    r += (mid >> _U64(29)) + ((mid & _M29) << _U64(32))
    r += hihi << _U64(3)
    r = (r & _P61) + (r >> _U64(61))
    r = (r & _P61) + (r >> _U64(61))
    return np.where(r >= _P61, r - _P61, r)


def _mulmod61_small(a, x):
    """``a * x mod 2^61-1`` when every ``x`` is below ``2^32`` (indices)."""
    mid = (a >> _U64(32)) * x
    r = (a & _M32) * x
    r = (r & _P61) + (r >> _U64(61))
    r += mid >> _U64(29)
    mid &= _M29
    mid <<= _U64(32)
    r += mid
    r = (r & _P61) + (r >> _U64(61))
    # entries are below 2P; unsigned wrap-around makes the minimum pick r - P iff r >= P
    return np.minimum(r, r - _P61)


def _addmod61(a, b):
    r = np.asarray(a, dtype=_U64) + np.asarray(b, dtype=_U64)
    return np.minimum(r, r - _P61)


def _as_residues(i, P: int) -> np.ndarray:
    arr = np.asarray(i)
    if arr.size and (arr.min() < 0):
        raise ValueError("indices must be non-negative")
    return arr.astype(_U64) % _U64(P)


def affine_raw(seed: AffineSeed, i):
    """``(a*i + b) mod P``; returns ``int`` for scalar input."""
    if isinstance(i, (int, np.integer)):
        return (seed.a * int(i) + seed.b) % seed.P
    return affine_raw_many(np.asarray([seed.a], dtype=_U64), np.asarray([seed.b], dtype=_U64),
                           i, seed.P)[0]


def affine_raw_many(a: np.ndarray, b: np.ndarray, i, P: int = MERSENNE61) -> np.ndarray:
    """Evaluate many affine seeds on many indices; result shape ``(len(a), len(i))``."""
    x = _as_residues(i, P).reshape(1, -1)
    a = np.asarray(a, dtype=_U64).reshape(-1, 1)
    b = np.asarray(b, dtype=_U64).reshape(-1, 1)
    if P == MERSENNE61:
        if x.size and x.max() < _U64(1 << 32):
            return _addmod61(_mulmod61_small(a, x), b)
        return _addmod61(mulmod61(a, x), b)
    if P < (1 << 31):
        return (a * x + b) % _U64(P)
    # generic large prime: exact but slow
    out = (a.astype(object) * x.astype(object) + b.astype(object)) % P
    return out.astype(_U64)


def bucket(seed: AffineSeed, i, m: int):
    if m < 1:
        raise ValueError("m must be positive")
    raw = affine_raw(seed, i)
    if isinstance(raw, int):
        return raw % m
    return (raw % _U64(m)).astype(np.int64)


def sign(seed: AffineSeed, i):
    raw = affine_raw(seed, i)
    if isinstance(raw, int):
        return 1 - 2 * (raw & 1)
    return 1 - 2 * (raw & _U64(1)).astype(np.int64)


def uniform01(seed: AffineSeed, i):
    """``(raw + 1) / P``, a value in ``(0, 1]``; never zero."""
    raw = affine_raw(seed, i)
    if isinstance(raw, int):
        return (float(raw) + 1.0) / float(seed.P)
    return (raw.astype(np.float64) + 1.0) / float(seed.P)


def poly_raw(seed: PolySeed, i):
    P = seed.P
    if isinstance(i, (int, np.integer)):
        acc = 0
        for c in reversed(seed.coeffs):
            acc = (acc * int(i) + c) % P
        return acc
    x = _as_residues(i, P)
    acc = np.zeros_like(x)
    for c in reversed(seed.coeffs):
        if P == MERSENNE61:
            acc = _addmod61(mulmod61(acc, x), _U64(c))
        elif P < (1 << 31):
            acc = (acc * x + _U64(c)) % _U64(P)
        else:
            acc = ((acc.astype(object) * x.astype(object) + c) % P).astype(_U64)
    return acc


def poly_bucket(seed: PolySeed, i, m: int):
    if m < 1:
        raise ValueError("m must be positive")
    raw = poly_raw(seed, i)
    if isinstance(raw, int):
        return raw % m
    return (raw % _U64(m)).astype(np.int64)


def poly_sign(seed: PolySeed, i):
    raw = poly_raw(seed, i)
    if isinstance(raw, int):
        return 1 - 2 * (raw & 1)
    return 1 - 2 * (raw & _U64(1)).astype(np.int64)


def poly_raw_many(coeffs: np.ndarray, i) -> np.ndarray:
    """Evaluate several degree-(kappa-1) polynomials over GF(2^61-1).

    ``coeffs`` has shape ``(rows, kappa)`` (constant term first); the result
    has shape ``(rows, len(i))``.
    """
    c = np.asarray(coeffs, dtype=_U64)
    x = _as_residues(i, MERSENNE61).reshape(1, -1)
    acc = np.zeros((c.shape[0], x.shape[1]), dtype=_U64)
    for col in range(c.shape[1] - 1, -1, -1):
        acc = _addmod61(mulmod61(acc, x), c[:, col:col + 1])
    return acc


def derive_poly_arrays(master: int, role: int, count: int, kappa: int) -> np.ndarray:
    """``count`` polynomial seeds as a ``(count, kappa)`` uint64 coefficient array.

    Row ``j`` equals ``derive_poly_seed(master, role, j, kappa).coeffs``.
    """
    idx = np.arange(count, dtype=_U64)
    cols = [derive_words(master, role, idx, w) % _P61 for w in range(kappa)]
    out = np.stack(cols, axis=1)
    out[out[:, -1] == 0, -1] = 1
    return out
