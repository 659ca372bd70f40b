import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from precsample import cascaded as C
from precsample import hashing
from precsample.estimators import estimate_lp
from precsample.oracle import exact_cascaded, run_trials
from precsample.sketch import ConfigMismatchError, SketchFormatError, create as flat_create


def test_p_type_examples():
    assert C.p_type_bound(1, 1, 64, 100) == pytest.approx(8100.0)
    assert C.p_type_bound(3, 3, 512, 100) == pytest.approx(81 * 9 * 100 ** (2 / 3) * 512 ** (1 / 3))
    assert C.p_type_bound(3, 3, 512, 100) == pytest.approx(125646.63112265946, rel=1e-12)
    assert C.select_regime(1, 2, 64, 100) == "a"
    assert C.select_regime(3, 3, 64, 100) == "b_high"
    assert C.select_regime(1, 3, 64, 100) == "b_low"
    assert C.select_regime(2, 1, 64, 100) == "c_high"
    assert C.select_regime(0.8, 0.5, 64, 100) == "c_low"
    with pytest.raises(ValueError):
        C.p_type_bound(0, 1, 64, 100)


def test_case_b_exponent_monotone_in_p():
    n, vals = 512, []
    for p in (2.0, 3.0, 5.0, 10.0, 50.0):
        vals.append(n ** (1 - 2 / p))
    assert all(a < b for a, b in zip(vals, vals[1:])) and vals[-1] < n


def test_overlapping_regimes_take_minimum():
    # q >= 2 and q < p: both the q >= 2 bound and the q < p bound apply
    regimes = C.corollary_regime(4.0, 3.0)
    assert set(regimes) == {"b_high", "c_high"}
    vals = [C.regime_bound(g, 4.0, 3.0, 64, 1e5) for g in regimes]
    assert C.p_type_bound(4.0, 3.0, 64, 1e5) == min(vals)


@pytest.mark.parametrize("p,q", [(1, 2), (3, 3), (1.5, 1.5), (2, 1)])
def test_config_arithmetic(p, q):
    c = C.CascadedConfig(64, 64, p, q, 0.3)
    k = math.ceil(8 / (0.3 / 8 * 0.09))
    omega = 10 * k * math.log(64.0 ** 5)
    wt = 3 * p * omega / 0.3
    assert (c.k, c.omega, c.omega_type) == (k, pytest.approx(omega), pytest.approx(wt))
    assert c.m == math.ceil(C.p_type_bound(p, q, 64, c.omega_type))
    assert c.l == 25 and c.space == c.l * c.m * 64
    assert c.kappa == (2 * math.ceil(q) + 2 if c.regime.startswith("b") else 2)


def test_update_cell_contents():
    ns = C.create(16, 8, 1.0, 2.0, 0.3, master_seed=5)
    ns.update(3, 2, 1.5)
    w = ns.row_weights()[3]
    keys = ns.outer_keys([3])[:, 0]
    signs = ns.signs([3])[:, 0]
    for key, g in zip(keys, signs):
        ik, iv = ns.cell_vector(int(key))
        assert ik.tolist() == [2] and iv[0] == g * w * 1.5
    before = ns.store.copy()
    ns.update(3, 2, 0.0)
    assert ns.store == before
    ns.update(3, 2, 2.5)
    assert all(ns.cell_vector(int(k))[1][0] == pytest.approx(g * w * 4.0) for k, g in zip(keys, signs))
    with pytest.raises(IndexError):
        ns.update(16, 0, 1.0)
    with pytest.raises(IndexError):
        ns.update(0, 8, 1.0)


def test_poly_hashing_used_in_case_b():
    ns = C.create(16, 8, 3.0, 3.0, 0.3, master_seed=5)
    assert ns.config.kappa == 8
    coeffs = hashing.derive_poly_arrays(5, hashing.ROLE_POLY_BUCKET, ns.config.l, 8)
    seed0 = hashing.PolySeed(tuple(int(c) for c in coeffs[0]))
    assert ns.outer_keys([7])[0, 0] == hashing.poly_bucket(seed0, 7, ns.config.m)


@given(st.lists(st.integers(-9, 9), min_size=64, max_size=64),
       st.lists(st.integers(-9, 9), min_size=64, max_size=64))
def test_linearity(x, y):
    x = np.array(x, float).reshape(8, 8)
    y = np.array(y, float).reshape(8, 8)
    a = C.create(8, 8, 1.0, 2.0, 0.3, master_seed=2).ingest(x)
    b = C.create(8, 8, 1.0, 2.0, 0.3, master_seed=2).ingest(y)
    ab = C.create(8, 8, 1.0, 2.0, 0.3, master_seed=2).ingest(x + y)
    m, da, db, dab = C.merge(a, b).store.as_dict(), a.store.as_dict(), b.store.as_dict(), ab.store.as_dict()
    for key in set(m) | set(dab):
        mag = abs(da.get(key, 0.0)) + abs(db.get(key, 0.0))
        assert abs(m.get(key, 0.0) - dab.get(key, 0.0)) <= 1e-9 * mag


def test_zero_and_single_row():
    assert not C.estimate(C.create(16, 16, 1.0, 2.0, 0.3)).success_flag
    v = np.arange(1.0, 17.0)
    x = np.zeros((16, 16))
    x[4] = v
    truth = exact_cascaded(x, 1.0, 2.0)
    assert truth == pytest.approx(np.linalg.norm(v))

    def run(seed):
        return C.estimate(C.create(16, 16, 1.0, 2.0, 0.3, master_seed=seed).ingest(x)).value

    assert run_trials(run, 20, lambda e: truth / 1.3 <= e <= truth * 1.3).success_rate >= 0.6


def test_random_sign_matrix():
    x = np.random.default_rng(1).choice([-1.0, 1.0], (64, 64))

    def run(seed):
        return C.estimate(C.create(64, 64, 1.0, 2.0, 0.3, master_seed=seed).ingest(x)).value

    assert run_trials(run, 20, lambda e: 512 / 1.3 <= e <= 512 * 1.3).success_rate >= 0.6


def test_nesting_consistency_with_flat_sketch():
    x = np.random.default_rng(3).integers(-9, 10, 32).astype(float)
    flat = flat_create("lp", 32, 1.5, 0.3, master_seed=11).ingest(x)
    nested = C.create(32, 32, 1.5, 1.5, 0.3, master_seed=11, m_override=flat.config.m)
    nested.ingest(np.diag(x))
    assert nested.config.k == flat.config.k and nested.config.l == flat.config.l
    assert np.array_equal(nested.outer_keys(np.arange(32)), flat.cell_keys(np.arange(32)))
    a, b = C.estimate(nested), estimate_lp(flat)
    assert a.value == pytest.approx(b.value, rel=1e-9)
    assert a.r_used == b.r_used


@pytest.mark.parametrize("q", [1.5, 3.0])
def test_inner_sketch_kinds(q):
    rng = np.random.default_rng(0)
    x = np.zeros((8, 16))
    x[2] = rng.integers(1, 5, 16)
    truth = exact_cascaded(x, 1.0, q)
    ns = C.create(8, 16, 1.0, q, 0.3, master_seed=3, inner="sketch").ingest(x)
    est = C.estimate(ns).value
    assert truth / 1.6 <= est <= truth * 1.6


def test_serialization():
    ns = C.create(16, 8, 3.0, 3.0, 0.3, master_seed=5)
    ns.update_batch([1, 2, 3], [0, 1, 7], [1.0, -2.0, 3.0])
    blob = C.serialize(ns)
    back = C.deserialize(blob)
    assert back.config == ns.config and back.store == ns.store and back.update_count == 3
    assert C.serialize(back) == blob
    with pytest.raises(SketchFormatError):
        C.deserialize(b"PSK1" + blob[4:])
    with pytest.raises(SketchFormatError):
        C.deserialize(blob[:-1])
    with pytest.raises(ConfigMismatchError):
        C.merge(ns, C.create(16, 8, 3.0, 3.0, 0.3, master_seed=6))


def test_domain_errors():
    for args in [(1, 8, 1, 2, 0.3), (8, 8, 1, 2, 0.4), (8, 8, -1, 2, 0.3)]:
        with pytest.raises(ValueError):
            C.CascadedConfig(*args)
    with pytest.raises(ValueError):
        C.CascadedConfig(8, 4, 1, 2, 0.3, inner="sketch")
