import numpy as np
import pytest

from precsample import cascaded, cli
from precsample import sketch as sk


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def test_create_prints_derived_parameters(tmp_path, capsys):
    out = tmp_path / "a.psk"
    code, io = run(["create", "--problem", "l1", "--n", "65536", "--epsilon", "0.125",
                    "--seed", "1", "--out", str(out)], capsys)
    assert code == 0
    c = sk.SketchConfig("l1", 65536, 1.0, 0.125, master_seed=1)
    assert f"m={c.m} l={c.l}" in io.out and f"k={c.k}" in io.out
    assert sk.deserialize(out.read_bytes()).config == c


def test_create_errors(tmp_path, capsys):
    out = str(tmp_path / "x")
    assert run(["create", "--problem", "fk", "--n", "64", "--epsilon", "0.2", "--seed", "1",
                "--out", out], capsys)[0] == 2
    code, io = run(["create", "--problem", "l1", "--n", "64", "--epsilon", "0.5", "--seed", "1",
                    "--out", out], capsys)
    assert code == 2 and "1/3" in io.err
    assert run(["create", "--problem", "nope"], capsys)[0] == 2


def test_update_paths(tmp_path, capsys):
    f = tmp_path / "s.psk"
    run(["create", "--problem", "lp", "--p", "1.5", "--n", "256", "--epsilon", "0.3", "--seed", "4",
         "--out", str(f)], capsys)
    fresh = f.read_bytes()
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert run(["update", "--sketch", str(f), "--in", str(empty)], capsys)[0] == 0
    assert f.read_bytes() == fresh
    pm = tmp_path / "pm.txt"
    pm.write_text("5 1.0\n5 -1.0\n")
    run(["update", "--sketch", str(f), "--in", str(pm)], capsys)
    assert sk.deserialize(f.read_bytes()).same_cells(sk.deserialize(fresh))

    rng = np.random.default_rng(0)
    idx = rng.integers(0, 256, 10000)
    d = rng.integers(-9, 10, 10000)
    stream = tmp_path / "big.txt"
    stream.write_text("".join(f"{i} {v}\n" for i, v in zip(idx, d)))
    f.write_bytes(fresh)
    run(["update", "--sketch", str(f), "--in", str(stream)], capsys)
    lib = sk.create("lp", 256, 1.5, 0.3, master_seed=4)
    lib.update_batch(idx, d.astype(float))
    assert f.read_bytes() == sk.serialize(lib)


def test_update_errors(tmp_path, capsys):
    f = tmp_path / "s.psk"
    run(["create", "--problem", "l1", "--n", "64", "--epsilon", "0.3", "--seed", "4", "--out", str(f)], capsys)
    before = f.read_bytes()
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\nfoo 3\n")
    code, io = run(["update", "--sketch", str(f), "--in", str(bad)], capsys)
    assert code == 2 and "line 2" in io.err
    bad.write_text("64 1\n")
    assert run(["update", "--sketch", str(f), "--in", str(bad)], capsys)[0] == 2
    assert f.read_bytes() == before
    junk = tmp_path / "junk.psk"
    junk.write_bytes(b"nope" + before[4:])
    assert run(["estimate", "--sketch", str(junk)], capsys)[0] == 3


def test_merge_and_estimate(tmp_path, capsys):
    a, b, m = (tmp_path / n for n in ("a", "b", "m"))
    for f in (a, b):
        run(["create", "--problem", "l1", "--n", "64", "--epsilon", "0.3", "--seed", "2", "--out", str(f)], capsys)
    s1 = tmp_path / "1.txt"
    s1.write_text("3 5\n9 -2\n")
    s2 = tmp_path / "2.txt"
    s2.write_text("3 -5\n9 2\n")
    run(["update", "--sketch", str(a), "--in", str(s1)], capsys)
    run(["update", "--sketch", str(b), "--in", str(s2)], capsys)
    assert run(["merge", str(a), str(b), "--out", str(m)], capsys)[0] == 0
    code, io = run(["estimate", "--sketch", str(m)], capsys)
    assert code == 0 and "value=0.0" in io.out and "success=false" in io.out
    code, io = run(["estimate", "--sketch", str(a)], capsys)
    assert "r_used=" in io.out and "trace r=" in io.out
    other = tmp_path / "o"
    run(["create", "--problem", "l1", "--n", "64", "--epsilon", "0.3", "--seed", "3", "--out", str(other)], capsys)
    code, io = run(["merge", str(a), str(other), "--out", str(m)], capsys)
    assert code == 3 and "master_seed" in io.err


def test_replicas_and_repetitions(tmp_path, capsys):
    f = tmp_path / "r"
    run(["create", "--problem", "l1", "--n", "64", "--epsilon", "0.3", "--seed", "2", "--replicas", "3",
         "--out", str(f)], capsys)
    assert len(sk.deserialize_bundle(f.read_bytes())) == 3
    s = tmp_path / "s.txt"
    s.write_text("1 10\n")
    run(["update", "--sketch", str(f), "--in", str(s)], capsys)
    assert run(["estimate", "--sketch", str(f), "--repetitions", "3"], capsys)[0] == 0
    assert run(["estimate", "--sketch", str(f), "--repetitions", "4"], capsys)[0] == 2


def test_sample(tmp_path, capsys):
    f = tmp_path / "s"
    run(["create", "--problem", "sampler", "--p", "1", "--n", "64", "--epsilon", "0.3", "--seed", "2",
         "--out", str(f)], capsys)
    assert run(["sample", "--sketch", str(f), "--auto-r"], capsys)[0] == 4
    s = tmp_path / "s.txt"
    s.write_text("17 -3\n")
    run(["update", "--sketch", str(f), "--in", str(s)], capsys)
    code, io = run(["sample", "--sketch", str(f), "--auto-r"], capsys)
    assert code == 0 and "index=17" in io.out
    code, io = run(["sample", "--sketch", str(f), "--r", "3"], capsys)
    assert code == 0 and "index=17" in io.out
    assert run(["sample", "--sketch", str(f)], capsys)[0] == 2


def test_cascaded_cli(tmp_path, capsys):
    f = tmp_path / "c"
    code, io = run(["create", "--problem", "cascaded", "--n", "16", "--n2", "8", "--p", "1", "--q", "2",
                    "--epsilon", "0.3", "--seed", "5", "--out", str(f)], capsys)
    assert code == 0 and "regime=a" in io.out
    s = tmp_path / "m.txt"
    s.write_text("2 3 4.0\n2 4 3.0\n")
    run(["update", "--sketch", str(f), "--in", str(s)], capsys)
    lib = cascaded.create(16, 8, 1.0, 2.0, 0.3, master_seed=5)
    lib.update_batch([2, 2], [3, 4], [4.0, 3.0])
    assert f.read_bytes() == cascaded.serialize(lib)
    code, io = run(["estimate", "--sketch", str(f)], capsys)
    assert code == 0 and "value=" in io.out
    assert run(["create", "--problem", "cascaded", "--n", "16", "--p", "1", "--epsilon", "0.3",
                "--seed", "5", "--out", str(f)], capsys)[0] == 2
