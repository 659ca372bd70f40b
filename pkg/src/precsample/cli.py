"""Command-line front end.

Exit codes: 0 success, 2 usage or parameter-domain error, 3 malformed sketch
file or config mismatch, 4 sampler FAIL after all retries.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import cascaded, sketch as sk
from .estimators import estimate, estimate_median
from .sampler import sample, sample_auto

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_FAIL = 0, 2, 3, 4
# a sampler file carries one sketch plus one per default retry
SAMPLER_REPLICAS = 4


class UsageError(Exception):
    pass


def _write_atomic(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".precsample-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def load(path: str):
    """A list of flat sketches, or a single cascaded sketch."""
    data = _read(path)
    if data[:4] == cascaded.NESTED_MAGIC:
        return cascaded.deserialize(data)
    return sk.deserialize_bundle(data)


def dump(obj) -> bytes:
    if isinstance(obj, cascaded.NestedSketch):
        return cascaded.serialize(obj)
    return sk.serialize_bundle(obj)


def parse_stream(lines, width: int) -> tuple[np.ndarray, ...]:
    """Parse ``i delta`` (width 2) or ``i j delta`` (width 3) records."""
    cols: list[list] = [[] for _ in range(width)]
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != width:
            raise UsageError(f"line {lineno}: expected {width} fields, got {len(parts)}")
        try:
            for c in range(width - 1):
                cols[c].append(int(parts[c]))
            cols[-1].append(float(parts[-1]))
        except ValueError:
            raise UsageError(f"line {lineno}: cannot parse {text!r}") from None
    out = [np.array(c, dtype=np.int64) for c in cols[:-1]]
    return (*out, np.array(cols[-1], dtype=np.float64))


def cmd_create(args) -> int:
    if args.problem == "cascaded":
        for name in ("n2", "q", "p"):
            if getattr(args, name) is None:
                raise UsageError(f"--{name} is required for cascaded")
        nested = cascaded.create(args.n, args.n2, args.p, args.q, args.epsilon, args.zeta, args.seed,
                                 inner=args.inner, l_multiplier=args.l_multiplier)
        c = nested.config
        _write_atomic(args.out, cascaded.serialize(nested))
        print(f"k={c.k} t={c.t!r} m={c.m} l={c.l} omega={c.omega!r} omega_type={c.omega_type!r} "
              f"regime={c.regime} kappa={c.kappa} space={c.space}")
        return EXIT_OK
    p = args.p
    if p is None:
        if args.problem != "l1":
            raise UsageError(f"--p is required for {args.problem}")
        p = 1.0
    seeds = sk.replica_seeds(args.seed, args.replicas)
    sketches = [sk.create(args.problem, args.n, p, args.epsilon, args.zeta, s,
                          l_multiplier=args.l_multiplier) for s in seeds]
    _write_atomic(args.out, sk.serialize_bundle(sketches))
    c = sketches[0].config
    print(f"k={c.k} t={c.t!r} m={c.m} l={c.l} omega={c.omega!r} alpha={c.alpha_blowup!r} "
          f"rho={c.rho!r} space={c.space}")
    return EXIT_OK


def cmd_update(args) -> int:
    obj = load(args.sketch)
    if args.input:
        with open(args.input) as fh:
            lines = fh.readlines()
    else:
        lines = sys.stdin.readlines()
    if isinstance(obj, cascaded.NestedSketch):
        rows, cols, deltas = parse_stream(lines, 3)
        if rows.size:
            obj.update_batch(rows, cols, deltas)
    else:
        idx, deltas = parse_stream(lines, 2)
        if idx.size:
            for s in obj:
                s.update_batch(idx, deltas)
    _write_atomic(args.sketch, dump(obj))
    return EXIT_OK


def cmd_merge(args) -> int:
    a, b = load(args.a), load(args.b)
    if isinstance(a, cascaded.NestedSketch) != isinstance(b, cascaded.NestedSketch):
        raise sk.ConfigMismatchError("cannot merge a cascaded sketch with a flat one")
    if isinstance(a, cascaded.NestedSketch):
        merged = cascaded.merge(a, b)
    else:
        if len(a) != len(b):
            raise sk.ConfigMismatchError("replica counts differ")
        merged = [sk.merge(x, y) for x, y in zip(a, b)]
    _write_atomic(args.out, dump(merged))
    return EXIT_OK


def cmd_estimate(args) -> int:
    obj = load(args.sketch)
    if isinstance(obj, cascaded.NestedSketch):
        report = cascaded.estimate(obj)
    else:
        reps = args.repetitions or len(obj)
        if reps > len(obj):
            raise UsageError(f"file holds {len(obj)} replicas, asked for {reps}")
        if obj[0].config.problem == "sampler":
            raise UsageError("sampler sketches are queried with 'sample'")
        report = estimate_median(obj[:reps])
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_sample(args) -> int:
    obj = load(args.sketch)
    if isinstance(obj, cascaded.NestedSketch) or obj[0].config.problem != "sampler":
        raise UsageError("'sample' needs a sampler sketch")
    if args.r is None and not args.auto_r:
        raise UsageError("give --r VALUE or --auto-r")
    # replicas built with independent seeds serve as the retry budget
    attempts = obj[:1 + args.retries]
    for n_try, s in enumerate(attempts):
        if args.auto_r:
            outcome, report = sample_auto(s)
            r_text = f" r={report.value!r}"
        else:
            outcome, r_text = sample(s, args.r), ""
        if not outcome.failed:
            print(outcome.line() + r_text + f" attempt={n_try}")
            return EXIT_OK
    print("FAIL")
    return EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="precsample", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("create", help="write a zeroed sketch")
    c.add_argument("--problem", required=True, choices=["fk", "l1", "lp", "sampler", "cascaded"])
    c.add_argument("--n", type=int, required=True, help="domain size (rows for cascaded)")
    c.add_argument("--n2", type=int, help="columns, cascaded only")
    c.add_argument("--p", type=float)
    c.add_argument("--q", type=float, help="inner norm exponent, cascaded only")
    c.add_argument("--epsilon", type=float, required=True)
    c.add_argument("--zeta", type=float, default=8.0)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--l-multiplier", type=int, default=4)
    c.add_argument("--inner", choices=cascaded.INNER_KINDS, default="exact")
    c.add_argument("--replicas", type=int, default=None,
                   help="independent copies in one file (default 1; sampler 4)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_create)

    u = sub.add_parser("update", help="apply a text stream of updates in place")
    u.add_argument("--sketch", required=True)
    u.add_argument("--in", dest="input", help="stream file (default: standard input)")
    u.set_defaults(func=cmd_update)

    m = sub.add_parser("merge", help="cell-wise sum of two sketches")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_merge)

    e = sub.add_parser("estimate", help="print the norm estimate and halving trace")
    e.add_argument("--sketch", required=True)
    e.add_argument("--repetitions", type=int, default=None,
                   help="median over this many stored replicas (default: all)")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("sample", help="draw one l_p sample")
    s.add_argument("--sketch", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--r", type=float)
    g.add_argument("--auto-r", action="store_true")
    s.add_argument("--retries", type=int, default=3)
    s.set_defaults(func=cmd_sample)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "replicas", 0) is None:
        args.replicas = SAMPLER_REPLICAS if args.problem == "sampler" else 1
    if getattr(args, "replicas", 1) < 1 or (getattr(args, "repetitions", None) or 1) < 1:
        print("error: replica and repetition counts must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ValueError, IndexError) as exc:
        if isinstance(exc, (sk.SketchFormatError, sk.ConfigMismatchError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FORMAT
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
