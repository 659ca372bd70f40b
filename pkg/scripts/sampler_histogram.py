"""Empirical sampler frequencies against the exact |x_i|^p / ||x||_p^p target."""

import argparse

import numpy as np

from precsample import experiments as E


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=6)
    args = ap.parse_args()
    res = E.run_sampler(samples=args.samples, seed=args.seed)
    freq, target = np.asarray(res["freq"]), np.asarray(res["target"])
    print("group       target   observed")
    heavy = slice(0, 32)
    light = slice(32, None)
    for label, part in (("heavy", heavy), ("light", light)):
        print(f"{label:<10} {target[part].sum():8.4f} {freq[part].sum():10.4f}")
    print(f"tv={res['tv']:.4f} fail_rate={res['fail_rate']:.4f} value_rate={res['value_rate']:.4f}")


if __name__ == "__main__":
    main()
