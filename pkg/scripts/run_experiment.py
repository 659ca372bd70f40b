"""Run one named experiment and print its summary as key=value lines.

    python3 scripts/run_experiment.py l1 --trials 50
"""

import argparse
import inspect

from precsample import experiments as E
from precsample.oracle import TrialReport

EXPERIMENTS = {
    "psl": E.run_psl_accuracy,
    "weights": E.run_weight_cost,
    "l1": E.run_l1,
    "fk": E.run_fk,
    "lp": E.run_lp,
    "sampler": E.run_sampler,
    "cascaded": E.run_cascaded,
    "linearity": E.run_linearity,
    "khintchine": E.run_khintchine,
}


def show(result: dict) -> None:
    for key, val in result.items():
        if isinstance(val, dict):
            for name, row in val.items():
                if isinstance(row, TrialReport):
                    print(f"{key}.{row.text(str(name))}")
                else:
                    print(f"{key}.{name}={row!r}")
        elif hasattr(val, "shape") and getattr(val, "size", 0) > 8:
            print(f"{key}=<array of {val.size}>")
        else:
            print(f"{key}={val!r}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("name", choices=sorted(EXPERIMENTS))
    ap.add_argument("--trials", type=int, help="override the trial count where the experiment has one")
    ap.add_argument("--samples", type=int, help="sampler draws")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    fn = EXPERIMENTS[args.name]
    accepted = inspect.signature(fn).parameters
    kwargs = {k: v for k, v in vars(args).items() if k != "name" and v is not None and k in accepted}
    show(fn(**kwargs))


if __name__ == "__main__":
    main()
