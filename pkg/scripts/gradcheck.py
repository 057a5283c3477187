"""Finite-difference gradient check over several seeds and every ablation.

    python scripts/gradcheck.py --seeds 0 1 2
"""
import argparse

from objimportance.trainer import GRADCHECK_CONFIG, gradient_check


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    args = p.parse_args()
    variants = {"full": {}, "no_graph": {"no_graph": True},
                "no_global_descriptor": {"no_global_descriptor": True},
                "no_self_attention": {"no_self_attention": True}}
    failed = 0
    for name, flags in variants.items():
        for seed in args.seeds:
            report = gradient_check(GRADCHECK_CONFIG.replace(**flags), seed=seed, h=args.step,
                                    tolerance=args.tolerance)
            worst = max(report.errors.values()) if report.errors else float("nan")
            print(f"{name:22s} seed {seed}: max rel err {worst:.2e}  {report.lines()[-1]}")
            failed += not report.passed
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
