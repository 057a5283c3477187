"""Three-fold cross-validation of the full model and its ablations on a synthetic benchmark.

    python scripts/run_ablations.py                      # default benchmark
    python scripts/run_ablations.py --random-lane        # lane visible only in the background
    python scripts/run_ablations.py --variants full no_graph --epochs 10

Prints one AP table row per variant and writes all results as JSON lines.
"""
import argparse
import json
import logging
import time

from objimportance import pipeline
from objimportance.scenes import SceneConfig, dataset_summary, generate_dataset

VARIANTS = {
    "full": {},
    "no_graph": {"no_graph": True},
    "no_global_descriptor": {"no_global_descriptor": True},
    "no_self_attention": {"no_self_attention": True},
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--random-lane", action="store_true")
    p.add_argument("--n-scenes", type=int, default=600)
    p.add_argument("--data-seed", type=int, default=7)
    p.add_argument("--epochs", type=int, default=pipeline.BENCHMARK_CONFIG.epochs)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ablations.jsonl")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    base = pipeline.BENCHMARK_CONFIG.replace(epochs=args.epochs, seed=args.seed)
    scfg = SceneConfig(n_scenes=args.n_scenes, random_lane=args.random_lane, data_seed=args.data_seed)
    scenes = generate_dataset(base, scfg)
    print(json.dumps(dataset_summary(scenes)))
    with open(args.out, "w") as f:
        for name in args.variants:
            t = time.perf_counter()
            report = pipeline.cross_validate(base.replace(**VARIANTS[name]), scenes).report
            elapsed = time.perf_counter() - t
            print(report.table(name), f"  ({elapsed:.0f} s)", flush=True)
            f.write(json.dumps({"variant": name, "random_lane": args.random_lane, "ap_per_split": report.ap_per_split,
                                "avg_ap": report.avg_ap, "seconds": elapsed}) + "\n")


if __name__ == "__main__":
    main()
