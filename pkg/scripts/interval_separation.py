"""Train full and no-prompts models on the interval-rule graph and compare Hits@1.

    python3 scripts/interval_separation.py --seeds 0 1 2
"""

import argparse
import time

from tkgprompt.experiments import chance_hits1, interval_separation
from tkgprompt.synthetic import interval_rule_tkg


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--context-samples", type=int, default=32)
    ap.add_argument("--variants", nargs="+", default=["full", "no-prompts"])
    args = ap.parse_args()
    print("seed\tvariant\thits1\tmajority_hits1\tfinal_loss\tqueries\tseconds")
    for seed in args.seeds:
        majority = chance_hits1(interval_rule_tkg(seed))
        for variant in args.variants:
            start = time.perf_counter()
            o = interval_separation(seed, variant, args.epochs, args.context_samples)
            print(f"{seed}\t{variant}\t{o.hits1:.4f}\t{majority:.4f}\t{o.final_loss:.4f}\t{o.queries}\t"
                  f"{time.perf_counter() - start:.1f}", flush=True)


if __name__ == "__main__":
    main()
