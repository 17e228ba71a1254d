"""Train on the sequel graph and report how often the follow-up object ranks first.

    python3 scripts/memorization.py --seeds 0 1 2
"""

import argparse
import time

from tkgprompt.experiments import memorization


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--context-samples", type=int, default=4)
    ap.add_argument("--pairs", type=int, default=8)
    args = ap.parse_args()
    print("seed\thits1\tfinal_loss\tqueries\tseconds")
    for seed in args.seeds:
        start = time.perf_counter()
        o = memorization(seed, args.epochs, args.context_samples, pairs=args.pairs)
        print(f"{seed}\t{o.hits1:.4f}\t{o.final_loss:.4f}\t{o.queries}\t{time.perf_counter() - start:.1f}",
              flush=True)


if __name__ == "__main__":
    main()
