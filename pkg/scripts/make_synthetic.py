"""Write a synthetic graph in the on-disk dataset layout, ready for the tkgprompt CLI.

    python3 scripts/make_synthetic.py interval data/interval --seed 0
    tkgprompt train --data data/interval --granularity 1
"""

import argparse

from tkgprompt.kg import dump_tkg
from tkgprompt.synthetic import interval_rule_tkg, sequel_tkg

GRAPHS = {"interval": interval_rule_tkg, "sequel": sequel_tkg}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("graph", choices=sorted(GRAPHS))
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    tkg = GRAPHS[args.graph](args.seed)
    dump_tkg(tkg, args.out)
    train, valid, test = tkg.split_sizes
    print(f"wrote {args.out}: {tkg.num_entities} entities, {tkg.num_relations} relations, "
          f"{train}/{valid}/{test} train/valid/test facts (timestamps in days)")


if __name__ == "__main__":
    main()
