"""Oracle pixel accuracy against parse depth on generated items.

usage: python scripts/oracle_accuracy.py [--items 50] [--side 64] [--depths 1 3 5 7]
"""

import argparse

import numpy as np

from shapeparse.evalreport import majority_accuracy, tree_accuracy
from shapeparse.oracle import oracle_parse
from shapeparse.synthdata import GenConfig, generate

p = argparse.ArgumentParser()
p.add_argument("--items", type=int, default=50)
p.add_argument("--side", type=int, default=64)
p.add_argument("--depths", type=int, nargs="+", default=[1, 3, 5, 7])
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

for guillotine in (True, False):
    ds = generate(GenConfig(n=args.items, side=args.side, guillotine=guillotine, seed=args.seed))
    kind = "guillotine" if guillotine else "overlap"
    maj = np.mean([majority_accuracy(g) for g in ds.grids])
    print(f"{kind:<11} majority {maj:.4f}")
    for d in args.depths:
        accs = [tree_accuracy(oracle_parse(g, d), g) for g in ds.grids]
        print(f"{kind:<11} D={d:<2} mean {np.mean(accs):.4f}  min {np.min(accs):.4f}")
