"""Train the compared learners on generated items and print train accuracies.

usage: python scripts/compare.py [--items 40] [--seeds 3] [--epochs 200]
"""

import argparse
import logging

from shapeparse.experiments import COMPARISON_ALGORITHMS, run_comparison

p = argparse.ArgumentParser()
p.add_argument("--items", type=int, default=40)
p.add_argument("--seeds", type=int, default=3)
p.add_argument("--epochs", type=int, default=200)
p.add_argument("--algorithms", nargs="+", default=list(COMPARISON_ALGORITHMS))
args = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")
res = run_comparison(n_items=args.items, seeds=range(args.seeds), algorithms=args.algorithms,
                 epochs=args.epochs)
print(res.format(), end="")
print(f"elapsed {res.seconds:.0f}s")
