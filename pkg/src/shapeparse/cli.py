"""Command-line interface: generate, oracle, train, eval, render.

Exit codes: 0 success, 1 usage error, 2 IO error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import synthdata
from .approximator import NumericError, load_checkpoint, save_checkpoint
from .drag import ALGORITHMS, TrainConfig, write_log_csv
from .env import LearnerPolicy
from .evalreport import evaluate, format_table, render, tree_accuracy, write_report_csv
from .grammar import ParseTree
from .oracle import oracle_parse
from .raster import NOPAINT, LabelGrid, load_pair

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("shapeparse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shapeparse", description="Shape parsing with a binary split grammar.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--n", type=int, default=60, help="number of items")
    g.add_argument("--side", type=int, default=64, help="grid side in pixels")
    g.add_argument("--depth", type=int, default=7, help="max parse depth used to vet guillotine items")
    g.add_argument("--guillotine", action="store_true", help="only guillotine-cut (oracle-exact) items")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")

    o = sub.add_parser("oracle", help="parse a dataset with the information-gain expert")
    o.add_argument("--data", required=True, help="dataset directory")
    o.add_argument("--depth", type=int, default=7)
    o.add_argument("--out-trees", help="directory for one JSON tree per item")
    o.add_argument("--out-render", help="directory for one overlay PNG per item")
    o.add_argument("--jobs", type=int, default=1, help="worker processes")

    t = sub.add_parser("train", help="train one algorithm with k-fold cross-validation")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--algorithm", choices=ALGORITHMS, help="overrides the config file")
    t.add_argument("--config", help="key = value training config file")
    t.add_argument("--folds", type=int, default=3, help="1 trains on everything")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--jobs", type=int, default=1, help="accepted for interface parity; training is serial")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--depth", type=int, help="defaults to the depth stored in the checkpoint")
    e.add_argument("--report", help="CSV report path")
    e.add_argument("--jobs", type=int, default=1, help="worker processes")

    r = sub.add_parser("render", help="draw a parse tree over an image")
    r.add_argument("--tree", required=True, help="tree JSON")
    r.add_argument("--image", required=True, help="grayscale PNG (its .mask.png is optional)")
    r.add_argument("--out", required=True, help="output PNG")
    r.add_argument("--scale", type=int, default=4)
    return p


# commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = synthdata.GenConfig(n=args.n, side=args.side, guillotine=args.guillotine,
                              max_depth=args.depth, seed=args.seed)
    ds = synthdata.generate(cfg)
    synthdata.save(ds, args.out)
    print(f"wrote {len(ds)} items to {args.out}")
    return EXIT_OK


def _oracle_item(job):
    grid, depth = job
    tree = oracle_parse(grid, depth)
    return tree, tree_accuracy(tree, grid)


def _map(fn, jobs, n_jobs: int):
    if n_jobs > 1:
        with Pool(n_jobs) as pool:
            return pool.map(fn, jobs)
    return [fn(j) for j in jobs]


def cmd_oracle(args) -> int:
    ds = synthdata.load(args.data)
    results = _map(_oracle_item, [(g, args.depth) for g in ds.grids], args.jobs)
    for d in (args.out_trees, args.out_render):
        if d:
            Path(d).mkdir(parents=True, exist_ok=True)
    for (grid, ident), (tree, acc) in zip(ds.items, results):
        if args.out_trees:
            tree.save(Path(args.out_trees) / f"{ident}.json")
        if args.out_render:
            render(tree, grid, Path(args.out_render) / f"{ident}.png")
    accs = [a for _, a in results]
    if args.out_trees:
        rows = [{"algorithm": "Oracle", "fold": 0, "train_acc": None, "test_acc": a} for a in accs]
        write_report_csv(rows, Path(args.out_trees) / "accuracy.csv")
    print(f"oracle mean pixel accuracy {np.mean(accs):.6f} over {len(accs)} items (D={args.depth})")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    overrides = {}
    if args.algorithm:
        overrides["algorithm"] = args.algorithm
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"{path}: config file not found")
        try:
            return TrainConfig.from_file(path, **overrides)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{path}: {exc}") from exc
    return TrainConfig(**overrides)


def cmd_train(args) -> int:
    from .baselines import TRAINERS

    config = _train_config(args)
    ds = synthdata.load(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    if args.folds == 1:
        splits = [(np.arange(len(ds)), np.array([], dtype=int))]
    elif args.folds >= 2:
        splits = synthdata.kfold(len(ds), args.folds, config.seed)
    else:
        raise UsageError("--folds must be >= 1")
    rows = []
    for fold, (train_idx, test_idx) in enumerate(splits):
        train_set = ds.subset(train_idx)
        trainer = TRAINERS[config.algorithm](train_set, config).train()
        train_acc = evaluate(trainer.learner, train_set.grids, config.max_depth).mean
        test_acc = (evaluate(trainer.learner, ds.subset(test_idx).grids, config.max_depth).mean
                    if len(test_idx) else None)
        save_checkpoint(out / f"fold{fold}.ckpt", trainer.policy,
                        trainer.critic if trainer.uses_critic else None,
                        step=trainer.epoch, seed=config.seed,
                        extra={"algorithm": config.algorithm, "fold": fold,
                               "max_depth": config.max_depth,
                               "test_ids": [ds.ids[i] for i in test_idx]})
        write_log_csv(trainer.log, out / f"fold{fold}_log.csv")
        rows.append({"algorithm": config.algorithm, "fold": fold, "train_acc": train_acc,
                     "test_acc": test_acc})
        log.info("fold %d train %.4f test %s", fold, train_acc, test_acc)
    write_report_csv(rows, out / "report.csv")
    table = format_table(rows)
    (out / "report.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def _eval_item(job):
    policy, grid, depth = job
    return evaluate(LearnerPolicy(policy, max_depth=depth), [grid], depth).accuracies[0]


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: checkpoint not found")
    policy, _, header = load_checkpoint(path)
    extra = header.get("extra", {})
    depth = args.depth if args.depth is not None else int(extra.get("max_depth", 7))
    ds = synthdata.load(args.data)
    accs = _map(_eval_item, [(policy, g, depth) for g in ds.grids], args.jobs)
    mean = float(np.mean(accs))
    if args.report:
        rows = [{"algorithm": extra.get("algorithm", "policy"), "fold": extra.get("fold", 0),
                 "train_acc": None, "test_acc": mean}]
        write_report_csv(rows, args.report)
    print(f"mean pixel accuracy {mean:.6f} over {len(accs)} items (D={depth})")
    return EXIT_OK


def cmd_render(args) -> int:
    tree = ParseTree.load(args.tree)
    image = Path(args.image)
    mask = image.with_name(image.name[:-len(".png")] + ".mask.png")
    if mask.exists():
        grid = load_pair(image, mask)
    else:
        from PIL import Image

        with Image.open(image) as im:
            gray = np.asarray(im.convert("L")).astype(np.float64) / 255.0
        grid = LabelGrid(np.full(gray.shape, NOPAINT, dtype=np.int8), gray)
    if (tree.width, tree.height) != (grid.width, grid.height):
        raise UsageError(f"tree is {tree.width}x{tree.height} but image is {grid.width}x{grid.height}")
    n = render(tree, grid, args.out, scale=args.scale)
    print(f"wrote {args.out} ({n} leaves)")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "oracle": cmd_oracle, "train": cmd_train,
            "eval": cmd_eval, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"shapeparse {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"shapeparse {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"shapeparse {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
