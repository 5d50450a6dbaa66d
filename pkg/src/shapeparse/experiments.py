"""Learner comparison: every algorithm trained under one shared setting."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .drag import TrainConfig
from .evalreport import evaluate, majority_accuracy
from .synthdata import GenConfig, generate

log = logging.getLogger(__name__)

COMPARISON_ALGORITHMS = ("DRAG", "DAgger", "BC", "Off-MCPG", "AggreVaTeD", "MCPG", "DPG")

# shared by every learner
BASE = dict(max_depth=5, epochs=200, batch_size=64, steps_per_epoch=8, lr=3e-4, critic_lr=1e-3,
            side=16, log_every=0)
# DRAG-only knobs (see README, "DRAG training settings")
DRAG_KNOBS = dict(rule_term="expected", score_all_rules=True, switch_mode="episode",
                  critic_first=True, critic_steps=4)


def comparison_config(algorithm: str, seed: int, **overrides) -> TrainConfig:
    kw = dict(BASE, algorithm=algorithm, seed=seed)
    if algorithm == "DRAG":
        kw.update(DRAG_KNOBS)
    kw.update(overrides)
    return TrainConfig(**kw)


@dataclass
class ComparisonResult:
    # algorithm -> per-seed train accuracy
    train: dict[str, list[float]] = field(default_factory=dict)
    majority: float = float("nan")
    seconds: float = 0.0

    def mean(self, algorithm: str) -> float:
        return float(np.mean(self.train[algorithm]))

    def format(self) -> str:
        lines = [f"{'Model':<12}{'Train %':>9}  per-seed"]
        lines.append(f"{'Majority':<12}{100 * self.majority:9.2f}")
        for alg, accs in self.train.items():
            seeds = " ".join(f"{100 * a:.2f}" for a in accs)
            lines.append(f"{alg:<12}{100 * self.mean(alg):9.2f}  {seeds}")
        return "\n".join(lines) + "\n"


def run_comparison(n_items: int = 40, side: int = 64, seeds=(0, 1, 2),
                   algorithms=COMPARISON_ALGORITHMS, data_seed: int = 0,
                   **overrides) -> ComparisonResult:
    """Train each algorithm on one generated training set and score it greedily there."""
    from .baselines import TRAINERS

    depth = overrides.get("max_depth", BASE["max_depth"])
    ds = generate(GenConfig(n=n_items, side=side, max_depth=depth, seed=data_seed))
    result = ComparisonResult(majority=float(np.mean([majority_accuracy(g) for g in ds.grids])))
    t0 = time.time()
    for alg in algorithms:
        accs = []
        for seed in seeds:
            config = comparison_config(alg, seed, **overrides)
            trainer = TRAINERS[alg](ds, config).train()
            accs.append(evaluate(trainer.learner, ds.grids, config.max_depth).mean)
            log.info("%s seed %d train %.4f (%.0fs)", alg, seed, accs[-1], time.time() - t0)
        result.train[alg] = accs
    result.seconds = time.time() - t0
    return result

