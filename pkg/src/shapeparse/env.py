"""The parsing MDP: learner policies, mixture rollouts and the replay memory."""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .approximator import PolicyNet
from .grammar import (N_RULES, Action, ParseTree, RuleKind, apply_action, legal_rules,
                      split_offset, subtree_return)
from .oracle import Oracle, expert_rollout_return
from .raster import LabelGrid, Region, featurize, split_region

# split fractions handed to the grammar stay this far inside (0, 1)
SPLIT_EPS = 1e-6


def horizon(max_depth: int) -> int:
    return 2 ** (max_depth + 1) - 1


@dataclass
class RolloutConfig:
    beta: float = 1.0
    max_depth: int = 7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def horizon(self) -> int:
        return horizon(self.max_depth)


@dataclass
class Transition:
    features: np.ndarray
    legal: np.ndarray
    rule: int
    split: float
    t: int
    G: float
    # split pre-activation sample for stochastic split heads (NaN when deterministic)
    z: float = float("nan")

    def __post_init__(self):
        if not -1.0 <= self.G <= 1.0:
            raise ValueError(f"normalized return {self.G} outside [-1, 1]")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# learner ------------------------------------------------------------------


@dataclass
class LearnerPolicy:
    """Turns a PolicyNet into per-node actions.

    ``split_mode`` selects how the executed split fraction is drawn:
    ``deterministic`` (l = mu), ``logit_normal`` (l = logistic(z + scale*eps))
    or ``gaussian`` (l = clamp(mu + sigma*eps, eps_clamp, 1 - eps_clamp)).
    """

    net: PolicyNet
    split_mode: str = "deterministic"
    scale: float = 0.5
    sigma: float = 0.1
    eps_clamp: float = 0.01
    max_depth: int = 7

    @property
    def side(self) -> int:
        return self.net.arch.side

    def features(self, grid: LabelGrid, region: Region) -> np.ndarray:
        return featurize(grid, region, self.side)

    def act(self, grid: LabelGrid, region: Region, depth: int, rng, greedy: bool = False):
        """Returns (Action, info) with info holding features, legal mask, probs, mu, z."""
        feats = self.features(grid, region)
        legal = legal_rules(region, depth, self.max_depth)
        probs, mu, cache = self.net.forward(feats[None], legal[None])
        probs, mu = probs[0], float(mu[0])
        z_mean = float(cache[3][0])
        if greedy:
            rule = int(np.argmax(probs))
        else:
            rule = int(rng.choice(N_RULES, p=probs))
        z = float("nan")
        split = mu
        if not greedy and RuleKind(rule).is_split:
            if self.split_mode == "logit_normal":
                z = z_mean + self.scale * rng.standard_normal()
                split = float(1.0 / (1.0 + np.exp(-z)))
            elif self.split_mode == "gaussian":
                split = float(np.clip(mu + self.sigma * rng.standard_normal(),
                                      self.eps_clamp, 1.0 - self.eps_clamp))
            elif self.split_mode != "deterministic":
                raise ValueError(f"unknown split mode {self.split_mode!r}")
        info = {"features": feats, "legal": legal, "probs": probs, "mu": mu, "z": z,
                "rule": rule, "split": split}
        return make_action(rule, split), info


def make_action(rule: int, split: float) -> Action:
    kind = RuleKind(rule)
    if kind.is_split:
        return Action(kind, float(np.clip(split, SPLIT_EPS, 1.0 - SPLIT_EPS)))
    return Action(kind)


# parsing ------------------------------------------------------------------


def run_parse(grid: LabelGrid, max_depth: int, choose, tree: ParseTree | None = None,
              steps: list | None = None):
    """Depth-first derivation where ``choose(tree, node, step)`` returns (Action, info).

    Returns the tree and a list of per-step records ``(node, action, info)``.
    """
    tree = tree or ParseTree.for_grid(grid, max_depth)
    steps = [] if steps is None else steps
    stack = [tree.root]
    while stack:
        node = tree.nodes[stack.pop()]
        if node.pending:
            action, info = choose(tree, node, len(steps) + 1)
            apply_action(tree, node.id, action)
            steps.append((node.id, action, info))
        stack.extend(reversed(node.children))
    return tree, steps


def sample_switch_index(config: RolloutConfig, rng) -> int:
    """Uniform draw from {1, ..., H}."""
    return int(_rng(rng).integers(1, config.horizon + 1))


def mixture_chooser(grid, learner: LearnerPolicy, oracle: Oracle, beta: float, rng):
    """Per-step mixture: the expert acts with probability beta, else the learner."""

    def choose(tree, node, step):
        if rng.random() < beta:
            return oracle(grid, node.region, node.depth), {"by": "expert"}
        action, info = learner.act(grid, node.region, node.depth, rng)
        info["by"] = "learner"
        return action, info

    return choose


def switch_state(grid: LabelGrid, learner: LearnerPolicy, oracle: Oracle, config: RolloutConfig,
                 rng, t: int | None = None):
    """Run one mixture episode and locate the step-``t`` state.

    With ``t`` given, steps before ``t`` follow the mixture and the rest the
    expert; an episode shorter than ``t`` clamps it to the final step.  With
    ``t=None`` the whole episode follows the mixture and ``t`` is drawn
    uniformly from the steps actually taken.
    Returns (tree, prefix, node, t) where ``prefix`` is the tree just before
    step ``t`` and ``node`` its pending node.
    """
    rng = _rng(rng)
    choose_mix = mixture_chooser(grid, learner, oracle, config.beta, rng)
    if t is None:
        tree, steps = run_parse(grid, config.max_depth, choose_mix)
        t = int(rng.integers(1, len(steps) + 1))
    else:
        def choose(tree, node, step):
            if step < t:
                return choose_mix(tree, node, step)
            return oracle(grid, node.region, node.depth), {"by": "expert"}

        tree, steps = run_parse(grid, config.max_depth, choose)
        t = min(t, len(steps))
    prefix = ParseTree.for_grid(grid, config.max_depth)
    for nid, action, _ in steps[:t - 1]:
        apply_action(prefix, nid, action)
    return tree, prefix, steps[t - 1][0], t


def rollout_mixture(grid: LabelGrid, learner: LearnerPolicy, oracle: Oracle,
                    config: RolloutConfig, t: int, rng) -> tuple[ParseTree, Transition]:
    """One mixture rollout with a single scored learner step.

    Steps before ``t`` follow the mixture; from step ``t`` on the returned
    tree follows the expert.  At step ``t`` the learner's action is scored on a
    scratch copy by the expert's cost-to-go (learner action, then expert), and
    that score normalized by the region area becomes ``G``.  When the episode
    ends before ``t``, ``t`` is clamped to the final step.
    """
    rng = _rng(rng)
    tree, prefix, node, step = switch_state(grid, learner, oracle, config, rng, t)
    return tree, learner_transition(grid, learner, oracle, prefix, node, step, rng)


def rollout_mixture_visited(grid: LabelGrid, learner: LearnerPolicy, oracle: Oracle,
                            config: RolloutConfig, rng) -> tuple[ParseTree, Transition]:
    """Variant of ``rollout_mixture`` with t uniform over the steps actually taken.

    The whole episode follows the mixture; t is then drawn from {1, ..., T}
    and the learner's action at the replayed step-t state is scored as usual.
    """
    rng = _rng(rng)
    tree, prefix, node, step = switch_state(grid, learner, oracle, config, rng)
    return tree, learner_transition(grid, learner, oracle, prefix, node, step, rng)


def alternative_transitions(grid, oracle: Oracle, prefix: ParseTree, node: int,
                            taken: Transition) -> list[Transition]:
    """Expert cost-to-go of every other legal rule at the state of ``taken``.

    Split rules reuse the taken split fraction.
    """
    region = prefix.nodes[node].region
    out = []
    for rule in np.flatnonzero(taken.legal):
        if rule == taken.rule:
            continue
        raw = expert_rollout_return(prefix, node, make_action(int(rule), taken.split), grid, oracle)
        out.append(Transition(taken.features, taken.legal, int(rule), taken.split, taken.t,
                              raw / region.area))
    return out


def learner_transition(grid, learner: LearnerPolicy, oracle: Oracle, prefix: ParseTree,
                       node: int, step: int, rng, action=None, info=None) -> Transition:
    """Score the learner's action at a pending node by the expert's cost-to-go."""
    region = prefix.nodes[node].region
    if action is None:
        action, info = learner.act(grid, region, prefix.nodes[node].depth, rng)
    raw = expert_rollout_return(prefix, node, action, grid, oracle)
    return Transition(info["features"], info["legal"], info["rule"], info["split"], step,
                      raw / region.area, info.get("z", float("nan")))


def node_returns(tree: ParseTree, grid: LabelGrid) -> dict[int, float]:
    """Area-normalized subtree return for every node of a complete tree."""
    raw: dict[int, int] = {}
    for n in reversed(tree.nodes):  # children always follow parents
        if n.terminal:
            raw[n.id] = subtree_return(tree, n.id, grid)
        else:
            raw[n.id] = sum(raw[c] for c in n.children)
    return {i: v / tree.nodes[i].region.area for i, v in raw.items()}


def greedy_parse(grid: LabelGrid, learner: LearnerPolicy, max_depth: int | None = None) -> ParseTree:
    """Most-likely rule and mean split at every node, batched level by level."""
    depth_cap = learner.max_depth if max_depth is None else max_depth
    decided: dict[tuple[Region, int], Action] = {}
    frontier = [(grid.full_region(), 0)]
    while frontier:
        feats = np.stack([learner.features(grid, r) for r, _ in frontier])
        legal = np.stack([legal_rules(r, d, depth_cap) for r, d in frontier])
        probs, mu, _ = learner.net.forward(feats, legal)
        nxt = []
        for (region, depth), p, m in zip(frontier, probs, mu):
            action = make_action(int(np.argmax(p)), float(m))
            decided[(region, depth)] = action
            if action.kind.is_split:
                axis = action.kind.axis
                a, b = split_region(region, axis, split_offset(action.l, region.extent(axis)))
                nxt += [(a, depth + 1), (b, depth + 1)]
        frontier = nxt
    tree, _ = run_parse(grid, depth_cap,
                        lambda tree, node, step: (decided[(node.region, node.depth)], None))
    return tree


# replay memory ------------------------------------------------------------


class EmptyMemoryError(LookupError):
    pass


class ReplayMemory:
    """Append-only transition store with optional FIFO eviction."""

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.items)

    def record(self, transition: Transition) -> "ReplayMemory":
        self.items.append(transition)
        return self

    def sample(self, batch_size: int, seed=None) -> list[Transition]:
        if not self.items:
            raise EmptyMemoryError("cannot sample from an empty memory")
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if batch_size >= len(self.items):
            return list(self.items)
        idx = _rng(seed).choice(len(self.items), size=batch_size, replace=False)
        return [self.items[i] for i in idx]

    # binary dump ----------------------------------------------------------

    MAGIC = b"SPMEMRY1"

    def dump(self, path: str | Path) -> None:
        items = list(self.items)
        header = {"count": len(items), "capacity": self.capacity,
                  "feature_shape": list(items[0].features.shape) if items else None}
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC + struct.pack("<I", len(blob)) + blob)
            if not items:
                return
            fh.write(np.stack([t.features for t in items]).astype("<f8").tobytes())
            fh.write(np.stack([t.legal for t in items]).astype(np.uint8).tobytes())
            fh.write(np.array([t.rule for t in items], dtype="<i4").tobytes())
            fh.write(np.array([t.t for t in items], dtype="<i4").tobytes())
            fh.write(np.array([[t.split, t.G, t.z] for t in items], dtype="<f8").tobytes())

    @classmethod
    def restore(cls, path: str | Path) -> "ReplayMemory":
        data = Path(path).read_bytes()
        if data[:8] != cls.MAGIC:
            raise ValueError(f"{path}: not a replay memory dump")
        (n,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + n])
        memory = cls(header["capacity"])
        count = header["count"]
        if not count:
            return memory
        off = 12 + n

        def take(dtype, shape):
            nonlocal off
            size = int(np.prod(shape)) * np.dtype(dtype).itemsize
            arr = np.frombuffer(data[off:off + size], dtype=dtype).reshape(shape)
            off += size
            return arr

        feats = take("<f8", [count, *header["feature_shape"]]).astype(np.float64)
        legal = take(np.uint8, (count, N_RULES)).astype(bool)
        rules = take("<i4", (count,))
        ts = take("<i4", (count,))
        reals = take("<f8", (count, 3))
        for i in range(count):
            memory.record(Transition(feats[i], legal[i], int(rules[i]), float(reals[i, 0]),
                                     int(ts[i]), float(reals[i, 1]), float(reals[i, 2])))
        return memory


def record(memory: ReplayMemory, transition: Transition) -> ReplayMemory:
    return memory.record(transition)


def sample_minibatch(memory: ReplayMemory, batch_size: int, seed=None) -> list[Transition]:
    return memory.sample(batch_size, seed)


def stack_batch(batch: list[Transition]) -> dict[str, np.ndarray]:
    return {
        "features": np.stack([t.features for t in batch]),
        "legal": np.stack([t.legal for t in batch]),
        "rules": np.array([t.rule for t in batch], dtype=np.int64),
        "split": np.array([t.split for t in batch]),
        "G": np.array([t.G for t in batch]),
        "z": np.array([t.z for t in batch]),
    }
