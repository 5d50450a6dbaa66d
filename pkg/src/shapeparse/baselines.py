"""The comparison learners: pure RL (MCPG, DPG), pure imitation (BC, DAgger)
and hybrid policy-gradient variants (AggreVaTeD, AC-AggreVaTeD, Off-MCPG,
Off-ACPG).  All share the trunk, optimizer and epoch loop of DRAG.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .approximator import Adam, CriticNet, NumericError, PolicyNet
from .drag import (SPLIT_RULES, DragTrainer, Trainer, actor_update_mixed, critic_inputs,
                   critic_update)
from .env import (LearnerPolicy, RolloutConfig, Transition, make_action, mixture_chooser,
                  node_returns, rollout_mixture, run_parse, sample_switch_index, stack_batch)
from .grammar import N_RULES, Action, legal_rules
from .raster import Region, featurize

log = logging.getLogger(__name__)


# update rules -------------------------------------------------------------


def supervised_loss_grad(policy: PolicyNet, batch: dict, split_weight: float = 1.0) -> float:
    """Cross-entropy on expert rules plus split_weight * (mu - l*)^2 on expert splits.

    Gradients accumulate into ``policy.grad``; returns the batch-mean loss.
    """
    rules = batch["rules"]
    n = len(rules)
    policy.zero_grad()
    probs, mu, cache = policy.forward(batch["features"], batch["legal"])
    onehot = np.eye(N_RULES)[rules]
    is_split = SPLIT_RULES[rules]
    target = np.where(is_split, batch["split"], mu)
    ce = -np.log(np.maximum(probs[np.arange(n), rules], 1e-300))
    loss = float(np.mean(ce + split_weight * (mu - target) ** 2))
    policy.backward(cache, (probs - onehot) / n, dsplit=2.0 * split_weight * (mu - target) / n)
    return loss


def supervised_update(policy: PolicyNet, batch, opt: Adam, split_weight: float = 1.0) -> float:
    b = batch if isinstance(batch, dict) else stack_batch(batch)
    loss = supervised_loss_grad(policy, b, split_weight)
    opt.step(policy.params, policy.grad)
    return loss


def pg_gradient(policy: PolicyNet, batch: dict, returns: np.ndarray, scale: float,
                rule_weights: np.ndarray | None = None,
                split_returns: np.ndarray | None = None) -> np.ndarray:
    """Ascent direction of mean[ w * log pi(r_t) * G_t + log p(z_t) * G'_t ].

    ``p`` is the logit-normal split density (a normal over the split logit with
    the head pre-activation as mean and ``scale`` as deviation); only rows whose
    rule is a split and whose ``z`` is finite contribute a split term.  ``G'``
    defaults to ``G``.
    """
    rules = batch["rules"]
    n = len(rules)
    w = np.ones(n) if rule_weights is None else rule_weights
    gs = returns if split_returns is None else split_returns
    policy.zero_grad()
    probs, mu, cache = policy.forward(batch["features"], batch["legal"])
    z_mean = cache[3]
    onehot = np.eye(N_RULES)[rules]
    dlogits = -(onehot - probs) * (w * returns)[:, None] / n
    z = batch["z"]
    has_split = SPLIT_RULES[rules] & np.isfinite(z)
    dz = -np.where(has_split, (np.nan_to_num(z) - z_mean) / scale ** 2 * gs, 0.0) / n
    policy.backward(cache, dlogits, dz=dz)
    grad = -policy.grad.copy()
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite policy gradient")
    return grad


def pg_surrogate(policy: PolicyNet, batch: dict, returns, scale: float, rule_weights=None,
                 split_returns=None) -> float:
    """Objective whose gradient ``pg_gradient`` returns (returns/weights held fixed)."""
    rules = batch["rules"]
    n = len(rules)
    w = np.ones(n) if rule_weights is None else rule_weights
    gs = returns if split_returns is None else split_returns
    probs, mu, cache = policy.forward(batch["features"], batch["legal"])
    z_mean = cache[3]
    logp = np.log(probs[np.arange(n), rules])
    z = batch["z"]
    has_split = SPLIT_RULES[rules] & np.isfinite(z)
    logq = np.where(has_split, -0.5 * ((np.nan_to_num(z) - z_mean) / scale) ** 2, 0.0)
    return float(np.mean(w * logp * returns + logq * gs))


def stochastic_pg_update(policy: PolicyNet, batch, returns, opt: Adam, scale: float,
                         rule_weights=None, split_returns=None) -> float:
    b = batch if isinstance(batch, dict) else stack_batch(batch)
    grad = pg_gradient(policy, b, np.asarray(returns, dtype=np.float64), scale, rule_weights,
                       split_returns)
    opt.step(policy.params, -grad)
    return float(np.linalg.norm(grad))


def deterministic_pg_update(policy: PolicyNet, critic: CriticNet, batch, opt: Adam,
                            rules_too: bool = True) -> float:
    """Actor step along dQ/dl * grad mu (plus the critic-weighted rule term)."""
    return actor_update_mixed(policy, critic, batch, opt, stochastic=rules_too)


def importance_weights(target_probs: np.ndarray, expert_rules: np.ndarray, rules: np.ndarray,
                       beta: float) -> np.ndarray:
    """pi(r_t) / b(r_t) for the behaviour b = beta * expert + (1 - beta) * pi."""
    n = len(rules)
    pi = target_probs[np.arange(n), rules]
    behaviour = beta * (expert_rules == rules) + (1.0 - beta) * pi
    return np.divide(pi, behaviour, out=np.zeros(n), where=behaviour > 0)


def logit(l: float) -> float:
    return float(np.log(l) - np.log1p(-l))


# demonstration store ------------------------------------------------------


@dataclass
class Demo:
    item: int
    region: Region
    depth: int
    action: Action


class DemoSet:
    """Expert-labelled states; features are computed lazily per minibatch."""

    def __init__(self, grids, side: int, max_depth: int):
        self.grids = grids
        self.side = side
        self.max_depth = max_depth
        self.items: list[Demo] = []
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.items)

    def add(self, demo: Demo) -> None:
        self.items.append(demo)

    def batch(self, size: int, rng) -> dict:
        idx = (np.arange(len(self.items)) if size >= len(self.items)
               else rng.choice(len(self.items), size=size, replace=False))
        feats, legal, rules, split = [], [], [], []
        for i in idx:
            d = self.items[i]
            f = self._cache.get(i)
            if f is None:
                f = featurize(self.grids[d.item], d.region, self.side)
                if len(self._cache) < 20000:
                    self._cache[i] = f
            feats.append(f)
            legal.append(legal_rules(d.region, d.depth, self.max_depth))
            rules.append(int(d.action.kind))
            split.append(d.action.l if d.action.l is not None else np.nan)
        return {"features": np.stack(feats), "legal": np.stack(legal),
                "rules": np.array(rules, dtype=np.int64), "split": np.array(split)}


# trainers -----------------------------------------------------------------


class BCTrainer(Trainer):
    """Behaviour cloning on a fixed set of expert parses (no reward access)."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.demos = DemoSet(self.grids, self.config.architecture.side, self.config.max_depth)

    def collect(self, epoch, beta):
        if epoch > 0:
            return
        for i, grid in enumerate(self.grids):
            def choose(tree, node, step):
                return self.oracle(grid, node.region, node.depth), None

            tree, steps = run_parse(grid, self.config.max_depth, choose)
            for nid, action, _ in steps:
                n = tree.nodes[nid]
                self.demos.add(Demo(i, n.region, n.depth, action))

    def update(self, epoch):
        norms = []
        for _ in range(self.config.steps_per_epoch):
            supervised_update(self.policy, self.demos.batch(self.config.batch_size, self.rng),
                              self.policy_opt, self.config.split_weight)
            norms.append(float(np.linalg.norm(self.policy.grad)))
        return float("nan"), float(np.mean(norms))


class DAggerTrainer(BCTrainer):
    """Mixture parses; every visited state is labelled by the expert and aggregated."""

    def collect(self, epoch, beta):
        for i, grid in enumerate(self.grids):
            choose = mixture_chooser(grid, self.learner, self.oracle, beta, self.rng)
            tree, steps = run_parse(grid, self.config.max_depth, choose)
            for nid, action, info in steps:
                n = tree.nodes[nid]
                label = action if info["by"] == "expert" else self.oracle(grid, n.region, n.depth)
                self.demos.add(Demo(i, n.region, n.depth, label))


class _EpisodeTrainer(Trainer):
    """Collects whole-parse transitions (every node) with Monte-Carlo returns."""

    split_mode = "logit_normal"

    def episode(self, grid, beta: float):
        """Returns transitions plus per-row expert rule (or -1) for one parse."""
        expert_rules = []

        def choose(tree, node, step):
            expert = None
            if beta > 0.0:
                expert = self.oracle(grid, node.region, node.depth)
            if expert is not None and self.rng.random() < beta:
                action = expert
                info = {"features": self.learner.features(grid, node.region),
                        "legal": legal_rules(node.region, node.depth, self.config.max_depth),
                        "rule": int(action.kind),
                        "split": action.l if action.l is not None else 0.5,
                        "z": logit(action.l) if action.l is not None else float("nan")}
            else:
                action, info = self.learner.act(grid, node.region, node.depth, self.rng)
                if self.split_mode == "gaussian":
                    info["z"] = float("nan")
            expert_rules.append(-1 if expert is None else int(expert.kind))
            return action, info

        tree, steps = run_parse(grid, self.config.max_depth, choose)
        returns = node_returns(tree, grid)
        self.reward_reads += len(steps)
        out = []
        for step, (nid, action, info) in enumerate(steps, 1):
            out.append(Transition(info["features"], info["legal"], info["rule"], info["split"],
                                  step, returns[nid], info["z"]))
        return out, expert_rules


class MCPGTrainer(_EpisodeTrainer):
    """On-policy REINFORCE with learner Monte-Carlo returns; never queries the expert."""

    def collect(self, epoch, beta):
        self.fresh = []
        for grid in self.grids:
            trs, _ = self.episode(grid, 0.0)
            self.fresh += trs

    def update(self, epoch):
        norms = []
        for _ in range(self.config.steps_per_epoch):
            n = len(self.fresh)
            size = min(self.config.batch_size, n)
            idx = self.rng.choice(n, size=size, replace=False)
            batch = stack_batch([self.fresh[i] for i in idx])
            norms.append(stochastic_pg_update(self.policy, batch, batch["G"], self.policy_opt,
                                              self.config.logit_normal_scale))
        return float("nan"), float(np.mean(norms))


class DPGTrainer(_EpisodeTrainer):
    """Gaussian exploration around mu; critic regressed to the learner's own returns."""

    split_mode = "gaussian"
    uses_critic = True

    def collect(self, epoch, beta):
        for grid in self.grids:
            trs, _ = self.episode(grid, 0.0)
            for tr in trs:
                self.memory.record(tr)

    def update(self, epoch):
        losses, norms = [], []
        for _ in range(self.config.steps_per_epoch):
            batch = stack_batch(self.memory.sample(self.config.batch_size, self.rng))
            norms.append(deterministic_pg_update(self.policy, self.critic, batch, self.policy_opt))
            losses.append(critic_update(self.critic, batch, self.critic_opt))
        return float(np.mean(losses)), float(np.mean(norms))


class AggreVaTeDTrainer(DragTrainer):
    """Stochastic AggreVaTeD: same rollouts as DRAG but a logit-normal split head
    trained by the likelihood-ratio gradient on the expert's Monte-Carlo cost-to-go."""

    split_mode = "logit_normal"
    uses_critic = False

    def collect(self, epoch, beta):
        self.fresh = []
        rc = RolloutConfig(beta, self.config.max_depth, self.config.seed)
        for grid in self.grids:
            t = sample_switch_index(rc, self.rng)
            _, tr = rollout_mixture(grid, self.learner, self.oracle, rc, t, self.rng)
            self.reward_reads += 1
            self.fresh.append(tr)
            self.memory.record(tr)

    def returns(self, batch: dict) -> np.ndarray:
        return batch["G"]

    def update(self, epoch):
        losses, norms = [], []
        for _ in range(self.config.steps_per_epoch):
            if self.uses_critic:
                mem = stack_batch(self.memory.sample(self.config.batch_size, self.rng))
                losses.append(critic_update(self.critic, mem, self.critic_opt))
            size = min(self.config.batch_size, len(self.fresh))
            idx = self.rng.choice(len(self.fresh), size=size, replace=False)
            batch = stack_batch([self.fresh[i] for i in idx])
            norms.append(stochastic_pg_update(self.policy, batch, self.returns(batch),
                                              self.policy_opt, self.config.logit_normal_scale))
        return (float(np.mean(losses)) if losses else float("nan")), float(np.mean(norms))


class ACAggreVaTeDTrainer(AggreVaTeDTrainer):
    """AggreVaTeD with the critic's estimate of the expert cost-to-go as the return."""

    uses_critic = True

    def returns(self, batch):
        q, _ = self.critic.forward(batch["features"], batch["rules"],
                                   critic_inputs(batch["rules"], batch["split"]))
        return q


class OffMCPGTrainer(_EpisodeTrainer):
    """Expert-mixture behaviour policy; rule head importance-weighted, split head
    fitted to behaviour splits weighted by the sign of the return."""

    def collect(self, epoch, beta):
        self.fresh, self.expert_rules, self.beta_now = [], [], beta
        for grid in self.grids:
            trs, er = self.episode(grid, beta)
            self.fresh += trs
            self.expert_rules += er
            for tr in trs:
                self.memory.record(tr)

    def returns(self, batch):
        return batch["G"]

    def update(self, epoch):
        losses, norms = [], []
        expert_rules = np.array(self.expert_rules)
        for _ in range(self.config.steps_per_epoch):
            if self.uses_critic:
                mem = stack_batch(self.memory.sample(self.config.batch_size, self.rng))
                losses.append(critic_update(self.critic, mem, self.critic_opt))
            size = min(self.config.batch_size, len(self.fresh))
            idx = self.rng.choice(len(self.fresh), size=size, replace=False)
            batch = stack_batch([self.fresh[i] for i in idx])
            probs, _, _ = self.policy.forward(batch["features"], batch["legal"])
            w = importance_weights(probs, expert_rules[idx], batch["rules"], self.beta_now)
            g = self.returns(batch)
            skip = w == 0
            if np.any(skip):
                log.warning("skipping %d transitions with zero behaviour probability",
                            int(np.sum(skip)))
            norms.append(stochastic_pg_update(self.policy, batch, np.where(skip, 0.0, g),
                                              self.policy_opt, self.config.logit_normal_scale,
                                              rule_weights=w,
                                              split_returns=np.where(skip, 0.0, np.sign(g))))
        return (float(np.mean(losses)) if losses else float("nan")), float(np.mean(norms))


class OffACPGTrainer(OffMCPGTrainer):
    uses_critic = True

    def returns(self, batch):
        q, _ = self.critic.forward(batch["features"], batch["rules"],
                                   critic_inputs(batch["rules"], batch["split"]))
        return q


TRAINERS: dict[str, type[Trainer]] = {
    "DRAG": DragTrainer,
    "BC": BCTrainer,
    "DAgger": DAggerTrainer,
    "MCPG": MCPGTrainer,
    "DPG": DPGTrainer,
    "AggreVaTeD": AggreVaTeDTrainer,
    "AC-AggreVaTeD": ACAggreVaTeDTrainer,
    "Off-MCPG": OffMCPGTrainer,
    "Off-ACPG": OffACPGTrainer,
}
