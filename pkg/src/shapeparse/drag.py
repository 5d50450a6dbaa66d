"""DRAG training: critic regression onto expert cost-to-go and the mixed
stochastic/deterministic actor update, plus the shared trainer loop used by
every learner in :mod:`shapeparse.baselines`.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import get_type_hints

import numpy as np

from .approximator import Adam, Architecture, CriticNet, NumericError, OptimizerConfig, PolicyNet
from .env import (LearnerPolicy, ReplayMemory, RolloutConfig, alternative_transitions,
                  learner_transition, sample_switch_index, stack_batch, switch_state)
from .evalreport import evaluate
from .grammar import N_RULES, RuleKind
from .oracle import Oracle

log = logging.getLogger(__name__)

SPLIT_RULES = np.array([RuleKind(r).is_split for r in range(N_RULES)])
# critic input used for assignment rules, which carry no split fraction
ASSIGN_SPLIT_PLACEHOLDER = 0.5

ALGORITHMS = ("DRAG", "BC", "DAgger", "MCPG", "DPG", "AggreVaTeD", "AC-AggreVaTeD",
              "Off-MCPG", "Off-ACPG")


@dataclass
class TrainConfig:
    algorithm: str = "DRAG"
    epochs: int = 200
    batch_size: int = 64
    steps_per_epoch: int = 1
    lr: float = 1e-4
    critic_lr: float = 1e-4
    clip: float = 10.0
    beta_start: float = 1.0
    beta_end: float = 0.5
    anneal_epochs: int = 100
    max_depth: int = 7
    seed: int = 0
    # architecture
    side: int = 32
    conv: tuple[int, ...] = (8, 16)
    kernel: int = 2
    dense: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64,)
    init: str = "uniform"
    split_map: bool = False
    split_map_width: float = 1.0
    # algorithm knobs
    critic_first: bool = False
    # critic steps per actor step (each on its own minibatch)
    critic_steps: int = 1
    batch_baseline: bool = False
    memory_capacity: int = 0  # 0 = unbounded
    logit_normal_scale: float = 0.5
    dpg_sigma: float = 0.1
    dpg_eps: float = 0.01
    split_weight: float = 1.0
    # DRAG: Gaussian noise on learner splits during training rollouts (0 = l is mu)
    explore_sigma: float = 0.0
    # DRAG: "horizon" draws t from {1..H} and clamps; "episode" draws t from the
    # steps the mixture parse actually took
    switch_mode: str = "horizon"
    # DRAG: "sampled" weights grad log pi(r_t) by Q at the stored rule;
    # "expected" sums grad pi(r) * Q(s, r, mu) over all legal rules
    rule_term: str = "sampled"
    # DRAG: also score every other legal rule at the switch state, so the critic
    # sees all rules even after the policy stops sampling some of them
    score_all_rules: bool = False
    # greedy train-set evaluation every n epochs (0 = only after the last epoch)
    log_every: int = 1

    def __post_init__(self):
        self.conv = tuple(self.conv)
        self.dense = tuple(self.dense)
        self.critic_hidden = tuple(self.critic_hidden)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.critic_steps < 1:
            raise ValueError("critic steps must be >= 1")
        if self.beta_start < self.beta_end:
            raise ValueError("beta schedule must not increase")
        if self.switch_mode not in ("horizon", "episode"):
            raise ValueError(f"unknown switch mode {self.switch_mode!r}")
        if self.rule_term not in ("sampled", "expected"):
            raise ValueError(f"unknown rule term {self.rule_term!r}")

    @property
    def architecture(self) -> Architecture:
        return Architecture(side=self.side, conv=self.conv, kernel=self.kernel, dense=self.dense,
                            critic_hidden=self.critic_hidden, init=self.init,
                            split_map=self.split_map, split_map_width=self.split_map_width)

    @property
    def policy_opt(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.lr, clip=self.clip)

    @property
    def critic_opt(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.critic_lr, clip=self.clip)

    # plain-text key = value files ------------------------------------------

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        hints = get_type_hints(cls)
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in hints:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(hints[key], value)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(tp, value: str):
    if tp is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp in (int, float, str):
        return tp(value)
    # tuple[int, ...]
    return tuple(int(v) for v in value.split(",") if v.strip())


def beta_schedule(epoch: int, start: float = 1.0, end: float = 0.5, anneal_epochs: int = 100) -> float:
    """Linear anneal from ``start`` to ``end`` over ``anneal_epochs``, then constant."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if anneal_epochs <= 0 or epoch >= anneal_epochs:
        return float(end)
    return float(start + (end - start) * epoch / anneal_epochs)


# updates ------------------------------------------------------------------


def critic_inputs(rules: np.ndarray, split: np.ndarray) -> np.ndarray:
    return np.where(SPLIT_RULES[rules], split, ASSIGN_SPLIT_PLACEHOLDER)


def critic_update(critic: CriticNet, batch, opt: Adam) -> float:
    """One clipped-Adam step on mean (Q(s, r, l) - G)^2; returns the pre-step loss."""
    b = batch if isinstance(batch, dict) else stack_batch(batch)
    if len(b["rules"]) == 0:
        raise ValueError("empty batch")
    critic.zero_grad()
    q, cache = critic.forward(b["features"], b["rules"], critic_inputs(b["rules"], b["split"]))
    err = q - b["G"]
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise NumericError("non-finite critic loss")
    critic.backward(cache, 2.0 * err / len(err), need_input=False)
    opt.step(critic.params, critic.grad)
    return loss


def rule_values(critic: CriticNet, features, mu) -> np.ndarray:
    """Q(s, r, mu(s)) for every rule, shape (n, N_RULES)."""
    n = len(mu)
    cols = []
    for r in range(N_RULES):
        rules = np.full(n, r)
        cols.append(critic.forward(features, rules, critic_inputs(rules, mu))[0])
    return np.stack(cols, axis=1)


def mixed_policy_gradient(policy: PolicyNet, critic: CriticNet, batch,
                          baseline: bool = False, stochastic: bool = True,
                          deterministic: bool = True, expected: bool = False) -> np.ndarray:
    """Ascent direction of the batch-mean mixed objective (stored in ``policy.grad``).

    grad = mean[ grad log pi(r_t|s_t) * Q(s_t, r_t, mu(s_t))
                 + dQ/dl(s_t, r_t, l = mu(s_t)) * grad mu(s_t) ]
    With ``expected`` the first term is replaced by its expectation over the
    rule, sum_r grad pi(r|s_t) * Q(s_t, r, mu(s_t)).
    The critic is held fixed: no gradient flows into its parameters.
    """
    b = batch if isinstance(batch, dict) else stack_batch(batch)
    rules = b["rules"]
    n = len(rules)
    if n == 0:
        raise ValueError("empty batch")
    policy.zero_grad()
    probs, mu, cache = policy.forward(b["features"], b["legal"])
    q, dq_dl = critic.split_gradient(b["features"], rules, critic_inputs(rules, mu))
    is_split = SPLIT_RULES[rules]
    onehot = np.eye(N_RULES)[rules]
    weight = q - q.mean() if baseline else q
    # minimise the negated objective
    if not stochastic:
        dlogits = np.zeros_like(probs)
    elif expected:
        qa = rule_values(critic, b["features"], mu)
        v = np.sum(probs * qa, axis=1, keepdims=True)
        dlogits = -probs * (qa - v) / n
    else:
        dlogits = -(onehot - probs) * weight[:, None] / n
    dsplit = -np.where(is_split, dq_dl, 0.0) / n if deterministic else np.zeros(n)
    policy.backward(cache, dlogits, dsplit=dsplit)
    grad = -policy.grad.copy()
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite policy gradient")
    return grad


def actor_update_mixed(policy: PolicyNet, critic: CriticNet, batch, opt: Adam,
                       baseline: bool = False, **kw) -> float:
    """One ascent step along the mixed gradient; returns its norm."""
    grad = mixed_policy_gradient(policy, critic, batch, baseline, **kw)
    opt.step(policy.params, -grad)
    return float(np.linalg.norm(grad))


def mixed_surrogate(policy: PolicyNet, critic: CriticNet, batch, q_fixed: np.ndarray) -> float:
    """mean[ log pi(r_t|s_t) * q_fixed + Q(s_t, r_t, mu(s_t)) ] whose gradient is the mixed update.

    For the ``expected`` rule term pass ``q_fixed`` of shape (n, N_RULES); the
    first term becomes sum_r pi(r|s_t) * q_fixed[:, r].
    """
    b = batch if isinstance(batch, dict) else stack_batch(batch)
    probs, mu, _ = policy.forward(b["features"], b["legal"])
    rules = b["rules"]
    q, _ = critic.forward(b["features"], rules, critic_inputs(rules, mu))
    q_fixed = np.asarray(q_fixed)
    if q_fixed.ndim == 2:
        first = np.sum(probs * q_fixed, axis=1)
    else:
        first = np.log(probs[np.arange(len(rules)), rules]) * q_fixed
    return float(np.mean(first + q))


# trainer loop -------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    beta: float
    train_accuracy: float
    critic_loss: float
    actor_grad_norm: float


LOG_FIELDS = [f.name for f in dataclasses.fields(EpochLog)]


def write_log_csv(rows: list[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r.epoch, f"{r.beta:.6f}", _num(r.train_accuracy), _num(r.critic_loss),
                        _num(r.actor_grad_norm)])


def _num(v: float) -> str:
    return "" if v is None or np.isnan(v) else f"{v:.8g}"


class Trainer:
    """Shared epoch loop; subclasses implement ``collect`` and ``update``.

    ``oracle.calls`` counts expert queries and ``reward_reads`` counts reward or
    return evaluations, so the information each learner consumes can be audited.
    """

    split_mode = "deterministic"
    uses_critic = False

    def __init__(self, dataset, config: TrainConfig, oracle: Oracle | None = None):
        self.config = config
        self.grids = [item[0] if isinstance(item, tuple) else item for item in dataset]
        if not self.grids:
            raise ValueError("training needs a non-empty dataset")
        self.oracle = oracle or Oracle(config.max_depth)
        self.oracle.max_depth = config.max_depth
        self.rng = np.random.default_rng(config.seed)
        arch = config.architecture
        self.policy = PolicyNet(arch, config.seed)
        self.critic = CriticNet(arch, config.seed)
        self.policy_opt = Adam(self.policy.size, config.policy_opt)
        self.critic_opt = Adam(self.critic.size, config.critic_opt)
        self.learner = self.make_learner()
        self.memory = ReplayMemory(config.memory_capacity or None)
        self.reward_reads = 0
        self.log: list[EpochLog] = []
        self.epoch = 0

    def make_learner(self) -> LearnerPolicy:
        c = self.config
        return LearnerPolicy(self.policy, self.split_mode, c.logit_normal_scale, c.dpg_sigma,
                             c.dpg_eps, c.max_depth)

    def beta(self, epoch: int) -> float:
        c = self.config
        return beta_schedule(epoch, c.beta_start, c.beta_end, c.anneal_epochs)

    def collect(self, epoch: int, beta: float) -> None:
        raise NotImplementedError

    def update(self, epoch: int) -> tuple[float, float]:
        """Returns (critic loss, actor gradient norm), NaN when not applicable."""
        raise NotImplementedError

    def greedy_accuracy(self, grids=None) -> float:
        return evaluate(self.learner, grids or self.grids, self.config.max_depth).mean

    def run_epoch(self) -> EpochLog:
        epoch = self.epoch
        beta = self.beta(epoch)
        self.collect(epoch, beta)
        critic_loss, grad_norm = self.update(epoch)
        self.epoch += 1
        every = self.config.log_every
        last = self.epoch == self.config.epochs
        acc = float("nan")
        if last or (every and self.epoch % every == 0):
            acc = self.greedy_accuracy()
        row = EpochLog(epoch, beta, acc, critic_loss, grad_norm)
        self.log.append(row)
        log.debug("%s epoch %d beta %.3f acc %.4f", self.config.algorithm, epoch, beta, acc)
        return row

    def train(self) -> "Trainer":
        while self.epoch < self.config.epochs:
            self.run_epoch()
        return self


class DragTrainer(Trainer):
    """Mixture rollouts with one learner step per image, critic on the expert's
    cost-to-go, mixed actor update from replay minibatches (actor first)."""

    uses_critic = True

    def make_learner(self) -> LearnerPolicy:
        c = self.config
        if c.explore_sigma > 0.0:
            return LearnerPolicy(self.policy, "gaussian", sigma=c.explore_sigma,
                                 eps_clamp=c.dpg_eps, max_depth=c.max_depth)
        return super().make_learner()

    def collect(self, epoch, beta):
        rc = RolloutConfig(beta, self.config.max_depth, self.config.seed)
        for grid in self.grids:
            t = None if self.config.switch_mode == "episode" else sample_switch_index(rc, self.rng)
            _, prefix, node, step = switch_state(grid, self.learner, self.oracle, rc, self.rng, t)
            transition = learner_transition(grid, self.learner, self.oracle, prefix, node, step,
                                            self.rng)
            self.reward_reads += 1
            self.memory.record(transition)
            if self.config.score_all_rules:
                for extra in alternative_transitions(grid, self.oracle, prefix, node, transition):
                    self.reward_reads += 1
                    self.memory.record(extra)

    def actor_step(self, batch) -> float:
        return actor_update_mixed(self.policy, self.critic, batch, self.policy_opt,
                                  self.config.batch_baseline,
                                  expected=self.config.rule_term == "expected")

    def update(self, epoch):
        losses, norms = [], []
        c = self.config
        for _ in range(c.steps_per_epoch):
            batch = stack_batch(self.memory.sample(c.batch_size, self.rng))
            if not c.critic_first:
                norms.append(self.actor_step(batch))
            for k in range(c.critic_steps):
                cb = batch if k == 0 else stack_batch(self.memory.sample(c.batch_size, self.rng))
                losses.append(critic_update(self.critic, cb, self.critic_opt))
            if c.critic_first:
                norms.append(self.actor_step(batch))
        return float(np.mean(losses)), float(np.mean(norms))


def train(dataset, oracle: Oracle | None, config: TrainConfig) -> Trainer:
    """Run ``config.algorithm`` for ``config.epochs`` epochs; returns the trainer
    (``.policy``, ``.critic`` and ``.log`` hold the results)."""
    from .baselines import TRAINERS

    return TRAINERS[config.algorithm](dataset, config, oracle).train()
