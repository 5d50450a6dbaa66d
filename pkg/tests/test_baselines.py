import numpy as np
import pytest

from conftest import random_grid
from shapeparse.approximator import Architecture, PolicyNet, finite_difference, relative_error
from shapeparse.baselines import (TRAINERS, importance_weights, logit, pg_gradient, pg_surrogate,
                                  supervised_loss_grad)
from shapeparse.drag import ALGORITHMS, TrainConfig
from shapeparse.grammar import N_RULES

ARCH = Architecture(side=8, conv=(4,), kernel=2, dense=(8,), critic_hidden=(8,))
TINY = dict(side=8, conv=(4,), dense=(8,), critic_hidden=(8,), max_depth=3, batch_size=8,
            log_every=0, epochs=2)


def batch(n=6, seed=0):
    rng = np.random.default_rng(seed)
    legal = np.ones((n, N_RULES), bool)
    legal[::3, :2] = False
    rules = np.array([rng.choice(np.flatnonzero(l)) for l in legal])
    split = rng.uniform(0.1, 0.9, n)
    z = np.where(rules < 2, np.log(split / (1 - split)) + rng.normal(size=n), np.nan)
    return {"features": rng.random((n, 8, 8, 2)), "legal": legal, "rules": rules,
            "split": np.where(rules < 2, split, np.nan), "G": rng.uniform(-1, 1, n), "z": z}


def test_supervised_gradient_matches_loss():
    b = batch()
    net = PolicyNet(ARCH, 1)
    supervised_loss_grad(net, b, split_weight=0.7)
    analytic = net.grad.copy()

    def loss():
        return supervised_loss_grad(net, b, 0.7)

    assert relative_error(analytic, finite_difference(loss, net.params)) <= 1e-6


@pytest.mark.parametrize("weighted", [False, True])
def test_pg_gradient_matches_surrogate(weighted):
    b = batch(seed=2)
    net = PolicyNet(ARCH, 2)
    rng = np.random.default_rng(5)
    w = rng.uniform(0, 3, 6) if weighted else None
    gs = np.sign(b["G"]) if weighted else None
    grad = pg_gradient(net, b, b["G"], 0.5, w, gs)
    num = finite_difference(lambda: pg_surrogate(net, b, b["G"], 0.5, w, gs), net.params)
    assert relative_error(grad, num) <= 1e-6


def test_importance_weights():
    probs = np.array([[0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.25, 0.25]])
    w = importance_weights(probs, np.array([3, 0]), np.array([3, 1]), beta=0.5)
    np.testing.assert_allclose(w, [0.4 / (0.5 + 0.2), 0.25 / 0.125])
    # on-policy limit
    np.testing.assert_allclose(importance_weights(probs, np.array([0, 0]), np.array([2, 3]), 0.0), 1.0)
    assert logit(0.5) == 0.0


def _grids(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return [random_grid(rng, 10, 10, 0.3) for _ in range(n)]


def test_every_algorithm_has_a_trainer():
    assert set(TRAINERS) == set(ALGORITHMS)


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_trainer_smoke_and_information_access(alg):
    tr = TRAINERS[alg](_grids(), TrainConfig(algorithm=alg, **TINY)).train()
    assert len(tr.log) == 2 and tr.epoch == 2
    assert np.all(np.isfinite(tr.policy.params))
    assert 0.0 <= tr.log[-1].train_accuracy <= 1.0
    if alg in ("MCPG", "DPG"):
        # pure RL never consults the expert
        assert tr.oracle.calls == 0 and tr.reward_reads > 0
    elif alg in ("BC", "DAgger"):
        # pure imitation never reads a reward
        assert tr.reward_reads == 0 and tr.oracle.calls > 0
    else:
        assert tr.reward_reads > 0 and tr.oracle.calls > 0


def test_bc_collects_demonstrations_once():
    tr = TRAINERS["BC"](_grids(), TrainConfig(algorithm="BC", **TINY))
    tr.run_epoch()
    n = len(tr.demos)
    tr.run_epoch()
    assert len(tr.demos) == n > 0


def test_dagger_aggregates():
    tr = TRAINERS["DAgger"](_grids(), TrainConfig(algorithm="DAgger", **TINY))
    tr.run_epoch()
    n = len(tr.demos)
    tr.run_epoch()
    assert len(tr.demos) > n
