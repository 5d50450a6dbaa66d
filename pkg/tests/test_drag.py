import numpy as np
import pytest

from conftest import random_grid
from shapeparse.approximator import Adam, Architecture, CriticNet, OptimizerConfig, PolicyNet
from shapeparse.approximator import finite_difference, relative_error
from shapeparse.drag import (DragTrainer, TrainConfig, actor_update_mixed, beta_schedule, critic_inputs,
                             critic_update, mixed_policy_gradient, mixed_surrogate, rule_values,
                             write_log_csv)
from shapeparse.grammar import N_RULES

ARCH = Architecture(side=8, conv=(4,), kernel=2, dense=(8,), critic_hidden=(8,))
TINY = dict(side=8, conv=(4,), dense=(8,), critic_hidden=(8,), max_depth=3, batch_size=8, log_every=0)


def batch(n=6, seed=0):
    rng = np.random.default_rng(seed)
    legal = np.ones((n, N_RULES), bool)
    legal[::3, :2] = False
    rules = np.array([rng.choice(np.flatnonzero(l)) for l in legal])
    return {"features": rng.random((n, 8, 8, 2)), "legal": legal, "rules": rules,
            "split": rng.uniform(0.1, 0.9, n), "G": rng.uniform(-1, 1, n), "z": np.full(n, np.nan)}


def test_beta_schedule():
    assert beta_schedule(0) == 1.0
    assert beta_schedule(50) == pytest.approx(0.75)
    assert beta_schedule(100) == 0.5 and beta_schedule(10_000) == 0.5
    with pytest.raises(ValueError):
        beta_schedule(-1)


def test_config_validation_and_text_round_trip(tmp_path):
    with pytest.raises(ValueError):
        TrainConfig(algorithm="nope")
    with pytest.raises(ValueError):
        TrainConfig(beta_start=0.2, beta_end=0.5)
    with pytest.raises(ValueError):
        TrainConfig(critic_steps=0)
    c = TrainConfig(algorithm="BC", conv=(4, 4), split_map=True, lr=3e-4)
    assert TrainConfig.from_text(c.to_text()) == c
    path = tmp_path / "c.txt"
    path.write_text("algorithm = DAgger  # comment\n\nepochs = 3\n")
    assert TrainConfig.from_file(path, seed=5) == TrainConfig(algorithm="DAgger", epochs=3, seed=5)
    with pytest.raises(ValueError):
        TrainConfig.from_text("bogus = 1")
    with pytest.raises(ValueError):
        TrainConfig.from_text("split_map = maybe")


def test_critic_inputs_use_placeholder_for_assignments():
    np.testing.assert_allclose(critic_inputs(np.array([0, 1, 2, 3]), np.full(4, 0.2)),
                               [0.2, 0.2, 0.5, 0.5])


def test_critic_update_fits_frozen_batch():
    b = batch(16, 1)
    critic = CriticNet(ARCH, 0)
    opt = Adam(critic.size, OptimizerConfig(lr=3e-3))
    first = critic_update(critic, b, opt)
    for _ in range(800):
        last = critic_update(critic, b, opt)
    assert last < 0.05 * first


@pytest.mark.parametrize("expected", [False, True])
def test_mixed_gradient_matches_surrogate(expected):
    b = batch()
    policy, critic = PolicyNet(ARCH, 3), CriticNet(ARCH, 4)
    critic_before = critic.params.copy()
    grad = mixed_policy_gradient(policy, critic, b, expected=expected)
    _, mu, _ = policy.forward(b["features"], b["legal"])
    if expected:
        q_fixed = rule_values(critic, b["features"], mu)
    else:
        q_fixed, _ = critic.forward(b["features"], b["rules"], critic_inputs(b["rules"], mu))
    num = finite_difference(lambda: mixed_surrogate(policy, critic, b, q_fixed), policy.params)
    assert relative_error(grad, num) <= 1e-6
    assert np.array_equal(critic.params, critic_before)


def test_deterministic_term_vanishes_without_split_dependence():
    b = batch()
    b["rules"][:] = 2  # assignment rules only: dQ/dl is never used
    policy, critic = PolicyNet(ARCH, 0), CriticNet(ARCH, 0)
    full = mixed_policy_gradient(policy, critic, b)
    stochastic_only = mixed_policy_gradient(policy, critic, b, deterministic=False)
    np.testing.assert_allclose(full, stochastic_only)


def test_constant_critic_stochastic_term_averages_out():
    # Q = c everywhere: E_r[grad log pi(r) * c] = 0, so the sampled estimate shrinks with the batch
    policy = PolicyNet(ARCH, 0)
    critic = CriticNet(Architecture(side=8, conv=(4,), kernel=2, dense=(8,), critic_hidden=(8,),
                                    init="zero"), 0)
    rng = np.random.default_rng(0)
    x = rng.random((1, 8, 8, 2))
    legal = np.ones((1, N_RULES), bool)
    probs, _, _ = policy.forward(x, legal)
    norms = []
    for n in (16, 1024):
        rules = rng.choice(N_RULES, size=n, p=probs[0])
        b = {"features": np.repeat(x, n, 0), "legal": np.repeat(legal, n, 0), "rules": rules,
             "split": np.full(n, 0.5), "G": np.zeros(n), "z": np.full(n, np.nan)}
        critic.set_params(np.zeros(critic.size))
        critic.head.layers[-1].params[1][...] = 0.7
        norms.append(np.linalg.norm(mixed_policy_gradient(policy, critic, b, deterministic=False)))
    assert norms[1] < norms[0] / 3


def test_actor_update_moves_only_policy():
    b = batch()
    policy, critic = PolicyNet(ARCH, 0), CriticNet(ARCH, 0)
    p0, c0 = policy.params.copy(), critic.params.copy()
    actor_update_mixed(policy, critic, b, Adam(policy.size))
    assert not np.array_equal(policy.params, p0)
    assert np.array_equal(critic.params, c0)


def _grids(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return [random_grid(rng, 12, 12, 0.3) for _ in range(n)]


def test_drag_trainer_epoch_and_log(tmp_path):
    cfg = TrainConfig(epochs=3, **dict(TINY, log_every=1))
    tr = DragTrainer(_grids(), cfg).train()
    assert len(tr.memory) == 12 and tr.reward_reads == 12
    assert [r.epoch for r in tr.log] == [0, 1, 2]
    assert tr.log[0].beta == 1.0
    assert all(0.0 <= r.train_accuracy <= 1.0 for r in tr.log)
    write_log_csv(tr.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,beta,train_accuracy,critic_loss,actor_grad_norm" and len(lines) == 4


def test_drag_trainer_is_deterministic():
    cfg = TrainConfig(epochs=2, **TINY)
    a = DragTrainer(_grids(), cfg).train()
    b = DragTrainer(_grids(), cfg).train()
    assert np.array_equal(a.policy.params, b.policy.params)
    assert np.array_equal(a.critic.params, b.critic.params)


def test_drag_knobs_run():
    cfg = TrainConfig(epochs=2, score_all_rules=True, rule_term="expected", switch_mode="episode",
                      critic_first=True, critic_steps=2, explore_sigma=0.1, split_map=True, **TINY)
    tr = DragTrainer(_grids(), cfg).train()
    assert len(tr.memory) > 8
    assert tr.reward_reads == len(tr.memory)
    assert len({t.rule for t in tr.memory.items}) > 1
