import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shapeparse.approximator import (Adam, Architecture, CriticNet, NumericError, OptimizerConfig,
                                     PolicyNet, adam_step, critic_forward, finite_difference,
                                     grad_check, load_checkpoint, policy_forward, relative_error,
                                     save_checkpoint)
from shapeparse.grammar import N_RULES

SMALL = Architecture(side=8, conv=(4,), kernel=2, dense=(8,), critic_hidden=(8,))


def inputs(n=5, seed=0, side=8):
    rng = np.random.default_rng(seed)
    legal = rng.random((n, N_RULES)) < 0.7
    legal[:, 2] = True
    return {"features": rng.random((n, side, side, 2)), "legal": legal,
            "rules": rng.integers(0, N_RULES, n), "split": rng.uniform(0.05, 0.95, n)}


def test_architecture_rejects_indivisible_side():
    with pytest.raises(ValueError):
        Architecture(side=10, conv=(4, 4), kernel=2)


def test_zero_init_gives_uniform_policy():
    net = PolicyNet(Architecture(side=8, conv=(4,), dense=(8,), init="zero"))
    probs, split = policy_forward(net, np.random.default_rng(0).random((8, 8, 2)), np.ones(4, bool))
    np.testing.assert_allclose(probs, 0.25)
    assert split == 0.5


def test_mask_restricts_support():
    net = PolicyNet(SMALL, 1)
    x = inputs()
    legal = np.array([[False, False, True, True]] * 5)
    probs, _, _ = net.forward(x["features"], legal)
    assert np.all(probs[:, :2] == 0)
    np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        net.forward(x["features"][:1], np.zeros((1, N_RULES), bool))


@given(st.integers(0, 2**31 - 1))
def test_probabilities_normalized_for_random_params(seed):
    rng = np.random.default_rng(seed)
    net = PolicyNet(SMALL, seed)
    net.set_params(rng.normal(scale=2.0, size=net.size))
    x = inputs(4, seed)
    probs, split, _ = net.forward(x["features"], x["legal"])
    np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-12)
    assert np.all((split > 0) & (split < 1))


@pytest.mark.parametrize("seed", range(3))
def test_policy_grad_check(seed):
    assert grad_check(PolicyNet(SMALL, seed), inputs(seed=seed), seed) <= 1e-6


@pytest.mark.parametrize("split_map", [False, True])
def test_critic_grad_check(split_map):
    arch = Architecture(side=8, conv=(4,), kernel=2, dense=(8,), critic_hidden=(8,),
                        split_map=split_map)
    assert grad_check(CriticNet(arch, 2), inputs(seed=2), 2) <= 1e-6


def test_grad_check_detects_corruption():
    assert grad_check(PolicyNet(SMALL, 0), inputs(), 0, per_block=3, corrupt=1e-2) > 1e-4


def test_critic_split_gradient_preserves_grad_buffer():
    net = CriticNet(SMALL, 0)
    net.grad[...] = 3.0
    x = inputs()
    q, d = net.split_gradient(x["features"], x["rules"], x["split"])
    assert np.all(net.grad == 3.0)
    assert q.shape == d.shape == (5,)
    assert critic_forward(net, x["features"][0], x["rules"][0], x["split"][0]) == pytest.approx(q[0])


def test_finite_difference_of_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    g = finite_difference(lambda: float(np.sum(x ** 2)), x)
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_adam_first_step_moves_by_lr_sign():
    p = np.array([1.0, 1.0, 1.0])
    out, _ = adam_step(p, np.array([0.5, -3.0, 0.0]), OptimizerConfig(lr=0.1))
    np.testing.assert_allclose(out, [0.9, 1.1, 1.0], atol=1e-6)
    assert np.all(p == 1.0)


def test_adam_clips_elementwise():
    a = Adam(2, OptimizerConfig(lr=1.0, clip=1.0))
    b = Adam(2, OptimizerConfig(lr=1.0, clip=1.0))
    pa, pb = np.zeros(2), np.zeros(2)
    for _ in range(3):
        a.step(pa, np.array([100.0, 0.3]))
        b.step(pb, np.array([1.0, 0.3]))
    np.testing.assert_allclose(pa, pb)


def test_adam_rejects_nan():
    with pytest.raises(NumericError):
        Adam(1).step(np.zeros(1), np.array([np.nan]))


def test_checkpoint_round_trip(tmp_path):
    pol, crit = PolicyNet(SMALL, 4), CriticNet(SMALL, 4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, pol, crit, step=7, seed=4, extra={"algorithm": "DRAG"})
    p2, c2, header = load_checkpoint(path)
    assert np.array_equal(p2.params, pol.params) and np.array_equal(c2.params, crit.params)
    assert header["step"] == 7 and header["extra"]["algorithm"] == "DRAG"
    save_checkpoint(tmp_path / "p.ckpt", pol)
    assert load_checkpoint(tmp_path / "p.ckpt")[1] is None


def test_checkpoint_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nonsense")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
    save_checkpoint(tmp_path / "ok.ckpt", PolicyNet(SMALL, 0))
    data = (tmp_path / "ok.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "cut.ckpt")
