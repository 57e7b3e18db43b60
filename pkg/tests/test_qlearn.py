#!/usr/bin/env python3
"""Unit tests for the pushing-point value network and its DQN training loop"""

import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import TrainConfig  # noqa: E402
from qlearn import (  # noqa: E402
    LAYER_DIMS,
    QNet,
    ReplayBuffer,
    SgdMomentum,
    Transition,
    epsilon_at,
    forward,
    huber,
    q_target,
    select_point,
    train,
)


def net_with_output_bias(b3):
    """Zero network whose outputs are exactly the given bias vector."""
    net = QNet.zeros()
    net.biases[2] = np.array(b3, dtype=float)
    return net


def reference_forward(net, s):
    """Independent evaluation of the 3-10-10-6 network, one unit at a time."""
    a = list(s)
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = []
        for j in range(w.shape[0]):
            total = b[j]
            for i in range(w.shape[1]):
                total += w[j, i] * a[i]
            z.append(total)
        a = [max(v, 0.0) for v in z] if layer < 2 else z
    return np.array(a)


class FakeEnv:
    """Seeded stand-in for the pushing environment: random walk, goal when close to 0."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.rounds = 0
        self.s = np.zeros(3)

    def reset(self):
        self.rounds = 0
        self.s = self.rng.uniform(-0.2, 0.2, size=3)
        return self.s.copy()

    def act(self, action):
        s = self.s.copy()
        self.s = s + self.rng.normal(0.0, 0.02, size=3) - 0.01 * (action - 2.5) * np.sign(s)
        self.rounds += 1
        success = bool(np.linalg.norm(self.s) < 0.05)
        done = success or self.rounds >= 6
        r = 100.0 if success else -1.0
        return SimpleNamespace(
            transition=Transition(s, action, r, self.s.copy(), success),
            outcome=SimpleNamespace(steps=3),
            success=success,
            done=done,
        )


class TestQNet:
    """Test network construction and the forward pass"""

    def test_parameter_counts(self):
        net = QNet.initialize(0)
        assert net.param_counts == (40, 110, 66)
        assert sum(p.size for p in net.params) == 216

    def test_wrong_dims_rejected(self):
        with pytest.raises(ValueError, match="dims"):
            QNet([np.zeros((10, 4)), np.zeros((10, 10)), np.zeros((6, 10))], [np.zeros(10), np.zeros(10), np.zeros(6)])

    def test_zero_net_outputs_zero(self):
        assert forward(QNet.zeros(), [0.3, -0.1, 2.0]).tolist() == [0.0] * 6

    def test_single_unit_chain(self):
        net = QNet.zeros()
        net.weights[0][0, 0] = 1.0
        net.weights[1][0, 0] = 1.0
        net.weights[2][2, 0] = 1.0
        assert forward(net, [1.0, 0.0, 0.0]).tolist() == [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]

    def test_matches_reference_implementation(self):
        net = QNet.initialize(17)
        rng = np.random.default_rng(1)
        for s in rng.uniform(-1, 1, size=(20, 3)):
            assert np.max(np.abs(forward(net, s) - reference_forward(net, s))) <= 1e-12

    def test_batch_matches_single(self):
        net = QNet.initialize(3)
        states = np.random.default_rng(2).uniform(-1, 1, size=(5, 3))
        batch = net.forward(states)
        assert batch.shape == (5, 6)
        for row, s in zip(batch, states):
            assert np.array_equal(row, net.forward(s))

    def test_negative_outputs_representable(self):
        assert forward(net_with_output_bias([-100.0] * 6), [0.0, 0.0, 0.0]).tolist() == [-100.0] * 6

    def test_initialization_is_seeded_and_bounded(self):
        a, b = QNet.initialize(5), QNet.initialize(5)
        for pa, pb in zip(a.params, b.params):
            assert np.array_equal(pa, pb)
        for w, fan_in in zip(a.weights, LAYER_DIMS[:-1]):
            assert np.abs(w).max() <= 1.0 / np.sqrt(fan_in)


class TestHuber:
    """Test the Huber loss"""

    @pytest.mark.parametrize(
        "delta, expected",
        [(0.0, 0.0), (0.5, 0.125), (-0.5, 0.125), (1.0, 0.5), (-1.0, 0.5), (2.0, 1.5), (-2.0, 1.5)],
    )
    def test_values(self, delta, expected):
        assert huber(delta) == pytest.approx(expected)


class TestBackward:
    """Test loss gradients"""

    def test_zero_gradient_at_target(self):
        net = QNet.initialize(4)
        states = np.random.default_rng(0).uniform(-1, 1, size=(8, 3))
        actions = np.arange(8) % 6
        targets = net.forward(states)[np.arange(8), actions]
        loss, grads = net.backward(states, actions, targets)
        assert loss == 0.0
        assert all(not g.any() for g in grads)

    def test_quadratic_branch(self):
        net = QNet.zeros()
        loss, grads = net.backward([[0.1, 0.2, 0.3]], [0], [-0.5])
        assert loss == pytest.approx(0.125)
        assert grads[5].tolist() == pytest.approx([0.5, 0, 0, 0, 0, 0])

        _, half = net.backward([[0.1, 0.2, 0.3]], [0], [-0.25])
        assert half[5][0] == pytest.approx(0.25)

    def test_unselected_outputs_get_no_gradient(self):
        net = QNet.initialize(8)
        _, grads = net.backward([[0.1, -0.2, 0.5]], [3], [4.0])
        db3 = grads[5]
        assert db3[3] != 0.0
        assert np.count_nonzero(db3) == 1

    def test_finite_differences(self):
        net = QNet.initialize(21)
        rng = np.random.default_rng(22)
        states = rng.uniform(-1, 1, size=(16, 3))
        actions = rng.integers(0, 6, size=16)
        targets = net.forward(states)[np.arange(16), actions] + rng.uniform(-0.8, 0.8, size=16)
        targets[:4] += 3.0  # linear branch too

        _, grads = net.backward(states, actions, targets)
        step = 1e-5
        n_params = [p.size for p in net.params]
        picks = rng.choice(sum(n_params), size=100, replace=False)
        offsets = np.cumsum([0] + n_params)
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = np.unravel_index(flat - offsets[k], net.params[k].shape)
            param = net.params[k]
            original = param[idx]
            param[idx] = original + step
            up, _ = net.backward(states, actions, targets)
            param[idx] = original - step
            down, _ = net.backward(states, actions, targets)
            param[idx] = original
            numeric = (up - down) / (2 * step)
            analytic = grads[k][idx]
            assert abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic)) + 1e-9

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            QNet.zeros().backward(np.zeros((0, 3)), [], [])


class TestQTarget:
    """Test bootstrapped targets"""

    def test_terminal(self):
        t = Transition(np.zeros(3), 0, 100.0, np.zeros(3), True)
        assert q_target(QNet.initialize(0), t, 0.9) == 100.0

    def test_bootstrap_on_best_output(self):
        net = net_with_output_bias([0.5, 2.0, -1.0, 0.0, 0.0, 0.0])
        t = Transition(np.zeros(3), 2, 1.0, np.array([0.1, 0.1, 0.0]), False)
        assert q_target(net, t, 0.9) == pytest.approx(2.8)

    def test_all_zero_outputs(self):
        t = Transition(np.zeros(3), 1, -1.0, np.ones(3), False)
        assert q_target(QNet.zeros(), t, 0.9) == -1.0

    def test_frozen_target_between_syncs(self):
        net = QNet.initialize(9)
        target = net.copy()
        t = Transition(np.zeros(3), 0, 1.0, np.array([0.1, -0.1, 0.2]), False)
        before = q_target(target, t, 0.9)
        optimizer = SgdMomentum(0.1, 0.9, 0.0)
        _, grads = net.backward([[0.1, -0.1, 0.2]], [0], [50.0])
        optimizer.step(net, grads)
        assert q_target(target, t, 0.9) == before
        assert not np.array_equal(net.forward(t.s_next), target.forward(t.s_next))

    def test_invalid_transition(self):
        with pytest.raises(ValueError):
            Transition(np.zeros(3), 6, 0.0, np.zeros(3), False)
        with pytest.raises(ValueError, match="finite"):
            Transition(np.zeros(3), 0, float("nan"), np.zeros(3), False)


class TestSelectPoint:
    """Test epsilon-greedy selection"""

    def test_greedy_argmax(self):
        net = net_with_output_bias([0, 3, 1, 1, 1, 1])
        assert select_point(net, np.zeros(3), 0.0, np.random.default_rng(0)) == 1

    def test_ties_go_to_lowest_index(self):
        assert select_point(QNet.zeros(), np.zeros(3), 0.0, np.random.default_rng(0)) == 0

    def test_argmax_invariant_to_constant_shift(self):
        net = QNet.initialize(6)
        s = np.array([0.1, 0.05, -0.3])
        before = select_point(net, s, 0.0, np.random.default_rng(0))
        net.biases[2] += 7.5
        assert select_point(net, s, 0.0, np.random.default_rng(0)) == before

    def test_uniform_exploration(self):
        net = QNet.zeros()
        rng = np.random.default_rng(123)
        draws = [select_point(net, np.zeros(3), 1.0, rng) for _ in range(100_000)]
        freq = np.bincount(draws, minlength=6) / len(draws)
        assert np.all(np.abs(freq - 1 / 6) <= 0.02)

        again = np.random.default_rng(123)
        assert [select_point(net, np.zeros(3), 1.0, again) for _ in range(50)] == draws[:50]

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            select_point(QNet.zeros(), np.zeros(3), 1.5, np.random.default_rng(0))


class TestReplayBuffer:
    """Test the transition ring"""

    @staticmethod
    def transition(r):
        return Transition(np.zeros(3), 0, float(r), np.zeros(3), False)

    def test_fifo_eviction(self):
        buffer = ReplayBuffer(3)
        for r in range(5):
            buffer.push(self.transition(r))
        assert len(buffer) == 3
        assert [t.r for t in buffer] == [2.0, 3.0, 4.0]

    def test_sampling_covers_every_slot(self):
        buffer = ReplayBuffer(10, seed=4)
        for r in range(7):
            buffer.push(self.transition(r))
        idx = buffer.sample_indices(100_000)
        assert set(idx.tolist()) == set(range(7))

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ReplayBuffer(4).sample(2)


class TestSgdMomentum:
    """Test the optimizer update"""

    @staticmethod
    def ones_net():
        net = QNet.zeros()
        for p in net.params:
            p[...] = 1.0
        return net

    def test_single_step(self):
        net = self.ones_net()
        SgdMomentum(0.1, 0.9, 0.01).step(net, [np.ones_like(p) for p in net.params])
        assert all(np.allclose(p, 0.899, rtol=0, atol=1e-15) for p in net.params)
        assert net.step == 1

    def test_momentum_accumulates(self):
        net = QNet.zeros()
        optimizer = SgdMomentum(0.1, 0.9, 0.0)
        grads = [np.ones_like(p) for p in net.params]
        optimizer.step(net, grads)
        optimizer.step(net, grads)
        assert net.params[0][0, 0] == pytest.approx(-0.1 - 0.19)

    def test_decoupled_weight_decay(self):
        net = self.ones_net()
        SgdMomentum(1e-4, 0.9, 1e-5).step(net, [np.zeros_like(p) for p in net.params])
        assert all(np.all(p == 1.0 - 1e-4 * 1e-5) for p in net.params)


class TestTrain:
    """Test the training loop"""

    def test_epsilon_schedule(self):
        cfg = TrainConfig()
        assert epsilon_at(cfg, 0) == 0.5
        assert epsilon_at(cfg, 75) == pytest.approx(0.3)
        assert epsilon_at(cfg, 150) == pytest.approx(0.1)
        assert epsilon_at(cfg, 400) == pytest.approx(0.1)

    def test_zero_episodes(self):
        net, log = train(FakeEnv, TrainConfig(episodes=0, seed=3))
        assert log == []
        for a, b in zip(net.params, QNet.initialize(3).params):
            assert np.array_equal(a, b)

    def test_log_records(self):
        cfg = TrainConfig(episodes=4, batch_size=4, target_sync_every=3, seed=1)
        _, log = train(FakeEnv, cfg)
        assert [entry.episode for entry in log] == [0, 1, 2, 3]
        assert log[0].mean_loss is None or log[0].mean_loss >= 0
        assert all(entry.plant_steps == 3 * entry.rounds for entry in log)
        assert all(entry.model_dump(by_alias=True)["return"] == entry.return_ for entry in log)

    def test_deterministic_under_seed(self):
        cfg = TrainConfig(episodes=5, batch_size=4, target_sync_every=5, lr=1e-2, seed=7)
        net_a, log_a = train(FakeEnv, cfg)
        net_b, log_b = train(FakeEnv, cfg)
        assert [e.model_dump() for e in log_a] == [e.model_dump() for e in log_b]
        for a, b in zip(net_a.params, net_b.params):
            assert np.array_equal(a, b)
        assert net_a.step > 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
