import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from xgsl import autodiff as ad
from xgsl.autodiff import Tape, Tensor, check_gradients
from xgsl.config import ConfigError
from xgsl.gnn import GnnParams, encode, init_gnn
from xgsl.graph import Graph
from xgsl.learner import compute_gamma, init_learner, log_prob
from xgsl.objective import advantages, loss_entropy, loss_supervised, reg_reward, reinforce_surrogate

from conftest import random_graph


def isolated_graph(labels, n_classes, scale):
    n = len(labels)
    X = np.eye(n_classes)[labels] * scale
    return Graph(sp.csr_matrix((n, n)), X, labels, n_classes, train_mask=np.ones(n, bool))


class TestSupervised:
    def test_confident_correct_logits(self):
        g = isolated_graph(np.array([0, 1, 2, 1]), 3, 1.0)
        gnn = GnnParams(Tensor(np.eye(3)), [Tensor(60.0 * np.eye(3))], lam=1.0)
        loss, _, _ = loss_supervised(g, None, gnn)
        assert 0 <= loss.value < 1e-20

    def test_uniform_logits(self):
        g = isolated_graph(np.array([0, 1, 2, 3, 0]), 4, 1.0)
        gnn = GnnParams(Tensor(np.eye(4)), [Tensor(np.zeros((4, 4)))], lam=1.0)
        loss, _, _ = loss_supervised(g, None, gnn)
        assert loss.value == pytest.approx(math.log(4), abs=1e-15)

    def test_dense_cross_entropy_oracle(self):
        g = random_graph(8, 4, 3, seed=2)
        gnn = init_gnn(4, 5, 3, seed=1, lam=0.5)
        gamma = np.random.default_rng(0).random((8, 3))
        loss, _, logits = loss_supervised(g, gamma, gnn)
        y = logits.value
        idx = np.flatnonzero(g.train_mask)
        terms = []
        for i in idx:
            m = y[i].max()
            terms.append(-(y[i, g.labels[i]] - m - math.log(np.exp(y[i] - m).sum())))
        assert loss.value == pytest.approx(np.mean(terms), abs=1e-14)

    def test_gradient_reaches_learner_and_gnn(self):
        g = random_graph(8, 4, 3, seed=2)
        gnn = init_gnn(4, 5, 3, seed=1, lam=0.5)
        learner = init_learner(5, heads=2, threshold=0.0, seed=0)
        with Tape():
            gamma = compute_gamma(encode(g, gnn), [0, 3, 6], learner, on_degenerate="zero")
            loss, _, _ = loss_supervised(g, gamma, gnn)
            ad.backward(loss)
        for p in learner.parameters() + gnn.parameters():
            assert p.grad is not None and np.any(p.grad != 0)

    def test_end_to_end_gradcheck_three_pivots(self):
        g = random_graph(8, 3, 2, seed=4)
        rng = np.random.default_rng(0)
        point = [
            1 + 0.3 * rng.standard_normal((2, 4)),
            1 + 0.3 * rng.standard_normal((2, 4)),
            rng.standard_normal((3, 4)),
            rng.standard_normal((3, 4)),
            rng.standard_normal((4, 2)),
        ]

        def f(w1, w2, enc, W0, W1):
            from xgsl.learner import LearnerParams

            learner = LearnerParams(w1, w2, threshold=0.0)
            gnn = GnnParams(enc, [W0, W1], lam=0.4)
            gamma = compute_gamma(encode(g, gnn), [1, 4, 6], learner, on_degenerate="zero")
            return ad.add(loss_supervised(g, gamma, gnn)[0], loss_entropy(gamma))

        report = check_gradients(f, point, tol=1e-4)
        assert report.passed, report.failures[:3]

    def test_empty_mask(self):
        g = random_graph(8, 4, 3, seed=0).replace(train_mask=np.zeros(8, bool))
        with pytest.raises(ConfigError):
            loss_supervised(g, None, init_gnn(4, 5, 3, lam=1.0))


class TestReward:
    def test_zero_structure(self):
        assert reg_reward(np.zeros((3, 3)), np.random.default_rng(0).random((3, 2)), 1.0, 1.0) == 0.0

    def test_identical_features(self):
        E = np.array([[1, 2], [2, 0]])
        assert reg_reward(E, np.ones((2, 4)), 0.7, 0.3) == pytest.approx(-0.3 * 9, abs=1e-14)

    def test_three_pivot_hand_value(self):
        E = np.array([[2, 1, 0], [1, 1, 1], [0, 1, 3]])
        x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        # squared distances 01 -> 1, 02 -> 4, 12 -> 5; smoothness 2 * (1 + 0 + 5) = 12; ||E||^2 = 18
        assert reg_reward(E, x, 0.5, 0.1) == pytest.approx(-0.5 * 12 - 0.1 * 18, abs=1e-13)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_non_positive(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.random((6, 3)) < 0.5
        E = b.T.astype(int) @ b.astype(int)
        assert reg_reward(E, rng.standard_normal((3, 2)), rng.random(), rng.random()) <= 0


class TestReinforce:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.gamma = rng.uniform(0.1, 0.9, size=(4, 2))
        self.samples = rng.random((2, 4, 2)) < 0.5

    def surrogate_grad(self, rewards, baseline):
        g = Tensor(self.gamma.copy(), requires_grad=True)
        with Tape():
            ad.backward(reinforce_surrogate(g, self.samples, rewards, baseline))
        return g.grad

    def score(self, k):
        g = Tensor(self.gamma.copy(), requires_grad=True)
        with Tape():
            ad.backward(log_prob(self.samples[k], g))
        return g.grad

    @pytest.mark.parametrize("baseline", ["mean", "leave-one-out"])
    def test_equal_rewards_cancel(self, baseline):
        np.testing.assert_array_equal(self.surrogate_grad([-2.5, -2.5], baseline), 0.0)

    def test_k2_identity_mean_baseline(self):
        r = 1.7
        expected = -0.5 * (self.score(0) - self.score(1)) * r
        np.testing.assert_allclose(self.surrogate_grad([r, -r], "mean"), expected, atol=1e-13)

    def test_leave_one_out_scaling(self):
        rewards = np.array([-1.0, -3.0, -2.5])
        np.testing.assert_allclose(advantages(rewards, "leave-one-out"), (rewards - rewards.mean()) * 1.5, atol=1e-15)
        loo = [r - np.delete(rewards, i).mean() for i, r in enumerate(rewards)]
        np.testing.assert_allclose(advantages(rewards, "leave-one-out"), loo, atol=1e-15)

    def test_single_sample_rejected(self):
        with pytest.raises(ConfigError):
            advantages([1.0])

    def test_matches_explicit_score_sum(self):
        rewards = np.array([-0.4, -1.3])
        adv = advantages(rewards, "leave-one-out")
        expected = -(adv[0] * self.score(0) + adv[1] * self.score(1)) / 2
        np.testing.assert_allclose(self.surrogate_grad(rewards, "leave-one-out"), expected, atol=1e-13)


class TestEntropy:
    def test_half(self):
        assert loss_entropy(np.full((3, 4), 0.5)).value == pytest.approx(-math.log(2), abs=1e-15)

    def test_binary(self):
        g = (np.random.default_rng(0).random((5, 3)) < 0.5).astype(float)
        assert loss_entropy(g).value == pytest.approx(0.0, abs=2e-5)

    def test_point_nine(self):
        assert loss_entropy(np.full((2, 2), 0.9)).value == pytest.approx(-0.325082973391448, abs=1e-12)

    def test_gradcheck(self):
        g = np.random.default_rng(1).uniform(0.05, 0.95, (4, 3))
        report = check_gradients(loss_entropy, [g])
        assert report.max_rel_error < 1e-5

    @given(st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_range(self, seed):
        g = np.random.default_rng(seed).random((5, 4))
        v = loss_entropy(g).value
        assert -math.log(2) - 1e-15 <= v <= 0
