import numpy as np
import pytest
import scipy.sparse as sp

from xgsl.autodiff import NumericalError, Tensor
from xgsl.config import ConfigError
from xgsl.gnn import GnnParams, encode, gnn_forward, init_gnn, two_step_mp
from xgsl.graph import Graph, adjacency_from_edges

from conftest import random_graph


def dense_rownorm(m):
    out = np.zeros_like(m)
    for i, row in enumerate(m):
        s = row.sum()
        if s > 0:
            out[i] = row / s
    return out


def dense_forward(A, X, gamma, weights, lam):
    """Reference forward with explicit dense matrices and loops over layers."""
    n = A.shape[0]
    At = A + np.eye(n)
    d = At.sum(axis=1)
    A_norm = At / np.sqrt(np.outer(d, d))
    mix = dense_rownorm(gamma)
    spread = dense_rownorm(gamma.T)
    h = X
    Z = None
    for i, W in enumerate(weights):
        hw = h @ W
        out = lam * (A_norm @ hw) + (1 - lam) * (mix @ (spread @ hw))
        if i < len(weights) - 1:
            h = Z = np.maximum(out, 0)
    return Z, out


def make_gnn(g, hidden, lam, seed=0, encoder_mode="gcn"):
    return init_gnn(g.n_features, hidden, g.n_classes, seed=seed, lam=lam, encoder_mode=encoder_mode)


class TestEncode:
    def test_mlp_identity(self):
        X = np.abs(np.random.default_rng(0).standard_normal((5, 3)))
        g = Graph(adjacency_from_edges([(0, 1)], 5), X, [0, 1, 0, 1, 0], 2)
        gnn = GnnParams(Tensor(np.eye(3)), [Tensor(np.ones((3, 2)))], encoder_mode="mlp")
        np.testing.assert_array_equal(encode(g, gnn).value, X)

    def test_gcn_isolated_node(self):
        x = np.array([[1.0, -2.0]])
        W = np.array([[0.5, 1.0, -1.0], [0.25, -1.0, 0.5]])
        g = Graph(sp.csr_matrix((1, 1)), x, [0], 1)
        gnn = GnnParams(Tensor(W), [Tensor(np.ones((2, 1)))], encoder_mode="gcn")
        np.testing.assert_allclose(encode(g, gnn).value, np.maximum(x @ W, 0))

    def test_feature_mismatch(self, small_graph):
        gnn = init_gnn(small_graph.n_features + 1, 4, 3)
        with pytest.raises(ConfigError):
            encode(small_graph, gnn)


class TestTwoStep:
    def test_single_column(self):
        rng = np.random.default_rng(1)
        Z = rng.standard_normal((5, 3))
        gamma = np.zeros((5, 2))
        gamma[[0, 2, 3], 1] = [0.5, 1.0, 0.25]
        out = two_step_mp(Z, gamma).value
        weighted = (0.5 * Z[0] + 1.0 * Z[2] + 0.25 * Z[3]) / 1.75
        for u in (0, 2, 3):
            np.testing.assert_allclose(out[u], weighted, atol=1e-14)
        np.testing.assert_array_equal(out[[1, 4]], 0.0)

    def test_uniform(self):
        Z = np.random.default_rng(2).standard_normal((6, 3))
        out = two_step_mp(Z, np.ones((6, 4))).value
        np.testing.assert_allclose(out, np.tile(Z.mean(axis=0), (6, 1)), atol=1e-14)

    def test_loop_oracle(self):
        rng = np.random.default_rng(3)
        gamma, Z = rng.random((6, 2)), rng.standard_normal((6, 3))
        C_half = np.zeros((2, 3))
        for p in range(2):
            w = gamma[:, p] / gamma[:, p].sum()
            for u in range(6):
                C_half[p] += w[u] * Z[u]
        expected = np.zeros((6, 3))
        for u in range(6):
            w = gamma[u] / gamma[u].sum()
            for p in range(2):
                expected[u] += w[p] * C_half[p]
        np.testing.assert_allclose(two_step_mp(Z, gamma).value, expected, atol=1e-14)

    def test_output_within_column_range(self):
        rng = np.random.default_rng(4)
        Z = rng.standard_normal((20, 4))
        out = two_step_mp(Z, rng.random((20, 5))).value
        assert np.all(out >= Z.min(axis=0) - 1e-12)
        assert np.all(out <= Z.max(axis=0) + 1e-12)


class TestForward:
    def test_lambda_one_is_gcn(self, small_graph):
        gnn = make_gnn(small_graph, 4, lam=1.0)
        gamma = np.random.default_rng(0).random((8, 3))
        Z1, y1 = gnn_forward(small_graph, gamma, gnn)
        Z0, y0 = gnn_forward(small_graph, None, gnn)
        np.testing.assert_array_equal(y1.value, y0.value)
        Zd, yd = dense_forward(small_graph.adjacency.toarray(), small_graph.features, gamma, [w.value for w in gnn.weights], 1.0)
        np.testing.assert_allclose(y0.value, yd, atol=1e-12)

    def test_lambda_zero_gamma_zero(self, small_graph):
        gnn = make_gnn(small_graph, 4, lam=0.0)
        Z, y = gnn_forward(small_graph, np.zeros((8, 3)), gnn)
        np.testing.assert_array_equal(Z.value, 0.0)
        np.testing.assert_array_equal(y.value, np.tile(y.value[0], (8, 1)))

    def test_dense_oracle(self):
        for seed in range(5):
            g = random_graph(8, 4, 3, seed=seed)
            gnn = make_gnn(g, 5, lam=0.5, seed=seed)
            gamma = np.random.default_rng(seed).random((8, 3))
            Z, y = gnn_forward(g, gamma, gnn)
            Zd, yd = dense_forward(g.adjacency.toarray(), g.features, gamma, [w.value for w in gnn.weights], 0.5)
            np.testing.assert_allclose(Z.value, Zd, atol=1e-12)
            np.testing.assert_allclose(y.value, yd, atol=1e-12)

    def test_permutation_equivariance(self):
        g = random_graph(10, 3, 2, seed=1)
        gnn = make_gnn(g, 4, lam=0.3)
        gamma = np.random.default_rng(2).random((10, 3))
        perm = np.random.default_rng(3).permutation(10)
        A = g.adjacency.toarray()[np.ix_(perm, perm)]
        h = Graph(sp.csr_matrix(A), g.features[perm], g.labels[perm], 2)
        _, y = gnn_forward(g, gamma, gnn)
        _, yp = gnn_forward(h, gamma[perm], gnn)
        np.testing.assert_allclose(yp.value, y.value[perm], atol=1e-10)

    def test_lambda_continuity(self, small_graph):
        gnn = make_gnn(small_graph, 4, lam=0.0)
        gamma = np.random.default_rng(0).random((8, 3))
        lams = np.linspace(0, 1, 101)
        outs = []
        for lam in lams:
            gnn.lam = lam
            outs.append(gnn_forward(small_graph, gamma, gnn)[1].value)
        steps = np.array([np.abs(b - a).max() for a, b in zip(outs, outs[1:])])
        # a jump would show as one step far above the typical step
        assert steps.max() < 5 * np.median(steps) + 1e-12

    def test_deterministic_without_rng(self, small_graph):
        gnn = make_gnn(small_graph, 4, lam=0.5)
        gnn.dropout = 0.5
        gamma = np.random.default_rng(0).random((8, 3))
        np.testing.assert_array_equal(gnn_forward(small_graph, gamma, gnn)[1].value, gnn_forward(small_graph, gamma, gnn)[1].value)

    def test_dropout_seeded(self, small_graph):
        gnn = make_gnn(small_graph, 4, lam=0.5)
        gnn.dropout = 0.5
        gamma = np.random.default_rng(0).random((8, 3))
        a = gnn_forward(small_graph, gamma, gnn, np.random.default_rng(1))[1].value
        b = gnn_forward(small_graph, gamma, gnn, np.random.default_rng(1))[1].value
        c = gnn_forward(small_graph, gamma, gnn)[1].value
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_requires_gamma(self, small_graph):
        with pytest.raises(ConfigError):
            gnn_forward(small_graph, None, make_gnn(small_graph, 4, lam=0.5))

    def test_numerical_error_names_layer(self, small_graph):
        gnn = make_gnn(small_graph, 4, lam=1.0)
        gnn.weights[0].value[:] = 1e200
        gnn.weights[1].value[:] = 1e200
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalError, match="layer 1"):
            gnn_forward(small_graph, None, gnn)

    def test_shapes_must_chain(self):
        with pytest.raises(ConfigError):
            GnnParams(Tensor(np.ones((3, 4))), [Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2)))])
