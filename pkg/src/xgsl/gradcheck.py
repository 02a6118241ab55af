"""Finite-difference suites over every primitive and the model's loss terms."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from xgsl import autodiff as ad
from xgsl.autodiff import PRIMITIVES, check_gradients
from xgsl.gnn import GnnParams, encode
from xgsl.graph import Graph, adjacency_from_edges
from xgsl.learner import LearnerParams, compute_gamma, log_prob
from xgsl.objective import loss_entropy, loss_supervised

# points closer than this to a kink are nudged away so central differences stay valid
KINK_MARGIN = 1e-3


@dataclass
class SuiteResult:
    name: str
    n_fixtures: int = 0
    n_checked: int = 0
    max_rel_error: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def add(self, seed: int, report) -> None:
        self.n_fixtures += 1
        self.n_checked += report.n_checked
        self.max_rel_error = max(self.max_rel_error, report.max_rel_error)
        if not report.passed:
            self.failures.append(f"seed {seed}: {len(report.failures)} coordinate(s) off")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_fixtures": self.n_fixtures,
            "n_checked": self.n_checked,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "failures": self.failures,
        }


@dataclass
class Fixture:
    """Small random instance: N <= 12 nodes, P <= 4 pivots, d <= 5, H <= 3."""

    seed: int
    graph: Graph
    pivots: np.ndarray
    heads: int
    dim: int
    rng: np.random.Generator


def make_fixture(seed: int) -> Fixture:
    rng = np.random.default_rng([seed, 401])
    n = int(rng.integers(6, 13))
    n_pivots = int(rng.integers(2, 5))
    dim = int(rng.integers(2, 6))
    heads = int(rng.integers(1, 4))
    n_feat = int(rng.integers(2, 6))
    n_classes = int(rng.integers(2, 4))
    pairs = np.array([(u, v) for u in range(n) for v in range(u + 1, n)])
    edges = pairs[rng.random(len(pairs)) < 0.35]
    labels = rng.integers(0, n_classes, size=n)
    labels[:n_classes] = np.arange(n_classes)
    train = np.zeros(n, bool)
    train[: max(3, n // 2)] = True
    g = Graph(
        adjacency_from_edges(edges, n),
        rng.standard_normal((n, n_feat)),
        labels,
        n_classes,
        train_mask=train,
    )
    pivots = np.sort(rng.choice(n, size=n_pivots, replace=False))
    return Fixture(seed, g, pivots, heads, dim, rng)


def _away_from(x: np.ndarray, point: float) -> np.ndarray:
    close = np.abs(x - point) < KINK_MARGIN
    return np.where(close, point + np.sign(x - point + 1e-300) * 2 * KINK_MARGIN, x)


def _primitive_case(name: str, rng: np.random.Generator):
    """(function, point) pair exercising one primitive; output reduced by a random weighting."""
    n, m, d = int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
    a = rng.standard_normal((n, d))
    b = rng.standard_normal((n, d))
    weights = {}

    def reduce(out):
        if out.shape not in weights:
            weights[out.shape] = rng.standard_normal(out.shape)
        return ad.sum_all(ad.mul(out, weights[out.shape]))

    if name == "add":
        return (lambda x, y: reduce(ad.add(x, y))), [a, b]
    if name == "sub":
        return (lambda x, y: reduce(ad.sub(x, y))), [a, b]
    if name == "mul":
        return (lambda x, y: reduce(ad.mul(x, y))), [a, b]
    if name == "scale":
        return (lambda x: reduce(ad.scale(x, 1.7))), [a]
    if name == "matmul":
        return (lambda x, y: reduce(ad.matmul(x, y))), [a, rng.standard_normal((d, m))]
    if name == "spmm":
        s = sp.random(m, n, density=0.5, random_state=np.random.RandomState(int(rng.integers(2**31))))
        return (lambda x: reduce(ad.spmm(s, x))), [a]
    if name == "transpose":
        return (lambda x: reduce(ad.transpose(x))), [a]
    if name == "relu":
        return (lambda x: reduce(ad.relu(x))), [_away_from(a, 0.0)]
    if name == "threshold":
        return (lambda x: reduce(ad.threshold(x, 0.2))), [_away_from(_away_from(a, 0.2), 0.0)]
    if name == "clamp":
        return (lambda x: reduce(ad.clamp(x, -0.5, 0.5))), [_away_from(_away_from(a, -0.5), 0.5)]
    if name == "log":
        return (lambda x: reduce(ad.log(x))), [np.abs(a) + 0.1]
    if name == "row_normalize":
        return (lambda x: reduce(ad.row_normalize(x))), [np.abs(a) + 0.05]
    if name == "cosine_similarity":
        return (lambda x, y: reduce(ad.cosine_similarity(x, y))), [a, rng.standard_normal((m, d))]
    if name == "log_softmax":
        return (lambda x: reduce(ad.log_softmax(x))), [a]
    if name == "take_rows":
        idx = rng.integers(0, n, size=n + 2)
        return (lambda x: reduce(ad.take_rows(x, idx))), [a]
    if name == "pick":
        rows = rng.integers(0, n, size=4)
        cols = rng.integers(0, d, size=4)
        return (lambda x: reduce(ad.pick(x, rows, cols))), [a]
    if name == "sum":
        return (lambda x: ad.scale(ad.sum_all(ad.mul(x, x)), 0.5)), [a]
    if name == "mean":
        return (lambda x: ad.mean_all(ad.mul(x, x))), [a]
    raise KeyError(name)


def primitive_suite(seeds, tol: float = 1e-4) -> list[SuiteResult]:
    results = []
    for name in PRIMITIVES:
        res = SuiteResult(f"primitive:{name}")
        for seed in seeds:
            rng = np.random.default_rng([seed, 403, PRIMITIVES.index(name)])
            f, point = _primitive_case(name, rng)
            res.add(seed, check_gradients(f, point, tol=tol))
        results.append(res)
    return results


def _model_parts(fx: Fixture, lam: float):
    """Random learner and GNN weights for a fixture, as plain arrays."""
    rng = fx.rng
    D, d, C, H = fx.graph.n_features, fx.dim, fx.graph.n_classes, fx.heads
    arrays = [
        1.0 + 0.3 * rng.standard_normal((H, d)),
        1.0 + 0.3 * rng.standard_normal((H, d)),
        rng.standard_normal((D, d)) * 0.7,
        rng.standard_normal((D, d)) * 0.7,
        rng.standard_normal((d, C)) * 0.7,
    ]

    def build(w1, w2, enc, W0, W1):
        learner = LearnerParams(w1, w2, threshold=4e-5)
        gnn = GnnParams(enc, [W0, W1], lam=lam, encoder_mode="gcn")
        return learner, gnn

    return arrays, build


def supervised_suite(seeds, tol: float = 1e-4) -> SuiteResult:
    """L_s through encoder, structure learner and blended message passing."""
    res = SuiteResult("loss:supervised")
    for seed in seeds:
        fx = make_fixture(seed)
        arrays, build = _model_parts(fx, lam=0.5)

        def f(w1, w2, enc, W0, W1):
            learner, gnn = build(w1, w2, enc, W0, W1)
            Z0 = encode(fx.graph, gnn)
            gamma = compute_gamma(Z0, fx.pivots, learner, on_degenerate="zero")
            loss, _, _ = loss_supervised(fx.graph, gamma, gnn)
            return ad.add(loss, loss_entropy(gamma))

        res.add(seed, check_gradients(f, arrays, tol=tol))
    return res


def entropy_suite(seeds, tol: float = 1e-4) -> SuiteResult:
    res = SuiteResult("loss:entropy")
    for seed in seeds:
        fx = make_fixture(seed)
        gamma = fx.rng.uniform(0.05, 0.95, size=(fx.graph.n_nodes, len(fx.pivots)))
        res.add(seed, check_gradients(loss_entropy, [gamma], tol=tol))
    return res


def log_prob_suite(seeds, tol: float = 1e-4) -> SuiteResult:
    res = SuiteResult("log_prob")
    for seed in seeds:
        fx = make_fixture(seed)
        shape = (fx.graph.n_nodes, len(fx.pivots))
        gamma = fx.rng.uniform(0.05, 0.95, size=shape)
        b1 = fx.rng.random(shape) < 0.5
        res.add(seed, check_gradients(lambda g: log_prob(b1, g), [gamma], tol=tol))
    return res


SUITES = ("primitives", "supervised", "entropy", "log_prob")


def run_all(n_fixtures: int = 20, tol: float = 1e-4, suites=SUITES) -> dict:
    start = time.perf_counter()
    seeds = range(n_fixtures)
    results: list[SuiteResult] = []
    if "primitives" in suites:
        results += primitive_suite(seeds, tol)
    if "supervised" in suites:
        results.append(supervised_suite(seeds, tol))
    if "entropy" in suites:
        results.append(entropy_suite(seeds, tol))
    if "log_prob" in suites:
        results.append(log_prob_suite(seeds, tol))
    return {
        "passed": all(r.passed for r in results),
        "tol": tol,
        "n_fixtures": n_fixtures,
        "seconds": time.perf_counter() - start,
        "suites": [r.to_dict() for r in results],
    }
