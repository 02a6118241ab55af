"""Iterative refinement, source training of the shared learner and target transfer."""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from xgsl import autodiff as ad
from xgsl.autodiff import NumericalError, Tape, Tensor
from xgsl.config import ConfigError, TrainConfig
from xgsl.gnn import GnnParams, encode, init_gnn
from xgsl.graph import Graph, PivotStructure, homophily_ratio, row_normalize
from xgsl.learner import (
    LearnerParams,
    compute_gamma,
    init_learner,
    pivot_pivot,
    sample_structures,
    select_pivots,
)
from xgsl.objective import (
    loss_entropy,
    loss_supervised,
    pairwise_sq_dists,
    reg_reward,
    reinforce_surrogate,
)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the trace so far."""

    def __init__(self, message: str, trace: "EpochTrace"):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            p.value = p.value - self.lr * (p.grad + self.weight_decay * p.value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam(SGD):
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr, weight_decay)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.value
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            p.value = p.value - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def make_optimizer(name: str, params, lr: float, weight_decay: float):
    if name == "adam":
        return Adam(params, lr, weight_decay)
    if name == "sgd":
        return SGD(params, lr, weight_decay)
    raise ConfigError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass
class IterRecord:
    epoch: int
    iter: int
    L_s: float
    L_r: float
    L_e: float
    val_acc: float
    homophily: float
    gamma_delta: float


TRACE_COLUMNS = ("epoch", "iter", "L_s", "L_r", "L_e", "val_acc", "homophily", "gamma_delta")


@dataclass
class EpochTrace:
    """Append-only per-iteration log."""

    records: list[IterRecord] = field(default_factory=list)

    def append(self, rec: IterRecord) -> None:
        self.records.append(rec)

    def extend(self, recs) -> None:
        self.records.extend(recs)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_epochs(self) -> int:
        return len({r.epoch for r in self.records})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# per-graph state
# ---------------------------------------------------------------------------


def graph_fingerprint(g: Graph) -> str:
    h = hashlib.sha256()
    for arr in (g.edge_list(), g.features, g.labels, g.train_mask, g.valid_mask, g.test_mask):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def preprocess(g: Graph, mode: str = "auto") -> Graph:
    """Row-normalise non-negative (bag-of-words style) features."""
    if mode == "none":
        return g
    nonneg = bool(np.all(g.features >= 0))
    if mode == "auto" and not nonneg:
        return g
    return g.replace(features=row_normalize(g.features))


@dataclass
class GraphState:
    graph: Graph
    gnn: GnnParams
    pivots: np.ndarray
    pivot_dists: np.ndarray
    optimizer: SGD
    rng: np.random.Generator
    name: str = ""


def _seed_key(g: Graph) -> int:
    return int(graph_fingerprint(g)[:8], 16)


def make_state(g: Graph, config: TrainConfig, name: str = "", seed=None) -> GraphState:
    """GNN, pivots and RNG for one graph; streams depend on the seed and graph content."""
    g = preprocess(g, config.feature_norm)
    seed = config.seed if seed is None else seed
    key = [int(seed), _seed_key(g)]
    gnn = init_gnn(
        g.n_features, config.hidden, g.n_classes, key, config.lam, config.encoder, config.dropout
    )
    n_pivots = min(config.pivots, g.n_nodes - 1)
    pivots = select_pivots(g.n_nodes, n_pivots, key + [17])
    dists = pairwise_sq_dists(g.features[pivots])
    lr = config.gnn_lr if config.gnn_lr is not None else config.lr
    opt = make_optimizer(config.optimizer, gnn.parameters(), lr, config.weight_decay)
    return GraphState(g, gnn, pivots, dists, opt, np.random.default_rng(key + [3]), name)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


def gamma_change(new: np.ndarray, old: np.ndarray | None) -> float:
    """Relative Frobenius change; inf on the first iteration."""
    if old is None:
        return float("inf")
    base = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    if base == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / base)


def _structure_homophily(g: Graph, gamma: np.ndarray) -> float:
    return homophily_ratio(g, PivotStructure(gamma)) if g.n_classes > 1 else float("nan")


def uses_structure(learner: LearnerParams | None, gnn: GnnParams) -> bool:
    return learner is not None and gnn.lam < 1.0


@dataclass
class Step:
    """Outputs of one refinement iteration."""

    gamma: Tensor | None
    Z: Tensor
    logits: Tensor
    L_s: Tensor
    L_r: float = 0.0
    L_e: Tensor | None = None
    surrogate: Tensor | None = None


def refine_once(
    state: GraphState,
    Z_prev: Tensor | None,
    learner: LearnerParams | None,
    config: TrainConfig,
    train: bool = True,
    learn_structure: bool = False,
) -> Step:
    """One structure-then-representation update.

    ``Z_prev=None`` starts from the encoder.  With ``learn_structure`` the
    entropy and score-function terms are built as well; they reach the
    learner weights only, unless ``reinforce_into_embeddings`` is set.
    """
    g = state.graph
    rng = state.rng if train else None
    if not uses_structure(learner, state.gnn):
        L_s, Z, logits = loss_supervised(g, None, state.gnn, rng)
        return Step(None, Z, logits, L_s)
    Z_in = encode(g, state.gnn) if Z_prev is None else Z_prev
    gamma = compute_gamma(Z_in, state.pivots, learner, on_degenerate="zero")
    L_s, Z, logits = loss_supervised(g, gamma, state.gnn, rng)
    step = Step(gamma, Z, logits, L_s)
    if not learn_structure:
        return step
    gamma_theta = gamma
    if Z_in.requires_grad and not config.reinforce_into_embeddings:
        gamma_theta = compute_gamma(Z_in.detach(), state.pivots, learner, on_degenerate="zero")
    step.L_e = loss_entropy(gamma_theta)
    if config.alpha > 0 or config.rho > 0:
        if config.samples_k < 2:
            raise ConfigError("the reward baseline needs samples_k >= 2")
        samples = sample_structures(gamma_theta.value, config.samples_k, state.rng)
        scale = 1.0 / (g.n_nodes * len(state.pivots) ** 2) if config.reward_normalize else 1.0
        rewards = np.array(
            [
                scale * reg_reward(pivot_pivot(b), None, config.alpha, config.rho, state.pivot_dists)
                for b in samples
            ]
        )
        step.surrogate = reinforce_surrogate(gamma_theta, samples, rewards, config.baseline)
        step.L_r = float(-rewards.mean())
    return step


def _grads(params: list[Tensor]) -> list[np.ndarray]:
    out = [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]
    for p in params:
        p.grad = None
    return out


def run_epoch(
    state: GraphState,
    learner: LearnerParams | None,
    config: TrainConfig,
    learner_opt: SGD | None = None,
    epoch: int = 0,
) -> list[IterRecord]:
    """Refine until Gamma converges, then take one optimizer step.

    The step direction is the first iteration's gradient plus the average
    gradient of the later iterations.  The learner is updated only when
    ``learner_opt`` is given.
    """
    learn = learner_opt is not None and learner is not None and learner.parametric
    params = state.gnn.parameters() + (learner.parameters() if learn else [])
    for p in params:
        p.grad = None
    first: list[np.ndarray] | None = None
    rest = [np.zeros_like(p.value) for p in params]
    records: list[IterRecord] = []
    active = uses_structure(learner, state.gnn)
    max_iters = config.max_iters if active else 1
    Z_prev, gamma_prev = None, None
    t = 0
    for t in range(1, max_iters + 1):
        with Tape():
            step = refine_once(state, Z_prev, learner, config, True, learn)
            loss = step.L_s
            if step.L_e is not None:
                loss = loss + step.L_e
            if step.surrogate is not None:
                loss = loss + step.surrogate
            if not np.isfinite(loss.value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, iteration {t}")
            ad.backward(loss)
        grads = _grads(params)
        if first is None:
            first = grads
        else:
            rest = [r + gr for r, gr in zip(rest, grads)]
        gamma_val = None if step.gamma is None else step.gamma.value
        delta = gamma_change(gamma_val, gamma_prev) if gamma_val is not None else 0.0
        records.append(
            IterRecord(
                epoch,
                t,
                float(step.L_s.value),
                step.L_r,
                float(step.L_e.value) if step.L_e is not None else 0.0,
                float("nan"),
                _structure_homophily(state.graph, gamma_val) if gamma_val is not None else float("nan"),
                delta,
            )
        )
        if not active:
            break
        Z_prev, gamma_prev = step.Z.detach(), gamma_val
        if t > 1 and delta < config.tol:
            break
    scale = 1.0 / (t - 1) if t > 1 else 0.0
    for p, f, r in zip(params, first, rest):
        p.grad = f + scale * r
    state.optimizer.step()
    state.optimizer.zero_grad()
    if learn:
        learner_opt.step()
        learner_opt.zero_grad()
    return records


@dataclass
class Inference:
    logits: np.ndarray
    gamma: np.ndarray | None
    n_iters: int


def infer(state: GraphState, learner: LearnerParams | None, config: TrainConfig) -> Inference:
    """Deterministic refinement without dropout or gradients."""
    with ad.no_grad():
        if not uses_structure(learner, state.gnn):
            step = refine_once(state, None, learner, config, train=False)
            return Inference(step.logits.value, None, 1)
        Z_prev, gamma_prev = None, None
        t = 0
        for t in range(1, config.max_iters + 1):
            step = refine_once(state, Z_prev, learner, config, train=False)
            delta = gamma_change(step.gamma.value, gamma_prev)
            Z_prev, gamma_prev = step.Z, step.gamma.value
            if t > 1 and delta < config.tol:
                break
        return Inference(step.logits.value, gamma_prev, t)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return float("nan")
    return float((logits[mask].argmax(axis=1) == labels[mask]).mean())


# ---------------------------------------------------------------------------
# source training and target transfer
# ---------------------------------------------------------------------------


@dataclass
class SourceResult:
    learner: LearnerParams
    states: list[GraphState]
    traces: list[EpochTrace]
    val_history: list[list[float]]


def train_sources(
    graphs: list[Graph],
    config: TrainConfig,
    learner: LearnerParams | None = None,
    names: list[str] | None = None,
    log: Callable[[str], None] | None = None,
) -> SourceResult:
    """Train the shared learner over ``episodes`` passes of the source graphs.

    Each source keeps its own GNN and optimizer state across episodes.  Pass
    ``learner`` to continue from existing weights.
    """
    if not graphs:
        raise ConfigError("at least one source graph required")
    names = names or [f"source{i}" for i in range(len(graphs))]
    if learner is None:
        learner = init_learner(
            config.hidden, config.heads, config.threshold, config.similarity, config.seed, config.knn_k
        )
    elif learner.dim != config.hidden:
        raise ConfigError(f"learner dim {learner.dim} != hidden {config.hidden}")
    learner.unfreeze()
    learner_opt = make_optimizer(config.optimizer, learner.parameters(), config.lr, config.weight_decay)
    states = [make_state(g, config, n) for g, n in zip(graphs, names)]
    traces = [EpochTrace() for _ in graphs]
    history: list[list[float]] = [[] for _ in graphs]
    epoch_counter = [0] * len(graphs)
    for episode in range(config.episodes):
        for i, state in enumerate(states):
            for _ in range(config.epochs):
                epoch = epoch_counter[i]
                try:
                    recs = run_epoch(state, learner, config, learner_opt, epoch)
                    logits = infer(state, learner, config).logits
                except NumericalError as exc:
                    raise DivergenceError(f"{state.name}: {exc}", traces[i]) from exc
                val = accuracy(logits, state.graph.labels, state.graph.valid_mask)
                for r in recs:
                    r.val_acc = val
                traces[i].extend(recs)
                history[i].append(val)
                epoch_counter[i] += 1
            if log:
                log(f"episode {episode} {state.name}: val_acc={history[i][-1]:.4f}")
    return SourceResult(learner, states, traces, history)


@dataclass
class TargetResult:
    test_acc: float
    val_acc: float
    best_epoch: int
    epochs_run: int
    trace: EpochTrace
    state: GraphState
    wall_clock_s: float
    final_gamma: np.ndarray | None = None
    best_gamma: np.ndarray | None = None


def train_target(
    g: Graph,
    learner: LearnerParams | None,
    config: TrainConfig,
    seed: int | None = None,
    diagnostics: Callable[[int, GraphState, Inference], None] | None = None,
) -> TargetResult:
    """Train only a fresh GNN on ``g`` with the learner frozen.

    ``learner=None`` (or ``lam == 1``) is plain GCN training.  Reports the
    test accuracy at the best validation epoch, with early stopping after
    ``patience`` epochs without improvement.  ``diagnostics`` is called with
    the evaluation pass at epoch 0 (before training) and after every epoch.
    """
    start = time.perf_counter()
    seed = config.seed if seed is None else seed
    cfg = config.replace(seed=seed)
    state = make_state(g, cfg, "target")
    if learner is not None:
        if learner.dim != cfg.hidden:
            raise ConfigError(
                f"checkpoint embedding dim {learner.dim} != hidden {cfg.hidden}; the learner cannot be reused"
            )
        was = (learner.w1.requires_grad, learner.w2.requires_grad)
        before = learner.flat().copy()
        learner.freeze()
    trace = EpochTrace()
    labels = state.graph.labels
    best = (-1.0, float("nan"), -1, None)
    last = None
    epoch = 0
    try:
        if diagnostics:
            diagnostics(0, state, infer(state, learner, cfg))
        since = 0
        for epoch in range(1, cfg.target_epochs + 1):
            try:
                recs = run_epoch(state, learner, cfg, None, epoch)
                last = infer(state, learner, cfg)
            except NumericalError as exc:
                raise DivergenceError(str(exc), trace) from exc
            val = accuracy(last.logits, labels, state.graph.valid_mask)
            for r in recs:
                r.val_acc = val
            trace.extend(recs)
            if diagnostics:
                diagnostics(epoch, state, last)
            if val > best[0]:
                test = accuracy(last.logits, labels, state.graph.test_mask)
                best = (val, test, epoch, last.gamma)
                since = 0
            else:
                since += 1
                if since >= cfg.patience:
                    break
    finally:
        if learner is not None:
            learner.w1.requires_grad, learner.w2.requires_grad = was
    if learner is not None and not np.array_equal(before, learner.flat()):
        raise AssertionError("learner weights changed during target training")
    return TargetResult(
        test_acc=best[1],
        val_acc=best[0],
        best_epoch=best[2],
        epochs_run=epoch,
        trace=trace,
        state=state,
        wall_clock_s=time.perf_counter() - start,
        final_gamma=None if last is None else last.gamma,
        best_gamma=best[3],
    )
