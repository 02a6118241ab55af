"""Shared structure learner: node-pivot affinities, sampling and scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xgsl import autodiff as ad
from xgsl.autodiff import Tensor
from xgsl.config import SIMILARITY_MODES, ConfigError

CLAMP_EPS = 1e-6


@dataclass
class LearnerParams:
    """``heads`` pairs of element-wise weight vectors over d-dim embeddings."""

    w1: Tensor
    w2: Tensor
    threshold: float = 4e-5
    similarity_mode: str = "weighted-cosine"
    knn_k: int = 10

    def __post_init__(self):
        if self.w1.shape != self.w2.shape or self.w1.ndim != 2:
            raise ConfigError("w1 and w2 must both have shape (heads, dim)")
        if self.heads < 1:
            raise ConfigError("at least one head required")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError("threshold must lie in [0, 1)")
        if self.similarity_mode not in SIMILARITY_MODES:
            raise ConfigError(f"unknown similarity mode {self.similarity_mode!r}")
        if not (np.all(np.isfinite(self.w1.value)) and np.all(np.isfinite(self.w2.value))):
            raise ConfigError("learner weights must be finite")

    @property
    def heads(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def parametric(self) -> bool:
        return self.similarity_mode == "weighted-cosine"

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.w2] if self.parametric else []

    def freeze(self) -> None:
        self.w1.requires_grad = False
        self.w2.requires_grad = False

    def unfreeze(self) -> None:
        self.w1.requires_grad = self.parametric
        self.w2.requires_grad = self.parametric

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.value.ravel(), self.w2.value.ravel()])

    def to_dict(self) -> dict:
        return {
            "heads": self.heads,
            "dim": self.dim,
            "threshold": self.threshold,
            "similarity_mode": self.similarity_mode,
            "knn_k": self.knn_k,
            "w1": self.w1.value.tolist(),
            "w2": self.w2.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerParams":
        w1 = np.asarray(d["w1"], dtype=np.float64).reshape(d["heads"], d["dim"])
        w2 = np.asarray(d["w2"], dtype=np.float64).reshape(d["heads"], d["dim"])
        return cls(
            Tensor(w1),
            Tensor(w2),
            threshold=float(d["threshold"]),
            similarity_mode=d["similarity_mode"],
            knn_k=int(d.get("knn_k", 10)),
        )


def init_learner(
    dim: int,
    heads: int = 4,
    threshold: float = 4e-5,
    similarity_mode: str = "weighted-cosine",
    seed=0,
    knn_k: int = 10,
    jitter: float = 0.1,
) -> LearnerParams:
    """Weights start near one so every head begins as plain cosine similarity."""
    rng = np.random.default_rng([int(seed), 11])
    w1 = 1.0 + jitter * rng.standard_normal((heads, dim))
    w2 = 1.0 + jitter * rng.standard_normal((heads, dim))
    params = LearnerParams(Tensor(w1), Tensor(w2), threshold, similarity_mode, knn_k)
    params.unfreeze()
    return params


def select_pivots(n_nodes: int, n_pivots: int, seed) -> np.ndarray:
    """``n_pivots`` distinct node ids drawn uniformly without replacement (sorted)."""
    if not 1 <= n_pivots < n_nodes:
        raise ConfigError(f"need 1 <= pivots < nodes, got pivots={n_pivots}, nodes={n_nodes}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_nodes, size=n_pivots, replace=False))


def compute_gamma(Z, pivots, params: LearnerParams, on_degenerate: str = "raise") -> Tensor:
    """Node-pivot affinity matrix, N x P, entries in [0, 1].

    ``on_degenerate="zero"`` gives all-zero affinities to embeddings whose
    (scaled) norm underflows instead of raising.
    """
    Z = ad.as_tensor(Z)
    pivots = np.asarray(pivots, dtype=np.int64)
    if pivots.size and (pivots.min() < 0 or pivots.max() >= Z.shape[0]):
        raise ConfigError("pivot index out of range")
    if Z.shape[1] != params.dim:
        raise ConfigError(f"embedding dim {Z.shape[1]} != learner dim {params.dim}")

    mode = params.similarity_mode
    if mode != "weighted-cosine":
        with ad.no_grad():
            return Tensor(_nonparametric_gamma(Z.value, pivots, params, on_degenerate))

    Zp = ad.take_rows(Z, pivots)
    total = None
    for h in range(params.heads):
        a = Z * ad.take_rows(params.w1, [h])
        b = Zp * ad.take_rows(params.w2, [h])
        cos = ad.cosine_similarity(a, b, on_degenerate=on_degenerate)
        total = cos if total is None else total + cos
    return ad.threshold(ad.scale(total, 1.0 / params.heads), params.threshold)


def _nonparametric_gamma(Z, pivots, params, on_degenerate) -> np.ndarray:
    Zp = Z[pivots]
    if params.similarity_mode == "dot-product":
        scores = Z @ Zp.T
        top = scores.max()
        scores = scores / top if top > 0 else np.zeros_like(scores)
        return np.where(scores >= max(params.threshold, 0.0), scores, 0.0)
    cos = ad.cosine_similarity(Z, Zp, on_degenerate=on_degenerate).value
    if params.similarity_mode == "cosine":
        return np.where(cos >= max(params.threshold, 0.0), cos, 0.0)
    # knn: each node links to its k most similar pivots
    k = min(params.knn_k, Zp.shape[0])
    top = np.argpartition(-cos, k - 1, axis=1)[:, :k]
    out = np.zeros_like(cos)
    np.put_along_axis(out, top, 1.0, axis=1)
    return out * (cos > 0)


def edge_prob(z_u, z_v, params: LearnerParams) -> float:
    Z = np.stack([np.asarray(z_u, float), np.asarray(z_v, float)])
    with ad.no_grad():
        return float(compute_gamma(Tensor(Z), [1], params).value[0, 0])


def sample_structures(gamma, k: int, seed) -> np.ndarray:
    """``k`` independent Bernoulli draws of the node-pivot matrix, shape (k, N, P)."""
    g = np.asarray(gamma.value if isinstance(gamma, Tensor) else gamma, dtype=np.float64)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if g.size and (g.min() < 0 or g.max() > 1):
        raise ad.DomainError("Bernoulli parameters must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return rng.random((k,) + g.shape) < g


def log_prob(b1, gamma) -> Tensor:
    """Log-probability of one binary node-pivot structure under ``gamma``."""
    gamma = ad.as_tensor(gamma)
    b1 = np.asarray(b1, dtype=np.float64)
    if b1.shape != gamma.shape:
        raise ValueError(f"structure shape {b1.shape} != gamma shape {gamma.shape}")
    c = ad.clamp(gamma, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return ad.sum_all(ad.log(c) * b1 + ad.log(1.0 - c) * (1.0 - b1))


def pivot_pivot(b1) -> np.ndarray:
    """Pivot-pivot co-membership counts ``B1^T B1``."""
    b = np.asarray(b1)
    if b.dtype == bool or b.shape[0] < 2**24:
        m = b.astype(np.float32)
        return np.rint(m.T @ m).astype(np.int64)
    b = b.astype(np.int64)
    return b.T @ b
