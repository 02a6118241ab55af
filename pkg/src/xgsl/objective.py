"""The three training signals: supervised loss, structure reward and entropy."""

from __future__ import annotations

import numpy as np

from xgsl import autodiff as ad
from xgsl.autodiff import Tensor
from xgsl.config import BASELINES, ConfigError
from xgsl.gnn import GnnParams, gnn_forward
from xgsl.graph import Graph
from xgsl.learner import CLAMP_EPS


def loss_supervised(g: Graph, gamma, gnn: GnnParams, rng=None, idx=None):
    """Cross-entropy on the training nodes with ``gamma`` as the expected structure.

    Returns ``(loss, Z, logits)`` so callers can reuse the forward pass.
    """
    idx = np.flatnonzero(g.train_mask) if idx is None else np.asarray(idx)
    if idx.size == 0:
        raise ConfigError("empty training mask")
    Z, logits = gnn_forward(g, gamma, gnn, rng)
    return ad.cross_entropy(logits, g.labels, idx), Z, logits


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def reg_reward(E, pivot_features, alpha: float, rho: float, dists=None) -> float:
    """Smoothness-plus-sparsity reward of a pivot-pivot structure (always <= 0).

    ``-alpha * sum_pq E_pq ||x_p - x_q||^2 - rho * ||E||_F^2``.  Pass
    precomputed ``dists`` to avoid recomputing pivot distances per sample.
    """
    E = np.asarray(E, dtype=np.float64)
    if dists is None:
        dists = pairwise_sq_dists(np.asarray(pivot_features, dtype=np.float64))
    smooth = float((E * dists).sum())
    return -alpha * smooth - rho * float((E * E).sum())


def advantages(rewards, baseline: str = "leave-one-out") -> np.ndarray:
    """Centred rewards.

    ``mean`` subtracts the average over all K samples.  ``leave-one-out``
    subtracts the average of the other K - 1 samples, which keeps the
    estimator unbiased; it equals the mean-centred value times K / (K - 1).
    """
    r = np.asarray(rewards, dtype=np.float64)
    K = r.size
    if K < 2:
        raise ConfigError("a reward baseline needs at least two samples")
    if baseline not in BASELINES:
        raise ConfigError(f"baseline must be one of {BASELINES}")
    centred = r - r.mean()
    return centred * K / (K - 1) if baseline == "leave-one-out" else centred


def reinforce_surrogate(gamma, samples, rewards, baseline: str = "leave-one-out") -> Tensor:
    """Scalar whose gradient is the score-function estimate for the reward term.

    ``-(1/K) sum_k A_k log pi(B_k)``; rewards are treated as constants.
    """
    gamma = ad.as_tensor(gamma)
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[1:] != gamma.shape:
        raise ValueError(f"samples must have shape (K, {gamma.shape}), got {samples.shape}")
    adv = advantages(rewards, baseline)
    K = len(adv)
    # sum_k A_k log pi(B_k) collapses to two weighted sums over entries
    w1 = np.tensordot(adv, samples.astype(np.float64), axes=1)
    w0 = adv.sum() - w1
    c = ad.clamp(gamma, CLAMP_EPS, 1.0 - CLAMP_EPS)
    total = ad.sum_all(ad.log(c) * w1 + ad.log(1.0 - c) * w0)
    return ad.scale(total, -1.0 / K)


def loss_entropy(gamma) -> Tensor:
    """Mean negative Bernoulli entropy of the node-pivot matrix, in [-log 2, 0]."""
    c = ad.clamp(ad.as_tensor(gamma), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return ad.mean_all(c * ad.log(c) + (1.0 - c) * ad.log(1.0 - c))
