"""Backbone GNN: GCN propagation blended with two-step pivot propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from xgsl import autodiff as ad
from xgsl.autodiff import NumericalError, Tensor
from xgsl.config import ENCODER_MODES, ConfigError
from xgsl.graph import Graph


@dataclass
class GnnParams:
    encoder: Tensor
    weights: list[Tensor]
    lam: float = 0.5
    encoder_mode: str = "gcn"
    dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"encoder_mode must be one of {ENCODER_MODES}")
        shapes = [w.shape for w in self.weights]
        for (_, out_dim), (in_dim, _) in zip(shapes, shapes[1:]):
            if out_dim != in_dim:
                raise ConfigError(f"layer shapes do not chain: {shapes}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def hidden(self) -> int:
        return self.encoder.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.encoder, *self.weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters()])


def glorot(shape, rng) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_gnn(
    in_dim: int,
    hidden: int,
    n_classes: int,
    seed=0,
    lam: float = 0.5,
    encoder_mode: str = "gcn",
    dropout: float = 0.0,
    depth: int = 2,
) -> GnnParams:
    """Glorot-initialised weights; each matrix draws from its own seeded stream."""
    seed = list(np.atleast_1d(seed).astype(np.int64))
    dims = [in_dim] + [hidden] * (depth - 1) + [n_classes]
    weights = [
        Tensor(glorot((dims[i], dims[i + 1]), np.random.default_rng(seed + [100 + i])), True)
        for i in range(depth)
    ]
    encoder = Tensor(glorot((in_dim, hidden), np.random.default_rng(seed + [99])), True)
    return GnnParams(encoder, weights, lam, encoder_mode, dropout)


def _input(g: Graph):
    """Node features, sparse when the graph's features are mostly zeros."""
    xs = g.sparse_features
    return xs if xs is not None else Tensor(g.features)


def _dropout(h: Tensor, p: float, rng) -> Tensor:
    if p <= 0 or rng is None:
        return h
    return h * ((rng.random(h.shape) >= p) / (1 - p))


def _transform(x, W: Tensor) -> Tensor:
    return ad.spmm(x, W) if sp.issparse(x) else ad.matmul(x, W)


def encode(g: Graph, params: GnnParams) -> Tensor:
    """Initial embeddings fed to the structure learner.

    ``relu(A_norm X W_enc)`` for the gcn encoder, ``relu(X W_enc)`` for mlp.
    """
    if g.n_features != params.encoder.shape[0]:
        raise ConfigError(f"feature dim {g.n_features} != encoder input {params.encoder.shape[0]}")
    xw = _transform(_input(g), params.encoder)
    if params.encoder_mode == "gcn":
        xw = ad.spmm(g.norm_adjacency, xw)
    return ad.relu(xw)


def two_step_mp(Z, gamma) -> Tensor:
    """Node-to-pivot then pivot-to-node averaging: ``RowNorm(G) (RowNorm(G^T) Z)``."""
    gamma = ad.as_tensor(gamma)
    to_pivots = ad.matmul(ad.row_normalize(ad.transpose(gamma)), Z)
    return ad.matmul(ad.row_normalize(gamma), to_pivots)


def gnn_forward(g: Graph, gamma, params: GnnParams, rng=None) -> tuple[Tensor, Tensor]:
    """Blended message passing; returns (penultimate embeddings, logits).

    With ``lam == 1`` the latent branch is skipped entirely and ``gamma`` may
    be None.  ``rng`` enables dropout on the hidden activations (training
    mode); the returned embeddings are taken before dropout.
    """
    if g.n_features != params.weights[0].shape[0]:
        raise ConfigError(f"feature dim {g.n_features} != first layer {params.weights[0].shape[0]}")
    lam = params.lam
    use_latent = lam < 1.0
    if use_latent and gamma is None:
        raise ConfigError("lam < 1 requires a node-pivot matrix")
    if use_latent:
        gamma = ad.as_tensor(gamma)
        if gamma.shape[0] != g.n_nodes:
            raise ConfigError("gamma must have one row per node")
        mix = ad.row_normalize(gamma)
        spread = ad.row_normalize(ad.transpose(gamma))

    h = _input(g)
    Z = None
    for layer, W in enumerate(params.weights):
        try:
            if layer > 0:
                h = _dropout(h, params.dropout, rng)
            hw = _transform(h, W)
            out = ad.spmm(g.norm_adjacency, hw)
            if use_latent:
                latent = ad.matmul(mix, ad.matmul(spread, hw))
                out = ad.add(ad.scale(out, lam), ad.scale(latent, 1.0 - lam))
            if layer < params.depth - 1:
                h = Z = ad.relu(out)
        except NumericalError as exc:
            raise NumericalError(f"layer {layer}: {exc}") from exc
    return Z, out
