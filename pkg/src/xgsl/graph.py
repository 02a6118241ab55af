"""Graph data model, normalizations and structure statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.sparse as sp

from xgsl.autodiff import DomainError

SparseMatrix = sp.csr_matrix


class StructuralError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-attributed graph.

    ``adjacency`` is a symmetric binary CSR matrix without stored diagonal.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    train_mask: np.ndarray = field(default=None)
    valid_mask: np.ndarray = field(default=None)
    test_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.features.shape[0]
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64, copy=True)
        if adj.shape != (n, n):
            raise StructuralError(f"adjacency shape {adj.shape} does not match {n} nodes")
        adj.sum_duplicates()
        adj.eliminate_zeros()
        if adj.diagonal().any():
            raise StructuralError("adjacency stores self-loops")
        if (adj != adj.T).nnz:
            raise StructuralError("adjacency is not symmetric")
        if adj.nnz and not np.all(adj.data == 1.0):
            raise StructuralError("adjacency is not binary")
        features = np.asarray(self.features, dtype=np.float64)
        if not np.all(np.isfinite(features)):
            raise StructuralError("features contain NaN or Inf")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise StructuralError("one label per node required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise StructuralError("label outside [0, n_classes)")
        masks = []
        for m in (self.train_mask, self.valid_mask, self.test_mask):
            masks.append(np.zeros(n, bool) if m is None else np.asarray(m, dtype=bool))
        if any(m.shape != (n,) for m in masks):
            raise StructuralError("mask length must equal node count")
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise StructuralError("train/valid/test masks overlap")
        adj.data.flags.writeable = False
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        for name, m in zip(("train_mask", "valid_mask", "test_mask"), masks):
            object.__setattr__(self, name, _frozen(m))

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @cached_property
    def norm_adjacency(self) -> sp.csr_matrix:
        return sym_normalize(self.adjacency)

    @cached_property
    def sparse_features(self) -> sp.csr_matrix | None:
        """CSR copy of the features when they are mostly zeros, else None."""
        density = np.count_nonzero(self.features) / max(self.features.size, 1)
        return sp.csr_matrix(self.features) if density < 0.1 else None

    def edge_list(self) -> np.ndarray:
        """Canonical ``u < v`` edge pairs, sorted."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    def replace(self, **changes) -> "Graph":
        fields = dict(
            adjacency=self.adjacency,
            features=self.features,
            labels=self.labels,
            n_classes=self.n_classes,
            train_mask=self.train_mask,
            valid_mask=self.valid_mask,
            test_mask=self.test_mask,
        )
        fields.update(changes)
        return Graph(**fields)

    def with_edges(self, edges: np.ndarray) -> "Graph":
        return self.replace(adjacency=adjacency_from_edges(edges, self.n_nodes))


def adjacency_from_edges(edges, n_nodes: int) -> sp.csr_matrix:
    """Symmetric binary adjacency from an edge list; self-loops and duplicates dropped."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return adj


def sym_normalize(adjacency) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with D the degree matrix of ``A + I``."""
    adj = sp.csr_matrix(adjacency, dtype=np.float64)
    if adj.shape[0] != adj.shape[1]:
        raise StructuralError(f"adjacency must be square, got {adj.shape}")
    adj = adj + sp.identity(adj.shape[0], format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    return sp.csr_matrix(inv_sqrt @ adj @ inv_sqrt)


def row_normalize(m):
    """Rows divided by their sums; zero rows stay zero.  Dense or sparse input."""
    if sp.issparse(m):
        m = sp.csr_matrix(m, dtype=np.float64)
        if m.nnz and m.data.min() < 0:
            raise DomainError("row_normalize requires non-negative entries")
        sums = np.asarray(m.sum(axis=1)).ravel()
        inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
        return sp.csr_matrix(sp.diags(inv) @ m)
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise DomainError("row_normalize requires non-negative entries")
    sums = m.sum(axis=1, keepdims=True)
    return np.divide(m, sums, out=np.zeros_like(m), where=sums > 0)


@dataclass(frozen=True)
class PivotStructure:
    """Latent structure ``Gamma Gamma^T`` (off-diagonal) kept in factored form."""

    gamma: np.ndarray

    def neighbor_mass(self, onehot: np.ndarray) -> np.ndarray:
        g = np.asarray(self.gamma, dtype=np.float64)
        self_weight = (g * g).sum(axis=1, keepdims=True)
        return g @ (g.T @ onehot) - self_weight * onehot


Structure = Union[sp.spmatrix, np.ndarray, PivotStructure, None]


def _neighbor_mass(g: Graph, structure: Structure) -> np.ndarray:
    """Per node, the (weighted) number of neighbours in each class: N x C."""
    onehot = np.eye(g.n_classes)[g.labels]
    if structure is None:
        structure = g.adjacency
    if isinstance(structure, PivotStructure):
        return structure.neighbor_mass(onehot)
    if sp.issparse(structure):
        s = sp.csr_matrix(structure, dtype=np.float64)
        s = s - sp.diags(s.diagonal())
        return np.asarray(s @ onehot)
    s = np.array(structure, dtype=np.float64)
    np.fill_diagonal(s, 0.0)
    return s @ onehot


def homophily_ratio(g: Graph, structure: Structure = None) -> float:
    """Class-insensitive edge homophily.

    ``(1 / (C - 1)) * sum_k max(0, h_k - |C_k| / N)`` where ``h_k`` is the
    fraction of edge mass leaving class-k nodes that lands in class k.
    Self-pairs are ignored.
    """
    C = g.n_classes
    if C < 2:
        raise DomainError("homophily_ratio needs at least two classes")
    mass = _neighbor_mass(g, structure)
    counts = np.bincount(g.labels, minlength=C)
    total = 0.0
    for k in range(C):
        rows = mass[g.labels == k]
        denom = rows.sum()
        h_k = rows[:, k].sum() / denom if denom > 0 else 0.0
        total += max(0.0, h_k - counts[k] / g.n_nodes)
    return total / (C - 1)


def neighborhood_variance(g: Graph, structure: Structure = None) -> float:
    """Class-size weighted variance of neighbour label distributions.

    Nodes without neighbour mass are skipped.
    """
    mass = _neighbor_mass(g, structure)
    sums = mass.sum(axis=1)
    live = sums > 1e-12
    dist = np.zeros_like(mass)
    dist[live] = mass[live] / sums[live, None]
    counts = np.bincount(g.labels, minlength=g.n_classes)
    result = 0.0
    for k in range(g.n_classes):
        members = dist[(g.labels == k) & live]
        if len(members) == 0:
            continue
        spread = ((members - members.mean(axis=0)) ** 2).sum(axis=1).mean()
        result += counts[k] / g.n_nodes * spread
    return float(result)


def delete_edges(g: Graph, fraction: float, seed) -> Graph:
    """Remove ``floor(fraction * |E|)`` undirected edges uniformly at random."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    edges = g.edge_list()
    n_drop = int(np.floor(fraction * len(edges)))
    if n_drop == 0:
        return g
    rng = np.random.default_rng(seed)
    keep = np.ones(len(edges), bool)
    keep[rng.choice(len(edges), size=n_drop, replace=False)] = False
    return g.with_edges(edges[keep])


def inject_edges(g: Graph, fraction: float, seed) -> Graph:
    """Add ``floor(fraction * |E|)`` new undirected edges between random non-adjacent pairs."""
    if fraction < 0:
        raise ValueError("fraction must be non-negative")
    edges = g.edge_list()
    n_add = int(np.floor(fraction * len(edges)))
    n = g.n_nodes
    if n_add > n * (n - 1) // 2 - len(edges):
        raise ValueError("not enough non-edges to inject")
    rng = np.random.default_rng(seed)
    present = set(map(tuple, edges.tolist()))
    added = []
    while len(added) < n_add:
        u, v = rng.integers(0, n, size=2)
        if u == v:
            continue
        pair = (int(min(u, v)), int(max(u, v)))
        if pair in present:
            continue
        present.add(pair)
        added.append(pair)
    if not added:
        return g
    return g.with_edges(np.concatenate([edges, np.asarray(added)]))
