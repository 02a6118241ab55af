#!/usr/bin/env python3
"""Convert raw Planetoid citation files (Cora, CiteSeer, PubMed) to the xgsl dataset format.

Expects the usual ``ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`` files
in RAW_DIR; obtaining them is left to the user.  The standard split is kept:
the first ``x`` rows train, the next 500 validate, ``test.index`` tests.

    python3 scripts/export_planetoid.py RAW_DIR cora OUT_DIR
"""

from __future__ import annotations

import pickle
import sys
from pathlib import Path

import click
import numpy as np
import scipy.sparse as sp

from xgsl.data import DatasetBundle, save_dataset
from xgsl.graph import Graph, adjacency_from_edges

PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _unpickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def read_planetoid(raw_dir, name: str) -> Graph:
    raw = Path(raw_dir)
    x, y, tx, ty, allx, ally, adjlist = (_unpickle(raw / f"ind.{name}.{p}") for p in PARTS)
    test_index = np.loadtxt(raw / f"ind.{name}.test.index", dtype=int, ndmin=1)
    test_sorted = np.sort(test_index)
    if name == "citeseer":
        # isolated test nodes are missing from tx; pad them with zero rows
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext
    features = sp.vstack([sp.csr_matrix(allx), sp.csr_matrix(tx)]).tolil()
    onehot = np.vstack([np.asarray(ally), np.asarray(ty)])
    features[test_index, :] = features[test_sorted, :]
    onehot[test_index, :] = onehot[test_sorted, :]
    n = features.shape[0]
    labels = onehot.argmax(axis=1)
    # nodes with no label (citeseer padding) get class 0 and never enter a mask
    unlabeled = onehot.sum(axis=1) == 0

    edges = {(min(u, v), max(u, v)) for u, nbrs in adjlist.items() for v in nbrs if u != v and u < n and v < n}
    edges = np.array(sorted(edges), dtype=int).reshape(-1, 2)

    train = np.zeros(n, bool)
    train[: x.shape[0]] = True
    valid = np.zeros(n, bool)
    valid[x.shape[0] : x.shape[0] + 500] = True
    test = np.zeros(n, bool)
    test[test_index] = True
    test &= ~unlabeled
    valid &= ~(test | unlabeled)
    return Graph(
        adjacency_from_edges(edges, n),
        np.asarray(features.todense(), dtype=np.float64),
        labels,
        onehot.shape[1],
        train_mask=train,
        valid_mask=valid,
        test_mask=test,
    )


@click.command()
@click.argument("raw_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("name", type=click.Choice(["cora", "citeseer", "pubmed"]))
@click.argument("out_dir", type=click.Path(file_okay=False))
def main(raw_dir, name, out_dir):
    g = read_planetoid(raw_dir, name)
    save_dataset(DatasetBundle(g, name, {"mode": "explicit"}, ""), out_dir)
    click.echo(f"{name}: {g.n_nodes} nodes, {g.n_edges} edges, {g.n_classes} classes -> {out_dir}")


if __name__ == "__main__":
    sys.exit(main())
