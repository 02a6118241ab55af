import importlib.util
import pickle
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from click.testing import CliRunner

from xgsl.data import load_dataset

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "export_planetoid.py"


@pytest.fixture(scope="module")
def export():
    spec = importlib.util.spec_from_file_location("export_planetoid", SCRIPT)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def write_raw(root, name, tx_rows, test_index, n_allx=6, n_train=2):
    rng = np.random.default_rng(0)
    root.mkdir(parents=True, exist_ok=True)
    allx = rng.random((n_allx, 4))
    ally = np.eye(3)[np.arange(n_allx) % 3]
    tx = rng.random((len(tx_rows), 4))
    ty = np.eye(3)[np.arange(len(tx_rows)) % 3]
    graph = {0: [1, 2, 0], 1: [0], 6: [8], 7: [3, 99]}
    parts = {
        "x": sp.csr_matrix(allx[:n_train]),
        "y": ally[:n_train],
        "tx": sp.csr_matrix(tx),
        "ty": ty,
        "allx": sp.csr_matrix(allx),
        "ally": ally,
        "graph": graph,
    }
    for key, value in parts.items():
        with open(root / f"ind.{name}.{key}", "wb") as fh:
            pickle.dump(value, fh)
    (root / f"ind.{name}.test.index").write_text("\n".join(map(str, test_index)) + "\n")
    return allx, ally, tx, ty


class TestReadPlanetoid:
    def test_test_rows_reordered(self, export, tmp_path):
        test_index = [8, 6, 7]
        allx, ally, tx, ty = write_raw(tmp_path, "cora", range(3), test_index)
        g = export.read_planetoid(tmp_path, "cora")
        assert g.n_nodes == 9 and g.n_classes == 3
        np.testing.assert_allclose(g.features[:6], allx)
        for i, node in enumerate(test_index):
            np.testing.assert_allclose(g.features[node], tx[i])
            assert g.labels[node] == ty[i].argmax()

    def test_masks_and_edges(self, export, tmp_path):
        write_raw(tmp_path, "cora", range(3), [8, 6, 7])
        g = export.read_planetoid(tmp_path, "cora")
        np.testing.assert_array_equal(np.flatnonzero(g.train_mask), [0, 1])
        np.testing.assert_array_equal(np.flatnonzero(g.valid_mask), [2, 3, 4, 5])
        np.testing.assert_array_equal(np.flatnonzero(g.test_mask), [6, 7, 8])
        # self loop and out-of-range neighbor dropped, duplicates merged
        assert sorted(map(tuple, g.edge_list())) == [(0, 1), (0, 2), (3, 7), (6, 8)]

    def test_citeseer_padding(self, export, tmp_path):
        # node 7 is an isolated test node missing from tx
        write_raw(tmp_path, "citeseer", range(2), [8, 6])
        g = export.read_planetoid(tmp_path, "citeseer")
        assert g.n_nodes == 9
        np.testing.assert_array_equal(g.features[7], 0.0)
        assert not g.test_mask[7] and not g.valid_mask[7]
        np.testing.assert_array_equal(np.flatnonzero(g.test_mask), [6, 8])

    def test_cli_round_trip(self, export, tmp_path):
        write_raw(tmp_path / "raw", "pubmed", range(3), [7, 8, 6])
        res = CliRunner().invoke(export.main, [str(tmp_path / "raw"), "pubmed", str(tmp_path / "out")])
        assert res.exit_code == 0, res.output
        b = load_dataset(tmp_path / "out")
        assert b.graph.n_nodes == 9
        np.testing.assert_array_equal(np.flatnonzero(b.graph.test_mask), [6, 7, 8])
