import json
import logging

import numpy as np
import pytest

from xgsl.data import (
    CorruptionError,
    LabelRangeError,
    MalformedLineError,
    MissingFileError,
    RaggedRowsError,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    make_splits,
    save_dataset,
)
from xgsl.graph import homophily_ratio

from conftest import random_graph


def write_dir(root, edges="0\t1\n", features="1.0\t0.0\n0.0\t1.0\n", labels="0\n1\n", meta=None, masks=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "edges.tsv").write_text(edges)
    (root / "features.tsv").write_text(features)
    (root / "labels.tsv").write_text(labels)
    if masks is not None:
        (root / "masks.tsv").write_text(masks)
    (root / "meta.json").write_text(json.dumps(meta if meta is not None else {"n_classes": 2}))
    return root


class TestLoad:
    def test_minimal(self, tmp_path):
        b = load_dataset(write_dir(tmp_path / "d"))
        assert b.graph.n_nodes == 2 and b.graph.n_edges == 1
        assert b.graph.features.shape == (2, 2)
        assert len(b.content_hash) == 64

    def test_duplicate_edges(self, tmp_path):
        b = load_dataset(write_dir(tmp_path / "d", edges="0\t1\n0\t1\n1\t0\n"))
        assert b.graph.n_edges == 1

    def test_self_loops_dropped_with_warning(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            b = load_dataset(write_dir(tmp_path / "d", edges="0\t1\n1\t1\n0\t0\n"))
        assert b.graph.n_edges == 1
        assert "2 self-loop" in caplog.text

    def test_masks(self, tmp_path):
        b = load_dataset(write_dir(tmp_path / "d", masks="train\ntest\n"))
        np.testing.assert_array_equal(b.graph.train_mask, [True, False])
        np.testing.assert_array_equal(b.graph.test_mask, [False, True])

    def test_missing_file(self, tmp_path):
        root = write_dir(tmp_path / "d")
        (root / "labels.tsv").unlink()
        with pytest.raises(MissingFileError, match="labels.tsv"):
            load_dataset(root)

    def test_ragged_rows(self, tmp_path):
        with pytest.raises(RaggedRowsError, match=r"features.tsv:2"):
            load_dataset(write_dir(tmp_path / "d", features="1.0\t0.0\n0.0\n"))

    def test_label_out_of_range(self, tmp_path):
        with pytest.raises(LabelRangeError, match=r"labels.tsv:2"):
            load_dataset(write_dir(tmp_path / "d", labels="0\n2\n"))

    def test_malformed_edge(self, tmp_path):
        with pytest.raises(MalformedLineError, match=r"edges.tsv:1"):
            load_dataset(write_dir(tmp_path / "d", edges="0 x\n"))

    def test_hash_mismatch(self, tmp_path):
        root = tmp_path / "d"
        save_dataset(random_graph(6, 2, 2, seed=0), root)
        (root / "labels.tsv").write_text("0\n1\n0\n1\n0\n0\n")
        with pytest.raises(CorruptionError, match="sha256"):
            load_dataset(root)


class TestSave:
    def test_round_trip(self, tmp_path):
        g = random_graph(12, 3, 3, seed=1)
        back = load_dataset(save_dataset(g, tmp_path / "d")).graph
        assert (back.adjacency != g.adjacency).nnz == 0
        np.testing.assert_array_equal(back.features, g.features)
        np.testing.assert_array_equal(back.labels, g.labels)
        for m in ("train_mask", "valid_mask", "test_mask"):
            np.testing.assert_array_equal(getattr(back, m), getattr(g, m))

    def test_byte_identical(self, tmp_path):
        spec = SynthSpec(n_nodes=60, n_classes=3, feature_dim=4, seed=5)
        a = save_dataset(generate_synthetic(spec, "s"), tmp_path / "a")
        b = save_dataset(generate_synthetic(spec, "s"), tmp_path / "b")
        for name in ("edges.tsv", "features.tsv", "labels.tsv", "masks.tsv", "meta.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_canonical_edge_order(self, tmp_path):
        root = save_dataset(random_graph(10, 2, 2, seed=3), tmp_path / "d")
        rows = [tuple(map(int, line.split("\t"))) for line in (root / "edges.tsv").read_text().splitlines()]
        assert all(u < v for u, v in rows)
        assert rows == sorted(rows)


class TestSplits:
    def test_ratio_sizes(self):
        g = random_graph(1000, 1, 2, seed=0, p=0.0)
        tr, va, te = make_splits(g, ratios=(0.5, 0.25, 0.25), seed=0)
        assert (tr.sum(), va.sum(), te.sum()) == (500, 250, 250)
        assert not np.any(tr & va) and not np.any(tr & te) and not np.any(va & te)

    def test_per_class(self):
        spec = SynthSpec(n_nodes=2708, n_classes=7, p_in=0.0, p_out=0.0, feature_dim=7, seed=0)
        g = generate_synthetic(spec).graph
        tr, va, te = make_splits(g, per_class=20, n_valid=500, n_test=1000, seed=1)
        assert tr.sum() == 140
        np.testing.assert_array_equal(np.bincount(g.labels[tr]), [20] * 7)
        assert (va.sum(), te.sum()) == (500, 1000)

    def test_deterministic(self):
        g = random_graph(50, 1, 2, seed=0, p=0.0)
        a = make_splits(g, ratios=(0.5, 0.25, 0.25), seed=3)
        b = make_splits(g, ratios=(0.5, 0.25, 0.25), seed=3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_class_too_small(self):
        g = random_graph(10, 1, 2, seed=0, p=0.0)
        with pytest.raises(ValueError):
            make_splits(g, per_class=9, n_valid=0, n_test=0)


class TestSynthetic:
    def test_structure(self):
        g = generate_synthetic(SynthSpec(n_nodes=203, n_classes=4, seed=2)).graph
        assert (g.adjacency != g.adjacency.T).nnz == 0
        assert not g.adjacency.diagonal().any()
        counts = np.bincount(g.labels)
        assert counts.max() - counts.min() <= 1

    def test_no_inter_class_edges(self):
        g = generate_synthetic(SynthSpec(n_nodes=300, n_classes=4, p_in=0.05, p_out=0.0, seed=1)).graph
        e = g.edge_list()
        assert np.all(g.labels[e[:, 0]] == g.labels[e[:, 1]])
        assert homophily_ratio(g) == pytest.approx(1.0, abs=1e-12)

    def test_equal_probabilities_no_homophily(self):
        values = [
            homophily_ratio(generate_synthetic(SynthSpec(n_nodes=300, n_classes=3, p_in=0.03, p_out=0.03, seed=s)).graph)
            for s in range(20)
        ]
        assert np.mean(values) < 0.03

    def test_expected_degree(self):
        n, C, p_in, p_out = 1000, 4, 0.02, 0.002
        g = generate_synthetic(SynthSpec(n_nodes=n, n_classes=C, p_in=p_in, p_out=p_out, seed=0)).graph
        expected = n * (p_in / C + p_out * (C - 1) / C)
        mean_degree = 2 * g.n_edges / n
        assert abs(mean_degree - expected) / expected < 0.10

    def test_deterministic(self):
        spec = SynthSpec(n_nodes=100, seed=7)
        a, b = generate_synthetic(spec).graph, generate_synthetic(spec).graph
        np.testing.assert_array_equal(a.features, b.features)
        assert (a.adjacency != b.adjacency).nnz == 0

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SynthSpec(p_in=1.5)
