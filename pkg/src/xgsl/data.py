"""On-disk dataset format, split generation and a stochastic-block-model generator.

A dataset directory holds::

    edges.tsv     one undirected edge per line, "u<TAB>v", u < v, 0-indexed
    features.tsv  one node per line, tab-separated reals
    labels.tsv    one integer class id per line
    masks.tsv     optional, one of train/valid/test/none per line
    meta.json     n_nodes, n_classes, feature_dim and sha256 of the three TSVs
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xgsl.graph import Graph, adjacency_from_edges

log = logging.getLogger(__name__)

HASHED_FILES = ("edges.tsv", "features.tsv", "labels.tsv")
MASK_NAMES = ("train", "valid", "test", "none")


class DatasetError(ValueError):
    """Base class for dataset loading failures."""


class MissingFileError(DatasetError):
    pass


class RaggedRowsError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class MalformedLineError(DatasetError):
    pass


class CorruptionError(DatasetError):
    """Content hash or declared sizes disagree with the files."""


@dataclass
class DatasetBundle:
    graph: Graph
    name: str
    split_spec: dict
    content_hash: str = ""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def bundle_hash(file_hashes: dict[str, str]) -> str:
    """Single digest over the per-file hashes."""
    joined = "\n".join(f"{k}:{file_hashes[k]}" for k in sorted(file_hashes))
    return hashlib.sha256(joined.encode()).hexdigest()


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingFileError(f"{path}: file not found")
    return path


def _read_edges(path: Path, n_nodes: int | None) -> tuple[np.ndarray, int]:
    edges = []
    self_loops = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MalformedLineError(f"{path}:{lineno}: expected two node ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise MalformedLineError(f"{path}:{lineno}: node ids must be integers") from None
            if u < 0 or v < 0 or (n_nodes is not None and max(u, v) >= n_nodes):
                raise MalformedLineError(f"{path}:{lineno}: node id out of range")
            if u == v:
                self_loops += 1
                continue
            edges.append((u, v))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2), self_loops


def _read_features(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise RaggedRowsError(f"{path}:{lineno}: expected {width} columns, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise MalformedLineError(f"{path}:{lineno}: non-numeric feature") from None
    return np.asarray(rows, dtype=np.float64)


def _read_labels(path: Path, n_classes: int | None) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                y = int(line)
            except ValueError:
                raise MalformedLineError(f"{path}:{lineno}: label must be an integer") from None
            if y < 0 or (n_classes is not None and y >= n_classes):
                raise LabelRangeError(f"{path}:{lineno}: label {y} outside [0, {n_classes})")
            labels.append(y)
    return np.asarray(labels, dtype=np.int64)


def _read_masks(path: Path, n_nodes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    names = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line not in MASK_NAMES:
                raise MalformedLineError(f"{path}:{lineno}: expected one of {MASK_NAMES}")
            names.append(line)
    if len(names) != n_nodes:
        raise CorruptionError(f"{path}: {len(names)} lines for {n_nodes} nodes")
    arr = np.asarray(names)
    return arr == "train", arr == "valid", arr == "test"


def load_dataset(dir_path, verify: bool = True) -> DatasetBundle:
    """Parse a dataset directory.

    Edges are symmetrised and deduplicated; self-loops are dropped and
    counted in a warning.  With ``verify`` the sha256 digests in meta.json
    must match the files.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise MissingFileError(f"{root}: dataset directory not found")
    meta_path = _require(root / "meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{meta_path}:{exc.lineno}: invalid JSON") from None
    paths = {name: _require(root / name) for name in HASHED_FILES}
    hashes = {name: sha256_file(p) for name, p in paths.items()}
    if verify:
        declared = meta.get("sha256", {})
        for name, digest in hashes.items():
            if name in declared and declared[name] != digest:
                raise CorruptionError(f"{paths[name]}: sha256 mismatch with meta.json")
    n_nodes = meta.get("n_nodes")
    n_classes = meta.get("n_classes")

    features = _read_features(paths["features.tsv"])
    if n_nodes is None:
        n_nodes = features.shape[0]
    if features.shape[0] != n_nodes:
        raise CorruptionError(f"{paths['features.tsv']}: {features.shape[0]} rows for {n_nodes} nodes")
    if "feature_dim" in meta and features.shape[1] != meta["feature_dim"]:
        raise CorruptionError(f"{paths['features.tsv']}: {features.shape[1]} columns, meta says {meta['feature_dim']}")
    labels = _read_labels(paths["labels.tsv"], n_classes)
    if labels.shape[0] != n_nodes:
        raise CorruptionError(f"{paths['labels.tsv']}: {labels.shape[0]} lines for {n_nodes} nodes")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    edges, loops = _read_edges(paths["edges.tsv"], n_nodes)
    if loops:
        log.warning("%s: dropped %d self-loop(s)", paths["edges.tsv"], loops)
    masks = (None, None, None)
    split_spec = {"mode": "none"}
    if (root / "masks.tsv").is_file():
        masks = _read_masks(root / "masks.tsv", n_nodes)
        split_spec = {"mode": "explicit"}
        hashes["masks.tsv"] = sha256_file(root / "masks.tsv")
    graph = Graph(adjacency_from_edges(edges, n_nodes), features, labels, n_classes, *masks)
    name = meta.get("name", root.name)
    return DatasetBundle(graph, name, split_spec, bundle_hash(hashes))


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(bundle: DatasetBundle | Graph, dir_path, name: str | None = None) -> Path:
    """Write the canonical text form; byte-identical for equal graphs."""
    g = bundle.graph if isinstance(bundle, DatasetBundle) else bundle
    name = name or (bundle.name if isinstance(bundle, DatasetBundle) else Path(dir_path).name)
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    texts = {
        "edges.tsv": "".join(f"{u}\t{v}\n" for u, v in g.edge_list()),
        "features.tsv": "".join("\t".join(repr(float(x)) for x in row) + "\n" for row in g.features),
        "labels.tsv": "".join(f"{int(y)}\n" for y in g.labels),
    }
    has_masks = bool(g.train_mask.any() or g.valid_mask.any() or g.test_mask.any())
    if has_masks:
        col = np.full(g.n_nodes, "none", dtype=object)
        col[g.train_mask] = "train"
        col[g.valid_mask] = "valid"
        col[g.test_mask] = "test"
        texts["masks.tsv"] = "".join(f"{c}\n" for c in col)
    for fname, text in texts.items():
        atomic_write_text(root / fname, text)
    meta = {
        "name": name,
        "n_nodes": g.n_nodes,
        "n_classes": g.n_classes,
        "feature_dim": g.n_features,
        "sha256": {f: hashlib.sha256(texts[f].encode()).hexdigest() for f in HASHED_FILES},
    }
    atomic_write_text(root / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return root


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def make_splits(
    g: Graph,
    ratios: tuple[float, float, float] | None = None,
    per_class: int | None = None,
    n_valid: int = 500,
    n_test: int = 1000,
    seed=0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint train/valid/test masks.

    Either ``ratios`` (fractions of all nodes) or ``per_class`` training
    nodes per class followed by ``n_valid``/``n_test`` from the remainder.
    """
    if (ratios is None) == (per_class is None):
        raise ValueError("give exactly one of ratios or per_class")
    rng = np.random.default_rng(seed)
    n = g.n_nodes
    train = np.zeros(n, bool)
    valid = np.zeros(n, bool)
    test = np.zeros(n, bool)
    if ratios is not None:
        r = np.asarray(ratios, dtype=np.float64)
        if r.shape != (3,) or np.any(r < 0) or r.sum() > 1 + 1e-9:
            raise ValueError("ratios must be three non-negative fractions summing to <= 1")
        order = rng.permutation(n)
        n_tr, n_va, n_te = (int(round(x * n)) for x in r)
        n_te = min(n_te, n - n_tr - n_va)
        train[order[:n_tr]] = True
        valid[order[n_tr : n_tr + n_va]] = True
        test[order[n_tr + n_va : n_tr + n_va + n_te]] = True
        return train, valid, test
    for k in range(g.n_classes):
        members = np.flatnonzero(g.labels == k)
        if len(members) < per_class:
            raise ValueError(f"class {k} has {len(members)} nodes, fewer than {per_class}")
        train[rng.choice(members, size=per_class, replace=False)] = True
    rest = rng.permutation(np.flatnonzero(~train))
    if n_valid + n_test > len(rest):
        raise ValueError("not enough nodes left for validation and test")
    valid[rest[:n_valid]] = True
    test[rest[n_valid : n_valid + n_test]] = True
    return train, valid, test


def with_splits(g: Graph, masks) -> Graph:
    train, valid, test = masks
    return g.replace(train_mask=train, valid_mask=valid, test_mask=test)


# ---------------------------------------------------------------------------
# synthetic graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n_nodes: int = 800
    n_classes: int = 4
    p_in: float = 0.02
    p_out: float = 0.002
    feature_dim: int = 16
    snr: float = 1.0
    seed: int = 0
    ratios: tuple[float, float, float] = (0.5, 0.25, 0.25)

    def __post_init__(self):
        if self.n_nodes < 2 or self.n_classes < 1 or self.n_classes > self.n_nodes:
            raise ValueError("need 2 <= n_nodes and 1 <= n_classes <= n_nodes")
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.feature_dim < self.n_classes:
            raise ValueError("feature_dim must be at least n_classes")
        if self.snr <= 0:
            raise ValueError("snr must be positive")


def generate_synthetic(spec: SynthSpec, name: str = "synthetic") -> DatasetBundle:
    """Stochastic block model with Gaussian class-mean features.

    Node ``u`` has class ``u mod C`` after a seeded shuffle, so classes are
    balanced to within one node.  Features are the class one-hot (padded to
    ``feature_dim``) plus N(0, 1/snr^2) noise.
    """
    rng = np.random.default_rng([spec.seed, 23])
    n, C = spec.n_nodes, spec.n_classes
    labels = rng.permutation(np.arange(n) % C)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = np.zeros((C, spec.feature_dim))
    means[np.arange(C), np.arange(C)] = 1.0
    features = means[labels] + rng.standard_normal((n, spec.feature_dim)) / spec.snr
    graph = Graph(adjacency_from_edges(edges, n), features, labels, C)
    masks = make_splits(graph, ratios=spec.ratios, seed=[spec.seed, 29])
    graph = with_splits(graph, masks)
    return DatasetBundle(graph, name, {"mode": "ratio", "ratios": list(spec.ratios)})
