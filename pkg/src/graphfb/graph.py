"""Graph datasets: loading, validation, canonical serialization, and splits.

A :class:`Graph` is an immutable undirected graph in CSR form together with
dense node features and integer class labels. Self-loops are never stored
here; operator builders add them where an operator family requires them.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ._io import atomic_write, read_json, write_json

log = logging.getLogger(__name__)

#: Benchmark dataset names recognized by the reporting helpers and the CLI.
KNOWN_DATASETS = (
    "cornell",
    "wisconsin",
    "texas",
    "actor",
    "chameleon",
    "squirrel",
    "cora",
    "citeseer",
    "pubmed",
)

CANONICAL_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv")


class DatasetError(ValueError):
    """Raised for malformed, inconsistent, or missing dataset inputs."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with node features and labels.

    Parameters
    ----------
    indptr, indices : np.ndarray
        CSR row offsets and column indices of the symmetric adjacency
        structure (no self-loops, no duplicate edges, sorted per row).
    features : np.ndarray
        Dense ``(n_nodes, n_features)`` float64 matrix.
    labels : np.ndarray
        ``(n_nodes,)`` integer class indices in ``[0, n_classes)``.
    n_classes : int
        Number of label classes.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        self._validate()
        for arr in (indptr, indices, features, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "_degrees", np.diff(indptr))
        self._degrees.setflags(write=False)

    def _validate(self):
        n = self.indptr.shape[0] - 1
        if n < 1:
            raise DatasetError("graph must have at least one node")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise DatasetError("invalid CSR indptr")
        if self.indptr[-1] != self.indices.shape[0]:
            raise DatasetError("indptr/indices length mismatch")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise DatasetError("column index out of range")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"feature matrix must have exactly {n} rows")
        if self.labels.shape != (n,):
            raise DatasetError("labels must be one integer per node")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError(f"label outside [0, {self.n_classes})")
        for i in range(n):
            row = self.indices[self.indptr[i] : self.indptr[i + 1]]
            if np.any(row == i):
                raise DatasetError(f"self-loop stored at node {i}")
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise DatasetError(f"row {i} not strictly sorted (duplicate edge?)")
        adj = self.adjacency()
        if (adj != adj.T).nnz != 0:
            raise DatasetError("adjacency is not symmetric")

    @property
    def n_nodes(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.indices.shape[0] // 2

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency as a float64 CSR matrix."""
        data = np.ones(self.indices.shape[0], dtype=np.float64)
        return sp.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes)
        )

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def structurally_equal(self, other: "Graph") -> bool:
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    @staticmethod
    def from_edges(n_nodes, edges, features=None, labels=None, n_classes=None) -> "Graph":
        """Build a Graph from an iterable of (src, dst) pairs.

        Edges are symmetrized; duplicates and self-loops are dropped with a
        logged count. Features default to an empty (n, 0) matrix and labels
        to all-zero with a single class.
        """
        indptr, indices, n_self, n_dup = _csr_from_pairs(n_nodes, edges)
        if n_self or n_dup:
            log.warning("dropped %d self-loop and %d duplicate edge(s)", n_self, n_dup)
        if features is None:
            features = np.zeros((n_nodes, 0))
        if labels is None:
            labels = np.zeros(n_nodes, dtype=np.int64)
            n_classes = 1 if n_classes is None else n_classes
        if n_classes is None:
            n_classes = int(np.max(labels)) + 1 if len(labels) else 1
        return Graph(indptr, indices, features, labels, n_classes)


class Split(NamedTuple):
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitSet:
    """A collection of train/val/test node partitions plus its provenance."""

    splits: tuple
    seed: int
    ratios: tuple

    def __len__(self):
        return len(self.splits)

    def __iter__(self):
        return iter(self.splits)

    def __getitem__(self, i):
        return self.splits[i]


def _csr_from_pairs(n_nodes, edges):
    """Symmetrize, dedup, and drop self-loops; return CSR arrays and counts."""
    pairs = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if pairs.size == 0:
        pairs = pairs.reshape(0, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise DatasetError("edge list must be pairs of node ids")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n_nodes):
        raise DatasetError("edge endpoint outside node id range")
    self_mask = pairs[:, 0] == pairs[:, 1]
    n_self = int(self_mask.sum())
    pairs = pairs[~self_mask]
    # canonical undirected key (min, max), dedup across both orientations
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keys = np.unique(lo * n_nodes + hi)
    n_dup = pairs.shape[0] - keys.shape[0]
    lo, hi = keys // n_nodes, keys % n_nodes
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    adj = sp.coo_matrix(
        (np.ones(rows.shape[0]), (rows, cols)), shape=(n_nodes, n_nodes)
    ).tocsr()
    adj.sort_indices()
    return adj.indptr.astype(np.int64), adj.indices.astype(np.int64), n_self, n_dup


def row_normalize_features(features: np.ndarray) -> np.ndarray:
    """Scale each feature row to unit L1 sum; all-zero rows are left alone."""
    features = np.asarray(features, dtype=np.float64)
    sums = features.sum(axis=1)
    out = features.copy()
    nz = sums != 0
    out[nz] = out[nz] / sums[nz, None]
    return out


def _parse_node_file(node_path, feature_encoding):
    ids, feat_strs, labels = [], [], []
    with open(node_path) as f:
        for lineno, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(
                    f"{node_path}: line {lineno + 1}: expected 3 tab-separated fields"
                )
            if lineno == 0 and not parts[0].lstrip("-").isdigit():
                continue  # header line
            try:
                ids.append(int(parts[0]))
                labels.append(int(parts[2]))
            except ValueError as exc:
                raise DatasetError(f"{node_path}: line {lineno + 1}: {exc}") from exc
            feat_strs.append(parts[1])
    if not ids:
        raise DatasetError(f"{node_path}: no node records")
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    order = np.argsort(ids)
    if not np.array_equal(ids[order], np.arange(len(ids))):
        raise DatasetError("node ids must be contiguous integers starting at 0")

    if feature_encoding == "dense":
        try:
            table = pd.read_csv(
                io.StringIO("\n".join(feat_strs)), header=None, dtype=np.float64
            )
        except (pd.errors.ParserError, ValueError) as exc:
            raise DatasetError(f"ragged or non-numeric feature rows: {exc}") from exc
        features = table.to_numpy(dtype=np.float64)
        if np.isnan(features).any():
            raise DatasetError("ragged feature rows (missing values)")
    elif feature_encoding == "indices":
        # each row lists the indices of the active (=1.0) features
        rows = [np.fromstring(s, dtype=np.int64, sep=",") if s else np.empty(0, np.int64)
                for s in feat_strs]
        width = max((int(r.max()) + 1 if r.size else 0) for r in rows)
        features = np.zeros((len(rows), width))
        for i, r in enumerate(rows):
            if r.size and r.min() < 0:
                raise DatasetError("negative feature index")
            features[i, r] = 1.0
    else:
        raise ValueError(f"unknown feature_encoding {feature_encoding!r}")

    if features.shape[0] != len(ids):
        raise DatasetError("feature row count does not match node count")
    return features[order], labels[order]


def _parse_edge_file(edge_path):
    pairs = []
    with open(edge_path) as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"{edge_path}: line {lineno + 1}: expected 2 fields")
            if lineno == 0 and not parts[0].lstrip("-").isdigit():
                continue  # header line
            pairs.append((int(parts[0]), int(parts[1])))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def import_raw(node_path, edge_path, row_normalize=False, feature_encoding="dense") -> Graph:
    """Import a raw dataset into a validated :class:`Graph`.

    The node file holds ``<id>\\t<comma-separated feature values>\\t<label>``
    lines (a non-numeric header line is tolerated); the edge file holds
    ``<src>\\t<dst>`` lines. Directed edges are symmetrized; duplicates and
    self-loops are dropped with a logged count.

    Parameters
    ----------
    row_normalize : bool
        Scale feature rows to unit L1 sum after loading.
    feature_encoding : {"dense", "indices"}
        "dense" expects one value per feature column (ragged rows are an
        error); "indices" expects comma-separated active-feature indices,
        expanded to a multi-hot matrix.
    """
    features, labels = _parse_node_file(node_path, feature_encoding)
    if np.any(labels < 0):
        raise DatasetError("negative label")
    n_classes = int(labels.max()) + 1
    pairs = _parse_edge_file(edge_path)
    if pairs.shape[0] == 0:
        raise DatasetError("empty edge set")
    if row_normalize:
        features = row_normalize_features(features)
    return Graph.from_edges(features.shape[0], pairs, features, labels, n_classes)


def save_canonical(graph: Graph, dir_path) -> Path:
    """Write the canonical dataset layout (meta.json + three TSV files).

    Floats are serialized with shortest round-trip repr so that
    ``load_canonical(save_canonical(g))`` reproduces ``g`` exactly and the
    files are byte-stable across runs.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_nodes": graph.n_nodes,
        "n_features": graph.n_features,
        "n_classes": graph.n_classes,
    }
    with atomic_write(dir_path / "meta.json") as f:
        json.dump(meta, f, sort_keys=True)
        f.write("\n")
    adj = sp.triu(graph.adjacency(), k=1).tocoo()
    order = np.lexsort((adj.col, adj.row))
    with atomic_write(dir_path / "edges.tsv") as f:
        for r, c in zip(adj.row[order], adj.col[order]):
            f.write(f"{r}\t{c}\n")
    with atomic_write(dir_path / "features.tsv") as f:
        for row in graph.features:
            f.write("\t".join(repr(float(v)) for v in row))
            f.write("\n")
    with atomic_write(dir_path / "labels.tsv") as f:
        for lab in graph.labels:
            f.write(f"{lab}\n")
    return dir_path


def load_canonical(dir_path) -> Graph:
    """Load a canonical dataset directory written by :func:`save_canonical`."""
    dir_path = Path(dir_path)
    for name in CANONICAL_FILES:
        if not (dir_path / name).exists():
            raise DatasetError(f"missing {name.split('.')[0]}: {dir_path / name}")
    meta = read_json(dir_path / "meta.json")
    n, nf, nc = meta["n_nodes"], meta["n_features"], meta["n_classes"]

    edges = pd.read_csv(dir_path / "edges.tsv", sep="\t", header=None).to_numpy(np.int64) \
        if (dir_path / "edges.tsv").stat().st_size else np.empty((0, 2), np.int64)
    if nf > 0:
        features = pd.read_csv(
            dir_path / "features.tsv", sep="\t", header=None, dtype=np.float64,
            float_precision="round_trip",  # exact inverse of repr() serialization
        ).to_numpy(np.float64)
    else:
        features = np.zeros((n, 0))
    labels = pd.read_csv(dir_path / "labels.tsv", header=None).to_numpy(np.int64).ravel()

    if features.shape != (n, nf):
        raise DatasetError(
            f"features.tsv shape {features.shape} inconsistent with meta ({n}, {nf})"
        )
    if labels.shape[0] != n:
        raise DatasetError("labels.tsv length inconsistent with meta")
    if labels.size and labels.max() >= nc:
        raise DatasetError(f"label outside [0, {nc})")
    return Graph.from_edges(n, edges, features, labels, nc)


def is_canonical_dataset(dir_path) -> bool:
    dir_path = Path(dir_path)
    return all((dir_path / name).exists() for name in CANONICAL_FILES)


def split_sizes(n_nodes, ratios) -> tuple:
    """Floor the train/val sizes; the remainder goes to test."""
    n_train = int(np.floor(ratios[0] * n_nodes))
    n_val = int(np.floor(ratios[1] * n_nodes))
    return n_train, n_val, n_nodes - n_train - n_val


def make_splits(graph, ratios=(0.48, 0.32, 0.20), seed=0, count=10) -> SplitSet:
    """Generate `count` independent random node partitions.

    A pure function of ``(graph.n_nodes, ratios, seed, count)``: the same
    arguments always produce the same splits.
    """
    n = graph.n_nodes if isinstance(graph, Graph) else int(graph)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if count < 1:
        raise ValueError("count must be at least 1")
    n_train, n_val, n_test = split_sizes(n, ratios)
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(count):
        perm = rng.permutation(n)
        splits.append(
            Split(
                train=np.sort(perm[:n_train]),
                val=np.sort(perm[n_train : n_train + n_val]),
                test=np.sort(perm[n_train + n_val :]),
            )
        )
    return SplitSet(splits=tuple(splits), seed=int(seed), ratios=ratios)


def save_splits(split_set: SplitSet, path) -> Path:
    payload = {
        "seed": split_set.seed,
        "ratios": list(split_set.ratios),
        "splits": [
            {"train": s.train.tolist(), "val": s.val.tolist(), "test": s.test.tolist()}
            for s in split_set.splits
        ],
    }
    write_json(path, payload)
    return Path(path)


def load_splits(path) -> SplitSet:
    payload = read_json(path)
    splits = tuple(
        Split(
            train=np.asarray(s["train"], dtype=np.int64),
            val=np.asarray(s["val"], dtype=np.int64),
            test=np.asarray(s["test"], dtype=np.int64),
        )
        for s in payload["splits"]
    )
    return SplitSet(splits=splits, seed=int(payload["seed"]), ratios=tuple(payload["ratios"]))


def is_connected(graph: Graph) -> bool:
    """BFS reachability from node 0."""
    n = graph.n_nodes
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in graph.neighbors(u):
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


def is_bipartite(graph: Graph) -> bool:
    """Exact 2-coloring BFS over every component."""
    n = graph.n_nodes
    color = np.full(n, -1, dtype=np.int8)
    for start in range(n):
        if color[start] != -1:
            continue
        color[start] = 0
        stack = [start]
        while stack:
            u = stack.pop()
            for v in graph.neighbors(u):
                if color[v] == -1:
                    color[v] = 1 - color[u]
                    stack.append(v)
                elif color[v] == color[u]:
                    return False
    return True
