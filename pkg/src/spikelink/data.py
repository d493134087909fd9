"""Graph dataset ingestion, normalized propagation operators, and edge splits.

A dataset directory contains:

  * ``edges.tsv``     one undirected edge per line as ``u<TAB>v``
  * ``features.tsv``  one row of tab-separated non-negative reals per node
  * ``meta.json``     optional, ``{"num_nodes": N}`` (otherwise inferred)

Node ids are 0..N-1. Reversed duplicates of the same undirected edge are
merged; self-loop lines are an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse import CsrMatrix


class DatasetError(ValueError):
    """Malformed dataset directory or graph contents."""


class SplitError(ValueError):
    """Edge split cannot satisfy its invariants."""


DEFAULT_SPLIT_RATIOS = (0.85, 0.10, 0.05)  # (train, test, val)


def canonical_edges(edges: np.ndarray) -> np.ndarray:
    """Sort endpoints within each edge and lexsort the edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lo = edges.min(axis=1)
    hi = edges.max(axis=1)
    out = np.stack([lo, hi], axis=1)
    order = np.lexsort((out[:, 1], out[:, 0]))
    return out[order]


@dataclass
class GraphDataset:
    """An undirected graph with non-negative node features.

    ``edges`` is canonical: each row (u, v) with u < v, rows lexsorted,
    no duplicates, no self-loops.
    """

    name: str
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if self.num_nodes <= 0:
            raise DatasetError("graph must have at least one node")
        if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
            raise DatasetError("features must be an N x C0 matrix")
        if self.features.shape[1] <= 0:
            raise DatasetError("graph must have at least one feature channel")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features must be finite")
        if np.any(self.features < 0):
            raise DatasetError("features must be non-negative")
        e = self.edges
        if e.size:
            if e.min() < 0 or e.max() >= self.num_nodes:
                raise DatasetError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise DatasetError("self-loops are not allowed")
            if np.any(e[:, 0] > e[:, 1]):
                raise DatasetError("edges must be canonical (u < v)")
            dup = (np.diff(e[:, 0]) == 0) & (np.diff(e[:, 1]) == 0)
            if e.shape[0] > 1 and np.any(dup):
                raise DatasetError("duplicate undirected edges")

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])


def load_dataset(path: str | Path, fmt: str = "edge-list-dir") -> GraphDataset:
    """Load a dataset directory; see module docstring for the layout."""
    if fmt != "edge-list-dir":
        raise DatasetError(f"unknown dataset format: {fmt!r}")
    root = Path(path)
    edges_file = root / "edges.tsv"
    features_file = root / "features.tsv"
    for f in (edges_file, features_file):
        if not f.is_file():
            raise DatasetError(f"missing file: {f}")

    try:
        features = np.loadtxt(features_file, delimiter="\t", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"non-numeric feature in {features_file}: {exc}") from exc
    num_nodes = features.shape[0]

    meta_file = root / "meta.json"
    if meta_file.is_file():
        meta = json.loads(meta_file.read_text())
        if int(meta.get("num_nodes", num_nodes)) != num_nodes:
            raise DatasetError(
                f"meta.json num_nodes={meta['num_nodes']} does not match "
                f"{num_nodes} feature rows"
            )

    raw: list[tuple[int, int]] = []
    with edges_file.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{edges_file}:{lineno}: expected 'u<TAB>v'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DatasetError(f"{edges_file}:{lineno}: non-integer node id") from exc
            if u == v:
                raise DatasetError(f"{edges_file}:{lineno}: self-loop {u}")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise DatasetError(f"{edges_file}:{lineno}: node id out of range")
            raw.append((u, v))

    if raw:
        edges = canonical_edges(np.array(raw, dtype=np.int64))
        keep = np.ones(edges.shape[0], dtype=bool)
        keep[1:] = np.any(edges[1:] != edges[:-1], axis=1)
        edges = edges[keep]
    else:
        edges = np.zeros((0, 2), dtype=np.int64)

    return GraphDataset(name=root.name, num_nodes=num_nodes, edges=edges, features=features)


def save_dataset(g: GraphDataset, path: str | Path) -> None:
    """Write a dataset directory that :func:`load_dataset` reads back identically."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with (root / "edges.tsv").open("w") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    with (root / "features.tsv").open("w") as fh:
        for row in g.features:
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    (root / "meta.json").write_text(json.dumps({"num_nodes": g.num_nodes}) + "\n")


# -- propagation operator ----------------------------------------------


def build_normalized_operator(num_nodes: int, edges: np.ndarray) -> CsrMatrix:
    """Degree-normalized adjacency with self-loops in CSR form.

    With A the symmetric adjacency of ``edges`` and D the diagonal degree
    matrix of A + I, returns D^{-1/2} (A + I) D^{-1/2}. The result is
    symmetric with nnz = 2 * |edges| + N.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(num_nodes, dtype=np.int64)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    deg = np.bincount(rows, minlength=num_nodes).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return CsrMatrix.from_coo(rows, cols, vals, num_nodes, num_nodes)


def normalized_adjacency(g: GraphDataset) -> CsrMatrix:
    return build_normalized_operator(g.num_nodes, g.edges)


# -- edge splits ---------------------------------------------------------


@dataclass
class EdgeSplit:
    """Disjoint train/test/val positives plus sampled negatives.

    Positives partition the original edge set. Negative lists match the
    size of their positive counterparts, avoid every original edge, and
    contain no self-loops.
    """

    train_pos: np.ndarray
    test_pos: np.ndarray
    val_pos: np.ndarray
    test_neg: np.ndarray
    val_neg: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        for name in ("train_pos", "test_pos", "val_pos", "test_neg", "val_neg"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2))

    def to_manifest(self) -> dict:
        return {
            "seed": int(self.seed),
            "train_pos": self.train_pos.tolist(),
            "test_pos": self.test_pos.tolist(),
            "test_neg": self.test_neg.tolist(),
            "val_pos": self.val_pos.tolist(),
            "val_neg": self.val_neg.tolist(),
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "EdgeSplit":
        return cls(
            train_pos=np.array(manifest["train_pos"], dtype=np.int64).reshape(-1, 2),
            test_pos=np.array(manifest["test_pos"], dtype=np.int64).reshape(-1, 2),
            val_pos=np.array(manifest["val_pos"], dtype=np.int64).reshape(-1, 2),
            test_neg=np.array(manifest["test_neg"], dtype=np.int64).reshape(-1, 2),
            val_neg=np.array(manifest["val_neg"], dtype=np.int64).reshape(-1, 2),
            seed=int(manifest["seed"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EdgeSplit":
        return cls.from_manifest(json.loads(Path(path).read_text()))


def _edge_keys(edges: np.ndarray, num_nodes: int) -> np.ndarray:
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    return lo * np.int64(num_nodes) + hi


def split_edges(
    g: GraphDataset,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
) -> EdgeSplit:
    """Deterministic (train, test, val) partition with matched negatives.

    Sizes: |train| = floor(r_train * E), |test| = floor(r_test * E), the
    remainder goes to val. Negatives are sampled uniformly over node
    pairs, rejecting self-loops, original edges, and repeats.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError("split ratios must sum to 1")
    n_edges = g.num_edges
    if n_edges < 20:
        raise SplitError(f"graph too small to split: {n_edges} edges (need >= 20)")
    r_train, r_test, _ = ratios
    n_train = int(np.floor(r_train * n_edges))
    n_test = int(np.floor(r_test * n_edges))
    n_val = n_edges - n_train - n_test
    if min(n_train, n_test, n_val) <= 0:
        raise SplitError("split ratios give an empty partition")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_edges)
    train_pos = canonical_edges(g.edges[perm[:n_train]])
    test_pos = canonical_edges(g.edges[perm[n_train : n_train + n_test]])
    val_pos = canonical_edges(g.edges[perm[n_train + n_test :]])

    forbidden = set(_edge_keys(g.edges, g.num_nodes).tolist())
    test_neg = _sample_negatives(g.num_nodes, n_test, forbidden, rng)
    val_neg = _sample_negatives(g.num_nodes, n_val, forbidden, rng)

    return EdgeSplit(
        train_pos=train_pos,
        test_pos=test_pos,
        val_pos=val_pos,
        test_neg=test_neg,
        val_neg=val_neg,
        seed=seed,
    )


def _sample_negatives(
    num_nodes: int,
    count: int,
    forbidden: set[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform non-edge pairs; no self-loops, no duplicates, none forbidden."""
    max_pairs = num_nodes * (num_nodes - 1) // 2
    if max_pairs - len(forbidden) < count:
        raise SplitError("graph too dense to sample the requested negatives")
    seen: set[int] = set()
    out = np.empty((count, 2), dtype=np.int64)
    filled = 0
    while filled < count:
        batch = rng.integers(0, num_nodes, size=(max(64, 2 * (count - filled)), 2))
        for u, v in batch:
            if u == v:
                continue
            lo, hi = (u, v) if u < v else (v, u)
            key = int(lo) * num_nodes + int(hi)
            if key in forbidden or key in seen:
                continue
            seen.add(key)
            out[filled] = (lo, hi)
            filled += 1
            if filled == count:
                break
    return out


def sample_training_negatives(
    num_nodes: int,
    count: int,
    edge_keys: set[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-epoch negative pairs for sampled reconstruction (repeats allowed
    across epochs, uniqueness enforced within the batch)."""
    return _sample_negatives(num_nodes, count, edge_keys, rng)


def edge_key_set(edges: np.ndarray, num_nodes: int) -> set[int]:
    if edges.size == 0:
        return set()
    return set(_edge_keys(np.asarray(edges, dtype=np.int64), num_nodes).tolist())


# -- feature normalization -----------------------------------------------


def normalize_features(g: GraphDataset, mode: str = "binarize") -> np.ndarray:
    """Map features into [0, 1] so they can drive rate encoding.

    ``binarize``           nonzero -> 1
    ``minmax-per-feature`` scale each column so its max is 1 (all-zero
                           columns stay 0)
    ``none``               pass through (values must already be in [0, 1])
    """
    x = g.features
    if mode == "binarize":
        return (x > 0).astype(np.float64)
    if mode == "minmax-per-feature":
        col_max = x.max(axis=0)
        scale = np.where(col_max > 0, col_max, 1.0)
        return x / scale
    if mode == "none":
        if x.size and x.max() > 1.0:
            raise DatasetError("mode 'none' requires features already in [0, 1]")
        return x.copy()
    raise DatasetError(f"unknown feature normalization mode: {mode!r}")


# -- synthetic graphs ------------------------------------------------------


def planted_partition_graph(
    num_nodes: int,
    num_communities: int = 2,
    p_in: float = 0.8,
    p_out: float = 0.05,
    seed: int = 0,
    name: str = "planted-partition",
) -> GraphDataset:
    """Random community graph with one-hot node features.

    Within-community pairs are edges with probability ``p_in``, across
    communities with ``p_out``. Useful as a link-prediction sanity graph:
    the communities are recoverable, so held-out edges are predictable.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_communities
    rows = []
    for u in range(num_nodes):
        for v in range(u + 1, num_nodes):
            p = p_in if labels[u] == labels[v] else p_out
            if rng.random() < p:
                rows.append((u, v))
    edges = np.array(rows, dtype=np.int64) if rows else np.zeros((0, 2), dtype=np.int64)
    features = np.eye(num_nodes)
    return GraphDataset(name=name, num_nodes=num_nodes, edges=canonical_edges(edges), features=features)
