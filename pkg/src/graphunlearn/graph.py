"""Undirected node-classification graphs in CSR form.

Covers ingestion from the plain-text/binary dataset layout, synthetic
stochastic block model generation, largest-connected-component extraction
and seeded train/val/test splitting.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import csgraph, csr_matrix

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2


class GraphFormatError(ValueError):
    """Raised when a dataset file does not follow the ingestion format."""


class GraphValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable symmetric graph with node features, labels and split masks.

    ``indptr``/``indices`` hold the adjacency in CSR form with every
    undirected edge stored in both directions, sorted column indices,
    no self-loops and no duplicates.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_mask: Optional[np.ndarray] = None
    val_mask: Optional[np.ndarray] = None
    test_mask: Optional[np.ndarray] = None

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_masks(self) -> bool:
        return self.train_mask is not None

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an ``(m, 2)`` array with ``u < v``, sorted."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def to_scipy(self) -> csr_matrix:
        n = self.num_nodes
        data = np.ones(len(self.indices))
        return csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    # --- derived graphs ---------------------------------------------------

    def with_labels(self, labels: np.ndarray) -> "Graph":
        return replace(self, labels=np.asarray(labels, dtype=np.int64).copy())

    def with_features(self, features: np.ndarray) -> "Graph":
        return replace(self, features=np.asarray(features, dtype=np.float64).copy())

    def with_masks(self, train: np.ndarray, val: np.ndarray, test: np.ndarray) -> "Graph":
        return replace(self, train_mask=np.asarray(train, bool).copy(),
                       val_mask=np.asarray(val, bool).copy(),
                       test_mask=np.asarray(test, bool).copy())

    def with_edges(self, edges: np.ndarray) -> "Graph":
        indptr, indices, _ = _build_csr(self.num_nodes, edges)
        return replace(self, indptr=indptr, indices=indices)

    def add_edges(self, edges) -> "Graph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return self.with_edges(np.concatenate([self.edge_array(), edges]))

    def remove_edges(self, edges) -> "Graph":
        drop = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
        e = self.edge_array()
        n = self.num_nodes
        return self.with_edges(e[~np.isin(e[:, 0] * n + e[:, 1], drop[:, 0] * n + drop[:, 1])])

    def isolate_nodes(self, nodes) -> "Graph":
        """Drop every edge incident to ``nodes``; the nodes themselves stay."""
        nodes = np.asarray(sorted(set(int(v) for v in nodes)), dtype=np.int64)
        e = self.edge_array()
        hit = np.isin(e[:, 0], nodes) | np.isin(e[:, 1], nodes)
        return self.with_edges(e[~hit])

    def subgraph(self, nodes) -> tuple["Graph", np.ndarray]:
        """Induced subgraph on ``nodes`` relabeled 0..k-1 in ascending order.

        Returns the subgraph and the array of kept original ids.
        """
        kept = np.unique(np.asarray(nodes, dtype=np.int64))
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[kept] = np.arange(len(kept))
        e = self.edge_array()
        ok = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
        sub_edges = remap[e[ok]]
        indptr, indices, _ = _build_csr(len(kept), sub_edges)
        masks = {}
        if self.has_masks:
            masks = dict(train_mask=self.train_mask[kept].copy(),
                         val_mask=self.val_mask[kept].copy(),
                         test_mask=self.test_mask[kept].copy())
        sub = Graph(indptr, indices, self.features[kept].copy(),
                    self.labels[kept].copy(), self.num_classes, **masks)
        return sub, kept


def _build_csr(num_nodes: int, edges) -> tuple[np.ndarray, np.ndarray, int]:
    """Symmetrize, deduplicate and strip self-loops from an edge list.

    Returns ``(indptr, indices, n_self_loops)``.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        raise GraphValidationError("edge endpoint out of range")
    loops = edges[:, 0] == edges[:, 1]
    n_loops = int(loops.sum())
    edges = edges[~loops]
    both = np.concatenate([edges, edges[:, ::-1]])
    # unique over (row, col) gives sorted rows with sorted columns
    flat = np.unique(both[:, 0] * num_nodes + both[:, 1]) if len(both) else np.zeros(0, np.int64)
    rows, cols = np.divmod(flat, num_nodes) if num_nodes else (flat, flat)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, cols.astype(np.int64), n_loops


def from_edges(num_nodes: int, edges, features, labels, num_classes: Optional[int] = None,
               masks=None) -> Graph:
    """Build and validate a Graph from a possibly directed, noisy edge list."""
    indptr, indices, n_loops = _build_csr(num_nodes, edges)
    if n_loops:
        log.warning("dropped %d self-loops", n_loops)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    g = Graph(indptr, indices, np.asarray(features, dtype=np.float64), labels, int(num_classes))
    if masks is not None:
        g = g.with_masks(*masks)
    validate(g)
    return g


def validate(g: Graph) -> None:
    """Check every structural invariant; raise GraphValidationError on failure."""
    n = g.num_nodes
    if g.features.shape[0] != n or g.labels.shape != (n,):
        raise GraphValidationError("features/labels do not match num_nodes")
    if not np.all(np.isfinite(g.features)):
        raise GraphValidationError("non-finite feature values")
    if n and (g.labels.min() < 0 or g.labels.max() >= g.num_classes):
        raise GraphValidationError("label out of range [0, num_classes)")
    if np.any(np.diff(g.indptr) < 0) or g.indptr[-1] != len(g.indices):
        raise GraphValidationError("malformed indptr")
    rows = np.repeat(np.arange(n), g.degrees())
    if np.any(rows == g.indices):
        raise GraphValidationError("self-loop stored in adjacency")
    same_row = rows[1:] == rows[:-1]
    if np.any(np.diff(g.indices)[same_row] <= 0):
        raise GraphValidationError("unsorted or duplicate neighbors")
    a = g.to_scipy()
    if (a != a.T).nnz:
        raise GraphValidationError("adjacency is not symmetric")
    if g.has_masks:
        m = np.stack([g.train_mask, g.val_mask, g.test_mask]).astype(int)
        if m.shape[1] != n or np.any(m.sum(axis=0) != 1):
            raise GraphValidationError("masks must be disjoint and cover all nodes")


# --- ingestion ----------------------------------------------------------------

def read_features_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise GraphFormatError(f"{path}: truncated header")
    n, d = struct.unpack("<QQ", raw[:16])
    expected = 16 + 4 * n * d
    if len(raw) != expected:
        raise GraphFormatError(f"{path}: expected {expected} bytes for {n}x{d}, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, d).astype(np.float64)


def write_features_bin(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    n, d = matrix.shape
    Path(path).write_bytes(struct.pack("<QQ", n, d) + matrix.tobytes())


def _read_int_lines(path, width: int, what: str) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != width:
                raise GraphFormatError(f"{path}:{lineno}: expected {width} field(s) for {what}, got {len(parts)}")
            try:
                out.append([int(p) for p in parts] if width > 1 else int(parts[0]))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer {what} field {s!r}") from None
    return out


def load_graph(path, fmt: str = "edgelist-v1", num_classes: Optional[int] = None) -> Graph:
    """Load a dataset directory (``edges.txt``, ``features.bin``, ``labels.txt``,
    optional ``masks.txt``).

    Features outside [0, 1] are min-max scaled per column so that feature
    complementing stays meaningful downstream.
    """
    if fmt != "edgelist-v1":
        raise GraphFormatError(f"unknown ingestion format {fmt!r}")
    root = Path(path)
    labels = np.array(_read_int_lines(root / "labels.txt", 1, "label"), dtype=np.int64)
    features = read_features_bin(root / "features.bin")
    n = len(labels)
    if features.shape[0] != n:
        raise GraphFormatError(f"features.bin has {features.shape[0]} rows but labels.txt has {n}")
    edges = np.array(_read_int_lines(root / "edges.txt", 2, "edge"), dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise GraphFormatError(f"{root / 'edges.txt'}: node id out of range [0, {n})")
    if np.any(labels < 0):
        raise GraphValidationError("negative label")
    if num_classes is not None and n and labels.max() >= num_classes:
        raise GraphValidationError(f"label {labels.max()} >= num_classes {num_classes}")
    if n and (features.min() < 0 or features.max() > 1):
        lo, hi = features.min(axis=0), features.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        features = (features - lo) / span
    masks = None
    mask_file = root / "masks.txt"
    if mask_file.exists():
        codes = np.array(_read_int_lines(mask_file, 1, "mask"), dtype=np.int64)
        if len(codes) != n or np.any((codes < 0) | (codes > 2)):
            raise GraphFormatError(f"{mask_file}: need {n} codes in {{0,1,2}}")
        masks = (codes == TRAIN, codes == VAL, codes == TEST)
    return from_edges(n, edges, features, labels, num_classes, masks)


def save_graph(g: Graph, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.txt", "w") as fh:
        for u, v in g.edge_array():
            fh.write(f"{u} {v}\n")
    write_features_bin(root / "features.bin", g.features)
    np.savetxt(root / "labels.txt", g.labels, fmt="%d")
    if g.has_masks:
        codes = np.where(g.train_mask, TRAIN, np.where(g.val_mask, VAL, TEST))
        np.savetxt(root / "masks.txt", codes, fmt="%d")


# --- preprocessing --------------------------------------------------------------

def largest_connected_component(g: Graph) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on the largest component plus the kept-id map.

    Ties go to the component holding the smallest original node id.
    """
    if g.num_nodes <= 1:
        return g, np.arange(g.num_nodes)
    ncomp, comp = csgraph.connected_components(g.to_scipy(), directed=False)
    if ncomp == 1:
        return g, np.arange(g.num_nodes)
    sizes = np.bincount(comp, minlength=ncomp)
    first = np.full(ncomp, g.num_nodes)
    np.minimum.at(first, comp, np.arange(g.num_nodes))
    best = min(range(ncomp), key=lambda c: (-sizes[c], first[c]))
    return g.subgraph(np.flatnonzero(comp == best))


@dataclass(frozen=True)
class SplitConfig:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fr}")


def make_splits(g: Graph, cfg: SplitConfig = SplitConfig()) -> Graph:
    n = g.num_nodes
    perm = np.random.default_rng(cfg.seed).permutation(n)
    n_train = int(np.floor(cfg.train_frac * n + 1e-9))
    n_val = int(np.floor(cfg.val_frac * n + 1e-9))
    train, val, test = (np.zeros(n, bool) for _ in range(3))
    train[perm[:n_train]] = True
    val[perm[n_train:n_train + n_val]] = True
    test[perm[n_train + n_val:]] = True
    return g.with_masks(train, val, test)


@dataclass(frozen=True)
class SbmConfig:
    num_blocks: int = 4
    nodes_per_block: int = 100
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: Optional[int] = None
    feature_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p_out < self.p_in <= 1):
            raise ValueError("need 0 <= p_out < p_in <= 1")
        if not (0 <= self.feature_noise < 0.5):
            raise ValueError("feature_noise must lie in [0, 0.5)")
        if self.feature_dim is not None and self.feature_dim < self.num_blocks:
            raise ValueError("feature_dim must be at least num_blocks")

    @property
    def dim(self) -> int:
        return self.feature_dim or self.num_blocks


def generate_sbm(cfg: SbmConfig) -> Graph:
    """Sample a stochastic block model with noisy block-indicator features.

    Feature column ``c`` indicates block ``c % num_blocks``; every bit is then
    flipped independently with probability ``feature_noise``.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_blocks * cfg.nodes_per_block
    block = np.arange(n) // cfg.nodes_per_block
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], cfg.p_in, cfg.p_out)
    hit = rng.random(len(iu)) < p
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    cols = np.arange(cfg.dim) % cfg.num_blocks
    features = (cols[None, :] == block[:, None]).astype(np.float64)
    flips = rng.random(features.shape) < cfg.feature_noise
    features = np.where(flips, 1.0 - features, features)
    return from_edges(n, edges, features, block, cfg.num_blocks)
