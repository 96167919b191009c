"""Targeted training-data manipulations and deletion-subset sampling."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import Graph

KINDS = ("label_flip", "spurious_edges")


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    """``budget`` is a per-class fraction of train nodes for ``label_flip`` and an
    absolute edge count for ``spurious_edges``."""

    kind: str = "label_flip"
    class_a: int = 0
    class_b: int = 1
    budget: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackConfigError(f"unknown attack kind {self.kind!r}")
        if self.class_a == self.class_b:
            raise AttackConfigError("class_a and class_b must differ")
        if self.budget <= 0:
            raise AttackConfigError("attack budget must be positive")
        if self.kind == "label_flip" and self.budget > 1:
            raise AttackConfigError("label_flip budget is a fraction and must be <= 1")

    @property
    def entity(self) -> str:
        return "node" if self.kind == "label_flip" else "edge"


@dataclass(eq=False)
class AttackRecord:
    """The manipulated graph plus everything needed to undo the manipulation.

    ``manipulated`` holds node ids (label_flip) or an ``(m, 2)`` array of
    added edges with ``u < v`` (spurious_edges). ``clean_labels`` holds the
    original labels of the flipped nodes, aligned with ``manipulated``.
    """

    spec: AttackSpec
    graph: Graph
    manipulated: np.ndarray
    clean_labels: np.ndarray

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def entity(self) -> str:
        return self.spec.entity

    @property
    def affected_classes(self) -> tuple[int, int]:
        return (self.spec.class_a, self.spec.class_b)

    def __len__(self) -> int:
        return len(self.manipulated)

    def reconstruct(self) -> Graph:
        """The pre-attack graph, rebuilt from the manipulated one."""
        if self.kind == "label_flip":
            labels = self.graph.labels.copy()
            labels[self.manipulated] = self.clean_labels
            return self.graph.with_labels(labels)
        return self.graph.remove_edges(self.manipulated)

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "manipulated": self.manipulated.tolist(),
            "clean_labels": self.clean_labels.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def load_attack_record(path, graph: Graph, graph_is_clean: bool = False) -> AttackRecord:
    """Read a record file; ``graph`` is the manipulated graph unless
    ``graph_is_clean``, in which case the manipulation is re-applied to it."""
    d = json.loads(Path(path).read_text())
    spec = AttackSpec(**d["spec"])
    if spec.kind == "label_flip":
        manip = np.asarray(d["manipulated"], dtype=np.int64)
    else:
        manip = np.asarray(d["manipulated"], dtype=np.int64).reshape(-1, 2)
    clean = np.asarray(d["clean_labels"], dtype=np.int64)
    if len(manip) == 0:
        raise AttackConfigError(f"{path}: empty manipulation set")
    if graph_is_clean:
        if spec.kind == "label_flip":
            labels = graph.labels.copy()
            if np.any(labels[manip] != clean):
                raise AttackConfigError(f"{path}: clean labels do not match the supplied graph")
            labels[manip] = np.where(clean == spec.class_a, spec.class_b, spec.class_a)
            graph = graph.with_labels(labels)
        else:
            graph = graph.add_edges(manip)
    return AttackRecord(spec, graph, manip, clean)


def label_flip_attack(g: Graph, spec: AttackSpec) -> AttackRecord:
    """Relabel ⌊budget·n⌋ train nodes of each targeted class as the other class."""
    if spec.kind != "label_flip":
        raise AttackConfigError("spec is not a label_flip attack")
    if not g.has_masks:
        raise AttackConfigError("graph needs split masks before a label attack")
    rng = np.random.default_rng(spec.seed)
    a, b = spec.class_a, spec.class_b
    picked = []
    for cls in (a, b):
        pool = np.flatnonzero(g.train_mask & (g.labels == cls))
        if len(pool) < 2:
            raise AttackConfigError(f"class {cls} has fewer than 2 train nodes")
        k = int(np.floor(spec.budget * len(pool) + 1e-9))
        picked.append(rng.choice(pool, size=k, replace=False))
    nodes = np.sort(np.concatenate(picked)).astype(np.int64)
    if len(nodes) == 0:
        raise AttackConfigError("budget selects zero nodes")
    clean = g.labels[nodes].copy()
    labels = g.labels.copy()
    labels[nodes] = np.where(clean == a, b, a)
    return AttackRecord(spec, g.with_labels(labels), nodes, clean)


def spurious_edge_attack(g: Graph, spec: AttackSpec) -> AttackRecord:
    """Add ``budget`` new edges, each between a random class-a and class-b node."""
    if spec.kind != "spurious_edges":
        raise AttackConfigError("spec is not a spurious_edges attack")
    count = int(spec.budget)
    if count != spec.budget:
        raise AttackConfigError("spurious_edges budget must be a whole edge count")
    a_nodes = np.flatnonzero(g.labels == spec.class_a)
    b_nodes = np.flatnonzero(g.labels == spec.class_b)
    if len(a_nodes) == 0 or len(b_nodes) == 0:
        raise AttackConfigError("both targeted classes must be non-empty")
    existing = 0
    b_set = set(b_nodes.tolist())
    for u in a_nodes:
        existing += sum(1 for v in g.neighbors(u) if int(v) in b_set)
    capacity = len(a_nodes) * len(b_nodes) - existing
    if count > capacity:
        raise AttackConfigError(f"only {capacity} absent class pairs, budget asks for {count}")
    rng = np.random.default_rng(spec.seed)
    added: set[tuple[int, int]] = set()
    while len(added) < count:
        u = int(rng.choice(a_nodes))
        v = int(rng.choice(b_nodes))
        key = (u, v) if u < v else (v, u)
        if key in added or g.has_edge(u, v):
            continue
        added.add(key)
    edges = np.array(sorted(added), dtype=np.int64).reshape(-1, 2)
    return AttackRecord(spec, g.add_edges(edges), edges, np.zeros(0, dtype=np.int64))


def run_attack(g: Graph, spec: AttackSpec) -> AttackRecord:
    if spec.kind == "label_flip":
        return label_flip_attack(g, spec)
    return spurious_edge_attack(g, spec)


@dataclass(eq=False)
class DeletionSet:
    """The identified part S_f of the manipulation set and its vertex form."""

    entity: str
    ids: np.ndarray
    vertices: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def make_deletion_set(entity: str, ids) -> DeletionSet:
    if entity == "node":
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        return DeletionSet("node", ids, ids.copy())
    ids = np.asarray(ids, dtype=np.int64).reshape(-1, 2)
    return DeletionSet("edge", ids, np.unique(ids.ravel()))


def _largest_remainder(sizes: list[int], k: int) -> list[int]:
    total = sum(sizes)
    raw = [k * s / total for s in sizes]
    alloc = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(sizes)), key=lambda i: (-(raw[i] - alloc[i]), i))
    for i in order[:k - sum(alloc)]:
        alloc[i] += 1
    return alloc


def sample_deletion_subset(record: AttackRecord, fraction: float, seed: int) -> DeletionSet:
    """Uniformly sample max(1, round(fraction·|S_m|)) manipulated entities.

    Flipped nodes are sampled within strata of their observed label, with
    the count split proportionally, so both targeted classes are represented.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    m = len(record)
    k = max(1, int(np.floor(fraction * m + 0.5)))
    rng = np.random.default_rng(seed)
    if record.entity == "edge":
        idx = np.sort(rng.choice(m, size=k, replace=False))
        return make_deletion_set("edge", record.manipulated[idx])
    observed = record.graph.labels[record.manipulated]
    strata = [record.manipulated[observed == c] for c in np.unique(observed)]
    alloc = _largest_remainder([len(s) for s in strata], k)
    chosen = [rng.choice(s, size=n, replace=False) for s, n in zip(strata, alloc) if n]
    return make_deletion_set("node", np.concatenate(chosen))
