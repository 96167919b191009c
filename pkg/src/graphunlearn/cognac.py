"""Corrective unlearning by contrastive neighborhood repair plus decoupled
ascent/descent (the ``cognac`` method and its ablations).

One outer epoch runs ``contrast_epochs`` contrastive steps on the affected
neighbors of the deletion set, then ``ascent_descent_epochs`` rounds of
gradient ascent on the deletion nodes and descent on the retained train
nodes, each with its own Adam instance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .attacks import DeletionSet
from .cost import Budget
from .gnn import (ForwardTrace, ModelState, OptimizerConfig, adam_step, backward, forward,
                  masked_cross_entropy, normalize_adjacency)
from .graph import Graph

MODES = ("full", "acdc_only", "single_opt_one_lr", "single_opt_combined")
SELECTIONS = ("topk", "random")
EMBEDDINGS = ("hidden", "logits")


@dataclass(frozen=True)
class CognacConfig:
    k_percent: float = 4.0
    total_epochs: int = 20
    contrast_epochs: int = 1
    ascent_descent_epochs: int = 1
    lr_contrast: float = 1e-3
    lr_ascent: float = 1e-3
    lr_descent: float = 1e-2
    mode: str = "full"
    unlink: Optional[bool] = None  # None: unlink edges, keep nodes
    ascent_lr_multiplier: float = 0.1
    embedding: str = "hidden"
    neighbor_selection: str = "topk"
    resample_pairs: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.k_percent <= 100:
            raise ValueError("k_percent must lie in [0, 100]")
        if min(self.total_epochs, self.contrast_epochs, self.ascent_descent_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")
        if min(self.lr_contrast, self.lr_ascent, self.lr_descent, self.ascent_lr_multiplier) < 0:
            raise ValueError("learning rates must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"unknown embedding {self.embedding!r}")
        if self.neighbor_selection not in SELECTIONS:
            raise ValueError(f"unknown neighbor_selection {self.neighbor_selection!r}")

    def unlinks(self, entity: str) -> bool:
        return (entity == "edge") if self.unlink is None else bool(self.unlink)


@dataclass
class AffectedSet:
    nodes: np.ndarray
    scores: np.ndarray  # logit change of every node, zero on the deletion vertices

    def __len__(self):
        return len(self.nodes)


@dataclass
class ContrastPairs:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return len(self.anchors)


def invert_features(features: np.ndarray, nodes) -> np.ndarray:
    """Copy of ``features`` with the rows of ``nodes`` complemented (1 - x)."""
    out = np.array(features, dtype=np.float64, copy=True)
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes):
        out[nodes] = 1.0 - out[nodes]
    return out


def identify_affected_nodes(state: ModelState, g: Graph, vertices, k_percent: float) -> AffectedSet:
    """Top-k% non-deletion nodes ranked by the L1 change of their logits when
    the deletion vertices' features are complemented. Ties go to lower ids."""
    vertices = np.asarray(vertices, dtype=np.int64)
    base = forward(state, g, g.features).logits
    probe = forward(state, g, invert_features(g.features, vertices)).logits
    delta = np.abs(probe - base).sum(axis=1)
    delta[vertices] = 0.0
    cand = np.setdiff1d(np.arange(g.num_nodes), vertices)
    count = int(np.floor(k_percent / 100.0 * len(cand) + 1e-9))
    order = cand[np.lexsort((cand, -delta[cand]))]
    return AffectedSet(np.sort(order[:count]), delta)


def hop_neighborhood(g: Graph, seeds, hops: int = 2) -> np.ndarray:
    """Nodes within ``hops`` edges of ``seeds``, excluding the seeds."""
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    reached = np.zeros(g.num_nodes, bool)
    reached[seeds] = True
    frontier = seeds
    for _ in range(hops):
        nxt = np.unique(np.concatenate([g.neighbors(v) for v in frontier])) if len(frontier) else frontier
        nxt = nxt[~reached[nxt]]
        reached[nxt] = True
        frontier = nxt
    reached[seeds] = False
    return np.flatnonzero(reached)


def random_neighbors(g: Graph, vertices, count: int, rng: np.random.Generator, hops: int = 2) -> AffectedSet:
    """Control for top-k selection: ``count`` nodes drawn from the n-hop neighborhood."""
    pool = hop_neighborhood(g, vertices, hops)
    take = min(count, len(pool))
    nodes = np.sort(rng.choice(pool, size=take, replace=False)) if take else pool[:0]
    return AffectedSet(nodes, np.zeros(g.num_nodes))


def sample_contrast_pairs(g: Graph, affected: AffectedSet, vertices, rng: np.random.Generator) -> ContrastPairs:
    """One neighbor positive (outside the deletion vertices) and one deletion-vertex
    negative per affected node; nodes without an eligible neighbor are dropped."""
    vertices = np.asarray(vertices, dtype=np.int64)
    if len(vertices) == 0:
        raise ValueError("no deletion vertices to draw negatives from")
    banned = np.zeros(g.num_nodes, bool)
    banned[vertices] = True
    anchors, pos = [], []
    for v in affected.nodes:
        nb = g.neighbors(v)
        nb = nb[~banned[nb]]
        if len(nb):
            anchors.append(v)
            pos.append(nb[rng.integers(len(nb))])
    neg = vertices[rng.integers(len(vertices), size=len(anchors))]
    return ContrastPairs(np.array(anchors, np.int64), np.array(pos, np.int64), neg.astype(np.int64))


def contrastive_loss(z: np.ndarray, pairs: ContrastPairs) -> tuple[float, np.ndarray]:
    """Summed -log σ(z_v·z_p) - log σ(-z_v·z_n) and its gradient w.r.t. ``z``."""
    v, p, n = pairs.anchors, pairs.positives, pairs.negatives
    sp = kernels.row_pair_dots(z, v, p)
    sn = kernels.row_pair_dots(z, v, n)
    loss = float(np.logaddexp(0.0, -sp).sum() + np.logaddexp(0.0, sn).sum())
    gp = -_sigmoid(-sp)[:, None]
    gn = _sigmoid(sn)[:, None]
    dz = np.zeros_like(z)
    np.add.at(dz, v, gp * z[p] + gn * z[n])
    np.add.at(dz, p, gp * z[v])
    np.add.at(dz, n, gn * z[v])
    return loss, dz


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def contrastive_gradients(state: ModelState, g, pairs: ContrastPairs, embedding: str = "hidden",
                          train_mode: bool = True, features=None):
    trace = forward(state, g, g.features if features is None else features, train_mode)
    if embedding == "hidden":
        loss, dz = contrastive_loss(trace.embedding, pairs)
        grads = backward(state, trace, dembedding=dz)
    else:
        loss, dz = contrastive_loss(trace.logits, pairs)
        grads = backward(state, trace, dlogits=dz)
    return loss, grads, trace


def contrastive_step(state: ModelState, g, pairs: ContrastPairs, opt_cfg: OptimizerConfig,
                     opt: str = "contrast", embedding: str = "hidden", features=None) -> float:
    """One Adam step on the contrastive loss; returns the pre-step loss."""
    if "contrast" not in state.optimizers and opt == "contrast":
        state.add_optimizer(opt)
    loss, grads, _ = contrastive_gradients(state, g, pairs, embedding, features=features)
    adam_step(state, grads, opt, opt_cfg)
    return loss


def _ce_grads(state, g, features, labels, mask, train_mode=True):
    trace: ForwardTrace = forward(state, g, features, train_mode)
    loss, dlogits = masked_cross_entropy(trace.logits, labels, mask)
    return loss, dlogits, trace


def ascent_descent_epoch(state: ModelState, g, labels: np.ndarray, forget_mask: np.ndarray,
                         retain_mask: np.ndarray, ascent_cfg: OptimizerConfig,
                         descent_cfg: OptimizerConfig, mode: str = "full",
                         ascent_lr_multiplier: float = 1.0, features=None) -> tuple[float, float]:
    """Ascend cross-entropy on ``forget_mask`` and descend it on ``retain_mask``.

    ``full``/``acdc_only`` use optimizer instances ``ascent`` and ``descent``;
    ``single_opt_one_lr`` runs both steps on one ``shared`` instance with the
    ascent step's rate scaled by ``ascent_lr_multiplier``;
    ``single_opt_combined`` takes one ``shared`` step on the retain loss minus
    ``ascent_lr_multiplier`` times the forget loss. An empty forget mask
    skips the ascent. Returns the (ascent, descent) cross-entropies before
    their steps (nan when skipped).
    """
    if features is None:
        features = g.features
    has_forget = bool(forget_mask.any())
    a_loss = d_loss = float("nan")
    if mode in ("full", "acdc_only"):
        if has_forget:
            a_loss, dl, tr = _ce_grads(state, g, features, labels, forget_mask)
            adam_step(state, backward(state, tr, dlogits=-dl), "ascent", ascent_cfg)
        d_loss, dl, tr = _ce_grads(state, g, features, labels, retain_mask)
        adam_step(state, backward(state, tr, dlogits=dl), "descent", descent_cfg)
    elif mode == "single_opt_one_lr":
        if has_forget:
            a_loss, dl, tr = _ce_grads(state, g, features, labels, forget_mask)
            adam_step(state, backward(state, tr, dlogits=-dl), "shared", descent_cfg,
                      lr_scale=ascent_lr_multiplier)
        d_loss, dl, tr = _ce_grads(state, g, features, labels, retain_mask)
        adam_step(state, backward(state, tr, dlogits=dl), "shared", descent_cfg)
    elif mode == "single_opt_combined":
        tr = forward(state, g, features, train_mode=True)
        d_loss, dl = masked_cross_entropy(tr.logits, labels, retain_mask)
        if has_forget:
            a_loss, al = masked_cross_entropy(tr.logits, labels, forget_mask)
            dl = dl - ascent_lr_multiplier * al
        adam_step(state, backward(state, tr, dlogits=dl), "shared", descent_cfg)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a_loss, d_loss


@dataclass
class UnlearnReport:
    """Outcome of a budgeted unlearning run."""

    best_epoch: int = 0
    best_objective: float = float("nan")
    epochs_run: int = 0
    budget_exhausted: bool = False
    trace: list = field(default_factory=list)  # (outer_step, contrast, ascent, descent)
    affected: Optional[AffectedSet] = None

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["outer_step", "contrast_loss", "ascent_loss", "descent_loss"])
            for row in self.trace:
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def working_graph(g: Graph, deletion: DeletionSet, unlink: bool) -> Graph:
    """Structure the unlearning runs on: deletion edges dropped, or deletion
    nodes detached from all their neighbors, when ``unlink``."""
    if not unlink:
        return g
    if deletion.entity == "edge":
        return g.remove_edges(deletion.ids)
    return g.isolate_nodes(deletion.ids)


def run_cognac(state: ModelState, g: Graph, deletion: DeletionSet, cfg: CognacConfig = CognacConfig(),
               objective: Optional[Callable[[np.ndarray], float]] = None,
               budget: Optional[Budget] = None) -> tuple[ModelState, Graph, UnlearnReport]:
    """Unlearn ``deletion`` from a model trained on the manipulated graph ``g``.

    Returns the best checkpoint under ``objective`` (validation score of
    eval-mode logits on the working graph), the graph to evaluate it on and
    a report. Without an objective the final state is returned.
    """
    report = UnlearnReport()
    unlink = cfg.unlinks(deletion.entity)
    work = working_graph(g, deletion, unlink)
    if cfg.total_epochs == 0:
        return state, work, report
    budget = budget or Budget(None)
    rng = np.random.default_rng(cfg.seed)
    state = state.copy()
    state.rng = np.random.default_rng(rng.integers(2**63))
    state.optimizers = {}
    vf = deletion.vertices

    use_contrast = cfg.mode == "full" and cfg.contrast_epochs > 0 and cfg.k_percent > 0
    if use_contrast:
        if cfg.neighbor_selection == "topk":
            affected = identify_affected_nodes(state, g, vf, cfg.k_percent)
        else:
            cand = g.num_nodes - len(vf)
            count = int(np.floor(cfg.k_percent / 100.0 * cand + 1e-9))
            affected = random_neighbors(g, vf, count, rng)
        report.affected = affected
        use_contrast = len(affected) > 0

    steps_c = cfg.total_epochs * cfg.contrast_epochs
    steps_ad = cfg.total_epochs * cfg.ascent_descent_epochs
    contrast_cfg = OptimizerConfig(cfg.lr_contrast, decay_steps=steps_c)
    ascent_cfg = OptimizerConfig(cfg.lr_ascent, decay_steps=steps_ad)
    descent_cfg = OptimizerConfig(cfg.lr_descent, decay_steps=steps_ad)
    if cfg.mode == "single_opt_one_lr":
        descent_cfg = OptimizerConfig(cfg.lr_descent, decay_steps=2 * steps_ad)
    for name in ("contrast", "ascent", "descent", "shared"):
        state.add_optimizer(name)

    adj = normalize_adjacency(work)
    feats = work.features
    forget = np.zeros(g.num_nodes, bool)
    forget[vf] = True
    forget &= g.train_mask
    retain = g.train_mask & ~np.isin(np.arange(g.num_nodes), vf)

    pairs = None
    best, best_obj = None, -np.inf
    for outer in range(1, cfg.total_epochs + 1):
        if budget.should_stop():
            break
        c_loss = float("nan")
        if use_contrast:
            if pairs is None or cfg.resample_pairs:
                pairs = sample_contrast_pairs(work, report.affected, vf, rng)
            if len(pairs):
                for _ in range(cfg.contrast_epochs):
                    c_loss = contrastive_step(state, adj, pairs, contrast_cfg,
                                              embedding=cfg.embedding, features=feats)
        a_loss = d_loss = float("nan")
        for _ in range(cfg.ascent_descent_epochs):
            a_loss, d_loss = ascent_descent_epoch(state, adj, work.labels, forget, retain, ascent_cfg,
                                                  descent_cfg, cfg.mode, cfg.ascent_lr_multiplier,
                                                  features=feats)
        report.trace.append((outer, c_loss, a_loss, d_loss))
        report.epochs_run = outer
        if objective is not None:
            obj = objective(forward(state, adj, feats).logits)
            if obj > best_obj:
                best, best_obj, report.best_epoch = state.copy(), obj, outer
        budget.mark()
    report.budget_exhausted = budget.exhausted
    report.best_objective = float(best_obj) if best is not None else float("nan")
    if best is None:
        best = state
        report.best_epoch = report.epochs_run
    return best, work, report
