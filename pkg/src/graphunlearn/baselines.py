"""Reference points and competing unlearning methods.

GNNDelete, GIF and MEGU are deliberately absent; ``METHODS`` is the closed
set the evaluation harness accepts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .attacks import AttackRecord, DeletionSet
from .cognac import UnlearnReport
from .cost import Budget
from .gnn import (ModelConfig, ModelState, OptimizerConfig, adam_step, backward, forward, log_softmax,
                  masked_cross_entropy, normalize_adjacency, train)
from .graph import Graph

METHODS = ("original", "oracle", "retrain", "utu", "scrub", "cognac", "acdc")


class UnsupportedMethodError(ValueError):
    pass


def run_original(state: ModelState) -> ModelState:
    return state


def run_retrain(g: Graph, deletion: DeletionSet, model_cfg: ModelConfig, opt_cfg: OptimizerConfig,
                epochs: int, seed: int, objective_factory=None) -> tuple[ModelState, Graph]:
    """Train a fresh model on ``g`` without the deletion entities.

    Nodes are removed together with their incident edges (ids are
    re-indexed), edges are removed from the adjacency. ``objective_factory``
    maps the reduced graph to a checkpoint objective.
    """
    if deletion is None or len(deletion) == 0:
        raise ValueError("retrain needs a non-empty deletion set")
    if deletion.entity == "node":
        keep = np.setdiff1d(np.arange(g.num_nodes), deletion.ids)
        reduced, _ = g.subgraph(keep)
    else:
        reduced = g.remove_edges(deletion.ids)
    cfg = ModelConfig(**{**model_cfg.__dict__, "seed": seed})
    objective = objective_factory(reduced) if objective_factory else None
    state, _ = train(reduced, cfg, opt_cfg, epochs, objective)
    return state, reduced


def run_oracle(record: AttackRecord, model_cfg: ModelConfig, opt_cfg: OptimizerConfig, epochs: int,
               objective_factory=None) -> tuple[ModelState, Graph]:
    """Train on the reconstructed clean graph: the empirical upper bound."""
    clean = record.reconstruct()
    objective = objective_factory(clean) if objective_factory else None
    state, _ = train(clean, model_cfg, opt_cfg, epochs, objective)
    state.meta["upper_bound"] = True
    return state, clean


def run_utu(state: ModelState, g: Graph, deletion: DeletionSet) -> tuple[ModelState, Graph]:
    """Zero-cost unlinking: same weights, deletion edges dropped at inference."""
    if deletion.entity != "edge":
        raise UnsupportedMethodError("utu only unlearns edges")
    return state, g.remove_edges(deletion.ids)


@dataclass(frozen=True)
class ScrubConfig:
    epochs: int = 10
    distill_temperature: float = 4.0
    away_weight: float = 1.0
    toward_weight: float = 1.0
    task_weight: float = 1.0
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.distill_temperature <= 0:
            raise ValueError("distill_temperature must be > 0")
        if min(self.away_weight, self.toward_weight, self.task_weight, self.lr) < 0:
            raise ValueError("weights and lr must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p ∥ q) for probability rows."""
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


def distill_kl(student_logits: np.ndarray, teacher_logits: np.ndarray, mask: np.ndarray,
               temperature: float) -> tuple[float, np.ndarray]:
    """Mean over masked rows of KL(student ∥ teacher) at ``temperature`` and
    its gradient w.r.t. the student logits."""
    idx = np.flatnonzero(mask)
    grad = np.zeros_like(student_logits)
    if len(idx) == 0:
        return 0.0, grad
    ls = log_softmax(student_logits[idx] / temperature)
    lt = log_softmax(teacher_logits[idx] / temperature)
    s = np.exp(ls)
    per = np.sum(s * (ls - lt), axis=1)
    grad[idx] = s * ((ls - lt) - per[:, None]) / (temperature * len(idx))
    return float(per.mean()), grad


def run_scrub(state: ModelState, g: Graph, deletion: DeletionSet, cfg: ScrubConfig = ScrubConfig(),
              objective: Optional[Callable[[np.ndarray], float]] = None,
              budget: Optional[Budget] = None) -> tuple[ModelState, Graph, UnlearnReport]:
    """Teacher-student unlearning: each epoch first moves the student away from
    the frozen teacher on the deletion vertices, then toward it (plus the
    task loss) on the retained train nodes. The graph is left unchanged."""
    report = UnlearnReport()
    if cfg.epochs == 0:
        return state, g, report
    budget = budget or Budget(None)
    adj = normalize_adjacency(g)
    teacher = forward(state, adj, g.features).logits
    student = state.copy()
    student.rng = np.random.default_rng(cfg.seed)
    student.optimizers = {}
    student.add_optimizer("scrub")
    opt = OptimizerConfig(cfg.lr, decay_steps=2 * cfg.epochs)
    forget = np.zeros(g.num_nodes, bool)
    forget[deletion.vertices] = True
    retain = g.train_mask & ~forget
    best, best_obj = None, -np.inf
    for epoch in range(1, cfg.epochs + 1):
        if budget.should_stop():
            break
        tr = forward(student, adj, g.features, train_mode=True)
        away, dl = distill_kl(tr.logits, teacher, forget, cfg.distill_temperature)
        adam_step(student, backward(student, tr, dlogits=-cfg.away_weight * dl), "scrub", opt)
        tr = forward(student, adj, g.features, train_mode=True)
        toward, dk = distill_kl(tr.logits, teacher, retain, cfg.distill_temperature)
        task, dc = masked_cross_entropy(tr.logits, g.labels, retain)
        grad = cfg.toward_weight * dk + cfg.task_weight * dc
        adam_step(student, backward(student, tr, dlogits=grad), "scrub", opt)
        report.trace.append((epoch, away, toward, task))
        report.epochs_run = epoch
        if objective is not None:
            obj = objective(forward(student, adj, g.features).logits)
            if obj > best_obj:
                best, best_obj, report.best_epoch = student.copy(), obj, epoch
        budget.mark()
    report.budget_exhausted = budget.exhausted
    if best is None:
        best = student
        report.best_epoch = report.epochs_run
    else:
        report.best_objective = float(best_obj)
    return best, g, report
