"""Seeded random hyperparameter search over unlearning configurations.

Each trial runs one budgeted cell and is scored by the validation
objective (mean of validation Acc_aff and Acc_rem); the best trial wins,
earliest first on ties.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .evaluation import MetricsReport, Prepared, TrainSpec, run_cell

log = logging.getLogger(__name__)

LR = ["log", 1e-5, 1e-1]

# parameter -> ["log", lo, hi] | ["int", lo, hi] | ["uniform", lo, hi] | ["choice", [values]]
SPACES = {
    "full": {"k_percent": ["int", 0, 10], "total_epochs": ["int", 1, 50], "contrast_epochs": ["int", 1, 5],
             "ascent_descent_epochs": ["int", 1, 5], "lr_contrast": LR, "lr_ascent": LR, "lr_descent": LR},
    "acdc_only": {"total_epochs": ["int", 1, 50], "ascent_descent_epochs": ["int", 1, 5],
                  "lr_ascent": LR, "lr_descent": LR},
    "single_opt_one_lr": {"total_epochs": ["int", 1, 50], "ascent_descent_epochs": ["int", 1, 5],
                          "lr_descent": LR, "ascent_lr_multiplier": ["log", 1e-3, 10.0]},
    "single_opt_combined": {"total_epochs": ["int", 1, 50], "ascent_descent_epochs": ["int", 1, 5],
                            "lr_descent": LR, "ascent_lr_multiplier": ["log", 1e-3, 10.0]},
    "scrub": {"epochs": ["int", 1, 50], "lr": LR, "distill_temperature": ["uniform", 1.0, 8.0],
              "away_weight": ["log", 1e-2, 10.0], "toward_weight": ["log", 1e-2, 10.0],
              "task_weight": ["log", 1e-2, 10.0]},
}


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    trials: int = 100
    seed: int = 0
    ranges: dict = field(default_factory=dict)  # overrides/extends the method's default space

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for name, spec in self.ranges.items():
            _check_range(name, spec)


def _check_range(name, spec):
    kind = spec[0]
    if kind == "choice":
        if not spec[1]:
            raise ValueError(f"{name}: empty choice list")
        return
    if kind not in ("log", "int", "uniform"):
        raise ValueError(f"{name}: unknown range kind {kind!r}")
    lo, hi = spec[1], spec[2]
    if not lo < hi:
        raise ValueError(f"{name}: degenerate range [{lo}, {hi}]")
    if kind == "log" and lo <= 0:
        raise ValueError(f"{name}: log range needs a positive lower bound")


def space_for(method: str, base: Optional[dict]) -> dict:
    if method == "scrub":
        return dict(SPACES["scrub"])
    if method == "acdc":
        return dict(SPACES["acdc_only"])
    if method == "cognac":
        return dict(SPACES[(base or {}).get("mode", "full")])
    raise ValueError(f"no search space for method {method!r}")


def sample(space: dict, rng: np.random.Generator) -> dict:
    out = {}
    for name in sorted(space):
        spec = space[name]
        kind = spec[0]
        if kind == "log":
            out[name] = float(np.exp(rng.uniform(np.log(spec[1]), np.log(spec[2]))))
        elif kind == "uniform":
            out[name] = float(rng.uniform(spec[1], spec[2]))
        elif kind == "int":
            out[name] = int(rng.integers(spec[1], spec[2] + 1))
        else:
            choices = spec[1]
            out[name] = choices[int(rng.integers(len(choices)))]
    return out


@dataclass
class Trial:
    index: int
    config: dict
    report: Optional[MetricsReport]
    error: str = ""

    @property
    def objective(self) -> float:
        return -np.inf if self.report is None else self.report.val_objective


@dataclass
class SearchResult:
    best_config: dict
    best: Trial
    trials: list


def hyperparameter_search(prep: Prepared, method: str, fraction: float, seed: int,
                          cfg: SearchConfig = SearchConfig(), base: Optional[dict] = None,
                          training: TrainSpec = TrainSpec(), time_budget_ratio: float = 0.25,
                          clock: str = "wall") -> SearchResult:
    """Random search over ``method``'s space, each trial budgeted on its own.

    ``base`` fixes parameters that are not searched (e.g. ``mode``,
    ``unlink``); sampled values override it.
    """
    space = space_for(method, base)
    space.update(cfg.ranges)
    for name, spec in space.items():
        _check_range(name, spec)
    rng = np.random.default_rng(cfg.seed)
    trials = []
    for i in range(cfg.trials):
        config = {**(base or {}), **sample(space, rng)}
        try:
            rep = run_cell(prep, method, fraction, seed, config, training, time_budget_ratio, clock)
            trials.append(Trial(i, config, rep))
        except (ValueError, ArithmeticError) as exc:
            log.warning("trial %d failed: %s", i, exc)
            trials.append(Trial(i, config, None, f"{type(exc).__name__}: {exc}"))
    ok = [t for t in trials if t.report is not None and np.isfinite(t.report.val_objective)]
    if not ok:
        raise SearchError("all trials failed:\n" + "\n".join(f"  #{t.index}: {t.error}" for t in trials))
    best = max(ok, key=lambda t: (t.objective, -t.index))
    return SearchResult(best.config, best, trials)
