"""Metrics and experiment orchestration.

A *cell* is one (dataset, attack, method, deletion fraction, seed)
combination. Every cell of a seed starts from the same poisoned model,
which is trained once and cached. Unlearning methods run under a time
budget equal to ``time_budget_ratio`` times the poisoned model's training
time, measured on the same clock.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import cost
from .attacks import AttackRecord, AttackSpec, run_attack, sample_deletion_subset
from .baselines import (METHODS, ScrubConfig, UnsupportedMethodError, run_oracle, run_retrain, run_scrub,
                        run_utu)
from .cognac import CognacConfig, run_cognac
from .gnn import ModelConfig, ModelState, OptimizerConfig, accuracy, forward, train
from .graph import Graph, SbmConfig, SplitConfig, generate_sbm, largest_connected_component, load_graph, make_splits

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["dataset", "attack", "method", "fraction", "seed", "acc_aff", "acc_rem",
                  "val_objective", "wall_time_s", "flags"]
REFERENCE_METHODS = ("oracle", "retrain")
DEFAULT_FRACTIONS = (0.05, 0.25, 0.50, 0.75, 1.00)


def fingerprint(obj) -> str:
    """Stable short hash of a JSON-serialisable config."""
    blob = json.dumps(obj, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return asdict(o)
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --- metrics --------------------------------------------------------------------

def _affected(g: Graph, classes) -> np.ndarray:
    return np.isin(g.labels, np.asarray(classes))


def _split_mask(g: Graph, split: str) -> np.ndarray:
    return {"test": g.test_mask, "val": g.val_mask, "train": g.train_mask}[split]


def acc_aff(state: ModelState, g: Graph, classes, split: str = "test", pred=None) -> float:
    """Accuracy (%) on nodes of ``split`` whose label is one of the targeted classes.

    ``g`` is the graph the model is evaluated on; attacks never touch
    val/test labels, so its labels there are the clean ground truth.
    """
    mask = _split_mask(g, split) & _affected(g, classes)
    if not mask.any():
        raise ValueError(f"no {split} nodes in the affected classes {tuple(classes)}")
    pred = forward(state, g).logits.argmax(axis=1) if pred is None else pred
    return 100.0 * accuracy(pred, g.labels, mask)


def acc_rem(state: ModelState, g: Graph, classes, split: str = "test", pred=None) -> float:
    """Accuracy (%) on nodes of ``split`` outside the targeted classes."""
    mask = _split_mask(g, split) & ~_affected(g, classes)
    if not mask.any():
        raise ValueError(f"no {split} nodes outside the affected classes {tuple(classes)}")
    pred = forward(state, g).logits.argmax(axis=1) if pred is None else pred
    return 100.0 * accuracy(pred, g.labels, mask)


def val_objective(g: Graph, classes):
    """Checkpoint score: mean of validation Acc_aff and Acc_rem, from eval logits."""
    aff = g.val_mask & _affected(g, classes)
    rem = g.val_mask & ~_affected(g, classes)

    def objective(logits: np.ndarray) -> float:
        pred = logits.argmax(axis=1)
        parts = [100.0 * accuracy(pred, g.labels, m) for m in (aff, rem) if m.any()]
        return float(np.mean(parts))

    return objective


# --- experiment configuration ------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic SBM (seeded per cell) or an ingested dataset directory."""

    name: str = "sbm"
    sbm: Optional[SbmConfig] = field(default_factory=SbmConfig)
    path: Optional[str] = None
    lcc: bool = True
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2

    def build(self, seed: int) -> Graph:
        if self.path:
            g = load_graph(self.path)
        else:
            g = generate_sbm(replace(self.sbm, seed=seed))
        if self.lcc:
            g, _ = largest_connected_component(g)
        if not g.has_masks or not self.path:
            g = make_splits(g, SplitConfig(self.train_frac, self.val_frac, self.test_frac, seed))
        return g


@dataclass(frozen=True)
class TrainSpec:
    hidden_dim: int = 64
    dropout: float = 0.5
    epochs: int = 300
    lr: float = 0.01
    weight_init_scale: float = 1.0

    def model_config(self, g: Graph, seed: int) -> ModelConfig:
        return ModelConfig(g.feature_dim, g.num_classes, self.hidden_dim, self.dropout,
                           self.weight_init_scale, seed)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.lr)


@dataclass
class Prepared:
    """Clean graph, attack record and poisoned model for one seed."""

    clean: Graph
    record: AttackRecord
    state: ModelState
    train_time: float
    key: str

    @property
    def poisoned_fingerprint(self) -> str:
        return self.state.fingerprint()


_prepared_cache: dict[str, Prepared] = {}


def prepare(dataset: DatasetSpec, attack: AttackSpec, training: TrainSpec, seed: int,
            clock: str = "wall", cache_dir=None) -> Prepared:
    """Build the dataset, attack it and train the poisoned model, with caching
    in memory and (optionally) on disk keyed by the configuration."""
    key = fingerprint({"dataset": dataset, "attack": attack, "train": training, "seed": seed,
                       "clock": clock})
    if key in _prepared_cache:
        return _prepared_cache[key]
    path = Path(cache_dir) / f"poisoned-{key}.pkl" if cache_dir else None
    if path is not None and path.exists():
        with open(path, "rb") as fh:
            prep = pickle.load(fh)
    else:
        clean = dataset.build(seed)
        record = run_attack(clean, replace(attack, seed=seed))
        cfg = training.model_config(record.graph, seed)
        state, rep = train(record.graph, cfg, training.optimizer(), training.epochs, clock=clock)
        prep = Prepared(clean, record, state, rep.wall_time, key)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                pickle.dump(prep, fh)
    _prepared_cache[key] = prep
    return prep


@dataclass
class MetricsReport:
    dataset: str
    attack: str
    method: str
    fraction: float
    seed: int
    acc_aff: float
    acc_rem: float
    val_objective: float
    wall_time_seconds: float
    flags: list = field(default_factory=list)
    config_fingerprint: str = ""
    poisoned_fingerprint: str = ""
    budget_seconds: float = float("nan")
    train_time_seconds: float = float("nan")

    def row(self) -> list[str]:
        return [self.dataset, self.attack, self.method, _fmt(self.fraction), str(self.seed),
                _fmt(self.acc_aff), _fmt(self.acc_rem), _fmt(self.val_objective),
                _fmt(self.wall_time_seconds), ";".join(self.flags)]


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.10g}"


def method_config(method: str, overrides: Optional[dict], seed: int):
    """Typed config for ``method`` from a plain mapping of overrides."""
    overrides = dict(overrides or {})
    kinds = {"cognac": CognacConfig, "acdc": CognacConfig, "scrub": ScrubConfig}
    if method in kinds:
        if method == "acdc":
            overrides["mode"] = "acdc_only"
        names = {f.name for f in dataclasses.fields(kinds[method])}
        unknown = sorted(set(overrides) - names)
        if unknown:
            raise ValueError(f"unknown {method} parameters {unknown}")
        return kinds[method](**{**overrides, "seed": seed})
    if overrides:
        raise ValueError(f"method {method!r} takes no configuration, got {sorted(overrides)}")
    return None


def run_cell(prep: Prepared, method: str, fraction: float, seed: int, config: Optional[dict] = None,
             training: TrainSpec = TrainSpec(), time_budget_ratio: float = 0.25, clock: str = "wall",
             dataset_name: str = "sbm") -> MetricsReport:
    """Derive the deletion set, run ``method`` under the time budget and score it."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if time_budget_ratio <= 0:
        raise ValueError("time_budget_ratio must be > 0")
    record = prep.record
    classes = record.affected_classes
    deletion = sample_deletion_subset(record, fraction, seed)
    mcfg = method_config(method, config, seed)
    limit = time_budget_ratio * prep.train_time
    flags: list[str] = []
    g = record.graph
    budget = cost.Budget(None if method in REFERENCE_METHODS else limit, clock)
    with budget:
        if method == "original":
            state, eval_g = prep.state, g
        elif method == "oracle":
            state, eval_g = run_oracle(record, training.model_config(g, seed), training.optimizer(),
                                       training.epochs)
        elif method == "retrain":
            state, eval_g = run_retrain(g, deletion, training.model_config(g, seed), training.optimizer(),
                                        training.epochs, seed=seed + 7919)
        elif method == "utu":
            state, eval_g = run_utu(prep.state, g, deletion)
        else:
            runner = run_scrub if method == "scrub" else run_cognac
            # unlinking never changes labels or masks, so g scores the working graph too
            state, eval_g, rep = runner(prep.state, g, deletion, mcfg, val_objective(g, classes), budget)
            if rep.budget_exhausted:
                flags.append("budget_exhausted")
        wall = budget.elapsed()
    if method in REFERENCE_METHODS:
        flags.append("reference")
    if method == "oracle":
        flags.append("upper_bound")
    pred = forward(state, eval_g).logits.argmax(axis=1)
    vo = val_objective(eval_g, classes)(forward(state, eval_g).logits)
    return MetricsReport(
        dataset_name, record.kind, method, float(fraction), int(seed),
        acc_aff(state, eval_g, classes, pred=pred), acc_rem(state, eval_g, classes, pred=pred), vo, wall,
        flags, fingerprint({"method": method, "config": mcfg, "fraction": fraction, "seed": seed,
                            "prep": prep.key}),
        prep.poisoned_fingerprint, limit, prep.train_time)


# --- sweeps --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    methods: tuple = ("original", "cognac")
    fractions: tuple = DEFAULT_FRACTIONS
    seeds: tuple = (0, 1, 2, 3, 4)
    time_budget_ratio: float = 0.25
    clock: str = "wall"
    method_configs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not all(0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if self.time_budget_ratio <= 0:
            raise ValueError("time_budget_ratio must be > 0")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.clock not in cost.CLOCKS:
            raise ValueError(f"clock must be one of {cost.CLOCKS}")


def sweep_config_from_dict(d: dict) -> SweepConfig:
    """Build a SweepConfig from a mapping whose keys mirror the field names.

    ``seeds`` may be a list or a count; a count expands to
    ``master_seed .. master_seed + count - 1``.
    """
    d = dict(d)
    unknown = set(d) - {f.name for f in dataclasses.fields(SweepConfig)} - {"master_seed"}
    if unknown:
        raise ValueError(f"unknown sweep keys {sorted(unknown)}")
    master = int(d.pop("master_seed", 0))
    ds = dict(d.pop("dataset", {}) or {})
    if "sbm" in ds and ds["sbm"] is not None:
        ds["sbm"] = SbmConfig(**ds["sbm"])
    if ds.get("path"):
        ds.setdefault("sbm", None)
    kw = {"dataset": DatasetSpec(**ds), "attack": AttackSpec(**(d.pop("attack", {}) or {})),
          "train": TrainSpec(**(d.pop("train", {}) or {}))}
    seeds = d.pop("seeds", 5)
    kw["seeds"] = tuple(range(master, master + int(seeds))) if isinstance(seeds, int) else tuple(seeds)
    for key in ("methods", "fractions"):
        if key in d:
            kw[key] = tuple(d.pop(key))
    kw.update(d)
    return SweepConfig(**kw)


@dataclass
class SweepResult:
    rows: list
    summary: list  # dicts per (method, fraction)
    delta_rem: dict  # method -> mean Acc_rem change vs the poisoned model

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(self.rows, out / "results.csv")
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "fraction", "n", "acc_aff_mean", "acc_aff_std", "acc_rem_mean",
                        "acc_rem_std", "delta_acc_rem"])
            for s in self.summary:
                w.writerow([s["method"], _fmt(s["fraction"]), s["n"], f"{s['acc_aff_mean']:.1f}",
                            f"{s['acc_aff_std']:.1f}", f"{s['acc_rem_mean']:.1f}", f"{s['acc_rem_std']:.1f}",
                            "" if s["method"] not in self.delta_rem else f"{self.delta_rem[s['method']]:.1f}"])
        return out / "results.csv"


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow(r.row())


def aggregate(rows: list) -> tuple[list, dict]:
    """Per (method, fraction) mean/population-std and per-method ΔAcc_rem
    against the poisoned model, averaged over fractions and seeds."""
    ok = [r for r in rows if not any(f.startswith("error") for f in r.flags)]
    groups: dict = {}
    for r in ok:
        groups.setdefault((r.method, r.fraction), []).append(r)
    summary = []
    for (m, f), rs in groups.items():
        aff = np.array([r.acc_aff for r in rs])
        rem = np.array([r.acc_rem for r in rs])
        summary.append({"method": m, "fraction": f, "n": len(rs), "acc_aff_mean": float(aff.mean()),
                        "acc_aff_std": float(aff.std()), "acc_rem_mean": float(rem.mean()),
                        "acc_rem_std": float(rem.std())})
    base = {(r.fraction, r.seed): r.acc_rem for r in ok if r.method == "original"}
    delta: dict = {}
    for r in ok:
        if (r.fraction, r.seed) in base:
            delta.setdefault(r.method, []).append(r.acc_rem - base[(r.fraction, r.seed)])
    return summary, {m: float(np.mean(v)) for m, v in delta.items()}


def _error_row(cfg: SweepConfig, method, fraction, seed, exc) -> MetricsReport:
    msg = f"error:{type(exc).__name__}:{exc}".replace(",", " ").replace("\n", " ")
    return MetricsReport(cfg.dataset.name, cfg.attack.kind, method, float(fraction), int(seed),
                         float("nan"), float("nan"), float("nan"), 0.0, [msg])


def _run_seed(cfg: SweepConfig, seed: int, cache_dir) -> list:
    rows = []
    try:
        prep = prepare(cfg.dataset, cfg.attack, cfg.train, seed, cfg.clock, cache_dir)
    except Exception as exc:  # recorded per row, sweep continues
        return [_error_row(cfg, m, f, seed, exc) for m in cfg.methods for f in cfg.fractions]
    for method in cfg.methods:
        for fraction in cfg.fractions:
            try:
                rows.append(run_cell(prep, method, fraction, seed, cfg.method_configs.get(method), cfg.train,
                                     cfg.time_budget_ratio, cfg.clock, cfg.dataset.name))
            except (UnsupportedMethodError, ValueError, ArithmeticError) as exc:
                log.warning("cell %s/%s/%s failed: %s", method, fraction, seed, exc)
                rows.append(_error_row(cfg, method, fraction, seed, exc))
    return rows


def run_sweep(cfg: SweepConfig, jobs: int = 1, cache_dir=None) -> SweepResult:
    """Every method × fraction × seed cell, rows ordered by (seed, method, fraction)."""
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            chunks = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds, [cache_dir] * len(cfg.seeds)))
    else:
        chunks = [_run_seed(cfg, s, cache_dir) for s in cfg.seeds]
    rows = [r for chunk in chunks for r in chunk]
    summary, delta = aggregate(rows)
    return SweepResult(rows, summary, delta)


# --- embeddings ----------------------------------------------------------------------

def export_embeddings(state: ModelState, g: Graph, classes, path, layer: str = "hidden") -> int:
    """Write ``node_id,label,affected,e0..`` rows for every test node; returns the row count."""
    tr = forward(state, g)
    emb = {"hidden": tr.hidden, "logits": tr.logits}[layer]
    nodes = np.flatnonzero(g.test_mask)
    aff = _affected(g, classes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "label", "affected"] + [f"e{i}" for i in range(emb.shape[1])])
        for v in nodes:
            w.writerow([int(v), int(g.labels[v]), int(aff[v])] + [repr(float(x)) for x in emb[v]])
    return len(nodes)
