"""``graphunlearn`` command-line entry point.

Every command writes its artifacts under ``--out-dir`` in a directory or
file named after the fingerprint of its effective configuration, and prints
a single summary line. ``--config`` takes a YAML mapping whose keys are the
command's option names (dashes or underscores); explicit flags win.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import cost
from .attacks import AttackSpec, load_attack_record, run_attack, sample_deletion_subset
from .baselines import METHODS, run_retrain, run_scrub, run_utu
from .cognac import run_cognac
from .evaluation import (TrainSpec, acc_aff, acc_rem, export_embeddings, fingerprint, method_config, run_sweep,
                         sweep_config_from_dict, val_objective, prepare)
from .gnn import forward, load_checkpoint, save_checkpoint, train
from .gradcheck import TOLERANCE, run_gradcheck
from .graph import (SbmConfig, SplitConfig, generate_sbm, largest_connected_component, load_graph, make_splits,
                    save_graph)
from .search import SearchConfig, hyperparameter_search

log = logging.getLogger("graphunlearn")


class CommandError(RuntimeError):
    """A runtime failure reported with exit code 1."""


def _classes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated class ids, got {text!r}")


def _fractions(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(f) for f in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated fractions, got {text!r}")


def _artifact(out_dir: Path, kind: str, config: dict, suffix: str = "") -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / f"{kind}-{fingerprint(config)}{suffix}"


def _meta_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".json")


def _read_meta(ckpt: Path) -> dict:
    p = _meta_path(ckpt)
    return json.loads(p.read_text()) if p.exists() else {}


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    for f in sorted(p.iterdir()) if p.is_dir() else [p]:
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


# --- commands ----------------------------------------------------------------------

def cmd_ingest(a) -> str:
    g = load_graph(a.input, a.format)
    if a.lcc:
        g, _ = largest_connected_component(g)
    if not g.has_masks or a.resplit:
        g = make_splits(g, SplitConfig(*a.split, seed=a.seed))
    out = _artifact(a.out_dir, "graph", {"input": _file_digest(Path(a.input)), "lcc": a.lcc,
                                         "split": a.split, "resplit": a.resplit, "seed": a.seed})
    save_graph(g, out)
    return f"ingested nodes={g.num_nodes} edges={g.num_edges} classes={g.num_classes} -> {out}"


def cmd_gen_sbm(a) -> str:
    sbm = SbmConfig(a.blocks, a.nodes_per_block, a.p_in, a.p_out, a.feature_dim, a.feature_noise, a.seed)
    g = generate_sbm(sbm)
    if a.lcc:
        g, _ = largest_connected_component(g)
    g = make_splits(g, SplitConfig(*a.split, seed=a.seed))
    out = _artifact(a.out_dir, "graph", {"sbm": sbm, "lcc": a.lcc, "split": a.split})
    save_graph(g, out)
    return f"generated nodes={g.num_nodes} edges={g.num_edges} classes={g.num_classes} -> {out}"


def cmd_train(a) -> str:
    g = load_graph(a.graph)
    spec = TrainSpec(a.hidden_dim, a.dropout, a.epochs, a.lr)
    cfg = spec.model_config(g, a.seed)
    state, rep = train(g, cfg, spec.optimizer(), spec.epochs, clock=a.clock)
    out = _artifact(a.out_dir, "model", {"graph": _file_digest(Path(a.graph)), "train": spec, "seed": a.seed},
                    ".ckpt")
    save_checkpoint(state, out)
    pred = forward(state, g).logits.argmax(axis=1)
    test_acc = float((pred[g.test_mask] == g.labels[g.test_mask]).mean() * 100)
    _meta_path(out).write_text(json.dumps({"train_time": rep.wall_time, "clock": a.clock,
                                           "best_epoch": rep.best_epoch,
                                           "best_val": rep.best_objective}, indent=1) + "\n")
    return (f"trained epochs={spec.epochs} best_epoch={rep.best_epoch} val={rep.best_objective:.4f} "
            f"test_acc={test_acc:.2f} time={rep.wall_time:.3f}s -> {out}")


def cmd_attack(a) -> str:
    g = load_graph(a.graph)
    spec = AttackSpec(a.kind, a.class_a, a.class_b, a.budget, a.seed)
    record = run_attack(g, spec)
    out = _artifact(a.out_dir, "attack", {"graph": _file_digest(Path(a.graph)), "spec": spec})
    save_graph(record.graph, out)
    record.save(out / "record.json")
    return f"attack {spec.kind} manipulated={len(record)} -> {out}"


def _load_method_config(a) -> dict:
    cfg = dict(a.method_config or {})
    for item in a.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise CommandError(f"--set expects key=value, got {item!r}")
        cfg[key] = yaml.safe_load(val)
    return cfg


def cmd_unlearn(a) -> str:
    g = load_graph(a.graph)
    record = load_attack_record(a.record, g)
    state = load_checkpoint(a.checkpoint)
    meta = _read_meta(Path(a.checkpoint))
    deletion = sample_deletion_subset(record, a.fraction, a.seed)
    overrides = _load_method_config(a)
    classes = record.affected_classes
    objective = val_objective(g, classes)
    limit = a.budget_seconds
    if limit is None and "train_time" in meta:
        limit = a.time_budget_ratio * meta["train_time"]
    clock = meta.get("clock", "wall")
    budget = cost.Budget(None if a.method == "retrain" else limit, clock)
    report = None
    with budget:
        if a.method == "retrain":
            spec = TrainSpec(state.config.hidden_dim, state.config.dropout)
            state, eval_g = run_retrain(g, deletion, spec.model_config(g, a.seed), spec.optimizer(), a.epochs,
                                        a.seed, lambda h: val_objective(h, classes))
        elif a.method == "utu":
            state, eval_g = run_utu(state, g, deletion)
        elif a.method in ("cognac", "acdc"):
            state, eval_g, report = run_cognac(state, g, deletion, method_config(a.method, overrides, a.seed),
                                               objective, budget)
        elif a.method == "scrub":
            state, eval_g, report = run_scrub(state, g, deletion, method_config("scrub", overrides, a.seed),
                                              objective, budget)
        else:
            raise CommandError(f"method {a.method!r} cannot be run by unlearn")
    out = _artifact(a.out_dir, "unlearned", {"graph": _file_digest(Path(a.graph)),
                                             "model": _file_digest(Path(a.checkpoint)), "method": a.method,
                                             "config": overrides, "fraction": a.fraction, "seed": a.seed,
                                             "budget": limit})
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, out / "model.ckpt")
    save_graph(eval_g, out / "graph")
    if report is not None:
        report.write_trace(out / "trace.csv")
    pred = forward(state, eval_g).logits.argmax(axis=1)
    aff, rem = acc_aff(state, eval_g, classes, pred=pred), acc_rem(state, eval_g, classes, pred=pred)
    flag = " budget_exhausted" if report is not None and report.budget_exhausted else ""
    return (f"unlearn {a.method} deleted={len(deletion)} acc_aff={aff:.2f} acc_rem={rem:.2f} "
            f"time={budget.elapsed():.3f}s{flag} -> {out}")


def cmd_eval(a) -> str:
    g = load_graph(a.graph)
    state = load_checkpoint(a.checkpoint)
    pred = forward(state, g).logits.argmax(axis=1)
    aff, rem = acc_aff(state, g, a.classes, pred=pred), acc_rem(state, g, a.classes, pred=pred)
    out = _artifact(a.out_dir, "eval", {"graph": _file_digest(Path(a.graph)),
                                        "model": _file_digest(Path(a.checkpoint)), "classes": a.classes},
                    ".json")
    out.write_text(json.dumps({"acc_aff": aff, "acc_rem": rem, "classes": list(a.classes)}, indent=1) + "\n")
    return f"eval acc_aff={aff:.2f} acc_rem={rem:.2f} -> {out}"


def _sweep_dict(a) -> dict:
    d = dict(a.file_config or {})
    if a.seed_given:
        d["master_seed"] = a.seed
    for key in ("methods", "fractions", "seeds", "clock", "time_budget_ratio"):
        val = getattr(a, key, None)
        if val is not None:
            d[key] = list(val) if isinstance(val, tuple) else val
    return d


def cmd_sweep(a) -> str:
    d = _sweep_dict(a)
    cfg = sweep_config_from_dict(d)
    out = _artifact(a.out_dir, "sweep", cfg)
    result = run_sweep(cfg, a.jobs, a.out_dir / "cache")
    path = result.write(out)
    errors = sum(1 for r in result.rows if any(f.startswith("error") for f in r.flags))
    line = f"sweep cells={len(result.rows)} errors={errors} -> {path}"
    if errors:
        raise CommandError(line)
    return line


def cmd_search(a) -> str:
    d = _sweep_dict(a)
    search = dict(d.pop("search", {}) or {})
    method = d.pop("method", a.method)
    fraction = float(d.pop("fraction", a.fraction))
    base = d.pop("base", None)
    if a.trials is not None:
        search["trials"] = a.trials
    search.setdefault("seed", a.seed)
    scfg = SearchConfig(**search)
    cfg = sweep_config_from_dict({k: v for k, v in d.items() if k not in ("methods", "fractions")})
    rows, best_rows = [], []
    for seed in cfg.seeds:
        prep = prepare(cfg.dataset, cfg.attack, cfg.train, seed, cfg.clock, a.out_dir / "cache")
        res = hyperparameter_search(prep, method, fraction, seed, scfg, base, cfg.train, cfg.time_budget_ratio,
                                    cfg.clock)
        for t in res.trials:
            rows.append({"seed": seed, "trial": t.index, "objective": t.objective, "config": t.config,
                         "acc_aff": None if t.report is None else t.report.acc_aff,
                         "acc_rem": None if t.report is None else t.report.acc_rem, "error": t.error})
        best_rows.append({"seed": seed, "config": res.best_config, "val_objective": res.best.objective,
                          "acc_aff": res.best.report.acc_aff, "acc_rem": res.best.report.acc_rem})
    out = _artifact(a.out_dir, "search", {"sweep": cfg, "search": scfg, "method": method, "fraction": fraction,
                                          "base": base})
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.json").write_text(json.dumps(rows, indent=1, default=float) + "\n")
    (out / "best.json").write_text(json.dumps(best_rows, indent=1, default=float) + "\n")
    mean_aff = np.mean([b["acc_aff"] for b in best_rows])
    return f"search {method} trials={scfg.trials} seeds={len(cfg.seeds)} best_acc_aff_mean={mean_aff:.2f} -> {out}"


def cmd_gradcheck(a) -> str:
    checks = run_gradcheck(a.seed, a.nodes, a.hidden_dim)
    worst = max(c.max_rel_error for c in checks)
    parts = " ".join(f"{c.name}={c.max_rel_error:.2e}" for c in checks)
    skipped = sum(c.skipped for c in checks)
    line = f"gradcheck max_rel_error={worst:.2e} ({parts}) kinks_skipped={skipped} tolerance={TOLERANCE:g}"
    if not all(c.passed for c in checks):
        raise CommandError(line)
    return line


def cmd_export_emb(a) -> str:
    g = load_graph(a.graph)
    state = load_checkpoint(a.checkpoint)
    out = _artifact(a.out_dir, "embeddings", {"graph": _file_digest(Path(a.graph)),
                                              "model": _file_digest(Path(a.checkpoint)), "classes": a.classes,
                                              "layer": a.layer}, ".csv")
    n = export_embeddings(state, g, a.classes, out, a.layer)
    return f"exported rows={n} layer={a.layer} -> {out}"


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", type=Path, default=None)
    common.add_argument("--config", type=Path, default=None, help="YAML file of option values")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="graphunlearn", description="Corrective unlearning for GCNs.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    split = dict(type=_fractions, default=(0.6, 0.2, 0.2), help="train,val,test fractions")

    sp = add("ingest", cmd_ingest, "load a dataset directory and write it in canonical form")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", default="edgelist-v1")
    sp.add_argument("--lcc", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--split", **split)
    sp.add_argument("--resplit", action="store_true", help="replace masks shipped with the dataset")

    sp = add("gen-sbm", cmd_gen_sbm, "generate a stochastic block model graph")
    sp.add_argument("--blocks", type=int, default=4)
    sp.add_argument("--nodes-per-block", type=int, default=100)
    sp.add_argument("--p-in", type=float, default=0.1)
    sp.add_argument("--p-out", type=float, default=0.01)
    sp.add_argument("--feature-dim", type=int, default=None)
    sp.add_argument("--feature-noise", type=float, default=0.05)
    sp.add_argument("--lcc", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--split", **split)

    sp = add("train", cmd_train, "train a GCN on a graph directory")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--hidden-dim", type=int, default=64)
    sp.add_argument("--dropout", type=float, default=0.5)
    sp.add_argument("--epochs", type=int, default=300)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--clock", choices=cost.CLOCKS, default="wall")

    sp = add("attack", cmd_attack, "manipulate a graph's training data")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--kind", choices=("label_flip", "spurious_edges"), default="label_flip")
    sp.add_argument("--class-a", type=int, default=0)
    sp.add_argument("--class-b", type=int, default=1)
    sp.add_argument("--budget", type=float, default=0.5)

    sp = add("unlearn", cmd_unlearn, "unlearn an identified part of an attack from a checkpoint")
    sp.add_argument("--graph", required=True, help="attacked graph directory")
    sp.add_argument("--record", required=True, help="attack record JSON")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--method", choices=[m for m in METHODS if m not in ("original", "oracle")], default="cognac")
    sp.add_argument("--fraction", type=float, default=0.25)
    sp.add_argument("--time-budget-ratio", type=float, default=0.25)
    sp.add_argument("--budget-seconds", type=float, default=None)
    sp.add_argument("--epochs", type=int, default=300, help="retrain epochs")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="method hyperparameter")
    sp.add_argument("--method-config", type=yaml.safe_load, default=None, help=argparse.SUPPRESS)

    sp = add("eval", cmd_eval, "score a checkpoint on a graph")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--classes", type=_classes, default=(0, 1))

    for name, fn, help_ in (("sweep", cmd_sweep, "run every method x fraction x seed cell"),
                            ("search", cmd_search, "random hyperparameter search per seed")):
        sp = add(name, fn, help_)
        sp.add_argument("--methods", type=lambda s: tuple(s.split(",")), default=None)
        sp.add_argument("--fractions", type=_fractions, default=None)
        sp.add_argument("--seeds", type=int, default=None, help="number of seeds from --seed")
        sp.add_argument("--clock", choices=cost.CLOCKS, default=None)
        sp.add_argument("--time-budget-ratio", type=float, default=None)
        if name == "sweep":
            sp.add_argument("--jobs", type=int, default=1)
        else:
            sp.add_argument("--method", default="cognac")
            sp.add_argument("--fraction", type=float, default=0.25)
            sp.add_argument("--trials", type=int, default=None)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the analytic gradients")
    sp.add_argument("--nodes", type=int, default=30)
    sp.add_argument("--hidden-dim", type=int, default=8)

    sp = add("export-emb", cmd_export_emb, "write per-node embeddings of the test split")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--classes", type=_classes, default=(0, 1))
    sp.add_argument("--layer", choices=("hidden", "logits"), default="hidden")
    return p


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[name]


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> dict | None:
    """Load ``--config`` (if any) into the chosen subcommand's defaults so
    that explicit flags still win. Sweep and search files are returned
    as-is because their keys mirror the config dataclasses instead."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    ns, _ = pre.parse_known_args(argv)
    if ns.config is None or ns.command is None:
        return None
    try:
        sub = _subparser(parser, ns.command)
    except KeyError:
        return None
    data = yaml.safe_load(ns.config.read_text()) or {}
    if not isinstance(data, dict):
        raise CommandError(f"{ns.config}: top level must be a mapping")
    if ns.command in ("sweep", "search"):
        return data
    data = {k.replace("-", "_"): v for k, v in data.items()}
    actions = {act.dest: act for act in sub._actions}
    unknown = sorted(set(data) - set(actions) - {"help", "config"})
    if unknown:
        sub.error(f"unknown keys in {ns.config}: {', '.join(unknown)}")
    for dest, val in data.items():
        act = actions[dest]
        if act.type is not None and isinstance(val, str):
            data[dest] = act.type(val)
        act.required = False
    sub.set_defaults(**data)
    return data


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        file_config = _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CommandError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args.file_config = file_config
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.out_dir is None:
        args.out_dir = Path("runs")
    try:
        print(args.func(args))
        return 0
    except (CommandError, OSError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
