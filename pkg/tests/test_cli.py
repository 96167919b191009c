import json

import pytest

from graphunlearn.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def only(path, pattern):
    found = sorted(path.glob(pattern))
    assert len(found) == 1, found
    return found[0]


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", "1")
    assert code == 0
    assert out.startswith("gradcheck max_rel_error=") and out.count("\n") == 1


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "gradcheck", "--bogus")
    assert code == 2 and "usage:" in err


def test_unknown_command_is_usage_error(capsys):
    code, _, err = run(capsys, "teleport")
    assert code == 2 and "usage:" in err


def test_missing_input_is_runtime_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--graph", tmp_path / "nope", "--out-dir", tmp_path)
    assert code == 1 and err.startswith("error:")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert main(["gen-sbm", "--seed", "3", "--nodes-per-block", "30", "--out-dir", str(out)]) == 0
    graph = only(out, "graph-*")
    assert main(["attack", "--graph", str(graph), "--seed", "3", "--out-dir", str(out)]) == 0
    attacked = only(out, "attack-*")
    assert main(["train", "--graph", str(attacked), "--epochs", "60", "--hidden-dim", "16",
                 "--out-dir", str(out)]) == 0
    return out, graph, attacked, only(out, "model-*.ckpt")


def test_pipeline_artifacts(pipeline):
    out, _, attacked, ckpt = pipeline
    assert (attacked / "record.json").exists()
    meta = json.loads(ckpt.with_name(ckpt.name + ".json").read_text())
    assert meta["train_time"] > 0


@pytest.mark.parametrize("method,extra", [("cognac", ["--set", "total_epochs=5"]),
                                          ("acdc", ["--set", "total_epochs=5"]),
                                          ("scrub", ["--set", "epochs=3"]),
                                          ("retrain", ["--epochs", "10"])])
def test_unlearn_methods(capsys, pipeline, method, extra):
    out, _, attacked, ckpt = pipeline
    code, stdout, err = run(capsys, "unlearn", "--graph", attacked, "--record", attacked / "record.json",
                            "--checkpoint", ckpt, "--method", method, "--fraction", "0.5", "--out-dir", out, *extra)
    assert code == 0, err
    assert f"unlearn {method}" in stdout and "acc_aff=" in stdout
    target = stdout.rsplit("-> ", 1)[1].strip()
    assert (out / target.split("/")[-1] / "model.ckpt").exists()


def test_unlearn_bad_parameter_is_runtime_error(capsys, pipeline):
    out, _, attacked, ckpt = pipeline
    code, _, err = run(capsys, "unlearn", "--graph", attacked, "--record", attacked / "record.json",
                       "--checkpoint", ckpt, "--method", "scrub", "--set", "total_epochs=3", "--out-dir", out)
    assert code == 1 and "total_epochs" in err


def test_utu_rejects_node_attack(capsys, pipeline):
    out, _, attacked, ckpt = pipeline
    code, _, err = run(capsys, "unlearn", "--graph", attacked, "--record", attacked / "record.json",
                       "--checkpoint", ckpt, "--method", "utu", "--out-dir", out)
    assert code == 1 and "edges" in err


def test_eval_and_config_file_with_override(capsys, pipeline, tmp_path):
    out, _, attacked, ckpt = pipeline
    cfg = tmp_path / "eval.yaml"
    cfg.write_text(f"graph: {attacked}\ncheckpoint: {ckpt}\nclasses: '0,2'\nout-dir: {tmp_path}\n")
    code, a, _ = run(capsys, "eval", "--config", cfg)
    assert code == 0
    code, b, _ = run(capsys, "eval", "--config", cfg, "--classes", "0,1")
    assert code == 0 and a.split("->")[0] != b.split("->")[0]
    assert len(list(tmp_path.glob("eval-*.json"))) == 2


def test_config_unknown_key_is_usage_error(capsys, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("graph: x\nwarp_factor: 9\n")
    code, _, err = run(capsys, "eval", "--config", cfg)
    assert code == 2 and "warp_factor" in err


def test_export_embeddings(capsys, pipeline):
    out, _, attacked, ckpt = pipeline
    code, stdout, _ = run(capsys, "export-emb", "--graph", attacked, "--checkpoint", ckpt, "--out-dir", out)
    assert code == 0 and "rows=" in stdout
    header = only(out, "embeddings-*.csv").read_text().splitlines()[0]
    assert header.startswith("node_id,label,affected,e0,") and header.endswith(",e15")


def test_ingest_roundtrip(capsys, pipeline, tmp_path):
    _, graph, _, _ = pipeline
    code, stdout, _ = run(capsys, "ingest", "--input", graph, "--out-dir", tmp_path)
    assert code == 0 and stdout.startswith("ingested nodes=")


SWEEP = """\
dataset:
  sbm: {num_blocks: 4, nodes_per_block: 25, p_in: 0.25, p_out: 0.02}
train: {hidden_dim: 16, epochs: 40}
methods: [original, cognac, acdc]
fractions: [0.5, 1.0]
seeds: 2
clock: virtual
method_configs:
  cognac: {total_epochs: 5}
"""


def test_sweep_twice_byte_identical(capsys, tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(SWEEP)
    outs = []
    for sub in ("a", "b"):
        code, stdout, _ = run(capsys, "sweep", "--config", cfg, "--seed", "4", "--out-dir", tmp_path / sub)
        assert code == 0 and "cells=12 errors=0" in stdout
        outs.append(only(tmp_path / sub, "sweep-*/results.csv").read_bytes())
    assert outs[0] == outs[1]


def test_sweep_distinct_configs_do_not_clobber(capsys, tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(SWEEP)
    assert run(capsys, "sweep", "--config", cfg, "--fractions", "0.5", "--out-dir", tmp_path)[0] == 0
    assert run(capsys, "sweep", "--config", cfg, "--fractions", "1.0", "--out-dir", tmp_path)[0] == 0
    assert len(list(tmp_path.glob("sweep-*/results.csv"))) == 2


def test_sweep_with_error_cells_exits_one(capsys, tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(SWEEP)
    code, _, err = run(capsys, "sweep", "--config", cfg, "--methods", "utu", "--out-dir", tmp_path)
    assert code == 1 and "errors=4" in err


def test_search_command(capsys, tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(SWEEP)
    code, stdout, _ = run(capsys, "search", "--config", cfg, "--method", "acdc", "--trials", "3",
                          "--seeds", "1", "--out-dir", tmp_path)
    assert code == 0 and "trials=3 seeds=1" in stdout
    best = json.loads(only(tmp_path, "search-*/best.json").read_text())
    assert len(best) == 1 and "lr_ascent" in best[0]["config"]
