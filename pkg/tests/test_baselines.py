import numpy as np
import pytest

from graphunlearn.attacks import AttackSpec, label_flip_attack, make_deletion_set, run_attack, sample_deletion_subset
from graphunlearn.baselines import (ScrubConfig, UnsupportedMethodError, distill_kl, kl_divergence, run_oracle,
                                    run_original, run_retrain, run_scrub, run_utu)
from graphunlearn.gnn import ModelConfig, OptimizerConfig, forward, train
from graphunlearn.graph import SbmConfig, SplitConfig, generate_sbm, make_splits


@pytest.fixture(scope="module")
def poisoned():
    g = make_splits(generate_sbm(SbmConfig(4, 20, 0.3, 0.02, seed=2)), SplitConfig(seed=2))
    rec = label_flip_attack(g, AttackSpec(budget=0.5, seed=2))
    cfg = ModelConfig(g.feature_dim, g.num_classes, hidden_dim=16, seed=2)
    state, _ = train(rec.graph, cfg, epochs=60)
    return g, rec, state, cfg


def test_kl_closed_form():
    p, q = np.array([0.7, 0.3]), np.array([0.5, 0.5])
    expected = 0.7 * np.log(1.4) + 0.3 * np.log(0.6)
    assert kl_divergence(p, q) == pytest.approx(expected, abs=1e-15)
    assert kl_divergence(p, q) == pytest.approx(0.0823, abs=1e-4)
    assert kl_divergence(p, p) == 0.0


def test_distill_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    s, t = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    mask = np.array([1, 0, 1, 1, 0], bool)
    _, grad = distill_kl(s, t, mask, 2.5)
    num = np.zeros_like(s)
    eps = 1e-6
    for i in np.ndindex(s.shape):
        up, down = s.copy(), s.copy()
        up[i] += eps
        down[i] -= eps
        num[i] = (distill_kl(up, t, mask, 2.5)[0] - distill_kl(down, t, mask, 2.5)[0]) / (2 * eps)
    np.testing.assert_allclose(grad, num, atol=1e-9)
    assert not grad[~mask].any()


def test_distill_kl_zero_for_identical_logits():
    x = np.random.default_rng(1).standard_normal((4, 3))
    loss, grad = distill_kl(x, x, np.ones(4, bool), 4.0)
    assert loss == pytest.approx(0.0, abs=1e-15) and np.abs(grad).max() < 1e-15


def test_original_is_identity(poisoned):
    _, _, state, _ = poisoned
    assert run_original(state) is state


def test_retrain_requires_deletion(poisoned):
    g, rec, _, cfg = poisoned
    with pytest.raises(ValueError):
        run_retrain(rec.graph, make_deletion_set("node", []), cfg, OptimizerConfig(), 10, 0)


def test_retrain_drops_nodes(poisoned):
    g, rec, _, cfg = poisoned
    d = sample_deletion_subset(rec, 0.5, 0)
    _, reduced = run_retrain(rec.graph, d, cfg, OptimizerConfig(), 5, 0)
    assert reduced.num_nodes == g.num_nodes - len(d)


def test_oracle_trains_on_reconstruction(poisoned):
    g, rec, _, cfg = poisoned
    state, clean = run_oracle(rec, cfg, OptimizerConfig(), 5)
    np.testing.assert_array_equal(clean.labels, g.labels)
    assert state.meta["upper_bound"]


def test_utu_rejects_nodes(poisoned):
    _, rec, state, _ = poisoned
    with pytest.raises(UnsupportedMethodError):
        run_utu(state, rec.graph, sample_deletion_subset(rec, 0.5, 0))


def test_utu_removes_exactly_the_deletion_edges(poisoned):
    g, _, state, _ = poisoned
    rec = run_attack(g, AttackSpec("spurious_edges", budget=30, seed=0))
    d = sample_deletion_subset(rec, 0.5, 1)
    out, eval_g = run_utu(state, rec.graph, d)
    assert out is state
    before = {tuple(e) for e in rec.graph.edge_array().tolist()}
    after = {tuple(e) for e in eval_g.edge_array().tolist()}
    assert before - after == {tuple(e) for e in d.ids.tolist()}
    assert len(before) - len(after) == len(d) == 15


def test_scrub_zero_epochs_returns_teacher(poisoned):
    _, rec, state, _ = poisoned
    out, g, rep = run_scrub(state, rec.graph, sample_deletion_subset(rec, 0.5, 0), ScrubConfig(epochs=0))
    assert out is state and g is rec.graph and rep.epochs_run == 0


def test_scrub_starts_at_zero_divergence(poisoned):
    _, rec, state, _ = poisoned
    logits = forward(state, rec.graph).logits
    loss, _ = distill_kl(logits, logits, np.ones(rec.graph.num_nodes, bool), 4.0)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_scrub_runs_deterministically(poisoned):
    _, rec, state, _ = poisoned
    d = sample_deletion_subset(rec, 0.5, 0)
    cfg = ScrubConfig(epochs=5, lr=1e-2, seed=4)
    a, ga, ra = run_scrub(state, rec.graph, d, cfg)
    b, _, _ = run_scrub(state, rec.graph, d, cfg)
    assert ga is rec.graph and ra.epochs_run == 5
    assert a.fingerprint() == b.fingerprint() != state.fingerprint()


def test_scrub_config_validation():
    with pytest.raises(ValueError):
        ScrubConfig(distill_temperature=0)
