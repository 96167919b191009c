import logging
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphunlearn.graph import (Graph, GraphFormatError, GraphValidationError, SbmConfig, SplitConfig, from_edges,
                                generate_sbm, largest_connected_component, load_graph, make_splits,
                                read_features_bin, save_graph, validate, write_features_bin)


def write_dataset(root, edges_text, labels, features, masks=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "edges.txt").write_text(edges_text)
    (root / "labels.txt").write_text("".join(f"{y}\n" for y in labels))
    write_features_bin(root / "features.bin", np.asarray(features, dtype=np.float64))
    if masks is not None:
        (root / "masks.txt").write_text("".join(f"{m}\n" for m in masks))
    return root


edge_lists = st.integers(1, 25).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=60)))


def bfs_components(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen, comps = [False] * n, []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        comp, q = [], deque([s])
        while q:
            u = q.popleft()
            comp.append(u)
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    q.append(w)
        comps.append(sorted(comp))
    return comps


def test_isolated_nodes():
    g = from_edges(3, [], np.zeros((3, 2)), [0, 1, 0])
    assert g.num_nodes == 3 and g.num_edges == 0
    assert g.degrees().tolist() == [0, 0, 0]


def test_hand_degree_sequence(tmp_path):
    # star 0-1, 0-2, 0-3 plus 2-3; listed once in each direction for 0-3
    root = write_dataset(tmp_path / "d", "0 1\n0 2\n0 3\n3 0\n2 3\n", [0, 1, 0, 1], np.eye(4))
    g = load_graph(root)
    assert g.degrees().tolist() == [3, 1, 2, 2]
    assert g.num_edges == 4


def test_self_loops_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        g = from_edges(3, [(0, 0), (0, 1), (1, 2)], np.zeros((3, 1)), [0, 0, 1])
    assert g.num_edges == 2
    assert "self-loop" in caplog.text


def test_malformed_line_named(tmp_path):
    root = write_dataset(tmp_path / "d", "0 1\n1 x\n", [0, 1], np.eye(2))
    with pytest.raises(GraphFormatError, match=r"edges.txt:2\b"):
        load_graph(root)


def test_label_out_of_range(tmp_path):
    root = write_dataset(tmp_path / "d", "0 1\n", [0, 5], np.eye(2))
    with pytest.raises(GraphValidationError):
        load_graph(root, num_classes=2)


def test_unknown_format(tmp_path):
    with pytest.raises(GraphFormatError):
        load_graph(tmp_path, fmt="parquet")


def test_features_outside_unit_interval_are_scaled(tmp_path):
    feats = np.array([[0.0, -2.0], [4.0, 2.0], [2.0, 0.0]])
    root = write_dataset(tmp_path / "d", "0 1\n", [0, 1, 0], feats)
    g = load_graph(root)
    assert g.features.min() == 0.0 and g.features.max() == 1.0
    np.testing.assert_allclose(g.features[:, 0], [0, 1, 0.5])


def test_features_bin_roundtrip(tmp_path):
    x = np.random.default_rng(0).random((7, 3))
    write_features_bin(tmp_path / "f.bin", x)
    np.testing.assert_allclose(read_features_bin(tmp_path / "f.bin"), x.astype(np.float32))


def test_save_load_roundtrip(tmp_path, sbm_small):
    save_graph(sbm_small, tmp_path / "g")
    h = load_graph(tmp_path / "g")
    np.testing.assert_array_equal(h.indptr, sbm_small.indptr)
    np.testing.assert_array_equal(h.indices, sbm_small.indices)
    np.testing.assert_array_equal(h.labels, sbm_small.labels)
    np.testing.assert_array_equal(h.train_mask, sbm_small.train_mask)
    np.testing.assert_array_equal(h.features, sbm_small.features)


def test_validate_catches_asymmetry():
    g = Graph(np.array([0, 1, 1]), np.array([1]), np.zeros((2, 1)), np.array([0, 0]), 1)
    with pytest.raises(GraphValidationError, match="symmetric"):
        validate(g)


def test_lcc_connected_is_identity(sbm_small):
    g = generate_sbm(SbmConfig(num_blocks=2, nodes_per_block=10, p_in=1.0, p_out=0.5, seed=0))
    h, kept = largest_connected_component(g)
    assert h is g
    assert kept.tolist() == list(range(20))


def test_lcc_picks_larger_component_bfs_oracle():
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (5, 6), (6, 7)]
    g = from_edges(8, edges, np.zeros((8, 1)), np.zeros(8, int))
    h, kept = largest_connected_component(g)
    oracle = max(bfs_components(8, edges), key=len)
    assert kept.tolist() == oracle
    assert h.num_nodes == 5 and h.num_edges == 4


def test_lcc_tie_keeps_component_of_node_zero():
    edges = [(5, 6), (6, 7), (7, 8), (8, 9), (0, 1), (1, 2), (2, 3), (3, 4)]
    g = from_edges(10, edges, np.zeros((10, 1)), np.zeros(10, int))
    _, kept = largest_connected_component(g)
    assert kept.tolist() == [0, 1, 2, 3, 4]


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_lcc_matches_bfs_and_is_idempotent(data):
    n, edges = data
    g = from_edges(n, edges, np.zeros((n, 1)), np.zeros(n, int))
    h, kept = largest_connected_component(g)
    comps = bfs_components(n, [(u, v) for u, v in edges if u != v])
    best = max(len(c) for c in comps)
    assert len(kept) == best
    assert kept.tolist() in comps
    h2, kept2 = largest_connected_component(h)
    assert kept2.tolist() == list(range(h.num_nodes))
    np.testing.assert_array_equal(h2.indices, h.indices)


@settings(max_examples=80, deadline=None)
@given(edge_lists, st.integers(0, 1000))
def test_every_built_graph_validates(data, seed):
    n, edges = data
    g = from_edges(n, edges, np.zeros((n, 2)), np.arange(n) % 2, 2)
    g = make_splits(g, SplitConfig(seed=seed))
    validate(g)
    a = g.to_scipy().toarray()
    assert np.array_equal(a, a.T) and not np.any(np.diag(a))
    for u, v in edges:
        assert (u == v) or g.has_edge(u, v)


def test_split_sizes_small():
    g = from_edges(10, [], np.zeros((10, 1)), np.zeros(10, int))
    s = make_splits(g, SplitConfig(seed=0))
    assert (s.train_mask.sum(), s.val_mask.sum(), s.test_mask.sum()) == (6, 2, 2)
    assert not np.any(s.train_mask & s.val_mask) and not np.any(s.val_mask & s.test_mask)


def test_split_train_size_floor_oracle():
    n = 18800
    g = from_edges(n, [], np.zeros((n, 1)), np.zeros(n, int))
    s = make_splits(g, SplitConfig(seed=1))
    assert s.train_mask.sum() == n * 6 // 10 == 11280


def test_split_determinism_and_seed_diversity():
    g = from_edges(50, [], np.zeros((50, 1)), np.zeros(50, int))
    a = make_splits(g, SplitConfig(seed=4))
    b = make_splits(g, SplitConfig(seed=4))
    assert np.array_equal(a.train_mask, b.train_mask) and np.array_equal(a.test_mask, b.test_mask)
    masks = {make_splits(g, SplitConfig(seed=s)).train_mask.tobytes() for s in range(10)}
    assert len(masks) == 10


def test_split_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        SplitConfig(0.5, 0.2, 0.2)


def test_sbm_cliques_when_p_in_one():
    g = generate_sbm(SbmConfig(num_blocks=3, nodes_per_block=6, p_in=1.0, p_out=0.0, seed=0))
    assert len(bfs_components(g.num_nodes, g.edge_array().tolist())) == 3
    assert g.num_edges == 3 * 15


@pytest.mark.parametrize("seed", range(5))
def test_sbm_within_block_edges_binomial(seed):
    cfg = SbmConfig(num_blocks=4, nodes_per_block=100, p_in=0.1, p_out=0.01, seed=seed)
    g = generate_sbm(cfg)
    e = g.edge_array()
    within = int(np.sum(g.labels[e[:, 0]] == g.labels[e[:, 1]]))
    pairs = 4 * 100 * 99 // 2
    mean, sd = pairs * 0.1, np.sqrt(pairs * 0.1 * 0.9)
    assert abs(within - mean) <= 3 * sd


def test_sbm_noise_free_features_are_indicators():
    g = generate_sbm(SbmConfig(num_blocks=3, nodes_per_block=5, feature_noise=0.0, seed=2))
    np.testing.assert_array_equal(g.features, np.eye(3)[g.labels])


def test_graph_edits_roundtrip(sbm_small):
    e = np.array([[0, 79], [1, 78]])
    added = sbm_small.add_edges(e)
    assert added.num_edges == sbm_small.num_edges + sum(not sbm_small.has_edge(*p) for p in e)
    back = added.remove_edges(e)
    if not any(sbm_small.has_edge(*p) for p in e):
        np.testing.assert_array_equal(back.indices, sbm_small.indices)
    iso = sbm_small.isolate_nodes([3])
    assert iso.degrees()[3] == 0 and iso.num_nodes == sbm_small.num_nodes
