"""Central finite-difference checks for the hand-written gradients.

Relative error per weight entry is ``|a - n| / max(|a| + |n|, floor)``; the
floor keeps entries whose true gradient is ~0 from dominating through
truncation noise of order eps². Entries whose ±eps perturbation switches a
ReLU unit on or off straddle a kink, where the central difference is not an
estimate of the derivative; they are skipped and counted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cognac import ContrastPairs, contrastive_loss
from .gnn import ModelConfig, ModelState, backward, forward, init_model, masked_cross_entropy
from .graph import Graph, SbmConfig, SplitConfig, generate_sbm, make_splits

EPS = 1e-4
FLOOR = 1e-6
TOLERANCE = 1e-4


@dataclass
class GradCheck:
    name: str
    max_rel_error: float
    entries: int
    skipped: int = 0  # entries whose perturbation crossed a ReLU kink

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE and self.skipped < self.entries


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    """Largest relative error, ignoring entries where ``numeric`` is nan."""
    ok = ~np.isnan(numeric)
    if not ok.any():
        return 0.0
    a, n = analytic[ok], numeric[ok]
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def numeric_gradient(loss_fn, state: ModelState, eps: float = EPS, pattern_fn=None) -> dict:
    """Central differences of ``loss_fn(state)`` for every weight entry.

    With ``pattern_fn`` (state -> boolean activation pattern), entries whose
    perturbation changes the pattern are set to nan.
    """
    base = None if pattern_fn is None else pattern_fn(state)
    grads = {}
    for name, w in state.weights.items():
        g = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = w[i]
            w[i] = old + eps
            up = loss_fn(state)
            kink = base is not None and not np.array_equal(pattern_fn(state), base)
            w[i] = old - eps
            down = loss_fn(state)
            kink = kink or (base is not None and not np.array_equal(pattern_fn(state), base))
            w[i] = old
            g[i] = np.nan if kink else (up - down) / (2 * eps)
        grads[name] = g
    return grads


def _pattern(g):
    return lambda s: forward(s, g).pre_hidden > 0


def _compare(name, analytic, numeric) -> GradCheck:
    err = max(relative_error(analytic[k], numeric[k]) for k in analytic)
    skipped = int(sum(np.isnan(v).sum() for v in numeric.values()))
    return GradCheck(name, err, sum(v.size for v in analytic.values()), skipped)


def check_cross_entropy(state: ModelState, g: Graph) -> GradCheck:
    def loss(s):
        return masked_cross_entropy(forward(s, g).logits, g.labels, g.train_mask)[0]

    trace = forward(state, g)
    _, dl = masked_cross_entropy(trace.logits, g.labels, g.train_mask)
    return _compare("cross_entropy", backward(state, trace, dlogits=dl),
                    numeric_gradient(loss, state, pattern_fn=_pattern(g)))


def check_contrastive(state: ModelState, g: Graph, pairs: ContrastPairs) -> GradCheck:
    def loss(s):
        return contrastive_loss(forward(s, g).embedding, pairs)[0]

    trace = forward(state, g)
    _, dz = contrastive_loss(trace.embedding, pairs)
    return _compare("contrastive", backward(state, trace, dembedding=dz),
                    numeric_gradient(loss, state, pattern_fn=_pattern(g)))


def small_problem(seed: int, num_nodes: int = 30, hidden_dim: int = 8) -> tuple[Graph, ModelState, ContrastPairs]:
    """A seeded SBM graph with splits, a fresh model and random contrast triples."""
    blocks = 3
    per = int(np.ceil(num_nodes / blocks))
    g = generate_sbm(SbmConfig(num_blocks=blocks, nodes_per_block=per, p_in=0.3, p_out=0.05,
                               feature_dim=6, feature_noise=0.2, seed=seed))
    if g.num_nodes > num_nodes:
        g, _ = g.subgraph(np.arange(num_nodes))
    g = make_splits(g, SplitConfig(seed=seed))
    state = init_model(ModelConfig(g.feature_dim, g.num_classes, hidden_dim=hidden_dim, seed=seed))
    rng = np.random.default_rng(seed)
    m = max(2, num_nodes // 3)
    pairs = ContrastPairs(rng.integers(0, g.num_nodes, m), rng.integers(0, g.num_nodes, m),
                          rng.integers(0, g.num_nodes, m))
    return g, state, pairs


def run_gradcheck(seed: int = 0, num_nodes: int = 30, hidden_dim: int = 8) -> list[GradCheck]:
    g, state, pairs = small_problem(seed, num_nodes, hidden_dim)
    return [check_cross_entropy(state, g), check_contrastive(state, g, pairs)]
