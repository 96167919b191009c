"""Two-layer graph convolutional network in NumPy with hand-written backprop.

    hidden = relu(Â X W1)            (dropout on hidden in train mode)
    logits = Â hidden W2

Â is the symmetric renormalized adjacency D̃^-1/2 (A + I) D̃^-1/2. There are
no bias terms. Every loss used by the package is expressed as a gradient on
the logits and/or the hidden embeddings and pushed through ``backward``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import struct
import weakref
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.sparse import eye as sp_eye

from . import cost, kernels
from .graph import Graph


class EmptyMaskError(ValueError):
    """A loss was requested over zero nodes."""


class UnknownOptimizerError(KeyError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    num_classes: int
    hidden_dim: int = 64
    dropout: float = 0.5
    weight_init_scale: float = 1.0
    seed: int = 0
    num_layers: int = 2

    def __post_init__(self):
        if min(self.feature_dim, self.num_classes, self.hidden_dim) <= 0:
            raise ValueError("model dimensions must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.num_layers != 2:
            raise ValueError("only 2-layer networks are supported")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_steps: Optional[int] = None  # linear decay to 0 over this many steps; None = constant

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    def rate_at(self, step: int) -> float:
        if not self.decay_steps:
            return self.learning_rate
        return self.learning_rate * max(0.0, 1.0 - step / self.decay_steps)


@dataclass
class AdamMoments:
    m: dict
    v: dict
    step: int = 0

    def fingerprint(self) -> str:
        h = hashlib.sha256(str(self.step).encode())
        for k in sorted(self.m):
            h.update(self.m[k].tobytes())
            h.update(self.v[k].tobytes())
        return h.hexdigest()


@dataclass
class ModelState:
    config: ModelConfig
    weights: dict
    rng: np.random.Generator
    optimizers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)

    def add_optimizer(self, name: str) -> AdamMoments:
        mom = AdamMoments({k: np.zeros_like(w) for k, w in self.weights.items()},
                          {k: np.zeros_like(w) for k, w in self.weights.items()})
        self.optimizers[name] = mom
        return mom

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.weights):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.weights[k]).tobytes())
        return h.hexdigest()


def init_model(cfg: ModelConfig) -> ModelState:
    """Uniform(-s, s) weights with s = weight_init_scale / sqrt(fan_in)."""
    rng = np.random.default_rng(cfg.seed)
    s1 = cfg.weight_init_scale / np.sqrt(cfg.feature_dim)
    s2 = cfg.weight_init_scale / np.sqrt(cfg.hidden_dim)
    w1 = rng.uniform(-s1, s1, (cfg.feature_dim, cfg.hidden_dim))
    w2 = rng.uniform(-s2, s2, (cfg.hidden_dim, cfg.num_classes))
    return ModelState(cfg, {"W1": w1, "W2": w2}, rng)


# --- adjacency ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.data)

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        cost.charge(2.0 * self.nnz * dense.shape[1])
        return kernels.csr_matmul(self.indptr, self.indices, self.data, dense)

    def propagate_features(self, features: np.ndarray) -> np.ndarray:
        """``Â @ features`` memoized on the identity of ``features``."""
        key = id(features)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is features:
            cost.charge(2.0 * self.nnz * features.shape[1])
            return hit[1]
        out = self.matmul(np.ascontiguousarray(features, dtype=np.float64))
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = (features, out)
        return out

    def toarray(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out


_adj_cache: "weakref.WeakKeyDictionary[Graph, NormalizedAdjacency]" = weakref.WeakKeyDictionary()


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    """D̃^-1/2 (A + I) D̃^-1/2 with D̃ the degree matrix of A + I."""
    cached = _adj_cache.get(g)
    if cached is not None:
        return cached
    a = (g.to_scipy() + sp_eye(g.num_nodes, format="csr")).tocsr()
    a.sort_indices()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(g.num_nodes), np.diff(a.indptr))
    data = inv[rows] * inv[a.indices]
    adj = NormalizedAdjacency(a.indptr.astype(np.int64), a.indices.astype(np.int64), data)
    _adj_cache[g] = adj
    return adj


# --- forward / backward -------------------------------------------------------

@dataclass
class ForwardTrace:
    adj: NormalizedAdjacency
    features: np.ndarray
    ax: np.ndarray          # Â X
    pre_hidden: np.ndarray  # Â X W1
    hidden: np.ndarray      # relu(pre_hidden)
    drop_mask: Optional[np.ndarray]  # scaled keep-mask, None in eval mode
    embedding: np.ndarray   # hidden after dropout, the input of layer 2
    logits: np.ndarray
    train_mode: bool

    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _adjacency_of(g) -> NormalizedAdjacency:
    return g if isinstance(g, NormalizedAdjacency) else normalize_adjacency(g)


def forward(state: ModelState, g, features: Optional[np.ndarray] = None,
            train_mode: bool = False) -> ForwardTrace:
    """Run the network on ``g`` (a Graph or a prebuilt NormalizedAdjacency).

    ``features`` defaults to ``g.features``; pass a substitute matrix to
    probe the model on modified inputs.
    """
    adj = _adjacency_of(g)
    if features is None:
        features = g.features
    w1, w2 = state.weights["W1"], state.weights["W2"]
    if features.shape != (adj.n, w1.shape[0]):
        raise ValueError(f"features have shape {features.shape}, expected {(adj.n, w1.shape[0])}")
    ax = adj.propagate_features(features)
    pre = ax @ w1
    hidden = np.maximum(pre, 0.0)
    p = state.config.dropout
    if train_mode and p > 0:
        mask = (state.rng.random(hidden.shape) >= p) / (1.0 - p)
        emb = hidden * mask
    else:
        mask = None
        emb = hidden
    logits = adj.matmul(emb @ w2)
    n, h = hidden.shape
    cost.charge(2.0 * n * (w1.shape[0] * h + h * w2.shape[1]))
    return ForwardTrace(adj, features, ax, pre, hidden, mask, emb, logits, train_mode)


def backward(state: ModelState, trace: ForwardTrace, dlogits: Optional[np.ndarray] = None,
             dembedding: Optional[np.ndarray] = None) -> dict:
    """Gradients w.r.t. W1 and W2 given upstream gradients on logits/embeddings.

    Â is symmetric, so Âᵀ G is computed as Â G.
    """
    w2 = state.weights["W2"]
    n, h = trace.hidden.shape
    demb = np.zeros_like(trace.embedding) if dembedding is None else dembedding.copy()
    if dlogits is not None:
        ag = trace.adj.matmul(dlogits)
        gw2 = trace.embedding.T @ ag
        demb += ag @ w2.T
        cost.charge(4.0 * n * h * w2.shape[1])
    else:
        gw2 = np.zeros_like(w2)
    dhidden = demb * trace.drop_mask if trace.drop_mask is not None else demb
    dpre = dhidden * (trace.pre_hidden > 0)
    gw1 = trace.ax.T @ dpre
    cost.charge(2.0 * n * trace.ax.shape[1] * h)
    return {"W1": gw1, "W2": gw2}


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked nodes and its gradient w.r.t. ``logits``."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise EmptyMaskError("cross-entropy over an empty node mask")
    logp = log_softmax(logits[idx])
    y = labels[idx]
    loss = -logp[np.arange(len(idx)), y].mean()
    grad = np.zeros_like(logits)
    g = np.exp(logp)
    g[np.arange(len(idx)), y] -= 1.0
    grad[idx] = g / len(idx)
    return float(loss), grad


def loss_and_gradients(state: ModelState, g, labels: np.ndarray, mask: np.ndarray,
                       sign: int = 1, train_mode: bool = False,
                       features: Optional[np.ndarray] = None):
    """``sign * CE(mask)`` and its exact gradients; ``sign=-1`` turns descent into ascent.

    Returns ``(signed_loss, grads, trace)``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    trace = forward(state, g, features, train_mode)
    loss, dlogits = masked_cross_entropy(trace.logits, labels, mask)
    grads = backward(state, trace, dlogits=sign * dlogits)
    return sign * loss, grads, trace


def adam_step(state: ModelState, grads: dict, opt: str, cfg: OptimizerConfig,
              lr_scale: float = 1.0) -> ModelState:
    """One bias-corrected Adam update in place using optimizer instance ``opt``.

    Only that instance's moments change. ``lr_scale`` multiplies the
    scheduled rate for this step alone.
    """
    try:
        mom = state.optimizers[opt]
    except KeyError:
        raise UnknownOptimizerError(opt) from None
    lr = cfg.rate_at(mom.step) * lr_scale
    mom.step += 1
    t = mom.step
    for k, gk in grads.items():
        mom.m[k] = cfg.beta1 * mom.m[k] + (1 - cfg.beta1) * gk
        mom.v[k] = cfg.beta2 * mom.v[k] + (1 - cfg.beta2) * gk * gk
        m_hat = mom.m[k] / (1 - cfg.beta1 ** t)
        v_hat = mom.v[k] / (1 - cfg.beta2 ** t)
        if lr:
            state.weights[k] = state.weights[k] - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return state


def predict(state: ModelState, g, features: Optional[np.ndarray] = None) -> np.ndarray:
    return forward(state, g, features).logits.argmax(axis=1)


def accuracy(pred: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise EmptyMaskError("accuracy over an empty node mask")
    return float((pred[idx] == labels[idx]).mean())


# --- training ------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: int
    best_epoch: int
    best_objective: float
    wall_time: float
    train_losses: list


def train(g: Graph, model_cfg: ModelConfig, opt_cfg: OptimizerConfig = OptimizerConfig(),
          epochs: int = 300, objective: Optional[Callable[[np.ndarray], float]] = None,
          clock: str = "wall") -> tuple[ModelState, TrainReport]:
    """Full-batch training on ``g.train_mask`` with best-validation checkpointing.

    ``objective`` maps eval-mode logits to a validation score (higher is
    better); it defaults to plain validation accuracy.
    """
    if not g.has_masks:
        raise ValueError("graph has no train/val/test masks")
    if objective is None:
        def objective(logits):
            return accuracy(logits.argmax(axis=1), g.labels, g.val_mask)
    with cost.Stopwatch(clock) as sw:
        state = init_model(model_cfg)
        state.add_optimizer("train")
        adj = normalize_adjacency(g)
        best, best_epoch, best_obj = state.copy(), 0, -np.inf
        losses = []
        for epoch in range(1, epochs + 1):
            loss, grads, _ = loss_and_gradients(state, adj, g.labels, g.train_mask, train_mode=True,
                                                features=g.features)
            adam_step(state, grads, "train", opt_cfg)
            losses.append(loss)
            obj = objective(forward(state, adj, g.features).logits)
            if obj > best_obj:
                best, best_epoch, best_obj = state.copy(), epoch, obj
        wall = sw.elapsed()
    if epochs == 0:
        best_obj = float("nan")
    best.meta.update(best_epoch=best_epoch, train_time=wall)
    return best, TrainReport(epochs, best_epoch, float(best_obj), wall, losses)


# --- checkpoint files ------------------------------------------------------------

def save_checkpoint(state: ModelState, path) -> None:
    """JSON header line with the model config, then W1 and W2 as float32 blocks
    (two little-endian uint64 dims, then row-major values)."""
    with open(path, "wb") as fh:
        fh.write((json.dumps(asdict(state.config), sort_keys=True) + "\n").encode())
        for k in ("W1", "W2"):
            w = np.ascontiguousarray(state.weights[k], dtype="<f4")
            fh.write(struct.pack("<QQ", *w.shape))
            fh.write(w.tobytes())


def load_checkpoint(path) -> ModelState:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    cfg = ModelConfig(**json.loads(raw[:nl]))
    off = nl + 1
    weights = {}
    for k in ("W1", "W2"):
        r, c = struct.unpack_from("<QQ", raw, off)
        off += 16
        weights[k] = np.frombuffer(raw, "<f4", r * c, off).reshape(r, c).astype(np.float64)
        off += 4 * r * c
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelState(cfg, weights, np.random.default_rng(cfg.seed))

