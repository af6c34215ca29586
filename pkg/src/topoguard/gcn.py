"""Two-layer GCN with hand-written backward passes.

The forward pass is ``logits = A_t @ relu(A_t @ X @ W0) @ W1`` followed by a
row softmax, where ``A_t`` is the normalized (possibly perturbed) adjacency.
Gradients flow to both weight matrices and, through the normalization, to
the perturbation vector ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .graph import Graph, apply_perturbation, complement_direction, normalize_adjacency, upper
from .losses import CE, AttackLossKind, as_loss_kind, check_node_set, loss_and_logit_grad, softmax

NATURAL_HIDDEN = 16
ROBUST_HIDDEN = 32


@dataclass(frozen=True)
class GcnModel:
    w0: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        w0 = np.array(self.w0, dtype=float)
        w1 = np.array(self.w1, dtype=float)
        if w0.ndim != 2 or w1.ndim != 2 or w0.shape[1] != w1.shape[0]:
            raise ShapeError(f"incompatible weight shapes {w0.shape} and {w1.shape}")
        if not (np.isfinite(w0).all() and np.isfinite(w1).all()):
            raise NumericError("model weights must be finite")
        w0.setflags(write=False)
        w1.setflags(write=False)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "w1", w1)

    @property
    def hidden_width(self) -> int:
        return self.w0.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w1.shape[1]

    def step(self, grad: GcnModel, scale: float) -> GcnModel:
        """New model ``W + scale * grad``."""
        return GcnModel(self.w0 + scale * grad.w0, self.w1 + scale * grad.w1)


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    logits: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.probabilities, axis=1)


def init_model(in_dim: int, hidden: int, num_classes: int, seed: int = 0) -> GcnModel:
    """Glorot-uniform initialization."""
    if hidden < 1 or in_dim < 1 or num_classes < 1:
        raise ConfigError("layer widths must be positive")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return GcnModel(glorot(in_dim, hidden), glorot(hidden, num_classes))


def _check_finite(arr, layer):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values at layer {layer}")


def _forward(model: GcnModel, a_tilde: np.ndarray, X: np.ndarray):
    if a_tilde.shape[0] != X.shape[0] or X.shape[1] != model.w0.shape[0]:
        raise ShapeError(
            f"shapes do not chain: A {a_tilde.shape}, X {X.shape}, W0 {model.w0.shape}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        xw = X @ model.w0
        pre = a_tilde @ xw
        _check_finite(pre, 1)
        hidden = np.maximum(pre, 0.0)
        hw = hidden @ model.w1
        logits = a_tilde @ hw
        _check_finite(logits, 2)
    return xw, pre, hidden, hw, logits


def forward(model: GcnModel, a_tilde: np.ndarray, X: np.ndarray) -> Prediction:
    logits = _forward(model, np.asarray(a_tilde, dtype=float), np.asarray(X, dtype=float))[-1]
    return Prediction(softmax(logits), logits)


def predict(model: GcnModel, graph: Graph, a_prime: np.ndarray | None = None) -> Prediction:
    adj = graph.adjacency if a_prime is None else a_prime
    return forward(model, normalize_adjacency(adj), graph.features)


def _backward(model, a_tilde, X, cache, g_logits, need_adj: bool):
    xw, pre, hidden, hw, _ = cache
    g_hw = a_tilde.T @ g_logits
    g_w1 = hidden.T @ g_hw
    g_pre = (g_hw @ model.w1.T) * (pre > 0)
    g_xw = a_tilde.T @ g_pre
    g_w0 = X.T @ g_xw
    g_adj = None
    if need_adj:
        g_adj = g_logits @ hw.T + g_pre @ xw.T
    return g_w0, g_w1, g_adj


def _normalization_backward(a_hat: np.ndarray, g_tilde: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the normalized adjacency back to ``A' + I``.

    With degrees ``d_j = sum_i a_hat[i, j]`` and ``r = d^-1/2``, each entry is
    ``a_hat[i, j] * r_i * r_j``.
    """
    deg = a_hat.sum(axis=0)
    r = 1.0 / np.sqrt(deg)
    g_hat = g_tilde * np.outer(r, r)
    weighted = g_tilde * a_hat
    g_r = (weighted + weighted.T) @ r
    g_deg = -0.5 * g_r * r ** 3
    # d_j depends on every entry in column j
    return g_hat + g_deg[None, :]


def loss_and_grads(model: GcnModel, s, graph: Graph, node_set, loss_kind=CE,
                   kappa: float | None = None, labels=None, need_s_grad: bool = True):
    """Attack loss ``f`` at ``(s, W)`` with exact gradients.

    Returns ``(f, grad_w, grad_s)``; ``grad_w`` is a :class:`GcnModel` holding
    the weight gradients and ``grad_s`` is a length-``n`` vector (``None``
    when ``need_s_grad`` is false). ``labels`` defaults to the graph labels.
    """
    kind = as_loss_kind(loss_kind)
    if kappa is not None:
        kind = AttackLossKind(kind.kind, kappa)
    nodes = check_node_set(node_set, graph.num_nodes)
    labels = graph.labels if labels is None else np.asarray(labels)

    s = np.asarray(getattr(s, "values", s), dtype=float)
    a_prime = apply_perturbation(graph.adjacency, s)
    a_hat = a_prime + np.eye(graph.num_nodes)
    a_tilde = normalize_adjacency(a_prime)
    X = graph.features
    cache = _forward(model, a_tilde, X)
    f, g_logits = loss_and_logit_grad(cache[-1], labels, nodes, kind)
    if not np.isfinite(f):
        raise NumericError("attack loss overflowed")
    g_w0, g_w1, g_tilde = _backward(model, a_tilde, X, cache, g_logits, need_s_grad)
    grad_s = None
    if need_s_grad:
        g_a = _normalization_backward(a_hat, g_tilde) * complement_direction(graph.adjacency)
        grad_s = upper(g_a) + upper(g_a.T)
    return f, GcnModel(g_w0, g_w1), grad_s


def weight_loss_and_grad(model: GcnModel, a_tilde: np.ndarray, X: np.ndarray, labels,
                         nodes: np.ndarray, kind: AttackLossKind = CE):
    """Loss and weight gradient on a fixed normalized adjacency."""
    cache = _forward(model, a_tilde, X)
    f, g_logits = loss_and_logit_grad(cache[-1], labels, nodes, kind)
    g_w0, g_w1, _ = _backward(model, a_tilde, X, cache, g_logits, False)
    return f, GcnModel(g_w0, g_w1)


class Adam:
    """Minimal Adam state for a pair of weight matrices."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def descend(self, model: GcnModel, grad: GcnModel) -> GcnModel:
        grads = (grad.w0, grad.w1)
        if self.m is None:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        new = []
        for k, (w, g) in enumerate(zip((model.w0, model.w1), grads)):
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1 - self.beta2 ** self.t)
            new.append(w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return GcnModel(*new)


def train_natural(graph: Graph, epochs: int = 200, lr: float = 0.01, seed: int = 0,
                  hidden: int = NATURAL_HIDDEN, weight_decay: float = 0.02,
                  trace: list | None = None) -> GcnModel:
    """Full-batch Adam on the mean cross-entropy of the training nodes.

    ``weight_decay`` adds ``weight_decay/2 * (||W0||^2 + ||W1||^2)`` to the
    objective.
    If ``trace`` is given, that objective before each update is appended.
    """
    nodes = graph.train_nodes
    if nodes.size == 0:
        raise ConfigError("no labeled training nodes")
    if epochs < 0:
        raise ConfigError("epochs must be nonnegative")
    model = init_model(graph.features.shape[1], hidden, graph.num_classes, seed)
    a_tilde = normalize_adjacency(graph.adjacency)
    opt = Adam(lr)
    for _ in range(epochs):
        # f is the summed log-likelihood; the training loss is -f / |train|
        f, grad = weight_loss_and_grad(model, a_tilde, graph.features, graph.labels, nodes)
        if trace is not None:
            penalty = 0.5 * weight_decay * (np.sum(model.w0 ** 2) + np.sum(model.w1 ** 2))
            trace.append(-f / nodes.size + penalty)
        scale = -1.0 / nodes.size
        model = opt.descend(model, GcnModel(scale * grad.w0 + weight_decay * model.w0,
                                            scale * grad.w1 + weight_decay * model.w1))
    return model


def misclassification_rate(model: GcnModel, graph: Graph, a_prime=None, node_set=None,
                           reference_labels=None) -> float:
    """Fraction of ``node_set`` whose argmax prediction differs from the reference."""
    nodes = graph.test_nodes if node_set is None else node_set
    nodes = check_node_set(nodes, graph.num_nodes)
    ref = graph.labels if reference_labels is None else np.asarray(reference_labels)
    if ref.shape != (graph.num_nodes,):
        raise ShapeError(f"reference labels must have shape ({graph.num_nodes},)")
    pred = predict(model, graph, a_prime).labels
    return float(np.mean(pred[nodes] != ref[nodes]))
