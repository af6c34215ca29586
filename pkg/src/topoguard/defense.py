"""Adversarial training: ascend the CE-type loss in the weights while an
inner PGD loop keeps the perturbation at its loss-minimizing point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .attacks import per_node_step
from .errors import ConfigError, NumericError
from .gcn import ROBUST_HIDDEN, GcnModel, init_model, loss_and_grads, train_natural
from .graph import Graph, num_pairs
from .losses import CE, check_node_set
from .projection import project

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DefenseConfig:
    budget: int
    outer_iters: int = 1000
    weight_lr: float = 0.01
    step_scale: float = 200.0
    inner_min_steps: int = 20
    hidden_width: int = ROBUST_HIDDEN
    seed: int = 0
    warm_start: bool = True
    pretrain_epochs: int = 200

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigError("budget must be nonnegative")
        if self.outer_iters < 1 or self.inner_min_steps < 0 or self.hidden_width < 1:
            raise ConfigError("outer_iters and hidden_width must be positive")
        if self.weight_lr <= 0 or self.step_scale <= 0:
            raise ConfigError("learning rates must be positive")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be nonnegative")

    def attack_step(self, t: int) -> float:
        return self.step_scale / np.sqrt(t)


@dataclass
class TrainingTrace:
    """Per outer iteration: mean training cross-entropy at the inner minimizer,
    and the number of pairs the relaxed perturbation touches (``s > 0.5``).
    ``s`` is the final relaxed perturbation."""

    loss: list
    flips: list
    s: np.ndarray | None = None


def adversarial_train(graph: Graph, cfg: DefenseConfig, node_set=None,
                      init: GcnModel | None = None):
    """Robust weights for ``max_W min_s f(s, W)`` with the CE-type loss.

    ``f`` is summed over the training nodes with their true labels. Each outer
    iteration ``t`` runs ``inner_min_steps`` PGD steps on ``s`` with step
    ``step_scale / sqrt(t)`` applied to the per-node mean gradient, then one
    ascent step ``W += weight_lr * grad_W f``. Returns ``(model, trace)``.

    The starting weights are ``init`` if given, else a natural model of width
    ``hidden_width`` trained for ``pretrain_epochs`` (random initialization
    when that is 0). ``warm_start`` carries ``s`` across outer iterations.
    """
    nodes = graph.train_nodes if node_set is None else node_set
    nodes = check_node_set(nodes, graph.num_nodes)
    w = init
    if w is None and cfg.pretrain_epochs > 0:
        w = train_natural(graph, cfg.pretrain_epochs, seed=cfg.seed, hidden=cfg.hidden_width)
    elif w is None:
        w = init_model(graph.features.shape[1], cfg.hidden_width, graph.num_classes, cfg.seed)
    s = np.zeros(num_pairs(graph.num_nodes))
    trace = TrainingTrace([], [])
    for t in range(1, cfg.outer_iters + 1):
        if not cfg.warm_start:
            s = np.zeros_like(s)
        if cfg.budget > 0:
            for _ in range(cfg.inner_min_steps):
                _, _, grad_s = loss_and_grads(w, s, graph, nodes, CE)
                s = project(s - cfg.attack_step(t) * per_node_step(grad_s, nodes),
                            cfg.budget).s
        f, grad_w, _ = loss_and_grads(w, s, graph, nodes, CE, need_s_grad=False)
        if not np.isfinite(f):
            raise NumericError(f"robust training diverged at iteration {t}")
        trace.loss.append(-f / nodes.size)
        trace.flips.append(int((s > 0.5).sum()))
        try:
            w = w.step(grad_w, cfg.weight_lr)
        except NumericError as exc:
            raise NumericError(f"robust training diverged at iteration {t}") from exc
    trace.s = s
    return w, trace


def saddle_values(f, point_a, point_b):
    """Max-min and min-max estimates from a defense point and an attack point.

    ``point_a = (W_a, s_a)`` comes from robust training (``s_a`` approximately
    minimizes ``f(., W_a)``) and ``point_b = (W_b, s_b)`` from a min-max attack
    (``W_b`` approximately maximizes ``f(s_b, .)``). Each side takes the better
    of its own point and the cross point ``(W_a, s_b)``, so
    ``maxmin <= f(s_b, W_a) <= minmax`` holds for the estimates just as it
    does for the true optima.
    """
    (w_a, s_a), (w_b, s_b) = point_a, point_b
    cross = f(s_b, w_a)
    maxmin = min(f(s_a, w_a), cross)
    minmax = max(f(s_b, w_b), cross)
    return maxmin, minmax


def minmax_maxmin_gap(graph: Graph, model_a: GcnModel, s_a, model_b: GcnModel, s_b,
                      node_set=None, labels=None, slack: float = 1e-6):
    """``(maxmin, minmax)`` estimates of the CE-type attack loss on ``graph``.

    See :func:`saddle_values`. A warning is logged if the max-min estimate
    exceeds the min-max estimate by more than ``slack``.
    """
    nodes = graph.train_nodes if node_set is None else node_set

    def f(s, model):
        return loss_and_grads(model, s, graph, nodes, CE, labels=labels, need_s_grad=False)[0]

    maxmin, minmax = saddle_values(f, (model_a, s_a), (model_b, s_b))
    if maxmin > minmax + slack:
        log.warning("max-min value %.6g exceeds min-max value %.6g", maxmin, minmax)
    return maxmin, minmax
