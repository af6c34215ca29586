"""Topology attacks: PGD on a fixed model, min-max against a retrainable
model, and the DICE and greedy baselines.

All attacks work on the perturbation vector over unordered node pairs and
leave the input graph and model untouched.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .gcn import GcnModel, loss_and_grads, misclassification_rate, predict
from .graph import Graph, apply_perturbation, num_pairs, pair_indices, upper
from .losses import CE, AttackLossKind, as_loss_kind, check_node_set, total_attack_loss
from .projection import project

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackConfig:
    budget: int
    loss: AttackLossKind = CE
    iters: int = 200
    step_scale: float = 200.0
    step_rule: str = "inv_sqrt"
    rounding_trials: int = 20
    seed: int = 0
    inner_steps: int = 20
    inner_lr: float = 0.01
    normalize_step: bool = True

    def __post_init__(self):
        object.__setattr__(self, "loss", as_loss_kind(self.loss))
        if self.budget < 0:
            raise ConfigError("budget must be nonnegative")
        if self.iters < 1 or self.rounding_trials < 1:
            raise ConfigError("iters and rounding_trials must be at least 1")
        if self.inner_steps < 0:
            raise ConfigError("inner_steps must be nonnegative")
        if self.step_rule not in ("inv_sqrt", "constant"):
            raise ConfigError(f"unknown step rule {self.step_rule!r}")

    def step_size(self, t: int) -> float:
        if self.step_rule == "constant":
            return self.step_scale
        return self.step_scale / np.sqrt(t)


@dataclass
class AttackResult:
    method: str
    budget: int
    s_binary: np.ndarray
    a_prime: np.ndarray
    s_relaxed: np.ndarray | None = None
    loss_trace: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    model: GcnModel | None = None

    @property
    def num_flips(self) -> int:
        return int(self.s_binary.sum())

    def toggles(self):
        """Edge toggles as ``(i, j, "add" | "remove")`` with ``i < j``."""
        rows, cols = pair_indices(self.a_prime.shape[0])
        out = []
        for k in np.flatnonzero(self.s_binary):
            i, j = int(rows[k]), int(cols[k])
            out.append((i, j, "add" if self.a_prime[i, j] > 0 else "remove"))
        return out


def _resolve(graph: Graph, node_set, labels):
    nodes = graph.test_nodes if node_set is None else node_set
    nodes = check_node_set(nodes, graph.num_nodes)
    labels = graph.labels if labels is None else np.asarray(labels)
    return nodes, labels


def binary_loss(graph: Graph, model: GcnModel, s, nodes, labels, kind) -> float:
    """Attack loss of the graph perturbed by ``s``."""
    Z = predict(model, graph, apply_perturbation(graph.adjacency, s)).probabilities
    return total_attack_loss(Z, labels, nodes, kind)


def _round(s_relaxed, eps, trials, seed, loss_eval):
    s_relaxed = np.asarray(s_relaxed, dtype=float)
    rng = np.random.default_rng(seed)
    best, best_loss = None, np.inf
    for _ in range(trials):
        u = (rng.random(s_relaxed.size) < s_relaxed).astype(float)
        if u.sum() > eps:
            continue
        f = loss_eval(u)
        if f < best_loss:
            best, best_loss = u, f
    if best is not None:
        return best, False
    # no feasible draw: keep the eps largest entries
    k = int(np.floor(eps))
    order = np.argsort(-s_relaxed, kind="stable")[:k]
    best = np.zeros_like(s_relaxed)
    best[order[s_relaxed[order] > 0]] = 1.0
    return best, True


def round_perturbation(s_relaxed, eps, K: int, seed: int,
                       loss_eval: Callable[[np.ndarray], float]) -> np.ndarray:
    """Best of ``K`` Bernoulli(``s_relaxed``) draws that respects the budget.

    Falls back to keeping the top ``eps`` entries, with a warning, when no
    draw is feasible.
    """
    s_star, fallback = _round(s_relaxed, eps, K, seed, loss_eval)
    if fallback:
        warnings.warn("no feasible random draw; used top-eps rounding", RuntimeWarning,
                      stacklevel=2)
    return s_star


def _finish(graph, model, method, cfg, s, trace, nodes, labels, eval_labels, extra=None):
    def loss_eval(u):
        return binary_loss(graph, model, u, nodes, labels, cfg.loss)

    s_star, fallback = _round(s, cfg.budget, cfg.rounding_trials, cfg.seed, loss_eval)
    flags = ["rounding_fallback"] if fallback else []
    if fallback:
        log.warning("%s: no feasible random draw, used top-eps rounding", method)
    a_prime = apply_perturbation(graph.adjacency, s_star)
    result = AttackResult(method, cfg.budget, s_star, a_prime, s_relaxed=s,
                          loss_trace=trace, flags=flags, **(extra or {}))
    result.metrics["binary_loss"] = loss_eval(s_star)
    return evaluate(result, graph, model, nodes, eval_labels)


def evaluate(result: AttackResult, graph: Graph, model: GcnModel, node_set=None,
             eval_labels=None) -> AttackResult:
    """Fill in clean and attacked misclassification of ``model``."""
    nodes, eval_labels = _resolve(graph, node_set, eval_labels)
    result.metrics["clean"] = misclassification_rate(model, graph, None, nodes, eval_labels)
    result.metrics["attacked"] = misclassification_rate(model, graph, result.a_prime, nodes,
                                                        eval_labels)
    return result


def per_node_step(grad: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Gradient of the per-node mean loss, which the step sizes are scaled for."""
    return grad / nodes.size


def _pgd_step(s, grad, t, cfg, nodes):
    if cfg.normalize_step:
        grad = per_node_step(grad, nodes)
    return project(s - cfg.step_size(t) * grad, cfg.budget).s


def pgd_attack(graph: Graph, model: GcnModel, cfg: AttackConfig, node_set=None, labels=None,
               eval_labels=None) -> AttackResult:
    """Projected gradient descent on the relaxed perturbation, then rounding.

    ``labels`` are the reference labels inside the attack loss (pass
    pseudo-labels to follow the usual evaluation protocol); ``eval_labels``
    are used for the reported misclassification rates. Both default to the
    graph labels. ``loss_trace[t-1]`` is the relaxed loss after step ``t``.
    """
    nodes, labels = _resolve(graph, node_set, labels)
    s = np.zeros(num_pairs(graph.num_nodes))
    if cfg.budget == 0:
        warnings.warn("zero budget: returning the clean graph", RuntimeWarning, stacklevel=2)
    trace = []
    initial = None
    for t in range(1, cfg.iters + 1):
        f, _, grad = loss_and_grads(model, s, graph, nodes, cfg.loss, labels=labels)
        if initial is None:
            initial = f
        else:
            trace.append(f)
        s = _pgd_step(s, grad, t, cfg, nodes)
    trace.append(loss_and_grads(model, s, graph, nodes, cfg.loss, labels=labels,
                                need_s_grad=False)[0])
    result = _finish(graph, model, "pgd", cfg, s, trace, nodes, labels, eval_labels)
    result.metrics["initial_loss"] = initial
    return result


def minmax_attack(graph: Graph, model: GcnModel, cfg: AttackConfig, node_set=None,
                  labels=None, eval_labels=None) -> AttackResult:
    """Alternate ``inner_steps`` weight-ascent steps with one PGD step on ``s``.

    Retraining starts from ``model``. The binary perturbation is rounded
    against ``model``; the retrained weights are returned on the result and
    evaluated under the key ``attacked_retrained``.
    """
    nodes, labels = _resolve(graph, node_set, labels)
    s = np.zeros(num_pairs(graph.num_nodes))
    w = model
    trace = []
    initial = None
    for t in range(1, cfg.iters + 1):
        for _ in range(cfg.inner_steps):
            _, grad_w, _ = loss_and_grads(w, s, graph, nodes, cfg.loss, labels=labels,
                                          need_s_grad=False)
            w = w.step(grad_w, cfg.inner_lr)
        f, _, grad_s = loss_and_grads(w, s, graph, nodes, cfg.loss, labels=labels)
        if initial is None:
            initial = f
        else:
            trace.append(f)
        s = _pgd_step(s, grad_s, t, cfg, nodes)
    trace.append(loss_and_grads(w, s, graph, nodes, cfg.loss, labels=labels,
                                need_s_grad=False)[0])
    result = _finish(graph, model, "minmax", cfg, s, trace, nodes, labels, eval_labels,
                     extra={"model": w})
    result.metrics["initial_loss"] = initial
    ev_nodes, ev_labels = _resolve(graph, nodes, eval_labels)
    result.metrics["clean_retrained"] = misclassification_rate(w, graph, None, ev_nodes,
                                                               ev_labels)
    result.metrics["attacked_retrained"] = misclassification_rate(w, graph, result.a_prime,
                                                                  ev_nodes, ev_labels)
    return result


def dice_attack(graph: Graph, eps: int, seed: int = 0, labels=None) -> AttackResult:
    """Randomly delete same-label edges and insert cross-label edges.

    Metrics are left empty; call :func:`evaluate` with a model to fill them.
    """
    if eps < 0:
        raise ConfigError("budget must be nonnegative")
    labels = graph.labels if labels is None else np.asarray(labels)
    rows, cols = pair_indices(graph.num_nodes)
    present = upper(graph.adjacency) > 0
    same = labels[rows] == labels[cols]
    rng = np.random.default_rng(seed)
    internal = list(rng.permutation(np.flatnonzero(present & same)))
    external = list(rng.permutation(np.flatnonzero(~present & ~same)))
    s = np.zeros(rows.size)
    for _ in range(eps):
        if not internal and not external:
            break
        remove = bool(internal) and (not external or rng.random() < 0.5)
        s[(internal if remove else external).pop()] = 1.0
    flags = []
    if s.sum() < eps:
        flags.append("budget_shortfall")
        log.warning("dice: only %d of %d candidate toggles available", int(s.sum()), eps)
    return AttackResult("dice", eps, s, apply_perturbation(graph.adjacency, s), flags=flags)


def greedy_attack(graph: Graph, model: GcnModel, eps: int, loss_kind=CE, node_set=None,
                  labels=None, eval_labels=None) -> AttackResult:
    """Flip, ``eps`` times, the unflipped pair with the most negative gradient.

    The gradient of the relaxed loss at the current binary vector predicts
    the change from raising one entry from 0 to 1.
    """
    if eps < 1:
        raise ConfigError("greedy attack needs a budget of at least 1")
    kind = as_loss_kind(loss_kind)
    nodes, labels = _resolve(graph, node_set, labels)
    s = np.zeros(num_pairs(graph.num_nodes))
    if eps > s.size:
        raise ConfigError(f"budget {eps} exceeds the {s.size} available pairs")
    trace = []
    for _ in range(eps):
        _, _, grad = loss_and_grads(model, s, graph, nodes, kind, labels=labels)
        grad = np.where(s > 0, np.inf, grad)
        s[int(np.argmin(grad))] = 1.0
        trace.append(binary_loss(graph, model, s, nodes, labels, kind))
    result = AttackResult("greedy", eps, s, apply_perturbation(graph.adjacency, s),
                          loss_trace=trace)
    result.metrics["binary_loss"] = trace[-1]
    return evaluate(result, graph, model, nodes, eval_labels)

