"""Per-seed experiment runners shared by the CLI and the acceptance suite.

Attack objectives use pseudo-labels: predictions of an independently trained
natural model, with ground truth kept on training nodes. Misclassification is
always reported against ground truth on the test nodes.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, AttackResult, dice_attack, evaluate, greedy_attack, \
    minmax_attack, pgd_attack
from .data_io import SbmSpec, generate_sbm
from .defense import DefenseConfig, adversarial_train
from .errors import ConfigError
from .gcn import GcnModel, misclassification_rate, predict, train_natural
from .graph import Graph, edge_budget
from .losses import AttackLossKind

METHODS = ("pgd", "minmax", "dice", "greedy")
PSEUDO_SEED_OFFSET = 10_000


def default_sbm(seed: int = 0) -> Graph:
    return generate_sbm(SbmSpec(seed=seed))


def budget_from_pct(graph: Graph, pct: float) -> int:
    if pct < 0 or pct > 100:
        raise ConfigError(f"budget percentage must lie in [0, 100], got {pct}")
    if pct == 0:
        return 0
    return edge_budget(graph.num_edges, pct / 100.0)


def pseudo_labels(graph: Graph, seed: int, epochs: int = 200) -> np.ndarray:
    ref = train_natural(graph, epochs=epochs, seed=seed + PSEUDO_SEED_OFFSET)
    labels = predict(ref, graph).labels.copy()
    labels[graph.train_mask] = graph.labels[graph.train_mask]
    return labels


def thread_count(jobs: int) -> int:
    cap = os.environ.get("TOPOGUARD_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(jobs, limit))


def map_seeds(fn, seeds):
    """``[fn(seed) for seed in seeds]``, fanned out over worker threads."""
    seeds = list(seeds)
    workers = thread_count(len(seeds))
    if workers == 1:
        return [fn(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def run_attack(graph: Graph, model: GcnModel, method: str, budget: int, seed: int,
               loss="ce", kappa: float = 0.0, iters: int = 200, inner_steps: int = 20,
               labels=None) -> AttackResult:
    """One attack on ``model`` with clean/attacked test misclassification filled in."""
    if method not in METHODS:
        raise ConfigError(f"unknown attack method {method!r}; choose from {', '.join(METHODS)}")
    if labels is None and method != "dice":
        labels = pseudo_labels(graph, seed)
    kind = AttackLossKind(loss, kappa)
    if method == "dice":
        return evaluate(dice_attack(graph, budget, seed), graph, model)
    if method == "greedy":
        if budget == 0:
            return evaluate(dice_attack(graph, 0, seed), graph, model)
        return greedy_attack(graph, model, budget, kind, labels=labels)
    cfg = AttackConfig(budget, kind, iters=iters, seed=seed, inner_steps=inner_steps)
    if method == "pgd":
        return pgd_attack(graph, model, cfg, labels=labels)
    return minmax_attack(graph, model, cfg, labels=labels)


@dataclass
class DefenseOutcome:
    seed: int
    budget: int
    natural: GcnModel
    robust: GcnModel
    trace: object
    clean_natural: float
    clean_robust: float
    attacked_natural: float
    attacked_robust: float


def run_defense(graph: Graph, budget: int, seed: int, outer_iters: int = 1000,
                inner_steps: int = 20, hidden: int = 32, attack_iters: int = 200,
                natural: GcnModel | None = None) -> DefenseOutcome:
    """Robust training plus a CE-PGD evaluation of both natural and robust models."""
    if natural is None:
        natural = train_natural(graph, seed=seed)
    robust, trace = adversarial_train(
        graph, DefenseConfig(budget, outer_iters=outer_iters, inner_min_steps=inner_steps,
                             hidden_width=hidden, seed=seed))
    labels = pseudo_labels(graph, seed)
    att_nat = run_attack(graph, natural, "pgd", budget, seed, iters=attack_iters, labels=labels)
    att_rob = run_attack(graph, robust, "pgd", budget, seed, iters=attack_iters, labels=labels)
    return DefenseOutcome(
        seed, budget, natural, robust, trace,
        clean_natural=misclassification_rate(natural, graph),
        clean_robust=misclassification_rate(robust, graph),
        attacked_natural=att_nat.metrics["attacked"],
        attacked_robust=att_rob.metrics["attacked"],
    )


def run_grid(graph: Graph, seed: int, train_pcts, attack_pcts, outer_iters: int = 1000,
             inner_steps: int = 20, hidden: int = 32, attack_iters: int = 200,
             models: dict | None = None) -> np.ndarray:
    """CE-PGD misclassification, rows = attack budget, columns = training budget.

    Training budget 0 means the natural model; attack budget 0 means the clean
    graph. ``models`` may map training percentages to ready models.
    """
    models = dict(models or {})
    labels = pseudo_labels(graph, seed)
    out = np.zeros((len(attack_pcts), len(train_pcts)))
    for c, train_pct in enumerate(train_pcts):
        model = models.get(train_pct)
        if model is None:
            if train_pct == 0:
                model = train_natural(graph, seed=seed)
            else:
                cfg = DefenseConfig(budget_from_pct(graph, train_pct), outer_iters=outer_iters,
                                    inner_min_steps=inner_steps, hidden_width=hidden, seed=seed)
                model, _ = adversarial_train(graph, cfg)
            models[train_pct] = model
        for r, attack_pct in enumerate(attack_pcts):
            budget = budget_from_pct(graph, attack_pct)
            if budget == 0:
                out[r, c] = misclassification_rate(model, graph)
            else:
                res = run_attack(graph, model, "pgd", budget, seed, iters=attack_iters,
                                 labels=labels)
                out[r, c] = res.metrics["attacked"]
    return out
