"""Per-node attack losses and their sum over a node set.

Both losses are the quantity an attacker *minimizes*: the CE-type loss is
``log Z[i, y]`` (negative cross-entropy) and the CW-type loss is the margin
``max(Z[i, y] - max_{c != y} Z[i, c], -kappa)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class AttackLossKind:
    kind: Literal["ce", "cw"] = "ce"
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ce", "cw"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if not self.kappa >= 0:
            raise ConfigError(f"kappa must be nonnegative, got {self.kappa}")


CE = AttackLossKind("ce")
CW = AttackLossKind("cw")


def as_loss_kind(kind) -> AttackLossKind:
    if isinstance(kind, AttackLossKind):
        return kind
    return AttackLossKind(str(kind).lower())


def ce_node_loss(z_row, y: int) -> float:
    z_y = float(np.asarray(z_row, dtype=float)[y])
    if z_y < PROB_FLOOR:
        warnings.warn(f"probability {z_y:.3g} clamped to {PROB_FLOOR}", RuntimeWarning,
                      stacklevel=2)
        z_y = PROB_FLOOR
    return float(np.log(z_y))


def _runner_up(z_row: np.ndarray, y: int) -> int:
    masked = np.array(z_row, dtype=float)
    masked[y] = -np.inf
    return int(np.argmax(masked))


def cw_node_loss(z_row, y: int, kappa: float = 0.0) -> float:
    z_row = np.asarray(z_row, dtype=float)
    if z_row.shape[0] < 2:
        raise ConfigError("CW loss needs at least two classes")
    if kappa < 0:
        raise ConfigError(f"kappa must be nonnegative, got {kappa}")
    margin = z_row[y] - z_row[_runner_up(z_row, y)]
    return float(max(margin, -kappa))


def check_node_set(node_set, num_nodes: int) -> np.ndarray:
    nodes = np.asarray(node_set, dtype=np.int64).reshape(-1)
    if nodes.size == 0:
        raise ConfigError("node set is empty")
    if np.unique(nodes).size != nodes.size:
        raise ConfigError("node set contains duplicate entries")
    if nodes.min() < 0 or nodes.max() >= num_nodes:
        raise ConfigError(f"node set has ids outside [0, {num_nodes})")
    return nodes


def total_attack_loss(Z: np.ndarray, labels, node_set, kind="ce") -> float:
    """Sum of per-node losses over ``node_set``, evaluated on probabilities ``Z``."""
    kind = as_loss_kind(kind)
    nodes = check_node_set(node_set, Z.shape[0])
    labels = np.asarray(labels)
    if kind.kind == "ce":
        return float(sum(ce_node_loss(Z[i], labels[i]) for i in nodes))
    return float(sum(cw_node_loss(Z[i], labels[i], kind.kappa) for i in nodes))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_logit_grad(logits: np.ndarray, labels, nodes: np.ndarray, kind: AttackLossKind):
    """Total loss and its gradient with respect to the logits.

    CE goes through log-softmax, which agrees with :func:`ce_node_loss` wherever
    the probability is above the clamp floor. CW uses the active branch of the
    max and takes the margin branch on ties.
    """
    labels = np.asarray(labels)[nodes]
    rows = logits[nodes]
    Z = softmax(rows)
    grad = np.zeros_like(logits)
    idx = np.arange(nodes.size)
    if kind.kind == "ce":
        shifted = rows - rows.max(axis=1, keepdims=True)
        log_z = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        f = float(log_z[idx, labels].sum())
        g = -Z
        g[idx, labels] += 1.0
        grad[nodes] = g
        return f, grad

    if Z.shape[1] < 2:
        raise ConfigError("CW loss needs at least two classes")
    masked = Z.copy()
    masked[idx, labels] = -np.inf
    runner = np.argmax(masked, axis=1)
    margin = Z[idx, labels] - Z[idx, runner]
    active = margin >= -kind.kappa
    f = float(np.where(active, margin, -kind.kappa).sum())
    g_z = np.zeros_like(Z)
    g_z[idx[active], labels[active]] = 1.0
    g_z[idx[active], runner[active]] = -1.0
    # softmax backward: dL/dlogit = Z * (g - <g, Z>)
    grad[nodes] = Z * (g_z - (g_z * Z).sum(axis=1, keepdims=True))
    return f, grad
