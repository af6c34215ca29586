"""Graph container and the edge-perturbation algebra.

Perturbations are length ``N*(N-1)/2`` vectors over unordered node pairs in
row-major upper-triangle order, so pair ``(0, 1)`` is index 0, ``(0, 2)`` is
index 1 and ``(N-2, N-1)`` is the last index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .errors import ConfigError, DataError, DegeneracyError, ShapeError


def num_pairs(num_nodes: int) -> int:
    return num_nodes * (num_nodes - 1) // 2


@lru_cache(maxsize=8)
def _triu(num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(num_nodes, k=1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def pair_indices(num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column arrays of every unordered pair, in vector order."""
    return _triu(num_nodes)


def sym_index(i: int, j: int, num_nodes: int) -> int:
    """Vector index of the unordered pair ``{i, j}``."""
    if not (0 <= i < num_nodes and 0 <= j < num_nodes):
        raise IndexError(f"pair ({i}, {j}) out of range for {num_nodes} nodes")
    if i == j:
        raise IndexError(f"pair ({i}, {j}) is a self-loop")
    if i > j:
        i, j = j, i
    return i * num_nodes - i * (i + 1) // 2 + (j - i - 1)


def sym_pair(k: int, num_nodes: int) -> tuple[int, int]:
    """Inverse of :func:`sym_index`."""
    n = num_pairs(num_nodes)
    if not 0 <= k < n:
        raise IndexError(f"index {k} out of range for {num_nodes} nodes")
    rows, cols = _triu(num_nodes)
    return int(rows[k]), int(cols[k])


def upper(matrix: np.ndarray) -> np.ndarray:
    """Upper triangle of a square matrix flattened in vector order."""
    rows, cols = _triu(matrix.shape[0])
    return matrix[rows, cols]


def symmetric_from_vector(values: np.ndarray, num_nodes: int) -> np.ndarray:
    """Symmetric matrix with zero diagonal whose upper triangle is ``values``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (num_pairs(num_nodes),):
        raise ShapeError(
            f"perturbation has shape {values.shape}, expected ({num_pairs(num_nodes)},)"
        )
    rows, cols = _triu(num_nodes)
    out = np.zeros((num_nodes, num_nodes))
    out[rows, cols] = values
    out[cols, rows] = values
    return out


@dataclass(frozen=True)
class Graph:
    """One undirected, unweighted graph with node features and a split."""

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int = field(default=-1)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        feats = np.array(self.features, dtype=float)
        labels = np.array(self.labels, dtype=np.int64)
        train = np.array(self.train_mask, dtype=bool)
        test = np.array(self.test_mask, dtype=bool)

        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise DataError(f"adjacency must be square, got {adj.shape}")
        n = adj.shape[0]
        if not np.isin(adj, (0.0, 1.0)).all():
            raise DataError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise DataError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise DataError("adjacency must have a zero diagonal")
        if feats.ndim != 2 or feats.shape[0] != n:
            raise DataError(f"features must have {n} rows, got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise DataError("features must be finite")
        for name, arr in (("labels", labels), ("train_mask", train), ("test_mask", test)):
            if arr.shape != (n,):
                raise DataError(f"{name} must have shape ({n},), got {arr.shape}")
        if np.any(train & test):
            raise DataError("train and test node sets overlap")

        num_classes = self.num_classes
        if num_classes < 0:
            num_classes = int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= num_classes:
            raise DataError(f"class ids must lie in [0, {num_classes})")

        for arr in (adj, feats, labels, train, test):
            arr.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_mask", train)
        object.__setattr__(self, "test_mask", test)
        object.__setattr__(self, "num_classes", num_classes)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(upper(self.adjacency).sum())

    @property
    def num_pairs(self) -> int:
        return num_pairs(self.num_nodes)

    @property
    def train_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    @property
    def test_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.test_mask)

    def with_adjacency(self, adjacency: np.ndarray) -> Graph:
        return Graph(adjacency, self.features, self.labels, self.train_mask,
                     self.test_mask, self.num_classes)


@dataclass(frozen=True)
class PerturbationVector:
    values: np.ndarray
    mode: Literal["relaxed", "binary"] = "relaxed"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ShapeError("perturbation must be a vector")
        if self.mode == "binary":
            if not np.isin(values, (0.0, 1.0)).all():
                raise ConfigError("binary perturbation entries must be 0 or 1")
        elif self.mode == "relaxed":
            if np.any(values < 0) or np.any(values > 1):
                raise ConfigError("relaxed perturbation entries must lie in [0, 1]")
        else:
            raise ConfigError(f"unknown perturbation mode {self.mode!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def complement_direction(adjacency: np.ndarray) -> np.ndarray:
    """``C = (11^T - I) - 2A``: +1 where an edge may be added, -1 where removed."""
    n = adjacency.shape[0]
    return np.ones((n, n)) - np.eye(n) - 2.0 * adjacency


def apply_perturbation(adjacency: np.ndarray, s) -> np.ndarray:
    """Perturbed adjacency ``A + C * S`` for a relaxed or binary vector ``s``."""
    if isinstance(s, PerturbationVector):
        s = s.values
    adjacency = np.asarray(adjacency, dtype=float)
    n = adjacency.shape[0]
    s_mat = symmetric_from_vector(s, n)
    return adjacency + complement_direction(adjacency) * s_mat


def normalize_adjacency(a_prime: np.ndarray) -> np.ndarray:
    """Symmetric normalization ``D^-1/2 (A' + I) D^-1/2`` with column-sum degrees."""
    a_hat = np.asarray(a_prime, dtype=float) + np.eye(a_prime.shape[0])
    deg = a_hat.sum(axis=0)
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise DegeneracyError(f"nonpositive degree {deg[bad]:.3g} at node {bad}")
    r = 1.0 / np.sqrt(deg)
    return a_hat * r[:, None] * r[None, :]


def edge_budget(num_edges: int, ratio: float) -> int:
    """Number of edge flips allowed: ``max(1, floor(ratio * num_edges))``."""
    if num_edges < 1:
        raise DataError("graph has no edges; budget is undefined")
    if not 0 < ratio <= 1:
        raise ConfigError(f"budget ratio must lie in (0, 1], got {ratio}")
    # small epsilon guards 0.05 * 100 landing on 4.999...
    return max(1, int(np.floor(ratio * num_edges + 1e-9)))


def hamming(adjacency: np.ndarray, other: np.ndarray) -> int:
    return int(np.count_nonzero(upper(adjacency) != upper(other)))


def binary_from_adjacency(adjacency: np.ndarray, a_prime: np.ndarray) -> np.ndarray:
    """Binary perturbation vector that maps ``adjacency`` onto ``a_prime``."""
    return (upper(adjacency) != upper(a_prime)).astype(float)
