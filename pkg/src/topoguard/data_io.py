"""Graph loading and synthesis, and serialization of models and attack results.

Text formats (0-based node ids):

* edge file: ``i<TAB>j`` per line, each undirected edge once, ``i != j``
* feature file: header ``N M0``, then ``N`` lines of ``M0`` decimals
* label file: ``N`` lines ``node_id<TAB>class_id``
* split file: lines ``node_id<TAB>{train|test|none}``

Models and attack results are JSON documents tagged ``topoguard/v1``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import AttackResult
from .errors import ConfigError, DataError, FormatError
from .gcn import GcnModel
from .graph import Graph, apply_perturbation, num_pairs, sym_index

log = logging.getLogger(__name__)

FORMAT_TAG = "topoguard/v1"
MAX_SBM_RETRIES = 10


@dataclass(frozen=True)
class SbmSpec:
    blocks: int = 2
    nodes_per_block: int = 50
    p_in: float = 0.2
    p_out: float = 0.02
    feature_dim: int = 16
    feature_signal: float = 0.1
    seed: int = 0
    train_ratio: float = 0.5
    test_ratio: float = 0.5

    def __post_init__(self):
        if self.blocks < 1 or self.nodes_per_block < 1 or self.feature_dim < 1:
            raise ConfigError("blocks, nodes_per_block and feature_dim must be positive")
        if not 0 <= self.p_out < self.p_in <= 1:
            raise ConfigError(f"need 0 <= p_out < p_in <= 1, got {self.p_out}, {self.p_in}")
        if self.train_ratio < 0 or self.test_ratio < 0 or self.train_ratio + self.test_ratio > 1:
            raise ConfigError("train and test ratios must be nonnegative and sum to at most 1")

    @property
    def num_nodes(self) -> int:
        return self.blocks * self.nodes_per_block


def _sbm_once(spec: SbmSpec, rng: np.random.Generator) -> Graph:
    n = spec.num_nodes
    labels = np.repeat(np.arange(spec.blocks), spec.nodes_per_block)
    prob = np.where(labels[:, None] == labels[None, :], spec.p_in, spec.p_out)
    draw = rng.random((n, n)) < prob
    adj = np.triu(draw, k=1).astype(float)
    adj = adj + adj.T

    means = np.zeros((spec.blocks, spec.feature_dim))
    for c in range(spec.blocks):
        means[c, np.arange(spec.feature_dim) % spec.blocks == c] = spec.feature_signal
    features = means[labels] + rng.standard_normal((n, spec.feature_dim))

    train = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    n_train = max(1, int(round(spec.train_ratio * spec.nodes_per_block))) if spec.train_ratio else 0
    n_test = int(round(spec.test_ratio * spec.nodes_per_block))
    for c in range(spec.blocks):
        members = rng.permutation(np.flatnonzero(labels == c))
        train[members[:n_train]] = True
        test[members[n_train:n_train + n_test]] = True
    return Graph(adj, features, labels, train, test, spec.blocks)


def generate_sbm(spec: SbmSpec) -> Graph:
    """Stochastic block model graph with class-dependent Gaussian features.

    Block ids are the class labels. The split is stratified per block.
    """
    rng = np.random.default_rng(spec.seed)
    for attempt in range(MAX_SBM_RETRIES):
        graph = _sbm_once(spec, rng)
        if graph.num_edges > 0:
            return graph
        log.warning("SBM draw %d has no edges; regenerating", attempt)
    raise DataError(f"SBM produced no edges in {MAX_SBM_RETRIES} attempts")


def _lines(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield lineno, line.split()


def _int(token, path, lineno):
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: expected an integer, got {token!r}") from None


def _read_features(path):
    rows = list(_lines(path))
    if not rows:
        raise FormatError(f"{path}: empty feature file")
    lineno, header = rows[0]
    if len(header) != 2:
        raise FormatError(f"{path}:{lineno}: header must be 'N M0'")
    n, m0 = (_int(tok, path, lineno) for tok in header)
    if n < 1 or m0 < 1:
        raise FormatError(f"{path}:{lineno}: N and M0 must be positive")
    if len(rows) - 1 != n:
        raise FormatError(f"{path}: expected {n} feature rows, found {len(rows) - 1}")
    features = np.empty((n, m0))
    for i, (lineno, tokens) in enumerate(rows[1:]):
        if len(tokens) != m0:
            raise FormatError(f"{path}:{lineno}: expected {m0} values, got {len(tokens)}")
        try:
            features[i] = [float(tok) for tok in tokens]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric feature value") from None
    return features


def _read_edges(path, n):
    adj = np.zeros((n, n))
    seen = {}
    for lineno, tokens in _lines(path):
        if len(tokens) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'i<TAB>j'")
        i, j = (_int(tok, path, lineno) for tok in tokens)
        if not (0 <= i < n and 0 <= j < n):
            raise FormatError(f"{path}:{lineno}: node id out of range [0, {n})")
        if i == j:
            raise FormatError(f"{path}:{lineno}: self-loop on node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            first, direction = seen[key]
            what = "duplicate" if direction == (i, j) else "reversed duplicate"
            raise FormatError(f"{path}:{lineno}: {what} of edge on line {first}")
        seen[key] = (lineno, (i, j))
        adj[i, j] = adj[j, i] = 1.0
    return adj


def _read_keyed(path, n, parse):
    values = {}
    for lineno, tokens in _lines(path):
        if len(tokens) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'node_id<TAB>value'")
        node = _int(tokens[0], path, lineno)
        if not 0 <= node < n:
            raise FormatError(f"{path}:{lineno}: node id {node} out of range [0, {n})")
        if node in values:
            raise FormatError(f"{path}:{lineno}: node {node} listed twice")
        values[node] = parse(tokens[1], path, lineno)
    return values


def _split_value(token, path, lineno):
    if token not in ("train", "test", "none"):
        raise FormatError(f"{path}:{lineno}: split must be train, test or none, got {token!r}")
    return token


def load_graph(edge_path, feature_path, label_path, split_path) -> Graph:
    features = _read_features(feature_path)
    n = features.shape[0]
    adj = _read_edges(edge_path, n)
    labels = _read_keyed(label_path, n, _int)
    missing = sorted(set(range(n)) - labels.keys())
    if missing:
        raise FormatError(f"{label_path}: no label for node {missing[0]}"
                          f" ({len(missing)} missing)")
    split = _read_keyed(split_path, n, _split_value)
    train = np.array([split.get(i) == "train" for i in range(n)])
    test = np.array([split.get(i) == "test" for i in range(n)])
    y = np.array([labels[i] for i in range(n)])
    if y.min() < 0:
        raise FormatError(f"{label_path}: negative class id")
    return Graph(adj, features, y, train, test)


def write_graph(graph: Graph, out_dir) -> dict:
    """Write the four text files; returns their paths by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.txt" for k in ("edges", "features", "labels", "split")}
    rows, cols = np.nonzero(np.triu(graph.adjacency, k=1))
    paths["edges"].write_text("".join(f"{i}\t{j}\n" for i, j in zip(rows, cols)))
    n, m0 = graph.features.shape
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in graph.features)
    paths["features"].write_text(f"{n} {m0}\n{body}\n")
    paths["labels"].write_text("".join(f"{i}\t{c}\n" for i, c in enumerate(graph.labels)))
    role = np.where(graph.train_mask, "train", np.where(graph.test_mask, "test", "none"))
    paths["split"].write_text("".join(f"{i}\t{r}\n" for i, r in enumerate(role)))
    return paths


def _model_doc(model: GcnModel) -> dict:
    return {"w0": model.w0.tolist(), "w1": model.w1.tolist()}


def _model_from(doc) -> GcnModel:
    return GcnModel(np.array(doc["w0"], dtype=float), np.array(doc["w1"], dtype=float))


def _attack_doc(result: AttackResult) -> dict:
    n_nodes = result.a_prime.shape[0]
    rows, cols = np.nonzero(np.triu(result.a_prime, k=1))
    doc = {
        "kind": "attack",
        "method": result.method,
        "budget": result.budget,
        "num_nodes": n_nodes,
        "toggles": [list(t) for t in result.toggles()],
        "a_prime_edges": [[int(i), int(j)] for i, j in zip(rows, cols)],
        "loss_trace": [float(v) for v in result.loss_trace],
        "metrics": {k: float(v) for k, v in result.metrics.items()},
        "flags": list(result.flags),
        "s_relaxed": None,
        "model": None,
    }
    if result.s_relaxed is not None:
        nz = np.flatnonzero(result.s_relaxed)
        doc["s_relaxed"] = {"index": nz.tolist(), "value": result.s_relaxed[nz].tolist()}
    if result.model is not None:
        doc["model"] = _model_doc(result.model)
    return doc


def _attack_from(doc) -> AttackResult:
    n = doc["num_nodes"]
    a_prime = np.zeros((n, n))
    for i, j in doc["a_prime_edges"]:
        a_prime[i, j] = a_prime[j, i] = 1.0
    s_binary = np.zeros(num_pairs(n))
    for i, j, kind in doc["toggles"]:
        if kind not in ("add", "remove"):
            raise FormatError(f"unknown toggle kind {kind!r}")
        if (a_prime[i, j] > 0) != (kind == "add"):
            raise FormatError(f"toggle ({i}, {j}, {kind}) disagrees with the stored graph")
        s_binary[sym_index(i, j, n)] = 1.0
    s_relaxed = None
    if doc["s_relaxed"] is not None:
        s_relaxed = np.zeros(num_pairs(n))
        s_relaxed[np.array(doc["s_relaxed"]["index"], dtype=np.int64)] = doc["s_relaxed"]["value"]
    model = _model_from(doc["model"]) if doc["model"] is not None else None
    return AttackResult(doc["method"], doc["budget"], s_binary, a_prime, s_relaxed,
                        list(doc["loss_trace"]), dict(doc["metrics"]), list(doc["flags"]), model)


def save_result(obj, path, trace=None) -> Path:
    """Write a :class:`GcnModel` or :class:`AttackResult` as tagged JSON.

    ``trace`` optionally stores a training loss trace alongside a model.
    """
    if isinstance(obj, AttackResult):
        doc = _attack_doc(obj)
    elif isinstance(obj, GcnModel):
        doc = {"kind": "model", **_model_doc(obj),
               "trace": None if trace is None else [float(v) for v in trace]}
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"format": FORMAT_TAG, **doc}, indent=1) + "\n")
    return path


def load_result(path):
    """Inverse of :func:`save_result`.

    Returns an :class:`AttackResult`, or ``(GcnModel, trace)`` for model files.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg})") from exc
    if doc.get("format") != FORMAT_TAG:
        raise FormatError(f"{path}: expected format {FORMAT_TAG!r}, got {doc.get('format')!r}")
    try:
        if doc["kind"] == "attack":
            return _attack_from(doc)
        if doc["kind"] == "model":
            return _model_from(doc), doc.get("trace")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed document ({exc})") from exc
    raise FormatError(f"{path}: unknown document kind {doc.get('kind')!r}")


def perturbed_graph(graph: Graph, result: AttackResult) -> np.ndarray:
    """Re-apply a stored binary perturbation to ``graph``."""
    if result.a_prime.shape != graph.adjacency.shape:
        raise DataError("attack result and graph have different node counts")
    return apply_perturbation(graph.adjacency, result.s_binary)

