import numpy as np
import pytest

from topoguard.data_io import SbmSpec, generate_sbm
from topoguard.errors import NumericError, ShapeError
from topoguard.gcn import (GcnModel, forward, init_model, loss_and_grads, misclassification_rate,
                           predict, train_natural)
from topoguard.graph import Graph, apply_perturbation, normalize_adjacency, num_pairs
from topoguard.losses import AttackLossKind

from conftest import random_graph


def _numeric_grads(model, s, graph, nodes, kind, h=1e-5):
    def f(m, v):
        return loss_and_grads(m, v, graph, nodes, kind, need_s_grad=False)[0]

    g_s = np.zeros_like(s)
    for k in range(s.size):
        up, down = s.copy(), s.copy()
        up[k] += h
        down[k] -= h
        g_s[k] = (f(model, up) - f(model, down)) / (2 * h)
    g_w = []
    for name in ("w0", "w1"):
        w = getattr(model, name)
        g = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            up, down = np.array(w), np.array(w)
            up[idx] += h
            down[idx] -= h
            other = {"w0": model.w0, "w1": model.w1}
            g[idx] = (f(GcnModel(**{**other, name: up}), s)
                      - f(GcnModel(**{**other, name: down}), s)) / (2 * h)
        g_w.append(g)
    return g_s, g_w


@pytest.mark.parametrize("kind", [AttackLossKind("ce"), AttackLossKind("cw", 0.5)])
@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    graph = random_graph(7, rng, features=3)
    model = init_model(3, 4, 3, seed)
    s = rng.uniform(0.1, 0.9, num_pairs(7))
    nodes = np.array([1, 3, 4, 6])
    _, grad_w, grad_s = loss_and_grads(model, s, graph, nodes, kind)
    num_s, (num_w0, num_w1) = _numeric_grads(model, s, graph, nodes, kind)
    np.testing.assert_allclose(grad_s, num_s, rtol=1e-4, atol=1e-8)
    np.testing.assert_allclose(grad_w.w0, num_w0, rtol=1e-4, atol=1e-8)
    np.testing.assert_allclose(grad_w.w1, num_w1, rtol=1e-4, atol=1e-8)


def test_forward_by_hand(path3):
    w0 = np.eye(3)[:, :2]
    w1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    model = GcnModel(w0, w1)
    a_t = normalize_adjacency(path3.adjacency)
    hidden = np.maximum(a_t @ path3.features @ w0, 0)
    logits = a_t @ hidden @ w1
    pred = predict(model, path3)
    np.testing.assert_allclose(pred.logits, logits)
    e = np.exp(logits)
    np.testing.assert_allclose(pred.probabilities, e / e.sum(1, keepdims=True))
    np.testing.assert_allclose(pred.probabilities.sum(1), 1.0)


def test_relu_zeroes_negative_hidden_units(path3):
    model = GcnModel(-np.ones((3, 2)), np.ones((2, 2)))
    np.testing.assert_allclose(predict(model, path3).logits, 0.0)


def test_permutation_equivariance(rng):
    graph = random_graph(9, rng)
    model = init_model(5, 6, 3, 1)
    perm = rng.permutation(9)
    out = predict(model, graph).probabilities
    a_p = graph.adjacency[np.ix_(perm, perm)]
    out_p = forward(model, normalize_adjacency(a_p), graph.features[perm]).probabilities
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_determinism():
    graph = generate_sbm(SbmSpec(seed=3))
    a = train_natural(graph, epochs=20, seed=5)
    b = train_natural(graph, epochs=20, seed=5)
    assert np.array_equal(a.w0, b.w0) and np.array_equal(a.w1, b.w1)
    c = train_natural(graph, epochs=20, seed=6)
    assert not np.array_equal(a.w0, c.w0)


def test_init_shapes_and_scale():
    m = init_model(10, 16, 4, seed=0)
    assert m.w0.shape == (10, 16) and m.w1.shape == (16, 4)
    assert np.abs(m.w0).max() <= np.sqrt(6 / 26)


def test_model_validation():
    with pytest.raises(ShapeError):
        GcnModel(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(NumericError):
        GcnModel(np.full((2, 2), np.inf), np.zeros((2, 2)))


def test_forward_overflow_is_reported(path3):
    model = GcnModel(np.full((3, 2), 1e200), np.full((2, 2), 1e200))
    with pytest.raises(NumericError):
        predict(model, path3)


def test_training_fits_sbm():
    rates, monotone = [], []
    for seed in range(5):
        graph = generate_sbm(SbmSpec(seed=seed))
        trace = []
        model = train_natural(graph, seed=seed, trace=trace)
        rates.append(misclassification_rate(model, graph))
        monotone.append(np.mean(np.diff(trace) <= 0))
    assert np.mean(rates) < 0.15
    assert np.mean(monotone) >= 0.95


def test_inputs_not_mutated(rng):
    graph = random_graph(6, rng)
    model = init_model(5, 3, 3, 0)
    s = rng.random(num_pairs(6))
    s_copy = s.copy()
    loss_and_grads(model, s, graph, graph.test_nodes)
    assert np.array_equal(s, s_copy)


def test_misclassification_against_reference(path3):
    model = init_model(3, 2, 2, 0)
    pred = predict(model, path3).labels
    assert misclassification_rate(model, path3, node_set=[0, 1, 2], reference_labels=pred) == 0
    flipped = 1 - pred
    assert misclassification_rate(model, path3, node_set=[0, 1, 2], reference_labels=flipped) == 1
    a_prime = apply_perturbation(path3.adjacency, np.ones(3))
    assert 0 <= misclassification_rate(model, path3, a_prime) <= 1


def test_isolated_graph_forward():
    g = Graph(np.zeros((2, 2)), np.eye(2), [0, 1], [True, False], [False, True])
    assert predict(init_model(2, 2, 2, 0), g).probabilities.shape == (2, 2)


def test_zero_first_layer_gives_uniform_output():
    g = Graph(np.zeros((1, 1)), [[1.0]], [0], [True], [False], num_classes=3)
    model = GcnModel(np.zeros((1, 4)), np.arange(12.0).reshape(4, 3))
    np.testing.assert_allclose(predict(model, g).probabilities, [[1 / 3] * 3])


def test_single_node_identity_by_hand():
    model = GcnModel([[2.0, -1.0]], [[1.0, 0.5], [3.0, 1.0]])
    pred = forward(model, np.eye(1), [[1.5]])
    # hidden = relu([3, -1.5]) = [3, 0]; logits = [3, 1.5]
    np.testing.assert_allclose(pred.logits, [[3.0, 1.5]])


def test_far_pairs_have_negligible_gradient():
    # two components: a path 0-1-2 holding the target, and a far path 3-4-5-6
    adj = np.zeros((7, 7))
    for i, j in [(0, 1), (1, 2), (3, 4), (4, 5), (5, 6)]:
        adj[i, j] = adj[j, i] = 1
    rng = np.random.default_rng(0)
    g = Graph(adj, rng.normal(size=(7, 3)), [0, 1, 0, 1, 0, 1, 0], [1, 1, 0, 0, 0, 0, 0],
              [0, 0, 1, 1, 1, 1, 1])
    model = init_model(3, 4, 2, 0)
    _, _, grad_s = loss_and_grads(model, np.zeros(num_pairs(7)), g, [0])
    from topoguard.graph import sym_index
    assert grad_s[sym_index(4, 6, 7)] == pytest.approx(0.0, abs=1e-12)
    assert grad_s[sym_index(5, 6, 7)] == pytest.approx(0.0, abs=1e-12)
    assert abs(grad_s[sym_index(0, 2, 7)]) > 1e-6


def test_untrained_model_is_near_chance():
    rates = [misclassification_rate(train_natural(generate_sbm(SbmSpec(seed=s)), epochs=0,
                                                  seed=s), generate_sbm(SbmSpec(seed=s)))
             for s in range(10)]
    assert 0.2 <= np.mean(rates) <= 0.8
