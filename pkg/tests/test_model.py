import math

import numpy as np
import pytest

from gradcheck import check_fixture, random_fixture
from oracles import model_forward_oracle
from tgf.autodiff import ParameterStore, Tape
from tgf.errors import EmptySequence, SchemaViolation, ShapeError
from tgf.graph import identity_graph, normalized_adjacency
from tgf.model import (
    A3TGCN, ModelConfig, attention_pool, attention_weights, gcn2, init_params, parameter_shapes,
    tgcn_cell_step,
)

PATH3 = normalized_adjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))


def const(tape, x):
    return tape.constant(np.asarray(x, dtype=float))


def test_parameter_shapes_and_gate_widths():
    cfg = ModelConfig(n_nodes=79, seq_len=5)
    shapes = parameter_shapes(cfg)
    assert shapes["cell1.gcn1.weight"] == (8, 16)
    assert shapes["cell1.lin_u.weight"] == (32, 16)
    assert shapes["cell2.lin_c.weight"] == (48, 16)
    assert shapes["head.weight"] == (16, 1)
    assert ModelConfig(3, 2, cell2_gate_input="conv2+h").gate_width(2) == 32
    assert ModelConfig(3, 2, horizon=8, target="path").n_outputs == 8
    with pytest.raises(SchemaViolation):
        ModelConfig(3, 0)


def test_init_is_seeded_glorot_with_zero_bias():
    a, b = init_params(ModelConfig(4, 3, seed=7)), init_params(ModelConfig(4, 3, seed=7))
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != init_params(ModelConfig(4, 3, seed=8)).content_hash()
    assert not a["head.bias"].any() and a["attention.score"].any()
    limit = math.sqrt(6 / (48 + 16))
    assert np.abs(a["cell2.lin_u.weight"]).max() <= limit


def test_gcn_identity_graph_passes_nonnegative_input_through():
    tape = Tape()
    x = np.abs(np.random.default_rng(0).normal(size=(4, 8)))
    pad = np.eye(8, 16)
    l1, l2 = gcn2(const(tape, x), np.eye(4), const(tape, pad), const(tape, np.eye(16)))
    np.testing.assert_array_equal(l1.value, np.hstack([x, np.zeros((4, 8))]))
    np.testing.assert_array_equal(l2.value, l1.value)


def test_gcn_path_graph_matches_dense_oracle():
    rng = np.random.default_rng(1)
    x, w1, w2 = rng.normal(size=(3, 8)), rng.normal(size=(8, 16)), rng.normal(size=(16, 16))
    tape = Tape()
    l1, l2 = gcn2(const(tape, x), PATH3, const(tape, w1), const(tape, w2))
    want1 = np.maximum(PATH3 @ x @ w1, 0)
    np.testing.assert_allclose(l1.value, want1, atol=1e-12)
    np.testing.assert_allclose(l2.value, np.maximum(PATH3 @ want1 @ w2, 0), atol=1e-12)
    with pytest.raises(ShapeError):
        gcn2(const(tape, np.ones((4, 8))), PATH3, const(tape, w1), const(tape, w2))


def cell_setup(seed=0, n=3):
    cfg = ModelConfig(n_nodes=n, seq_len=2, seed=seed)
    store = init_params(cfg)
    rng = np.random.default_rng(seed)
    return cfg, store, rng.normal(size=(n, 8)), rng.uniform(-1, 1, size=(n, 16))


def test_cell_step_matches_scalar_gate_equations():
    cfg, store, x, h = cell_setup()
    tape = Tape()
    params = tape.params(store)
    h_next, _ = tgcn_cell_step(1, const(tape, x), const(tape, h), PATH3, params, cfg)
    conv = np.maximum(PATH3 @ np.maximum(PATH3 @ x @ store["cell1.gcn1.weight"], 0) @ store["cell1.gcn2.weight"], 0)
    for i in range(3):
        z = list(conv[i]) + list(h[i])
        for j in range(16):
            def gate(name, inp):
                w, b = store[f"cell1.{name}.weight"], store[f"cell1.{name}.bias"]
                return sum(inp[k] * w[k, j] for k in range(len(inp))) + b[0, j]
            u = 1 / (1 + math.exp(-gate("lin_u", z)))
            r = [1 / (1 + math.exp(-sum(z[k] * store["cell1.lin_r.weight"][k, m] for k in range(32))
                                   - store["cell1.lin_r.bias"][0, m])) for m in range(16)]
            c = math.tanh(gate("lin_c", list(conv[i]) + [r[m] * h[i, m] for m in range(16)]))
            assert abs(h_next.value[i, j] - (u * h[i, j] + (1 - u) * c)) < 1e-10


def test_update_gate_saturation():
    cfg, store, x, h = cell_setup()
    store.params["cell1.lin_u.bias"][:] = 60.0
    tape = Tape()
    carried, _ = tgcn_cell_step(1, const(tape, x), const(tape, h), PATH3, tape.params(store), cfg)
    np.testing.assert_allclose(carried.value, h, atol=1e-12)
    store.params["cell1.lin_u.bias"][:] = -60.0
    tape = Tape()
    params = tape.params(store)
    zero = np.zeros_like(h)
    pure, conv2 = tgcn_cell_step(1, const(tape, x), const(tape, zero), PATH3, params, cfg)
    c = np.tanh(np.hstack([conv2.value, zero]) @ store["cell1.lin_c.weight"] + store["cell1.lin_c.bias"])
    np.testing.assert_allclose(pure.value, c, atol=1e-12)


def test_gru_convexity_and_bounded_state():
    cfg, store, x, h = cell_setup(seed=4)
    tape = Tape()
    params = tape.params(store)
    for cell, inp in ((1, x), (2, np.tanh(np.random.default_rng(2).normal(size=(3, 16))))):
        h_next, _ = tgcn_cell_step(cell, const(tape, inp), const(tape, h), PATH3, params, cfg)
        assert np.all(np.abs(h_next.value) <= 1.0)


def test_attention_pool_cases():
    rng = np.random.default_rng(3)
    store = init_params(ModelConfig(3, 3))
    tape = Tape()
    params = tape.params(store)
    h1 = const(tape, rng.normal(size=(3, 16)))
    np.testing.assert_array_equal(attention_pool([h1], params).value, h1.value)
    np.testing.assert_allclose(attention_pool([h1, h1, h1], params).value, h1.value, atol=1e-15)
    states = [const(tape, rng.normal(size=(3, 16))) for _ in range(3)]
    alpha = attention_weights(states, params).value  # T x rows
    assert np.all(alpha > 0)
    np.testing.assert_allclose(alpha.sum(axis=0), 1.0, atol=1e-12)
    w, b, v = store["attention.proj.weight"], store["attention.proj.bias"], store["attention.score"]
    ctx = attention_pool(states, params).value
    for i in range(3):
        scores = [float(np.tanh(s.value[i] @ w + b[0]) @ v[:, 0]) for s in states]
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        want = sum(e[t] / sum(e) * states[t].value[i] for t in range(3))
        np.testing.assert_allclose(ctx[i], want, atol=1e-12)
    with pytest.raises(EmptySequence):
        attention_pool([], params)


def test_forward_shape_zero_weights_and_oracle():
    cfg = ModelConfig(n_nodes=79, seq_len=2)
    model = A3TGCN(cfg, identity_graph(79))
    x = np.random.default_rng(0).normal(size=(2, 79, 8))
    assert model.predict(x).shape == (79, 1)
    zero = ParameterStore()
    for k, v in model.store.items():
        zero.add(k, np.zeros_like(v))
    assert not A3TGCN(cfg, identity_graph(79), zero).predict(np.zeros((2, 79, 8))).any()
    small = ModelConfig(n_nodes=2, seq_len=2, seed=5)
    a_hat = normalized_adjacency(np.array([[0, 1], [1, 0]]))
    m = A3TGCN(small, a_hat)
    xs = np.random.default_rng(1).normal(size=(1, 2, 2, 8))
    want = model_forward_oracle({k: v[None] for k, v in m.store.items()}, xs, a_hat)[0]
    np.testing.assert_allclose(m.forward(Tape(), xs).value, want, atol=1e-10)
    with pytest.raises(ShapeError):
        m.predict(np.zeros((3, 2, 8)))


def test_batched_forward_equals_per_sample():
    cfg = ModelConfig(n_nodes=3, seq_len=4, horizon=2, target="path", seed=2)
    model = A3TGCN(cfg, PATH3)
    x = np.random.default_rng(2).normal(size=(5, 4, 3, 8))
    batched = model.predict(x)
    for b in range(5):
        np.testing.assert_allclose(batched[b], model.predict(x[b]), atol=1e-14)


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    adj = np.triu((rng.random((5, 5)) < 0.5).astype(int), 1)
    adj = adj + adj.T
    perm = rng.permutation(5)
    cfg = ModelConfig(n_nodes=5, seq_len=3, seed=1)
    model = A3TGCN(cfg, normalized_adjacency(adj))
    x = rng.normal(size=(3, 5, 8))
    out = model.predict(x)
    permuted = A3TGCN(cfg, normalized_adjacency(adj[np.ix_(perm, perm)]), model.store)
    np.testing.assert_allclose(permuted.predict(x[:, perm]), out[perm], atol=1e-12)


def test_isolated_node_is_bitwise_local():
    adj = np.array([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]])
    model = A3TGCN(ModelConfig(n_nodes=4, seq_len=3, seed=3), normalized_adjacency(adj))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4, 8))
    base = model.predict(x)[3]
    for other in range(3):
        x2 = x.copy()
        x2[:, other] += rng.normal(size=(3, 8)) * 10
        assert model.predict(x2)[3].tobytes() == base.tobytes()


@pytest.mark.parametrize("seed", [100, 101, 102])
def test_full_model_gradient_check(seed):
    worst, loss_gap = check_fixture(random_fixture(seed))
    assert worst < 1e-4
    assert loss_gap < 1e-12


def test_describe_lists_layers():
    text = A3TGCN(ModelConfig(n_nodes=79, seq_len=5), identity_graph(79)).describe()
    assert "Linear(in_features=48, out_features=16, bias=True)" in text
    assert "GCNConv(8, 16)" in text and "Linear(in_features=16, out_features=1, bias=True)" in text


def test_loss_is_mse():
    cfg = ModelConfig(n_nodes=2, seq_len=1)
    model = A3TGCN(cfg, np.eye(2))
    x = np.ones((1, 2, 8))
    y = np.array([[[0.3], [0.7]]])
    pred = model.predict(x)
    assert float(model.loss(Tape(), x, y).value[0, 0]) == pytest.approx(float(((pred - y[0]) ** 2).mean()))
