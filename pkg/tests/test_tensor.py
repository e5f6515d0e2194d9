import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenediff import tensor as T
from scenediff.encoder import init_attention, multi_head_attention
from scenediff.errors import ConfigError, NumericError, ShapeError, StateError, VersionError

finite = st.floats(-1e3, 1e3, allow_nan=False)


def check(f, shapes, seed, tol=1e-5, positive=False):
    rng = np.random.default_rng(seed)
    params = {}
    for i, s in enumerate(shapes):
        x = rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s)
        params[f"p{i}"] = T.Tensor(x, requires_grad=True)
    err = T.grad_check(lambda p: f(*p.values()), params)
    assert err < tol, err


# ------------------------------------------------------------------- linear


def test_linear_examples():
    out = T.linear(T.Tensor([1.0, 2.0]), T.Tensor(np.eye(2)), T.Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])
    out = T.linear(T.Tensor([1.0, 1.0]), T.Tensor([[1.0], [1.0]]), T.Tensor([0.5]))
    np.testing.assert_array_equal(out.data, [2.5])


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3,\).*\(2, 2\)|\(2, 2\).*\(3,\)"):
        T.linear(T.Tensor(np.ones(3)), T.Tensor(np.ones((2, 2))))


def test_linear_grad_wrt_W():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4))
    b = T.Tensor(rng.standard_normal(2))
    W = T.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    assert T.grad_check(lambda p: T.sum(T.linear(x, p["W"], b)), {"W": W}) < 1e-6


def test_linear_rows_bitwise_independent_of_batch_position(rng):
    x = rng.standard_normal((7, 5))
    W = rng.standard_normal((5, 3))
    full = T.linear(x, W).data
    for i in range(7):
        assert np.array_equal(full[i], T.linear(x[i:i + 1], W).data[0])


# --------------------------------------------------------------- layer norm


def test_layer_norm_examples():
    np.testing.assert_array_equal(T.layer_norm(T.Tensor([5.0, 5.0, 5.0]), np.ones(3), np.zeros(3)).data, 0.0)
    out = T.layer_norm(T.Tensor([-1.0, 1.0]), np.ones(2), np.zeros(2), eps=1e-5).data
    np.testing.assert_allclose(out, np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5), atol=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_norm_gradcheck(seed):
    check(lambda x, g, b: T.sum(T.layer_norm(x, g, b) * np.arange(12.0).reshape(3, 4)), [(3, 4), (4,), (4,)], seed)


# ---------------------------------------------------------------- softmax


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(T.Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(T.Tensor([1000.0, 0.0])).data, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(T.softmax(T.Tensor([1.0, 2.0, 3.0])).data, [0.09003, 0.24473, 0.66524], atol=1e-5)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_sums_to_one(x):
    s = T.softmax(T.Tensor(x)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


# -------------------------------------------------------------- attention


def test_attention_single_key_identity():
    store = T.ParameterStore(0)
    init_attention(store, "a", 4)
    for n in ("q", "k", "v", "o"):
        store[f"a.{n}.W"].data = np.eye(4)
        store[f"a.{n}.b"].data = np.zeros(4)
    q = np.random.default_rng(0).standard_normal((3, 4))
    kv = np.random.default_rng(1).standard_normal((1, 4))
    out = multi_head_attention(q, kv, 1, store, "a").data
    np.testing.assert_allclose(out, np.repeat(kv, 3, axis=0), atol=1e-14)


def test_attention_uniform_logits_average_values():
    q = np.zeros((2, 1, 3))
    k = np.random.default_rng(0).standard_normal((2, 5, 3))
    v = np.random.default_rng(1).standard_normal((2, 5, 3))
    out = T.attention(T.Tensor(q), T.Tensor(k), T.Tensor(v)).data
    np.testing.assert_allclose(out[:, 0], v.mean(axis=1), atol=1e-14)


def test_attention_heads_must_divide():
    store = T.ParameterStore(0)
    init_attention(store, "a", 6)
    with pytest.raises(ConfigError):
        multi_head_attention(np.ones((2, 6)), np.ones((2, 6)), 4, store, "a")


def test_attention_gradcheck_wrt_query():
    store = T.ParameterStore(3)
    init_attention(store, "a", 4)
    rng = np.random.default_rng(0)
    kv = rng.standard_normal((5, 4))
    w = rng.standard_normal((3, 4))
    q = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    err = T.grad_check(lambda p: T.sum(multi_head_attention(p["q"], kv, 2, store, "a") * w), {"q": q})
    assert err < 1e-5


# ------------------------------------------------------------ primitives


UNARY = {
    "exp": T.exp, "tanh": T.tanh, "sigmoid": T.sigmoid, "silu": T.silu, "relu": T.relu,
    "neg": T.neg, "square": lambda a: T.power(a, 2.0), "softmax": T.softmax,
}
POSITIVE = {"log": T.log, "sqrt": T.sqrt}


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradcheck(name, seed):
    w = np.random.default_rng(99).standard_normal((3, 4))
    check(lambda x: T.sum(UNARY[name](x) * w), [(3, 4)], seed)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name", sorted(POSITIVE))
def test_positive_domain_gradcheck(name, seed):
    check(lambda x: T.sum(POSITIVE[name](x)), [(3, 4)], seed, positive=True)


BINARY = {
    "add": T.add, "sub": T.sub, "mul": T.mul, "matmul": T.matmul,
    "div": T.div,
}


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradcheck(name, seed):
    shapes = [(3, 4), (4, 2)] if name == "matmul" else [(3, 4), (4,)]
    check(lambda a, b: T.sum(T.power(BINARY[name](a, b), 2.0)), shapes, seed, positive=name == "div")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_structural_ops_gradcheck(seed):
    def f(a, b):
        c = T.concat([a, b], axis=1)  # [4, 6]
        c = T.transpose(T.reshape(c, (6, 4)))
        c = T.swapaxes(T.stack([c, c * 2.0]), 1, 2)  # [2, 6, 4]
        z = T.cumsum(c, axis=1)[:, ::2, :]
        return T.sum(T.mean(z, axis=0) ** 2) + T.sum(T.norm(a, axis=-1)) + T.sum(T.getitem(c[0], [1, 1, 3]))

    check(f, [(4, 2), (4, 4)], seed)


def test_norm_subgradient_at_zero():
    x = T.Tensor(np.zeros((2, 3)), requires_grad=True)
    T.sum(T.norm(x, axis=-1)).backward()
    np.testing.assert_array_equal(x.grad, 0.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_huber_gradcheck(seed):
    check(lambda r: T.huber(r * 2.0, 1.0), [(10,)], seed)


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (2, 4), elements=finite))
def test_algebraic_identities_exact(a, b):
    A, B = T.Tensor(a), T.Tensor(b)
    np.testing.assert_array_equal(T.concat([A, B], axis=0).data, np.concatenate([a, b]))
    np.testing.assert_array_equal(T.transpose(T.transpose(A)).data, a)
    np.testing.assert_array_equal(T.relu(A).data, np.maximum(a, 0.0))
    np.testing.assert_array_equal(T.mean(A, axis=0).data, a.mean(axis=0))
    np.testing.assert_array_equal(T.matmul(A, np.eye(4)).data, a)


@given(arrays(np.float64, (3, 4), elements=st.integers(-1000, 1000).map(float)),
       arrays(np.float64, (2, 4), elements=st.integers(-1000, 1000).map(float)))
def test_sum_concat_identity_exact(a, b):
    # integer-valued floats keep every partial sum exact, so the identity holds bitwise
    assert T.sum(T.concat([T.Tensor(a), T.Tensor(b)], axis=0)).data == a.sum() + b.sum()


def test_broadcast_gradient_reduces_to_operand_shape():
    a = T.Tensor(np.ones((3, 4)), requires_grad=True)
    b = T.Tensor(np.ones(4), requires_grad=True)
    T.sum(a * b).backward()
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, 3.0)


def test_no_grad_records_nothing():
    a = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        out = T.exp(a)
    assert not out.requires_grad and out._parents == ()


def test_deep_graph_backward_is_iterative():
    x = T.Tensor(np.ones(1), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    T.sum(y).backward()
    assert x.grad[0] == 1.0


# ------------------------------------------------------------ grad check


def test_grad_check_linear_function():
    w = T.Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True)
    assert T.grad_check(lambda p: T.sum(p["w"]), {"w": w}) < 1e-9


def test_grad_check_square():
    w = T.Tensor([1.0, 2.0], requires_grad=True)
    r = T.grad_check(lambda p: T.sum(p["w"] * p["w"]), {"w": w}, eps=1e-5, detail=True)
    assert r.max_rel_error < 1e-7 and r.n_coords == 2


def test_grad_check_rejects_nonfinite():
    w = T.Tensor([0.0], requires_grad=True)
    with pytest.raises(NumericError):
        T.grad_check(lambda p: T.sum(T.log(p["w"])), {"w": w})


def test_grad_check_detects_wrong_backward(monkeypatch):
    def bad_tanh(a):
        out = np.tanh(a.data)
        return T._node(out, (a,), lambda g: (g,), "bad_tanh")

    monkeypatch.setattr(T, "tanh", bad_tanh)
    w = T.Tensor(np.full(3, 1.5), requires_grad=True)
    assert T.grad_check(lambda p: T.sum(T.tanh(p["w"])), {"w": w}) > 1e-2


# ------------------------------------------------------------------ adam


def test_adam_zero_grads_leave_params():
    store = T.ParameterStore(0)
    store.linear("l", 3, 2)
    before = store.state_dict()
    store.zero_grad()
    T.adam_step(store, T.AdamState())
    for k, v in store.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_adam_first_step_hand_value():
    store = T.ParameterStore(0)
    store.add("w", [0.0])
    store["w"].grad = np.array([1.0])
    T.adam_step(store, T.AdamState(lr=0.1))
    # m_hat = 1, v_hat = 1 -> update lr * 1 / (1 + eps)
    np.testing.assert_allclose(store["w"].data, [-0.1 / (1 + 1e-8)], rtol=1e-12)
    np.testing.assert_array_equal(store["w"].grad, 0.0)


def test_adam_converges_on_quadratic():
    store = T.ParameterStore(0)
    store.add("w", [0.0])
    state = T.AdamState(lr=0.1)
    for _ in range(100):
        w = store["w"]
        ((w - 3.0) * (w - 3.0)).backward()
        T.adam_step(store, state)
    assert abs(store["w"].data[0] - 3.0) < 0.1


def test_adam_missing_grad_names_parameter():
    store = T.ParameterStore(0)
    store.add("alpha", [1.0])
    with pytest.raises(StateError, match="alpha"):
        T.adam_step(store, T.AdamState())


def test_adam_deterministic():
    def run():
        store = T.ParameterStore(7)
        store.linear("l", 3, 3)
        state = T.AdamState()
        x = np.random.default_rng(0).standard_normal((4, 3))
        for _ in range(5):
            T.sum(T.tanh(T.linear(x, store["l.W"], store["l.b"]))).backward()
            T.adam_step(store, state)
        return store.state_dict()

    a, b = run(), run()
    for k in a:
        assert np.array_equal(a[k], b[k])


# ------------------------------------------------------------ store / io


def test_store_rejects_duplicates_and_inits_uniformly():
    store = T.ParameterStore(0)
    store.linear("l", 16, 8)
    assert np.all(np.abs(store["l.W"].data) <= 0.25)
    with pytest.raises(ConfigError):
        store.add("l.W", [0.0])
    assert store.num_parameters() == 16 * 8 + 8


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    store = T.ParameterStore(0)
    store.add("a", rng.standard_normal((3, 2)) * 1e-300)
    store.add("b", np.array([np.pi, 1 / 3, -0.0, 5e-324]))
    path = tmp_path / "ck.json"
    T.save_checkpoint(path, store, note="x")
    state, meta = T.load_checkpoint(path)
    assert meta == {"note": "x"}
    for k, v in store.state_dict().items():
        assert state[k].tobytes() == v.tobytes()


def test_checkpoint_version_error(tmp_path):
    path = tmp_path / "ck.json"
    path.write_text(json.dumps({"checkpoint_version": 2, "parameters": {}}))
    with pytest.raises(VersionError):
        T.load_checkpoint(path)


@settings(max_examples=30)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_checkpoint_float_round_trip_property(tmp_path_factory, x):
    store = T.ParameterStore(0)
    store.add("p", x)
    path = tmp_path_factory.mktemp("ck") / "p.json"
    T.save_checkpoint(path, store)
    state, _ = T.load_checkpoint(path)
    assert state["p"].tobytes() == x.tobytes()
