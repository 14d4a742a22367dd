import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptcate import ndnet
from ptcate.ndnet import AdamState, NetSpec


def test_linear_spec_has_input_dim_plus_one_params():
    for d in (1, 3, 7):
        spec = NetSpec(d)
        params = ndnet.net_init(spec, seed=5)
        assert spec.n_params == d + 1
        assert ndnet.flatten(params).size == d + 1


def test_param_count_three_hidden_layers():
    spec = NetSpec(1, (8, 8, 8))
    assert spec.n_params == 169
    assert ndnet.flatten(ndnet.net_init(spec, 0)).size == 169


def test_init_is_deterministic():
    spec = NetSpec(2, (4, 4))
    a = ndnet.flatten(ndnet.net_init(spec, 11))
    b = ndnet.flatten(ndnet.net_init(spec, 11))
    c = ndnet.flatten(ndnet.net_init(spec, 12))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("bad", [
    dict(input_dim=0),
    dict(input_dim=1, hidden_dims=(0,)),
    dict(input_dim=1, hidden_activation="sigmoid"),
    dict(input_dim=1, output_activation="relu"),
    dict(input_dim=1, output_activation="softplus_plus_a", a=0.0),
])
def test_invalid_spec_rejected(bad):
    with pytest.raises(ValueError):
        NetSpec(**bad)


def _zero(spec):
    return ndnet.zeros_like(ndnet.net_init(spec, 0))


def test_zero_network_outputs():
    X = np.linspace(-1, 1, 7)[:, None]
    assert np.all(ndnet.net_forward(_zero(NetSpec(1, (3,))), NetSpec(1, (3,)), X) == 0.0)
    sig = NetSpec(1, (3,), output_activation="sigmoid")
    assert np.allclose(ndnet.net_forward(_zero(sig), sig, X), 0.5)
    sp = NetSpec(1, (3,), hidden_activation="relu", output_activation="softplus_plus_a", a=0.1)
    out = ndnet.net_forward(_zero(sp), sp, X)
    assert np.allclose(out, np.log(2.0) + 0.1)
    assert out[0] == pytest.approx(0.7931, abs=1e-4)


def test_forward_rejects_wrong_width():
    spec = NetSpec(2)
    with pytest.raises(ValueError):
        ndnet.net_forward(ndnet.net_init(spec, 0), spec, np.zeros((3, 5)))


def test_softplus_output_stays_above_floor_for_large_negative_input():
    spec = NetSpec(1, output_activation="softplus_plus_a", a=0.3)
    params = ((np.array([[100.0]]), np.array([0.0])),)
    out = ndnet.net_forward(params, spec, np.array([[-50.0], [50.0]]))
    assert np.all(np.isfinite(out))
    assert out[0] >= 0.3 and out[1] == pytest.approx(5000.3)


def test_mse_gradient_by_hand():
    spec = NetSpec(1)
    params = ((np.array([[2.0]]), np.array([0.0])),)
    value, grads = ndnet.net_backward(params, spec, np.array([[1.0]]), ndnet.mse_loss(np.array([0.0])))
    assert value == pytest.approx(4.0)
    assert grads[0][0][0, 0] == pytest.approx(4.0)


def test_constant_loss_gives_zero_gradient():
    spec = NetSpec(2, (5,))
    params = ndnet.net_init(spec, 1)

    def const(out):
        return 3.0, np.zeros_like(out)

    _, grads = ndnet.net_backward(params, spec, np.ones((4, 2)), const)
    assert np.all(ndnet.flatten(grads) == 0.0)


def test_non_finite_loss_raises():
    spec = NetSpec(1)
    params = ndnet.net_init(spec, 0)
    with pytest.raises(ndnet.NonFiniteLossError):
        ndnet.net_backward(params, spec, np.ones((2, 1)), lambda out: (np.nan, np.zeros_like(out)))


def test_adam_zero_gradient_keeps_params_and_counts_step():
    spec = NetSpec(2)
    params = ndnet.net_init(spec, 0)
    state = AdamState.create(params, 0.01)
    state2, new = adam_step_n(state, params, ndnet.zeros_like(params), 1)
    assert np.array_equal(ndnet.flatten(new), ndnet.flatten(params))
    assert state2.t == 1


def adam_step_n(state, params, grads, n):
    for _ in range(n):
        state, params = ndnet.adam_step(state, params, grads)
    return state, params


def test_adam_first_and_second_step_sizes():
    params = ((np.array([[1.0]]), np.array([0.0])),)
    grads = ((np.array([[1.0]]), np.array([0.0])),)
    state = AdamState.create(params, learning_rate=0.01)
    _, p1 = adam_step_n(state, params, grads, 1)
    _, p2 = adam_step_n(state, params, grads, 2)
    assert 1.0 - p1[0][0][0, 0] == pytest.approx(0.01, abs=1e-6)
    assert 1.0 - p2[0][0][0, 0] == pytest.approx(0.02, abs=1e-6)


def test_linear_mse_gradcheck_is_tight():
    rng = np.random.default_rng(0)
    spec = NetSpec(3)
    X = rng.normal(size=(32, 3))
    rep = ndnet.finite_diff_check(ndnet.net_init(spec, 2), spec, X, ndnet.mse_loss(rng.normal(size=32)))
    assert rep.max_relative_error < 1e-6
    assert rep.n_params == 4


@pytest.mark.parametrize("hidden_act", ["tanh", "relu"])
@pytest.mark.parametrize("out_act", ["identity", "tanh", "sigmoid", "softplus_plus_a"])
def test_backward_matches_finite_differences(hidden_act, out_act):
    rng = np.random.default_rng(3)
    spec = NetSpec(2, (6, 5), hidden_act, out_act, a=0.2 if out_act == "softplus_plus_a" else 0.0)
    X = rng.uniform(-1, 1, size=(32, 2))
    rep = ndnet.finite_diff_check(ndnet.net_init(spec, 4), spec, X, ndnet.mse_loss(rng.normal(size=32)),
                                  weight_decay=0.01)
    assert rep.max_relative_error < 1e-4


def test_bce_gradcheck():
    rng = np.random.default_rng(8)
    spec = NetSpec(2, (8,), output_activation="sigmoid")
    X = rng.normal(size=(32, 2))
    labels = (rng.uniform(size=32) < 0.4).astype(float)
    rep = ndnet.finite_diff_check(ndnet.net_init(spec, 1), spec, X, ndnet.bce_loss(labels))
    assert rep.max_relative_error < 1e-4


def test_finite_diff_check_detects_a_wrong_gradient():
    spec = NetSpec(1)
    params = ndnet.net_init(spec, 0)

    def wrong(out):
        return float(np.sum(out**2)), 3.0 * out

    X = np.array([[0.5], [1.0]])
    assert ndnet.finite_diff_check(params, spec, X, wrong).max_relative_error > 0.1


def test_train_fits_a_line():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(200, 1))
    y = 3.0 * X[:, 0] - 0.5
    spec = NetSpec(1)
    res = ndnet.train(ndnet.net_init(spec, 0), spec, X, lambda idx: ndnet.mse_loss(y[idx]), 1500,
                      learning_rate=0.05)
    W, b = res.params[0]
    assert W[0, 0] == pytest.approx(3.0, abs=1e-3)
    assert b[0] == pytest.approx(-0.5, abs=1e-3)
    assert res.losses[-1] < res.losses[0]


@pytest.mark.parametrize("batch_size", [None, 16])
def test_train_resumes_exactly(batch_size):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    spec = NetSpec(2, (4,))
    p0 = ndnet.net_init(spec, 3)
    make = lambda idx: ndnet.mse_loss(y[idx])  # noqa: E731
    once = ndnet.train(p0, spec, X, make, 30, 0.01, batch_size=batch_size, seed=9)
    first = ndnet.train(p0, spec, X, make, 12, 0.01, batch_size=batch_size, seed=9)
    second = ndnet.train(first.params, spec, X, make, 18, 0.01, batch_size=batch_size,
                         state=first.state, rng=first.rng)
    assert np.array_equal(ndnet.flatten(once.params), ndnet.flatten(second.params))


def test_params_json_round_trip():
    spec = NetSpec(3, (2, 4))
    params = ndnet.net_init(spec, 7)
    back = ndnet.params_from_json(ndnet.params_to_json(params))
    assert np.array_equal(ndnet.flatten(back), ndnet.flatten(params))
    assert NetSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=25, deadline=None)
@given(
    dims=st.lists(st.integers(1, 5), min_size=0, max_size=3),
    d=st.integers(1, 4),
    seed=st.integers(0, 10_000),
)
def test_flatten_unflatten_inverse(dims, d, seed):
    spec = NetSpec(d, tuple(dims))
    params = ndnet.net_init(spec, seed)
    vec = ndnet.flatten(params)
    assert vec.size == spec.n_params
    assert np.array_equal(ndnet.flatten(ndnet.unflatten(vec, spec)), vec)
