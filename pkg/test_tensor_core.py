"""Tests for the autodiff tensor, its op catalog and the Adam optimizer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msct.errors import ConfigError, NumericalError, ShapeError, UsageError
from msct.tensor import Adam, AdamState, Graph, Tensor, adam_step, backward, no_grad, parameter, zero_grad
from msct.tensor import ops
from msct.tensor.gradcheck import gradcheck, max_relative_error, numerical_gradient

finite = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False)


def test_softmax_of_equal_logits_is_uniform():
    out = ops.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


@given(arrays(np.float64, (3, 4), elements=finite))
def test_softmax_rows_sum_to_one(values):
    out = ops.softmax(Tensor(values), axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(3))
    assert np.all(out.data >= 0)


def test_activations_at_reference_points():
    assert ops.elu(Tensor([0.0])).data[0] == 0.0
    assert ops.relu(Tensor([-1.0])).data[0] == 0.0
    assert ops.elu(Tensor([-1.0])).data[0] == pytest.approx(np.exp(-1.0) - 1.0)
    assert ops.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4))
    expected = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            expected[i, j] = sum(a[i, k] * b[k, j] for k in range(3))
    np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, expected)


def test_matmul_rejects_mismatched_inner_dimension():
    with pytest.raises(ShapeError) as err:
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert err.value.op == "matmul"


def test_layer_norm_reference_values():
    gain, bias = Tensor(np.ones(2)), Tensor(np.zeros(2))
    out = ops.layer_norm(Tensor([[1.0, 3.0]]), gain, bias)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    flat = ops.layer_norm(Tensor([[1.0, 1.0, 1.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_allclose(flat.data, np.zeros((1, 3)))

    shifted = ops.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.zeros(2)), Tensor([0.5, -2.0]))
    np.testing.assert_allclose(shifted.data, [[0.5, -2.0]])


def test_sum_gradient_is_all_ones():
    x = parameter([1.0, 2.0, 3.0])
    grads = backward(ops.sum(x), [x])
    np.testing.assert_allclose(grads[0], [1.0, 1.0, 1.0])


def test_square_gradient_at_three():
    x = parameter(3.0)
    (grad,) = backward(ops.square(x), [x])
    assert float(grad) == pytest.approx(6.0)


def test_untouched_parameter_gets_zero_gradient():
    x, unused = parameter([1.0, 2.0]), parameter(np.ones((2, 2)))
    grads = backward(ops.sum(ops.mul(x, x)), [x, unused])
    np.testing.assert_allclose(grads[1], np.zeros((2, 2)))


def test_backward_requires_scalar_loss():
    x = parameter([1.0, 2.0])
    with pytest.raises(UsageError):
        backward(ops.mul(x, 2.0), [x])


def test_gradients_accumulate_until_zeroed():
    x = parameter([1.0])
    backward(ops.sum(ops.mul(x, 2.0)), [x])
    backward(ops.sum(ops.mul(x, 2.0)), [x])
    np.testing.assert_allclose(x.grad, [4.0])
    zero_grad([x])
    assert x.grad is None


def test_shared_subexpression_is_counted_once_per_use():
    x = parameter(2.0)
    y = ops.mul(x, x)
    (grad,) = backward(ops.add(y, y), [x])
    assert float(grad) == pytest.approx(8.0)


def test_non_finite_forward_raises():
    with pytest.raises(NumericalError):
        ops.log(Tensor([0.0]))


def test_no_grad_records_nothing():
    x = parameter([1.0, 2.0])
    with no_grad():
        y = ops.mul(x, 3.0)
    assert not y.requires_grad
    assert len(Graph(y)) == 0


def test_graph_is_topologically_ordered():
    a, b = parameter([1.0]), parameter([2.0])
    out = ops.sum(ops.mul(ops.add(a, b), a))
    order = {id(node): i for i, node in enumerate(Graph(out).nodes)}
    for node in Graph(out).nodes:
        for parent in node._parents:
            assert order[id(parent)] < order[id(node)]
    assert {id(leaf) for leaf in Graph(out).leaves()} == {id(a), id(b)}


def test_where_masks_with_fill_and_blocks_gradient():
    x = parameter([1.0, 2.0, 3.0])
    mask = np.array([True, False, True])
    out = ops.where(mask, x, fill=-5.0)
    np.testing.assert_allclose(out.data, [1.0, -5.0, 3.0])
    (grad,) = backward(ops.sum(out), [x])
    np.testing.assert_allclose(grad, [1.0, 0.0, 1.0])


def test_gradient_reversal_is_identity_forward_and_flips_backward():
    x = parameter([1.5, -2.0])
    out = ops.gradient_reversal(x, 0.5)
    np.testing.assert_allclose(out.data, x.data)
    (grad,) = backward(ops.sum(out), [x])
    np.testing.assert_allclose(grad, [-0.5, -0.5])


WEIGHTS = Tensor(np.arange(12.0).reshape(3, 4) / 6.0 - 1.0)
KEEP = np.array([[True, False, True, True], [False, True, True, False], [True, True, False, True]])

# scalar graphs of x (3, 3) and w (3, 4), one per op of the catalog
GRAPHS = {
    "add": lambda x, w: ops.sum(ops.tanh(ops.add(x @ w, ops.square(x @ w)))),
    "sub": lambda x, w: ops.sum(ops.sub(ops.tanh(x @ w), ops.square(x @ w))),
    "mul": lambda x, w: ops.sum(ops.mul(x @ w, ops.sigmoid(x @ w))),
    "div": lambda x, w: ops.sum(ops.div(x @ w, ops.add(ops.exp(x @ w), 1.0))),
    "neg": lambda x, w: ops.sum(ops.neg(ops.square(x @ w)) * WEIGHTS),
    "pow": lambda x, w: ops.sum(ops.pow_scalar(ops.add(ops.square(x @ w), 1.0), 1.5)),
    "exp_log": lambda x, w: ops.sum(ops.log(ops.add(ops.exp(x @ w), 1.0))),
    "clamp_min": lambda x, w: ops.sum(ops.log(ops.clamp_min(ops.exp(ops.matmul(x, w)), 1e-6))),
    "tanh": lambda x, w: ops.sum(ops.tanh(ops.matmul(x, w)) * WEIGHTS),
    "sigmoid": lambda x, w: ops.sum(ops.var(ops.sigmoid(ops.matmul(x, w)))),
    "relu": lambda x, w: ops.sum(ops.square(ops.relu(x @ w))),
    "elu": lambda x, w: ops.mean(ops.elu(ops.matmul(x, w)) * WEIGHTS),
    "softmax": lambda x, w: ops.sum(ops.softmax(ops.matmul(x, w), axis=-1) * ops.matmul(x, w)),
    "where": lambda x, w: ops.sum(ops.square(ops.where(KEEP, x @ w, fill=0.0))),
    "linear": lambda x, w: ops.sum(ops.tanh(ops.linear(x, w, ops.getitem(w, 0)))),
    "layer_norm": lambda x, w: ops.sum(
        ops.layer_norm(x @ w, ops.getitem(w, 1), ops.getitem(w, 2)) * Tensor(np.arange(4.0))
    ),
    "concat": lambda x, w: ops.sum(ops.concat([x, ops.tanh(x)], axis=-1) @ ops.concat([w, w], axis=0)),
    "stack": lambda x, w: ops.sum(ops.square(ops.stack([x @ w, ops.tanh(x @ w)], axis=1))),
    "getitem": lambda x, w: ops.sum(ops.square(ops.getitem(x @ w, (slice(1, None), slice(None, None, 2))))),
    "reshape_swapaxes": lambda x, w: ops.sum(ops.swapaxes(ops.reshape(ops.matmul(x, w), (3, 2, 2)), 0, 1)[0]),
    "transpose": lambda x, w: ops.sum(ops.transpose(ops.reshape(x @ w, (2, 3, 2)), (2, 0, 1)) * Tensor(np.arange(12.0).reshape(2, 2, 3))),
    "mean_axis": lambda x, w: ops.sum(ops.square(ops.mean(ops.tanh(x @ w), axis=0))),
}


@pytest.mark.parametrize("name", sorted(GRAPHS))
@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=5, deadline=None)
def test_gradcheck_on_random_instances(name, seed):
    rng = np.random.default_rng(seed)
    x = parameter(rng.normal(size=(3, 3)) * 0.5)
    w = parameter(rng.normal(size=(3, 4)) * 0.5)
    assert gradcheck(lambda: GRAPHS[name](x, w), [x, w])


def test_max_relative_error_is_small_for_smooth_graph():
    x = parameter([0.3, -0.7])
    assert max_relative_error(lambda: ops.sum(ops.tanh(x) * x), [x]) < 1e-5


def test_numerical_gradient_leaves_parameter_unchanged():
    x = parameter([0.2, 0.4])
    before = x.data.copy()
    numerical_gradient(lambda: ops.sum(ops.square(x)), x)
    np.testing.assert_array_equal(x.data, before)


def test_variational_mask_is_shared_across_time():
    x = Tensor(np.ones((4, 7, 5)))
    out = ops.variational_dropout(x, 0.5, training=True, mask_seed=3)
    for step in range(1, 7):
        np.testing.assert_array_equal(out.data[:, step, :], out.data[:, 0, :])
    assert set(np.unique(out.data)) <= {0.0, 2.0}


def test_variational_dropout_is_identity_in_eval_and_at_zero_rate():
    x = Tensor(np.arange(12.0).reshape(2, 3, 2))
    np.testing.assert_array_equal(ops.variational_dropout(x, 0.4, training=False).data, x.data)
    np.testing.assert_array_equal(ops.variational_dropout(x, 0.0, training=True, mask_seed=0).data, x.data)


def test_variational_mask_is_reproducible_from_seed():
    a = ops.sample_variational_mask((3, 1, 4), 0.3, 11)
    b = ops.sample_variational_mask((3, 1, 4), 0.3, 11)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_rate_outside_range_is_config_error(rate):
    with pytest.raises(ConfigError):
        ops.variational_dropout(Tensor(np.ones((2, 2))), rate, training=True, mask_seed=0)


@given(st.lists(st.floats(min_value=0.01, max_value=5.0), min_size=1, max_size=6), st.booleans())
@settings(max_examples=30)
def test_first_adam_step_moves_by_lr_against_gradient_sign(magnitudes, negate):
    g = np.array(magnitudes) * (-1.0 if negate else 1.0)
    p = parameter(np.zeros_like(g))
    state = AdamState(lr=0.01)
    adam_step([p], [g], state)
    np.testing.assert_allclose(p.data, -0.01 * np.sign(g), rtol=1e-5)


def test_zero_gradient_leaves_parameters_unchanged():
    p = parameter([1.0, -2.0])
    opt = Adam([p], lr=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_rejects_mismatched_gradient():
    p = parameter(np.ones(3))
    with pytest.raises(ShapeError):
        adam_step([p], [np.ones(2)], AdamState(lr=0.1))


def test_adam_rejects_non_positive_learning_rate():
    with pytest.raises(ConfigError):
        AdamState(lr=0.0)


def test_adam_state_round_trip_continues_identically():
    a, b = parameter([1.0, 2.0]), parameter([1.0, 2.0])
    opt_a, opt_b = Adam([a], lr=0.05), Adam([b], lr=0.05)
    grads = [np.array([0.3, -0.1]), np.array([0.2, 0.4]), np.array([-0.5, 0.1])]
    opt_a.step([grads[0]])
    opt_b.step([grads[0]])
    opt_b.load_state_dict(opt_b.state_dict())
    for g in grads[1:]:
        opt_a.step([g])
        opt_b.step([g])
    np.testing.assert_allclose(a.data, b.data)


def test_adam_minimises_a_quadratic():
    p = parameter([4.0, -3.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        zero_grad([p])
        grads = backward(ops.sum(ops.square(p)), [p])
        opt.step(grads)
    np.testing.assert_allclose(p.data, [0.0, 0.0], atol=5e-2)
