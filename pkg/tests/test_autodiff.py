"""Tests for the reverse-mode tape: forward values, gradients vs central
finite differences, graph lifecycle rules, and FLOP tallies."""

import numpy as np
import pytest

from trajsieve import autodiff as ad
from trajsieve.errors import ContractError, DimensionError, DomainError


def test_matmul_identity_forward():
    a = ad.constant(np.arange(6.0).reshape(2, 3))
    eye = ad.constant(np.eye(3))
    out = ad.matmul(a, eye)
    assert np.array_equal(out.data, a.data)


def test_matmul_shape_mismatch():
    a = ad.constant(np.zeros((2, 3)))
    b = ad.constant(np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        ad.matmul(a, b)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = ad.constant(rng.normal(size=(5, 7)) * 10.0)
    p = ad.row_softmax(x)
    assert np.all(np.abs(p.data.sum(axis=-1) - 1.0) < 1e-12)
    assert np.all(p.data > 0.0)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    p1 = ad.row_softmax(ad.constant(x)).data
    p2 = ad.row_softmax(ad.constant(x + 1000.0)).data
    assert np.allclose(p1, p2, atol=1e-12)


def test_softmax_uniform_on_equal_logits():
    p = ad.row_softmax(ad.constant(np.full((2, 4), 3.7))).data
    assert np.allclose(p, 0.25, atol=1e-15)


def test_sigmoid_at_zero():
    out = ad.sigmoid(ad.constant(np.zeros((2, 2))))
    assert np.allclose(out.data, 0.5)


def test_layer_norm_forward_moments():
    rng = np.random.default_rng(2)
    x = ad.constant(rng.normal(loc=3.0, scale=2.0, size=(4, 16)))
    y = ad.layer_norm(x)
    assert np.all(np.abs(y.data.mean(axis=-1)) < 1e-12)
    assert np.all(np.abs(y.data.var(axis=-1) - 1.0) < 1e-4)


def test_log_domain_error():
    with pytest.raises(DomainError):
        ad.log(ad.constant(np.array([[1.0, 0.0]])))
    with pytest.raises(DomainError):
        ad.log(ad.constant(np.array([[-0.5]])))


def test_masked_fill_value_and_gradient():
    x = ad.parameter(np.ones((2, 3)))
    mask = np.array([[True, False, False], [False, False, True]])
    y = ad.masked_fill(x, mask)
    assert y.data[0, 0] == -1e9
    assert y.data[1, 2] == -1e9
    assert y.data[0, 1] == 1.0
    loss = ad.sum_all(y)
    loss.backward()
    assert x.grad[0, 0] == 0.0
    assert x.grad[0, 1] == 1.0


def test_masked_softmax_zeroes_dropped_columns():
    rng = np.random.default_rng(3)
    x = ad.constant(rng.normal(size=(2, 6)))
    mask = np.zeros((2, 6), dtype=bool)
    mask[:, 4:] = True
    p = ad.row_softmax(ad.masked_fill(x, mask)).data
    assert np.all(p[:, 4:] == 0.0)
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) < 1e-12)


def test_variance_forward_population():
    x = ad.constant(np.array([1.0, 2.0, 3.0, 4.0]))
    v = ad.variance(x)
    assert abs(v.item() - 1.25) < 1e-15


def test_straight_through_forward_is_binary():
    soft = ad.constant(np.array([0.1, 0.5, 0.500001, 0.9]))
    hard = ad.straight_through(soft)
    assert np.array_equal(hard.data, np.array([0.0, 0.0, 1.0, 1.0]))


def test_sum_backward_is_ones():
    x = ad.parameter(np.zeros((3, 4)))
    ad.sum_all(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_sigmoid_gradient_at_zero():
    x = ad.parameter(np.zeros((1, 1)))
    ad.sum_all(ad.sigmoid(x)).backward()
    assert abs(x.grad[0, 0] - 0.25) < 1e-12


def test_scale_and_add_gradients():
    x = ad.parameter(np.array([[2.0, -1.0]]))
    y = ad.parameter(np.array([[0.5, 0.5]]))
    loss = ad.sum_all(ad.add(ad.scale(x, 3.0), y))
    loss.backward()
    assert np.allclose(x.grad, 3.0)
    assert np.allclose(y.grad, 1.0)


def test_broadcast_add_unbroadcasts_gradient():
    x = ad.parameter(np.zeros((4, 3)))
    b = ad.parameter(np.zeros((1, 3)))
    ad.sum_all(ad.add(x, b)).backward()
    assert np.allclose(b.grad, 4.0)
    assert b.grad.shape == (1, 3)


def test_concat_gradient_splits():
    a = ad.parameter(np.zeros((2, 2)))
    b = ad.parameter(np.zeros((2, 3)))
    out = ad.concat([a, b], axis=-1)
    loss = ad.sum_all(ad.mul(out, ad.constant(np.arange(10.0).reshape(2, 5))))
    loss.backward()
    assert np.array_equal(a.grad, np.array([[0.0, 1.0], [5.0, 6.0]]))
    assert np.array_equal(b.grad, np.array([[2.0, 3.0, 4.0], [7.0, 8.0, 9.0]]))


def test_take_gradient_scatters():
    x = ad.parameter(np.zeros((4, 2)))
    ad.sum_all(ad.take(x, 1, 3, axis=0)).backward()
    expected = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(x.grad, expected)


def test_chain_matmul_softmax_mse_matches_finite_differences():
    # a small attention-like composite checked against central differences
    rng = np.random.default_rng(4)
    w = ad.parameter(rng.normal(size=(3, 3)) * 0.5)
    x = ad.constant(rng.normal(size=(2, 3)))
    target = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])

    def fn(w):
        p = ad.row_softmax(ad.matmul(x, w))
        diff = ad.sub(p, ad.constant(target))
        return ad.mean_all(ad.mul(diff, diff))

    worst = ad.grad_check(fn, [w], step=1e-5, tolerance=1e-4)
    assert worst < 1e-4


@pytest.mark.parametrize(
    "name,builder,tol",
    [
        ("sigmoid", lambda x: ad.mean_all(ad.sigmoid(x)), 1e-4),
        ("relu", lambda x: ad.sum_all(ad.relu(x)), 1e-4),
        ("softmax", lambda x: ad.mean_all(ad.mul(ad.row_softmax(x), ad.row_softmax(x))), 1e-4),
        ("variance", lambda x: ad.variance(x), 1e-4),
        ("log-shifted", lambda x: ad.mean_all(ad.log(ad.add(ad.mul(x, x), ad.constant(np.full((3, 4), 0.5))))), 1e-4),
        ("layer-norm", lambda x: ad.mean_all(ad.mul(ad.layer_norm(x), ad.constant(np.arange(12.0).reshape(3, 4)))), 1e-3),
        ("div", lambda x: ad.mean_all(ad.div(x, ad.constant(np.full((3, 4), 2.0)))), 1e-4),
        ("swap-axes", lambda x: ad.sum_all(ad.matmul(x, ad.swap_last_axes(x))), 1e-4),
        ("mean-axis", lambda x: ad.sum_all(ad.mul(ad.mean_axis(x, 0), ad.constant(np.arange(4.0)))), 1e-4),
    ],
)
def test_primitive_gradients_vs_finite_differences(name, builder, tol):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = ad.parameter(rng.normal(size=(3, 4)) + 0.1)
    assert ad.grad_check(builder, [x], step=1e-5, tolerance=tol) < tol


def test_clamp_gradient_gates_by_region():
    x = ad.parameter(np.array([-2.0, 0.3, 2.0]))
    ad.sum_all(ad.clamp(x, 0.0, 1.0)).backward()
    assert np.array_equal(x.grad, np.array([0.0, 1.0, 0.0]))


def test_straight_through_passes_gradient_at_hard_zero():
    soft = ad.parameter(np.array([0.2]))
    hard = ad.straight_through(soft)
    ad.sum_all(ad.mul(hard, ad.constant(np.array([5.0])))).backward()
    assert hard.data[0] == 0.0
    assert soft.grad[0] == 5.0


def test_batched_matmul_gradient():
    rng = np.random.default_rng(6)
    a = ad.parameter(rng.normal(size=(2, 3, 4)))
    b = ad.parameter(rng.normal(size=(4, 5)) * 0.3)

    def fn(a, b):
        return ad.mean_all(ad.relu(ad.matmul(a, b)))

    assert ad.grad_check(fn, [a, b], step=1e-5, tolerance=1e-4) < 1e-4


def test_3d_layer_norm_and_softmax_gradients():
    rng = np.random.default_rng(7)
    x = ad.parameter(rng.normal(size=(2, 3, 4)))
    coeff = ad.constant(rng.normal(size=(2, 3, 4)))

    def fn(x):
        return ad.mean_all(ad.mul(ad.row_softmax(ad.layer_norm(x)), coeff))

    assert ad.grad_check(fn, [x], step=1e-5, tolerance=1e-3) < 1e-3


def test_backward_requires_scalar():
    x = ad.parameter(np.ones((2, 2)))
    y = ad.relu(x)
    with pytest.raises(ContractError):
        y.backward()


def test_second_backward_rejected():
    x = ad.parameter(np.ones((2, 2)))
    loss = ad.sum_all(ad.relu(x))
    loss.backward()
    with pytest.raises(ContractError):
        loss.backward()


def test_reusing_consumed_intermediate_rejected():
    x = ad.parameter(np.ones((2, 2)))
    mid = ad.relu(x)
    ad.sum_all(mid).backward()
    with pytest.raises(ContractError):
        ad.mean_all(mid).backward()


def test_gradients_accumulate_across_backwards():
    x = ad.parameter(np.ones((2, 2)))
    ad.sum_all(ad.scale(x, 2.0)).backward()
    ad.sum_all(ad.scale(x, 3.0)).backward()
    assert np.allclose(x.grad, 5.0)
    x.zero_grad()
    assert np.allclose(x.grad, 0.0)


def test_forward_determinism():
    rng = np.random.default_rng(8)
    raw = rng.normal(size=(4, 4))

    def run():
        x = ad.parameter(raw.copy())
        loss = ad.mean_all(ad.row_softmax(ad.matmul(x, ad.swap_last_axes(x))))
        loss.backward()
        return loss.item(), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_primitive_registry_dispatch():
    out = ad.primitive_forward("sigmoid", ad.constant(np.zeros((1, 1))))
    assert abs(out.item() - 0.5) < 1e-15
    with pytest.raises(ContractError):
        ad.primitive_forward("not-an-op", ad.constant(np.zeros((1, 1))))


def test_flop_counter_matmul():
    a = ad.constant(np.zeros((3, 4)))
    b = ad.constant(np.zeros((4, 5)))
    with ad.count_flops() as counter:
        ad.matmul(a, b)
    assert counter.total == 2 * 3 * 4 * 5


def test_flop_counter_batched_and_nested():
    a = ad.constant(np.zeros((2, 3, 4)))
    b = ad.constant(np.zeros((2, 4, 5)))
    with ad.count_flops() as outer:
        ad.matmul(a, b)
        with ad.count_flops() as inner:
            ad.add(ad.constant(np.zeros((2, 2))), ad.constant(np.zeros((2, 2))))
        assert inner.total == 4
    assert outer.total == 2 * 2 * 3 * 4 * 5 + 4


def test_flop_counter_ignores_data_movement():
    x = ad.constant(np.zeros((4, 4)))
    with ad.count_flops() as counter:
        ad.reshape(x, (2, 8))
        ad.swap_last_axes(x)
        ad.take(x, 0, 2, axis=0)
        ad.concat([x, x], axis=0)
        ad.masked_fill(x, np.zeros((4, 4), dtype=bool))
    assert counter.total == 0
