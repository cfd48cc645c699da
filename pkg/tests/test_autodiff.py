"""Reverse-mode tape: per-primitive adjoints vs finite differences, hard
errors on implicit numpy conversion, and accumulation rules."""

import numpy as np
import pytest

from conftest import max_rel_error, numeric_grad
from tkgcast import autodiff as ad
from tkgcast.autodiff import Tensor


def check_gradient(build, arrays, rel=1e-6, step=1e-5):
    """build(tensors) -> scalar Tensor; arrays are the leaf buffers."""
    tensors = [Tensor(a) for a in arrays]
    loss = build(tensors)
    loss.backward()
    for t, a in zip(tensors, arrays):
        got = t.grad if t.grad is not None else np.zeros_like(a)
        want = numeric_grad(lambda: build([Tensor(x) for x in arrays]).item(),
                            a, step=step)
        assert max_rel_error(got, want) < rel, (got, want)


def test_add_mul_sub_div():
    a = np.array([1.5, -2.0, 0.5])
    b = np.array([0.7, 3.0, -1.2])
    check_gradient(lambda ts: ((ts[0] + ts[1]) * ts[0] - ts[1] / ts[0]).sum(),
                   [a, b])


def test_scalar_broadcasting():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    check_gradient(lambda ts: (2.5 * ts[0] + 1.0).sum(), [a])
    check_gradient(lambda ts: (1.0 / ts[0]).sum(), [a])


def test_row_broadcast_unbroadcasts_grad():
    a = np.ones((3, 4))
    b = np.arange(4.0) + 1.0
    check_gradient(lambda ts: (ts[0] * ts[1]).sum(), [a, b])


def test_matmul():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    check_gradient(lambda ts: (ts[0] @ ts[1]).sum(), [a, b])


def test_sum_mean_axes():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3))
    check_gradient(lambda ts: ts[0].sum(axis=0).sum(), [a])
    check_gradient(lambda ts: ts[0].mean(axis=1).sum(), [a])
    check_gradient(lambda ts: ts[0].mean(), [a])


def test_exp_log_leaky_clamp():
    a = np.array([0.3, 1.7, 2.5])
    check_gradient(lambda ts: ad.exp(ts[0]).sum(), [a])
    check_gradient(lambda ts: ad.log(ts[0]).sum(), [a])
    b = np.array([-2.0, -0.4, 0.6, 3.0])
    check_gradient(lambda ts: ad.leaky_relu(ts[0], 0.01).sum(), [b])
    # clamp passes gradient only inside the window
    c = np.array([-5.0, 0.2, 0.8, 7.0])
    t = Tensor(c)
    out = ad.clamp(t, 0.0, 1.0).sum()
    out.backward()
    assert t.grad.tolist() == [0.0, 1.0, 1.0, 0.0]


def test_concat_and_gather_rows():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    idx = np.array([0, 2, 2, 1])
    check_gradient(
        lambda ts: (ad.concat([ts[0], ts[1]], axis=0)).sum(), [a, b])
    # repeated indices must accumulate into the source rows
    check_gradient(lambda ts: (ad.gather_rows(ts[1], idx) * 1.5).sum(), [a, b])


def test_row_update_overwrite_semantics():
    base = np.ones((3, 2))
    patch = np.full((1, 2), 5.0)
    tb, tp = Tensor(base), Tensor(patch)
    out = ad.row_update(tb, np.array([1]), tp).sum()
    assert out.item() == pytest.approx(2 + 10 + 2)
    out.backward()
    # overwritten row contributes nothing to the base gradient
    assert tb.grad.tolist() == [[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]]
    assert tp.grad.tolist() == [[1.0, 1.0]]


def test_segment_ops_gradients():
    rng = np.random.default_rng(3)
    x = rng.normal(size=6)
    seg = np.array([0, 0, 1, 1, 1, 2])
    check_gradient(lambda ts: (ad.segment_sum(ts[0], seg, 3)
                               * np.array([1.0, 2.0, 3.0])).sum(), [x])
    weights = np.array([0.5, 1.5, -1.0, 2.0, 0.3, 1.1])
    check_gradient(lambda ts: (ad.segment_softmax(ts[0], seg, 3)
                               * weights).sum(), [x], rel=1e-5)


def test_time_encode_gradients():
    freq = np.array([0.3, 1.2])
    phase = np.array([0.1, -0.4])
    ts_arr = np.array([1.0, 4.0, 9.0])
    mix = np.arange(6.0).reshape(3, 2) + 0.5
    check_gradient(
        lambda ts: (ad.time_encode(ts[0], ts[1], ts_arr) * mix).sum(),
        [freq, phase], rel=1e-4)


def test_reuse_accumulates():
    a = np.array([2.0])
    t = Tensor(a)
    loss = (t * t + t).sum()
    loss.backward()
    assert t.grad.tolist() == [5.0]  # d(x^2 + x)/dx at 2


def test_untouched_leaf_has_no_grad():
    t1, t2 = Tensor(np.array([1.0])), Tensor(np.array([1.0]))
    (t1 * 3.0).sum().backward()
    assert t1.grad is not None
    assert t2.grad is None


def test_backward_requires_scalar():
    t = Tensor(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_implicit_conversion_is_a_hard_error():
    t = Tensor(np.array([1.0]))
    with pytest.raises(TypeError):
        np.exp(t)  # __array_ufunc__ disabled
    with pytest.raises(TypeError):
        np.asarray(t)
    with pytest.raises(TypeError):
        float(t)
    with pytest.raises(TypeError):
        bool(t)
    with pytest.raises(TypeError):
        list(t)


def test_item_and_values_of_detach():
    t = Tensor(np.array(3.5))
    assert t.item() == 3.5
    assert ad.values_of(t) is t.data
    arr = np.array([1.0])
    assert ad.values_of(arr) is arr


def test_as_col():
    t = Tensor(np.array([1.0, 2.0, 3.0]))
    col = ad.as_col(t)
    assert col.data.shape == (3, 1)
    (col * np.ones((3, 2))).sum().backward()
    assert t.grad.tolist() == [2.0, 2.0, 2.0]


def test_matmul_requires_2d():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
