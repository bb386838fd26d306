"""Finite-difference checks for every op in the autograd engine."""

import numpy as np
import pytest

from complab import autograd as ag
from complab.autograd import Tensor


def _numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def _check(build, *arrays, atol=1e-7):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    loss = ag.tsum(ag.mul(out, out))  # quadratic head exercises the chain
    loss.backward()
    for t, a in zip(tensors, arrays):
        def scalar():
            fresh = [Tensor(x) for x in arrays]
            o = build(*fresh)
            return float((o.data**2).sum())

        numeric = _numeric_grad(scalar, a)
        np.testing.assert_allclose(t.grad, numeric, atol=atol)


rng = np.random.default_rng(0)


def test_add_broadcast():
    _check(ag.add, rng.standard_normal((3, 4)), rng.standard_normal((4,)))


def test_mul_broadcast():
    _check(ag.mul, rng.standard_normal((2, 3, 4)), rng.standard_normal((1, 4)))


def test_matmul_batched():
    _check(ag.matmul, rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5)))
    _check(
        ag.matmul, rng.standard_normal((2, 2, 3, 4)), rng.standard_normal((2, 2, 4, 3))
    )


def test_reshape_transpose():
    _check(
        lambda a: ag.transpose(ag.reshape(a, (2, 3, 4, 2)), (0, 2, 1, 3)),
        rng.standard_normal((2, 12, 2)),
    )


def test_gelu():
    _check(ag.gelu, rng.standard_normal((5, 7)))


def test_softmax():
    _check(ag.softmax, rng.standard_normal((4, 6)))


def test_log_softmax():
    _check(ag.log_softmax, rng.standard_normal((4, 6)))


def test_layer_norm():
    _check(
        ag.layer_norm,
        rng.standard_normal((3, 5, 8)),
        rng.standard_normal((8,)),
        rng.standard_normal((8,)),
        atol=1e-6,
    )


def test_embedding_scatter():
    idx = np.array([[0, 2, 2], [1, 0, 3]])
    _check(lambda w: ag.embedding(w, idx), rng.standard_normal((4, 6)))


def test_gather_last():
    idx = np.array([[0, 2], [3, 1]])
    _check(lambda a: ag.gather_last(a, idx), rng.standard_normal((2, 2, 4)))


def test_add_const_and_scale():
    c = rng.standard_normal((3, 3))
    _check(lambda a: ag.scale(ag.add_const(a, c), 1.7), rng.standard_normal((3, 3)))


def test_mul_const_mask():
    mask = (rng.random((4, 4)) > 0.5).astype(np.float64)
    _check(lambda a: ag.mul_const(a, mask), rng.standard_normal((4, 4)))


def test_grad_accumulates_over_shared_use():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    out = ag.tsum(ag.add(ag.mul(x, x), x))  # x^2 + x -> 2x + 1
    out.backward()
    np.testing.assert_allclose(x.grad, [5.0, 7.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        ag.mul(x, x).backward()


def test_no_graph_without_requires_grad():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(3))
    out = ag.add(a, b)
    assert out._parents == ()


def test_adam_converges_on_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    x = Tensor(np.zeros(3), requires_grad=True)
    opt = ag.Adam({"x": x}, lr=0.05, warmup_steps=10, clip_norm=0.0)
    for _ in range(400):
        opt.zero_grad()
        diff = ag.add_const(x, -target)
        loss = ag.tsum(ag.mul(diff, diff))
        loss.backward()
        opt.step()
    np.testing.assert_allclose(x.data, target, atol=1e-3)


def test_adam_warmup_ramps_lr():
    x = Tensor(np.zeros(1), requires_grad=True)
    opt = ag.Adam({"x": x}, lr=1.0, warmup_steps=100)
    opt.step_count = 1
    assert opt.current_lr() == pytest.approx(0.01)
    opt.step_count = 100
    assert opt.current_lr() == pytest.approx(1.0)
    opt.step_count = 500
    assert opt.current_lr() == pytest.approx(1.0)


def test_gradient_clipping_bounds_update_norm():
    x = Tensor(np.zeros(4), requires_grad=True)
    opt = ag.Adam({"x": x}, lr=1.0, warmup_steps=0, clip_norm=1.0)
    x.grad = np.full(4, 100.0)
    opt.step()
    # After clipping, the gradient norm fed to Adam was exactly 1.
    assert np.linalg.norm(x.grad) == pytest.approx(1.0)
