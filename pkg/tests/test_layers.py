import itertools

import numpy as np
import pytest

from csprivacy.nn import layers
from oracles import conv3d_loops, max_relative_error, maxpool_loops


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in itertools.product(*map(range, x.shape)):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 5, 6))
    w = np.eye(6).reshape(1, 1, 1, 6, 6)
    out, _ = layers.conv3d_forward(x, w, np.zeros(6))
    assert np.array_equal(out, x)


def test_conv_same_padding_shape():
    x = np.zeros((1, 8, 4, 4, 3))
    out, _ = layers.conv3d_forward(x, np.zeros((3, 3, 3, 3, 8)), np.zeros(8), 1, 1)
    assert out.shape == (1, 8, 4, 4, 8)


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1), (2, 0)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 5, 4, 6, 3))
    w = rng.normal(size=(3, 3, 3, 3, 4))
    b = rng.normal(size=4)
    out, _ = layers.conv3d_forward(x, w, b, stride, pad)
    ref = conv3d_loops(x, w, b, stride, pad)
    assert out.shape == ref.shape
    assert np.max(np.abs(out - ref)) <= 1e-12 * np.max(np.abs(ref))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (1, 0)])
def test_conv_backward_finite_differences(stride, pad):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 3, 5, 2))
    w = rng.normal(size=(3, 3, 3, 2, 3))
    b = rng.normal(size=3)
    proj = rng.normal(size=layers.conv3d_forward(x, w, b, stride, pad)[0].shape)
    f = lambda: float((layers.conv3d_forward(x, w, b, stride, pad)[0] * proj).sum())  # noqa: E731
    _, cache = layers.conv3d_forward(x, w, b, stride, pad)
    dx, dw, db = layers.conv3d_backward(proj, cache)
    assert max_relative_error(dx, numeric_grad(f, x)) < 1e-6
    assert max_relative_error(dw, numeric_grad(f, w)) < 1e-6
    assert max_relative_error(db, numeric_grad(f, b)) < 1e-6


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        layers.conv3d_forward(np.zeros((1, 2, 2, 2, 3)), np.zeros((1, 1, 1, 4, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        layers.conv3d_forward(np.zeros((1, 2, 2, 2, 3)), np.zeros((3, 3, 3, 3, 2)), np.zeros(2))


def test_maxpool_constant():
    x = np.full((1, 4, 4, 4, 2), 3.5)
    out = layers.maxpool3d(x, 2)
    assert out.shape == (1, 2, 2, 2, 2) and np.all(out == 3.5)
    same = layers.maxpool3d(x, 3, 1, 1)
    assert same.shape == x.shape and np.all(same == 3.5)


def test_maxpool_single_window():
    x = np.array([3.0, 7.0, -1.0, 2.0, 9.5, 0.0, 4.0, 1.0]).reshape(1, 2, 2, 2, 1)
    assert layers.maxpool3d(x, 2, 2).reshape(-1).tolist() == [9.5]


@pytest.mark.parametrize("k,s", [((2, 2, 2), (2, 2, 2)), ((1, 2, 2), (1, 2, 2)), ((3, 3, 3), (1, 1, 1))])
def test_maxpool_matches_loops(k, s):
    x = np.random.default_rng(1).normal(size=(2, 6, 4, 5, 3))
    np.testing.assert_array_equal(layers.maxpool3d(x, k, s), maxpool_loops(x, k, s))


def test_maxpool_same_padding_matches_loops():
    x = np.random.default_rng(2).normal(size=(1, 3, 4, 2, 2))
    xp = np.pad(x, [(0, 0), (1, 1), (1, 1), (1, 1), (0, 0)], constant_values=-np.inf)
    np.testing.assert_array_equal(layers.maxpool3d(x, 3, 1, 1), maxpool_loops(xp, (3, 3, 3), (1, 1, 1)))


@pytest.mark.parametrize("k,s,p", [(2, 2, 0), (3, 1, 1), ((1, 2, 2), (1, 2, 2), 0)])
def test_maxpool_gradient_routes_to_argmax(k, s, p):
    x = np.random.default_rng(5).normal(size=(2, 4, 4, 4, 2))
    out, cache = layers.maxpool3d_forward(x, k, s, p)
    proj = np.random.default_rng(6).normal(size=out.shape)
    dx = layers.maxpool3d_backward(proj, cache)
    f = lambda: float((layers.maxpool3d_forward(x, k, s, p)[0] * proj).sum())  # noqa: E731
    assert max_relative_error(dx, numeric_grad(f, x)) < 1e-6
    # only window maxima receive gradient
    if k == 2:
        winners = np.isin(x, out)
        assert np.all(dx[~winners] == 0)


def test_relu_roundtrip():
    x = np.array([-1.0, 0.0, 2.0])
    out, mask = layers.relu_forward(x)
    assert out.tolist() == [0.0, 0.0, 2.0]
    assert layers.relu_backward(np.ones(3), mask).tolist() == [0.0, 0.0, 1.0]
