"""
深度分割、腐蚀与梯度测试
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tofgrid.core import ConfigError, DimensionMismatchError
from tofgrid.pnmio import AmplitudeImage, DepthImage, MaskedImage
from tofgrid.preprocess import GradientField, erode_mask, gradient, segment_depth


# ==================== 深度分割 ====================

def test_segment_depth_strict_interval():
    amp = AmplitudeImage(np.array([[10.0, 20.0, 30.0, 40.0]]))
    depth = DepthImage(np.array([[1.5, 2.0, 1.0, 0.0]]))
    masked = segment_depth(amp, depth, 1.0, 2.0)
    np.testing.assert_array_equal(masked.valid, [[True, False, False, False]])
    np.testing.assert_array_equal(masked.values, [[10.0, 0.0, 0.0, 0.0]])


def test_segment_depth_amplitude_only():
    amp = AmplitudeImage(np.arange(6.0).reshape(2, 3))
    masked = segment_depth(amp, None)
    assert masked.valid.all()
    np.testing.assert_array_equal(masked.values, amp.data)


def test_segment_depth_config_errors():
    amp = AmplitudeImage(np.ones((2, 2)))
    depth = DepthImage(np.ones((2, 2)))
    with pytest.raises(ConfigError):
        segment_depth(amp, depth, 2.0, 1.0)
    with pytest.raises(ConfigError):
        segment_depth(amp, depth, 1.0, 1.0)
    with pytest.raises(ConfigError):
        segment_depth(amp, depth, None, 1.0)
    with pytest.raises(DimensionMismatchError):
        segment_depth(amp, DepthImage(np.ones((3, 2))), 0.5, 2.0)


# ==================== 腐蚀 ====================

def test_erode_identity():
    masked = MaskedImage(np.ones((5, 5)), np.eye(5, dtype=bool))
    assert erode_mask(masked, 0) is masked


def test_erode_isolated_pixel():
    valid = np.zeros((7, 7), dtype=bool)
    valid[3, 3] = True
    assert not erode_mask(MaskedImage(np.ones((7, 7)), valid), 1).valid.any()


def test_erode_block():
    valid = np.zeros((20, 20), dtype=bool)
    valid[5:15, 5:15] = True
    out = erode_mask(MaskedImage(np.ones((20, 20)), valid), 2).valid
    expected = np.zeros_like(valid)
    expected[7:13, 7:13] = True
    np.testing.assert_array_equal(out, expected)


@settings(max_examples=300)
@given(arrays(bool, (12, 12)), st.integers(1, 2))
def test_erode_twice_equals_double_radius(valid, r):
    masked = MaskedImage(np.ones(valid.shape), valid)
    twice = erode_mask(erode_mask(masked, r), r).valid
    np.testing.assert_array_equal(twice, erode_mask(masked, 2 * r).valid)


def test_erode_negative_radius():
    with pytest.raises(ConfigError):
        erode_mask(MaskedImage.full(np.ones((3, 3))), -1)


# ==================== 梯度 ====================

def test_gradient_ramp():
    y, x = np.mgrid[0:6, 0:8].astype(float)
    grads = gradient(MaskedImage.full(x))
    np.testing.assert_allclose(grads.xi[1:-1, 1:-1], 1.0)
    np.testing.assert_allclose(grads.eta[1:-1, 1:-1], 0.0)
    # 图像边界没有完整邻域
    assert not grads.xi[0].any() and not grads.xi[:, -1].any()


def test_gradient_constant_and_plane():
    assert not gradient(MaskedImage.full(np.full((5, 5), 7.0))).rho.any()
    y, x = np.mgrid[0:6, 0:6].astype(float)
    grads = gradient(MaskedImage.full(3 * x + 4 * y))
    np.testing.assert_allclose(grads.rho[1:-1, 1:-1], 5.0)


def test_gradient_zero_next_to_null():
    y, x = np.mgrid[0:7, 0:7].astype(float)
    valid = np.ones((7, 7), dtype=bool)
    valid[3, 3] = False
    grads = gradient(MaskedImage(x, valid))
    for yy, xx in [(3, 3), (3, 2), (3, 4), (2, 3), (4, 3)]:
        assert grads.rho[yy, xx] == 0.0
    assert grads.xi[2, 2] == 1.0


@settings(max_examples=200)
@given(arrays(np.float64, (6, 7), elements=st.floats(0, 255)),
       arrays(np.float64, (6, 7), elements=st.floats(0, 255)),
       st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_linear(b1, b2, a, b):
    g1 = gradient(MaskedImage.full(b1))
    g2 = gradient(MaskedImage.full(b2))
    g = gradient(MaskedImage.full(a * b1 + b * b2))
    np.testing.assert_allclose(g.xi, a * g1.xi + b * g2.xi, atol=1e-9)
    np.testing.assert_allclose(g.eta, a * g1.eta + b * g2.eta, atol=1e-9)


def test_gradient_rotation_by_90_degrees():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, size=(9, 9))
    g = gradient(MaskedImage.full(img))
    # rot(x', y') = img(W−1−y', x')
    rot = np.rot90(img)
    gr = gradient(MaskedImage.full(rot))
    np.testing.assert_allclose(gr.xi, np.rot90(g.eta), atol=1e-9)
    np.testing.assert_allclose(gr.eta, np.rot90(-g.xi), atol=1e-9)


def test_gradient_field_sampling():
    y, x = np.mgrid[0:6, 0:6].astype(float)
    grads = gradient(MaskedImage.full(2 * x))
    out = grads.sample(np.array([[2.5, 2.5], [100.0, 2.0]]))
    np.testing.assert_allclose(out[0], [2.0, 0.0])
    np.testing.assert_allclose(out[1], [0.0, 0.0])
    near = grads.sample(np.array([[2.4, 2.6]]), mode="nearest")
    np.testing.assert_allclose(near[0], [2.0, 0.0])
    assert isinstance(grads, GradientField)
