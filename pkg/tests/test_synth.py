"""
合成渲染、梯度传输与倾斜实验测试
"""

import numpy as np
import pytest

from tofgrid.cluster import Label
from tofgrid.core import GenerationError, ideal_grid, project
from tofgrid.pnmio import MaskedImage
from tofgrid.preprocess import GradientField, gradient
from tofgrid.synth import (
    BACKGROUND_DEPTH,
    BLACK,
    BOARD_DEPTH,
    WHITE,
    board_homography,
    consistency,
    curve_to_csv,
    homography_jacobian,
    random_scene,
    render_board,
    render_clutter,
    SlantPoint,
    rotation_homography,
    slant_experiment,
    transport_gradients,
)

WIDTH, HEIGHT = 176, 144


@pytest.fixture(scope="module")
def base_grads(spec, fronto_scene):
    """带噪声的正视基准图"""
    scene = render_board(spec, fronto_scene.H, WIDTH, HEIGHT, noise=2.0, seed=21, with_depth=False)
    return gradient(MaskedImage.full(scene.amplitude.data))


# ==================== 渲染 ====================

def test_fronto_homography_layout(spec):
    H = board_homography(spec, WIDTH, HEIGHT, 0.0, 0.0, 0.0, square_px=12.0)
    np.testing.assert_allclose(project(H, np.array([[0.0, 0.0], [1.0, 1.0]])), [[87.5, 71.5], [99.5, 83.5]])


def test_render_board_levels(fronto_scene):
    amp = fronto_scene.amplitude.data
    assert amp[47, 57] == pytest.approx(BLACK)
    assert amp[47, 69] == pytest.approx(WHITE)
    assert amp[47, 45] == pytest.approx(WHITE)
    assert amp[2, 2] == pytest.approx(WHITE)


def test_render_board_depth(fronto_scene):
    depth = fronto_scene.depth.data
    assert depth[71, 87] == BOARD_DEPTH
    assert depth[2, 2] == BACKGROUND_DEPTH


def test_ground_truth_is_projection(fronto_scene, spec):
    expected = project(fronto_scene.H, ideal_grid(spec).points)
    np.testing.assert_allclose(fronto_scene.truth.points, expected)
    np.testing.assert_allclose(fronto_scene.truth.vertex(1, 1), [63.5, 53.5])


def test_render_board_off_image(spec):
    H = board_homography(spec, WIDTH, HEIGHT, 0.0, 0.0, 0.0, square_px=40.0)
    with pytest.raises(GenerationError):
        render_board(spec, H, WIDTH, HEIGHT)


def test_render_board_noise_statistics(spec, fronto_scene):
    noisy = render_board(spec, fronto_scene.H, WIDTH, HEIGHT, noise=2.0, seed=5, with_depth=False)
    diff = np.abs(noisy.amplitude.data - fronto_scene.amplitude.data)
    assert diff.mean() == pytest.approx(2.0 * np.sqrt(2.0 / np.pi), abs=0.1)


def test_render_board_seeded(spec, fronto_scene):
    a = render_board(spec, fronto_scene.H, WIDTH, HEIGHT, noise=2.0, seed=5, with_depth=False)
    b = render_board(spec, fronto_scene.H, WIDTH, HEIGHT, noise=2.0, seed=5, with_depth=False)
    c = render_board(spec, fronto_scene.H, WIDTH, HEIGHT, noise=2.0, seed=6, with_depth=False)
    np.testing.assert_array_equal(a.amplitude.data, b.amplitude.data)
    assert not np.array_equal(a.amplitude.data, c.amplitude.data)


def test_render_board_crop(spec, fronto_scene):
    scene = render_board(spec, fronto_scene.H, WIDTH, HEIGHT, crop="left")
    assert scene.kind == "cropped"
    # 左侧白边与第一列方块置空
    assert scene.amplitude.data[71, 50] == 0.0
    assert not scene.depth.valid[71, 50]
    assert scene.depth.valid[71, 120]


def test_render_clutter():
    scene = render_clutter(WIDTH, HEIGHT, seed=3)
    assert scene.kind == "clutter"
    assert scene.truth is None and scene.H is None
    assert np.all(scene.depth.data == BOARD_DEPTH)
    assert scene.amplitude.data.std() > 5.0


def test_random_scene_deterministic(spec):
    a = random_scene(spec, WIDTH, HEIGHT, seed=9, slant_max_deg=45.0)
    b = random_scene(spec, WIDTH, HEIGHT, seed=9, slant_max_deg=45.0)
    c = random_scene(spec, WIDTH, HEIGHT, seed=10, slant_max_deg=45.0)
    np.testing.assert_array_equal(a.amplitude.data, b.amplitude.data)
    np.testing.assert_array_equal(a.H, b.H)
    assert not np.array_equal(a.H, c.H)


def test_random_scene_kinds(spec):
    assert random_scene(spec, WIDTH, HEIGHT, seed=1, kind="clutter").kind == "clutter"
    assert random_scene(spec, WIDTH, HEIGHT, seed=1, kind="cropped").kind == "cropped"


# ==================== 梯度传输 ====================

def test_transport_identity():
    g = GradientField(np.array([[1.0, -2.0, 0.0]]), np.array([[0.5, 3.0, 0.0]]))
    moved = transport_gradients(g, np.eye(3))
    np.testing.assert_allclose(moved.xi, g.xi)
    np.testing.assert_allclose(moved.eta, g.eta)


def test_transport_rotation():
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    g = GradientField(np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 2.0, 0.0]]))
    moved = transport_gradients(g, R)
    np.testing.assert_allclose(moved.xi, [[0.0, -2.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(moved.eta, [[1.0, 0.0, 0.0]], atol=1e-12)


def _near_identity(rng):
    H = np.eye(3)
    H[:2, :2] += 0.2 * rng.standard_normal((2, 2))
    H[:2, 2] = 1e-3 * rng.standard_normal(2)
    H[2, :2] = 1e-3 * rng.standard_normal(2)
    return H


@pytest.mark.parametrize("seed", range(8))
def test_transport_composes(seed):
    rng = np.random.default_rng(seed)
    H1, H2 = _near_identity(rng), _near_identity(rng)
    g = GradientField(rng.uniform(-50, 50, size=(4, 5)), rng.uniform(-50, 50, size=(4, 5)))
    direct = transport_gradients(g, H1 @ H2)
    chained = transport_gradients(transport_gradients(g, H2), H1)
    np.testing.assert_allclose(chained.xi, direct.xi, rtol=0, atol=1e-9)
    np.testing.assert_allclose(chained.eta, direct.eta, rtol=0, atol=1e-9)


def test_homography_jacobian_affine():
    A = np.array([[2.0, 0.5, 10.0], [-0.3, 1.5, 4.0], [0.0, 0.0, 1.0]])
    J = homography_jacobian(A, np.array([[0.0, 0.0], [50.0, -20.0]]))
    for k in range(2):
        np.testing.assert_allclose(J[k, :2, :2], A[:2, :2])
        assert J[k, 2, 2] == 1.0


def test_homography_jacobian_matches_finite_difference():
    H = rotation_homography(np.deg2rad(40.0), 0.3, 0.2, np.array([[176.0, 0, 87.5], [0, 176.0, 71.5], [0, 0, 1]]))
    p = np.array([30.0, 100.0])
    J = homography_jacobian(H, p[None])[0, :2, :2]
    eps = 1e-5
    numeric = np.column_stack([
        (project(H, p + [eps, 0.0]) - project(H, p - [eps, 0.0])) / (2 * eps),
        (project(H, p + [0.0, eps]) - project(H, p - [0.0, eps])) / (2 * eps),
    ])
    np.testing.assert_allclose(J, numeric, rtol=1e-5, atol=1e-7)


def test_consistency_examples():
    a = np.array([Label.LAMBDA, Label.MU, Label.NULL, Label.MU])
    assert consistency(a, a) == 1.0
    b = np.array([Label.LAMBDA, Label.LAMBDA, Label.MU, Label.NULL])
    assert consistency(b, a) == pytest.approx(1 / 3)
    assert consistency(a, np.zeros(4, dtype=np.uint8)) is None
    with pytest.raises(ValueError):
        consistency(a, a[:2])


# ==================== 倾斜实验 ====================

def test_slant_zero_is_consistent(base_grads):
    curve = slant_experiment(base_grads, [0.0], trials=5, seed=1, sample_size=2000)
    assert curve[0].defined == 5
    assert curve[0].mean >= 0.999


def test_slant_experiment_deterministic(base_grads):
    a = slant_experiment(base_grads, [0.0, 40.0], trials=4, seed=2, sample_size=1500)
    b = slant_experiment(base_grads, [0.0, 40.0], trials=4, seed=2, sample_size=1500)
    assert a == b


def test_slant_experiment_jobs_do_not_change_result(base_grads):
    a = slant_experiment(base_grads, [20.0], trials=6, seed=3, sample_size=1500, jobs=1)
    b = slant_experiment(base_grads, [20.0], trials=6, seed=3, sample_size=1500, jobs=3)
    assert a == b


@pytest.mark.slow
def test_slant_curve_declines(base_grads):
    curve = slant_experiment(base_grads, [0.0, 60.0], trials=30, seed=4)
    assert curve[0].mean >= curve[1].mean - 0.01


@pytest.mark.slow
def test_slant_curve_ransac(base_grads):
    curve = slant_experiment(base_grads, [0.0, 30.0], trials=10, seed=5, method="ransac", ransac_iters=50)
    assert curve[0].mean >= 0.99
    assert curve[1].defined > 0


def test_curve_to_csv():
    text = curve_to_csv([SlantPoint(0.0, 1.0, 0.0, 3), SlantPoint(10.0, 0.95, 0.01234567, 3)])
    lines = text.splitlines()
    assert lines[0] == "slant_deg,mean_consistency,stddev"
    assert lines[1] == "0,1.000000,0.000000"
    assert lines[2] == "10,0.950000,0.012346"
