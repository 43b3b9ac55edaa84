"""
扫描线搜索、直线束对应与顶点网格测试
"""

import numpy as np
import pytest

from tofgrid.cluster import Label
from tofgrid.core import GeometricFailureError, GridSpec, NoPencilError, Pencil
from tofgrid.frame import build_frame
from tofgrid.hough import HoughGeometry, accumulate, accumulate_label
from tofgrid.sweep import (
    SweepResult,
    best_sweep,
    find_pencils,
    find_runs,
    grid_vertices,
    pencil_candidates,
    pencil_lines,
    resolve_pencils,
    sweep_histogram,
    total_score,
)

# 过 (5, 200) 的直线束 x = α + βy
APEX = (5.0, 200.0)
ALPHAS = np.array([-30.0, -15.0, 0.0, 15.0, 30.0, 45.0])


def _line_points(alphas, betas):
    y = np.arange(-60.0, 60.5, 0.5)
    return np.vstack([np.stack([a + b * y, y], axis=1) for a, b in zip(alphas, betas)])


def _pencil_points(alphas, apex=APEX):
    betas = (apex[0] - alphas) / apex[1]
    return _line_points(alphas, betas), betas


@pytest.fixture(scope="module")
def geometry():
    return HoughGeometry.for_image(176, 144)


@pytest.fixture(scope="module")
def pencil_H(geometry):
    pts, _ = _pencil_points(ALPHAS)
    H, _ = accumulate_label(pts, Label.LAMBDA, geometry)
    return H


# ==================== 直方图与簇 ====================

def test_sweep_histogram_zero_and_length(geometry):
    hist = sweep_histogram(np.zeros(geometry.shape), geometry, 120, 120)
    assert len(hist.h) == geometry.u1 + 1
    assert hist.w1 == geometry.u1
    assert not hist.h.any()


def test_sweep_histogram_single_bin(geometry):
    H = np.zeros(geometry.shape)
    H[120, 120] = 1.0
    hist = sweep_histogram(H, geometry, 120, 120)
    assert np.flatnonzero(hist.h > 1e-9).tolist() == [120]
    assert hist.h[120] == pytest.approx(1.0)


def test_find_runs_examples():
    runs = find_runs([0, 2, 4, 2, 0])
    assert len(runs) == 1
    assert (runs[0].start, runs[0].stop) == (1, 3)
    assert runs[0].score == pytest.approx(8 / 3)
    assert runs[0].centroid == pytest.approx(2.0)
    assert len(find_runs([1, 0, 1], 0.0)) == 2
    single = find_runs([5])
    assert (single[0].score, single[0].centroid) == (5.0, 0.0)
    assert find_runs([0.1, 0.3, 0.1], eps=0.2)[0].start == 1


def test_total_score():
    runs = find_runs([5, 0, 3, 0, 1])
    assert total_score(runs, 2) == 8.0
    assert total_score(find_runs([5]), 2) == 0.0
    assert total_score([], 1) == 0.0


# ==================== 最优扫描 ====================

def test_best_sweep_recovers_pencil(geometry, pencil_H):
    result = best_sweep(pencil_H, geometry, len(ALPHAS))
    assert result.score > 0
    assert len(result.runs) == len(ALPHAS)
    _, betas = _pencil_points(ALPHAS)
    alpha_hat = result.peaks[:, 0] - geometry.u0
    beta_hat = geometry.slope(result.peaks[:, 1])
    np.testing.assert_allclose(alpha_hat, ALPHAS, atol=0.5)
    np.testing.assert_allclose(beta_hat, betas, atol=0.02)
    # 质心按顺序排列
    assert np.all(np.diff([r.centroid for r in result.runs]) > 0)


@pytest.mark.parametrize("n", [4, 5, 8])
@pytest.mark.parametrize("apex", [(5.0, 200.0), (0.0, -150.0), None], ids=["apex_below", "apex_above", "parallel"])
def test_best_sweep_matches_generated_lines(geometry, n, apex):
    alphas = (np.arange(n) - (n - 1) / 2) * 10.0
    if apex is None:
        betas = np.full(n, 0.1)
        pts = _line_points(alphas, betas)
    else:
        pts, betas = _pencil_points(alphas, apex)
    assert np.abs(betas).max() <= 0.3
    H, _ = accumulate_label(pts, Label.LAMBDA, geometry)
    result = best_sweep(H, geometry, n)
    np.testing.assert_allclose(result.peaks[:, 0] - geometry.u0, alphas, atol=0.5)
    np.testing.assert_allclose(geometry.slope(result.peaks[:, 1]), betas, atol=0.02)


def test_best_sweep_scale_invariant(geometry, pencil_H):
    a = best_sweep(pencil_H, geometry, len(ALPHAS))
    b = best_sweep(4.0 * pencil_H, geometry, len(ALPHAS))
    assert (a.s, a.t) == (b.s, b.t)
    assert b.score == pytest.approx(4.0 * a.score)


def test_best_sweep_too_few_peaks(geometry):
    H = np.zeros(geometry.shape)
    for du in (-30, -10, 10, 30):
        H[120, 120 + du] = 1.0
    with pytest.raises(NoPencilError):
        best_sweep(H, geometry, 5)


def test_best_sweep_fronto_parallel(geometry):
    H = np.zeros(geometry.shape)
    for du in (-30, -15, 0, 15, 30, 45):
        H[120, 120 + du] = 1.0
    result = best_sweep(H, geometry, 6)
    assert (result.s, result.t) == (120, 120)
    np.testing.assert_allclose(result.peaks[:, 1], 120.0)
    np.testing.assert_allclose(result.peaks[:, 0], 120 + np.array([-30, -15, 0, 15, 30, 45]), atol=1e-9)


# ==================== 对应关系 ====================

def test_resolve_pencils_rule():
    assert resolve_pencils(10, 12, 9, 8) == (Label.LAMBDA, Label.MU)
    assert resolve_pencils(9, 8, 10, 12) == (Label.MU, Label.LAMBDA)
    assert resolve_pencils(5, 5, 5, 5) == (Label.MU, Label.LAMBDA)
    with pytest.raises(NoPencilError):
        resolve_pencils(0, 0, 0, 0)


def test_find_pencils_assigns_smaller_pencil_to_L():
    geometry = HoughGeometry.for_image(176, 144)
    lam_pts, _ = _pencil_points(np.array([-30.0, -10.0, 10.0, 30.0]))
    # μ 直线 y = α + βx，交换坐标后复用同一生成器
    mu_pts, _ = _pencil_points(np.array([-40.0, -20.0, 0.0, 20.0, 40.0]), apex=(0.0, 240.0))
    mu_pts = mu_pts[:, ::-1]
    points = np.vstack([lam_pts, mu_pts])
    labels = np.concatenate([np.full(len(lam_pts), Label.LAMBDA), np.full(len(mu_pts), Label.MU)])
    acc = accumulate(points, labels, geometry)
    found = find_pencils(acc, GridSpec(4, 5))
    assert (found.l_label, found.m_label) == (Label.LAMBDA, Label.MU)
    assert len(found.L.peaks) == 4 and len(found.M.peaks) == 5
    assert found.scores["l_lambda"] + found.scores["m_mu"] > found.scores["l_mu"] + found.scores["m_lambda"]


def _two_pencils(n_lambda, n_mu):
    geometry = HoughGeometry.for_image(176, 144)
    lam_alphas = (np.arange(n_lambda) - (n_lambda - 1) / 2) * 20.0
    mu_alphas = (np.arange(n_mu) - (n_mu - 1) / 2) * 20.0
    lam_pts, _ = _pencil_points(lam_alphas)
    mu_pts, _ = _pencil_points(mu_alphas, apex=(0.0, 240.0))
    mu_pts = mu_pts[:, ::-1]
    points = np.vstack([lam_pts, mu_pts])
    labels = np.concatenate([np.full(len(lam_pts), Label.LAMBDA), np.full(len(mu_pts), Label.MU)])
    return accumulate(points, labels, geometry)


def test_pencil_candidates_offer_swapped_correspondence():
    candidates = pencil_candidates(_two_pencils(5, 5), GridSpec(4, 5))
    assert len(candidates) == 2
    first, second = candidates
    s = first.scores
    assert (first.l_label, first.m_label) == resolve_pencils(s["l_lambda"], s["m_mu"], s["l_mu"], s["m_lambda"])
    assert (second.l_label, second.m_label) == (first.m_label, first.l_label)
    assert len(second.L.peaks) == 4 and len(second.M.peaks) == 5


def test_pencil_candidates_skip_impossible_correspondence():
    # λ 只有 4 条直线，无法充当 5 条的 M
    candidates = pencil_candidates(_two_pencils(4, 5), GridSpec(4, 5))
    assert len(candidates) == 1
    assert (candidates[0].l_label, candidates[0].m_label) == (Label.LAMBDA, Label.MU)


# ==================== 直线与顶点 ====================

def _result(label, peaks, s, t):
    return SweepResult(label=label, n=len(peaks), s=s, t=t, score=1.0, w1=10.0, peaks=np.array(peaks))


def test_pencil_lines_local_forms():
    g = HoughGeometry(40, 40, slope_unit=1.0)
    identity = build_frame((0.0, 0.0), 0.0)
    lam = pencil_lines(_result(Label.LAMBDA, [(g.u0 + 3, g.v0)], 20, 20), identity, g)
    np.testing.assert_allclose(lam.lines[0], [-1.0, 0.0, 3.0])
    mu = pencil_lines(_result(Label.MU, [(g.u0, g.v0 + 0.1)], 20, 20), identity, g)
    np.testing.assert_allclose(mu.lines[0], [0.1, -1.0, 0.0])


def test_pencil_lines_transport_to_image():
    g = HoughGeometry(40, 40, slope_unit=0.05)
    frame = build_frame((30.0, 20.0), np.deg2rad(10.0))
    pencil = pencil_lines(_result(Label.LAMBDA, [(g.u0 + 4, g.v0 + 2)], 16, 26), frame, g)
    # 局部直线 x = 4 + 0.1y 上的点映射到图像后仍在图像直线上
    local = np.array([[4.0 + 0.1 * y, y] for y in (-5.0, 0.0, 7.0)])
    image = frame.to_image(local)
    hom = np.hstack([image, np.ones((3, 1))])
    np.testing.assert_allclose(hom @ pencil.lines[0], 0.0, atol=1e-9)
    # 扫描线两端点对应直线的交点即直线束顶点
    assert abs(pencil.apex @ pencil.lines[0]) <= 1e-9 * np.linalg.norm(pencil.apex)


def test_grid_vertices_axis_aligned():
    L = Pencil(lines=np.array([[-1.0, 0.0, 1.0], [-1.0, 0.0, 2.0]]))
    M = Pencil(lines=np.array([[0.0, -1.0, 1.0], [0.0, -1.0, 2.0], [0.0, -1.0, 3.0]]))
    grid = grid_vertices(L, M)
    assert grid.points.shape == (2, 3, 2)
    np.testing.assert_allclose(grid.vertex(2, 3), [2.0, 3.0])
    np.testing.assert_allclose(grid.vertex(1, 2), [1.0, 2.0])


def test_grid_vertices_parallel_lines():
    L = Pencil(lines=np.array([[-1.0, 0.0, 1.0], [-1.0, 0.0, 2.0]]))
    M = Pencil(lines=np.array([[-1.0, 0.0, 5.0], [0.0, -1.0, 2.0], [0.0, -1.0, 3.0]]))
    with pytest.raises(GeometricFailureError):
        grid_vertices(L, M)


def test_grid_vertices_outside_bounding_box():
    L = Pencil(lines=np.array([[-1.0, 0.0, 1.0], [-1.0, 0.0, 500.0]]))
    M = Pencil(lines=np.array([[0.0, -1.0, 1.0], [0.0, -1.0, 2.0], [0.0, -1.0, 3.0]]))
    with pytest.raises(GeometricFailureError):
        grid_vertices(L, M, image_shape=(144, 176))
    grid_vertices(L, M)
