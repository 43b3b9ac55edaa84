"""
判决模块 - 损坏测试、错位测试与亚像素精化

两类误检：
- 损坏（corrupted）：某些直线不属于棋盘，外侧直线上的顶点间距比例偏离 1
- 错位（displaced）：整个网格平移了一格，边界直线进入解中；
  沿边界直线的梯度只有一种极性，正负投影和之比 G 远离 1

Usage:
    from tofgrid.verify import corrupted_test, displaced_test, subpixel_refine

    ok, worst_f = corrupted_test(grid, f=0.25)
    ok, worst_g = displaced_test(grid, grads, g=0.5)
    point, converged, refined = subpixel_refine(vertex, grads)
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from .core import Pencil, VertexGrid, line_through, normalize_line, to_hom
from .preprocess import GradientField

# 法方程条件数上限
MAX_CONDITION = 1e8


@dataclass
class Verdict:
    accepted: bool
    reason: str  # ok / corrupted / displaced
    worst_f: float = 0.0
    worst_g: float = 0.0


# ==================== 损坏测试 ====================

def _interval_ratios(points: np.ndarray) -> np.ndarray:
    """一条直线上相邻顶点间距两两之比 F_jk（j ≠ k）"""
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    num = gaps[:, None]
    den = gaps[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    off = ~np.eye(len(gaps), dtype=bool)
    return ratio[off]


def interval_ratio_F(grid: VertexGrid, i: int, j: int, k: int) -> float:
    """
    F = |v_i(j+1) − v_ij| / |v_i(k+1) − v_ik|，下标从 1 开始；分母为 0 时返回 inf
    """
    row = grid.points[i - 1]
    num = np.linalg.norm(row[j] - row[j - 1])
    den = np.linalg.norm(row[k] - row[k - 1])
    if den == 0:
        return float("inf")
    return float(num / den)


def corrupted_test(grid: VertexGrid, f: float) -> Tuple[bool, float]:
    """
    外侧行 i ∈ {1, ℓ} 与外侧列 j ∈ {1, m} 上所有 |1 − F_jk| ≤ f

    Returns:
        (是否通过, 最大偏差)
    """
    pts = grid.points
    lines = [pts[0], pts[-1], pts[:, 0], pts[:, -1]]
    worst = 0.0
    for line in lines:
        if len(line) < 3:
            continue
        dev = np.abs(1.0 - _interval_ratios(line))
        worst = max(worst, float(np.max(dev)))
    return bool(worst <= f), worst


# ==================== 错位测试 ====================

def transition_ratio_G(line: np.ndarray, start: np.ndarray, end: np.ndarray,
                       grads: GradientField, sampling: str = "bilinear") -> float:
    """
    沿线段 start→end 以单位步长采样梯度，正、负法向投影和之比

    负投影和为 0 或线段长度 < 1 时返回 inf。
    """
    unit = normalize_line(line)
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    d = float(np.linalg.norm(end - start))
    if d < 1:
        return float("inf")
    k = np.arange(int(np.floor(d)) + 1)
    pts = start + (k / d)[:, None] * (end - start)
    g = grads.sample(pts, mode=sampling)
    proj = unit[0] * g[:, 0] + unit[1] * g[:, 1]
    pos = proj[proj > 0].sum()
    neg = -proj[proj < 0].sum()
    if neg <= 0:
        return float("inf")
    return float(pos / neg)


def _extended(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """线段两端各延长半个平均顶点间距"""
    half = (points[-1] - points[0]) / (len(points) - 1) / 2
    return points[0] - half, points[-1] + half


def displaced_test(grid: VertexGrid, grads: GradientField, g: float,
                   L: Optional[Pencil] = None, M: Optional[Pencil] = None,
                   sampling: str = "bilinear") -> Tuple[bool, float]:
    """
    每条直线 |1 − G| ≤ g：行线段 v_i1..v_im，列线段 v_1j..v_ℓj

    线段两端各延长半个间距，使奇数个方块的线段也覆盖等量的正负过渡。
    未给出直线束时由线段端点确定直线。

    Returns:
        (是否通过, 最大偏差)
    """
    pts = grid.points
    segments = []
    for i in range(grid.rows):
        line = L.lines[i] if L is not None else line_through(to_hom(pts[i, 0]), to_hom(pts[i, -1]))
        segments.append((line, pts[i]))
    for j in range(grid.cols):
        line = M.lines[j] if M is not None else line_through(to_hom(pts[0, j]), to_hom(pts[-1, j]))
        segments.append((line, pts[:, j]))

    worst = 0.0
    for line, along in segments:
        a, b = _extended(along)
        ratio = transition_ratio_G(line, a, b, grads, sampling)
        worst = max(worst, abs(1.0 - ratio))
    return bool(worst <= g), worst


def verify_grid(grid: VertexGrid, grads: GradientField, f: float, g: float,
                L: Optional[Pencil] = None, M: Optional[Pencil] = None,
                sampling: str = "bilinear") -> Verdict:
    """先做损坏测试，再做错位测试"""
    ok_f, worst_f = corrupted_test(grid, f)
    if not ok_f:
        return Verdict(False, "corrupted", worst_f=worst_f)
    ok_g, worst_g = displaced_test(grid, grads, g, L, M, sampling)
    if not ok_g:
        return Verdict(False, "displaced", worst_f=worst_f, worst_g=worst_g)
    return Verdict(True, "ok", worst_f=worst_f, worst_g=worst_g)


# ==================== 亚像素精化 ====================

def subpixel_refine(vertex, grads: GradientField, window: int = 3, max_iter: int = 20,
                    tol: float = 1e-3, weighting: str = "magnitude") -> Tuple[np.ndarray, bool, bool]:
    """
    迭代 x0 ← (Σ G_p)⁻¹ Σ G_p p，窗口以当前估计（非整数）为中心

    采样点 p = x0 + (i, j)，|i|, |j| ≤ window，梯度经 GradientField.sample 双线性插值。
    G_p = (ξ, η)ᵀ(ξ, η)；weighting="magnitude" 时再除以 ρ_p，即 ρ_p·n nᵀ。

    Returns:
        (点, 是否收敛, 是否精化)；窗口越界或法方程奇异时原样返回且未精化
    """
    start = np.asarray(vertex, dtype=float).copy()
    x = start.copy()
    height, width = grads.shape
    offsets = np.arange(-window, window + 1, dtype=float)
    oy, ox = np.meshgrid(offsets, offsets, indexing="ij")
    grid = np.stack([ox.ravel(), oy.ravel()], axis=1)

    for _ in range(max_iter):
        if (x[0] - window < 0 or x[1] - window < 0
                or x[0] + window > width - 1 or x[1] + window > height - 1):
            return start, False, False
        p = x + grid
        g = grads.sample(p)
        gx, gy = g[:, 0], g[:, 1]
        w = np.ones_like(gx)
        if weighting == "magnitude":
            rho = np.hypot(gx, gy)
            w = np.where(rho > 0, 1.0 / np.where(rho > 0, rho, 1.0), 0.0)
        a = np.array([
            [np.sum(w * gx * gx), np.sum(w * gx * gy)],
            [np.sum(w * gx * gy), np.sum(w * gy * gy)],
        ])
        b = np.array([
            np.sum(w * (gx * gx * p[:, 0] + gx * gy * p[:, 1])),
            np.sum(w * (gx * gy * p[:, 0] + gy * gy * p[:, 1])),
        ])
        if not np.any(a) or np.linalg.cond(a) > MAX_CONDITION:
            return start, False, False
        new = np.linalg.solve(a, b)
        step = float(np.linalg.norm(new - x))
        x = new
        if step < tol:
            return x, True, True
    logger.debug("[Verify] 亚像素精化未在 {} 次迭代内收敛", max_iter)
    return x, False, True
