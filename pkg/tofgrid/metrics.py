"""
评估指标模块 - 最优单应拟合、几何误差与光度误差

几何误差：以理想网格为模型，先用归一化 DLT 初始化单应，
再用 Levenberg–Marquardt 最小化重投影误差，报告顶点 RMS 距离。
光度误差：5×5 窗口内 (ξ, η)·(p − v) 的 RMS，梯度按窗口平均 ρ 归一化。

Usage:
    from tofgrid.metrics import fit_dlt, refine_lm, geometric_error

    H = fit_dlt(model_points, observed_points)
    fit = refine_lm(H, model_points, observed_points)
    rms = geometric_error(model_points, observed_points)
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from loguru import logger

from .core import DegenerateConfigurationError, VertexGrid, project
from .preprocess import GradientField

PointsLike = Union[VertexGrid, np.ndarray]


def _as_points(points: PointsLike) -> np.ndarray:
    if isinstance(points, VertexGrid):
        return points.flat()
    return np.asarray(points, dtype=float).reshape(-1, 2)


def normalize_homography(H: np.ndarray) -> np.ndarray:
    """Frobenius 范数归一化为 1，右下角元素非零时取正"""
    H = np.asarray(H, dtype=float)
    H = H / np.linalg.norm(H)
    if H[2, 2] < 0:
        H = -H
    return H


# ==================== DLT ====================

def _similarity_normalizer(pts: np.ndarray) -> np.ndarray:
    """平移到质心并缩放，使到质心的平均距离为 √2"""
    centre = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centre, axis=1).mean()
    if dist <= 0:
        raise DegenerateConfigurationError("点集退化为单点")
    k = np.sqrt(2) / dist
    return np.array([[k, 0, -k * centre[0]], [0, k, -k * centre[1]], [0, 0, 1]])


def fit_dlt(model: PointsLike, observed: PointsLike) -> np.ndarray:
    """
    归一化 DLT：observed ≃ H·model

    Raises:
        DegenerateConfigurationError: 少于 4 组对应、点共线或方程组秩亏
    """
    src = _as_points(model)
    dst = _as_points(observed)
    if src.shape != dst.shape:
        raise ValueError(f"模型与观测点数不一致: {src.shape} vs {dst.shape}")
    if len(src) < 4:
        raise DegenerateConfigurationError(f"至少需要 4 组对应，收到 {len(src)}")

    t_src = _similarity_normalizer(src)
    t_dst = _similarity_normalizer(dst)
    a = project(t_src, src)
    b = project(t_dst, dst)

    rows = []
    for (x, y), (u, v) in zip(a, b):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    A = np.array(rows)
    _, sv, vt = np.linalg.svd(A)
    # 解空间唯一要求第 8 个奇异值明显大于 0
    if sv[7] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("DLT 方程组秩亏（点共线或重复）")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(t_dst) @ Hn @ t_src
    if abs(np.linalg.det(normalize_homography(H))) < 1e-12:
        raise DegenerateConfigurationError("估计的单应矩阵奇异")
    return normalize_homography(H)


# ==================== Levenberg–Marquardt ====================

@dataclass
class LMResult:
    H: np.ndarray
    initial_cost: float
    cost: float
    iterations: int
    finite: bool = True


def _residuals(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return (dst - project(h.reshape(3, 3), src)).ravel()


def _jacobian(h: np.ndarray, src: np.ndarray) -> np.ndarray:
    """投影坐标对 9 个单应元素的解析雅可比，形状 (2N, 9)"""
    H = h.reshape(3, 3)
    p = np.hstack([src, np.ones((len(src), 1))])
    q = p @ H.T
    w = q[:, 2:3]
    x = q[:, 0:1] / w
    y = q[:, 1:2] / w
    jx = np.hstack([p / w, np.zeros_like(p), -x * p / w])
    jy = np.hstack([np.zeros_like(p), p / w, -y * p / w])
    J = np.empty((2 * len(src), 9))
    J[0::2] = jx
    J[1::2] = jy
    return J


def refine_lm(H0: np.ndarray, model: PointsLike, observed: PointsLike,
              max_iter: int = 100) -> LMResult:
    """
    最小化 Σ|observed − project(H, model)|²

    9 参数 Marquardt 阻尼，每步后 Frobenius 归一化；只接受使代价下降的步长。
    相对代价变化 < 1e-12、步长 < 1e-12 或达到 max_iter 时停止。
    迭代中出现非有限代价时返回目前最优解并标记 finite=False。
    """
    src = _as_points(model)
    dst = _as_points(observed)
    h = normalize_homography(H0).ravel()
    r = _residuals(h, src, dst)
    cost = float(r @ r)
    initial = cost
    if not np.isfinite(cost):
        logger.warning("[Metrics] 初始单应的代价非有限")
        return LMResult(H0, initial, cost, 0, finite=False)

    damping = 1e-3
    finite = True
    it = 0
    while it < max_iter and cost > 0:
        it += 1
        J = _jacobian(h, src)
        jtj = J.T @ J
        grad = J.T @ r
        improved = False
        while damping < 1e16:
            lhs = jtj + damping * np.diag(np.diag(jtj) + 1e-12)
            try:
                step = np.linalg.solve(lhs, grad)
            except np.linalg.LinAlgError:
                damping *= 10
                continue
            cand = normalize_homography((h + step).reshape(3, 3)).ravel()
            r_new = _residuals(cand, src, dst)
            new_cost = float(r_new @ r_new)
            if not np.isfinite(new_cost):
                finite = False
                logger.warning("[Metrics] LM 迭代出现非有限代价，返回当前最优解")
                break
            if new_cost < cost:
                improved = True
                rel = (cost - new_cost) / cost
                step_norm = float(np.linalg.norm(cand - h))
                h, r, cost = cand, r_new, new_cost
                damping = max(damping / 10, 1e-12)
                break
            damping *= 10
        if not improved or not finite:
            break
        if rel < 1e-12 or step_norm < 1e-12:
            break
    return LMResult(h.reshape(3, 3), initial, cost, it, finite=finite)


def fit_homography(model: PointsLike, observed: PointsLike) -> LMResult:
    """DLT 初始化 + LM 精化"""
    return refine_lm(fit_dlt(model, observed), model, observed)


def geometric_error(model: PointsLike, observed: PointsLike) -> float:
    """最优单应下各顶点重投影距离的 RMS（像素）"""
    fit = fit_homography(model, observed)
    n = len(_as_points(model))
    return float(np.sqrt(fit.cost / n))


# ==================== 光度误差 ====================

def photometric_error(vertices: PointsLike, grads: GradientField, window: int = 5) -> float:
    """
    各顶点 window×window 窗口内 (ξ, η)·(p − v) / mean(ρ) 的 RMS

    平均 ρ 为 0 的窗口贡献零残差；越界像素跳过。
    """
    pts = _as_points(vertices)
    half = window // 2
    height, width = grads.shape
    offsets = np.arange(-half, half + 1)
    oy, ox = np.meshgrid(offsets, offsets, indexing="ij")
    residuals = []
    for vx, vy in pts:
        cx, cy = int(np.floor(vx + 0.5)), int(np.floor(vy + 0.5))
        px = (cx + ox).ravel()
        py = (cy + oy).ravel()
        inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        px, py = px[inside], py[inside]
        if px.size == 0:
            continue
        gx = grads.xi[py, px]
        gy = grads.eta[py, px]
        mean_rho = np.hypot(gx, gy).mean()
        if mean_rho <= 0:
            residuals.append(np.zeros(px.size))
            continue
        residuals.append((gx * (px - vx) + gy * (py - vy)) / mean_rho)
    if not residuals:
        return 0.0
    r = np.concatenate(residuals)
    return float(np.sqrt(np.mean(r * r)))


# ==================== 网格比较 ====================

def lattice_deviation(detected: PointsLike, truth: PointsLike, shape: Tuple[int, int] = None) -> float:
    """
    两个 ℓ×m 网格在 i、j 方向翻转意义下的最小最大顶点距离
    """
    a = detected.points if isinstance(detected, VertexGrid) else np.asarray(detected, dtype=float)
    b = truth.points if isinstance(truth, VertexGrid) else np.asarray(truth, dtype=float)
    if shape is not None:
        a = a.reshape(shape + (2,))
        b = b.reshape(shape + (2,))
    if a.shape != b.shape:
        return float("inf")
    best = float("inf")
    for flip_i in (False, True):
        for flip_j in (False, True):
            c = a[::-1] if flip_i else a
            c = c[:, ::-1] if flip_j else c
            best = min(best, float(np.max(np.linalg.norm(c - b, axis=-1))))
    return best
