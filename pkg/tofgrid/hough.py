"""
Hough 变换模块 - 笛卡尔对偶 Hough 累加器 H_λ、H_μ

局部坐标下 λ 直线写作 x = α + βy，μ 直线写作 y = α + βx。
每个带标签的点 (x, y) 在 (u, v) 平面对应一条直线：
    u_λ(x, y, v) = u0 + x − y·(v − v0)·k
    u_μ(x, y, v) = u0 + y − x·(v − v0)·k
其中 k 为每个 v 单元对应的斜率。同一条图像直线上的点在 (u0 + α, v0 + β/k) 处相交。

Usage:
    from tofgrid.hough import HoughGeometry, accumulate

    geom = HoughGeometry.for_image(176, 144)
    acc = accumulate(local_points, labels, geom)
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from loguru import logger

from .cluster import Label
from .pnmio import write_pgm


@dataclass(frozen=True)
class HoughGeometry:
    """累加器几何：u ∈ [0, u1]，v ∈ [0, v1]，slope_unit 为每个 v 单元的斜率"""
    u1: int
    v1: int
    slope_unit: float = 1.0

    def __post_init__(self):
        if self.u1 < 2 or self.v1 < 2:
            raise ValueError(f"累加器尺寸至少为 2，收到 u1={self.u1}, v1={self.v1}")

    @property
    def u0(self) -> float:
        return self.u1 / 2

    @property
    def v0(self) -> float:
        return self.v1 / 2

    @property
    def shape(self) -> Tuple[int, int]:
        """数组形状 (v1+1, u1+1)，按 [v, u] 索引"""
        return (self.v1 + 1, self.u1 + 1)

    @classmethod
    def for_image(cls, width: int, height: int, scale: float = 1.5) -> "HoughGeometry":
        """u1 = v1 = round(scale·(X+Y)/2)，v 全范围覆盖斜率 (−1, 1)"""
        n = max(int(round(scale * (width + height) / 2)), 2)
        return cls(u1=n, v1=n, slope_unit=2.0 / n)

    def slope(self, v) -> np.ndarray:
        """v 坐标 → 斜率 β"""
        return (np.asarray(v, dtype=float) - self.v0) * self.slope_unit


@dataclass
class HoughAccumulator:
    """两个累加器与落入数组的采样数"""
    lam: np.ndarray
    mu: np.ndarray
    geometry: HoughGeometry
    samples: int = 0

    def array(self, label: int) -> np.ndarray:
        return self.lam if label == Label.LAMBDA else self.mu


def hough_u(x, y, v, label: int, u0: float, v0: float, slope_unit: float = 1.0):
    """
    点 (x, y) 在第 v 行对应的 u 坐标；μ 标签交换 x、y
    """
    if label == Label.MU:
        x, y = y, x
    return u0 + np.asarray(x, dtype=float) - np.asarray(y, dtype=float) * (np.asarray(v, dtype=float) - v0) * slope_unit


def line_from_peak(u: float, v: float, label: int, geometry: HoughGeometry) -> np.ndarray:
    """
    Hough 点 (u, v) → 局部齐次直线

    λ: (−1, β, α) 即 x = α + βy；μ: (β, −1, α) 即 y = α + βx
    """
    alpha = u - geometry.u0
    beta = float(geometry.slope(v))
    if label == Label.MU:
        return np.array([beta, -1.0, alpha])
    return np.array([-1.0, beta, alpha])


def _splat(u: np.ndarray, v: np.ndarray, geometry: HoughGeometry) -> Tuple[np.ndarray, int]:
    """双线性溅射，返回扁平化数组与落入数组的采样数"""
    inside = (u >= 0) & (u <= geometry.u1) & (v >= 0) & (v <= geometry.v1)
    u = u[inside]
    v = v[inside]
    iu = np.minimum(np.floor(u).astype(np.int64), geometry.u1 - 1)
    iv = np.minimum(np.floor(v).astype(np.int64), geometry.v1 - 1)
    du = u - iu
    dv = v - iv
    width = geometry.u1 + 1
    idx = np.concatenate([
        iv * width + iu,
        iv * width + iu + 1,
        (iv + 1) * width + iu,
        (iv + 1) * width + iu + 1,
    ])
    weights = np.concatenate([
        (1 - du) * (1 - dv),
        du * (1 - dv),
        (1 - du) * dv,
        du * dv,
    ])
    size = geometry.shape[0] * geometry.shape[1]
    flat = np.bincount(idx, weights=weights, minlength=size)
    return flat, int(inside.sum())


def accumulate_label(points: np.ndarray, label: int, geometry: HoughGeometry) -> Tuple[np.ndarray, int]:
    """
    单个标签的累加器

    每个点在 (u, v) 平面的线段 (s, 0)–(t, v1) 上均匀采样 floor(w1)+1 个位置，
    w1 为线段长度；每个采样按双线性权重（和为 1）溅射到最近的四个单元。
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(geometry.shape), 0
    x, y = pts[:, 0], pts[:, 1]
    g = geometry
    s = hough_u(x, y, 0.0, label, g.u0, g.v0, g.slope_unit)
    t = hough_u(x, y, float(g.v1), label, g.u0, g.v0, g.slope_unit)
    w1 = np.hypot(t - s, g.v1)
    counts = np.floor(w1).astype(np.int64) + 1

    owner = np.repeat(np.arange(len(pts)), counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(counts.sum()) - np.repeat(starts, counts)
    frac = k / (counts[owner] - 1)
    u = s[owner] + frac * (t - s)[owner]
    v = frac * g.v1

    flat, n_in = _splat(u, v, g)
    return flat.reshape(g.shape), n_in


def accumulate(points: np.ndarray, labels: np.ndarray, geometry: HoughGeometry) -> HoughAccumulator:
    """
    构造 H_λ 与 H_μ

    Args:
        points: (N, 2) 局部坐标
        labels: (N,) 标签，∅ 像素被忽略
        geometry: 累加器几何
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    labels = np.asarray(labels).ravel()
    lam, n_lam = accumulate_label(pts[labels == Label.LAMBDA], Label.LAMBDA, geometry)
    mu, n_mu = accumulate_label(pts[labels == Label.MU], Label.MU, geometry)
    logger.debug("[Hough] 累加器 {}×{}，采样 {} + {}", geometry.u1 + 1, geometry.v1 + 1, n_lam, n_mu)
    return HoughAccumulator(lam=lam, mu=mu, geometry=geometry, samples=n_lam + n_mu)


def to_pgm(array: np.ndarray) -> bytes:
    """累加器调试图：按最大值归一化到 8 位"""
    peak = float(np.max(array)) if array.size else 0.0
    scaled = array * (255.0 / peak) if peak > 0 else np.zeros_like(array)
    return write_pgm(scaled, maxval=255)
