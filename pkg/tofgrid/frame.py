"""
局部坐标模块 - 以棋盘为中心、与棋盘对齐的欧氏坐标系 E

E = R(−φ) ∘ T(−c)：先平移到质心 c，再旋转 −φ。
局部坐标下 λ 边缘近似竖直，μ 边缘近似水平。

Usage:
    from tofgrid.frame import board_centroid, build_frame

    frame = build_frame(board_centroid(masked), phi)
    local = frame.to_local(points)
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .cluster import ClusterModel, Label, double_angle
from .core import NoBoardError
from .pnmio import MaskedImage
from .preprocess import GradientField


def board_centroid(masked: MaskedImage) -> Tuple[float, float]:
    """
    以 (1 − B_norm) 为权重的像素坐标质心，B 在非空像素上按 min/max 归一化到 [0, 1]

    深色方块权重大，因此质心落在图案中心附近。

    Raises:
        NoBoardError: 全部为空或总权重 < 1e-9
    """
    valid = masked.valid
    if not valid.any():
        raise NoBoardError("掩膜中没有非空像素")
    vals = masked.values[valid]
    lo, hi = vals.min(), vals.max()
    if hi > lo:
        weights = 1.0 - (vals - lo) / (hi - lo)
    else:
        weights = np.ones_like(vals)
    total = weights.sum()
    if total < 1e-9:
        raise NoBoardError("质心权重总和过小")
    ys, xs = np.nonzero(valid)
    return float((weights * xs).sum() / total), float((weights * ys).sum() / total)


@dataclass(frozen=True)
class LocalFrame:
    """局部坐标系：centre 为图像坐标，phi 为弧度"""
    centre: Tuple[float, float]
    phi: float

    @property
    def rotation(self) -> np.ndarray:
        """R(−φ)"""
        c, s = np.cos(self.phi), np.sin(self.phi)
        return np.array([[c, s], [-s, c]])

    @property
    def matrix(self) -> np.ndarray:
        """3×3 齐次变换 E（图像 → 局部）"""
        r = self.rotation
        e = np.eye(3)
        e[:2, :2] = r
        e[:2, 2] = -r @ np.asarray(self.centre)
        return e

    def to_local(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - np.asarray(self.centre)) @ self.rotation.T

    def to_image(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation + np.asarray(self.centre)

    def line_to_image(self, line) -> np.ndarray:
        """局部齐次直线 Λ → 图像直线 Λ·E"""
        return np.asarray(line, dtype=float) @ self.matrix

    def point_to_image(self, point) -> np.ndarray:
        """局部齐次点 → 图像齐次点 E⁻¹·p"""
        return np.linalg.inv(self.matrix) @ np.asarray(point, dtype=float)


def build_frame(centroid: Tuple[float, float], phi: float) -> LocalFrame:
    if not np.isfinite(phi):
        raise ValueError(f"φ 必须有限: {phi}")
    return LocalFrame(centre=(float(centroid[0]), float(centroid[1])), phi=float(phi))


def frame_angle(model: ClusterModel, grads: GradientField, labels: np.ndarray) -> float:
    """
    局部坐标旋转角 φ

    pca：主轴角的一半；ransac：λ 像素双角向量均值方向角的一半。
    """
    if model.method == "pca" and model.axis_angle is not None:
        return 0.5 * float(np.arctan2(np.sin(model.axis_angle), np.cos(model.axis_angle)))
    mask = labels == Label.LAMBDA
    if not mask.any():
        return 0.0
    sigma, tau = double_angle(grads.xi[mask], grads.eta[mask])
    return 0.5 * float(np.arctan2(tau.sum(), sigma.sum()))
