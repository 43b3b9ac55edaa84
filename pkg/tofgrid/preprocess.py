"""
预处理模块 - 深度分割、边缘腐蚀与梯度计算

流程：
1. 按深度区间 d0 < D < d1 粗分割幅值图，区间外像素置空
2. 方形结构元素腐蚀，去除分割边缘的无关梯度
3. 核 Δ = (−1/2, 0, 1/2) 计算梯度，不做预平滑

Usage:
    from tofgrid.preprocess import segment_depth, erode_mask, gradient

    masked = erode_mask(segment_depth(amp, depth, 1.0, 2.0), r=2)
    grads = gradient(masked)
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger
from scipy import ndimage

from .core import ConfigError
from .pnmio import AmplitudeImage, DepthImage, MaskedImage, check_pair


# ==================== 梯度场 ====================

@dataclass
class GradientField:
    """逐像素梯度 (ξ, η)，数组形状 (Y, X)"""
    xi: np.ndarray
    eta: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return np.hypot(self.xi, self.eta)

    @property
    def theta(self) -> np.ndarray:
        return np.arctan2(self.eta, self.xi)

    @property
    def shape(self):
        return self.xi.shape

    def sample(self, points: np.ndarray, mode: str = "bilinear") -> np.ndarray:
        """
        在非整数位置采样梯度

        Args:
            points: (N, 2) 像素坐标 (x, y)
            mode: bilinear（越界取 0）或 nearest（越界取 0）

        Returns:
            (N, 2) 的 (ξ, η)
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if mode == "nearest":
            ix = np.rint(pts[:, 0]).astype(int)
            iy = np.rint(pts[:, 1]).astype(int)
            inside = (ix >= 0) & (ix < self.shape[1]) & (iy >= 0) & (iy < self.shape[0])
            out = np.zeros((len(pts), 2))
            out[inside, 0] = self.xi[iy[inside], ix[inside]]
            out[inside, 1] = self.eta[iy[inside], ix[inside]]
            return out
        coords = np.vstack([pts[:, 1], pts[:, 0]])
        xi = ndimage.map_coordinates(self.xi, coords, order=1, mode="constant", cval=0.0)
        eta = ndimage.map_coordinates(self.eta, coords, order=1, mode="constant", cval=0.0)
        return np.stack([xi, eta], axis=1)

    def nonzero(self, eps: float = 1e-12) -> np.ndarray:
        """ρ 高于机器精度的像素掩膜"""
        return self.rho > eps


# ==================== 分割与腐蚀 ====================

def segment_depth(amp: AmplitudeImage, depth: Optional[DepthImage],
                  d0: Optional[float] = None, d1: Optional[float] = None) -> MaskedImage:
    """
    深度分割：B = A 当 d0 < D < d1，否则 ∅；无效深度像素一律置空

    未提供深度图时进入仅幅值模式，B = A。

    Raises:
        ConfigError: 提供深度时 d0/d1 缺失或 d0 ≥ d1
        DimensionMismatchError: A 与 D 尺寸不一致
    """
    if depth is None:
        return MaskedImage.full(amp.data)
    if d0 is None or d1 is None:
        raise ConfigError("提供深度图时必须设置 d0 和 d1")
    if d0 >= d1:
        raise ConfigError(f"要求 d0 < d1，收到 d0={d0}, d1={d1}")
    check_pair(amp, depth)
    keep = depth.valid & (depth.data > d0) & (depth.data < d1)
    logger.debug("[Preprocess] 深度分割保留 {}/{} 像素", int(keep.sum()), keep.size)
    return MaskedImage(amp.data, keep)


def erode_mask(masked: MaskedImage, r: int) -> MaskedImage:
    """
    方形（切比雪夫距离 r）结构元素腐蚀；r = 0 时原样返回

    图像外部视为非空，仅空值像素向内侵蚀。
    """
    if r < 0:
        raise ConfigError(f"腐蚀半径不能为负: {r}")
    if r == 0:
        return masked
    structure = np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
    valid = ndimage.binary_erosion(masked.valid, structure=structure, border_value=1)
    return MaskedImage(masked.values, valid)


# ==================== 梯度 ====================

def gradient(masked: MaskedImage) -> GradientField:
    """
    中心差分梯度（相关方向，ξ 沿 x 增加为正）

    ξ = (B[x+1] − B[x−1]) / 2，η = (B[y+1] − B[y−1]) / 2；
    中心像素或四个邻点任一为空或越界时，两个分量都为 0。
    """
    b = masked.values
    v = masked.valid
    xi = np.zeros_like(b)
    eta = np.zeros_like(b)
    ok = np.zeros_like(v)
    if b.shape[0] >= 3 and b.shape[1] >= 3:
        xi[1:-1, 1:-1] = (b[1:-1, 2:] - b[1:-1, :-2]) / 2
        eta[1:-1, 1:-1] = (b[2:, 1:-1] - b[:-2, 1:-1]) / 2
        ok[1:-1, 1:-1] = (
            v[1:-1, 1:-1] & v[1:-1, 2:] & v[1:-1, :-2] & v[2:, 1:-1] & v[:-2, 1:-1]
        )
    xi[~ok] = 0.0
    eta[~ok] = 0.0
    return GradientField(xi, eta)
