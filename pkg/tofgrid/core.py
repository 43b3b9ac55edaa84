"""
核心模块 - 共享类型、齐次几何工具与理想网格

棋盘格由 (ℓ+1)×(m+1) 个方块组成，内部顶点 v_ij 是两组直线束 L、M 的交点：
    v_ij = Λ_i × M_j

齐次点与齐次直线都用形状为 (3,) 的 numpy 数组表示。

Usage:
    from tofgrid.core import GridSpec, ideal_grid, line_intersect

    spec = GridSpec(rows=4, cols=5)
    grid = ideal_grid(spec)
    p = line_intersect(np.array([-1.0, 0, 3]), np.array([0, -1.0, 5]))
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


# ==================== 异常 ====================

class TofGridError(Exception):
    """所有检测错误的基类，stage 字段用于拒绝原因统计"""

    stage: str = "error"

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class ConfigError(TofGridError, ValueError):
    """参数或配置无效"""
    stage = "config"


class ImageFormatError(TofGridError, ValueError):
    """图像编解码失败，offset 为出错的字节位置"""
    stage = "format"

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (字节偏移 {offset})")
        self.offset = offset


class DimensionMismatchError(ImageFormatError):
    """幅值图与深度图尺寸不一致"""
    stage = "format"

    def __init__(self, message: str):
        super().__init__(message, offset=0)


class DegenerateInputError(TofGridError):
    """几何输入退化（重合直线、秩亏方程组等）"""
    stage = "geometric_failure"


class DegenerateConfigurationError(DegenerateInputError):
    """单应估计的点集退化（共线或不足 4 点）"""


class NoBoardError(TofGridError):
    stage = "no_board_mask"


class DegenerateClusterError(TofGridError):
    stage = "degenerate_cluster"


class NoPencilError(TofGridError):
    stage = "no_pencil"


class GeometricFailureError(TofGridError):
    stage = "geometric_failure"


class GenerationError(TofGridError):
    """合成位姿下棋盘超出图像"""
    stage = "generation"


# ==================== 网格规格 ====================

@dataclass(frozen=True)
class GridSpec:
    """内部顶点网格规格：rows=ℓ（L 束直线数），cols=m（M 束直线数）"""
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ConfigError(f"网格行列数至少为 2，收到 {self.rows}×{self.cols}")
        if self.rows >= self.cols:
            # 方形网格下直线束与标签的对应关系无法判定
            raise ConfigError(f"要求 rows < cols，收到 {self.rows}×{self.cols}")

    @property
    def count(self) -> int:
        return self.rows * self.cols


# ==================== 齐次几何 ====================

def to_hom(p) -> np.ndarray:
    """非齐次点 (x, y) → (x, y, 1)"""
    p = np.asarray(p, dtype=float)
    return np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


def from_hom(p) -> np.ndarray:
    """齐次点 → 非齐次点；无穷远点返回 inf"""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return p[..., :2] / p[..., 2:3]


def line_intersect(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    两条齐次直线的交点（叉积）

    平行直线返回 w=0 的无穷远点。

    Raises:
        DegenerateInputError: 两直线在比例意义下相同
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.cross(a, b)
    scale = np.linalg.norm(a) * np.linalg.norm(b)
    if scale == 0 or np.linalg.norm(p) <= 1e-12 * scale:
        raise DegenerateInputError("两条直线重合，交点不唯一")
    return p


def line_through(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """过两个齐次点的直线"""
    return np.cross(np.asarray(p, dtype=float), np.asarray(q, dtype=float))


def normalize_line(line: np.ndarray) -> np.ndarray:
    """缩放直线使 a²+b² = 1"""
    line = np.asarray(line, dtype=float)
    n = np.hypot(line[0], line[1])
    if n == 0:
        raise DegenerateInputError("直线法向量为零")
    return line / n


# ==================== 网格类型 ====================

@dataclass(frozen=True)
class VertexGrid:
    """ℓ×m 顶点网格，points 形状 (ℓ, m, 2)，像素坐标"""
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ValueError(f"顶点数组形状应为 (ℓ, m, 2)，收到 {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def rows(self) -> int:
        return self.points.shape[0]

    @property
    def cols(self) -> int:
        return self.points.shape[1]

    def vertex(self, i: int, j: int) -> np.ndarray:
        """按 1 起始的下标 (i, j) 取顶点"""
        return self.points[i - 1, j - 1]

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1, 2)


@dataclass(frozen=True)
class Pencil:
    """直线束：lines 形状 (k, 3)，apex 为齐次公共点（可能在无穷远）"""
    lines: np.ndarray
    apex: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.lines)


def ideal_grid(spec: GridSpec) -> VertexGrid:
    """
    以原点为中心、单位间距的理想平面网格

    v_ij = (j − (m+1)/2, i − (ℓ+1)/2)
    """
    i = np.arange(1, spec.rows + 1, dtype=float)
    j = np.arange(1, spec.cols + 1, dtype=float)
    jj, ii = np.meshgrid(j, i)
    pts = np.stack([jj - (spec.cols + 1) / 2, ii - (spec.rows + 1) / 2], axis=-1)
    return VertexGrid(pts)


def project(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    """用单应 H 映射非齐次点数组 (..., 2)"""
    q = to_hom(points) @ np.asarray(H, dtype=float).T
    return from_hom(q)
