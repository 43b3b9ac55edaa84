"""
Pydantic 数据模型

定义检测器配置、检测结果 JSON、合成场景真值与批处理清单的数据结构
"""

from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, validator


class DetectorConfig(BaseModel):
    """检测器配置"""
    # 深度分割区间（米），仅在提供深度图时使用
    d0: Optional[float] = None
    d1: Optional[float] = None
    depth_scale: float = 0.001

    # 预处理
    erosion_radius: int = 2

    # 梯度聚类
    method: str = "pca"  # pca / ransac
    pi_min_fraction: float = 0.2
    pi_min_percentile: float = 95.0
    pi_min: Optional[float] = None  # 绝对阈值，覆盖百分位规则
    ransac_iters: int = 100
    seed: int = 0

    # Hough 变换与扫描
    hough_scale: float = 1.5
    run_threshold: float = 0.05

    # 判决函数
    f: float = 0.25
    g: float = 0.5
    gradient_sampling: str = "bilinear"  # bilinear / nearest

    # 亚像素精化
    subpixel_window: int = 3
    subpixel_max_iter: int = 20
    subpixel_tol: float = 0.001
    subpixel_weighting: str = "magnitude"  # magnitude / gradient

    @validator("d0", "d1")
    def depth_valid(cls, v):
        if v is not None and v <= 0:
            raise ValueError("深度阈值必须为正数")
        return v

    @validator("d1")
    def depth_interval_valid(cls, v, values):
        d0 = values.get("d0")
        if v is not None and d0 is not None and d0 >= v:
            raise ValueError(f"要求 d0 < d1，收到 d0={d0}, d1={v}")
        return v

    @validator("depth_scale", "hough_scale", "f", "g", "subpixel_tol")
    def positive_valid(cls, v):
        if not v > 0:
            raise ValueError("阈值必须为正数")
        return v

    @validator("erosion_radius")
    def erosion_valid(cls, v):
        if v < 0:
            raise ValueError("腐蚀半径不能为负")
        return v

    @validator("method")
    def method_valid(cls, v):
        if v not in ("pca", "ransac"):
            raise ValueError("聚类方法只能是 pca 或 ransac")
        return v

    @validator("pi_min_fraction")
    def fraction_valid(cls, v):
        if not 0 < v <= 1:
            raise ValueError("pi_min_fraction 范围 (0, 1]")
        return v

    @validator("pi_min_percentile")
    def percentile_valid(cls, v):
        if not 0 < v <= 100:
            raise ValueError("pi_min_percentile 范围 (0, 100]")
        return v

    @validator("pi_min")
    def pi_min_valid(cls, v):
        if v is not None and v <= 0:
            raise ValueError("pi_min 必须为正数")
        return v

    @validator("ransac_iters", "subpixel_max_iter")
    def iterations_valid(cls, v):
        if v < 1:
            raise ValueError("迭代次数至少为 1")
        return v

    @validator("run_threshold")
    def run_threshold_valid(cls, v):
        if not 0 <= v < 1:
            raise ValueError("run_threshold 范围 [0, 1)")
        return v

    @validator("gradient_sampling")
    def sampling_valid(cls, v):
        if v not in ("bilinear", "nearest"):
            raise ValueError("梯度采样方式只能是 bilinear 或 nearest")
        return v

    @validator("subpixel_window")
    def window_valid(cls, v):
        if v < 2:
            raise ValueError("亚像素窗口半宽至少为 2")
        return v

    @validator("subpixel_weighting")
    def weighting_valid(cls, v):
        if v not in ("gradient", "magnitude"):
            raise ValueError("亚像素加权只能是 gradient 或 magnitude")
        return v


class VertexRecord(BaseModel):
    """单个顶点"""
    i: int
    j: int
    x: float
    y: float


class DetectionRecord(BaseModel):
    """单幅图像的检测结果（JSON 输出）"""
    detected: bool
    rows: int
    cols: int
    method: str
    vertices: List[VertexRecord] = []
    geometric_error: Optional[float] = None
    photometric_error: Optional[float] = None
    photometric_normalization: str = "mean_window_rho"
    reject_reason: Optional[str] = None

    def points(self) -> np.ndarray:
        """顶点坐标，形状 (rows, cols, 2)"""
        pts = np.full((self.rows, self.cols, 2), np.nan)
        for v in self.vertices:
            pts[v.i - 1, v.j - 1] = (v.x, v.y)
        return pts


class GroundTruthRecord(BaseModel):
    """合成场景真值：H 为行优先 9 元素，vertices 为行优先 [x, y] 列表"""
    H: List[float]
    vertices: List[List[float]]
    rows: Optional[int] = None
    cols: Optional[int] = None
    kind: str = "board"  # board / clutter / cropped

    @validator("H")
    def h_valid(cls, v):
        if len(v) != 9:
            raise ValueError("H 必须包含 9 个元素")
        return v

    def matrix(self) -> np.ndarray:
        return np.asarray(self.H, dtype=float).reshape(3, 3)


class RunManifest(BaseModel):
    """批处理清单：聚合统计由逐文件结果重新计算"""
    command: str
    config: Dict[str, Any]
    inputs: List[str] = []
    results: List[Dict[str, Any]] = []
    errors: List[Dict[str, str]] = []
    processed: int = 0
    detections: int = 0
    mean_geometric_error: Optional[float] = None

    @classmethod
    def build(cls, command: str, config: Dict[str, Any], inputs: List[str],
              results: List[Dict[str, Any]], errors: List[Dict[str, str]]) -> "RunManifest":
        accepted = [r for r in results if r.get("detected")]
        errs = [r["geometric_error"] for r in accepted if r.get("geometric_error") is not None]
        return cls(
            command=command,
            config=config,
            inputs=inputs,
            results=results,
            errors=errors,
            processed=len(results),
            detections=len(accepted),
            mean_geometric_error=float(np.mean(errs)) if errs else None,
        )
