"""
tofgrid - ToF 幅值/深度图中的棋盘格顶点检测

流程：深度分割 → 梯度 → 方向聚类 → 局部坐标 → 斜率-截距 Hough
→ 直线束扫描 → 交比/跃变判决 → 亚像素精化

Usage:
    from tofgrid import GridSpec, DetectorConfig, detect, read_pgm, read_pfm

    amp = read_pgm(open("scene.pgm", "rb").read())
    depth = read_pfm(open("scene.pfm", "rb").read())
    result = detect(amp, depth, GridSpec(4, 5), DetectorConfig(d0=1.0, d1=2.0))
"""

from .core import (
    ConfigError,
    DegenerateClusterError,
    DegenerateConfigurationError,
    DegenerateInputError,
    DimensionMismatchError,
    GenerationError,
    GeometricFailureError,
    GridSpec,
    ImageFormatError,
    NoBoardError,
    NoPencilError,
    Pencil,
    TofGridError,
    VertexGrid,
    ideal_grid,
)
from .pipeline import DetectionResult, detect, detect_batch
from .pnmio import (
    AmplitudeImage,
    DepthImage,
    MaskedImage,
    read_depth_pgm,
    read_detection_json,
    read_pfm,
    read_pgm,
    write_detection_json,
    write_pfm,
    write_pgm,
)
from .schemas import DetectionRecord, DetectorConfig, GroundTruthRecord, RunManifest

__version__ = "0.1.0"

__all__ = [
    "AmplitudeImage",
    "ConfigError",
    "DegenerateClusterError",
    "DegenerateConfigurationError",
    "DegenerateInputError",
    "DepthImage",
    "DetectionRecord",
    "DetectionResult",
    "DetectorConfig",
    "DimensionMismatchError",
    "GenerationError",
    "GeometricFailureError",
    "GridSpec",
    "GroundTruthRecord",
    "ImageFormatError",
    "MaskedImage",
    "NoBoardError",
    "NoPencilError",
    "Pencil",
    "RunManifest",
    "TofGridError",
    "VertexGrid",
    "detect",
    "detect_batch",
    "ideal_grid",
    "read_depth_pgm",
    "read_detection_json",
    "read_pfm",
    "read_pgm",
    "write_detection_json",
    "write_pfm",
    "write_pgm",
]
