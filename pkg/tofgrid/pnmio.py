"""
图像读写模块 - PGM / PFM 编解码与内存图像类型

支持的格式：
- 二进制 PGM（P5），maxval 1..65535，16 位样本为大端序
- 灰度 PFM（Pf），比例行符号决定字节序（负数为小端），行序自下而上
- 检测结果 JSON（字段顺序固定，坐标保留 4 位小数）

坐标约定：原点位于左上角像素中心，x 向右，y 向下。数组按 [y, x] 存储。

Usage:
    from tofgrid.pnmio import read_pgm, read_pfm

    amp = read_pgm(Path("scene.pgm").read_bytes())
    depth = read_pfm(Path("scene.pfm").read_bytes())
"""

import json
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import DimensionMismatchError, ImageFormatError

# 深度无效标记
INVALID_DEPTH = 0.0


# ==================== 图像类型 ====================

@dataclass
class AmplitudeImage:
    """幅值图 A，data 形状 (Y, X)，非负有限实数"""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ImageFormatError(f"幅值图必须是二维数组，收到 {self.data.ndim} 维")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass
class DepthImage:
    """深度图 D（米），无效像素取 INVALID_DEPTH"""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ImageFormatError(f"深度图必须是二维数组，收到 {self.data.ndim} 维")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.data) & (self.data > 0)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass
class MaskedImage:
    """掩膜图 B：valid 为 False 的像素即空值 ∅，其 values 置 0"""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise DimensionMismatchError("掩膜与数值尺寸不一致")
        self.values = np.where(self.valid, self.values, 0.0)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @classmethod
    def full(cls, data: np.ndarray) -> "MaskedImage":
        data = np.asarray(data, dtype=np.float64)
        return cls(data, np.ones(data.shape, dtype=bool))


def check_pair(amp: AmplitudeImage, depth: Optional[DepthImage]) -> None:
    """检查幅值图与深度图尺寸一致"""
    if depth is not None and amp.shape != depth.shape:
        raise DimensionMismatchError(
            f"幅值图 {amp.width}×{amp.height} 与深度图 "
            f"{depth.shape[1]}×{depth.shape[0]} 尺寸不一致"
        )


# ==================== 头部解析 ====================

_SPACE = (b" ", b"\t", b"\r", b"\n")


def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    """读取下一个头部字段，跳过空白与 # 注释，返回 (字段, 字段结束位置)"""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c in _SPACE:
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _SPACE:
        pos += 1
    if start == pos:
        raise ImageFormatError("头部被截断", offset=start)
    return buf[start:pos], pos


def _read_int(buf: bytes, pos: int, name: str) -> Tuple[int, int]:
    token, end = _read_token(buf, pos)
    if not token.isdigit():
        raise ImageFormatError(f"{name} 不是整数: {token!r}", offset=end - len(token))
    return int(token), end


# ==================== PGM ====================

def read_pgm(buf: bytes) -> AmplitudeImage:
    """
    解码二进制 PGM（P5）

    Args:
        buf: 文件全部字节

    Returns:
        AmplitudeImage，样本为 [0, maxval] 的整数值（float64 存储）

    Raises:
        ImageFormatError: 魔数错误、maxval 越界或数据截断
    """
    if buf[:2] != b"P5":
        raise ImageFormatError(f"不支持的 PGM 魔数 {buf[:2]!r}（仅支持 P5）", offset=0)
    pos = 2
    width, pos = _read_int(buf, pos, "宽度")
    height, pos = _read_int(buf, pos, "高度")
    maxval, pos = _read_int(buf, pos, "maxval")
    if not 1 <= maxval <= 65535:
        raise ImageFormatError(f"maxval 超出 1..65535: {maxval}", offset=pos)
    if width < 1 or height < 1:
        raise ImageFormatError(f"图像尺寸无效: {width}×{height}", offset=pos)
    if buf[pos:pos + 1] not in _SPACE:
        raise ImageFormatError("maxval 后缺少分隔空白", offset=pos)
    pos += 1

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - pos < need:
        raise ImageFormatError(
            f"像素数据被截断，需要 {need} 字节，实际 {len(buf) - pos}",
            offset=len(buf),
        )
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    return AmplitudeImage(data.reshape(height, width).astype(np.float64))


def write_pgm(data: np.ndarray, maxval: int = 255) -> bytes:
    """
    编码二进制 PGM；数值四舍五入并截断到 [0, maxval]
    """
    if not 1 <= maxval <= 65535:
        raise ImageFormatError(f"maxval 超出 1..65535: {maxval}", offset=0)
    arr = np.asarray(data, dtype=np.float64)
    height, width = arr.shape
    arr = np.clip(np.rint(arr), 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    return header + arr.astype(dtype).tobytes()


def read_depth_pgm(buf: bytes, scale: float) -> DepthImage:
    """16 位 PGM 深度图按 scale（米/单位）换算为米，0 值视为无效"""
    raw = read_pgm(buf).data
    return DepthImage(np.where(raw > 0, raw * scale, INVALID_DEPTH))


# ==================== PFM ====================

def read_pfm(buf: bytes) -> DepthImage:
    """
    解码灰度 PFM（Pf）

    比例行为负数表示小端序；文件行序自下而上，读入后翻转为自上而下。
    非有限样本替换为无效标记。
    """
    if buf[:2] == b"PF":
        raise ImageFormatError("不支持彩色 PFM（PF）", offset=0)
    if buf[:2] != b"Pf":
        raise ImageFormatError(f"不支持的 PFM 魔数 {buf[:2]!r}", offset=0)
    pos = 2
    width, pos = _read_int(buf, pos, "宽度")
    height, pos = _read_int(buf, pos, "高度")
    token, pos = _read_token(buf, pos)
    if not re.fullmatch(rb"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?", token):
        raise ImageFormatError(f"比例行无效: {token!r}", offset=pos - len(token))
    scale = float(token)
    if scale == 0:
        raise ImageFormatError("比例不能为 0", offset=pos - len(token))
    if buf[pos:pos + 1] not in _SPACE:
        raise ImageFormatError("比例行后缺少分隔空白", offset=pos)
    pos += 1

    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    need = width * height * 4
    if len(buf) - pos < need:
        raise ImageFormatError(
            f"像素数据被截断，需要 {need} 字节，实际 {len(buf) - pos}",
            offset=len(buf),
        )
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    data = np.flipud(data.reshape(height, width)).astype(np.float64)
    data[~np.isfinite(data)] = INVALID_DEPTH
    return DepthImage(data)


def write_pfm(data: np.ndarray) -> bytes:
    """编码灰度 PFM：小端序（比例 −1），行序自下而上"""
    arr = np.asarray(data, dtype=np.float64)
    height, width = arr.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    return header + np.flipud(arr).astype("<f4").tobytes()


# ==================== 检测结果 JSON ====================

def detection_record(result) -> "DetectionRecord":
    """DetectionResult → DetectionRecord（坐标保留 4 位小数）"""
    from .schemas import DetectionRecord, VertexRecord

    vertices: List[VertexRecord] = []
    if result.accepted and result.grid is not None:
        for i in range(result.grid.rows):
            for j in range(result.grid.cols):
                x, y = result.grid.points[i, j]
                vertices.append(VertexRecord(i=i + 1, j=j + 1, x=round(float(x), 4), y=round(float(y), 4)))

    def _round(v: Optional[float]) -> Optional[float]:
        if v is None or not np.isfinite(v):
            return None
        return round(float(v), 6)

    return DetectionRecord(
        detected=bool(result.accepted),
        rows=result.spec.rows,
        cols=result.spec.cols,
        method=result.method,
        vertices=vertices,
        geometric_error=_round(result.geometric_error),
        photometric_error=_round(result.photometric_error),
        reject_reason=result.reject_reason,
    )


def write_detection_json(result) -> bytes:
    """
    序列化检测结果为 UTF-8 JSON 字节

    字段顺序固定：detected, rows, cols, method, vertices, geometric_error,
    photometric_error, photometric_normalization, reject_reason
    """
    record = detection_record(result)
    return json.dumps(record.model_dump(), ensure_ascii=False).encode("utf-8")


def read_detection_json(buf: bytes) -> "DetectionRecord":
    """解析检测结果 JSON"""
    from .schemas import DetectionRecord

    try:
        return DetectionRecord.model_validate_json(buf)
    except ValueError as e:
        raise ImageFormatError(f"检测结果 JSON 无效: {e}", offset=0) from e
