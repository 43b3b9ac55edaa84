"""
合成数据模块 - 带真值的棋盘渲染与倾斜鲁棒性实验

渲染：超采样的二值棋盘（含一格宽白边）经单应 H 映射到图像，
盒式下采样后叠加高斯噪声；可选杂乱背景、深度图与单边裁切。

倾斜实验：对正视基准图的梯度施加 H_φ = K·R_φ·K⁻¹ 的梯度传输，
用同样的方法与 π_min 规则重新分类，统计边缘像素标签的一致率。

Usage:
    from tofgrid.synth import board_homography, render_board, slant_experiment

    H = board_homography(spec, 176, 144, slant=np.deg2rad(30), tilt=0.0, cyclo=0.0)
    scene = render_board(spec, H, 176, 144, noise=2.0, seed=7)
    curve = slant_experiment(base_grads, [0, 10, 20], trials=100, seed=0)
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation

from .cluster import (
    Label,
    classify_pca,
    classify_ransac,
    default_pi_min,
    fit_pca,
    swap_labels,
)
from .core import DegenerateClusterError, GenerationError, GridSpec, VertexGrid, ideal_grid, project, to_hom
from .pnmio import INVALID_DEPTH, AmplitudeImage, DepthImage, MaskedImage
from .preprocess import GradientField, gradient

# 灰度级
BLACK = 30.0
WHITE = 200.0

# 深度（米）
BOARD_DEPTH = 1.5
BACKGROUND_DEPTH = 4.0


@dataclass
class SynthScene:
    """合成场景；clutter 场景没有棋盘，H 与 truth 为 None"""
    spec: Optional[GridSpec]
    H: Optional[np.ndarray]
    amplitude: AmplitudeImage
    depth: Optional[DepthImage]
    truth: Optional[VertexGrid]
    noise: float
    background: str = "plain"
    kind: str = "board"


@dataclass
class SlantPoint:
    """一个倾斜角下的统计"""
    slant_deg: float
    mean: float
    stddev: float
    defined: int


# ==================== 相机与位姿 ====================

def rotation_matrix(slant: float, tilt: float, cyclo: float) -> np.ndarray:
    """R_φ = R(φ, w(ϑ))·R(ω, z)，w(ϑ) = (cos ϑ, sin ϑ, 0)"""
    axis = np.array([np.cos(tilt), np.sin(tilt), 0.0])
    r_slant = Rotation.from_rotvec(slant * axis).as_matrix()
    r_cyclo = Rotation.from_rotvec(cyclo * np.array([0.0, 0.0, 1.0])).as_matrix()
    return r_slant @ r_cyclo


def intrinsics(width: int, height: int, focal: Optional[float] = None) -> np.ndarray:
    """焦距默认 X 像素，主点位于图像中心"""
    f = float(width) if focal is None else float(focal)
    return np.array([[f, 0.0, (width - 1) / 2], [0.0, f, (height - 1) / 2], [0.0, 0.0, 1.0]])


def rotation_homography(slant: float, tilt: float, cyclo: float, K: np.ndarray) -> np.ndarray:
    """H_φ = K·R_φ·K⁻¹"""
    K = np.asarray(K, dtype=float)
    return K @ rotation_matrix(slant, tilt, cyclo) @ np.linalg.inv(K)


def board_homography(spec: GridSpec, width: int, height: int, slant: float, tilt: float,
                     cyclo: float, square_px: float = 12.0, offset: Tuple[float, float] = (0.0, 0.0),
                     focal: Optional[float] = None) -> np.ndarray:
    """
    棋盘平面（方块为单位，原点在图案中心）→ 图像的单应 K·[r1 r2 t]

    焦距默认 2·X，距离取使正视时一格约为 square_px 像素。
    """
    f = 2.0 * width if focal is None else float(focal)
    K = intrinsics(width, height, focal=f)
    R = rotation_matrix(slant, tilt, cyclo)
    z = f / square_px
    t = np.array([offset[0] * z / f, offset[1] * z / f, z])
    H = K @ np.column_stack([R[:, 0], R[:, 1], t])
    return H / H[2, 2]


# ==================== 渲染 ====================

# 分块渲染的像素行数
RENDER_BAND = 16


def _sample_grid(width: int, height: int, supersample: int) -> Tuple[np.ndarray, np.ndarray]:
    """像素 x 的子采样位置 x + (k + 0.5)/S − 0.5"""
    k = (np.arange(supersample) + 0.5) / supersample - 0.5
    xs = (np.arange(width)[:, None] + k[None, :]).ravel()
    ys = (np.arange(height)[:, None] + k[None, :]).ravel()
    return np.meshgrid(xs, ys)


def _downsample(img: np.ndarray, supersample: int) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // supersample, supersample, w // supersample, supersample).mean(axis=(1, 3))


def _render(width: int, height: int, supersample: int,
            paint: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """按像素行分块超采样，paint(xs, ys) 给出子采样强度，盒式下采样后拼接"""
    out = np.empty((height, width))
    for y0 in range(0, height, RENDER_BAND):
        y1 = min(y0 + RENDER_BAND, height)
        xs, ys = _sample_grid(width, y1 - y0, supersample)
        out[y0:y1] = _downsample(paint(xs, ys + y0), supersample)
    return out


def _board_coords(H: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """图像位置 → 棋盘坐标，附带是否在相机前方"""
    inv = np.linalg.inv(H)
    w = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    front = w > 0
    safe = np.where(front, w, 1.0)
    bx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / safe
    by = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / safe
    return bx, by, front


@dataclass
class _Clutter:
    """杂乱背景：线性渐变底色加若干旋转矩形 (cx, cy, hw, hh, θ, 灰度)"""
    angle: float
    a: float
    b: float
    rects: List[Tuple[float, float, float, float, float, float]]


def _clutter_layout(width: int, height: int, rng: np.random.Generator) -> _Clutter:
    """强度 20%–80%，矩形 6–13 个"""
    lo, hi = 0.2 * 255, 0.8 * 255
    angle = rng.uniform(0, 2 * np.pi)
    a, b = rng.uniform(lo, hi, size=2)
    rects = []
    for _ in range(int(rng.integers(6, 14))):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        hw, hh = rng.uniform(4, 30, size=2)
        theta = rng.uniform(0, np.pi)
        level = rng.uniform(lo, hi)
        rects.append((cx, cy, hw, hh, theta, level))
    return _Clutter(angle=float(angle), a=float(a), b=float(b), rects=rects)


def _paint_clutter(xs: np.ndarray, ys: np.ndarray, layout: _Clutter, width: int, height: int) -> np.ndarray:
    ramp = (np.cos(layout.angle) * xs / width + np.sin(layout.angle) * ys / height + 1) / 2
    img = layout.a + (layout.b - layout.a) * np.clip(ramp, 0, 1)
    for cx, cy, hw, hh, theta, level in layout.rects:
        dx, dy = xs - cx, ys - cy
        px = np.cos(theta) * dx + np.sin(theta) * dy
        py = -np.sin(theta) * dx + np.cos(theta) * dy
        img = np.where((np.abs(px) <= hw) & (np.abs(py) <= hh), level, img)
    return img


def render_board(spec: GridSpec, H: np.ndarray, width: int, height: int, noise: float = 0.0,
                 seed: int = 0, supersample: int = 4, background: str = "plain",
                 with_depth: bool = True, crop: Optional[str] = None, crop_squares: float = 1.5,
                 margin: float = 1.0) -> SynthScene:
    """
    渲染棋盘场景

    Args:
        spec: 网格规格
        H: 棋盘平面 → 图像的单应
        noise: 高斯噪声标准差（灰度级），不截断
        background: plain（白色）或 clutter
        crop: None 或 left/right/top/bottom，从该侧外边界向内 crop_squares 格的带状区域置空

    Raises:
        GenerationError: 带白边的棋盘不能完整落在图像内
    """
    H = np.asarray(H, dtype=float)
    half_x = (spec.cols + 1) / 2
    half_y = (spec.rows + 1) / 2
    corners = np.array([[sx * (half_x + 1), sy * (half_y + 1)] for sx in (-1, 1) for sy in (-1, 1)])
    q = to_hom(corners) @ H.T
    if np.any(q[:, 2] <= 0):
        raise GenerationError("棋盘位于相机后方")
    img_corners = q[:, :2] / q[:, 2:3]
    if (img_corners[:, 0].min() < margin or img_corners[:, 1].min() < margin
            or img_corners[:, 0].max() > width - 1 - margin or img_corners[:, 1].max() > height - 1 - margin):
        raise GenerationError("棋盘超出图像范围")

    rng = np.random.default_rng(seed)
    layout = _clutter_layout(width, height, rng) if background == "clutter" else None

    def paint(xs, ys):
        bx, by, front = _board_coords(H, xs, ys)
        img = _paint_clutter(xs, ys, layout, width, height) if layout is not None else np.full(xs.shape, WHITE)
        in_border = front & (np.abs(bx) < half_x + 1) & (np.abs(by) < half_y + 1)
        in_chequer = front & (np.abs(bx) < half_x) & (np.abs(by) < half_y)
        dark = ((np.floor(by + half_y) + np.floor(bx + half_x)) % 2) == 0
        img = np.where(in_border, WHITE, img)
        img = np.where(in_chequer & dark, BLACK, img)
        blank = _crop_region(bx, by, front, crop, crop_squares, half_x, half_y)
        if blank is not None:
            img = np.where(blank, 0.0, img)
        return img

    amplitude = _render(width, height, supersample, paint)
    if noise > 0:
        amplitude = amplitude + rng.normal(0.0, noise, size=amplitude.shape)

    depth = None
    if with_depth:
        cx, cy = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
        pbx, pby, pfront = _board_coords(H, cx, cy)
        on_board = pfront & (np.abs(pbx) < half_x + 1) & (np.abs(pby) < half_y + 1)
        d = np.where(on_board, BOARD_DEPTH, BACKGROUND_DEPTH)
        pblank = _crop_region(pbx, pby, pfront, crop, crop_squares, half_x, half_y)
        if pblank is not None:
            d = np.where(pblank, INVALID_DEPTH, d)
        depth = DepthImage(d)

    truth = VertexGrid(project(H, ideal_grid(spec).points))
    return SynthScene(
        spec=spec, H=H, amplitude=AmplitudeImage(amplitude), depth=depth, truth=truth,
        noise=noise, background=background, kind="cropped" if crop else "board",
    )


def _crop_region(bx, by, front, crop, crop_squares, half_x, half_y):
    if crop is None:
        return None
    if crop == "left":
        region = bx < -half_x + crop_squares
    elif crop == "right":
        region = bx > half_x - crop_squares
    elif crop == "top":
        region = by < -half_y + crop_squares
    elif crop == "bottom":
        region = by > half_y - crop_squares
    else:
        raise ValueError(f"未知的裁切方向: {crop}")
    return region | ~front


def render_clutter(width: int, height: int, noise: float = 2.0, seed: int = 0,
                   supersample: int = 4, with_depth: bool = True) -> SynthScene:
    """只有杂乱背景的负样本，深度全部落在棋盘深度区间内"""
    rng = np.random.default_rng(seed)
    layout = _clutter_layout(width, height, rng)
    amplitude = _render(width, height, supersample, lambda xs, ys: _paint_clutter(xs, ys, layout, width, height))
    if noise > 0:
        amplitude = amplitude + rng.normal(0.0, noise, size=amplitude.shape)
    depth = DepthImage(np.full((height, width), BOARD_DEPTH)) if with_depth else None
    return SynthScene(spec=None, H=None, amplitude=AmplitudeImage(amplitude), depth=depth,
                      truth=None, noise=noise, background="clutter", kind="clutter")


def random_scene(spec: GridSpec, width: int, height: int, seed: int, slant_max_deg: float = 60.0,
                 noise: float = 2.0, kind: str = "board", supersample: int = 4,
                 with_depth: bool = True, max_attempts: int = 100) -> SynthScene:
    """
    随机位姿场景：倾斜 ∈ [0, slant_max]，倾斜轴与面内旋转 ∈ [0, 2π)，方块 10–12 像素

    kind 为 clutter 时生成负样本；cropped 时随机裁掉一侧外边缘。
    位姿不合适时用同一随机流重新采样，结果由 seed 确定。
    """
    if kind == "clutter":
        return render_clutter(width, height, noise=noise, seed=seed, supersample=supersample, with_depth=with_depth)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        slant = np.deg2rad(rng.uniform(0, slant_max_deg))
        tilt, cyclo = rng.uniform(0, 2 * np.pi, size=2)
        square = rng.uniform(10, 12)
        offset = rng.uniform(-10, 10, size=2)
        crop = None
        if kind == "cropped":
            crop = ("left", "right", "top", "bottom")[int(rng.integers(0, 4))]
        H = board_homography(spec, width, height, slant, tilt, cyclo, square_px=square, offset=tuple(offset))
        render_seed = int(rng.integers(0, 2**31 - 1))
        try:
            return render_board(spec, H, width, height, noise=noise, seed=render_seed,
                                supersample=supersample, with_depth=with_depth, crop=crop)
        except GenerationError:
            continue
    raise GenerationError(f"{max_attempts} 次采样都无法放下棋盘")


# ==================== 梯度传输 ====================

def transport_gradients(grads: GradientField, H: np.ndarray) -> GradientField:
    """
    (ξ', η', 1) ≃ (ξ, η, 1)·H⁻¹

    H 为 (3, 3) 或逐像素 (..., 3, 3)；第三分量接近 0 时置空，零梯度保持为零。
    """
    H = np.asarray(H, dtype=float)
    xi = np.asarray(grads.xi, dtype=float)
    eta = np.asarray(grads.eta, dtype=float)
    row = np.stack([xi, eta, np.ones_like(xi)], axis=-1)
    inv = np.linalg.inv(H)
    if inv.ndim == 2:
        q = row @ inv
    else:
        q = np.einsum("...i,...ij->...j", row, inv)
    third = q[..., 2]
    ok = (np.abs(third) >= 1e-12) & (np.hypot(xi, eta) > 0)
    safe = np.where(ok, third, 1.0)
    return GradientField(np.where(ok, q[..., 0] / safe, 0.0), np.where(ok, q[..., 1] / safe, 0.0))


def homography_jacobian(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    """单应在各点处的局部仿射线性化，返回 (N, 3, 3)，平移部分为零"""
    H = np.asarray(H, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    q = to_hom(pts) @ H.T
    w = q[:, 2]
    mapped = q[:, :2] / w[:, None]
    J = (H[None, :2, :2] - mapped[:, :, None] * H[None, 2:3, :2]) / w[:, None, None]
    A = np.zeros((len(pts), 3, 3))
    A[:, :2, :2] = J
    A[:, 2, 2] = 1.0
    return A


def consistency(labels_phi: np.ndarray, labels_0: np.ndarray) -> Optional[float]:
    """κ_0 ≠ ∅ 的像素中标签不变的比例；没有边缘像素时返回 None"""
    a = np.asarray(labels_phi)
    b = np.asarray(labels_0)
    if a.shape != b.shape:
        raise ValueError(f"标签图尺寸不一致: {a.shape} vs {b.shape}")
    edges = b != Label.NULL
    n = int(edges.sum())
    if n == 0:
        return None
    return float(np.count_nonzero(a[edges] == b[edges]) / n)


# ==================== 倾斜实验 ====================

# 倾斜实验基准棋盘的方块边长（像素）；边缘像素需占 5% 以上，π_min 的分位数才落在边缘幅值上
SLANT_BASE_SQUARE = 18.0


def slant_base(spec: GridSpec, width: int, height: int, noise: float = 2.0, seed: int = 0) -> GradientField:
    """正视合成棋盘的梯度，作为倾斜实验的基准"""
    H = board_homography(spec, width, height, 0.0, 0.0, 0.0, square_px=SLANT_BASE_SQUARE)
    scene = render_board(spec, H, width, height, noise=noise, seed=seed, with_depth=False)
    return gradient(MaskedImage.full(scene.amplitude.data))


def _classify(grads: GradientField, method: str, fraction: float, percentile: float,
              iters: int, seed: int) -> np.ndarray:
    pi_min = default_pi_min(grads, fraction, percentile)
    if method == "ransac":
        labels, _ = classify_ransac(grads, pi_min, iters, seed)
        return labels
    return classify_pca(grads, fit_pca(grads, pi_min))


def slant_experiment(base: GradientField, slants_deg: Sequence[float], trials: int = 100,
                     seed: int = 0, method: str = "pca", pi_min_fraction: float = 0.2,
                     pi_min_percentile: float = 95.0, ransac_iters: int = 100,
                     K: Optional[np.ndarray] = None, sample_size: int = 5000,
                     jobs: int = 1) -> List[SlantPoint]:
    """
    倾斜鲁棒性曲线

    从基准梯度中按 seed 抽取 sample_size 个非零梯度并分类得到 κ_0；
    每个试验随机取 ϑ、ω ∈ [0, 2π)，用 H_φ 在各采样点处的仿射线性化传输梯度，
    重新分类后计算一致率（λ/μ 命名任意，取交换前后的较大值）。
    试验种子由 SeedSequence 派生，jobs 不影响结果。
    """
    height, width = base.shape
    K = intrinsics(width, height) if K is None else np.asarray(K, dtype=float)
    seq = np.random.SeedSequence(seed)
    sample_seq, trial_seq = seq.spawn(2)

    ys, xs = np.nonzero(base.rho > 1e-9)
    rng = np.random.default_rng(sample_seq)
    if len(xs) > sample_size:
        pick = np.sort(rng.choice(len(xs), size=sample_size, replace=False))
        xs, ys = xs[pick], ys[pick]
    points = np.stack([xs, ys], axis=1).astype(float)
    sample = GradientField(base.xi[ys, xs], base.eta[ys, xs])
    labels_0 = _classify(sample, method, pi_min_fraction, pi_min_percentile, ransac_iters, seed)

    children = trial_seq.spawn(len(slants_deg) * trials)

    def run_trial(index: int) -> Optional[float]:
        slant = np.deg2rad(slants_deg[index // trials])
        trng = np.random.default_rng(children[index])
        tilt, cyclo = trng.uniform(0, 2 * np.pi, size=2)
        trial_seed = int(trng.integers(0, 2**31 - 1))
        H = rotation_homography(slant, tilt, cyclo, K)
        moved = transport_gradients(sample, homography_jacobian(H, points))
        try:
            labels = _classify(moved, method, pi_min_fraction, pi_min_percentile, ransac_iters, trial_seed)
        except DegenerateClusterError:
            return None
        c = consistency(labels, labels_0)
        if c is None:
            return None
        return max(c, consistency(swap_labels(labels), labels_0))

    indices = range(len(slants_deg) * trials)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(run_trial, indices))
    else:
        values = [run_trial(i) for i in indices]

    curve = []
    for k, slant in enumerate(slants_deg):
        chunk = [v for v in values[k * trials:(k + 1) * trials] if v is not None]
        if chunk:
            curve.append(SlantPoint(float(slant), float(np.mean(chunk)), float(np.std(chunk)), len(chunk)))
        else:
            curve.append(SlantPoint(float(slant), float("nan"), float("nan"), 0))
        logger.debug("[Synth] 倾斜 {}°: 一致率 {:.4f}", slant, curve[-1].mean)
    return curve


def curve_to_csv(curve: Sequence[SlantPoint]) -> str:
    """曲线 CSV，表头 slant_deg,mean_consistency,stddev"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["slant_deg", "mean_consistency", "stddev"])
    for p in curve:
        writer.writerow([f"{p.slant_deg:g}", f"{p.mean:.6f}", f"{p.stddev:.6f}"])
    return buf.getvalue()
