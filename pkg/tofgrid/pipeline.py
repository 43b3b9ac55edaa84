"""
检测流水线 - 预处理 → 聚类 → 局部坐标 → Hough → 扫描 → 判决 → 精化

任何阶段失败都转为结构化的拒绝结果，reject_reason 为失败阶段名：
no_board_mask / degenerate_cluster / no_pencil / geometric_failure / corrupted / displaced

Usage:
    from tofgrid.pipeline import detect
    from tofgrid.schemas import DetectorConfig

    result = detect(amp, depth, GridSpec(4, 5), DetectorConfig(d0=1.0, d1=2.0))
    if result.accepted:
        print(result.grid.points)
"""

import time
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .cluster import Label, classify_pca, classify_ransac, default_pi_min, fit_pca, label_counts
from .core import ConfigError, GridSpec, NoBoardError, Pencil, TofGridError, VertexGrid, ideal_grid
from .frame import LocalFrame, board_centroid, build_frame, frame_angle
from .hough import HoughAccumulator, HoughGeometry, accumulate
from .metrics import geometric_error, photometric_error
from .pnmio import AmplitudeImage, DepthImage, check_pair
from .preprocess import GradientField, erode_mask, gradient, segment_depth
from .schemas import DetectorConfig
from .sweep import PencilSearch, grid_vertices, pencil_candidates, pencil_lines
from .verify import Verdict, subpixel_refine, verify_grid


@dataclass
class DetectionResult:
    """单幅图像的检测结果"""
    spec: GridSpec
    method: str
    accepted: bool = False
    reject_reason: Optional[str] = None
    verdict: Optional[Verdict] = None
    grid: Optional[VertexGrid] = None          # 接受时为精化后的顶点
    candidate: Optional[VertexGrid] = None     # 精化前的候选网格
    geometric_error: Optional[float] = None
    photometric_error: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    hough: Optional[HoughAccumulator] = None


def _timer(timings: Dict[str, float]):
    """按阶段记录耗时（秒）"""
    @contextmanager
    def stage(name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            timings[name] = time.perf_counter() - start
    return stage


@dataclass
class _Attempt:
    """一种对应关系下的直线束、候选网格与判决"""
    L: Pencil
    M: Pencil
    candidate: VertexGrid
    verdict: Verdict


def _try_correspondence(found: PencilSearch, frame: LocalFrame, geometry: HoughGeometry,
                        grads: GradientField, image_shape: Tuple[int, int],
                        cfg: DetectorConfig) -> Union[_Attempt, TofGridError]:
    """构造直线束与候选网格并判决；顶点求解失败时返回异常而不抛出"""
    try:
        L = pencil_lines(found.L, frame, geometry)
        M = pencil_lines(found.M, frame, geometry)
        candidate = grid_vertices(L, M, image_shape)
    except TofGridError as e:
        return e
    verdict = verify_grid(candidate, grads, cfg.f, cfg.g, L, M, cfg.gradient_sampling)
    return _Attempt(L=L, M=M, candidate=candidate, verdict=verdict)


def _record_attempt(diag: Dict[str, Any], found: PencilSearch, attempt: _Attempt, fallback: bool) -> None:
    diag["correspondence"] = "lambda_mu" if found.l_label == Label.LAMBDA else "mu_lambda"
    diag["correspondence_fallback"] = fallback
    diag["apex_L"] = [float(c) for c in attempt.L.apex]
    diag["apex_M"] = [float(c) for c in attempt.M.apex]
    diag["worst_f"] = attempt.verdict.worst_f
    diag["worst_g"] = attempt.verdict.worst_g


def detect(amp: AmplitudeImage, depth: Optional[DepthImage], spec: GridSpec,
           cfg: Optional[DetectorConfig] = None) -> DetectionResult:
    """
    检测单幅图像中的 ℓ×m 顶点网格

    检测阶段的失败不会抛出，而是返回带 reject_reason 的拒绝结果。

    Raises:
        DimensionMismatchError: 幅值图与深度图尺寸不一致
        ConfigError: 提供深度图但未设置 d0/d1
    """
    cfg = cfg or DetectorConfig()
    check_pair(amp, depth)
    if depth is not None and (cfg.d0 is None or cfg.d1 is None):
        raise ConfigError("提供深度图时必须设置 d0 和 d1")

    result = DetectionResult(spec=spec, method=cfg.method)
    stage = _timer(result.timings)
    diag = result.diagnostics

    try:
        with stage("preprocess"):
            masked = segment_depth(amp, depth, cfg.d0, cfg.d1)
            masked = erode_mask(masked, cfg.erosion_radius)
            diag["mask_pixels"] = int(masked.valid.sum())
            if diag["mask_pixels"] == 0:
                raise NoBoardError("分割与腐蚀后掩膜为空")
        with stage("gradient"):
            grads = gradient(masked)

        with stage("cluster"):
            pi_min = cfg.pi_min or default_pi_min(grads, cfg.pi_min_fraction, cfg.pi_min_percentile)
            if cfg.method == "ransac":
                labels, model = classify_ransac(grads, pi_min, cfg.ransac_iters, cfg.seed)
            else:
                model = fit_pca(grads, pi_min)
                labels = classify_pca(grads, model)
            counts = label_counts(labels)
            diag["pi_min"] = pi_min
            diag["label_counts"] = counts
            diag["larger_cluster"] = "lambda" if counts["lambda"] >= counts["mu"] else "mu"

        with stage("frame"):
            frame = build_frame(board_centroid(masked), frame_angle(model, grads, labels))
            diag["centre"] = frame.centre
            diag["phi_deg"] = float(np.rad2deg(frame.phi))

        with stage("hough"):
            geometry = HoughGeometry.for_image(amp.width, amp.height, cfg.hough_scale)
            ys, xs = np.nonzero(labels != Label.NULL)
            local = frame.to_local(np.stack([xs, ys], axis=1).astype(float))
            acc = accumulate(local, labels[ys, xs], geometry)
            result.hough = acc

        with stage("sweep"):
            candidates = pencil_candidates(acc, spec, cfg.run_threshold)
            diag["sweep_scores"] = candidates[0].scores

        # 判定的对应关系未通过判决时，再试另一种对应关系
        with stage("verify"):
            first = None
            for k, found in enumerate(candidates):
                tried = _try_correspondence(found, frame, geometry, grads, amp.shape, cfg)
                if first is None:
                    first = tried
                if isinstance(tried, _Attempt) and tried.verdict.accepted:
                    break
            else:
                if isinstance(first, TofGridError):
                    raise first
                result.candidate, result.verdict = first.candidate, first.verdict
                _record_attempt(diag, candidates[0], first, fallback=False)
                result.reject_reason = first.verdict.reason
                logger.warning("[Pipeline] 候选网格被拒绝: {}", first.verdict.reason)
                return result
            candidate, verdict = tried.candidate, tried.verdict
            result.candidate, result.verdict = candidate, verdict
            _record_attempt(diag, found, tried, fallback=k > 0)
            if k > 0:
                logger.info("[Pipeline] 判定的对应关系被拒绝，改用 {}", diag["correspondence"])

        with stage("refine"):
            refined = np.empty_like(candidate.points)
            n_refined = 0
            for i in range(spec.rows):
                for j in range(spec.cols):
                    point, _, ok = subpixel_refine(
                        candidate.points[i, j], grads,
                        window=cfg.subpixel_window,
                        max_iter=cfg.subpixel_max_iter,
                        tol=cfg.subpixel_tol,
                        weighting=cfg.subpixel_weighting,
                    )
                    refined[i, j] = point
                    n_refined += int(ok)
            result.grid = VertexGrid(refined)
            diag["refined"] = n_refined

        with stage("metrics"):
            result.geometric_error = geometric_error(ideal_grid(spec), result.grid)
            result.photometric_error = photometric_error(result.grid, grads)

    except TofGridError as e:
        result.reject_reason = e.stage
        logger.warning("[Pipeline] 检测失败 ({}): {}", e.stage, e)
        return result
    except np.linalg.LinAlgError as e:
        result.reject_reason = "geometric_failure"
        logger.warning("[Pipeline] 数值求解失败: {}", e)
        return result

    result.accepted = True
    logger.info("[Pipeline] 检测成功，几何误差 {:.4f} px", result.geometric_error)
    return result


def detect_batch(items: Sequence[Tuple[AmplitudeImage, Optional[DepthImage]]], spec: GridSpec,
                 cfg: Optional[DetectorConfig] = None, jobs: int = 1) -> List[DetectionResult]:
    """批量检测，输出顺序与输入一致"""
    def run(item):
        return detect(item[0], item[1], spec, cfg)

    if jobs <= 1:
        return [run(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, items))
