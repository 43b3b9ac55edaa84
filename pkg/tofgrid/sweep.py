"""
Hough 分析模块 - 扫描线搜索、直线束对应与顶点网格

在每个累加器中，从 (0, s) 到 (u1, t) 的扫描线穿过一个直线束的全部峰值。
沿扫描线采样得到一维直方图 h(w)，其中高于 ε 的连续段称为簇（run），
每个簇的得分为均值，质心给出峰值位置。对整数 (s, t) 穷举，
取前 n 个簇得分之和 Σⁿ 最大的扫描线。

Usage:
    from tofgrid.sweep import find_pencils, pencil_lines, grid_vertices

    found = find_pencils(acc, spec, run_threshold=0.05)
    L = pencil_lines(found.L, frame, acc.geometry)
    M = pencil_lines(found.M, frame, acc.geometry)
    grid = grid_vertices(L, M, image_shape)
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .cluster import Label
from .core import (
    DegenerateInputError,
    GeometricFailureError,
    GridSpec,
    NoPencilError,
    Pencil,
    VertexGrid,
    line_intersect,
)
from .frame import LocalFrame
from .hough import HoughAccumulator, HoughGeometry, line_from_peak


# ==================== 数据类型 ====================

@dataclass
class SweepHistogram:
    s: int
    t: int
    w1: float
    h: np.ndarray


@dataclass
class ClusterRun:
    """h 中的一个簇：[start, stop] 闭区间"""
    start: int
    stop: int
    score: float
    centroid: float


@dataclass
class SweepResult:
    """单个标签的最优扫描"""
    label: int
    n: int
    s: int
    t: int
    score: float
    w1: float
    runs: List[ClusterRun] = field(default_factory=list)
    peaks: Optional[np.ndarray] = None  # (n, 2) 的 (u⋆, v⋆)


@dataclass
class PencilSearch:
    """直线束对应关系与四个总得分"""
    L: SweepResult
    M: SweepResult
    l_label: int
    m_label: int
    scores: Dict[str, float]


# ==================== 扫描直方图 ====================

@dataclass(frozen=True)
class _SweepTable:
    """
    按 d = t − s 预计算的双线性采样表，行号为 d + v1

    扫描线 (0, s)–(u1, t) 在 w 处的 v = s + c(w)，c 只依赖 d，
    因此 floor(v) = s + floor(c)，插值权重也只依赖 d。
    offsets 为相对 (v = s, u = 0) 的扁平下标，weights 为四个邻点权重，
    w ≥ floor(w1)+1 的位置权重为 0。累加器需按 _padded 补一行一列零。
    """
    offsets: np.ndarray  # (2·v1+1, width) int64
    weights: np.ndarray  # (4, 2·v1+1, width)
    w1: np.ndarray       # (2·v1+1,)
    stride: int


@lru_cache(maxsize=8)
def _sweep_table(geometry: HoughGeometry) -> _SweepTable:
    g = geometry
    d = np.arange(-g.v1, g.v1 + 1, dtype=float)
    w1 = np.hypot(g.u1, d)
    lengths = np.floor(w1).astype(np.int64) + 1
    w = np.arange(int(lengths.max()), dtype=float)
    inside = w[None, :] < lengths[:, None]
    frac = np.where(inside, w[None, :] / w1[:, None], 0.0)
    u = np.minimum(frac * g.u1, g.u1)
    c = frac * d[:, None]
    iu = np.floor(u)
    ic = np.floor(c)
    du = u - iu
    dv = c - ic
    stride = g.u1 + 2
    offsets = (ic * stride + iu).astype(np.int64)
    weights = np.stack([(1 - du) * (1 - dv), du * (1 - dv), (1 - du) * dv, du * dv]) * inside
    return _SweepTable(offsets=offsets, weights=weights, w1=w1, stride=stride)


def _padded(H: np.ndarray, geometry: HoughGeometry) -> np.ndarray:
    """累加器右侧与下方各补一列/行零并展平"""
    out = np.zeros((geometry.v1 + 2, geometry.u1 + 2))
    out[:geometry.v1 + 1, :geometry.u1 + 1] = H
    return out.ravel()


def _sweep_rows(flats: np.ndarray, table: _SweepTable, geometry: HoughGeometry, s: int) -> np.ndarray:
    """
    起点 s、终点 t = 0..v1 的全部扫描直方图

    Args:
        flats: (K, N) 多个补零展平的累加器，共用同一采样表

    Returns:
        (K, v1+1, width)
    """
    rows = slice(geometry.v1 - s, 2 * geometry.v1 - s + 1)
    idx = table.offsets[rows] + s * table.stride
    stride = table.stride
    h = flats[:, idx] * table.weights[0, rows]
    h += flats[:, idx + 1] * table.weights[1, rows]
    h += flats[:, idx + stride] * table.weights[2, rows]
    h += flats[:, idx + stride + 1] * table.weights[3, rows]
    return h


def sweep_histogram(H: np.ndarray, geometry: HoughGeometry, s: int, t: int) -> SweepHistogram:
    """
    沿 (0, s)–(u1, t) 在 w = 0..floor(w1) 处双线性采样 H
    """
    table = _sweep_table(geometry)
    row = t - s + geometry.v1
    w1 = float(table.w1[row])
    n = int(np.floor(w1)) + 1
    flat = _padded(np.asarray(H, dtype=float), geometry)
    idx = table.offsets[row, :n] + s * table.stride
    wts = table.weights[:, row, :n]
    stride = table.stride
    h = (flat[idx] * wts[0] + flat[idx + 1] * wts[1]
         + flat[idx + stride] * wts[2] + flat[idx + stride + 1] * wts[3])
    return SweepHistogram(s=int(s), t=int(t), w1=w1, h=h)


# ==================== 簇 ====================

def find_runs(h: Sequence[float], eps: float = 0.0) -> List[ClusterRun]:
    """
    h > eps 的极大连续段

    得分为段内均值，质心为 Σh·w / Σh（以起点为偏移计算后加回起点，两者等价）。
    """
    h = np.asarray(h, dtype=float)
    above = np.concatenate([[False], h > eps, [False]])
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    runs = []
    for a, b in zip(edges[::2], edges[1::2]):
        seg = h[a:b]
        total = seg.sum()
        offset = (seg * np.arange(len(seg))).sum() / total
        runs.append(ClusterRun(start=int(a), stop=int(b - 1), score=float(total / len(seg)), centroid=float(a + offset)))
    return runs


def total_score(runs: Iterable[ClusterRun], n: int) -> float:
    """前 n 个簇得分之和；簇不足 n 个时为 0"""
    scores = sorted((r.score for r in runs), reverse=True)
    if n < 1 or len(scores) < n:
        return 0.0
    return float(sum(scores[:n]))


def _row_scores(h: np.ndarray, frac: float, ns: Sequence[int]) -> Dict[int, np.ndarray]:
    """
    每行直方图的 Σⁿ，ns 中各 n 共享一次簇查找

    阈值 ε = frac × 行最大值。
    """
    rows, width = h.shape
    eps = frac * h.max(axis=1)
    above = h > eps[:, None]
    padded = np.zeros((rows, width + 2), dtype=np.int8)
    padded[:, 1:-1] = above
    d = np.diff(padded, axis=1)
    start_r, start_c = np.nonzero(d == 1)
    _, stop_c = np.nonzero(d == -1)

    csum = np.zeros((rows, width + 1))
    np.cumsum(h, axis=1, out=csum[:, 1:])
    sums = csum[start_r, stop_c] - csum[start_r, start_c]
    scores = sums / (stop_c - start_c)

    order = np.lexsort((-scores, start_r))
    sr = start_r[order]
    sc = scores[order]
    first = np.searchsorted(sr, sr, side="left")
    rank = np.arange(len(sr)) - first
    n_runs = np.bincount(start_r, minlength=rows)

    out = {}
    for n in ns:
        keep = rank < n
        total = np.bincount(sr[keep], weights=sc[keep], minlength=rows)
        out[n] = np.where(n_runs >= n, total, 0.0)
    return out


def _scan(Hs: Sequence[np.ndarray], geometry: HoughGeometry, ns: Sequence[int], frac: float) -> List[Dict[int, np.ndarray]]:
    """
    穷举整数 (s, t) ∈ [0, v1]²，多个累加器共享采样表一起计算

    Returns:
        与 Hs 对应的列表，每项为 n → 得分矩阵 [s, t]
    """
    table = _sweep_table(geometry)
    flats = np.stack([_padded(np.asarray(H, dtype=float), geometry) for H in Hs])
    k = len(Hs)
    size = geometry.v1 + 1
    out = [{n: np.zeros((size, size)) for n in ns} for _ in range(k)]
    for s in range(size):
        h = _sweep_rows(flats, table, geometry, s)
        rows = _row_scores(h.reshape(k * size, -1), frac, ns)
        for n, row in rows.items():
            for i, part in enumerate(row.reshape(k, size)):
                out[i][n][s] = part
    return out


def sweep_scores(H: np.ndarray, geometry: HoughGeometry, ns: Sequence[int], frac: float = 0.05) -> Dict[int, np.ndarray]:
    """
    穷举整数 (s, t) ∈ [0, v1]²，返回 n → 得分矩阵 [s, t]
    """
    return _scan([H], geometry, ns, frac)[0]



def _pick_best(scores: np.ndarray, geometry: HoughGeometry) -> Tuple[int, int, float]:
    """最大得分；平局依次取 |s−v0|+|t−v0| 小、s 小、t 小"""
    size = scores.shape[0]
    s, t = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dist = np.abs(s - geometry.v0) + np.abs(t - geometry.v0)
    order = np.lexsort((t.ravel(), s.ravel(), dist.ravel(), -scores.ravel()))
    best = order[0]
    return int(s.ravel()[best]), int(t.ravel()[best]), float(scores.ravel()[best])


def _result_at(H: np.ndarray, geometry: HoughGeometry, label: int, n: int, s: int, t: int,
               score: float, frac: float) -> SweepResult:
    hist = sweep_histogram(H, geometry, s, t)
    eps = frac * float(hist.h.max()) if hist.h.size else 0.0
    runs = find_runs(hist.h, eps)
    kept = sorted(runs, key=lambda r: -r.score)[:n]
    kept.sort(key=lambda r: r.centroid)
    frac_w = np.array([r.centroid for r in kept]) / hist.w1
    peaks = np.stack([frac_w * geometry.u1, s + frac_w * (t - s)], axis=1)
    return SweepResult(label=label, n=n, s=s, t=t, score=score, w1=hist.w1, runs=kept, peaks=peaks)


def best_sweep(H: np.ndarray, geometry: HoughGeometry, n: int, label: int = Label.LAMBDA,
               frac: float = 0.05) -> SweepResult:
    """
    单个累加器上 Σⁿ 最大的扫描线

    Raises:
        NoPencilError: 所有扫描线得分为 0
    """
    scores = sweep_scores(H, geometry, (n,), frac)[n]
    s, t, score = _pick_best(scores, geometry)
    if score <= 0:
        raise NoPencilError(f"找不到包含 {n} 条直线的扫描线")
    return _result_at(H, geometry, label, n, s, t, score, frac)


# ==================== 对应关系 ====================

def resolve_pencils(l_lam: float, m_mu: float, l_mu: float, m_lam: float) -> Tuple[int, int]:
    """
    (L, M) ⇔ (λ, μ) 当且仅当 Σℓ_λ + Σm_μ > Σℓ_μ + Σm_λ，否则 (μ, λ)

    Returns:
        (L 对应的标签, M 对应的标签)
    """
    direct = l_lam + m_mu
    swapped = l_mu + m_lam
    if direct <= 0 and swapped <= 0:
        raise NoPencilError("两种对应关系的总得分都为 0")
    if direct > swapped:
        return Label.LAMBDA, Label.MU
    return Label.MU, Label.LAMBDA


def pencil_candidates(acc: HoughAccumulator, spec: GridSpec, frac: float = 0.05) -> List[PencilSearch]:
    """
    两种对应关系下的 L、M 最优扫描，按 resolve_pencils 的判定排序

    第一项为判定的对应关系；另一种对应关系得分均为正时作为备选，
    供判决失败时重试（边缘直线的簇较弱，Σ 判定在 ℓ 与 m 接近时不可靠）。

    Raises:
        NoPencilError: 判定的对应关系中某个标签找不到足够的直线
    """
    g = acc.geometry
    ell, m = spec.rows, spec.cols
    ns = tuple(sorted({ell, m}))
    labels = (Label.LAMBDA, Label.MU)
    best = {}
    for label, scores in zip(labels, _scan([acc.array(label) for label in labels], g, ns, frac)):
        for n in ns:
            best[(label, n)] = _pick_best(scores[n], g)

    totals = {
        "l_lambda": best[(Label.LAMBDA, ell)][2],
        "m_mu": best[(Label.MU, m)][2],
        "l_mu": best[(Label.MU, ell)][2],
        "m_lambda": best[(Label.LAMBDA, m)][2],
    }
    logger.debug("[Sweep] 得分 {}", {k: round(v, 3) for k, v in totals.items()})
    primary = resolve_pencils(totals["l_lambda"], totals["m_mu"], totals["l_mu"], totals["m_lambda"])

    candidates = []
    for l_label, m_label in (primary, primary[::-1]):
        pair = [(l_label, ell), (m_label, m)]
        missing = [(label, n) for label, n in pair if best[(label, n)][2] <= 0]
        if missing:
            if not candidates:
                label, n = missing[0]
                raise NoPencilError(f"标签 {Label(label).name} 上找不到 {n} 条直线")
            continue
        results = [_result_at(acc.array(label), g, label, n, *best[(label, n)], frac) for label, n in pair]
        candidates.append(PencilSearch(L=results[0], M=results[1], l_label=int(l_label),
                                       m_label=int(m_label), scores=totals))
    return candidates


def find_pencils(acc: HoughAccumulator, spec: GridSpec, frac: float = 0.05) -> PencilSearch:
    """
    对两个累加器同时计算 n ∈ {ℓ, m} 的得分，确定对应关系并返回 L、M 的最优扫描
    """
    return pencil_candidates(acc, spec, frac)[0]


# ==================== 直线束与顶点 ====================

def pencil_lines(result: SweepResult, frame: LocalFrame, geometry: HoughGeometry) -> Pencil:
    """
    簇质心 → 局部直线 → 图像直线，按质心顺序排列

    顶点 apex 由扫描线两端点 (0, s)、(u1, t) 对应的两条直线相交得到。
    """
    lines = [frame.line_to_image(line_from_peak(u, v, result.label, geometry)) for u, v in result.peaks]
    a = line_from_peak(0.0, float(result.s), result.label, geometry)
    b = line_from_peak(float(geometry.u1), float(result.t), result.label, geometry)
    apex = frame.point_to_image(np.cross(a, b))
    return Pencil(lines=np.array(lines).reshape(-1, 3), apex=apex)


def grid_vertices(L: Pencil, M: Pencil, image_shape: Optional[Tuple[int, int]] = None) -> VertexGrid:
    """
    v_ij = Λ_i × M_j

    Args:
        image_shape: (Y, X)，给定时要求顶点位于 2 倍图像包围盒内

    Raises:
        GeometricFailureError: 交点在无穷远或超出包围盒
    """
    pts = np.zeros((len(L), len(M), 2))
    for i, lam in enumerate(L.lines):
        for j, mu in enumerate(M.lines):
            try:
                p = line_intersect(lam, mu)
            except DegenerateInputError as e:
                raise GeometricFailureError(f"顶点 ({i + 1}, {j + 1}): {e}") from e
            if abs(p[2]) <= 1e-12 * np.linalg.norm(p):
                raise GeometricFailureError(f"顶点 ({i + 1}, {j + 1}) 在无穷远处")
            pts[i, j] = p[:2] / p[2]
    if image_shape is not None:
        height, width = image_shape
        xs, ys = pts[..., 0], pts[..., 1]
        inside = (xs >= -width / 2) & (xs <= 1.5 * width) & (ys >= -height / 2) & (ys <= 1.5 * height)
        if not inside.all():
            raise GeometricFailureError("顶点超出 2 倍图像包围盒")
    return VertexGrid(pts)
