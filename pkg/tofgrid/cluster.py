"""
梯度聚类模块 - 将每个梯度像素标记为 λ、μ 或 ∅

两种方法：
- 主成分法（pca）：双角映射 (σ, τ) 后取非中心二阶矩的主轴 2φ，
  按投影 π 与阈值 π_min 分类
- RANSAC 法：在 (ξ, η) 空间随机取两点定义两条过原点的直线，
  按厚度 2·π_min 的板带分类，保留非空标签最多的方案

此阶段 λ/μ 命名是任意的，与直线束 L/M 的对应关系在 sweep 中确定。

Usage:
    from tofgrid.cluster import fit_pca, classify_pca, classify_ransac

    model = fit_pca(grads, pi_min)
    labels = classify_pca(grads, model)
    labels, model = classify_ransac(grads, pi_min, n_iter=100, seed=0)
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from .core import ConfigError, DegenerateClusterError
from .preprocess import GradientField

# ρ 低于此值视为零梯度
RHO_EPS = 1e-9

# 主轴特征值比下限，低于此值认为分布各向同性
MIN_EIGEN_RATIO = 1.05

# RANSAC 两条法向夹角下限
MIN_NORMAL_ANGLE = np.deg2rad(1.0)

# 单个候选遇到平行采样时的最大重采样次数
MAX_RESAMPLE = 10


class Label(IntEnum):
    """像素标签"""
    NULL = 0
    LAMBDA = 1
    MU = 2


@dataclass(frozen=True)
class ClusterModel:
    """聚类模型：pca 记录主轴角 2φ，ransac 记录两条法向"""
    method: str
    pi_min: float
    axis_angle: Optional[float] = None
    normals: Optional[np.ndarray] = None


# ==================== 双角映射 ====================

def double_angle(xi, eta) -> Tuple[np.ndarray, np.ndarray]:
    """
    双角映射：σ = (ξ² − η²)/ρ，τ = 2ξη/ρ

    |(σ, τ)| = ρ，且 (−ξ, −η) 与 (ξ, η) 映射到同一点。
    ρ 为零的输入由调用方预先过滤，此处返回 (0, 0)。
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    rho = np.hypot(xi, eta)
    safe = np.where(rho > 0, rho, 1.0)
    sigma = np.where(rho > 0, (xi * xi - eta * eta) / safe, 0.0)
    tau = np.where(rho > 0, 2 * xi * eta / safe, 0.0)
    return sigma, tau


def principal_axis(sigma, tau) -> float:
    """
    非中心二阶矩 Σ(σ,τ)ᵀ(σ,τ) 的主特征向量方向角 2φ（弧度，(−π/2, π/2]）

    特征向量符号取第一分量非负（为零时第二分量非负）。

    Raises:
        DegenerateClusterError: 点数不足 2 或特征值比 < 1.05
    """
    sigma = np.ravel(np.asarray(sigma, dtype=float))
    tau = np.ravel(np.asarray(tau, dtype=float))
    if sigma.size < 2:
        raise DegenerateClusterError("双角点不足 2 个，无法估计主轴")
    pts = np.stack([sigma, tau], axis=1)
    moment = pts.T @ pts
    evals, evecs = np.linalg.eigh(moment)
    lo, hi = evals
    if hi <= 0 or (lo > 0 and hi / lo < MIN_EIGEN_RATIO):
        raise DegenerateClusterError(f"梯度分布各向同性，特征值 {lo:.4g}, {hi:.4g}")
    e = evecs[:, 1]
    if e[0] < 0 or (e[0] == 0 and e[1] < 0):
        e = -e
    return float(np.arctan2(e[1], e[0]))


def default_pi_min(grads: GradientField, fraction: float = 0.2, percentile: float = 95.0) -> float:
    """π_min = fraction × 非零梯度幅值的 percentile 分位数"""
    rho = grads.rho
    rho = rho[rho > RHO_EPS]
    if rho.size == 0:
        raise DegenerateClusterError("图像中没有非零梯度")
    return float(fraction * np.percentile(rho, percentile))


# ==================== 主成分法 ====================

def fit_pca(grads: GradientField, pi_min: float) -> ClusterModel:
    """由全部非零梯度估计主轴，构造 pca 模型"""
    mask = grads.rho > RHO_EPS
    sigma, tau = double_angle(grads.xi[mask], grads.eta[mask])
    axis = principal_axis(sigma, tau)
    logger.debug("[Cluster] 主轴 2φ = {:.2f}°", np.rad2deg(axis))
    return ClusterModel(method="pca", pi_min=float(pi_min), axis_angle=axis)


def classify_pca(grads: GradientField, model: ClusterModel) -> np.ndarray:
    """
    π = (σ, τ)·(cos 2φ, sin 2φ)；π ≥ π_min → λ，π ≤ −π_min → μ，否则 ∅

    Returns:
        与梯度场同形状的 uint8 标签图
    """
    if model.method != "pca" or model.axis_angle is None:
        raise ConfigError("classify_pca 需要 pca 模型")
    sigma, tau = double_angle(grads.xi, grads.eta)
    pi = sigma * np.cos(model.axis_angle) + tau * np.sin(model.axis_angle)
    labels = np.full(grads.shape, Label.NULL, dtype=np.uint8)
    live = grads.rho > RHO_EPS
    labels[live & (pi >= model.pi_min)] = Label.LAMBDA
    labels[live & (pi <= -model.pi_min)] = Label.MU
    return labels


# ==================== RANSAC 法 ====================

def slab_labels(xi, eta, normal_lambda, normal_mu, pi_min: float) -> np.ndarray:
    """
    板带分类：|π^λ| ≤ π_min 且 |π^μ| > π_min → λ，对称地 → μ，否则 ∅

    normal_* 为单位法向量 (−η_κ, ξ_κ)/|·|。
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    p_lam = np.abs(normal_lambda[0] * xi + normal_lambda[1] * eta)
    p_mu = np.abs(normal_mu[0] * xi + normal_mu[1] * eta)
    in_lam = p_lam <= pi_min
    in_mu = p_mu <= pi_min
    labels = np.full(xi.shape, Label.NULL, dtype=np.uint8)
    labels[in_lam & ~in_mu] = Label.LAMBDA
    labels[in_mu & ~in_lam] = Label.MU
    labels[np.hypot(xi, eta) <= RHO_EPS] = Label.NULL
    return labels


def _unit_normal(g: np.ndarray) -> np.ndarray:
    return np.array([-g[1], g[0]]) / np.hypot(g[0], g[1])


def classify_ransac(grads: GradientField, pi_min: float, n_iter: int = 100,
                    seed: int = 0) -> Tuple[np.ndarray, ClusterModel]:
    """
    RANSAC 聚类

    只从 ρ > π_min 的梯度中采样（更弱的梯度同时落在两条板带内，不可能被标记）。
    两条法向夹角小于 1° 时重采样；非空标签数相同时保留先出现的候选。
    给定 seed 时结果确定。

    Raises:
        DegenerateClusterError: 可采样梯度不足 2 个，或所有候选都退化
    """
    if n_iter < 1:
        raise ConfigError(f"RANSAC 迭代次数至少为 1: {n_iter}")
    rho = grads.rho
    pool = np.flatnonzero(rho.ravel() > max(pi_min, RHO_EPS))
    if pool.size < 2:
        raise DegenerateClusterError(f"可采样梯度只有 {pool.size} 个")

    xi = grads.xi.ravel()
    eta = grads.eta.ravel()
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, pool.size, size=(n_iter, MAX_RESAMPLE, 2))

    best_count = -1
    best_labels = None
    best_normals = None
    for candidate in pairs:
        normals = None
        for a, b in candidate:
            ga = np.array([xi[pool[a]], eta[pool[a]]])
            gb = np.array([xi[pool[b]], eta[pool[b]]])
            n_lam = _unit_normal(ga)
            n_mu = _unit_normal(gb)
            # 直线无方向，夹角取 [0, 90°]
            angle = np.arccos(np.clip(abs(n_lam @ n_mu), 0.0, 1.0))
            if angle >= MIN_NORMAL_ANGLE:
                normals = (n_lam, n_mu)
                break
        if normals is None:
            continue
        labels = slab_labels(xi, eta, normals[0], normals[1], pi_min)
        count = int(np.count_nonzero(labels))
        if count > best_count:
            best_count = count
            best_labels = labels
            best_normals = np.stack(normals)

    if best_labels is None:
        raise DegenerateClusterError("RANSAC 所有候选采样都退化")
    logger.debug("[Cluster] RANSAC 最优候选非空标签 {}", best_count)
    model = ClusterModel(method="ransac", pi_min=float(pi_min), normals=best_normals)
    return best_labels.reshape(grads.shape), model


# ==================== 诊断 ====================

def label_counts(labels: np.ndarray) -> Dict[str, int]:
    """各标签像素数"""
    return {
        "lambda": int(np.count_nonzero(labels == Label.LAMBDA)),
        "mu": int(np.count_nonzero(labels == Label.MU)),
        "null": int(np.count_nonzero(labels == Label.NULL)),
    }


def swap_labels(labels: np.ndarray) -> np.ndarray:
    """交换 λ/μ 命名"""
    out = labels.copy()
    out[labels == Label.LAMBDA] = Label.MU
    out[labels == Label.MU] = Label.LAMBDA
    return out
