"""
命令行入口

子命令：
- detect  单幅图像检测，输出检测结果 JSON
- batch   目录批量检测，输出 JSON Lines 与清单
- synth   生成带真值的合成场景
- slant   倾斜鲁棒性实验，输出一致率曲线 CSV
- eval    在合成语料上统计检出率、几何误差与误检

退出码：0 成功/检出，1 输入或配置错误，2 未检出

Usage:
    python -m tofgrid detect scene.pgm --depth scene.pfm --rows 4 --cols 5 --d0 1.0 --d1 2.0
    python -m tofgrid synth --count 200 --seed 7 --out corpus/
    python -m tofgrid eval corpus/ --rows 4 --cols 5 --d0 1.0 --d1 2.0
    python -m tofgrid slant --trials 100 --slants 0:10:80 --out curve.csv
"""

import argparse
import json
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .config import load_config_file, resolve_config
from .core import ConfigError, GenerationError, GridSpec, ImageFormatError
from .hough import to_pgm
from .metrics import lattice_deviation
from .pipeline import detect, detect_batch
from .pnmio import (
    AmplitudeImage,
    DepthImage,
    check_pair,
    detection_record,
    read_depth_pgm,
    read_pfm,
    read_pgm,
    write_detection_json,
    write_pfm,
    write_pgm,
)
from .preprocess import erode_mask, gradient, segment_depth
from .schemas import DetectorConfig, GroundTruthRecord, RunManifest
from .synth import curve_to_csv, random_scene, slant_base, slant_experiment

console = Console(stderr=True)

# 配置键 → 命令行类型
CONFIG_FLAGS = {
    "d0": float,
    "d1": float,
    "depth_scale": float,
    "erosion_radius": int,
    "method": str,
    "pi_min_fraction": float,
    "pi_min_percentile": float,
    "pi_min": float,
    "ransac_iters": int,
    "seed": int,
    "hough_scale": float,
    "run_threshold": float,
    "f": float,
    "g": float,
    "gradient_sampling": str,
    "subpixel_window": int,
    "subpixel_max_iter": int,
    "subpixel_tol": float,
    "subpixel_weighting": str,
}

# 退出码
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTED = 2


# ==================== 工具函数 ====================

def setup_logging(verbosity: int) -> None:
    """只向 stderr 输出日志，stdout 保留给 JSON"""
    level = "WARNING" if verbosity <= 0 else ("INFO" if verbosity == 1 else "DEBUG")
    logger.remove()
    logger.add(sys.stderr, level=level, format="{time:HH:mm:ss} | {level: <7} | {message}")


def build_config(args: argparse.Namespace) -> DetectorConfig:
    """命令行 > 配置文件 > 默认值"""
    file_values = load_config_file(Path(args.config)) if getattr(args, "config", None) else {}
    cli_values = {key: getattr(args, key, None) for key in CONFIG_FLAGS}
    return resolve_config(file_values, cli_values)


def read_pair(amplitude: Path, depth: Optional[Path], cfg: DetectorConfig) -> Tuple[AmplitudeImage, Optional[DepthImage]]:
    """读取幅值图与可选深度图（.pfm 或 16 位 .pgm）"""
    amp = read_pgm(Path(amplitude).read_bytes())
    dep = None
    if depth is not None:
        raw = Path(depth).read_bytes()
        dep = read_pfm(raw) if Path(depth).suffix.lower() == ".pfm" else read_depth_pgm(raw, cfg.depth_scale)
    check_pair(amp, dep)
    return amp, dep


def find_pairs(directory: Path) -> List[Tuple[str, Path, Optional[Path]]]:
    """按文件名主干配对 <stem>.pgm + <stem>.pfm"""
    pairs = []
    for pgm in sorted(Path(directory).glob("*.pgm")):
        pfm = pgm.with_suffix(".pfm")
        pairs.append((pgm.stem, pgm, pfm if pfm.exists() else None))
    return pairs


def parse_slants(text: str) -> List[float]:
    """"0:10:80"（含终点）或 "0,15,30" """
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[1] <= 0:
            raise ConfigError(f"倾斜角范围格式应为 start:step:stop，收到 {text}")
        start, step, stop = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + k * step for k in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def _load_items(pairs, cfg: DetectorConfig):
    """读取所有图像，失败的文件记入 errors"""
    items, names, errors = [], [], []
    for stem, pgm, pfm in pairs:
        try:
            items.append(read_pair(pgm, pfm, cfg))
            names.append(stem)
        except (OSError, ImageFormatError) as e:
            logger.warning("[CLI] 跳过 {}: {}", pgm.name, e)
            errors.append({"file": pgm.name, "error": str(e)})
    return items, names, errors


# ==================== 子命令 ====================

def cmd_detect(args: argparse.Namespace) -> int:
    """单幅图像检测"""
    cfg = build_config(args)
    spec = GridSpec(args.rows, args.cols)
    amp, depth = read_pair(Path(args.amplitude), Path(args.depth) if args.depth else None, cfg)
    result = detect(amp, depth, spec, cfg)

    payload = write_detection_json(result)
    if args.json:
        Path(args.json).write_bytes(payload + b"\n")
        logger.info("[CLI] 检测结果已写入 {}", args.json)
    else:
        sys.stdout.write(payload.decode("utf-8") + "\n")

    if args.dump_hough and result.hough is not None:
        out = Path(args.dump_hough)
        out.mkdir(parents=True, exist_ok=True)
        (out / "hough_lambda.pgm").write_bytes(to_pgm(result.hough.lam))
        (out / "hough_mu.pgm").write_bytes(to_pgm(result.hough.mu))
        logger.info("[CLI] Hough 累加器已写入 {}", out)

    return EXIT_OK if result.accepted else EXIT_REJECTED


def cmd_batch(args: argparse.Namespace) -> int:
    """目录批量检测"""
    cfg = build_config(args)
    spec = GridSpec(args.rows, args.cols)
    directory = Path(args.directory)
    pairs = find_pairs(directory)
    if not pairs:
        console.print(f"[red]目录中没有 .pgm 文件: {directory}[/red]")
        return EXIT_ERROR

    items, names, errors = _load_items(pairs, cfg)
    results = detect_batch(items, spec, cfg, jobs=args.jobs)

    records = []
    for name, result in zip(names, results):
        entry = {"file": name, **detection_record(result).model_dump()}
        records.append(entry)
        sys.stdout.write(json.dumps(entry, ensure_ascii=False) + "\n")

    manifest = RunManifest.build("batch", cfg.model_dump(), [p.name for _, p, _ in pairs], records, errors)
    manifest_path = Path(args.manifest) if args.manifest else directory / "manifest.json"
    manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")

    table = Table(title="批量检测")
    table.add_column("处理")
    table.add_column("检出")
    table.add_column("错误")
    table.add_column("平均几何误差 (px)")
    mge = manifest.mean_geometric_error
    table.add_row(str(manifest.processed), str(manifest.detections), str(len(errors)),
                  f"{mge:.4f}" if mge is not None else "-")
    console.print(table)
    return EXIT_OK if manifest.processed > 0 else EXIT_ERROR


def cmd_synth(args: argparse.Namespace) -> int:
    """生成合成场景与真值文件"""
    spec = GridSpec(args.rows, args.cols)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(args.count)
    for k, child in enumerate(seeds):
        scene_seed = int(child.generate_state(1)[0])
        scene = random_scene(spec, args.width, args.height, scene_seed, slant_max_deg=args.slant_max,
                             noise=args.noise, kind=args.kind, supersample=args.supersample,
                             with_depth=not args.no_depth)
        stem = f"scene_{k:04d}"
        (out / f"{stem}.pgm").write_bytes(write_pgm(scene.amplitude.data, maxval=255))
        if scene.depth is not None:
            (out / f"{stem}.pfm").write_bytes(write_pfm(scene.depth.data))
        truth = GroundTruthRecord(
            H=[float(v) for v in (scene.H.ravel() if scene.H is not None else np.zeros(9))],
            vertices=[[float(x), float(y)] for x, y in scene.truth.flat()] if scene.truth is not None else [],
            rows=spec.rows,
            cols=spec.cols,
            kind=scene.kind,
        )
        (out / f"{stem}.json").write_text(truth.model_dump_json(), encoding="utf-8")
    logger.info("[CLI] 已生成 {} 个场景到 {}", args.count, out)
    console.print(f"已生成 {args.count} 个 {args.kind} 场景 → {out}")
    return EXIT_OK


def _base_gradients(args: argparse.Namespace, cfg: DetectorConfig):
    """倾斜实验的正视基准梯度：用户图像或合成棋盘"""
    if args.base:
        amp, depth = read_pair(Path(args.base), Path(args.base_depth) if args.base_depth else None, cfg)
        masked = segment_depth(amp, depth, cfg.d0, cfg.d1)
        return gradient(erode_mask(masked, cfg.erosion_radius))
    return slant_base(GridSpec(args.rows, args.cols), args.width, args.height, noise=args.noise, seed=cfg.seed)


def cmd_slant(args: argparse.Namespace) -> int:
    """倾斜鲁棒性实验"""
    cfg = build_config(args)
    slants = parse_slants(args.slants)
    base = _base_gradients(args, cfg)
    curve = slant_experiment(
        base, slants, trials=args.trials, seed=cfg.seed, method=cfg.method,
        pi_min_fraction=cfg.pi_min_fraction, pi_min_percentile=cfg.pi_min_percentile,
        ransac_iters=cfg.ransac_iters, sample_size=args.sample_size, jobs=args.jobs,
    )
    text = curve_to_csv(curve)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)

    table = Table(title="倾斜鲁棒性")
    table.add_column("倾斜角 (°)", justify="right")
    table.add_column("平均一致率", justify="right")
    table.add_column("标准差", justify="right")
    for p in curve:
        table.add_row(f"{p.slant_deg:g}", f"{p.mean:.4f}", f"{p.stddev:.4f}")
    console.print(table)
    return EXIT_OK


def evaluate(names: Sequence[str], results, directory: Path) -> Dict[str, Any]:
    """对照真值统计检出、误差与误检"""
    stats: Dict[str, Any] = {"boards": 0, "clutter": 0, "detected": 0, "false_positives": 0}
    errors = []
    reasons = Counter()
    for name, result in zip(names, results):
        truth_path = directory / f"{name}.json"
        if not truth_path.exists():
            continue
        truth = GroundTruthRecord.model_validate_json(truth_path.read_text(encoding="utf-8"))
        is_board = truth.kind != "clutter"
        stats["boards" if is_board else "clutter"] += 1
        if not result.accepted:
            reasons[result.reject_reason] += 1
            continue
        if not is_board:
            stats["false_positives"] += 1
            continue
        truth_pts = np.asarray(truth.vertices, dtype=float)
        deviation = lattice_deviation(result.grid.points, truth_pts, shape=(truth.rows, truth.cols))
        if deviation > 0.5:
            stats["false_positives"] += 1
            continue
        stats["detected"] += 1
        errors.append(result.geometric_error)
    stats["detection_rate"] = stats["detected"] / stats["boards"] if stats["boards"] else None
    stats["mean_geometric_error"] = float(np.mean(errors)) if errors else None
    stats["reject_reasons"] = dict(reasons)
    return stats


def cmd_eval(args: argparse.Namespace) -> int:
    """在带真值的合成语料上评估"""
    cfg = build_config(args)
    spec = GridSpec(args.rows, args.cols)
    directory = Path(args.directory)
    pairs = find_pairs(directory)
    if not pairs:
        console.print(f"[red]目录中没有 .pgm 文件: {directory}[/red]")
        return EXIT_ERROR

    items, names, errors = _load_items(pairs, cfg)
    results = detect_batch(items, spec, cfg, jobs=args.jobs)
    stats = evaluate(names, results, directory)

    records = [{"file": n, **detection_record(r).model_dump()} for n, r in zip(names, results)]
    manifest = RunManifest.build("eval", cfg.model_dump(), [p.name for _, p, _ in pairs], records, errors)
    payload = {"manifest": manifest.model_dump(), "evaluation": stats}
    manifest_path = Path(args.manifest) if args.manifest else directory / "eval_manifest.json"
    manifest_path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
    sys.stdout.write(json.dumps(stats, ensure_ascii=False) + "\n")

    table = Table(title="合成语料评估")
    table.add_column("指标")
    table.add_column("数值", justify="right")
    rate = stats["detection_rate"]
    mge = stats["mean_geometric_error"]
    table.add_row("棋盘场景", str(stats["boards"]))
    table.add_row("杂乱场景", str(stats["clutter"]))
    table.add_row("正确检出", str(stats["detected"]))
    table.add_row("检出率", f"{rate:.1%}" if rate is not None else "-")
    table.add_row("平均几何误差 (px)", f"{mge:.4f}" if mge is not None else "-")
    table.add_row("误检", str(stats["false_positives"]))
    for reason, count in sorted(stats["reject_reasons"].items()):
        table.add_row(f"拒绝: {reason}", str(count))
    console.print(table)
    return EXIT_OK


# ==================== 参数解析 ====================

def _add_detector_args(p: argparse.ArgumentParser) -> None:
    """检测器配置参数，未指定时为 None，由配置文件或默认值补全"""
    p.add_argument("--config", help="配置文件（key = value 或 .yaml）")
    for key, kind in CONFIG_FLAGS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None,
                       help=f"覆盖配置项 {key}")


def _add_grid_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--rows", type=int, required=required, default=4, help="L 束直线数 ℓ")
    p.add_argument("--cols", type=int, required=required, default=5, help="M 束直线数 m（须大于 ℓ）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tofgrid", description="ToF 幅值/深度图棋盘格顶点检测")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v 显示 INFO，-vv 显示 DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="检测单幅图像")
    p.add_argument("amplitude", help="幅值图 .pgm")
    p.add_argument("--depth", help="深度图 .pfm（或 16 位 .pgm，配合 --depth-scale）")
    p.add_argument("--json", help="结果 JSON 输出路径（默认 stdout）")
    p.add_argument("--dump-hough", help="Hough 累加器调试图输出目录")
    _add_grid_args(p)
    _add_detector_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("batch", help="批量检测目录")
    p.add_argument("directory", help="包含 <stem>.pgm + <stem>.pfm 的目录")
    p.add_argument("--jobs", type=int, default=1, help="并行线程数")
    p.add_argument("--manifest", help="清单输出路径（默认 <目录>/manifest.json）")
    _add_grid_args(p)
    _add_detector_args(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("synth", help="生成合成场景")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--slant-max", type=float, default=60.0, help="最大倾斜角（度）")
    p.add_argument("--noise", type=float, default=2.0, help="高斯噪声标准差（灰度级）")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=["board", "clutter", "cropped"], default="board")
    p.add_argument("--width", type=int, default=176)
    p.add_argument("--height", type=int, default=144)
    p.add_argument("--supersample", type=int, default=4)
    p.add_argument("--no-depth", action="store_true", help="不生成深度图")
    p.add_argument("--out", required=True, help="输出目录")
    _add_grid_args(p, required=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("slant", help="倾斜鲁棒性实验")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--slants", default="0:10:80", help="start:step:stop 或逗号分隔（度）")
    p.add_argument("--out", help="CSV 输出路径（默认 stdout）")
    p.add_argument("--base", help="正视基准幅值图（默认渲染合成棋盘）")
    p.add_argument("--base-depth", help="基准深度图")
    p.add_argument("--noise", type=float, default=2.0, help="合成基准图噪声")
    p.add_argument("--width", type=int, default=176)
    p.add_argument("--height", type=int, default=144)
    p.add_argument("--sample-size", type=int, default=5000)
    p.add_argument("--jobs", type=int, default=1)
    _add_grid_args(p, required=False)
    _add_detector_args(p)
    p.set_defaults(func=cmd_slant)

    p = sub.add_parser("eval", help="在合成语料上评估")
    p.add_argument("directory", help="synth 生成的语料目录")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--manifest", help="评估清单输出路径（默认 <目录>/eval_manifest.json）")
    _add_grid_args(p)
    _add_detector_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主程序，返回退出码"""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except (OSError, ImageFormatError, ConfigError, GenerationError, ValidationError) as e:
        logger.error("[CLI] {}", e)
        console.print(f"[red]错误: {e}[/red]")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
