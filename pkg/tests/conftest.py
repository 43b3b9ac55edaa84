"""
测试公共夹具：合成场景在模块内只渲染一次
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 添加项目根目录到 Python 路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from tofgrid.core import GridSpec  # noqa: E402
from tofgrid.synth import board_homography, render_board  # noqa: E402

WIDTH = 176
HEIGHT = 144


@pytest.fixture(scope="session")
def spec():
    return GridSpec(4, 5)


@pytest.fixture(scope="session")
def fronto_scene(spec):
    """正视、无噪声、方块 12 像素的棋盘"""
    H = board_homography(spec, WIDTH, HEIGHT, 0.0, 0.0, 0.0, square_px=12.0)
    return render_board(spec, H, WIDTH, HEIGHT, noise=0.0, seed=0)


@pytest.fixture(scope="session")
def slanted_scene(spec):
    """倾斜 30°、噪声 σ=2 的棋盘"""
    H = board_homography(spec, WIDTH, HEIGHT, np.deg2rad(30.0), 0.4, 0.3, square_px=12.0)
    return render_board(spec, H, WIDTH, HEIGHT, noise=2.0, seed=11)
