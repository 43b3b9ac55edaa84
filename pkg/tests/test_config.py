"""
配置文件与优先级合并测试
"""

import pytest

from tofgrid.config import config_keys, load_config_file, resolve_config
from tofgrid.core import ConfigError
from tofgrid.schemas import DetectorConfig


def test_defaults():
    cfg = resolve_config()
    assert cfg == DetectorConfig()
    assert (cfg.method, cfg.f, cfg.g, cfg.erosion_radius) == ("pca", 0.25, 0.5, 2)
    assert (cfg.subpixel_window, cfg.subpixel_tol, cfg.subpixel_weighting) == (3, 0.001, "magnitude")


def test_key_value_file(tmp_path):
    path = tmp_path / "detector.cfg"
    path.write_text("# 检测器配置\nmethod = ransac\nf = 0.3\nransac_iters = 50\nd0 =\n", encoding="utf-8")
    values = load_config_file(path)
    assert values == {"method": "ransac", "f": "0.3", "ransac_iters": "50"}
    cfg = resolve_config(values)
    assert (cfg.method, cfg.f, cfg.ransac_iters, cfg.d0) == ("ransac", 0.3, 50, None)


def test_yaml_file(tmp_path):
    path = tmp_path / "detector.yaml"
    path.write_text("d0: 1.0\nd1: 2.5\nsubpixel_weighting: gradient\n", encoding="utf-8")
    cfg = resolve_config(load_config_file(path))
    assert (cfg.d0, cfg.d1, cfg.subpixel_weighting) == (1.0, 2.5, "gradient")


def test_yaml_must_be_flat(tmp_path):
    path = tmp_path / "detector.yml"
    path.write_text("hough:\n  scale: 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(path)


def test_unknown_key(tmp_path):
    path = tmp_path / "detector.cfg"
    path.write_text("threshold = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="threshold"):
        load_config_file(path)
    with pytest.raises(ConfigError):
        resolve_config(cli_values={"threshold": 3})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.cfg")


def test_cli_overrides_file():
    cfg = resolve_config({"method": "ransac", "f": "0.3"}, {"method": "pca", "f": None})
    assert (cfg.method, cfg.f) == ("pca", 0.3)


@pytest.mark.parametrize("values", [
    {"method": "hough"},
    {"d0": 2.0, "d1": 1.0},
    {"f": -0.1},
    {"erosion_radius": -1},
    {"subpixel_window": 1},
    {"pi_min_fraction": 1.5},
    {"gradient_sampling": "cubic"},
])
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        resolve_config(cli_values=values)


def test_config_keys_cover_schema():
    assert set(config_keys()) == set(DetectorConfig.model_fields)
    assert "subpixel_weighting" in config_keys()
