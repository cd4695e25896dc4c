import numpy as np
import pytest

from hjras.config import load_config, parse_config, shipped_config_names
from hjras.errors import ConfigError

MINIMAL = """
name: mini
system:
  name: double_integrator
  params: {d_max: 0.0}
grid:
  lo: [-2.0, -2.0]
  hi: [2.0, 2.0]
  counts: [41, 41]
targets:
  - shape: {ball: {center: [0.0, 0.0], radius: 0.5}}
    window: [0.0, 1.0]
poi: [0.0, 0.0]
delta: 0.01
"""


def test_minimal_parses():
    cfg = parse_config(MINIMAL)
    assert cfg.name == "mini"
    assert cfg.gamma == 0.1 and cfg.gamma_hat == 0.0
    prob = cfg.build_problem()
    assert prob.t_reach_last == 1.0
    assert prob.all_time_obstacle is None


def test_shipped_configs_all_parse():
    names = shipped_config_names()
    assert {"di_problem1", "di_problem2", "di_problem3", "dubins"} <= set(names)
    for name in names:
        cfg = load_config(name)
        cfg.build_problem()
        grid_ci = cfg.build_grid("ci")
        assert grid_ci.num_nodes < cfg.build_grid(None).num_nodes


def test_ci_counts_exact():
    assert load_config("di_problem1").scaled_counts("ci") == [101, 101]
    assert load_config("dubins").scaled_counts("ci") == [31, 31, 21]


def test_float_scale():
    cfg = load_config("di_problem1")
    assert cfg.scaled_counts(0.25) == [101, 101]
    with pytest.raises(ConfigError, match="scale"):
        cfg.scaled_counts(-1.0)


def test_malformed_window_names_field():
    bad = MINIMAL.replace("window: [0.0, 1.0]", "window: [1.0, 0.5]")
    with pytest.raises(ConfigError, match=r"targets\[0\].window"):
        parse_config(bad)


def test_unchained_windows_name_field():
    extra = MINIMAL + """
timed_obstacles:
  - shape: {ball: {center: [1.0, 1.0], radius: 0.2}}
    window: [0.5, 1.0]
"""
    with pytest.raises(ConfigError, match=r"timed_obstacles\[0\].window"):
        parse_config(extra)


def test_missing_key_names_path():
    bad = MINIMAL.replace("poi: [0.0, 0.0]\n", "")
    with pytest.raises(ConfigError, match="poi"):
        parse_config(bad)


def test_unknown_shape_kind():
    bad = MINIMAL.replace("ball", "blob")
    with pytest.raises(ConfigError, match="shape"):
        parse_config(bad)


def test_gamma_hat_bound():
    bad = MINIMAL + "gamma_hat: 0.5\n"
    with pytest.raises(ConfigError, match="gamma_hat"):
        parse_config(bad)


def test_bad_yaml_reports():
    with pytest.raises(ConfigError, match="YAML"):
        parse_config("foo: [unclosed")


def test_unknown_config_name_lists_shipped():
    with pytest.raises(ConfigError, match="di_problem1"):
        load_config("nonexistent_config")


def test_poi_dims_validation():
    bad = MINIMAL + "poi_dims: [0, 7]\n"
    with pytest.raises(ConfigError, match="poi_dims"):
        parse_config(bad)
    ok = parse_config(MINIMAL + "poi_dims: [0]\n")
    assert ok.build_problem().poi_dims == (0,)
