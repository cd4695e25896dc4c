"""Declarative problem configurations.

Configs are YAML key-trees; every field error is reported with its key
path so the CLI diagnostic points at the offending entry. The shipped
paper-benchmark configs live in ``hjras/configs/`` and can be addressed
by bare name (``di_problem1``) as well as by file path.
"""

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .dynamics import ControlAffineSystem, builtin_system
from .errors import ConfigError
from .grids import Grid
from .shapes import ShapeExpr, axis_box, ball, complement, half_plane, intersection, union
from .synthesis import RASProblem, TimedShape


@dataclass
class Tolerances:
    cfl: float = 0.5
    tol: float = 1e-3
    tol_level: float | None = None
    max_horizon_avoid: float = 80.0
    max_horizon_rclvf: float = 80.0


@dataclass
class ProblemConfig:
    name: str
    system_name: str
    system_params: dict
    control_box: list
    grid_lo: list
    grid_hi: list
    grid_counts: list
    grid_periodic: list
    ci_counts: list | None
    targets: list  # (shape, window)
    timed_obstacles: list
    all_time_obstacle: ShapeExpr | None
    poi: list
    poi_dims: list | None
    gamma: float
    gamma_hat: float
    delta: float
    t_stab_max: float | None
    rclvf_offset: float | str
    seed: int
    tolerances: Tolerances = field(default_factory=Tolerances)

    def build_system(self) -> ControlAffineSystem:
        params = dict(self.system_params)
        if self.control_box is not None:
            params["control_box"] = self.control_box
        try:
            return builtin_system(self.system_name, **params)
        except ValueError as exc:
            raise ConfigError(str(exc), field="system") from exc

    def build_grid(self, scale=None) -> Grid:
        counts = self.scaled_counts(scale)
        try:
            return Grid(
                np.asarray(self.grid_lo, dtype=float),
                np.asarray(self.grid_hi, dtype=float),
                np.asarray(counts, dtype=np.int64),
                np.asarray(self.grid_periodic, dtype=bool),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field="grid") from exc

    def scaled_counts(self, scale=None) -> list:
        if scale is None:
            return list(self.grid_counts)
        if isinstance(scale, str):
            if scale != "ci":
                raise ConfigError(f"unknown scale {scale!r} (use a float or 'ci')", field="scale")
            if self.ci_counts is not None:
                return list(self.ci_counts)
            scale = 0.25
        factor = float(scale)
        if factor <= 0:
            raise ConfigError("scale must be positive", field="scale")
        return [max(5, int(math.floor((c - 1) * factor)) + 1) for c in self.grid_counts]

    def build_problem(self) -> RASProblem:
        sys = self.build_system()
        try:
            return RASProblem(
                system=sys,
                targets=tuple(TimedShape(s, w) for s, w in self.targets),
                timed_obstacles=tuple(TimedShape(s, w) for s, w in self.timed_obstacles),
                all_time_obstacle=self.all_time_obstacle,
                poi=np.asarray(self.poi, dtype=float),
                poi_dims=None if self.poi_dims is None else tuple(self.poi_dims),
                gamma=self.gamma,
                gamma_hat=self.gamma_hat,
                delta=self.delta,
                t_stab_max=self.t_stab_max,
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field="targets/timed_obstacles") from exc


# ---------------------------------------------------------------------------
# Parsing helpers


def _need(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError("required key missing", field=f"{path}.{key}")
    return mapping[key]


def _as_floats(value, path: str, length: int | None = None) -> list:
    if not isinstance(value, (list, tuple)):
        raise ConfigError("expected a list of numbers", field=path)
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError("expected numeric entries", field=path) from exc
    if length is not None and len(out) != length:
        raise ConfigError(f"expected {length} entries, got {len(out)}", field=path)
    return out


def _as_float(value, path: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError("expected a number", field=path) from exc


def parse_shape(node, path: str) -> ShapeExpr:
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigError(
            "shape must be a single-key mapping (ball/box/half_plane/union/intersection/complement)",
            field=path,
        )
    kind, body = next(iter(node.items()))
    try:
        if kind == "ball":
            return ball(
                _need(body, "center", path),
                _as_float(_need(body, "radius", path), f"{path}.radius"),
                dims=body.get("dims"),
            )
        if kind == "box":
            return axis_box(_need(body, "lo", path), _need(body, "hi", path), dims=body.get("dims"))
        if kind == "half_plane":
            return half_plane(
                _need(body, "normal", path),
                _as_float(_need(body, "offset", path), f"{path}.offset"),
                dims=body.get("dims"),
            )
        if kind == "union":
            return union(*(parse_shape(m, f"{path}.union[{i}]") for i, m in enumerate(body)))
        if kind == "intersection":
            return intersection(
                *(parse_shape(m, f"{path}.intersection[{i}]") for i, m in enumerate(body))
            )
        if kind == "complement":
            return complement(parse_shape(body, f"{path}.complement"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=path) from exc
    raise ConfigError(f"unknown shape kind {kind!r}", field=path)


def _parse_timed_list(nodes, path: str, require_chain: bool) -> list:
    if nodes is None:
        return []
    if not isinstance(nodes, list):
        raise ConfigError("expected a list", field=path)
    out = []
    expected_start = 0.0
    for i, node in enumerate(nodes):
        p = f"{path}[{i}]"
        if not isinstance(node, dict):
            raise ConfigError("expected a mapping with shape and window", field=p)
        shape = parse_shape(_need(node, "shape", p), f"{p}.shape")
        window = _as_floats(_need(node, "window", p), f"{p}.window", length=2)
        if window[0] >= window[1]:
            raise ConfigError(
                f"window [{window[0]}, {window[1]}] must be increasing", field=f"{p}.window"
            )
        if require_chain and abs(window[0] - expected_start) > 1e-9:
            raise ConfigError(
                f"window starts at {window[0]} but the previous deadline is {expected_start}",
                field=f"{p}.window",
            )
        expected_start = window[1]
        out.append((shape, (window[0], window[1])))
    return out


def parse_config(text: str, name_hint: str = "config") -> ProblemConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse failure: {exc}", field=name_hint) from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", field=name_hint)

    sys_node = _need(raw, "system", "")
    if not isinstance(sys_node, dict):
        raise ConfigError("expected a mapping", field="system")
    system_name = _need(sys_node, "name", "system")
    system_params = sys_node.get("params") or {}
    if not isinstance(system_params, dict):
        raise ConfigError("expected a mapping", field="system.params")
    control_box = sys_node.get("control_box")

    grid_node = _need(raw, "grid", "")
    lo = _as_floats(_need(grid_node, "lo", "grid"), "grid.lo")
    hi = _as_floats(_need(grid_node, "hi", "grid"), "grid.hi", length=len(lo))
    counts = _need(grid_node, "counts", "grid")
    if not isinstance(counts, list) or len(counts) != len(lo):
        raise ConfigError(f"expected {len(lo)} node counts", field="grid.counts")
    periodic = grid_node.get("periodic", [False] * len(lo))
    if not isinstance(periodic, list) or len(periodic) != len(lo):
        raise ConfigError(f"expected {len(lo)} periodic flags", field="grid.periodic")
    ci_counts = grid_node.get("ci_counts")
    if ci_counts is not None and (not isinstance(ci_counts, list) or len(ci_counts) != len(lo)):
        raise ConfigError(f"expected {len(lo)} entries", field="grid.ci_counts")

    targets = _parse_timed_list(_need(raw, "targets", ""), "targets", require_chain=True)
    if not targets:
        raise ConfigError("at least one target is required", field="targets")
    timed_obstacles = _parse_timed_list(raw.get("timed_obstacles"), "timed_obstacles", True)
    all_time = raw.get("all_time_obstacle")
    all_time_shape = None
    if all_time is not None:
        node = all_time.get("shape", all_time) if isinstance(all_time, dict) else all_time
        all_time_shape = parse_shape(node, "all_time_obstacle")

    poi = _as_floats(_need(raw, "poi", ""), "poi", length=len(lo))
    poi_dims = raw.get("poi_dims")
    if poi_dims is not None:
        if not isinstance(poi_dims, list) or not all(isinstance(d, int) for d in poi_dims):
            raise ConfigError("expected a list of dimension indices", field="poi_dims")
        if any(d < 0 or d >= len(lo) for d in poi_dims):
            raise ConfigError("dimension index out of range", field="poi_dims")
    gamma = _as_float(raw.get("gamma", 0.1), "gamma")
    gamma_hat = _as_float(raw.get("gamma_hat", 0.0), "gamma_hat")
    delta = _as_float(_need(raw, "delta", ""), "delta")
    if delta <= 0:
        raise ConfigError("delta must be > 0", field="delta")
    if not 0 <= gamma_hat < gamma:
        raise ConfigError(f"gamma_hat={gamma_hat} must satisfy 0 <= gamma_hat < gamma={gamma}", field="gamma_hat")
    t_stab_max = raw.get("t_stab_max")
    if t_stab_max is not None:
        t_stab_max = _as_float(t_stab_max, "t_stab_max")

    tol_node = raw.get("tolerances") or {}
    if not isinstance(tol_node, dict):
        raise ConfigError("expected a mapping", field="tolerances")
    known = {"cfl", "tol", "tol_level", "max_horizon_avoid", "max_horizon_rclvf"}
    unknown = set(tol_node) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field="tolerances")
    tolerances = Tolerances(
        cfl=_as_float(tol_node.get("cfl", 0.5), "tolerances.cfl"),
        tol=_as_float(tol_node.get("tol", 1e-3), "tolerances.tol"),
        tol_level=(
            None
            if tol_node.get("tol_level") is None
            else _as_float(tol_node.get("tol_level"), "tolerances.tol_level")
        ),
        max_horizon_avoid=_as_float(tol_node.get("max_horizon_avoid", 80.0), "tolerances.max_horizon_avoid"),
        max_horizon_rclvf=_as_float(tol_node.get("max_horizon_rclvf", 80.0), "tolerances.max_horizon_rclvf"),
    )
    if not 0 < tolerances.cfl <= 1:
        raise ConfigError("cfl must be in (0, 1]", field="tolerances.cfl")

    rclvf_offset = raw.get("rclvf_offset", "auto")
    if rclvf_offset != "auto":
        rclvf_offset = _as_float(rclvf_offset, "rclvf_offset")
        if rclvf_offset < 0:
            raise ConfigError("rclvf_offset must be >= 0 or 'auto'", field="rclvf_offset")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer", field="seed")

    cfg = ProblemConfig(
        name=str(raw.get("name", name_hint)),
        system_name=str(system_name),
        system_params=system_params,
        control_box=control_box,
        grid_lo=lo,
        grid_hi=hi,
        grid_counts=[int(c) for c in counts],
        grid_periodic=[bool(p) for p in periodic],
        ci_counts=None if ci_counts is None else [int(c) for c in ci_counts],
        targets=targets,
        timed_obstacles=timed_obstacles,
        all_time_obstacle=all_time_shape,
        poi=poi,
        poi_dims=poi_dims,
        gamma=gamma,
        gamma_hat=gamma_hat,
        delta=delta,
        t_stab_max=t_stab_max,
        rclvf_offset=rclvf_offset,
        seed=seed,
        tolerances=tolerances,
    )
    # cross-checks that need several fields at once
    cfg.build_system()
    cfg.build_grid()
    cfg.build_problem()
    return cfg


def shipped_config_names() -> list:
    files = resources.files("hjras") / "configs"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def load_config(path_or_name: str) -> ProblemConfig:
    """Load a config from a file path or a shipped config name."""
    import os

    if os.path.exists(path_or_name):
        with open(path_or_name, "r", encoding="utf-8") as fh:
            text = fh.read()
        hint = os.path.splitext(os.path.basename(path_or_name))[0]
        return parse_config(text, name_hint=hint)
    candidate = resources.files("hjras") / "configs" / f"{path_or_name}.yaml"
    if candidate.is_file():
        return parse_config(candidate.read_text(encoding="utf-8"), name_hint=path_or_name)
    raise ConfigError(
        f"no such config file, and no shipped config named {path_or_name!r} "
        f"(shipped: {', '.join(shipped_config_names())})"
    )
