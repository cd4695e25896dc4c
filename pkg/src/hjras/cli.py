"""Command-line pipelines: solve -> ras -> traj/plot.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 verification failure.
"""

import argparse
import base64
import hashlib
import json
import math
import os
import sys as _sys
import time as _time

import numpy as np

from . import plotting
from .config import ProblemConfig, load_config
from .errors import (
    ConfigError,
    DegenerateDynamicsError,
    DynamicsEvaluationError,
    HJRasError,
    NotStabilizableError,
    SolverDivergenceError,
    StabilizeRegionUnusableError,
    VerificationFailure,
)
from .grids import Grid, interpolate
from .shapes import grid_periods, rasterize, rasterize_obstacle
from .solver import ValueSnapshots, _offset_search, solve_converged_avoid, solve_finite_horizon, solve_rclvf
from .synthesis import (
    CODE_NAMES,
    PHASE_NAMES,
    PHASE_REACH,
    DisturbancePolicy,
    PrecomputedFields,
    RASResult,
    compute_I_M,
    lyapunov_decay_audit,
    ras_underapprox,
    verify_trajectory,
)
from .vfpack import atomic_write, load_pack, save_pack

POLICY_FLAGS = {"worst": "worst_case_active", "zero": "zero", "random": "seeded_random"}


def _policy(flag: str) -> DisturbancePolicy:
    return DisturbancePolicy(POLICY_FLAGS[flag])


# ---------------------------------------------------------------------------
# solve


def cmd_solve(config_path: str, out_dir: str, scale=None) -> str:
    """Compute every value function the rollout needs; write packs + manifest.

    Returns the manifest path.
    """
    cfg = load_config(config_path)
    grid = cfg.build_grid(scale)
    sysm = cfg.build_system()
    prob = cfg.build_problem()
    tols = cfg.tolerances
    os.makedirs(out_dir, exist_ok=True)
    entries = []

    def record(role, index, snaps, meta):
        fname = f"{role}_{index}.vfpack" if index is not None else f"{role}.vfpack"
        save_pack(os.path.join(out_dir, fname), snaps, meta)
        entry = {"role": role, "index": index, "path": fname}
        entry.update(meta)
        entries.append(entry)

    for i, ts in enumerate(prob.targets):
        span = ts.window[1] - ts.window[0]
        t0 = _time.perf_counter()
        snaps = solve_finite_horizon(
            sysm,
            "reach",
            horizon=span,
            snapshot_stride=prob.delta,
            r_field=rasterize(ts.shape, grid),
            cfl=tols.cfl,
        )
        record(
            "reach",
            i,
            snaps,
            {"wall_time_s": round(_time.perf_counter() - t0, 3), "slices": snaps.n_slices},
        )
    for j, ts in enumerate(prob.timed_obstacles):
        span = ts.window[1] - ts.window[0]
        t0 = _time.perf_counter()
        snaps = solve_finite_horizon(
            sysm,
            "avoid",
            horizon=span,
            snapshot_stride=prob.delta,
            c_field=rasterize_obstacle(ts.shape, grid),
            cfl=tols.cfl,
        )
        record(
            "avoid",
            j,
            snaps,
            {"wall_time_s": round(_time.perf_counter() - t0, 3), "slices": snaps.n_slices},
        )
    if prob.all_time_obstacle is not None:
        t0 = _time.perf_counter()
        res = solve_converged_avoid(
            sysm,
            rasterize_obstacle(prob.all_time_obstacle, grid),
            tol=tols.tol,
            max_horizon=tols.max_horizon_avoid,
            cfl=tols.cfl,
        )
        wrapped = ValueSnapshots(
            grid=grid,
            kind="avoid",
            times=np.asarray([0.0]),
            stack=res.field.values[None, :],
            converged=res.converged,
        )
        record(
            "converged_avoid",
            None,
            wrapped,
            {
                "wall_time_s": round(_time.perf_counter() - t0, 3),
                "converged": bool(res.converged),
                "residual": res.residual,
                "tau": res.tau,
            },
        )

    t0 = _time.perf_counter()
    if cfg.rclvf_offset == "auto":
        a_offset, snaps = _offset_search(
            sysm,
            grid,
            prob.poi,
            prob.gamma,
            tol=tols.tol,
            max_horizon=tols.max_horizon_rclvf,
            cfl=tols.cfl,
            poi_dims=prob.poi_dims,
        )
    else:
        a_offset = float(cfg.rclvf_offset)
        snaps = solve_rclvf(
            sysm,
            grid,
            prob.poi,
            prob.gamma,
            a_offset=a_offset,
            tol=tols.tol,
            max_horizon=tols.max_horizon_rclvf,
            cfl=tols.cfl,
            poi_dims=prob.poi_dims,
        )
    if not snaps.converged:
        raise NotStabilizableError(
            f"stabilization value did not converge at offset {a_offset}"
        )
    record(
        "rclvf",
        None,
        snaps,
        {
            "wall_time_s": round(_time.perf_counter() - t0, 3),
            "a_offset": a_offset,
            "gamma": prob.gamma,
            "converged": bool(snaps.converged),
        },
    )

    manifest = {
        "format": 1,
        "config_name": cfg.name,
        "scale": scale if not isinstance(scale, float) else float(scale),
        "grid": {
            "lo": grid.lo.tolist(),
            "hi": grid.hi.tolist(),
            "counts": grid.counts.tolist(),
            "periodic": grid.periodic.astype(bool).tolist(),
        },
        "delta": prob.delta,
        "entries": entries,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    atomic_write(manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest_path


# ---------------------------------------------------------------------------
# pack loading shared by ras / traj / plot


def load_manifest(manifest_path: str):
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    packs = {}
    for entry in manifest["entries"]:
        snaps, meta = load_pack(os.path.join(base, entry["path"]))
        packs[(entry["role"], entry.get("index"))] = (snaps, {**entry, **meta})
    return manifest, packs


def build_precomputed(cfg: ProblemConfig, manifest, packs) -> tuple[PrecomputedFields, float]:
    prob = cfg.build_problem()
    reach = []
    for i in range(len(prob.targets)):
        if ("reach", i) not in packs:
            raise ConfigError(f"manifest lacks the reach pack for target {i}", field="packs")
        reach.append(packs[("reach", i)][0])
    avoid = []
    for j in range(len(prob.timed_obstacles)):
        if ("avoid", j) not in packs:
            raise ConfigError(f"manifest lacks the avoid pack for obstacle {j}", field="packs")
        avoid.append(packs[("avoid", j)][0])
    conv = None
    if prob.all_time_obstacle is not None:
        if ("converged_avoid", None) not in packs:
            raise ConfigError("manifest lacks the converged avoid pack", field="packs")
        conv = packs[("converged_avoid", None)][0].field(0)
    if ("rclvf", None) not in packs:
        raise ConfigError("manifest lacks the rclvf pack", field="packs")
    rclvf = packs[("rclvf", None)][0]
    grid = rclvf.grid
    expected = cfg.build_grid(manifest.get("scale"))
    if not grid.compatible_with(expected):
        raise ConfigError(
            "packs were solved on a different grid than the config requests "
            f"(pack counts {grid.counts.tolist()}, config counts {expected.counts.tolist()})",
            field="packs",
        )
    a_offset = rclvf.a_offset
    return PrecomputedFields(tuple(reach), tuple(avoid), conv, rclvf), a_offset


def _apply_gamma_hat(cfg: ProblemConfig, gamma_hat):
    if gamma_hat is not None:
        cfg.gamma_hat = float(gamma_hat)
    return cfg


# ---------------------------------------------------------------------------
# ras


def format_ras_result(result: RASResult, config_name: str, policy: DisturbancePolicy, rng_seed: int) -> str:
    mask_bytes = np.packbits(result.mask.astype(np.uint8)).tobytes()
    sha = hashlib.sha256(mask_bytes).hexdigest()
    lines = [
        "# hjras-ras 1",
        f"config: {config_name}",
        f"seeds: {len(result.seeds)}",
        f"accepted: {result.accepted_count}",
        f"iterations: {result.total_iterations}",
        f"a_star: {result.a_star!r}",
        f"rng_seed: {rng_seed}",
        f"policy: {policy.mode}",
        f"mask_sha256: {sha}",
        f"wall_time_s: {result.wall_time:.3f}",
        f"mask_base64: {base64.b64encode(mask_bytes).decode('ascii')}",
        "audit: index,reason,steps,end_time",
    ]
    codes = result.codes
    steps = result.steps_used
    ends = result.end_times
    for i in range(len(result.mask)):
        lines.append(f"{i},{CODE_NAMES[int(codes[i])]},{int(steps[i])},{ends[i]:.6g}")
    return "\n".join(lines) + "\n"


def cmd_ras(
    config_path: str,
    manifest_path: str,
    out_path: str,
    rng_seed: int | None = None,
    policy_flag: str = "worst",
    gamma_hat=None,
    workers: int = 1,
) -> RASResult:
    """Run the under-approximation over all grid nodes; write the report."""
    cfg = _apply_gamma_hat(load_config(config_path), gamma_hat)
    manifest, packs = load_manifest(manifest_path)
    pre, _ = build_precomputed(cfg, manifest, packs)
    prob = cfg.build_problem()
    policy = _policy(policy_flag)
    seed = cfg.seed if rng_seed is None else int(rng_seed)
    result = ras_underapprox(
        prob, pre, rng_seed=seed, policy=policy, workers=workers,
        tol_level=cfg.tolerances.tol_level,
    )
    report = format_ras_result(result, cfg.name, policy, seed)
    atomic_write(out_path, report.encode())
    return result


# ---------------------------------------------------------------------------
# traj


def _active_value_series(traj, prob, pre):
    """Constraining value along the trajectory (reach stack, then rclvf)."""
    out = []
    eps = 1e-9
    for idx, t in enumerate(traj.times):
        if idx < len(traj.phases):
            phase = traj.phases[idx]
        else:
            phase = traj.phases[-1] if len(traj.phases) else PHASE_REACH
        x = pre.rclvf.grid.wrap(traj.states[idx])
        try:
            if phase == PHASE_REACH and t <= prob.t_reach_last + eps:
                j = next(
                    (i for i, ts in enumerate(prob.targets) if t <= ts.deadline + eps),
                    len(prob.targets) - 1,
                )
                snaps = pre.reach[j]
                k = snaps.time_index(min(prob.targets[j].deadline - t, snaps.horizon))
                out.append(interpolate(snaps.field(k), x))
            else:
                out.append(interpolate(pre.rclvf.final_field(), x))
        except HJRasError:
            out.append(math.nan)
    return out


def format_trajectory_csv(traj, prob, pre, verdict, audit, config_name: str) -> str:
    n = traj.states.shape[1]
    m = traj.controls.shape[1] if traj.controls.size else prob.system.control_dim
    k = traj.disturbances.shape[1] if traj.disturbances.size else prob.system.disturbance_dim
    v_active = _active_value_series(traj, prob, pre)
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"d{i + 1}" for i in range(k)]
        + ["phase", "V_active"]
    )
    lines = [
        "# hjras-traj 1",
        f"# config: {config_name}",
        f"# seed_state: {','.join(f'{v:.9g}' for v in traj.states[0])}",
        f"# termination: {traj.termination}",
        f"# reason: {traj.reason}",
        f"# verdict: {'pass' if verdict.passed else 'fail'}",
        f"# failures: {';'.join(f'{kind}:{idx}:{t:.6g}' for kind, idx, t in verdict.failures)}",
        f"# decay_pairs: {audit.n_pairs}",
        f"# decay_violations: {audit.n_violations}",
        ",".join(header),
    ]
    for i, t in enumerate(traj.times):
        row = [f"{t:.6g}"] + [f"{v:.9g}" for v in traj.states[i]]
        if i < len(traj.controls):
            row += [f"{v:.9g}" for v in traj.controls[i]]
            row += [f"{v:.9g}" for v in traj.disturbances[i]] if k else []
            row += [PHASE_NAMES[int(traj.phases[i])]]
        else:
            row += [""] * m + [""] * k + [""]
        row += [f"{v_active[i]:.9g}" if not math.isnan(v_active[i]) else ""]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_traj(
    config_path: str,
    manifest_path: str,
    seed_state,
    out_path: str,
    rng_seed: int | None = None,
    policy_flag: str = "worst",
    gamma_hat=None,
):
    """Single-seed rollout with verification verdict and decay audit.

    When the seed coincides with a grid node, the rollout reproduces
    that node's trajectory from the full-grid run bit-for-bit.
    """
    cfg = _apply_gamma_hat(load_config(config_path), gamma_hat)
    manifest, packs = load_manifest(manifest_path)
    pre, _ = build_precomputed(cfg, manifest, packs)
    prob = cfg.build_problem()
    policy = _policy(policy_flag)
    seed = cfg.seed if rng_seed is None else int(rng_seed)
    grid = pre.rclvf.grid
    x0 = np.asarray(seed_state, dtype=float)
    if x0.shape != (grid.ndim,):
        raise ConfigError(f"seed state needs {grid.ndim} coordinates", field="state")
    wrapped = grid.wrap(x0)
    if np.any(wrapped < grid.lo - 1e-9) or np.any(wrapped > grid.hi + 1e-9):
        raise ConfigError(f"seed state {x0.tolist()} is outside the grid", field="state")
    frac = (wrapped - grid.lo) / grid.spacing
    nearest = np.round(frac)
    if np.allclose(frac, nearest, atol=1e-9):
        idx = int(np.ravel_multi_index(nearest.astype(int) % grid.counts, tuple(grid.counts)))
    else:
        idx = 0
    result = ras_underapprox(
        prob,
        pre,
        seeds=wrapped[None, :],
        seed_indices=np.asarray([idx]),
        rng_seed=seed,
        policy=policy,
        record_trajectories=True,
        tol_level=cfg.tolerances.tol_level,
    )
    traj = result.trajectories[0]
    verdict = verify_trajectory(traj, prob, pre.rclvf, result.a_star)
    audit = lyapunov_decay_audit(traj, pre.rclvf, gamma_hat=prob.gamma_hat)
    atomic_write(out_path, format_trajectory_csv(traj, prob, pre, verdict, audit, cfg.name).encode())
    return traj, verdict, audit


# ---------------------------------------------------------------------------
# plot


def _parse_slice(spec: str | None, ndim: int):
    if ndim == 2:
        return None
    if spec is None:
        raise ConfigError("3D fields need --slice DIM=INDEX or --slice min:DIM", field="slice")
    spec = spec.strip()
    if spec.startswith("min:"):
        return ("min", int(spec[4:]))
    if "=" in spec:
        dim, idx = spec.split("=", 1)
        return ("index", int(dim), int(idx))
    raise ConfigError(f"cannot parse slice spec {spec!r}", field="slice")


def _project(values_nd, slice_spec, reduce="min"):
    if slice_spec is None:
        return values_nd
    if slice_spec[0] == "min":
        dim = slice_spec[1]
        return values_nd.min(axis=dim) if reduce == "min" else values_nd.max(axis=dim)
    _, dim, idx = slice_spec
    return np.take(values_nd, idx, axis=dim)


def _plot_axes(grid: Grid, slice_spec):
    dims = list(range(grid.ndim))
    if slice_spec is not None:
        dims.remove(slice_spec[1])
    if len(dims) != 2:
        raise ConfigError("plotting needs exactly two free dimensions", field="slice")
    return dims


def cmd_plot(
    config_path: str,
    out_path: str,
    manifest_path: str | None = None,
    ras_path: str | None = None,
    traj_paths=(),
    slice_spec: str | None = None,
    scale=None,
) -> None:
    """Emit a deterministic SVG with contours, mask and trajectories."""
    cfg = load_config(config_path)
    packs = {}
    if manifest_path is not None:
        manifest, packs = load_manifest(manifest_path)
        grid = packs[("rclvf", None)][0].grid if ("rclvf", None) in packs else None
        if grid is None:
            grid = next(iter(packs.values()))[0].grid
    else:
        grid = cfg.build_grid(scale)
    spec = _parse_slice(slice_spec, grid.ndim)
    dims = _plot_axes(grid, spec)
    xs = grid.axis_coords(dims[0])
    ys = grid.axis_coords(dims[1])
    fig = plotting.SvgFigure(
        [grid.lo[dims[0]], grid.lo[dims[1]]], [grid.hi[dims[0]], grid.hi[dims[1]]]
    )

    def contour(values_flat, color, dashed, reduce="min"):
        nd = values_flat.reshape(tuple(grid.counts))
        v2 = _project(nd, spec, reduce=reduce)
        segs = plotting.marching_squares(v2, xs, ys)
        fig.add_segments(segs, color, dashed=dashed)

    prob = cfg.build_problem()
    mask = None
    a_star = None
    if ras_path is not None:
        summary = read_ras_report(ras_path)
        mask = summary["mask"]
        a_star = summary["a_star"]
        if mask.size != grid.num_nodes:
            raise ConfigError("RAS mask size does not match the grid", field="ras")
        nd = mask.reshape(tuple(grid.counts))
        m2 = _project(nd.astype(float), spec, reduce="max") > 0 if spec else nd
        runs = plotting.mask_row_runs(m2)
        fig.add_cells(
            runs, xs, ys, grid.spacing[dims[0]], grid.spacing[dims[1]], color="#2ca02c"
        )

    for i in range(len(prob.targets)):
        if ("reach", i) in packs:
            snaps = packs[("reach", i)][0]
            contour(snaps.stack[-1], "#1f77b4", dashed=True)
    for j in range(len(prob.timed_obstacles)):
        if ("avoid", j) in packs:
            snaps = packs[("avoid", j)][0]
            contour(snaps.stack[-1], "#d62728", dashed=True)
    if ("converged_avoid", None) in packs:
        contour(packs[("converged_avoid", None)][0].stack[0], "#d62728", dashed=True)
    if a_star is not None and ("rclvf", None) in packs:
        contour(packs[("rclvf", None)][0].stack[-1] - a_star, "#bb00bb", dashed=True)

    periods = grid_periods(grid)
    pts = grid.points()
    for i, ts in enumerate(prob.targets):
        contour(ts.shape.evaluate(pts, periods), "#1f77b4", dashed=False)
    for ts in prob.timed_obstacles:
        contour(ts.shape.evaluate(pts, periods), "#d62728", dashed=False)
    if prob.all_time_obstacle is not None:
        contour(prob.all_time_obstacle.evaluate(pts, periods), "#d62728", dashed=False)

    for path in traj_paths:
        states = read_trajectory_states(path)
        fig.add_polyline(states[:, dims], "black")

    atomic_write(out_path, fig.render().encode())


def read_ras_report(path: str) -> dict:
    """Parse the textual RAS report back into summary fields and mask."""
    out = {}
    audit = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    in_audit = False
    for line in lines:
        if in_audit:
            if line:
                audit.append(line)
            continue
        if line.startswith("audit:"):
            in_audit = True
            continue
        if line.startswith("#") or not line.strip():
            continue
        key, _, val = line.partition(":")
        out[key.strip()] = val.strip()
    n = int(out["seeds"])
    mask_bits = np.unpackbits(
        np.frombuffer(base64.b64decode(out["mask_base64"]), dtype=np.uint8)
    )[:n]
    return {
        "mask": mask_bits.astype(bool),
        "accepted": int(out["accepted"]),
        "iterations": int(out["iterations"]),
        "a_star": float(out["a_star"]),
        "mask_sha256": out["mask_sha256"],
        "audit_lines": audit,
    }


def read_trajectory_states(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    xcols = [i for i, name in enumerate(header) if name.startswith("x")]
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append([float(parts[i]) for i in xcols])
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjras",
        description="Grid-based reachability value functions and reach-avoid-stabilize synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, packs=True):
        p.add_argument("--config", required=True, help="config file path or shipped config name")
        p.add_argument("--out", required=True)
        if packs:
            p.add_argument("--packs", required=True, help="manifest.json from `hjras solve`")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "--disturbance-policy", choices=sorted(POLICY_FLAGS), default="worst"
        )
        p.add_argument("--gamma-hat", type=float, default=None)

    p_solve = sub.add_parser("solve", help="compute and persist all value functions")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", required=True, help="output directory")
    p_solve.add_argument("--scale", default=None, help="resolution scale factor or 'ci'")

    p_ras = sub.add_parser("ras", help="run the RAS under-approximation over all grid nodes")
    common(p_ras)
    p_ras.add_argument("--workers", type=int, default=1)

    p_traj = sub.add_parser("traj", help="roll out and verify one seed state")
    p_traj.add_argument("state", help="comma-separated seed state, e.g. '-1,1'")
    common(p_traj)

    p_plot = sub.add_parser("plot", help="emit an SVG figure")
    p_plot.add_argument("--config", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--packs", default=None)
    p_plot.add_argument("--ras", default=None)
    p_plot.add_argument("--traj", action="append", default=[])
    p_plot.add_argument("--slice", default=None, help="3D slice: 'DIM=INDEX' or 'min:DIM'")
    p_plot.add_argument("--scale", default=None)
    return parser


def _parse_scale(value):
    if value is None:
        return None
    if value == "ci":
        return "ci"
    return float(value)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            manifest = cmd_solve(args.config, args.out, scale=_parse_scale(args.scale))
            print(f"wrote {manifest}")
        elif args.command == "ras":
            result = cmd_ras(
                args.config,
                args.packs,
                args.out,
                rng_seed=args.seed,
                policy_flag=args.disturbance_policy,
                gamma_hat=args.gamma_hat,
                workers=args.workers,
            )
            print(
                f"accepted {result.accepted_count}/{len(result.mask)} seeds in "
                f"{result.total_iterations} iterations ({result.wall_time:.2f}s); wrote {args.out}"
            )
        elif args.command == "traj":
            state = [float(v) for v in args.state.split(",")]
            traj, verdict, audit = cmd_traj(
                args.config,
                args.packs,
                state,
                args.out,
                rng_seed=args.seed,
                policy_flag=args.disturbance_policy,
                gamma_hat=args.gamma_hat,
            )
            print(
                f"termination={traj.termination} verdict={'pass' if verdict.passed else 'fail'} "
                f"decay_violations={audit.n_violations}; wrote {args.out}"
            )
            if not verdict.passed:
                raise VerificationFailure(
                    "; ".join(f"{kind}[{idx}] at t={t:.4g}" for kind, idx, t in verdict.failures)
                )
        elif args.command == "plot":
            cmd_plot(
                args.config,
                args.out,
                manifest_path=args.packs,
                ras_path=args.ras,
                traj_paths=args.traj,
                slice_spec=args.slice,
                scale=_parse_scale(args.scale),
            )
            print(f"wrote {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except (
        SolverDivergenceError,
        DegenerateDynamicsError,
        NotStabilizableError,
        StabilizeRegionUnusableError,
        DynamicsEvaluationError,
        FloatingPointError,
    ) as exc:
        print(f"numeric failure: {exc}", file=_sys.stderr)
        return 3
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=_sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
