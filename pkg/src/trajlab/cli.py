"""Command-line surface: experiment subcommands with reproducible outputs.

Every run materializes its configuration (defaults included) into the
results directory so outputs are replayable byte for byte. Sweeps are
restartable: completed points are kept as JSON files and skipped on
rerun. CSV is the output contract; SVG plots are a convenience.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime. Failures print
one machine-readable line: ``ERROR <stage> <message>``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .align import align_csv, align_inversion
from .errors import InvalidRangeError
from .metrics import STABILITY_CSV_HEADER, stability_report
from .nulltext import optimize_null_embeddings, save_embedding_schedule, targets_from_aligned
from .pipeline import (
    LAMBDA_SWEEP_VALUES,
    OVERLAP_SWEEP_VALUES,
    ExperimentConfig,
    PipelineStageError,
    bench_solver,
    build_plan,
    build_scenario,
    demo_config,
    run_parallel_batch,
    run_pipeline,
    sweep_dpm_range,
    sweep_lambda,
    sweep_overlap_weight,
)
from .sampler import Direction, run_trajectory
from .schedule import (
    IndexConvention,
    SolverTag,
    build_noise_schedule,
    fragmented_plan,
    hybrid_grid,
    plan_to_csv,
    uniform_plan,
)

SEED_ENV_VAR = "TRAJLAB_SEED"

USAGE_EXIT = 1
VALIDATION_EXIT = 2
RUNTIME_EXIT = 3


def _error(stage: str, message: str) -> None:
    print(f"ERROR {stage} {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Deterministic SVG plotting
# ---------------------------------------------------------------------------

_SVG_COLORS = ("#1f6fb2", "#c23b21", "#2c8a4b", "#8e44ad", "#b8860b")


def emit_plot(
    series: Sequence[Tuple[Sequence[float], Sequence[float]]],
    labels: Sequence[str],
    path: str,
    title: str = "",
    width: int = 640,
    height: int = 400,
) -> None:
    """Write a self-contained SVG line plot; bytes depend only on inputs.

    Args:
        series: list of (xs, ys) pairs of equal length.
        labels: one legend label per series.

    Raises:
        InvalidRangeError: on empty input or length mismatch; no file is
            written in that case.
    """
    if not series:
        raise InvalidRangeError("no series to plot")
    if len(labels) != len(series):
        raise InvalidRangeError(f"{len(series)} series but {len(labels)} labels")
    for xs, ys in series:
        if len(xs) == 0 or len(xs) != len(ys):
            raise InvalidRangeError("each series needs equal, nonzero x/y lengths")

    all_x = [float(x) for xs, _ in series for x in xs]
    all_y = [float(y) for _, ys in series for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 54
    inner_w, inner_h = width - 2 * pad, height - 2 * pad

    def sx(x):
        return pad + (float(x) - x_lo) / (x_hi - x_lo) * inner_w

    def sy(y):
        return height - pad - (float(y) - y_lo) / (y_hi - y_lo) * inner_h

    parts: List[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    parts.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    parts.append(
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>'
    )
    parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>'
        )
    parts.append(
        f'<text x="{pad}" y="{height - pad + 18}" text-anchor="middle" font-size="11">{x_lo:.4g}</text>'
    )
    parts.append(
        f'<text x="{width - pad}" y="{height - pad + 18}" text-anchor="middle" font-size="11">{x_hi:.4g}</text>'
    )
    parts.append(
        f'<text x="{pad - 6}" y="{height - pad}" text-anchor="end" font-size="11">{y_lo:.4g}</text>'
    )
    parts.append(f'<text x="{pad - 6}" y="{pad + 4}" text-anchor="end" font-size="11">{y_hi:.4g}</text>')
    for idx, ((xs, ys), label) in enumerate(zip(series, labels)):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = pad + 16 * idx
        parts.append(f'<rect x="{width - pad - 130}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{width - pad - 115}" y="{ly}" font-size="11">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Output-directory and config plumbing
# ---------------------------------------------------------------------------


def _prepare_outdir(path: str, force: bool, allow_existing: bool = False) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force and not allow_existing:
        raise InvalidRangeError(
            f"output directory {out} is not empty (use --force to overwrite)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        with open(path, "r", encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_dict(json.load(fh))
    else:
        cfg = demo_config()
    seed_env = os.environ.get(SEED_ENV_VAR)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=int(args.seed))
    elif seed_env is not None:
        cfg = replace(cfg, seed=int(seed_env))
    return cfg


def _snapshot_config(cfg: ExperimentConfig, outdir: Path) -> None:
    payload = cfg.to_dict()
    payload["config_hash"] = cfg.config_hash()
    (outdir / "config_resolved.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_rows_csv(path: Path, rows: List[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    keys: List[str] = []
    for row in rows:  # union of columns, ordered by first occurrence
        for k in row:
            if k not in keys:
                keys.append(k)
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(_cell(row.get(k, "")) for k in keys))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_schedule(args) -> int:
    if args.uniform:
        plan = uniform_plan(args.T, SolverTag(args.uniform))
    elif args.fragmented:
        plan = fragmented_plan(args.T, args.s1, args.s2)
    else:
        plan = hybrid_grid(args.T, args.s1, args.s2, IndexConvention(args.convention))
    text = plan_to_csv(plan)
    if args.out:
        outdir = _prepare_outdir(args.out, args.force)
        (outdir / "schedule.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _run_round_trip(cfg: ExperimentConfig, directions):
    schedule = build_noise_schedule(
        cfg.schedule.train_steps, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    plan = build_plan(cfg)
    scenario = build_scenario(cfg, schedule)
    conds = [scenario.cond_1] * len(plan)
    out = {}
    inv = run_trajectory(plan, schedule, scenario.oracle_1, scenario.z1_0, conds, Direction.INVERSION)
    out["inversion"] = inv
    if Direction.RECONSTRUCTION in directions:
        out["reconstruction"] = run_trajectory(
            plan, schedule, scenario.oracle_1, inv.final_latent, conds, Direction.RECONSTRUCTION
        )
        out["report"] = stability_report(inv, out["reconstruction"], scenario.z1_0)
    return out


def _cmd_invert(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force)
    _snapshot_config(cfg, outdir)
    result = _run_round_trip(cfg, {Direction.INVERSION})
    (outdir / "trajectory_inversion.csv").write_text(result["inversion"].to_csv(), encoding="utf-8")
    print(f"wrote {outdir / 'trajectory_inversion.csv'}")
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force)
    _snapshot_config(cfg, outdir)
    if args.embeddings:
        return _replay_from_saved(cfg, Path(args.embeddings), outdir)
    result = _run_round_trip(cfg, {Direction.INVERSION, Direction.RECONSTRUCTION})
    (outdir / "trajectory_inversion.csv").write_text(result["inversion"].to_csv(), encoding="utf-8")
    (outdir / "trajectory_reconstruction.csv").write_text(
        result["reconstruction"].to_csv(), encoding="utf-8"
    )
    rep = result["report"]
    (outdir / "metrics.csv").write_text(
        STABILITY_CSV_HEADER + "\n" + rep.csv_row("round_trip") + "\n", encoding="utf-8"
    )
    (outdir / "summary.txt").write_text(rep.summary() + "\n", encoding="utf-8")
    print(rep.summary())
    return 0


def _replay_from_saved(cfg: ExperimentConfig, emb_dir: Path, outdir: Path) -> int:
    """Replay identity 1 from a prior ``nulltext`` run's saved artifacts."""
    from .nulltext import load_embedding_schedule, reconstruct_with_null

    emb_path = emb_dir / "embeddings_1.txt"
    shared_path = emb_dir / "z_shared.txt"
    for p in (emb_path, shared_path):
        if not p.exists():
            raise FileNotFoundError(f"{p} not found")
    emb = load_embedding_schedule(str(emb_path))
    z_shared = np.array([float(v) for v in shared_path.read_text().split()])
    schedule = build_noise_schedule(
        cfg.schedule.train_steps, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    plan = build_plan(cfg)
    scenario = build_scenario(cfg, schedule)
    traj = reconstruct_with_null(plan, schedule, scenario.oracle_1, z_shared, emb)
    (outdir / "trajectory_reconstruction.csv").write_text(traj.to_csv(), encoding="utf-8")
    print(f"replayed {len(traj.steps)} steps from {emb_dir}")
    return 0


def _cmd_align(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force)
    _snapshot_config(cfg, outdir)
    schedule = build_noise_schedule(
        cfg.schedule.train_steps, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    plan = build_plan(cfg)
    scenario = build_scenario(cfg, schedule)
    T = len(plan)
    pair = align_inversion(
        plan,
        schedule,
        scenario.oracle_1,
        scenario.oracle_2,
        scenario.z1_0,
        scenario.z2_0,
        [scenario.cond_1] * T,
        [scenario.cond_2] * T,
        init_lambda=cfg.align.init_lambda,
        eta=cfg.align.eta,
    )
    (outdir / "align.csv").write_text(align_csv(pair), encoding="utf-8")
    summary = (
        f"lambda_final={pair.lambda_history[-1]}  "
        f"loss_monotone={pair.loss_monotone}  "
        f"shared_norm={float(np.linalg.norm(pair.z_shared))!r}"
    )
    (outdir / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return 0


def _cmd_nulltext(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force)
    _snapshot_config(cfg, outdir)
    schedule = build_noise_schedule(
        cfg.schedule.train_steps, cfg.schedule.beta_start, cfg.schedule.beta_end
    )
    plan = build_plan(cfg)
    scenario = build_scenario(cfg, schedule)
    T = len(plan)
    pair = align_inversion(
        plan, schedule, scenario.oracle_1, scenario.oracle_2,
        scenario.z1_0, scenario.z2_0,
        [scenario.cond_1] * T, [scenario.cond_2] * T,
        init_lambda=cfg.align.init_lambda, eta=cfg.align.eta,
    )
    emb1, emb2 = optimize_null_embeddings(
        plan, schedule, (scenario.oracle_1, scenario.oracle_2), pair.z_shared,
        targets_from_aligned(pair), (scenario.cond_1, scenario.cond_2),
        cfg.nulltext.settings(), w_cfg=cfg.nulltext.cfg_weight,
    )
    save_embedding_schedule(emb1, str(outdir / "embeddings_1.txt"))
    save_embedding_schedule(emb2, str(outdir / "embeddings_2.txt"))
    (outdir / "z_shared.txt").write_text(
        " ".join(repr(float(v)) for v in pair.z_shared) + "\n", encoding="utf-8"
    )
    rows = [
        {"step": i, "residual_1": emb1.residuals[i], "residual_2": emb2.residuals[i]}
        for i in range(T)
    ]
    _write_rows_csv(outdir / "residuals.csv", rows)
    print(f"max residuals: {max(emb1.residuals):.3e} / {max(emb2.residuals):.3e}")
    return 0


def _cmd_pipeline(args, force_gating: bool = False) -> int:
    cfg = _load_config(args)
    if force_gating:
        cfg = replace(
            cfg,
            sources=replace(cfg.sources, kind="grid_scene"),
            gating=replace(cfg.gating, enabled=True),
            toy_attention=replace(cfg.toy_attention, enabled=True),
        )
    outdir = _prepare_outdir(args.out, args.force)
    _snapshot_config(cfg, outdir)
    res = run_pipeline(cfg)
    (outdir / "trajectory_recon_1.csv").write_text(res.recon_1.to_csv(), encoding="utf-8")
    (outdir / "trajectory_recon_2.csv").write_text(res.recon_2.to_csv(), encoding="utf-8")
    (outdir / "trajectory_recon_3.csv").write_text(res.recon_3.to_csv(), encoding="utf-8")
    metric_lines = [STABILITY_CSV_HEADER]
    metric_lines.append(res.report_1.csv_row("identity_1"))
    metric_lines.append(res.report_2.csv_row("identity_2"))
    (outdir / "metrics.csv").write_text("\n".join(metric_lines) + "\n", encoding="utf-8")
    rows = [{"metric": name, "value": value} for name, value in res.metric_rows]
    _write_rows_csv(outdir / "pipeline_metrics.csv", rows)
    summary_lines = [
        f"config_hash={res.config_hash}",
        f"identity_1: {res.report_1.summary()}",
        f"identity_2: {res.report_2.summary()}",
        "stages: " + " ".join(f"{name}={dt * 1000:.1f}ms" for name, dt in res.stage_log),
    ]
    (outdir / "summary.txt").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    print("\n".join(summary_lines))
    return 0


def _restartable_sweep(outdir: Path, tag_values, point_fn, row_filename: str, verbose: bool):
    """Run sweep points, skipping any whose result file already exists."""
    points_dir = outdir / "sweep_points"
    points_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for tag, value in tag_values:
        point_path = points_dir / f"point_{tag}.json"
        if point_path.exists():
            rows.append(json.loads(point_path.read_text(encoding="utf-8")))
            if verbose:
                print(f"skip existing point {tag}")
            continue
        row = point_fn(value)
        point_path.write_text(json.dumps(row) + "\n", encoding="utf-8")
        rows.append(row)
        if verbose:
            print(f"computed point {tag}: {row}")
    _write_rows_csv(outdir / row_filename, rows)
    return rows


def _cmd_sweep_lambda(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force, allow_existing=True)
    _snapshot_config(cfg, outdir)
    values = [float(v) for v in args.values.split(",")] if args.values else list(LAMBDA_SWEEP_VALUES)

    def point(lam0):
        return sweep_lambda([lam0], base=cfg)[0]

    rows = _restartable_sweep(
        outdir,
        [(f"{v:g}", v) for v in values],
        point,
        "sweep_lambda.csv",
        args.verbose,
    )
    if not args.no_plot:
        emit_plot(
            [
                ([r["init_lambda"] for r in rows], [r["psnr_mean"] for r in rows]),
            ],
            ["mean reconstruction PSNR (dB)"],
            str(outdir / "psnr_vs_lambda.svg"),
            title="reconstruction PSNR vs initial mixing weight",
        )
    best = max(rows, key=lambda r: r["psnr_mean"])
    print(f"peak psnr_mean={best['psnr_mean']:.2f} dB at init_lambda={best['init_lambda']}")
    return 0


def _cmd_sweep_dpm_range(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force, allow_existing=True)
    _snapshot_config(cfg, outdir)
    ranges = []
    for chunk in args.ranges.split(","):
        s1, s2 = chunk.split(":")
        ranges.append((int(s1), int(s2)))

    def point(rng_pair):
        return sweep_dpm_range([rng_pair], base=cfg)[0]

    rows = _restartable_sweep(
        outdir,
        [(f"{a}_{b}", (a, b)) for a, b in ranges],
        point,
        "sweep_dpm_range.csv",
        args.verbose,
    )
    feasible = [r for r in rows if r.get("feasible")]
    if feasible and not args.no_plot:
        emit_plot(
            [([i for i in range(len(feasible))], [r["psnr_mean"] for r in feasible])],
            ["mean reconstruction PSNR (dB)"],
            str(outdir / "psnr_vs_dpm_range.svg"),
            title="reconstruction PSNR vs solver window",
        )
    print(f"{len(feasible)}/{len(rows)} windows feasible")
    return 0


def _cmd_sweep_what(args) -> int:
    outdir = _prepare_outdir(args.out, args.force, allow_existing=True)
    values = [float(v) for v in args.values.split(",")] if args.values else list(OVERLAP_SWEEP_VALUES)
    (outdir / "config_resolved.json").write_text(
        json.dumps({"sweep": "overlap_weight", "values": values}) + "\n", encoding="utf-8"
    )

    def point(w):
        return sweep_overlap_weight([w])[0]

    rows = _restartable_sweep(
        outdir,
        [(f"{v:g}", v) for v in values],
        point,
        "sweep_overlap_weight.csv",
        args.verbose,
    )
    if not args.no_plot:
        emit_plot(
            [
                ([r["w_hat"] for r in rows], [r["coexistence_score"] for r in rows]),
                ([r["w_hat"] for r in rows], [r["coverage_score"] for r in rows]),
            ],
            ["co-existence score", "layer-coverage score"],
            str(outdir / "overlap_scores.svg"),
            title="overlap-fusion retention scores",
        )
    co = max(rows, key=lambda r: r["coexistence_score"])
    cov = max(rows, key=lambda r: r["coverage_score"])
    print(f"co-existence optimum w_hat={co['w_hat']}; coverage optimum w_hat={cov['w_hat']}")
    return 0


def _cmd_bench_solver(args) -> int:
    cfg = _load_config(args)
    outdir = _prepare_outdir(args.out, args.force)
    _snapshot_config(cfg, outdir)
    rows = bench_solver(base=cfg, T=args.T, s1=args.s1, s2=args.s2)
    _write_rows_csv(outdir / "solver_stability.csv", rows)
    for row in rows:
        print(
            f"{row['method']:>18}: cum_mse={row['cumulative_mse']:.4g} "
            f"max_jump={row['max_jump']:.4g} boundary={row['boundary_jump']:.4g} "
            f"psnr={row['psnr_db']:.2f}"
        )
    return 0


def _cmd_batch(args) -> int:
    configs = []
    for path in args.configs:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"{p} not found")
        configs.append(ExperimentConfig.from_dict(json.loads(p.read_text(encoding="utf-8"))))
    outdir = _prepare_outdir(args.out, args.force)
    items = run_parallel_batch(configs, workers=args.workers)
    rows = []
    for item, path in zip(items, args.configs):
        row = {"index": item.index, "config": path, "ok": item.ok}
        if item.ok:
            row.update({name: value for name, value in item.result.metric_rows})
        else:
            row["error"] = f"{item.error.stage}: {item.error.original}"
        rows.append(row)
    _write_rows_csv(outdir / "batch_summary.csv", rows)
    failures = [r for r in rows if not r["ok"]]
    print(f"{len(rows) - len(failures)}/{len(rows)} runs succeeded")
    for r in failures:
        _error("batch", f"item {r['index']} failed: {r['error']}")
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajlab",
        description="Diffusion-trajectory laboratory: hybrid scheduling, dual alignment, "
        "null-embedding optimization, and attention gating over analytic oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON experiment config (defaults materialized)")
        p.add_argument("--seed", type=int, help=f"seed override (also {SEED_ENV_VAR} env var)")
        if needs_out:
            p.add_argument("--out", required=True, help="results directory")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("schedule", help="emit a timestep plan as CSV")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--s1", type=int, default=1)
    p.add_argument("--s2", type=int, default=3)
    p.add_argument(
        "--convention",
        choices=[c.value for c in IndexConvention],
        default=IndexConvention.FROM_DATA.value,
    )
    p.add_argument("--uniform", choices=[t.value for t in SolverTag], help="single-solver plan")
    p.add_argument("--fragmented", action="store_true", help="re-anchored per-segment plan")
    p.add_argument("--out", help="optional results directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_schedule)

    p = sub.add_parser("invert", help="invert the first source and dump the trajectory")
    common(p)
    p.set_defaults(handler=_cmd_invert)

    p = sub.add_parser("reconstruct", help="full round trip of the first source")
    common(p)
    p.add_argument(
        "--embeddings",
        help="directory of a prior 'nulltext' run; replay identity 1 from its saved schedule",
    )
    p.set_defaults(handler=_cmd_reconstruct)

    p = sub.add_parser("align", help="dual aligned inversion diagnostics")
    common(p)
    p.set_defaults(handler=_cmd_align)

    p = sub.add_parser("nulltext", help="optimize and save per-step null embeddings")
    common(p)
    p.set_defaults(handler=_cmd_nulltext)

    p = sub.add_parser("pipeline", help="full align/disentangle/entangle run")
    common(p)
    p.set_defaults(handler=_cmd_pipeline)

    p = sub.add_parser("entangle", help="pipeline with gating forced on (grid scene)")
    common(p)
    p.set_defaults(handler=lambda args: _cmd_pipeline(args, force_gating=True))

    p = sub.add_parser("sweep-lambda", help="PSNR vs initial mixing weight")
    common(p)
    p.add_argument("--values", help="comma-separated weights (default: reference set)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=_cmd_sweep_lambda)

    p = sub.add_parser("sweep-dpm-range", help="PSNR vs solver-window placement")
    common(p)
    p.add_argument("--ranges", required=True, help="comma-separated s1:s2 pairs, e.g. 0:3,1:3,1:4")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=_cmd_sweep_dpm_range)

    p = sub.add_parser("sweep-what", help="overlap-weight retention scores")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--values", help="comma-separated weights (default: 0.2..0.8)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=_cmd_sweep_what)

    p = sub.add_parser("bench-solver", help="solver stability comparison table")
    common(p)
    p.add_argument("--T", type=int, default=11)
    p.add_argument("--s1", type=int, default=5)
    p.add_argument("--s2", type=int, default=10)
    p.set_defaults(handler=_cmd_bench_solver)

    p = sub.add_parser("batch", help="run several configs concurrently")
    p.add_argument("--configs", nargs="+", required=True, help="JSON config paths")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(handler=_cmd_batch)

    return parser


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; fold usage into 1
        return 0 if exc.code == 0 else USAGE_EXIT
    try:
        return args.handler(args)
    except FileNotFoundError as err:
        _error("config", str(err))
        return VALIDATION_EXIT
    except ValueError as err:
        _error("validation", str(err))
        return VALIDATION_EXIT
    except PipelineStageError as err:
        _error(err.stage, str(err.original))
        return VALIDATION_EXIT if isinstance(err.original, ValueError) else RUNTIME_EXIT
    except Exception as err:  # noqa: BLE001 - last-resort runtime mapping
        _error("runtime", str(err))
        return RUNTIME_EXIT


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
