"""Runs trials, writes result artifacts, and reads them back.

Artifacts per run directory:
    effective_config.ini   resolved configuration (reproduces the run)
    metrics.csv            one row per (trial, iteration)
    logs/trialNNN.log      per-trial iteration log with real timings
    dumps/trialNNN/...     per-iteration grids when dump_fields is on

metrics.csv is byte-identical across reruns of the same config and base
seed; the wall_ms column is therefore written as 0 unless record_timing
is enabled. All CSVs use '.' decimals, ',' delimiters and LF endings.
"""

import csv
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, build_campaign, build_field,
                     campaign_seed, resolve_runtime, write_effective_config)
from .fields import as_points
from .gridio import format_value
from .metrics import export_metric_csv
from .planner import CampaignResult, metric_mask

METRICS_HEADER = ["trial", "seed", "method", "sampler", "N", "cs", "me", "epe", "wall_ms"]
TABLE_NS = (9, 16, 25, 36)

OUTPUT_ROOT_ENV = "KOOPFLOW_OUTPUT_ROOT"


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    """Config output_dir, with relative paths placed under the env root."""
    out = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


@dataclass
class RunSummary:
    out_dir: Path
    ok: bool
    results: list[CampaignResult]


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunSummary:
    """Execute trials x campaigns and write all artifacts.

    Aborted campaigns keep their partial rows and logs; the summary is
    marked not-ok so the CLI can exit nonzero.
    """
    field = build_field(cfg)
    runtime = resolve_runtime(cfg, field)
    out = Path(out_dir) if out_dir is not None else resolve_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, runtime, out / "effective_config.ini")

    rows: list[list[str]] = []
    results: list[CampaignResult] = []
    ok = True
    for trial in range(cfg.trials):
        campaign = build_campaign(cfg, field, runtime, trial)
        result = campaign.run(snapshot_all=cfg.dump_fields)
        results.append(result)
        seed = campaign_seed(cfg, trial)
        _write_trial_log(out / "logs" / f"trial{trial:03d}.log", result, seed)
        if cfg.dump_fields:
            _write_dumps(out / "dumps" / f"trial{trial:03d}", field, runtime, result)
        for report, wall in zip(result.reports, result.wall_ms):
            rows.append([
                str(trial), str(seed), result.method, result.sampler,
                str(report.n),
                format_value(report.cs_mean),
                format_value(report.me_mean),
                format_value(report.epe_mean),
                format_value(wall) if cfg.record_timing else "0",
            ])
        if not result.completed:
            ok = False
    _write_metrics_csv(out / "metrics.csv", rows)
    return RunSummary(out, ok, results)


def _write_metrics_csv(path: Path, rows: list[list[str]]) -> None:
    lines = [",".join(METRICS_HEADER)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _write_trial_log(path: Path, result: CampaignResult, seed: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"trial={result.trial} seed={seed} method={result.method} "
             f"sampler={result.sampler} status={result.status}"]
    if result.reason:
        lines.append(f"reason={result.reason}")
    for report, point, wall in zip(result.reports, result.visited, result.wall_ms):
        lines.append(f"N={report.n} point=({point[0]:.6g},{point[1]:.6g}) "
                     f"cs={report.cs_mean:.6g} me={report.me_mean:.6g} "
                     f"epe={report.epe_mean:.6g} cs_excluded={report.cs_excluded} "
                     f"wall_ms={wall:.3f}")
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _write_vector_csv(path: Path, points, vecs) -> None:
    pts, _ = as_points(points)
    vv, _ = as_points(vecs)
    lines = ["x,y,u,v"]
    for p, v in zip(pts, vv):
        lines.append(",".join(format_value(c) for c in (p[0], p[1], v[0], v[1])))
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _write_dumps(dump_dir: Path, field, runtime, result: CampaignResult) -> None:
    dump_dir.mkdir(parents=True, exist_ok=True)
    points = runtime.grid_points
    valid = metric_mask(field.domain, points)
    truth = np.full_like(points, np.nan)
    truth[valid] = field.velocity(points[valid])
    _write_vector_csv(dump_dir / "truth.csv", points, truth)
    for n, snap in sorted(result.snapshots.items()):
        _write_vector_csv(dump_dir / f"n{n:03d}_estimate.csv", points, snap.est_velocities)
        export_metric_csv(dump_dir / f"n{n:03d}_metrics.csv", points, snap.report)
        snap.uncertainty.to_csv(dump_dir / f"n{n:03d}_uncertainty.csv")


# ---------------------------------------------------------------------------
# Reading results back: comparison tables and field extraction
# ---------------------------------------------------------------------------

def collect_metric_rows(results_dir) -> list[dict]:
    """Parse every metrics.csv under results_dir into row dicts."""
    rows = []
    for path in sorted(Path(results_dir).rglob("metrics.csv")):
        with path.open("r", newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append({
                    "trial": int(rec["trial"]),
                    "seed": int(rec["seed"]),
                    "method": rec["method"],
                    "sampler": rec["sampler"],
                    "N": int(rec["N"]),
                    "cs": float(rec["cs"]),
                    "me": float(rec["me"]),
                    "epe": float(rec["epe"]),
                })
    return rows


def format_table(rows: list[dict], ns=TABLE_NS) -> str:
    """CS and ME blocks at the tabulated sample counts, one column per
    method/sampler pair found in the rows; missing cells print 'absent'."""
    combos = sorted({(r["method"], r["sampler"]) for r in rows})
    if not combos:
        return "no metrics found\n"
    headers = [f"{m}/{s}" for m, s in combos]
    width = max(12, max(len(h) for h in headers) + 2)
    blocks = []
    for metric in ("cs", "me"):
        lines = [metric.upper()]
        lines.append("N".ljust(6) + "".join(h.ljust(width) for h in headers))
        for n in ns:
            cells = []
            for method, sampler in combos:
                vals = [r[metric] for r in rows
                        if r["method"] == method and r["sampler"] == sampler
                        and r["N"] == n]
                cells.append(f"{np.mean(vals):.3f}" if vals else "absent")
            lines.append(str(n).ljust(6) + "".join(c.ljust(width) for c in cells))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def extract_fields(results_dir, iteration: int, trial: int = 0) -> list[Path]:
    """Collect the truth/estimate/EPE/uncertainty grids for one iteration.

    Iterations are 0-based: iteration k is the model trained on k+1
    samples. Requires that the run was executed with dump_fields on.
    """
    results_dir = Path(results_dir)
    src = results_dir / "dumps" / f"trial{trial:03d}"
    n = iteration + 1
    wanted = {
        "truth.csv": src / "truth.csv",
        "estimate.csv": src / f"n{n:03d}_estimate.csv",
        "epe.csv": src / f"n{n:03d}_metrics.csv",
        "uncertainty.csv": src / f"n{n:03d}_uncertainty.csv",
    }
    missing = [str(p) for p in wanted.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(
            "field dumps not found (was the run executed with dump_fields?): "
            + ", ".join(missing))
    dest = results_dir / f"fields_iter{iteration:03d}_trial{trial:03d}"
    dest.mkdir(parents=True, exist_ok=True)
    out_paths = []
    for name, src_path in wanted.items():
        dst = dest / name
        shutil.copyfile(src_path, dst)
        out_paths.append(dst)
    return out_paths
