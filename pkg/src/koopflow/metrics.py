"""Error metrics between estimated and ground-truth velocity fields.

All three pointwise metrics are pure functions; aggregates are means over
test-grid points. Cosine similarity is undefined when either vector is
(near-)zero: those points evaluate to NaN, are excluded from the domain
aggregate, and the exclusion count is reported.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ScheduleMismatchError
from .fields import as_points
from .gridio import format_value

ZERO_NORM_TOL = 1e-12


def epe(truth, est):
    """Euclidean distance between true and estimated velocity vectors."""
    t, single = as_points(truth)
    e, _ = as_points(est)
    out = np.linalg.norm(t - e, axis=1)
    return float(out[0]) if single else out


def cosine_similarity(truth, est):
    """Normalized dot product in [-1, 1]; NaN where either norm < 1e-12."""
    t, single = as_points(truth)
    e, _ = as_points(est)
    nt = np.linalg.norm(t, axis=1)
    ne = np.linalg.norm(e, axis=1)
    ok = (nt > ZERO_NORM_TOL) & (ne > ZERO_NORM_TOL)
    out = np.full(t.shape[0], np.nan)
    dots = (t[ok] * e[ok]).sum(axis=1)
    out[ok] = np.clip(dots / (nt[ok] * ne[ok]), -1.0, 1.0)
    return float(out[0]) if single else out


def magnitude_error(truth, est):
    """Absolute difference of the two speeds (no angular dependence)."""
    t, single = as_points(truth)
    e, _ = as_points(est)
    out = np.abs(np.linalg.norm(t, axis=1) - np.linalg.norm(e, axis=1))
    return float(out[0]) if single else out


@dataclass
class MetricReport:
    """Per-point metric grids and their domain aggregates for one iteration."""

    n: int
    epe_mean: float
    cs_mean: float
    me_mean: float
    epe_grid: np.ndarray
    cs_grid: np.ndarray
    me_grid: np.ndarray
    cs_excluded: int = 0
    trial: int = 0


def grid_report(truth_vecs, est_vecs, *, n: int, trial: int = 0,
                valid_mask=None) -> MetricReport:
    """Evaluate all metrics over matched (P, 2) velocity arrays.

    valid_mask selects the points entering the aggregates (e.g. excluding
    obstacle cells); the per-point grids keep full length with NaN at
    excluded points.
    """
    truth_vecs, _ = as_points(truth_vecs)
    est_vecs, _ = as_points(est_vecs)
    p = truth_vecs.shape[0]
    if valid_mask is None:
        valid_mask = np.ones(p, dtype=bool)
    else:
        valid_mask = np.asarray(valid_mask, dtype=bool)
    epe_grid = np.full(p, np.nan)
    cs_grid = np.full(p, np.nan)
    me_grid = np.full(p, np.nan)
    epe_grid[valid_mask] = epe(truth_vecs[valid_mask], est_vecs[valid_mask])
    cs_grid[valid_mask] = cosine_similarity(truth_vecs[valid_mask], est_vecs[valid_mask])
    me_grid[valid_mask] = magnitude_error(truth_vecs[valid_mask], est_vecs[valid_mask])
    cs_ok = np.isfinite(cs_grid)
    cs_mean = float(cs_grid[cs_ok].mean()) if cs_ok.any() else np.nan
    return MetricReport(
        n=n,
        epe_mean=float(epe_grid[valid_mask].mean()),
        cs_mean=cs_mean,
        me_mean=float(me_grid[valid_mask].mean()),
        epe_grid=epe_grid,
        cs_grid=cs_grid,
        me_grid=me_grid,
        cs_excluded=int((valid_mask & ~cs_ok).sum()),
        trial=trial,
    )


@dataclass
class TrialAggregate:
    """Across-trial mean and standard deviation, per sample count."""

    ns: np.ndarray
    cs_mean: np.ndarray
    cs_std: np.ndarray
    me_mean: np.ndarray
    me_std: np.ndarray
    epe_mean: np.ndarray
    epe_std: np.ndarray

    def at(self, n: int) -> dict:
        idx = int(np.nonzero(self.ns == n)[0][0])
        return {"cs": (self.cs_mean[idx], self.cs_std[idx]),
                "me": (self.me_mean[idx], self.me_std[idx]),
                "epe": (self.epe_mean[idx], self.epe_std[idx])}


def aggregate_trials(trials: list[list[MetricReport]]) -> TrialAggregate:
    """Mean and std across trials for every metric at each N.

    All trials must share the same N schedule; a mismatch raises
    ScheduleMismatchError.
    """
    if not trials:
        raise ScheduleMismatchError("no trials to aggregate")
    schedule = [r.n for r in trials[0]]
    for k, reports in enumerate(trials):
        if [r.n for r in reports] != schedule:
            raise ScheduleMismatchError(
                f"trial {k} schedule {[r.n for r in reports]} != {schedule}")
    stack = lambda attr: np.array([[getattr(r, attr) for r in reports] for reports in trials])
    cs = stack("cs_mean")
    me = stack("me_mean")
    ep = stack("epe_mean")
    return TrialAggregate(
        ns=np.asarray(schedule),
        cs_mean=cs.mean(axis=0), cs_std=cs.std(axis=0),
        me_mean=me.mean(axis=0), me_std=me.std(axis=0),
        epe_mean=ep.mean(axis=0), epe_std=ep.std(axis=0),
    )


def export_metric_csv(path, points, report: MetricReport) -> None:
    """Write per-point metrics as ``x,y,epe,cs,me`` rows."""
    pts, _ = as_points(points)
    lines = ["x,y,epe,cs,me"]
    for p, a, b, c in zip(pts, report.epe_grid, report.cs_grid, report.me_grid):
        lines.append(",".join(format_value(v) for v in (p[0], p[1], a, b, c)))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
