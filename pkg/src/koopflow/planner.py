"""Active-learning loop and the uniform serpentine baseline.

One campaign owns a ground-truth field, an estimator (model ensemble or
GP), a sampling policy and a budget. Each iteration trains the estimator
on all pairs collected so far (warm start), evaluates it on the test
grid, records metrics against the truth, then picks the next sample:
either the free grid point of maximal uncertainty or the next point of a
boustrophedon lattice. Selection is myopic and ignores travel distance by
design. Campaigns are bit-reproducible given their random streams.
"""

import logging
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .data import Dataset, MeasurementConfig, append, make_dataset, sample_pair
from .ensemble import Ensemble, UncertaintyMap
from .errors import BudgetExhaustedError, KoopflowError
from .fields import Domain, as_points, free_mask
from .gp import GPRegressor
from .metrics import MetricReport, grid_report

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Estimator adapters
# ---------------------------------------------------------------------------

class EnsembleEstimator:
    """Drives an Ensemble inside a campaign."""

    def __init__(self, ensemble: Ensemble):
        self.ensemble = ensemble
        self.method = "enkode"

    def update(self, ds: Dataset) -> None:
        self.ensemble.train(ds)

    def evaluate(self, points):
        """Mean velocity field and uncertainty map in one member pass."""
        vels = self.ensemble.member_velocities(points)
        umap = self.ensemble.uncertainty_map(points)
        return vels.mean(axis=0), umap


class GPEstimator:
    """Drives a GPRegressor; acquisition is the posterior variance."""

    def __init__(self, gp: GPRegressor, dt: float):
        self.gp = gp
        self.dt = float(dt)
        self.method = "gp-m32" if gp.kernel.kind == "matern32" else "gp-rbf"

    def update(self, ds: Dataset) -> None:
        self.gp.fit(ds)

    def evaluate(self, points):
        pts, _ = as_points(points)
        means, variances = self.gp.posterior(pts)
        vels = (means - pts) / self.dt
        umap = UncertaintyMap(pts, variances, variances, np.zeros_like(variances))
        return vels, umap


# ---------------------------------------------------------------------------
# Sample selection
# ---------------------------------------------------------------------------

def next_active(values, points, domain: Domain, visited, tol: float):
    """Free grid point with maximal uncertainty; ties break toward the
    lowest row-major index. Raises BudgetExhaustedError if nothing is free."""
    pts, _ = as_points(points)
    free = free_mask(domain, pts, visited, tol)
    if not free.any():
        raise BudgetExhaustedError("no free candidate point remains")
    masked = np.where(free, np.asarray(values, dtype=float), -np.inf)
    idx = int(np.argmax(masked))
    return idx, pts[idx]


def serpentine_lattice(domain: Domain, n_total: int) -> np.ndarray:
    """sqrt(N) x sqrt(N) lattice with half-cell margins, traversed in
    boustrophedon order starting at the lowest row, left to right."""
    side = int(round(np.sqrt(n_total)))
    if side * side != n_total:
        raise ValueError(f"uniform sampling needs a square budget, got {n_total}")
    cell_x = (domain.x_max - domain.x_min) / side
    cell_y = (domain.y_max - domain.y_min) / side
    xs = domain.x_min + (np.arange(side) + 0.5) * cell_x
    ys = domain.y_min + (np.arange(side) + 0.5) * cell_y
    rows = []
    for j, y in enumerate(ys):
        order = xs if j % 2 == 0 else xs[::-1]
        rows.append(np.column_stack([order, np.full(side, y)]))
    return np.vstack(rows)


def metric_mask(domain: Domain, points) -> np.ndarray:
    """Grid points entering metric aggregates: obstacle cells masked out,
    previously sampled points still included."""
    pts, _ = as_points(points)
    mask = np.atleast_1d(domain.contains(pts))
    if domain.obstacle_mask is not None:
        mask &= ~np.atleast_1d(domain.obstacle_mask.blocked_at(pts))
    return mask


def nearest_free(point, points, domain: Domain, visited, tol: float):
    """Substitute the free grid point closest to a blocked target (logged)."""
    pts, _ = as_points(points)
    free = free_mask(domain, pts, visited, tol)
    if not free.any():
        raise BudgetExhaustedError("no free candidate point remains")
    d2 = ((pts - np.asarray(point, dtype=float)) ** 2).sum(axis=1)
    d2[~free] = np.inf
    idx = int(np.argmin(d2))
    log.info("substituted blocked lattice point (%g, %g) with grid point (%g, %g)",
             point[0], point[1], pts[idx, 0], pts[idx, 1])
    return idx, pts[idx]


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------

@dataclass
class Snapshot:
    """Grid-level state captured after training on n samples."""

    n: int
    est_velocities: np.ndarray
    uncertainty: UncertaintyMap
    report: MetricReport


@dataclass
class CampaignResult:
    method: str
    sampler: str
    trial: int
    reports: list[MetricReport]
    visited: np.ndarray
    wall_ms: list[float]
    status: str = "completed"
    reason: str | None = None
    snapshots: dict[int, Snapshot] = dc_field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status == "completed"


class Campaign:
    """One sampling run: policy, budget, estimator and bookkeeping.

    The loop itself is sequential; each selection depends on the samples
    taken so far.
    """

    def __init__(self, field, estimator, sampler: str, n_total: int,
                 grid_points, measurement: MeasurementConfig,
                 exclusion_tol: float, init_rng, trial: int = 0):
        if sampler not in ("active", "uniform"):
            raise ValueError(f"unknown sampler {sampler!r}")
        if n_total < 1:
            raise ValueError("n_total must be >= 1")
        self.field = field
        self.estimator = estimator
        self.sampler = sampler
        self.n_total = int(n_total)
        self.grid_points, _ = as_points(grid_points)
        self.measurement = measurement
        self.exclusion_tol = float(exclusion_tol)
        self.init_rng = init_rng
        self.trial = trial
        self.domain: Domain = field.domain
        self._lattice = serpentine_lattice(self.domain, n_total) \
            if sampler == "uniform" else None

    def _initial_point(self):
        if self.sampler == "uniform":
            return self._pick_lattice_point(0, [])
        free = free_mask(self.domain, self.grid_points, [], self.exclusion_tol)
        if not free.any():
            raise BudgetExhaustedError("no free point available for the initial sample")
        idx = self.init_rng.choice(np.flatnonzero(free))
        return self.grid_points[idx]

    def _pick_lattice_point(self, k: int, visited):
        target = self._lattice[k]
        if free_mask(self.domain, target, visited, self.exclusion_tol):
            return target
        _, substitute = nearest_free(target, self.grid_points, self.domain,
                                     visited, self.exclusion_tol)
        return substitute

    def run(self, snapshot_ns=(), snapshot_all: bool = False) -> CampaignResult:
        """Execute the loop; on estimator divergence or an exhausted domain
        the partial result is returned with status 'aborted'."""
        snapshot_ns = set(snapshot_ns)
        visited: list[np.ndarray] = []
        reports: list[MetricReport] = []
        wall_ms: list[float] = []
        snapshots: dict[int, Snapshot] = {}
        status, reason = "completed", None

        valid = metric_mask(self.domain, self.grid_points)
        truth = np.full_like(self.grid_points, np.nan)
        truth[valid] = self.field.velocity(self.grid_points[valid])

        try:
            p0 = self._initial_point()
        except KoopflowError as exc:
            return CampaignResult(self.estimator.method, self.sampler, self.trial,
                                  [], np.zeros((0, 2)), [], "aborted", str(exc))
        ds = make_dataset(sample_pair(self.field, p0, self.measurement),
                          self.measurement.dt)
        visited.append(np.asarray(p0, dtype=float))

        for n in range(1, self.n_total + 1):
            t0 = time.perf_counter()
            try:
                self.estimator.update(ds)
            except KoopflowError as exc:
                status, reason = "aborted", f"estimator failed at N={n}: {exc}"
                break
            est_vels, umap = self.estimator.evaluate(self.grid_points)
            wall_ms.append(1000.0 * (time.perf_counter() - t0))
            report = grid_report(truth, est_vels, n=n, trial=self.trial,
                                 valid_mask=valid)
            reports.append(report)
            if snapshot_all or n in snapshot_ns:
                snapshots[n] = Snapshot(n, est_vels, umap, report)
            if n == self.n_total:
                break
            try:
                if self.sampler == "active":
                    _, nxt = next_active(umap.values, self.grid_points,
                                         self.domain, visited, self.exclusion_tol)
                else:
                    nxt = self._pick_lattice_point(n, visited)
            except KoopflowError as exc:
                status, reason = "aborted", f"selection failed at N={n}: {exc}"
                break
            ds = append(ds, sample_pair(self.field, nxt, self.measurement))
            visited.append(np.asarray(nxt, dtype=float))

        return CampaignResult(self.estimator.method, self.sampler, self.trial,
                              reports, np.array(visited), wall_ms,
                              status, reason, snapshots)
