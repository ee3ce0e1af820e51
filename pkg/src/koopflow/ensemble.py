"""Model ensembles and disagreement-based uncertainty.

Uncertainty at a point combines how much the member speed estimates
spread (population variance of the velocity norms) with how much the
member directions disagree (circular variance, 1 - mean resultant
length), weighted by beta:

    U = Var[|v_1|..|v_M|] + beta * CircVar(angles)

Members with (near-)zero velocity have no defined direction; they are
excluded from the angular statistic, and a point where every member is
zero gets circular variance 0 with a degenerate flag.
"""

import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .data import Dataset
from .fields import Domain, as_points
from .gridio import format_value
from .koopman import KoopmanModel

log = logging.getLogger(__name__)

ZERO_DIRECTION_TOL = 1e-12


def circular_variance(vectors, *, min_norm: float = ZERO_DIRECTION_TOL) -> float:
    """Circular variance 1 - R/M of the directions of a set of 2-D vectors.

    R is the resultant length of the unit direction vectors. Vectors with
    norm <= min_norm are excluded (their angle is undefined) and M reduced
    accordingly; if all vectors are excluded the result is 0.
    """
    vecs, _ = as_points(vectors)
    norms = np.linalg.norm(vecs, axis=1)
    valid = norms > min_norm
    m_eff = int(valid.sum())
    if m_eff < vecs.shape[0]:
        log.debug("circular_variance: excluding %d zero-magnitude member(s)",
                  vecs.shape[0] - m_eff)
    if m_eff == 0:
        return 0.0
    unit = vecs[valid] / norms[valid, None]
    resultant = np.linalg.norm(unit.sum(axis=0))
    return float(np.clip(1.0 - resultant / m_eff, 0.0, 1.0))


@dataclass(frozen=True)
class PointUncertainty:
    total: float
    norm_var: float
    circ_var: float
    degenerate: bool = False


@dataclass
class UncertaintyMap:
    """Per-point uncertainty over a test lattice (row-major, y outer)."""

    points: np.ndarray       # (P, 2)
    values: np.ndarray       # (P,) total uncertainty
    norm_var: np.ndarray     # (P,)
    circ_var: np.ndarray     # (P,)
    degenerate: np.ndarray = dc_field(default=None)  # (P,) bool

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.zeros(self.values.shape, dtype=bool)

    def to_csv(self, path) -> None:
        lines = ["x,y,U,norm_var,circ_var"]
        for p, u, nv, cv in zip(self.points, self.values, self.norm_var, self.circ_var):
            lines.append(",".join(format_value(x) for x in (p[0], p[1], u, nv, cv)))
        Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def _spread_stats(velocities: np.ndarray, min_norm: float):
    """Vectorized norm-variance / circular-variance over (M, P, 2) members."""
    norms = np.linalg.norm(velocities, axis=2)            # (M, P)
    norm_var = norms.var(axis=0)                          # population variance
    valid = norms > min_norm
    m_eff = valid.sum(axis=0)                             # (P,)
    safe = np.where(valid, norms, 1.0)
    unit = velocities / safe[:, :, None]
    unit = np.where(valid[:, :, None], unit, 0.0)
    resultant = np.linalg.norm(unit.sum(axis=0), axis=1)  # (P,)
    degenerate = m_eff == 0
    circ_var = np.zeros_like(norm_var)
    ok = ~degenerate
    circ_var[ok] = np.clip(1.0 - resultant[ok] / m_eff[ok], 0.0, 1.0)
    return norm_var, circ_var, degenerate


class Ensemble:
    """M independently initialized models sharing structure but not weights."""

    def __init__(self, members: list[KoopmanModel], beta: float = 1.0, dt: float = 1.0):
        if len(members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        nus = {m.lift.nu for m in members}
        if len(nus) != 1:
            raise ValueError("all members must share the same nu")
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.members = list(members)
        self.beta = float(beta)
        self.dt = float(dt)

    @classmethod
    def create(cls, domain: Domain, nu: int, n_members: int = 10, *,
               dt: float, beta: float = 1.0, seed=None, **model_kwargs) -> "Ensemble":
        """Spawn n_members models with distinct child seeds of `seed`."""
        ss = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        seeds = ss.spawn(n_members)
        members = [KoopmanModel.initialize(domain, nu, seed=s, **model_kwargs)
                   for s in seeds]
        return cls(members, beta=beta, dt=dt)

    @property
    def size(self) -> int:
        return len(self.members)

    def train(self, ds: Dataset) -> "Ensemble":
        for member in self.members:
            member.train(ds)
        return self

    def member_velocities(self, points) -> np.ndarray:
        """Stacked member velocity predictions, shape (M, P, 2)."""
        pts, _ = as_points(points)
        return np.stack([m.predict_velocity(pts, self.dt) for m in self.members])

    def velocity(self, x) -> np.ndarray:
        """Componentwise mean of the member velocity predictions."""
        pts, single = as_points(x)
        mean = self.member_velocities(pts).mean(axis=0)
        return mean[0] if single else mean

    def uncertainty(self, x) -> PointUncertainty:
        vels = self.member_velocities(np.asarray(x, dtype=float).reshape(1, 2))
        norm_var, circ_var, degenerate = _spread_stats(vels, ZERO_DIRECTION_TOL)
        total = norm_var[0] + self.beta * circ_var[0]
        return PointUncertainty(float(total), float(norm_var[0]),
                                float(circ_var[0]), bool(degenerate[0]))

    def uncertainty_map(self, grid_points) -> UncertaintyMap:
        pts, _ = as_points(grid_points)
        if pts.shape[0] == 0:
            raise ValueError("grid must be nonempty")
        vels = self.member_velocities(pts)
        norm_var, circ_var, degenerate = _spread_stats(vels, ZERO_DIRECTION_TOL)
        if degenerate.any():
            log.debug("uncertainty_map: %d degenerate point(s)", int(degenerate.sum()))
        values = norm_var + self.beta * circ_var
        return UncertaintyMap(pts, values, norm_var, circ_var, degenerate)
