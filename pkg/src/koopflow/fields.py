"""Ground-truth 2-D velocity fields and domain geometry.

A velocity field here is any object with a ``domain`` attribute and a
``velocity(points)`` method mapping (N, 2) positions to (N, 2)
velocities; single points of shape (2,) are accepted and returned as
shape (2,).
All field types are immutable after construction and safe for concurrent
reads.
"""

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, GridDataError
from . import gridio


def as_points(p):
    """Coerce to an (N, 2) float array; also report whether input was a single point."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (2,):
            raise ValueError(f"expected a 2-vector, got shape {arr.shape}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) array, got shape {arr.shape}")
    return arr, False


@dataclass
class ObstacleMask:
    """Blocked regions given as a boolean node lattice over a rectangle.

    A point is considered blocked when any corner node of its enclosing
    lattice cell is blocked, so a single blocked node shields the four
    cells around it. ``blocked`` is indexed [i, j] for node (xs[i], ys[j]).
    """

    xs: np.ndarray
    ys: np.ndarray
    blocked: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        self.blocked = np.asarray(self.blocked, dtype=bool)
        if self.blocked.shape != (self.xs.size, self.ys.size):
            raise ValueError("mask grid shape does not match its axes")

    def blocked_at(self, p) -> np.ndarray:
        pts, single = as_points(p)
        i0 = np.clip(np.searchsorted(self.xs, pts[:, 0], side="right") - 1, 0, self.xs.size - 2)
        j0 = np.clip(np.searchsorted(self.ys, pts[:, 1], side="right") - 1, 0, self.ys.size - 2)
        hit = (self.blocked[i0, j0] | self.blocked[i0 + 1, j0]
               | self.blocked[i0, j0 + 1] | self.blocked[i0 + 1, j0 + 1])
        return hit[0] if single else hit


@dataclass
class Domain:
    """Axis-aligned rectangle, optionally with an obstacle mask."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    obstacle_mask: ObstacleMask | None = None

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("domain bounds must satisfy x_min < x_max and y_min < y_max")
        m = self.obstacle_mask
        if m is not None:
            ok = (math.isclose(m.xs[0], self.x_min, rel_tol=1e-9, abs_tol=1e-12)
                  and math.isclose(m.xs[-1], self.x_max, rel_tol=1e-9, abs_tol=1e-12)
                  and math.isclose(m.ys[0], self.y_min, rel_tol=1e-9, abs_tol=1e-12)
                  and math.isclose(m.ys[-1], self.y_max, rel_tol=1e-9, abs_tol=1e-12))
            if not ok:
                raise ValueError("obstacle mask must cover the full domain rectangle")

    def contains(self, p) -> np.ndarray:
        pts, single = as_points(p)
        inside = ((pts[:, 0] >= self.x_min) & (pts[:, 0] <= self.x_max)
                  & (pts[:, 1] >= self.y_min) & (pts[:, 1] <= self.y_max))
        return inside[0] if single else inside

    def require_inside(self, p) -> None:
        inside = np.atleast_1d(self.contains(p))
        if not inside.all():
            pts, _ = as_points(p)
            bad = pts[~inside][0]
            raise DomainError(f"point ({bad[0]}, {bad[1]}) outside domain "
                              f"[{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]")

    def normalize(self, p):
        """Affine map of the rectangle onto [-1, 1]^2."""
        pts, single = as_points(p)
        out = np.empty_like(pts)
        out[:, 0] = 2.0 * (pts[:, 0] - self.x_min) / (self.x_max - self.x_min) - 1.0
        out[:, 1] = 2.0 * (pts[:, 1] - self.y_min) / (self.y_max - self.y_min) - 1.0
        return out[0] if single else out

    def denormalize(self, p):
        pts, single = as_points(p)
        out = np.empty_like(pts)
        out[:, 0] = self.x_min + (pts[:, 0] + 1.0) * 0.5 * (self.x_max - self.x_min)
        out[:, 1] = self.y_min + (pts[:, 1] + 1.0) * 0.5 * (self.y_max - self.y_min)
        return out[0] if single else out

    def grid(self, nx: int, ny: int):
        """Regular test lattice: (xs, ys, points) with points in row-major
        order, y as the outer axis (index j * nx + i is node (xs[i], ys[j]))."""
        xs = np.linspace(self.x_min, self.x_max, nx)
        ys = np.linspace(self.y_min, self.y_max, ny)
        gx, gy = np.meshgrid(xs, ys)  # shape (ny, nx): row-major over y
        points = np.column_stack([gx.ravel(), gy.ravel()])
        return xs, ys, points

    def with_mask(self, mask: ObstacleMask | None) -> "Domain":
        return Domain(self.x_min, self.x_max, self.y_min, self.y_max, mask)


def free_mask(domain: Domain, points, visited, tol: float) -> np.ndarray:
    """Boolean mask over points: inside, unblocked and > tol from every visited point."""
    pts, single = as_points(points)
    ok = np.atleast_1d(domain.contains(pts))
    if domain.obstacle_mask is not None:
        ok &= ~np.atleast_1d(domain.obstacle_mask.blocked_at(pts))
    visited = np.asarray(list(visited), dtype=float).reshape(-1, 2)
    if visited.size:
        d2 = ((pts[:, None, :] - visited[None, :, :]) ** 2).sum(axis=2)
        ok &= (d2 > tol * tol).all(axis=1)
    return ok[0] if single else ok


def is_free(domain: Domain, p, visited, tol: float) -> bool:
    """True iff p is inside the rectangle, unblocked, and farther than tol
    from every previously visited point."""
    return bool(free_mask(domain, p, visited, tol))


# ---------------------------------------------------------------------------
# Analytic fields
# ---------------------------------------------------------------------------

@dataclass
class BickleyField:
    """Meandering-jet benchmark flow, frozen at a fixed time.

    Velocity derives from the stream function

        psi(x, y) = -U0 L tanh(y/L)
                    + U0 L sech^2(y/L) * sum_n eps_n cos(k_n (x - c_n t))

    evaluated at t = t_freeze, so the field is divergence-free by
    construction. With all eps_n = 0 this is a plain zonal jet of peak
    speed U0 and width L.
    """

    U0: float = 62.66
    L: float = 1.77
    epsilons: np.ndarray = dc_field(default_factory=lambda: np.array([0.075, 0.4, 0.3]))
    wavenumbers: np.ndarray = dc_field(
        default_factory=lambda: np.array([2 / 6.371, 4 / 6.371, 6 / 6.371]))
    phase_speeds: np.ndarray = dc_field(
        default_factory=lambda: 62.66 * np.array([0.1446, 0.205, 0.461]))
    t_freeze: float = 0.0
    domain: Domain = dc_field(default_factory=lambda: Domain(0.0, 20.0, -3.0, 3.0))

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        self.wavenumbers = np.asarray(self.wavenumbers, dtype=float)
        self.phase_speeds = np.asarray(self.phase_speeds, dtype=float)
        if not (self.L > 0 and self.U0 > 0):
            raise ValueError("U0 and L must be positive")
        if not (self.epsilons.shape == self.wavenumbers.shape == self.phase_speeds.shape):
            raise ValueError("perturbation parameter arrays must share one shape")

    def _phases(self, x: np.ndarray) -> np.ndarray:
        # shape (N, n_modes): k_n * (x - c_n * t)
        return self.wavenumbers[None, :] * (x[:, None] - self.phase_speeds[None, :] * self.t_freeze)

    def stream_function(self, p) -> np.ndarray:
        pts, single = as_points(p)
        self.domain.require_inside(pts)
        eta = pts[:, 1] / self.L
        sech2 = 1.0 / np.cosh(eta) ** 2
        pert = np.cos(self._phases(pts[:, 0])) @ self.epsilons
        psi = -self.U0 * self.L * np.tanh(eta) + self.U0 * self.L * sech2 * pert
        return psi[0] if single else psi

    def velocity(self, p) -> np.ndarray:
        pts, single = as_points(p)
        self.domain.require_inside(pts)
        eta = pts[:, 1] / self.L
        sech2 = 1.0 / np.cosh(eta) ** 2
        tanh = np.tanh(eta)
        phases = self._phases(pts[:, 0])
        pert = np.cos(phases) @ self.epsilons
        dpert = np.sin(phases) @ (self.epsilons * self.wavenumbers)
        u = self.U0 * sech2 + 2.0 * self.U0 * sech2 * tanh * pert
        v = -self.U0 * self.L * sech2 * dpert
        out = np.column_stack([u, v])
        return out[0] if single else out


@dataclass
class LinearField:
    """F(x) = A x for a constant 2x2 matrix A."""

    matrix: np.ndarray
    domain: Domain = dc_field(default_factory=lambda: Domain(-1.0, 1.0, -1.0, 1.0))

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (2, 2):
            raise ValueError("matrix must be 2x2")

    def velocity(self, p) -> np.ndarray:
        pts, single = as_points(p)
        self.domain.require_inside(pts)
        out = pts @ self.matrix.T
        return out[0] if single else out


@dataclass
class VortexField:
    """Rigid clockwise rotation about a center point (omega > 0 is clockwise)."""

    omega: float = 2.0 * math.pi
    center: tuple[float, float] = (0.5, 0.5)
    domain: Domain = dc_field(default_factory=lambda: Domain(0.0, 1.0, 0.0, 1.0))

    def velocity(self, p) -> np.ndarray:
        pts, single = as_points(p)
        self.domain.require_inside(pts)
        dx = pts[:, 0] - self.center[0]
        dy = pts[:, 1] - self.center[1]
        out = np.column_stack([self.omega * dy, -self.omega * dx])
        return out[0] if single else out


def cross_mask(domain: Domain, nx: int = 41, ny: int = 41,
               arm_halflength: float = 0.25, arm_halfwidth: float = 0.05) -> ObstacleMask:
    """Plus-shaped blocked region centered in the domain (node lattice)."""
    xs = np.linspace(domain.x_min, domain.x_max, nx)
    ys = np.linspace(domain.y_min, domain.y_max, ny)
    cx = 0.5 * (domain.x_min + domain.x_max)
    cy = 0.5 * (domain.y_min + domain.y_max)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    ax = np.abs(gx - cx)
    ay = np.abs(gy - cy)
    blocked = ((ax <= arm_halflength) & (ay <= arm_halfwidth)) \
        | ((ax <= arm_halfwidth) & (ay <= arm_halflength))
    return ObstacleMask(xs, ys, blocked)


def make_vortex_test() -> VortexField:
    """Analytic clockwise vortex with a cross-shaped obstacle, for tests and
    as a stand-in for gridded cavity data."""
    base = Domain(0.0, 1.0, 0.0, 1.0)
    return VortexField(domain=base.with_mask(cross_mask(base)))


# ---------------------------------------------------------------------------
# Gridded fields
# ---------------------------------------------------------------------------

class GriddedField:
    """Velocity samples on a regular lattice, queried by bilinear interpolation.

    ``u`` and ``v`` are (nx, ny) arrays indexed [i, j] for node
    (xs[i], ys[j]). NaN values are only permitted at nodes that the
    obstacle mask marks as blocked; interpolation raises GridDataError if a
    query's cell corners contain NaN anyway.
    """

    def __init__(self, xs, ys, u, v, mask: ObstacleMask | None = None):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        if self.xs.size < 2 or self.ys.size < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        shape = (self.xs.size, self.ys.size)
        if self.u.shape != shape or self.v.shape != shape:
            raise ValueError(f"u and v must have shape {shape}")
        nan_nodes = ~(np.isfinite(self.u) & np.isfinite(self.v))
        if nan_nodes.any():
            if np.isinf(self.u).any() or np.isinf(self.v).any():
                raise ValueError("velocity grids contain infinities")
            covered = mask.blocked if mask is not None else np.zeros(shape, dtype=bool)
            if not covered[nan_nodes].all():
                raise ValueError("NaN velocity at unmasked grid nodes")
        self.domain = Domain(self.xs[0], self.xs[-1], self.ys[0], self.ys[-1], mask)

    @property
    def nx(self) -> int:
        return self.xs.size

    @property
    def ny(self) -> int:
        return self.ys.size

    def velocity(self, p) -> np.ndarray:
        pts, single = as_points(p)
        self.domain.require_inside(pts)
        i0 = np.clip(np.searchsorted(self.xs, pts[:, 0], side="right") - 1, 0, self.nx - 2)
        j0 = np.clip(np.searchsorted(self.ys, pts[:, 1], side="right") - 1, 0, self.ny - 2)
        tx = (pts[:, 0] - self.xs[i0]) / (self.xs[i0 + 1] - self.xs[i0])
        ty = (pts[:, 1] - self.ys[j0]) / (self.ys[j0 + 1] - self.ys[j0])
        out = np.empty_like(pts)
        for k, g in enumerate((self.u, self.v)):
            c00 = g[i0, j0]
            c10 = g[i0 + 1, j0]
            c01 = g[i0, j0 + 1]
            c11 = g[i0 + 1, j0 + 1]
            vals = ((1 - tx) * (1 - ty) * c00 + tx * (1 - ty) * c10
                    + (1 - tx) * ty * c01 + tx * ty * c11)
            out[:, k] = vals
        if not np.isfinite(out).all():
            bad = pts[~np.isfinite(out).all(axis=1)][0]
            raise GridDataError(f"NaN velocity data in the cell around ({bad[0]}, {bad[1]})")
        return out[0] if single else out


def gridded_field_from_rows(x, y, u, v, *, source: str = "data") -> GriddedField:
    """Build a GriddedField from per-row lattice samples; NaN rows become
    blocked nodes in the obstacle mask."""
    xs, ys, flat = gridio.infer_lattice(x, y, source=source)
    ug = gridio.scatter_to_grid(np.asarray(u, dtype=float), flat, xs.size, ys.size)
    vg = gridio.scatter_to_grid(np.asarray(v, dtype=float), flat, xs.size, ys.size)
    nan_nodes = ~(np.isfinite(ug) & np.isfinite(vg))
    mask = ObstacleMask(xs, ys, nan_nodes) if nan_nodes.any() else None
    return GriddedField(xs, ys, ug, vg, mask)


def load_gridded_csv(path) -> GriddedField:
    """Load a ``x,y,u,v`` lattice CSV (row-major over a rectangular lattice)."""
    cols = gridio.read_columns(path)
    for name in ("x", "y", "u", "v"):
        if name not in cols:
            raise FormatError(f"{path}: missing column {name!r}")
    return gridded_field_from_rows(cols["x"], cols["y"], cols["u"], cols["v"],
                                   source=str(path))


def load_mask_csv(path) -> ObstacleMask:
    """Load a ``x,y,blocked`` lattice CSV into an ObstacleMask."""
    cols = gridio.read_columns(path)
    for name in ("x", "y", "blocked"):
        if name not in cols:
            raise FormatError(f"{path}: missing column {name!r}")
    xs, ys, flat = gridio.infer_lattice(cols["x"], cols["y"], source=str(path))
    grid = gridio.scatter_to_grid(cols["blocked"], flat, xs.size, ys.size)
    return ObstacleMask(xs, ys, grid != 0)


def export_gridded_csv(field: GriddedField, path) -> None:
    """Write a GriddedField back to ``x,y,u,v`` CSV (masked nodes as NaN)."""
    gridio.write_grid_csv(path, ["x", "y", "u", "v"], field.xs, field.ys,
                          field.u, field.v)
