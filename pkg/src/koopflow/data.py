"""Training-pair construction and ocean-data ingestion.

A measurement at position p is the local flow velocity plus zero-mean
Gaussian noise; the stored training pair is the Euler displacement proxy
(p, p + (F(p) + noise) * dt). Completed Datasets are immutable and may be
shared across threads.
"""

import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import GriddedField, as_points, gridded_field_from_rows
from . import gridio


@dataclass(frozen=True)
class Dataset:
    """Paired state matrices: inputs at step k, targets at step k+1."""

    inputs: np.ndarray
    targets: np.ndarray
    dt: float

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 2)
        targets = np.asarray(self.targets, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        if inputs.shape != targets.shape:
            raise ValueError("inputs and targets must have the same shape")
        if inputs.shape[0] < 1:
            raise ValueError("a dataset needs at least one pair")
        if not (np.isfinite(inputs).all() and np.isfinite(targets).all()):
            raise ValueError("dataset entries must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def velocities(self) -> np.ndarray:
        """Measured velocities implied by the displacement proxy."""
        return (self.targets - self.inputs) / self.dt


class MeasurementConfig:
    """Noise level, timestep and the random stream used for measurements.

    Rebuilding the config from the same rng_seed reproduces the exact same
    sequence of noise draws, bit for bit.
    """

    def __init__(self, noise_sigma: float, dt: float, rng_seed: int):
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.noise_sigma = float(noise_sigma)
        self.dt = float(dt)
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)


def sample_pair(field, p, cfg: MeasurementConfig):
    """Take one noisy measurement at p, returning the (x_k, x_{k+1}) pair.

    x_{k+1} = p + (F(p) + omega) * dt with omega ~ N(0, noise_sigma^2)
    i.i.d. per component. Out-of-domain p propagates the field's error.
    """
    pts, _ = as_points(p)
    x_k = pts[0].copy()
    vel = np.atleast_2d(field.velocity(x_k))[0]
    noise = cfg.rng.normal(0.0, cfg.noise_sigma, size=2) if cfg.noise_sigma > 0 \
        else np.zeros(2)
    x_next = x_k + (vel + noise) * cfg.dt
    return x_k, x_next


def make_dataset(pair, dt: float) -> Dataset:
    """Dataset containing a single measurement pair."""
    x_k, x_next = pair
    return Dataset(np.asarray(x_k, dtype=float)[None, :],
                   np.asarray(x_next, dtype=float)[None, :], dt)


def append(ds: Dataset, pair) -> Dataset:
    """New Dataset with one extra pair appended; prior rows are unchanged.

    Duplicates are permitted.
    """
    x_k, x_next = pair
    inputs = np.vstack([ds.inputs, np.asarray(x_k, dtype=float)[None, :]])
    targets = np.vstack([ds.targets, np.asarray(x_next, dtype=float)[None, :]])
    return Dataset(inputs, targets, ds.dt)


# ---------------------------------------------------------------------------
# ERDDAP-style ingestion
# ---------------------------------------------------------------------------

def ingest_erddap_csv(path) -> GriddedField:
    """Load an ocean-current CSV into a GriddedField.

    Accepts header ``x,y,u,v`` or ``time,latitude,longitude,u,v``; the
    latter must contain a single time slice (longitude maps to x, latitude
    to y). Rows with NaN velocity become blocked cells in the obstacle
    mask. Raises FormatError for an empty file, multiple time slices or an
    irregular lattice.
    """
    path = Path(path)
    cols = gridio.read_columns(path)
    names = set(cols)
    if {"x", "y", "u", "v"} <= names:
        x, y = cols["x"], cols["y"]
    elif {"time", "latitude", "longitude", "u", "v"} <= names:
        if np.unique(cols["time"]).size > 1:
            raise FormatError(f"{path}: multiple time slices present; extract one first")
        x, y = cols["longitude"], cols["latitude"]
    else:
        raise FormatError(f"{path}: expected columns x,y,u,v or time,latitude,longitude,u,v")
    return gridded_field_from_rows(x, y, cols["u"], cols["v"], source=str(path))


def fetch_erddap_csv(url: str, dest) -> Path:
    """Download a griddap CSV to dest. Network access: only runs when the
    caller explicitly opted in; never exercised by the test suite."""
    dest = Path(dest)
    with urllib.request.urlopen(url) as resp:
        dest.write_bytes(resp.read())
    return dest
