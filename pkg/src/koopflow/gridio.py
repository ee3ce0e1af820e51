"""CSV helpers for data laid out on a rectangular lattice.

All CSV files in this package use a comma delimiter, ``.`` decimal point and
LF line endings. Missing values are spelled ``NaN``. Grid files are row-major
with y as the outer (slowest) axis and x as the inner axis.
"""

import csv
import math
from pathlib import Path

import numpy as np

from .errors import FormatError

LATTICE_RTOL = 1e-9


def format_value(v) -> str:
    """Shortest decimal form that round-trips to the same float."""
    f = float(v)
    if math.isnan(f):
        return "NaN"
    return repr(f)


def read_columns(path) -> dict[str, np.ndarray]:
    """Read a headered CSV into named float columns.

    ``NaN`` (any case) and empty cells parse to nan. Raises FormatError for
    an empty file, missing header or ragged rows.
    """
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        cols: list[list[float]] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for col, cell in zip(cols, row):
                cell = cell.strip()
                if not cell or cell.lower() == "nan":
                    col.append(math.nan)
                else:
                    try:
                        col.append(float(cell))
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: not a number: {cell!r}") from None
    if not cols[0]:
        raise FormatError(f"{path}: no data rows")
    return {name: np.asarray(col, dtype=float) for name, col in zip(header, cols)}


def infer_lattice(x: np.ndarray, y: np.ndarray, *, source: str = "data"):
    """Recover (xs, ys, index) from per-row lattice coordinates.

    Returns the sorted unique axis values and an integer array mapping each
    input row to its flat node index ``i * ny + j`` (x-major storage).
    Raises FormatError if the points do not form a complete, uniformly
    spaced rectangular lattice.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        raise FormatError(f"{source}: no lattice points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise FormatError(f"{source}: non-finite lattice coordinates")
    xs = np.unique(x)
    ys = np.unique(y)
    nx, ny = xs.size, ys.size
    if x.size != nx * ny:
        raise FormatError(
            f"{source}: {x.size} rows do not fill a {nx} x {ny} lattice"
        )
    _check_uniform(xs, source, "x")
    _check_uniform(ys, source, "y")
    i = np.searchsorted(xs, x)
    j = np.searchsorted(ys, y)
    flat = i * ny + j
    if np.unique(flat).size != flat.size:
        raise FormatError(f"{source}: duplicate lattice points")
    return xs, ys, flat


def _check_uniform(axis: np.ndarray, source: str, name: str) -> None:
    if axis.size < 2:
        return
    gaps = np.diff(axis)
    mean = gaps.mean()
    if mean <= 0 or np.any(np.abs(gaps - mean) > LATTICE_RTOL * abs(mean)):
        raise FormatError(f"{source}: irregular {name} spacing")


def scatter_to_grid(values: np.ndarray, flat_index: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Arrange per-row values into an (nx, ny) array indexed [i, j] = (x_i, y_j)."""
    grid = np.full(nx * ny, np.nan)
    grid[flat_index] = values
    return grid.reshape(nx, ny)


def write_grid_csv(path, header: list[str], xs: np.ndarray, ys: np.ndarray,
                   *grids: np.ndarray) -> None:
    """Write (nx, ny) grids as rows of ``x,y,...`` with y as the outer loop."""
    path = Path(path)
    lines = [",".join(header)]
    for j, yv in enumerate(ys):
        for i, xv in enumerate(xs):
            cells = [format_value(xv), format_value(yv)]
            cells.extend(format_value(g[i, j]) for g in grids)
            lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", newline="\n")
