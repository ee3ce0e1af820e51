"""Experiment configuration: a flat key/value file with section headers.

Every module default is overridable here, and the effective (resolved)
configuration is written next to the results so any run can be reproduced
from its own artifacts. dt, noise_sigma and exclusion_tol accept the
value ``auto``: dt scales the Euler step so the largest displacement is
about one test-grid cell, noise_sigma becomes 1% of the field's maximum
speed, and exclusion_tol becomes one grid cell width.
"""

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ensemble import Ensemble
from .errors import ConfigError
from .fields import (BickleyField, free_mask, load_gridded_csv, load_mask_csv,
                     make_vortex_test)
from .data import MeasurementConfig
from .gp import GPRegressor, Kernel
from .planner import Campaign, EnsembleEstimator, GPEstimator
from .gridio import format_value

_SECTIONS = {
    "experiment": {"trials", "n_total", "base_seed", "output_dir"},
    "flow": {"kind", "path", "mask_path", "dt", "noise_sigma"},
    "estimator": {"kind", "nu", "members", "beta", "learning_rate",
                  "weight_decay", "epochs_per_update", "kernel", "opt_mode"},
    "sampler": {"kind", "exclusion_tol"},
    "grid": {"nx", "ny"},
    "output": {"record_timing", "dump_fields"},
}


@dataclass
class ExperimentConfig:
    trials: int = 1
    n_total: int = 36
    base_seed: int = 0
    output_dir: str = "results"
    flow_kind: str = "bickley"
    flow_path: str = ""
    mask_path: str = ""
    dt: float | None = None
    noise_sigma: float | None = None
    estimator: str = "enkode"
    nu: int = 64
    members: int = 10
    beta: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs_per_update: int = 500
    kernel: str = "matern32"
    opt_mode: str = "always"
    sampler: str = "active"
    exclusion_tol: float | None = None
    grid_nx: int = 50
    grid_ny: int = 50
    record_timing: bool = False
    dump_fields: bool = False

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n_total < 1:
            raise ConfigError("n_total must be >= 1")
        if self.flow_kind not in ("bickley", "gridded", "vortex-test"):
            raise ConfigError(f"unknown flow kind {self.flow_kind!r}")
        if self.flow_kind == "gridded":
            if not self.flow_path:
                raise ConfigError("gridded flow requires a path")
            if not Path(self.flow_path).exists():
                raise ConfigError(f"flow file not found: {self.flow_path}")
        if self.mask_path and not Path(self.mask_path).exists():
            raise ConfigError(f"mask file not found: {self.mask_path}")
        if self.estimator not in ("enkode", "gp"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.kernel not in ("rbf", "matern32"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.opt_mode not in ("always", "early", "never"):
            raise ConfigError(f"unknown opt_mode {self.opt_mode!r}")
        if self.sampler not in ("active", "uniform"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "uniform":
            side = int(round(np.sqrt(self.n_total)))
            if side * side != self.n_total:
                raise ConfigError("uniform sampling needs a perfect-square n_total")
        if self.estimator == "enkode" and self.members < 2:
            raise ConfigError("an ensemble needs at least 2 members")
        if self.grid_nx < 2 or self.grid_ny < 2:
            raise ConfigError("test grid needs at least 2 nodes per axis")


def _parse_optional_float(raw: str, key: str) -> float | None:
    raw = raw.strip()
    if raw in ("", "auto"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number or 'auto', got {raw!r}") from None


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; unknown sections or keys fail fast."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    cfg = ExperimentConfig()
    get = parser.get

    def has(section, key):
        return parser.has_option(section, key)

    try:
        if has("experiment", "trials"):
            cfg.trials = parser.getint("experiment", "trials")
        if has("experiment", "n_total"):
            cfg.n_total = parser.getint("experiment", "n_total")
        if has("experiment", "base_seed"):
            cfg.base_seed = parser.getint("experiment", "base_seed")
        if has("experiment", "output_dir"):
            cfg.output_dir = get("experiment", "output_dir")
        if has("flow", "kind"):
            kind = get("flow", "kind").strip()
            if kind.startswith("gridded:"):
                cfg.flow_kind = "gridded"
                cfg.flow_path = kind.split(":", 1)[1]
            else:
                cfg.flow_kind = kind
        if has("flow", "path"):
            cfg.flow_path = get("flow", "path").strip()
        if has("flow", "mask_path"):
            cfg.mask_path = get("flow", "mask_path").strip()
        if has("flow", "dt"):
            cfg.dt = _parse_optional_float(get("flow", "dt"), "dt")
        if has("flow", "noise_sigma"):
            cfg.noise_sigma = _parse_optional_float(get("flow", "noise_sigma"), "noise_sigma")
        if has("estimator", "kind"):
            cfg.estimator = get("estimator", "kind").strip()
        if has("estimator", "nu"):
            cfg.nu = parser.getint("estimator", "nu")
        if has("estimator", "members"):
            cfg.members = parser.getint("estimator", "members")
        if has("estimator", "beta"):
            cfg.beta = parser.getfloat("estimator", "beta")
        if has("estimator", "learning_rate"):
            cfg.learning_rate = parser.getfloat("estimator", "learning_rate")
        if has("estimator", "weight_decay"):
            cfg.weight_decay = parser.getfloat("estimator", "weight_decay")
        if has("estimator", "epochs_per_update"):
            cfg.epochs_per_update = parser.getint("estimator", "epochs_per_update")
        if has("estimator", "kernel"):
            cfg.kernel = get("estimator", "kernel").strip()
        if has("estimator", "opt_mode"):
            cfg.opt_mode = get("estimator", "opt_mode").strip()
        if has("sampler", "kind"):
            cfg.sampler = get("sampler", "kind").strip()
        if has("sampler", "exclusion_tol"):
            cfg.exclusion_tol = _parse_optional_float(
                get("sampler", "exclusion_tol"), "exclusion_tol")
        if has("grid", "nx"):
            cfg.grid_nx = parser.getint("grid", "nx")
        if has("grid", "ny"):
            cfg.grid_ny = parser.getint("grid", "ny")
        if has("output", "record_timing"):
            cfg.record_timing = parser.getboolean("output", "record_timing")
        if has("output", "dump_fields"):
            cfg.dump_fields = parser.getboolean("output", "dump_fields")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    cfg.validate()
    return cfg


def build_field(cfg: ExperimentConfig):
    """Instantiate the ground-truth field named by the config."""
    if cfg.flow_kind == "bickley":
        field = BickleyField()
    elif cfg.flow_kind == "vortex-test":
        field = make_vortex_test()
    else:
        field = load_gridded_csv(cfg.flow_path)
    if cfg.mask_path:
        mask = load_mask_csv(cfg.mask_path)
        existing = field.domain.obstacle_mask
        if existing is not None:
            if existing.blocked.shape != mask.blocked.shape or \
                    not (np.allclose(existing.xs, mask.xs) and np.allclose(existing.ys, mask.ys)):
                raise ConfigError("mask file lattice differs from the field's own mask")
            mask.blocked |= existing.blocked
        field.domain = field.domain.with_mask(mask)
    return field


@dataclass
class ResolvedRuntime:
    """Auto defaults made concrete for one field + grid."""

    dt: float
    noise_sigma: float
    exclusion_tol: float
    xs: np.ndarray
    ys: np.ndarray
    grid_points: np.ndarray


def resolve_runtime(cfg: ExperimentConfig, field) -> ResolvedRuntime:
    xs, ys, points = field.domain.grid(cfg.grid_nx, cfg.grid_ny)
    cell = min(xs[1] - xs[0], ys[1] - ys[0])
    free = free_mask(field.domain, points, [], 0.0)
    speeds = np.linalg.norm(field.velocity(points[free]), axis=1)
    s_max = float(speeds.max()) if speeds.size else 0.0
    dt = cfg.dt if cfg.dt is not None else (cell / s_max if s_max > 0 else 1.0)
    noise = cfg.noise_sigma if cfg.noise_sigma is not None else 0.01 * s_max
    tol = cfg.exclusion_tol if cfg.exclusion_tol is not None else cell
    return ResolvedRuntime(dt, noise, tol, xs, ys, points)


def campaign_seed(cfg: ExperimentConfig, trial: int) -> int:
    return cfg.base_seed + trial


def build_campaign(cfg: ExperimentConfig, field, runtime: ResolvedRuntime,
                   trial: int) -> Campaign:
    """Assemble one trial's campaign with independent child random streams."""
    seed = campaign_seed(cfg, trial)
    init_ss, meas_ss, est_ss = np.random.SeedSequence(seed).spawn(3)
    measurement = MeasurementConfig(runtime.noise_sigma, runtime.dt, meas_ss)
    if cfg.estimator == "enkode":
        ensemble = Ensemble.create(
            field.domain, cfg.nu, cfg.members, dt=runtime.dt, beta=cfg.beta,
            seed=est_ss, learning_rate=cfg.learning_rate,
            weight_decay=cfg.weight_decay,
            epochs_per_update=cfg.epochs_per_update)
        estimator = EnsembleEstimator(ensemble)
    else:
        span_x = field.domain.x_max - field.domain.x_min
        span_y = field.domain.y_max - field.domain.y_min
        scale2 = (span_x**2 + span_y**2) / 16.0
        gp = GPRegressor(Kernel(cfg.kernel, scale2, (span_x / 4, span_y / 4)),
                         noise_var=1e-4 * scale2, opt_mode=cfg.opt_mode,
                         seed=est_ss)
        estimator = GPEstimator(gp, runtime.dt)
    return Campaign(field, estimator, cfg.sampler, cfg.n_total,
                    runtime.grid_points, measurement, runtime.exclusion_tol,
                    np.random.default_rng(init_ss), trial=trial)


def write_effective_config(cfg: ExperimentConfig, runtime: ResolvedRuntime,
                           path) -> None:
    """Write the fully resolved configuration; rerunning it reproduces the run."""
    out = configparser.ConfigParser()
    out["experiment"] = {
        "trials": str(cfg.trials),
        "n_total": str(cfg.n_total),
        "base_seed": str(cfg.base_seed),
        "output_dir": cfg.output_dir,
    }
    out["flow"] = {
        "kind": cfg.flow_kind,
        "path": cfg.flow_path,
        "mask_path": cfg.mask_path,
        "dt": format_value(runtime.dt),
        "noise_sigma": format_value(runtime.noise_sigma),
    }
    out["estimator"] = {
        "kind": cfg.estimator,
        "nu": str(cfg.nu),
        "members": str(cfg.members),
        "beta": format_value(cfg.beta),
        "learning_rate": format_value(cfg.learning_rate),
        "weight_decay": format_value(cfg.weight_decay),
        "epochs_per_update": str(cfg.epochs_per_update),
        "kernel": cfg.kernel,
        "opt_mode": cfg.opt_mode,
    }
    out["sampler"] = {
        "kind": cfg.sampler,
        "exclusion_tol": format_value(runtime.exclusion_tol),
    }
    out["grid"] = {"nx": str(cfg.grid_nx), "ny": str(cfg.grid_ny)}
    out["output"] = {
        "record_timing": str(cfg.record_timing).lower(),
        "dump_fields": str(cfg.dump_fields).lower(),
    }
    with Path(path).open("w", newline="\n") as fh:
        out.write(fh)
