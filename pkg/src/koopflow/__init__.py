"""Active learning of 2-D flow fields with Fourier-lifted model ensembles.

Estimates an unknown velocity field from sparse, actively chosen noisy
samples. An ensemble of independently initialized lifted linear models
provides both the flow estimate and a disagreement-based uncertainty that
drives where to sample next; a Gaussian-process regressor serves as the
baseline. See the README for the experiment harness.
"""

from .data import Dataset, MeasurementConfig, append, ingest_erddap_csv, sample_pair
from .ensemble import Ensemble, UncertaintyMap, circular_variance
from .errors import KoopflowError
from .fields import (BickleyField, Domain, GriddedField, LinearField,
                     ObstacleMask, VortexField, is_free, load_gridded_csv,
                     load_mask_csv, make_vortex_test)
from .gp import GPRegressor, Kernel, kernel_eval, kernel_matrix
from .koopman import FourierLift, KoopmanModel
from .metrics import (MetricReport, aggregate_trials, cosine_similarity, epe,
                      grid_report, magnitude_error)
from .planner import Campaign, CampaignResult, next_active, serpentine_lattice

__version__ = "0.1.0"

__all__ = [
    "BickleyField", "Campaign", "CampaignResult", "Dataset", "Domain",
    "Ensemble", "FourierLift", "GPRegressor", "GriddedField", "Kernel",
    "KoopflowError", "KoopmanModel", "LinearField", "MeasurementConfig",
    "MetricReport", "ObstacleMask", "UncertaintyMap", "VortexField",
    "aggregate_trials", "append", "circular_variance", "cosine_similarity",
    "epe", "grid_report", "ingest_erddap_csv", "is_free", "kernel_eval",
    "kernel_matrix", "load_gridded_csv", "load_mask_csv", "magnitude_error",
    "make_vortex_test", "next_active", "sample_pair", "serpentine_lattice",
]
