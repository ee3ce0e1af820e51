"""Gaussian-process regression baseline.

One GP per output dimension (x and y of the next position), sharing a
single stationary kernel and noise level, so the model has 4 learnable
hyperparameters: signal variance, two per-axis lengthscales and the noise
variance. They are optimized by maximizing the summed log marginal
likelihood of the two outputs with multi-restart adaptive gradient ascent
in log-hyperparameter space, using analytic gradients.

The prior mean is zero and targets are regressed raw, so far from the
data the posterior mean reverts to zero and the variance to the signal
variance. A fitted regressor is immutable and safe for concurrent
posterior queries.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Dataset
from .errors import GPFitError
from .fields import as_points

SQRT3 = np.sqrt(3.0)
JITTER_BASE = 1e-10
MAX_JITTER_DOUBLINGS = 8
LOG_PARAM_BOUND = 23.0  # |log theta| cap during optimization


@dataclass
class Kernel:
    """Stationary covariance: 'rbf' or 'matern32' with per-axis lengthscales."""

    kind: str
    signal_var: float = 1.0
    lengthscales: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("rbf", "matern32"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        ls = tuple(float(l) for l in self.lengthscales)
        if self.signal_var <= 0 or any(l <= 0 for l in ls):
            raise ValueError("kernel hyperparameters must be strictly positive")
        self.signal_var = float(self.signal_var)
        self.lengthscales = ls


def _scaled_sq_dists(a: np.ndarray, b: np.ndarray, lengthscales):
    """Per-axis squared differences and their lengthscale-scaled sum."""
    d0 = (a[:, 0, None] - b[None, :, 0]) ** 2
    d1 = (a[:, 1, None] - b[None, :, 1]) ** 2
    l1, l2 = lengthscales
    return d0, d1, d0 / l1**2 + d1 / l2**2


def kernel_matrix(kernel: Kernel, a, b) -> np.ndarray:
    """Covariance matrix K[i, j] = k(a_i, b_j)."""
    a, _ = as_points(a)
    b, _ = as_points(b)
    _, _, q = _scaled_sq_dists(a, b, kernel.lengthscales)
    if kernel.kind == "rbf":
        return kernel.signal_var * np.exp(-0.5 * q)
    r = np.sqrt(q)
    return kernel.signal_var * (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r)


def kernel_eval(kernel: Kernel, a, b) -> float:
    """Covariance between two single points."""
    a, _ = as_points(a)
    b, _ = as_points(b)
    return float(kernel_matrix(kernel, a[:1], b[:1])[0, 0])


def _gram_and_grads(log_theta: np.ndarray, kind: str, d0, d1, n: int):
    """Gram matrix K + sn2*I and its gradients wrt the 4 log-hyperparameters.

    log_theta = [log sf2, log l1, log l2, log sn2].
    """
    sf2, l1, l2, sn2 = np.exp(log_theta)
    q = d0 / l1**2 + d1 / l2**2
    if kind == "rbf":
        k = sf2 * np.exp(-0.5 * q)
        dl1 = k * (d0 / l1**2)
        dl2 = k * (d1 / l2**2)
    else:
        r = np.sqrt(q)
        decay = np.exp(-SQRT3 * r)
        k = sf2 * (1.0 + SQRT3 * r) * decay
        dl1 = 3.0 * sf2 * decay * (d0 / l1**2)
        dl2 = 3.0 * sf2 * decay * (d1 / l2**2)
    eye = np.eye(n)
    gram = k + sn2 * eye
    return gram, [k, dl1, dl2, sn2 * eye]


def _chol_with_jitter(gram: np.ndarray):
    """Cholesky of gram, escalating diagonal jitter per the standard policy."""
    n = gram.shape[0]
    jitter = 0.0
    step = JITTER_BASE * np.trace(gram) / n
    for attempt in range(MAX_JITTER_DOUBLINGS + 2):
        try:
            return cho_factor(gram + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = step if jitter == 0.0 else 2.0 * jitter
            if attempt >= MAX_JITTER_DOUBLINGS + 1:
                break
    raise GPFitError(f"Gram matrix not positive definite after jitter {jitter:.3e}")


def _log_marginal_and_grad(log_theta, kind, d0, d1, y_centered):
    """Summed per-output log marginal likelihood and its gradient.

    Returns (-inf, zeros) if the Gram matrix cannot be factorized at these
    hyperparameters, so optimization simply avoids the region.
    """
    n, n_out = y_centered.shape
    gram, dgram = _gram_and_grads(log_theta, kind, d0, d1, n)
    try:
        chol, _ = _chol_with_jitter(gram)
    except GPFitError:
        return -np.inf, np.zeros(4)
    alpha = cho_solve(chol, y_centered)
    logdet = 2.0 * np.log(np.diag(chol[0])).sum()
    lml = float(-0.5 * (y_centered * alpha).sum()
                - 0.5 * n_out * logdet
                - 0.5 * n_out * n * np.log(2.0 * np.pi))
    gram_inv = cho_solve(chol, np.eye(n))
    # d lml / d theta_j = 0.5 tr((sum_m alpha_m alpha_m^T - n_out G^-1) dG/dtheta_j)
    tmp = alpha @ alpha.T - n_out * gram_inv
    grad = np.array([0.5 * float((tmp * dg).sum()) for dg in dgram])
    return lml, grad


class GPRegressor:
    """Two-output GP with shared hyperparameters and cached factorization.

    opt_mode:
        'always' - reoptimize hyperparameters at every fit
        'early'  - reoptimize only while the training set has < 10 rows,
                   then keep them frozen
        'never'  - keep the constructor-supplied hyperparameters
    """

    def __init__(self, kernel: Kernel, noise_var: float = 1e-4, *,
                 opt_mode: str = "always", n_restarts: int = 5,
                 opt_iters: int = 200, opt_step: float = 0.08, seed=None):
        if noise_var <= 0:
            raise ValueError("noise_var must be strictly positive")
        if opt_mode not in ("always", "early", "never"):
            raise ValueError(f"unknown opt_mode {opt_mode!r}")
        self.kernel = kernel
        self.noise_var = float(noise_var)
        self.opt_mode = opt_mode
        self.n_restarts = int(n_restarts)
        self.opt_iters = int(opt_iters)
        self.opt_step = float(opt_step)
        self._rng = np.random.default_rng(seed)
        self._train_x = None
        self._train_y = None
        self._chol = None
        self._alpha = None
        self._lml = None

    # -- hyperparameters as a log vector -------------------------------------

    def _get_log_theta(self) -> np.ndarray:
        l1, l2 = self.kernel.lengthscales
        return np.log([self.kernel.signal_var, l1, l2, self.noise_var])

    def _set_log_theta(self, log_theta: np.ndarray) -> None:
        sf2, l1, l2, sn2 = np.exp(log_theta)
        self.kernel = Kernel(self.kernel.kind, sf2, (l1, l2))
        self.noise_var = float(sn2)

    def _restart_points(self, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
        """Incumbent hyperparameters plus random draws scaled to the data."""
        starts = [self._get_log_theta()]
        span = np.maximum(x.max(axis=0) - x.min(axis=0), 1e-6)
        y_var = max(float((y * y).mean()), 1e-12)
        for _ in range(self.n_restarts - 1):
            sf2 = y_var * self._rng.uniform(0.3, 3.0)
            ls = span * self._rng.uniform(0.1, 1.0, size=2)
            sn2 = y_var * 10.0 ** self._rng.uniform(-6.0, -1.0)
            starts.append(np.log([sf2, ls[0], ls[1], sn2]))
        return starts

    def _optimize(self, x: np.ndarray, y: np.ndarray) -> None:
        d0, d1, _ = _scaled_sq_dists(x, x, (1.0, 1.0))
        best_theta, best_lml = None, -np.inf
        for theta0 in self._restart_points(x, y):
            theta = theta0.copy()
            m = np.zeros(4)
            v = np.zeros(4)
            for t in range(1, self.opt_iters + 1):
                lml, grad = _log_marginal_and_grad(theta, self.kernel.kind, d0, d1, y)
                if not np.isfinite(lml):
                    break
                m = 0.9 * m + 0.1 * grad
                v = 0.999 * v + 0.001 * grad * grad
                step = self.opt_step * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
                theta = np.clip(theta + step, -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
            lml, _ = _log_marginal_and_grad(theta, self.kernel.kind, d0, d1, y)
            if lml > best_lml:
                best_theta, best_lml = theta, lml
        if best_theta is not None:
            self._set_log_theta(best_theta)

    # -- fitting and prediction ----------------------------------------------

    def fit(self, ds: Dataset) -> "GPRegressor":
        """Fit to (inputs -> targets); optimizes hyperparameters per opt_mode."""
        x = ds.inputs.copy()
        y = ds.targets.copy()
        if self.opt_mode == "always" or (self.opt_mode == "early" and ds.n < 10):
            self._optimize(x, y)
        d0, d1, _ = _scaled_sq_dists(x, x, (1.0, 1.0))
        gram, _ = _gram_and_grads(self._get_log_theta(), self.kernel.kind, d0, d1, ds.n)
        chol, _ = _chol_with_jitter(gram)
        self._train_x = x
        self._train_y = y
        self._chol = chol
        self._alpha = cho_solve(chol, y)
        logdet = 2.0 * np.log(np.diag(chol[0])).sum()
        self._lml = float(-0.5 * (y * self._alpha).sum()
                          - logdet - ds.n * np.log(2.0 * np.pi))
        return self

    @property
    def is_fitted(self) -> bool:
        return self._chol is not None

    @property
    def log_marginal_likelihood(self) -> float:
        self._require_fitted()
        return self._lml

    def _require_fitted(self) -> None:
        if not self.is_fitted:
            raise RuntimeError("fit() has not been run")

    def posterior(self, points):
        """Posterior mean (P, 2) and per-point latent variance (P,).

        The two outputs share kernel, inputs and hence the same posterior
        covariance, so a single variance column is returned. Tiny negative
        variances from round-off are clamped to 0.
        """
        self._require_fitted()
        pts, _ = as_points(points)
        k_cross = kernel_matrix(self.kernel, self._train_x, pts)  # (N, P)
        means = k_cross.T @ self._alpha
        w = cho_solve(self._chol, k_cross)
        variances = self.kernel.signal_var - (k_cross * w).sum(axis=0)
        return means, np.maximum(variances, 0.0)

    def velocity(self, x, dt: float) -> np.ndarray:
        """(posterior_mean(x) - x) / dt, mirroring the ensemble's readout."""
        self._require_fitted()
        if not dt > 0:
            raise ValueError("dt must be positive")
        pts, single = as_points(x)
        means, _ = self.posterior(pts)
        out = (means - pts) / dt
        return out[0] if single else out
