"""Single flow model: Fourier lift, linear operator, loss and optimizer.

The model lifts normalized positions z in [-1, 1]^2 to

    Psi(z) = [z, cos(w_0 . z + b_0), ..., cos(w_{nu-1} . z + b_{nu-1})]

and learns a (2+nu) x (2+nu) matrix K so that Psi(z_next) ~ K Psi(z). The
first two lift components are the identity observable, so the next state
is read off directly from the first two rows of K Psi(z) with no inverse
map. Frequencies, phases and the operator are all trained jointly by
full-batch Adam on the mean squared residual, with decoupled weight decay.

Gradients are closed-form (no autodiff). Note that the frequencies and
phases receive contributions from both sides of the residual because the
targets are lifted with the same feature map as the inputs.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import FormatError, TrainingDivergedError
from .fields import Domain, as_points

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class FourierLift:
    """Cosine feature map parameters; lifted dimension is 2 + nu."""

    freqs: np.ndarray   # (nu, 2)
    phases: np.ndarray  # (nu,)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float).reshape(-1, 2)
        self.phases = np.asarray(self.phases, dtype=float).reshape(-1)
        if self.freqs.shape[0] != self.phases.shape[0]:
            raise ValueError("freqs and phases must agree on nu")
        if not (np.isfinite(self.freqs).all() and np.isfinite(self.phases).all()):
            raise ValueError("lift parameters must be finite")

    @property
    def nu(self) -> int:
        return self.phases.size

    @property
    def dim(self) -> int:
        return 2 + self.nu

    def __call__(self, z) -> np.ndarray:
        """Lift normalized points (N, 2) -> (N, 2 + nu); (2,) -> (2 + nu,)."""
        pts, single = as_points(z)
        if self.nu:
            feats = np.cos(pts @ self.freqs.T + self.phases)
            out = np.concatenate([pts, feats], axis=1)
        else:
            out = pts.copy()
        return out[0] if single else out


@dataclass
class GradientBundle:
    """Gradients of the training loss for every parameter block."""

    d_operator: np.ndarray
    d_freqs: np.ndarray
    d_phases: np.ndarray


def _loss_terms(operator, freqs, phases, X, Y):
    """Loss and residual pieces shared by loss() and gradients()."""
    n = X.shape[0]
    if freqs.shape[0]:
        zx = X @ freqs.T + phases
        zy = Y @ freqs.T + phases
        px = np.concatenate([X, np.cos(zx)], axis=1)
        py = np.concatenate([Y, np.cos(zy)], axis=1)
    else:
        zx = zy = None
        px, py = X, Y
    resid = py - px @ operator.T
    loss = float((resid * resid).sum() / n)
    return loss, resid, px, zx, zy


class KoopmanModel:
    """One ensemble member: lift parameters, operator and optimizer state.

    Positions are given in field units; the model normalizes them onto
    [-1, 1]^2 via its domain before lifting, and un-maps predictions. A
    trained model is immutable for prediction and safe for concurrent
    reads; training requires exclusive ownership.
    """

    def __init__(self, domain: Domain, lift: FourierLift, operator: np.ndarray,
                 learning_rate: float = 1e-3, weight_decay: float = 1e-4,
                 epochs_per_update: int = 500):
        self.domain = domain
        self.lift = lift
        self.operator = np.asarray(operator, dtype=float)
        if self.operator.shape != (lift.dim, lift.dim):
            raise ValueError(f"operator must be {lift.dim} x {lift.dim}")
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.epochs_per_update = int(epochs_per_update)
        self._adam_t = 0
        self._adam_m = [np.zeros_like(self.operator),
                        np.zeros_like(lift.freqs),
                        np.zeros_like(lift.phases)]
        self._adam_v = [np.zeros_like(p) for p in self._adam_m]

    @classmethod
    def initialize(cls, domain: Domain, nu: int, seed=None, *,
                   learning_rate: float = 1e-3, weight_decay: float = 1e-4,
                   epochs_per_update: int = 500, freq_scale: float = np.pi,
                   operator_noise: float = 1e-2) -> "KoopmanModel":
        """Random initialization: Gaussian frequencies (std freq_scale),
        uniform phases on [0, 2pi), operator = identity + small noise."""
        rng = np.random.default_rng(seed)
        freqs = rng.normal(0.0, freq_scale, size=(nu, 2))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=nu)
        d = 2 + nu
        operator = np.eye(d) + rng.normal(0.0, operator_noise, size=(d, d))
        return cls(domain, FourierLift(freqs, phases), operator,
                   learning_rate=learning_rate, weight_decay=weight_decay,
                   epochs_per_update=epochs_per_update)

    # -- training -----------------------------------------------------------

    def _normalized(self, ds: Dataset):
        return self.domain.normalize(ds.inputs), self.domain.normalize(ds.targets)

    def loss(self, ds: Dataset) -> float:
        """Mean over pairs of the squared residual norm in lifted space."""
        X, Y = self._normalized(ds)
        loss, *_ = _loss_terms(self.operator, self.lift.freqs, self.lift.phases, X, Y)
        return loss

    def gradients(self, ds: Dataset) -> GradientBundle:
        """Closed-form gradients of loss() for operator, freqs and phases."""
        X, Y = self._normalized(ds)
        K = self.operator
        W, b = self.lift.freqs, self.lift.phases
        n = X.shape[0]
        _, resid, px, zx, zy = _loss_terms(K, W, b, X, Y)
        d_operator = (-2.0 / n) * resid.T @ px
        if W.shape[0]:
            # Feature columns of the residual pulled back through each side:
            # target side directly, input side through the operator.
            back = resid @ K                 # rows are K^T r
            a = -2.0 * resid[:, 2:] * np.sin(zy)
            c = 2.0 * back[:, 2:] * np.sin(zx)
            d_freqs = (a.T @ Y + c.T @ X) / n
            d_phases = (a + c).mean(axis=0)
        else:
            d_freqs = np.zeros((0, 2))
            d_phases = np.zeros(0)
        return GradientBundle(d_operator, d_freqs, d_phases)

    def train(self, ds: Dataset) -> "KoopmanModel":
        """Run epochs_per_update full-batch Adam steps, warm-starting from
        the current parameters and optimizer state. Returns self.

        Raises TrainingDivergedError naming the epoch if the loss goes
        non-finite.
        """
        X, Y = self._normalized(ds)
        n = X.shape[0]
        K = self.operator
        W, b = self.lift.freqs, self.lift.phases
        lr, wd = self.learning_rate, self.weight_decay
        params = [K, W, b]
        for epoch in range(self.epochs_per_update):
            loss, resid, px, zx, zy = _loss_terms(K, W, b, X, Y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            grads = [(-2.0 / n) * resid.T @ px]
            if W.shape[0]:
                back = resid @ K
                a = -2.0 * resid[:, 2:] * np.sin(zy)
                c = 2.0 * back[:, 2:] * np.sin(zx)
                grads.append((a.T @ Y + c.T @ X) / n)
                grads.append((a + c).mean(axis=0))
            else:
                grads.append(np.zeros((0, 2)))
                grads.append(np.zeros(0))
            self._adam_t += 1
            t = self._adam_t
            bc1 = 1.0 - ADAM_BETA1 ** t
            bc2 = 1.0 - ADAM_BETA2 ** t
            for p, g, m, v in zip(params, grads, self._adam_m, self._adam_v):
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
                if wd:
                    p -= lr * wd * p  # decoupled decay, not part of the gradient
        return self

    # -- prediction ---------------------------------------------------------

    def predict_next(self, x) -> np.ndarray:
        """Next position(s) in field units: identity readout of K Psi(z)."""
        pts, single = as_points(x)
        z = self.domain.normalize(pts)
        nxt = (self.lift(z) @ self.operator.T)[:, :2]
        out = self.domain.denormalize(nxt)
        return out[0] if single else out

    def predict_velocity(self, x, dt: float) -> np.ndarray:
        """(predict_next(x) - x) / dt, in field units."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        pts, single = as_points(x)
        out = (self.predict_next(pts) - pts) / dt
        return out[0] if single else out

    # -- serialization ------------------------------------------------------

    def save(self, path) -> None:
        """Write a self-describing text record; round-trips bit-exactly."""
        from .gridio import format_value as fv
        lines = ["koopflow-model 1"]
        lines.append(f"nu = {self.lift.nu}")
        lines.append(f"learning_rate = {fv(self.learning_rate)}")
        lines.append(f"weight_decay = {fv(self.weight_decay)}")
        lines.append(f"epochs_per_update = {self.epochs_per_update}")
        d = self.domain
        lines.append(f"domain = {fv(d.x_min)} {fv(d.x_max)} {fv(d.y_min)} {fv(d.y_max)}")
        for name, arr in (("freqs", self.lift.freqs),
                          ("phases", self.lift.phases.reshape(-1, 1)),
                          ("operator", self.operator)):
            lines.append(f"{name} = matrix {arr.shape[0]} {arr.shape[1]}")
            for row in arr:
                lines.append(" ".join(fv(x) for x in row))
        Path(path).write_text("\n".join(lines) + "\n", newline="\n")

    @classmethod
    def load(cls, path) -> "KoopmanModel":
        text = Path(path).read_text()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split() != ["koopflow-model", "1"]:
            raise FormatError(f"{path}: not a koopflow model file")
        scalars: dict[str, str] = {}
        matrices: dict[str, np.ndarray] = {}
        i = 1
        while i < len(lines):
            key, _, value = lines[i].partition("=")
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise FormatError(f"{path}: malformed line {i + 1}")
            if value.startswith("matrix"):
                _, rows, colcount = value.split()
                rows, colcount = int(rows), int(colcount)
                block = lines[i + 1:i + 1 + rows]
                if len(block) != rows:
                    raise FormatError(f"{path}: truncated matrix {key!r}")
                matrices[key] = np.array(
                    [[float(x) for x in row.split()] for row in block]
                ).reshape(rows, colcount)
                i += 1 + rows
            else:
                scalars[key] = value
                i += 1
        try:
            bounds = [float(x) for x in scalars["domain"].split()]
            model = cls(
                Domain(*bounds),
                FourierLift(matrices["freqs"], matrices["phases"].reshape(-1)),
                matrices["operator"],
                learning_rate=float(scalars["learning_rate"]),
                weight_decay=float(scalars["weight_decay"]),
                epochs_per_update=int(scalars["epochs_per_update"]),
            )
        except KeyError as exc:
            raise FormatError(f"{path}: missing field {exc}") from None
        if model.lift.nu != int(scalars.get("nu", model.lift.nu)):
            raise FormatError(f"{path}: nu disagrees with freqs block")
        return model
