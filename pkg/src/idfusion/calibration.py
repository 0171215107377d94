"""Temperature-scaled softmax, the per-instance calibration loss, and ECE.

The loss couples a cross-entropy term on temperature-scaled logits with a
quadratic pull of the predicted temperature towards a per-class target, so
rare classes learn to run hotter (less confident) than common ones.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

TEMPERATURE_REGULARIZER = 0.1


@dataclass(frozen=True)
class LogitsOutput:
    """Raw scores plus the scalar temperature predicted for one input."""

    logits: np.ndarray
    temperature: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=np.float64))
        if self.logits.ndim != 1:
            raise ValueError("logits must be a one-dimensional vector")
        if not self.temperature >= 1.0:
            raise ValueError(f"per-instance temperature must be >= 1, got {self.temperature}")


def tempered_softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of ``logits / temperature`` with max-subtraction for stability."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if not (temperature > 0 and math.isfinite(temperature)):
        raise ValueError(f"temperature must be positive and finite, got {temperature}")
    scaled = z / temperature
    scaled -= scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def per_instance_softmax(output: LogitsOutput) -> np.ndarray:
    return tempered_softmax(output.logits, output.temperature)


def _log_softmax(scaled: np.ndarray) -> np.ndarray:
    shifted = scaled - scaled.max()
    return shifted - math.log(np.exp(shifted).sum())


def pits_loss(
    output: LogitsOutput,
    label: int,
    target_temperature: float,
    lam: float = TEMPERATURE_REGULARIZER,
) -> float:
    """Tempered cross-entropy plus quadratic temperature regularizer.

    loss = -log softmax(z / T)[y] + lam * (T - target)^2
    """
    z, t = output.logits, output.temperature
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    if target_temperature < 1.0:
        raise ValueError(f"target temperature must be >= 1, got {target_temperature}")
    log_p = _log_softmax(z / t)
    return float(-log_p[label] + lam * (t - target_temperature) ** 2)


def pits_loss_grad(
    output: LogitsOutput,
    label: int,
    target_temperature: float,
    lam: float = TEMPERATURE_REGULARIZER,
) -> tuple[np.ndarray, float]:
    """Gradients of :func:`pits_loss` with respect to the logits and T.

    With p = softmax(z / T):
        dL/dz_j = (p_j - 1[j == y]) / T
        dL/dT   = (z_y - z . p) / T^2 + 2 lam (T - target)

    Both match central finite differences to first order; see the tests.
    """
    z, t = output.logits, output.temperature
    p = tempered_softmax(z, t)
    grad_z = p.copy()
    grad_z[label] -= 1.0
    grad_z /= t
    grad_t = (z[label] - float(z @ p)) / t**2 + 2.0 * lam * (t - target_temperature)
    return grad_z, float(grad_t)


def _mean_nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    scaled = logits / temperature
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(labels)), labels]))


def fit_global_temperature(
    logits: np.ndarray,
    labels: np.ndarray,
    t_min: float = 0.05,
    t_max: float = 50.0,
    tol: float = 1e-4,
) -> float:
    """Single temperature minimizing mean cross-entropy on held-out logits.

    The objective is unimodal in ln T for fixed logits, so a coarse grid scan
    followed by golden-section refinement is reliable. A flat objective (for
    example, all-identical logit rows) falls back to T = 1 with a warning.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (n, k) with one label per row")
    if logits.shape[0] == 0:
        raise ValueError("cannot fit a temperature to zero rows")

    lo, hi = math.log(t_min), math.log(t_max)
    grid = np.linspace(lo, hi, 161)
    values = [_mean_nll(logits, labels, math.exp(g)) for g in grid]
    if max(values) - min(values) < 1e-12:
        logger.warning("temperature objective is flat; falling back to T=1")
        return 1.0

    best = int(np.argmin(values))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]

    # Golden-section search on ln T over the bracketing interval.
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _mean_nll(logits, labels, math.exp(c))
    fd = _mean_nll(logits, labels, math.exp(d))
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _mean_nll(logits, labels, math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _mean_nll(logits, labels, math.exp(d))
    return float(math.exp((a + b) / 2.0))


@dataclass(frozen=True)
class CalibrationReport:
    """Expected calibration error plus the per-bin breakdown behind it."""

    ece: float
    bin_confidences: tuple[float, ...]
    bin_accuracies: tuple[float, ...]
    bin_counts: tuple[int, ...]
    n_samples: int


def ece_from_top_predictions(
    confidences: np.ndarray, correct: np.ndarray, n_bins: int = 15
) -> CalibrationReport:
    """Top-label expected calibration error over equal-width confidence bins.

    Bins partition (0, 1]; a confidence c lands in bin ceil(c * n_bins) - 1.
    ECE is the count-weighted mean absolute gap between each bin's accuracy
    and its mean confidence.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.shape != corr.shape or conf.ndim != 1:
        raise ValueError("confidences and correctness flags must be equal-length vectors")
    if conf.shape[0] == 0:
        raise ValueError("cannot compute calibration over zero predictions")
    if np.any(conf <= 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in (0, 1]")
    if n_bins < 1:
        raise ValueError("need at least one bin")

    bins = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    bin_conf = np.zeros(n_bins)
    bin_acc = np.zeros(n_bins)
    bin_n = np.zeros(n_bins, dtype=np.int64)
    for b in range(n_bins):
        mask = bins == b
        bin_n[b] = int(mask.sum())
        if bin_n[b]:
            bin_conf[b] = conf[mask].mean()
            bin_acc[b] = corr[mask].mean()
    n = conf.shape[0]
    ece = float(np.sum(bin_n / n * np.abs(bin_acc - bin_conf)))
    return CalibrationReport(
        ece=ece,
        bin_confidences=tuple(float(v) for v in bin_conf),
        bin_accuracies=tuple(float(v) for v in bin_acc),
        bin_counts=tuple(int(v) for v in bin_n),
        n_samples=n,
    )


def expected_calibration_error(
    probabilities: np.ndarray, labels: np.ndarray, n_bins: int = 15
) -> CalibrationReport:
    """ECE of a batch of probability vectors against integer labels.

    Labels outside [0, k) (for example, identities absent from training,
    conventionally encoded as -1) count as incorrect predictions.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError("probabilities must be (n, k) with one label per row")
    row_sums = probs.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    predicted = probs.argmax(axis=1)
    confidences = probs[np.arange(probs.shape[0]), predicted]
    correct = (predicted == labels).astype(np.float64)
    return ece_from_top_predictions(confidences, correct, n_bins=n_bins)
