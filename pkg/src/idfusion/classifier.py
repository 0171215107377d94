"""Linear identity classifier with a learned per-instance temperature head.

The model is deliberately small: a single linear layer produces logits and a
second linear head produces the temperature through 1 + softplus, which keeps
T >= 1 by construction. Training is plain mini-batch gradient descent with
cosine-annealed learning rate; given the same seed and data it is bit-exact
across runs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import TEMPERATURE_REGULARIZER, LogitsOutput, tempered_softmax
from .data import Dataset, GridSpec, IdentityCatalog, Location, Observation
from .errors import ConfigError, TrainingError

logger = logging.getLogger(__name__)

INPUT_KINDS = ("foreground", "background", "whole")
LOSS_KINDS = ("ce", "pits")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one classifier training run."""

    loss_kind: str = "pits"
    input_kind: str = "foreground"
    lam: float = TEMPERATURE_REGULARIZER
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    lr_schedule: str = "cosine"
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.input_kind not in INPUT_KINDS:
            raise ConfigError(f"input_kind must be one of {INPUT_KINDS}, got {self.input_kind!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lam < 0 or self.noise_std < 0:
            raise ConfigError("lam and noise_std must be non-negative")

    def to_dict(self) -> dict:
        return {
            "loss_kind": self.loss_kind,
            "input_kind": self.input_kind,
            "lam": self.lam,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "lr_schedule": self.lr_schedule,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }


def features_from(obs: Observation, input_kind: str) -> np.ndarray:
    if input_kind == "foreground":
        return obs.fg_features
    if input_kind == "background":
        return obs.bg_features
    if input_kind == "whole":
        return np.concatenate([obs.fg_features, obs.bg_features])
    raise ConfigError(f"unknown input kind {input_kind!r}")


def _softplus(u: np.ndarray | float) -> np.ndarray | float:
    return np.logaddexp(0.0, u)


@dataclass(frozen=True, eq=False)
class PitsModel:
    """Trained linear classifier over a fixed identity label space.

    ``temperature_head_active`` separates calibrated models from plain
    cross-entropy baselines. A CE-trained model never touched its temperature
    head, so exposing the head's untrained output would smear random
    temperatures over the baseline; instead the inactive head reports T = 1
    and the baseline stays an ordinary softmax classifier.
    """

    W: np.ndarray
    b: np.ndarray
    w_T: np.ndarray
    b_T: float
    labels: tuple[int, ...]
    input_kind: str
    temperature_head_active: bool
    loss_history: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "W", np.asarray(self.W, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        object.__setattr__(self, "w_T", np.asarray(self.w_T, dtype=np.float64))
        if self.W.shape != (len(self.labels), self.w_T.shape[0]):
            raise ValueError(
                f"W shape {self.W.shape} inconsistent with {len(self.labels)} labels"
                f" and input dim {self.w_T.shape[0]}"
            )
        if self.b.shape != (len(self.labels),):
            raise ValueError("bias vector must have one entry per label")

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.w_T.shape[0]

    @property
    def final_train_loss(self) -> float | None:
        return self.loss_history[-1] if self.loss_history else None

    def forward(self, x: np.ndarray) -> LogitsOutput:
        """Logits z = Wx + b and temperature T = 1 + softplus(w_T . x + b_T)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        logits = self.W @ x + self.b
        if self.temperature_head_active:
            temperature = 1.0 + float(_softplus(float(self.w_T @ x) + self.b_T))
        else:
            temperature = 1.0
        return LogitsOutput(logits=logits, temperature=temperature)

    def predict_likelihood(self, x: np.ndarray) -> np.ndarray:
        """Calibrated class probabilities for one feature vector."""
        out = self.forward(x)
        return tempered_softmax(out.logits, out.temperature)


def _init_params(rng: np.random.Generator, k: int, d: int) -> tuple[np.ndarray, ...]:
    bound = 1.0 / math.sqrt(d)
    W = rng.uniform(-bound, bound, size=(k, d))
    w_T = rng.uniform(-bound, bound, size=d)
    return W, np.zeros(k), w_T, 0.0


def _epoch_lr(base: float, epoch: int, total: int, schedule: str) -> float:
    if schedule == "constant":
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


def mean_batch_loss(
    model: PitsModel,
    X: np.ndarray,
    y: np.ndarray,
    targets: np.ndarray,
    lam: float,
) -> float:
    """Mean training objective over a batch; also used by consistency tests."""
    Z = X @ model.W.T + model.b
    if model.temperature_head_active:
        T = 1.0 + _softplus(X @ model.w_T + model.b_T)
    else:
        T = np.ones(X.shape[0])
    scaled = Z / T[:, None]
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[np.arange(len(y)), y]
    reg = lam * (T - targets) ** 2 if model.temperature_head_active else 0.0
    return float(np.mean(nll + reg))


def train(dataset: Dataset, catalog: IdentityCatalog, config: TrainConfig) -> PitsModel:
    """Fit the classifier on the train split.

    The label space is the catalog's sorted identity set; test-only
    identities are outside it by design. Gradients are averaged per
    mini-batch; batches come from a seeded shuffle each epoch; the learning
    rate anneals to zero on a cosine unless configured constant.

    Raises:
        TrainingError: if the loss goes non-finite, reporting the epoch and
            the learning rate in effect.
    """
    labels = catalog.identities
    label_pos = {k: i for i, k in enumerate(labels)}
    train_obs = dataset.train

    X = np.stack([features_from(o, config.input_kind) for o in train_obs])
    y = np.array([label_pos[o.identity] for o in train_obs], dtype=np.int64)
    targets = np.array([catalog.target_temperatures[o.identity] for o in train_obs])
    n, d = X.shape
    k = len(labels)

    rng = np.random.default_rng(config.seed)
    W, b, w_T, b_T = _init_params(rng, k, d)
    use_temperature = config.loss_kind == "pits"

    if config.noise_std > 0:
        X = X + rng.normal(0.0, config.noise_std, size=X.shape)

    history: list[float] = []
    for epoch in range(config.epochs):
        lr = _epoch_lr(config.learning_rate, epoch, config.epochs, config.lr_schedule)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            Xb, yb, tb = X[idx], y[idx], targets[idx]
            m = len(idx)

            Z = Xb @ W.T + b
            if use_temperature:
                U = Xb @ w_T + b_T
                T = 1.0 + _softplus(U)
            else:
                T = np.ones(m)
            scaled = Z / T[:, None]
            shifted = scaled - scaled.max(axis=1, keepdims=True)
            expd = np.exp(shifted)
            P = expd / expd.sum(axis=1, keepdims=True)

            log_z = np.log(expd.sum(axis=1))
            nll = log_z - shifted[np.arange(m), yb]
            if use_temperature:
                batch_loss = float(np.mean(nll + config.lam * (T - tb) ** 2))
            else:
                batch_loss = float(np.mean(nll))
            epoch_loss += batch_loss * m

            G = P.copy()
            G[np.arange(m), yb] -= 1.0
            G /= T[:, None]
            W -= lr * (G.T @ Xb) / m
            b -= lr * G.mean(axis=0)

            if use_temperature:
                z_y = Z[np.arange(m), yb]
                z_dot_p = np.einsum("ij,ij->i", Z, P)
                dT = (z_y - z_dot_p) / T**2 + 2.0 * config.lam * (T - tb)
                dU = dT / (1.0 + np.exp(-U))
                w_T -= lr * (Xb.T @ dU) / m
                b_T -= lr * float(dU.mean())

        epoch_mean = epoch_loss / n
        if not math.isfinite(epoch_mean):
            raise TrainingError(
                f"loss became non-finite at epoch {epoch} (lr={lr:.3g});"
                " reduce the learning rate or feature scale"
            )
        history.append(epoch_mean)

    logger.info(
        "trained %s/%s model: %d classes, %d samples, final loss %.4f",
        config.loss_kind, config.input_kind, k, n, history[-1],
    )
    return PitsModel(
        W=W,
        b=b,
        w_T=w_T,
        b_T=float(b_T),
        labels=labels,
        input_kind=config.input_kind,
        temperature_head_active=use_temperature,
        loss_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# Background location model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BackgroundLocationModel:
    """Linear classifier from background features to grid-cell indices."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "W", np.asarray(self.W, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("weights must be (C, d_bg) with one bias per cell")

    @property
    def n_cells(self) -> int:
        return self.W.shape[0]

    def predict_location(self, x_bg: np.ndarray, grid: GridSpec) -> Location:
        """Center of the highest-scoring cell; ties go to the lowest index."""
        x_bg = np.asarray(x_bg, dtype=np.float64)
        if x_bg.shape != (self.W.shape[1],):
            raise ValueError(f"expected bg features of dim {self.W.shape[1]}, got {x_bg.shape}")
        if grid.n_cells != self.n_cells:
            raise ValueError(f"grid has {grid.n_cells} cells but model scores {self.n_cells}")
        scores = self.W @ x_bg + self.b
        return grid.cell_center(int(np.argmax(scores)))


def train_background_model(
    dataset: Dataset, grid: GridSpec, config: TrainConfig
) -> BackgroundLocationModel:
    """Fit a cell classifier on background features via cross-entropy.

    Reuses the optimizer settings from ``config``; the loss is always plain
    CE over cell indices regardless of config.loss_kind.
    """
    train_obs = dataset.train
    X = np.stack([o.bg_features for o in train_obs])
    y = np.array([grid.cell_index(o.location) for o in train_obs], dtype=np.int64)
    n, d = X.shape
    c = grid.n_cells

    rng = np.random.default_rng(config.seed)
    bound = 1.0 / math.sqrt(d)
    W = rng.uniform(-bound, bound, size=(c, d))
    b = np.zeros(c)

    for epoch in range(config.epochs):
        lr = _epoch_lr(config.learning_rate, epoch, config.epochs, config.lr_schedule)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            Xb, yb = X[idx], y[idx]
            m = len(idx)
            Z = Xb @ W.T + b
            shifted = Z - Z.max(axis=1, keepdims=True)
            expd = np.exp(shifted)
            P = expd / expd.sum(axis=1, keepdims=True)
            G = P.copy()
            G[np.arange(m), yb] -= 1.0
            W -= lr * (G.T @ Xb) / m
            b -= lr * G.mean(axis=0)
        if not np.all(np.isfinite(W)):
            raise TrainingError(f"background model diverged at epoch {epoch}")

    return BackgroundLocationModel(W=W, b=b)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model: PitsModel, path: str | Path, config: TrainConfig | None = None) -> None:
    """Write a JSON checkpoint; exact float reprs round-trip bit-identically."""
    payload = {
        "W": model.W.tolist(),
        "b": model.b.tolist(),
        "w_T": model.w_T.tolist(),
        "b_T": model.b_T,
        "d": model.input_dim,
        "K": model.n_classes,
        "labels": list(model.labels),
        "input_kind": model.input_kind,
        "temperature_head_active": model.temperature_head_active,
        "loss_history": list(model.loss_history),
    }
    if config is not None:
        payload["train_config"] = config.to_dict()
        payload["seed"] = config.seed
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> PitsModel:
    with Path(path).open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    model = PitsModel(
        W=np.array(payload["W"], dtype=np.float64),
        b=np.array(payload["b"], dtype=np.float64),
        w_T=np.array(payload["w_T"], dtype=np.float64),
        b_T=float(payload["b_T"]),
        labels=tuple(int(v) for v in payload["labels"]),
        input_kind=str(payload["input_kind"]),
        temperature_head_active=bool(payload["temperature_head_active"]),
        loss_history=tuple(float(v) for v in payload.get("loss_history", ())),
    )
    if model.input_dim != int(payload["d"]) or model.n_classes != int(payload["K"]):
        raise ValueError("checkpoint dims disagree with stored arrays")
    return model


def save_background_model(
    model: BackgroundLocationModel, path: str | Path, config: TrainConfig | None = None
) -> None:
    payload = {
        "W": model.W.tolist(),
        "b": model.b.tolist(),
        "C": model.n_cells,
    }
    if config is not None:
        payload["train_config"] = config.to_dict()
        payload["seed"] = config.seed
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_background_model(path: str | Path) -> BackgroundLocationModel:
    with Path(path).open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    model = BackgroundLocationModel(
        W=np.array(payload["W"], dtype=np.float64),
        b=np.array(payload["b"], dtype=np.float64),
    )
    if model.n_cells != int(payload["C"]):
        raise ValueError("checkpoint cell count disagrees with stored arrays")
    return model
