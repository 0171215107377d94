"""Background priors over identities: where and when each animal tends to be.

Three prior families share one exponential-decay shape:

  home location   p(k) proportional to exp(-alpha * dist(home_k, l))
  migrating       p(k) proportional to exp(-alpha * dist(last_k, l)),
                  with last_k updated to the capture location whenever the
                  fused posterior picks k
  time decay      p(k) proportional to exp(-beta * |last_seen_k - t|)

Distances are measured in grid cells (km divided by the cell size) and time
gaps in configurable units, 30-day months by default, so alpha and beta keep
the same meaning across datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import BackgroundLocationModel
from .data import GridSpec, IdentityCatalog, Location, Observation
from .errors import ConfigError

HOME_LOCATION = "home_location"
MIGRATING_LOCATION = "migrating_location"
TIME_DECAY = "time_decay"
UNIFORM = "uniform"
PRIOR_KINDS = (UNIFORM, HOME_LOCATION, MIGRATING_LOCATION, TIME_DECAY)

LOCATION_SOURCES = ("metadata", "background_model")


@dataclass(frozen=True)
class PriorConfig:
    """Which prior runs and with what decay constants.

    A zero decay constant is legal and makes the corresponding prior uniform.
    combine_with lists extra prior kinds multiplied in on top of ``kind``; it
    exists for experiments and is empty in every standard configuration.
    """

    kind: str = UNIFORM
    location_source: str = "metadata"
    alpha: float = 2.5
    beta: float = 3.0
    time_unit_days: float = 30.0
    cell_size_km: float = 5.0
    distance_unit: str = "cells"
    combine_with: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PRIOR_KINDS:
            raise ConfigError(f"prior kind must be one of {PRIOR_KINDS}, got {self.kind!r}")
        if self.location_source not in LOCATION_SOURCES:
            raise ConfigError(
                f"location_source must be one of {LOCATION_SOURCES}, got {self.location_source!r}"
            )
        if self.distance_unit not in ("cells", "km"):
            raise ConfigError(f"distance_unit must be 'cells' or 'km', got {self.distance_unit!r}")
        if not (self.alpha >= 0 and np.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be finite and non-negative, got {self.alpha}")
        if not (self.beta >= 0 and np.isfinite(self.beta)):
            raise ConfigError(f"beta must be finite and non-negative, got {self.beta}")
        if self.time_unit_days <= 0 or self.cell_size_km <= 0:
            raise ConfigError("time_unit_days and cell_size_km must be positive")
        for extra in self.combine_with:
            if extra not in PRIOR_KINDS or extra == UNIFORM:
                raise ConfigError(f"cannot combine with prior kind {extra!r}")
        if self.kind in self.combine_with:
            raise ConfigError(f"prior kind {self.kind!r} listed twice")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "location_source": self.location_source,
            "alpha": self.alpha,
            "beta": self.beta,
            "time_unit_days": self.time_unit_days,
            "cell_size_km": self.cell_size_km,
            "distance_unit": self.distance_unit,
            "combine_with": list(self.combine_with),
        }

    def with_updates(self, **changes) -> "PriorConfig":
        merged = {**self.to_dict(), **changes}
        merged["combine_with"] = tuple(merged["combine_with"])
        return PriorConfig(**merged)


@dataclass
class PriorState:
    """Mutable per-identity state threaded through sequential inference.

    Arrays are ordered like ``labels``. The migrating prior mutates
    ``last_loc_xy``; the time-decay prior mutates ``last_seen``.
    """

    labels: tuple[int, ...]
    home_xy: np.ndarray
    last_loc_xy: np.ndarray
    last_seen: np.ndarray
    config: PriorConfig
    _index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.home_xy = np.asarray(self.home_xy, dtype=np.float64)
        self.last_loc_xy = np.asarray(self.last_loc_xy, dtype=np.float64)
        self.last_seen = np.asarray(self.last_seen, dtype=np.float64)
        k = len(self.labels)
        if self.home_xy.shape != (k, 2) or self.last_loc_xy.shape != (k, 2):
            raise ValueError("location arrays must be (n_labels, 2)")
        if self.last_seen.shape != (k,):
            raise ValueError("last_seen must have one entry per label")
        self._index = {label: i for i, label in enumerate(self.labels)}

    def index_of(self, label: int) -> int:
        return self._index[label]

    def snapshot(self) -> dict:
        return {
            "last_loc_xy": self.last_loc_xy.copy(),
            "last_seen": self.last_seen.copy(),
        }

    def restore(self, snap: dict) -> None:
        self.last_loc_xy = snap["last_loc_xy"].copy()
        self.last_seen = snap["last_seen"].copy()


def init_state(catalog: IdentityCatalog, config: PriorConfig) -> PriorState:
    """Fresh state: last-known locations start at the homes, times at the
    final training sighting of each identity."""
    labels = catalog.identities
    home_xy = np.array(
        [[catalog.home_locations[k].x, catalog.home_locations[k].y] for k in labels]
    )
    last_seen = np.array([catalog.last_train_time[k] for k in labels])
    return PriorState(
        labels=labels,
        home_xy=home_xy,
        last_loc_xy=home_xy.copy(),
        last_seen=last_seen,
        config=config,
    )


def _distance_decay(anchors_xy: np.ndarray, loc: Location, config: PriorConfig) -> np.ndarray:
    deltas = anchors_xy - np.array([loc.x, loc.y])
    dist = np.hypot(deltas[:, 0], deltas[:, 1])
    if config.distance_unit == "cells":
        dist = dist / config.cell_size_km
    # Subtracting the min before exponentiating changes nothing after the
    # normalization but keeps exp() away from underflow at large alpha.
    weights = np.exp(-config.alpha * (dist - dist.min()))
    return weights / weights.sum()


def uniform_prior(state: PriorState) -> np.ndarray:
    k = len(state.labels)
    return np.full(k, 1.0 / k)


def home_location_prior(state: PriorState, loc: Location) -> np.ndarray:
    return _distance_decay(state.home_xy, loc, state.config)


def migrating_location_prior(state: PriorState, loc: Location) -> np.ndarray:
    return _distance_decay(state.last_loc_xy, loc, state.config)


def time_decay_prior(state: PriorState, timestamp: float) -> np.ndarray:
    gaps = np.abs(state.last_seen - timestamp) / state.config.time_unit_days
    weights = np.exp(-state.config.beta * (gaps - gaps.min()))
    return weights / weights.sum()


def update_location(state: PriorState, label: int, loc: Location) -> None:
    state.last_loc_xy[state.index_of(label)] = (loc.x, loc.y)


def update_last_seen(state: PriorState, label: int, timestamp: float) -> None:
    state.last_seen[state.index_of(label)] = timestamp


def resolve_location(
    obs: Observation,
    config: PriorConfig,
    background_model: BackgroundLocationModel | None = None,
    grid: GridSpec | None = None,
) -> Location:
    """Capture location used by the spatial priors.

    Either the trusted metadata location or, when coordinates cannot be
    trusted or are absent, the background model's best guess from scene
    features.
    """
    if config.location_source == "metadata":
        return obs.location
    if background_model is None:
        raise ConfigError("location_source='background_model' requires a background model")
    if grid is None:
        raise ConfigError("location_source='background_model' requires the grid")
    return background_model.predict_location(obs.bg_features, grid)


def _single_prior(kind: str, state: PriorState, loc: Location, timestamp: float) -> np.ndarray:
    if kind == UNIFORM:
        return uniform_prior(state)
    if kind == HOME_LOCATION:
        return home_location_prior(state, loc)
    if kind == MIGRATING_LOCATION:
        return migrating_location_prior(state, loc)
    if kind == TIME_DECAY:
        return time_decay_prior(state, timestamp)
    raise ConfigError(f"unknown prior kind {kind!r}")


def prior_vector(
    state: PriorState,
    obs: Observation,
    background_model: BackgroundLocationModel | None = None,
    grid: GridSpec | None = None,
) -> tuple[np.ndarray, Location]:
    """Evaluate the configured prior (times any combine_with extras) at one
    observation. Returns the normalized prior and the location it used."""
    loc = resolve_location(obs, state.config, background_model, grid)
    p = _single_prior(state.config.kind, state, loc, obs.timestamp)
    for extra in state.config.combine_with:
        p = p * _single_prior(extra, state, loc, obs.timestamp)
        p = p / p.sum()
    return p, loc


# ---------------------------------------------------------------------------
# State snapshots on disk
# ---------------------------------------------------------------------------


def save_state(state: PriorState, path: str | Path) -> None:
    """Serialize the full prior state for resumable inference and audit."""
    payload = {
        "home": {str(k): list(state.home_xy[state.index_of(k)]) for k in state.labels},
        "last_loc": {str(k): list(state.last_loc_xy[state.index_of(k)]) for k in state.labels},
        "last_seen": {str(k): float(state.last_seen[state.index_of(k)]) for k in state.labels},
        "config": state.config.to_dict(),
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_state(path: str | Path) -> PriorState:
    with Path(path).open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    labels = tuple(sorted(int(k) for k in payload["home"]))
    cfg = dict(payload["config"])
    cfg["combine_with"] = tuple(cfg.get("combine_with", ()))
    return PriorState(
        labels=labels,
        home_xy=np.array([payload["home"][str(k)] for k in labels]),
        last_loc_xy=np.array([payload["last_loc"][str(k)] for k in labels]),
        last_seen=np.array([payload["last_seen"][str(k)] for k in labels]),
        config=PriorConfig(**cfg),
    )
