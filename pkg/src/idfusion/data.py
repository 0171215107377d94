"""Domain types, dataset I/O, temporal splitting, and per-identity training statistics.

All types are immutable after construction and safe to share. Observations are
stored one JSON object per line; grid and dataset metadata live in a sidecar
JSON file next to the observation file.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError, SplitError

TRAIN = "train"
TEST = "test"

OBSERVATIONS_FILENAME = "observations.jsonl"
SIDECAR_FILENAME = "dataset.json"


@dataclass(frozen=True)
class Location:
    """Point in kilometers east (x) and north (y) of the grid origin."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"location coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Location") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class GridSpec:
    """Uniform geospatial grid covering the whole monitored region.

    Cells are indexed row-major: index = row * n_cells_x + col, with col
    counting eastwards from the origin and row counting northwards.
    """

    origin: Location
    cell_size_km: float = 5.0
    n_cells_x: int = 1
    n_cells_y: int = 1

    def __post_init__(self) -> None:
        if not (self.cell_size_km > 0 and math.isfinite(self.cell_size_km)):
            raise ValueError(f"cell_size_km must be positive, got {self.cell_size_km}")
        if self.n_cells_x < 1 or self.n_cells_y < 1:
            raise ValueError("grid must have at least one cell per axis")

    @property
    def n_cells(self) -> int:
        return self.n_cells_x * self.n_cells_y

    def contains(self, loc: Location) -> bool:
        return (
            self.origin.x <= loc.x <= self.origin.x + self.cell_size_km * self.n_cells_x
            and self.origin.y <= loc.y <= self.origin.y + self.cell_size_km * self.n_cells_y
        )

    def cell_index(self, loc: Location) -> int:
        """Index of the cell containing ``loc``.

        Locations exactly on the far boundary belong to the last cell of the
        axis, so every in-bounds location maps to a valid index.
        """
        col = int((loc.x - self.origin.x) // self.cell_size_km)
        row = int((loc.y - self.origin.y) // self.cell_size_km)
        col = min(max(col, 0), self.n_cells_x - 1)
        row = min(max(row, 0), self.n_cells_y - 1)
        return row * self.n_cells_x + col

    def cell_center(self, index: int) -> Location:
        if not 0 <= index < self.n_cells:
            raise ValueError(f"cell index {index} out of range [0, {self.n_cells})")
        row, col = divmod(index, self.n_cells_x)
        return Location(
            self.origin.x + (col + 0.5) * self.cell_size_km,
            self.origin.y + (row + 0.5) * self.cell_size_km,
        )


@dataclass(frozen=True, eq=False)
class Observation:
    """One sighting: features, capture location, capture time, identity label."""

    obs_id: str
    identity: int
    fg_features: np.ndarray
    bg_features: np.ndarray
    location: Location
    timestamp: float
    split: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "fg_features", np.asarray(self.fg_features, dtype=np.float64))
        object.__setattr__(self, "bg_features", np.asarray(self.bg_features, dtype=np.float64))
        if self.fg_features.ndim != 1 or self.bg_features.ndim != 1:
            raise ValueError(f"{self.obs_id}: feature vectors must be one-dimensional")
        if not np.all(np.isfinite(self.fg_features)) or not np.all(np.isfinite(self.bg_features)):
            raise ValueError(f"{self.obs_id}: feature vectors must contain only finite values")
        if self.identity < 0:
            raise ValueError(f"{self.obs_id}: identity label must be non-negative")
        if not (self.timestamp > 0 and math.isfinite(self.timestamp)):
            raise ValueError(f"{self.obs_id}: timestamp must be strictly positive, got {self.timestamp}")
        if self.split not in (None, TRAIN, TEST):
            raise ValueError(f"{self.obs_id}: split must be 'train', 'test', or absent")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.obs_id == other.obs_id
            and self.identity == other.identity
            and np.array_equal(self.fg_features, other.fg_features)
            and np.array_equal(self.bg_features, other.bg_features)
            and self.location == other.location
            and self.timestamp == other.timestamp
            and self.split == other.split
        )


@dataclass(frozen=True)
class Dataset:
    """Split observations plus the grid they live on.

    Every observation carries a split tag; identity labels are contiguous in
    [0, n_identities). Identities that only appear in the test split are kept
    (they are legitimate observations) but reported separately downstream.
    """

    observations: tuple[Observation, ...]
    grid: GridSpec
    n_identities: int
    feature_dims: tuple[int, int]

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], grid: GridSpec) -> "Dataset":
        obs = tuple(observations)
        if not obs:
            raise SchemaError("dataset must contain at least one observation")
        n_identities = max(o.identity for o in obs) + 1
        feature_dims = (obs[0].fg_features.shape[0], obs[0].bg_features.shape[0])
        ds = cls(obs, grid, n_identities, feature_dims)
        return validate_dataset(ds)

    @property
    def train(self) -> tuple[Observation, ...]:
        return tuple(o for o in self.observations if o.split == TRAIN)

    @property
    def test(self) -> tuple[Observation, ...]:
        return tuple(o for o in self.observations if o.split == TEST)

    @property
    def test_only_identities(self) -> frozenset[int]:
        """Identities never seen in training; they can never be predicted correctly."""
        seen_in_train = {o.identity for o in self.observations if o.split == TRAIN}
        return frozenset(o.identity for o in self.observations if o.identity not in seen_in_train)


def validate_dataset(dataset: Dataset, require_train_coverage: bool = False) -> Dataset:
    """Check dataset invariants, returning the dataset unchanged if they hold.

    Raises:
        SchemaError: on dimension mismatches, non-contiguous identity labels,
            missing split tags, or out-of-bounds locations.
    """
    d, d_bg = dataset.feature_dims
    labels_seen: set[int] = set()
    for o in dataset.observations:
        if o.fg_features.shape[0] != d or o.bg_features.shape[0] != d_bg:
            raise SchemaError(
                f"{o.obs_id}: feature dims ({o.fg_features.shape[0]}, {o.bg_features.shape[0]})"
                f" differ from dataset dims ({d}, {d_bg})"
            )
        if o.split is None:
            raise SchemaError(f"{o.obs_id}: observation has no split tag")
        if not 0 <= o.identity < dataset.n_identities:
            raise SchemaError(f"{o.obs_id}: identity {o.identity} outside [0, {dataset.n_identities})")
        if not dataset.grid.contains(o.location):
            raise SchemaError(f"{o.obs_id}: location {o.location} outside the grid bounds")
        labels_seen.add(o.identity)
    if labels_seen != set(range(dataset.n_identities)):
        missing = sorted(set(range(dataset.n_identities)) - labels_seen)
        raise SchemaError(f"identity labels are not contiguous; missing {missing}")
    if require_train_coverage:
        orphans = dataset.test_only_identities
        if orphans:
            raise SchemaError(f"identities with no training sightings: {sorted(orphans)}")
    return dataset


def temporal_split(
    observations: Iterable[Observation], cutoff: float, grid: GridSpec
) -> Dataset:
    """Tag observations before ``cutoff`` as train and the rest as test.

    Raises:
        SplitError: if either side of the cutoff is empty.
    """
    obs = list(observations)
    tagged = [replace(o, split=TRAIN if o.timestamp < cutoff else TEST) for o in obs]
    n_train = sum(1 for o in tagged if o.split == TRAIN)
    if n_train == 0:
        raise SplitError(f"no observations before cutoff {cutoff}")
    if n_train == len(tagged):
        raise SplitError(f"no observations at or after cutoff {cutoff}")
    return Dataset.from_observations(tagged, grid)


def target_temperature(n_k: float, n_max: float) -> float:
    """Class-count temperature target: 1 - ln(n_k / n_max).

    Equals 1 for the most frequent identity and grows as the identity gets
    rarer. Natural log, matching the exp convention of the softmax.
    """
    if n_k <= 0 or n_max <= 0:
        raise ValueError("sample counts must be positive")
    if n_k > n_max:
        raise ValueError(f"n_k={n_k} exceeds n_max={n_max}")
    return 1.0 - math.log(n_k / n_max)


@dataclass(frozen=True)
class IdentityCatalog:
    """Per-identity training statistics derived from the train split."""

    counts: dict[int, int]
    home_locations: dict[int, Location]
    target_temperatures: dict[int, float]
    last_train_time: dict[int, float]

    @property
    def identities(self) -> tuple[int, ...]:
        return tuple(sorted(self.counts))

    @property
    def n_max(self) -> int:
        return max(self.counts.values())


def build_catalog(dataset: Dataset) -> IdentityCatalog:
    """Compute counts, home locations, temperature targets, and last-seen times.

    The home location is the center of the grid cell holding the most train
    sightings of the identity; ties break to the lowest cell index.
    """
    train = dataset.train
    if not train:
        raise SplitError("cannot build a catalog from an empty train split")

    counts: dict[int, int] = {}
    cells: dict[int, Counter] = {}
    last_time: dict[int, float] = {}
    for o in train:
        counts[o.identity] = counts.get(o.identity, 0) + 1
        cells.setdefault(o.identity, Counter())[dataset.grid.cell_index(o.location)] += 1
        last_time[o.identity] = max(last_time.get(o.identity, 0.0), o.timestamp)

    n_max = max(counts.values())
    homes: dict[int, Location] = {}
    temps: dict[int, float] = {}
    for k, cell_counts in cells.items():
        best = max(cell_counts.values())
        modal_cell = min(c for c, n in cell_counts.items() if n == best)
        homes[k] = dataset.grid.cell_center(modal_cell)
        temps[k] = target_temperature(counts[k], n_max)

    return IdentityCatalog(counts, homes, temps, last_time)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _record_from(obs: Observation) -> dict:
    rec = {
        "obs_id": obs.obs_id,
        "identity": int(obs.identity),
        "fg": [float(v) for v in obs.fg_features],
        "bg": [float(v) for v in obs.bg_features],
        "loc": [float(obs.location.x), float(obs.location.y)],
        "t": float(obs.timestamp),
    }
    if obs.split is not None:
        rec["split"] = obs.split
    return rec


def _observation_from(rec: dict, lineno: int) -> Observation:
    try:
        loc = rec["loc"]
        return Observation(
            obs_id=str(rec["obs_id"]),
            identity=int(rec["identity"]),
            fg_features=np.asarray(rec["fg"], dtype=np.float64),
            bg_features=np.asarray(rec["bg"], dtype=np.float64),
            location=Location(float(loc[0]), float(loc[1])),
            timestamp=float(rec["t"]),
            split=rec.get("split"),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: {exc}") from exc


def save_observations(observations: Iterable[Observation], path: str | Path) -> None:
    """Write observations as one JSON object per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for obs in observations:
            fh.write(json.dumps(_record_from(obs), sort_keys=True))
            fh.write("\n")


def load_observations(path: str | Path) -> list[Observation]:
    """Read a JSONL observation file.

    Raises:
        ParseError: on a malformed record, naming the line number.
        SchemaError: when records disagree on feature dimensions.
    """
    path = Path(path)
    observations: list[Observation] = []
    dims: tuple[int, int] | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ParseError(f"line {lineno}: record is not a JSON object")
            obs = _observation_from(rec, lineno)
            rec_dims = (obs.fg_features.shape[0], obs.bg_features.shape[0])
            if dims is None:
                dims = rec_dims
            elif rec_dims != dims:
                raise SchemaError(
                    f"line {lineno}: feature dims {rec_dims} differ from first record {dims}"
                )
            observations.append(obs)
    return observations


def save_dataset(dataset: Dataset, directory: str | Path, extra_meta: Mapping | None = None) -> None:
    """Write ``observations.jsonl`` plus the ``dataset.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_observations(dataset.observations, directory / OBSERVATIONS_FILENAME)
    meta = {
        "origin": [dataset.grid.origin.x, dataset.grid.origin.y],
        "cell_size_km": dataset.grid.cell_size_km,
        "n_cells_x": dataset.grid.n_cells_x,
        "n_cells_y": dataset.grid.n_cells_y,
        "n_identities": dataset.n_identities,
    }
    if extra_meta:
        meta.update(extra_meta)
    with (directory / SIDECAR_FILENAME).open("w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dataset(directory: str | Path) -> Dataset:
    """Load a dataset directory written by :func:`save_dataset`."""
    directory = Path(directory)
    sidecar = directory / SIDECAR_FILENAME
    try:
        with sidecar.open("r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"missing sidecar file {sidecar}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{sidecar}: invalid JSON ({exc.msg})") from exc
    try:
        grid = GridSpec(
            origin=Location(float(meta["origin"][0]), float(meta["origin"][1])),
            cell_size_km=float(meta["cell_size_km"]),
            n_cells_x=int(meta["n_cells_x"]),
            n_cells_y=int(meta["n_cells_y"]),
        )
        n_identities = int(meta["n_identities"])
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise SchemaError(f"{sidecar}: {exc}") from exc

    observations = load_observations(directory / OBSERVATIONS_FILENAME)
    dataset = Dataset.from_observations(observations, grid)
    if dataset.n_identities != n_identities:
        raise SchemaError(
            f"sidecar declares {n_identities} identities but observations imply {dataset.n_identities}"
        )
    return dataset
