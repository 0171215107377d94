"""Experiment harness: accuracy metrics, calibration reporting, and the
standard grid of likelihood/prior combinations.

A "new location" test observation is one whose (identity, grid cell) pair
never occurs in training; accuracy over that subset isolates how much a
configuration leans on where an animal was photographed rather than what it
looks like.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .calibration import ece_from_top_predictions, expected_calibration_error
from .classifier import PitsModel, TrainConfig, train, train_background_model
from .data import Dataset, IdentityCatalog, Observation, build_catalog
from .fusion import Prediction, sequential_infer
from .priors import (
    HOME_LOCATION,
    MIGRATING_LOCATION,
    TIME_DECAY,
    UNIFORM,
    PriorConfig,
    init_state,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentReport:
    """Everything a single likelihood+prior run produced, JSON-serializable."""

    overall_accuracy: float
    new_location_accuracy: float | None
    ece_fused: float
    ece_likelihood: float
    n_test: int
    n_new_location: int
    n_unknown_identity: int
    seed: int
    train_config: dict
    prior_config: dict
    per_identity: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "new_location_accuracy": self.new_location_accuracy,
            "ece_fused": self.ece_fused,
            "ece_likelihood": self.ece_likelihood,
            "n_test": self.n_test,
            "n_new_location": self.n_new_location,
            "n_unknown_identity": self.n_unknown_identity,
            "seed": self.seed,
            "train_config": self.train_config,
            "prior_config": self.prior_config,
            "per_identity": {str(k): v for k, v in sorted(self.per_identity.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(
            overall_accuracy=d["overall_accuracy"],
            new_location_accuracy=d["new_location_accuracy"],
            ece_fused=d["ece_fused"],
            ece_likelihood=d["ece_likelihood"],
            n_test=d["n_test"],
            n_new_location=d["n_new_location"],
            n_unknown_identity=d["n_unknown_identity"],
            seed=d["seed"],
            train_config=d["train_config"],
            prior_config=d["prior_config"],
            per_identity={int(k): v for k, v in d["per_identity"].items()},
        )


def overall_accuracy(
    predictions: Sequence[Prediction],
    observations: Sequence[Observation] | None = None,
) -> float:
    """Fraction of predictions matching ground truth.

    Ground truth comes from the predictions themselves, or from
    ``observations`` aligned by obs_id when given. Truths outside the label
    space simply never match, so unknown identities count as errors.
    """
    if not predictions:
        raise ValueError("cannot score an empty prediction list")
    if observations is not None:
        truth = {o.obs_id: o.identity for o in observations}
        missing = [p.obs_id for p in predictions if p.obs_id not in truth]
        if missing:
            raise ValueError(f"no ground-truth observation for {missing[:3]}")
        hits = sum(1 for p in predictions if p.predicted == truth[p.obs_id])
        return hits / len(predictions)
    flags = [p.correct for p in predictions]
    if any(f is None for f in flags):
        raise ValueError("all predictions need ground-truth identities to score accuracy")
    return float(sum(flags)) / len(flags)


def train_location_pairs(dataset: Dataset) -> frozenset[tuple[int, int]]:
    """(identity, cell) pairs observed during training."""
    return frozenset(
        (o.identity, dataset.grid.cell_index(o.location)) for o in dataset.train
    )


def new_location_subset(
    observations: Sequence[Observation],
    train_pairs: frozenset[tuple[int, int]],
    dataset: Dataset,
) -> frozenset[str]:
    """obs_ids of observations whose (identity, cell) pair is new.

    Membership depends only on the data, never on any prediction.
    """
    return frozenset(
        o.obs_id
        for o in observations
        if (o.identity, dataset.grid.cell_index(o.location)) not in train_pairs
    )


def new_location_accuracy(
    predictions: Sequence[Prediction],
    observations: Sequence[Observation],
    train_pairs: frozenset[tuple[int, int]],
    dataset: Dataset,
) -> tuple[float | None, int]:
    """Accuracy over test observations captured somewhere their identity was
    never seen in training. Returns (accuracy, subset size); the accuracy is
    None when the subset is empty."""
    members = new_location_subset(observations, train_pairs, dataset)
    subset = [p for p in predictions if p.obs_id in members]
    if not subset:
        return None, 0
    return overall_accuracy(subset), len(subset)


def _per_identity_accuracy(predictions: Sequence[Prediction]) -> dict[int, float]:
    totals: dict[int, list[int]] = {}
    for p in predictions:
        if p.true_identity is None:
            continue
        entry = totals.setdefault(p.true_identity, [0, 0])
        entry[0] += 1 if p.correct else 0
        entry[1] += 1
    return {k: h / n for k, (h, n) in sorted(totals.items())}


def _calibration_inputs(
    predictions: Sequence[Prediction], labels: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = {label: i for i, label in enumerate(labels)}
    post = np.stack([p.posterior for p in predictions])
    like = np.stack([p.likelihood for p in predictions])
    # Identities outside the training label space map to -1 and are scored
    # as incorrect at whatever confidence the model claimed.
    y = np.array([pos.get(p.true_identity, -1) for p in predictions], dtype=np.int64)
    return post, like, y


def run_experiment(
    dataset: Dataset,
    train_config: TrainConfig,
    prior_config: PriorConfig,
    seed: int | None = None,
    model: PitsModel | None = None,
    catalog: IdentityCatalog | None = None,
) -> tuple[ExperimentReport, list[Prediction]]:
    """Train (or reuse) a model, run sequential fusion over the test split,
    and score it.

    The prior's cell size is synced to the dataset grid so distances always
    come out in this dataset's cell units. The background location model only
    trains when the prior actually resolves locations through it, with a
    shifted seed so it never shares a random stream with the classifier.
    """
    if prior_config.cell_size_km != dataset.grid.cell_size_km:
        prior_config = prior_config.with_updates(cell_size_km=dataset.grid.cell_size_km)
    if seed is not None and model is None:
        train_config = TrainConfig(**{**train_config.to_dict(), "seed": seed})
    run_seed = train_config.seed

    if catalog is None:
        catalog = build_catalog(dataset)
    if model is None:
        model = train(dataset, catalog, train_config)

    background_model = None
    if prior_config.location_source == "background_model":
        bg_config = TrainConfig(**{**train_config.to_dict(), "seed": run_seed + 1})
        background_model = train_background_model(dataset, dataset.grid, bg_config)

    state = init_state(catalog, prior_config)
    predictions = sequential_infer(model, state, dataset.test, dataset.grid, background_model)

    post, like, y = _calibration_inputs(predictions, model.labels)
    nl_acc, nl_count = new_location_accuracy(
        predictions, dataset.test, train_location_pairs(dataset), dataset
    )
    known = set(model.labels)
    report = ExperimentReport(
        overall_accuracy=overall_accuracy(predictions),
        new_location_accuracy=nl_acc,
        ece_fused=expected_calibration_error(post, y).ece,
        ece_likelihood=expected_calibration_error(like, y).ece,
        n_test=len(predictions),
        n_new_location=nl_count,
        n_unknown_identity=sum(1 for p in predictions if p.true_identity not in known),
        seed=run_seed,
        train_config=train_config.to_dict(),
        prior_config=prior_config.to_dict(),
        per_identity=_per_identity_accuracy(predictions),
    )
    return report, predictions


def score_predictions(
    records: Sequence[Mapping],
    meta: Mapping,
    dataset: Dataset,
) -> ExperimentReport:
    """Score a prediction file written by the inference step.

    Works from the stored top-5 entries: top-1 confidence and correctness are
    all that top-label calibration and accuracy need.
    """
    if not records:
        raise ValueError("prediction file holds no records")
    by_id = {o.obs_id: o for o in dataset.test}
    labels = set(int(v) for v in meta.get("labels", ()))

    correct = []
    post_conf = []
    like_conf = []
    like_correct = []
    n_unknown = 0
    n_hits_new = 0
    n_new = 0
    new_ids = new_location_subset(dataset.test, train_location_pairs(dataset), dataset)
    per_identity: dict[int, list[int]] = {}
    for rec in records:
        obs = by_id.get(rec["obs_id"])
        true = rec["true"] if rec["true"] is not None else (obs.identity if obs else None)
        if true is None:
            raise ValueError(f"{rec['obs_id']}: no ground truth available")
        hit = int(rec["predicted"]) == int(true)
        correct.append(hit)
        post_conf.append(float(rec["posterior_top5"][0][1]))
        # The likelihood is scored as its own predictor: its top entry's
        # label, not the fused prediction, decides correctness here.
        like_conf.append(float(rec["likelihood_top5"][0][1]))
        like_correct.append(int(rec["likelihood_top5"][0][0]) == int(true))
        if labels and int(true) not in labels:
            n_unknown += 1
        if rec["obs_id"] in new_ids:
            n_new += 1
            n_hits_new += 1 if hit else 0
        entry = per_identity.setdefault(int(true), [0, 0])
        entry[0] += 1 if hit else 0
        entry[1] += 1

    correct_arr = np.array(correct, dtype=np.float64)
    return ExperimentReport(
        overall_accuracy=float(correct_arr.mean()),
        new_location_accuracy=None if n_new == 0 else n_hits_new / n_new,
        ece_fused=ece_from_top_predictions(np.array(post_conf), correct_arr).ece,
        ece_likelihood=ece_from_top_predictions(
            np.array(like_conf), np.array(like_correct, dtype=np.float64)
        ).ece,
        n_test=len(records),
        n_new_location=n_new,
        n_unknown_identity=n_unknown,
        seed=int(meta.get("seed", 0)),
        train_config=dict(meta.get("train_config", {})),
        prior_config=dict(meta.get("prior_config", {})),
        per_identity={k: h / n for k, (h, n) in sorted(per_identity.items())},
    )


# ---------------------------------------------------------------------------
# Standard comparison grid
# ---------------------------------------------------------------------------

STANDARD_ROWS: tuple[tuple[str, str, str, str, str], ...] = (
    # (row name, input kind, loss kind, prior kind, location source)
    ("bg_ce_uniform", "background", "ce", UNIFORM, "metadata"),
    ("whole_ce_uniform", "whole", "ce", UNIFORM, "metadata"),
    ("fg_ce_uniform", "foreground", "ce", UNIFORM, "metadata"),
    ("fg_pits_uniform", "foreground", "pits", UNIFORM, "metadata"),
    ("fg_pits_home", "foreground", "pits", HOME_LOCATION, "metadata"),
    ("fg_pits_migrating", "foreground", "pits", MIGRATING_LOCATION, "metadata"),
    ("fg_pits_migrating_bg", "foreground", "pits", MIGRATING_LOCATION, "background_model"),
    ("fg_pits_time", "foreground", "pits", TIME_DECAY, "metadata"),
)


def run_row_suite(
    dataset: Dataset,
    seed: int = 0,
    rows: Sequence[tuple[str, str, str, str, str]] = STANDARD_ROWS,
    base_train: TrainConfig | None = None,
    base_prior: PriorConfig | None = None,
) -> dict[str, ExperimentReport]:
    """Run each named row, training each distinct (input, loss) model once."""
    if base_train is None:
        base_train = TrainConfig(seed=seed)
    if base_prior is None:
        base_prior = PriorConfig()
    catalog = build_catalog(dataset)
    models: dict[tuple[str, str], PitsModel] = {}
    reports: dict[str, ExperimentReport] = {}
    for name, input_kind, loss_kind, prior_kind, location_source in rows:
        key = (input_kind, loss_kind)
        tc = TrainConfig(
            **{**base_train.to_dict(), "input_kind": input_kind, "loss_kind": loss_kind,
               "seed": seed}
        )
        if key not in models:
            models[key] = train(dataset, catalog, tc)
        pc = base_prior.with_updates(kind=prior_kind, location_source=location_source)
        report, _ = run_experiment(dataset, tc, pc, model=models[key], catalog=catalog)
        reports[name] = report
        logger.info("row %-22s accuracy %.3f", name, report.overall_accuracy)
    return reports


def render_report_table(reports: Mapping[str, ExperimentReport]) -> str:
    """Fixed-width text table, one row per experiment."""
    header = f"{'row':<24} {'acc':>7} {'new-loc':>8} {'ece':>7} {'n':>6}"
    lines = [header, "-" * len(header)]
    for name, rep in reports.items():
        nl = f"{rep.new_location_accuracy:.3f}" if rep.new_location_accuracy is not None else "n/a"
        lines.append(
            f"{name:<24} {rep.overall_accuracy:>7.3f} {nl:>8} {rep.ece_fused:>7.3f} {rep.n_test:>6d}"
        )
    return "\n".join(lines) + "\n"


def write_report_csv(reports: Mapping[str, ExperimentReport], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", "overall_accuracy", "new_location_accuracy", "ece_fused",
             "ece_likelihood", "n_test", "n_new_location", "n_unknown_identity", "seed"]
        )
        for name, rep in reports.items():
            writer.writerow(
                [name, rep.overall_accuracy,
                 "" if rep.new_location_accuracy is None else rep.new_location_accuracy,
                 rep.ece_fused, rep.ece_likelihood, rep.n_test,
                 rep.n_new_location, rep.n_unknown_identity, rep.seed]
            )


def save_report(report: ExperimentReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")


def load_report(path: str | Path) -> ExperimentReport:
    return ExperimentReport.from_json(Path(path).read_text(encoding="utf-8"))
