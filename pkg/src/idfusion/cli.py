"""Command-line entry point.

Subcommands cover the full workflow: simulate a population, train a model,
fit and inspect a post-hoc global temperature, run fused inference over the
test split, score a predictions file, and render the standard comparison
table. Every command exits 0 on success and 1 with a single diagnostic line
on expected failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import expected_calibration_error, fit_global_temperature
from .classifier import (
    TrainConfig,
    features_from,
    load_model,
    save_background_model,
    save_model,
    train,
    train_background_model,
)
from .data import build_catalog, load_dataset, save_dataset
from .errors import (
    ConfigError,
    ParseError,
    SchemaError,
    SimulationError,
    SplitError,
    TrainingError,
)
from .evaluation import (
    load_report,
    render_report_table,
    run_row_suite,
    save_report,
    score_predictions,
    write_report_csv,
)
from .fusion import read_predictions, sequential_infer, write_predictions
from .priors import PRIOR_KINDS, PriorConfig, init_state
from .simulate import PRESETS, SimConfig, generate

logger = logging.getLogger(__name__)

_EXPECTED = (ConfigError, ParseError, SchemaError, SplitError, TrainingError,
             SimulationError, FileNotFoundError, ValueError, KeyError)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with Path(path).open("r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config file must hold a JSON object")
    return cfg


def _merge(section: dict, overrides: dict) -> dict:
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _effective_seed(args: argparse.Namespace, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _train_config(args: argparse.Namespace, cfg: dict) -> TrainConfig:
    section = _merge(
        cfg.get("train", {}),
        {
            "loss_kind": getattr(args, "loss", None),
            "input_kind": getattr(args, "input", None),
            "epochs": getattr(args, "epochs", None),
            "learning_rate": getattr(args, "learning_rate", None),
            "seed": getattr(args, "seed", None),
        },
    )
    section.setdefault("seed", int(cfg.get("seed", 0)))
    return TrainConfig(**section)


def _prior_config(args: argparse.Namespace, cfg: dict) -> PriorConfig:
    section = _merge(
        cfg.get("prior", {}),
        {
            "kind": getattr(args, "prior", None),
            "location_source": getattr(args, "location_source", None),
        },
    )
    if "combine_with" in section:
        section["combine_with"] = tuple(section["combine_with"])
    return PriorConfig(**section)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    if args.preset:
        base = PRESETS[args.preset](seed=_effective_seed(args, cfg)).to_dict()
        section = _merge(base, cfg.get("sim", {}))
    else:
        section = dict(cfg.get("sim", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    sim = SimConfig.from_dict(section)
    dataset = generate(sim)
    save_dataset(dataset, args.out, extra_meta={"sim_config": sim.to_dict(), "seed": sim.seed})
    print(
        f"wrote {len(dataset.observations)} observations "
        f"({len(dataset.train)} train / {len(dataset.test)} test, "
        f"{dataset.n_identities} identities) to {args.out}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    dataset = load_dataset(args.data)
    tc = _train_config(args, cfg)
    if args.model_kind == "background":
        model = train_background_model(dataset, dataset.grid, tc)
        save_background_model(model, args.out, config=tc)
        print(f"wrote background location model ({model.n_cells} cells) to {args.out}")
        return 0
    catalog = build_catalog(dataset)
    model = train(dataset, catalog, tc)
    save_model(model, args.out, config=tc)
    print(
        f"wrote {tc.loss_kind}/{tc.input_kind} model "
        f"({model.n_classes} classes, final loss {model.final_train_loss:.4f}) to {args.out}"
    )
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    test = dataset.test
    label_pos = {k: i for i, k in enumerate(model.labels)}
    logits = np.stack([model.forward(features_from(o, model.input_kind)).logits for o in test])
    labels = np.array([label_pos.get(o.identity, -1) for o in test], dtype=np.int64)

    known = labels >= 0
    if not known.any():
        print("error: no test observation has an identity the model was trained on",
              file=sys.stderr)
        return 1
    t_star = fit_global_temperature(logits[known], labels[known])

    def _probs(t: float) -> np.ndarray:
        scaled = logits / t
        shifted = scaled - scaled.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    before = expected_calibration_error(_probs(1.0), labels)
    after = expected_calibration_error(_probs(t_star), labels)
    print(f"fitted global temperature: {t_star:.4f}")
    print(f"ece before: {before.ece:.4f}")
    print(f"ece after:  {after.ece:.4f}")
    if args.out:
        payload = {
            "temperature": t_star,
            "ece_before": before.ece,
            "ece_after": after.ece,
            "n_evaluated": int(labels.shape[0]),
            "seed": _effective_seed(args, cfg),
        }
        Path(args.out).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return 0


def _cmd_infer(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    seed = _effective_seed(args, cfg)
    pc = _prior_config(args, cfg)
    if pc.cell_size_km != dataset.grid.cell_size_km:
        pc = pc.with_updates(cell_size_km=dataset.grid.cell_size_km)
    catalog = build_catalog(dataset)
    background_model = None
    if pc.location_source == "background_model":
        bg_tc = TrainConfig(seed=seed + 1)
        background_model = train_background_model(dataset, dataset.grid, bg_tc)
    state = init_state(catalog, pc)
    predictions = sequential_infer(model, state, dataset.test, dataset.grid, background_model)
    n_correct = sum(1 for p in predictions if p.correct)
    write_predictions(
        predictions, args.out, model.labels, pc.kind,
        meta={
            "model_input_kind": model.input_kind,
            # Enough training context for downstream tables to name the row;
            # the checkpoint itself is the authority on anything deeper.
            "train_config": {
                "input_kind": model.input_kind,
                "loss_kind": "pits" if model.temperature_head_active else "ce",
            },
            "prior_config": pc.to_dict(),
            "seed": seed,
        },
    )
    print(
        f"wrote {len(predictions)} predictions ({n_correct} correct, prior={pc.kind}) to {args.out}"
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    records, meta = read_predictions(args.predictions)
    report = score_predictions(records, meta, dataset)
    if args.out:
        save_report(report, args.out)
    nl = ("n/a" if report.new_location_accuracy is None
          else f"{report.new_location_accuracy:.4f}")
    print(f"overall accuracy:       {report.overall_accuracy:.4f}")
    print(f"new-location accuracy:  {nl} (n={report.n_new_location})")
    print(f"ece (fused):            {report.ece_fused:.4f}")
    print(f"ece (likelihood only):  {report.ece_likelihood:.4f}")
    return 0


def _row_name(report) -> str:
    tc, pc = report.train_config, report.prior_config
    parts = [tc.get("input_kind", "?"), tc.get("loss_kind", "?"), pc.get("kind", "?")]
    if pc.get("location_source") == "background_model":
        parts.append("bg")
    return "_".join(parts)


def _cmd_report(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    if args.reports:
        if args.data:
            print("error: pass either report files or --data, not both", file=sys.stderr)
            return 1
        reports = {}
        for path in args.reports:
            rep = load_report(path)
            name = _row_name(rep)
            if name in reports:
                name = f"{name}_{Path(path).stem}"
            reports[name] = rep
    elif args.data:
        dataset = load_dataset(args.data)
        seed = _effective_seed(args, cfg)
        base_train = TrainConfig(**cfg.get("train", {})) if cfg.get("train") else None
        base_prior = None
        if cfg.get("prior"):
            section = dict(cfg["prior"])
            if "combine_with" in section:
                section["combine_with"] = tuple(section["combine_with"])
            base_prior = PriorConfig(**section)
        reports = run_row_suite(dataset, seed=seed, base_train=base_train, base_prior=base_prior)
    else:
        print("error: give report files to compare or --data to run the standard grid",
              file=sys.stderr)
        return 1
    sys.stdout.write(render_report_table(reports))
    if args.out:
        write_report_csv(reports, args.out)
        print(f"wrote csv to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idfusion",
        description="Calibrated identity classification fused with spatiotemporal priors.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", help="JSON config file with sim/train/prior sections")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("simulate", help="generate a synthetic sighting dataset")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named population preset")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="fit a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model-kind", choices=("identity", "background"), default="identity")
    p.add_argument("--loss", choices=("ce", "pits"), help="training objective")
    p.add_argument("--input", choices=("foreground", "background", "whole"),
                   help="feature source")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="fit a global temperature to a trained model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="model checkpoint path")
    common(p, out_required=False)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("infer", help="run fused inference over the test split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="model checkpoint path")
    p.add_argument("--prior", choices=PRIOR_KINDS, help="prior kind")
    p.add_argument("--location-source", choices=("metadata", "background_model"),
                   dest="location_source")
    common(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score a predictions directory against a dataset")
    p.add_argument("--predictions", required=True, help="predictions directory from infer")
    p.add_argument("--data", required=True, help="dataset directory")
    common(p, out_required=False)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="compare runs in an aligned table")
    p.add_argument("reports", nargs="*", help="report JSON files to compare")
    p.add_argument("--data", help="dataset directory: run the standard grid instead")
    common(p, out_required=False)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _EXPECTED as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
