"""``encdec-ad`` command line.

    encdec-ad prepare  --preset power --out runs/power
    encdec-ad train    --preset power --out runs/power [--resume runs/power/checkpoints]
    encdec-ad fit-error-model / threshold / score / evaluate  (same flags)
    encdec-ad run      --config my.json --out runs/mine --seed 3

Failures exit non-zero and print one JSON line on stderr:
``{"error": <category>, "stage": <stage>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as P
from .config import PRESETS, ExperimentConfig, load_config, load_preset
from .detection import format_table
from .errors import ConfigError, EncDecError

EXIT_CODES = {
    "config_invalid": 2,
    "data_format": 3,
    "missing_input": 3,
    "artifact_mismatch": 4,
    "divergence": 5,
    "covariance_degenerate": 6,
    "degenerate_validation_set": 6,
    "no_variance": 6,
}


def _build_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = load_preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if not cfg.out:
        raise ConfigError("no output directory: pass --out or set `out` in the config")
    return cfg.validate()


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_prepare(cfg, args):
    _, manifest = P.prepare_stage(cfg, cfg.out)
    _print_json(manifest)


def cmd_train(cfg, args):
    P.write_config(cfg, cfg.out)
    models = P.train_stage(cfg, cfg.out, resume=args.resume)
    for c, (_, rep) in models.items():
        print(f"c={c}: epochs={rep.epochs_run} best_epoch={rep.best_epoch} best_vN1_loss={rep.best_val_loss:.6g} stop={rep.stop_reason}")


def cmd_fit_error_model(cfg, args):
    gms = P.fit_error_model_stage(cfg, cfg.out)
    for c, gm in gms.items():
        print(f"c={c}: n={gm.n_samples} mean={gm.mean.tolist()} ridge={gm.factor.regularization:.3g}")


def cmd_threshold(cfg, args):
    sel = P.threshold_stage(cfg, cfg.out)
    _print_json(sel.to_dict())


def cmd_score(cfg, args):
    s = P.score_stage(cfg, cfg.out)
    print(f"scored {s.scores.shape[0]} windows -> {cfg.out}/scores.csv")


def cmd_evaluate(cfg, args):
    ev = P.evaluate_stage(cfg, cfg.out)
    sys.stdout.write(format_table([ev.row]))


def cmd_run(cfg, args):
    ev = P.run_experiment(cfg, cfg.out, resume=args.resume)
    sys.stdout.write(format_table([ev.row]))
    if ev.window_auc is not None:
        print(f"window-mean score AUC: {ev.window_auc:.4f}")


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "fit-error-model": cmd_fit_error_model,
    "threshold": cmd_threshold,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encdec-ad", description="LSTM encoder-decoder anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--preset", choices=PRESETS)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="experiment directory")
        if name in ("train", "run"):
            p.add_argument("--resume", help="checkpoint file or checkpoints directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = _build_config(args)
        COMMANDS[args.command](cfg, args)
    except EncDecError as exc:
        return _fail(exc.category, getattr(exc, "stage", stage), exc)
    except FileNotFoundError as exc:
        return _fail("missing_input", getattr(exc, "stage", stage), exc)
    except (OSError, ValueError) as exc:
        return _fail("invalid_input", getattr(exc, "stage", stage), exc)
    return 0


def _fail(category: str, stage: str, exc: Exception) -> int:
    print(json.dumps({"error": category, "stage": stage, "message": str(exc)}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
