"""Command line entry point: ``skipnet <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import read_checkpoint
from .data import load_schema, load_sessions, load_track_catalog
from .errors import ConfigError, SkipNetError
from .estimators import BaselinePredictor, SkipPredictor
from .metrics import (
    BASELINE_MODES,
    SessionPrediction,
    evaluate,
    format_reports,
    load_predictions,
    majority_vote,
    write_predictions,
)
from .model import PROFILES
from .synth import SynthParams, synth_generate

logger = logging.getLogger("skipnet")

SEED_ENV = "SKIPNET_SEED"

# Keys accepted in --config files and their types.
CONFIG_KEYS = {
    "profile": str,
    "embedding_dim": int,
    "track_dim": int,
    "session_hidden": int,
    "hidden": int,
    "head_hidden": int,
    "paper_padding": lambda v: str(v).lower() in ("1", "true", "yes"),
    "batch_size": int,
    "learning_rate": float,
    "epochs": int,
    "max_steps": int,
    "max_seconds": float,
    "validation_fraction": float,
    "seed": int,
    "threshold": float,
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve_settings(args) -> dict:
    """Flags override the environment seed, which overrides the config file."""
    settings = read_config_file(args.config) if getattr(args, "config", None) else {}
    if os.environ.get(SEED_ENV):
        try:
            settings["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    settings.setdefault("seed", 0)
    return settings


def _emit_report(reports, json_path=None) -> None:
    print(format_reports(reports))
    payload = [r.to_json() for r in reports]
    if json_path:
        Path(json_path).write_text(json.dumps(payload if len(payload) > 1 else payload[0], indent=2) + "\n")


def cmd_synth(args) -> int:
    settings = resolve_settings(args)
    params = SynthParams(alpha=args.alpha, beta=args.beta, gamma=args.gamma)
    paths = synth_generate(args.out, args.sessions, args.tracks, settings["seed"], params, n_test=args.test_sessions)
    for role, path in paths.items():
        print(f"{role}: {path}")
    return 0


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    catalog = load_track_catalog(args.catalog)
    schema = load_schema(args.schema)
    sessions = load_sessions(args.sessions)
    est = SkipPredictor(**settings)
    est.fit(sessions, catalog=catalog, schema=schema)
    est.save(args.out)
    for log in est.history_:
        val = "" if log.validation is None else f"  val MAA {log.validation.mean_average_accuracy:.4f}"
        print(f"epoch {log.epoch:3d}  steps {log.steps:6d}  loss {log.mean_loss:.4f}{val}")
    best = est.train_result_.best_validation
    if best is not None:
        best.label = f"validation (epoch {est.train_result_.best_epoch})"
        _emit_report([best], args.json)
    print(f"checkpoint: {args.out}")
    return 0


def _load_model(args) -> SkipPredictor:
    ckpt = read_checkpoint(args.checkpoint)
    schema = load_schema(args.schema) if args.schema else None
    return SkipPredictor.from_checkpoint(ckpt, args.catalog, schema)


def cmd_predict(args) -> int:
    model = _load_model(args)
    sessions = load_sessions(args.sessions)
    write_predictions(args.out, model.predict_records(sessions))
    print(f"predictions: {args.out} ({len(sessions)} sessions)")
    return 0


def cmd_evaluate(args) -> int:
    sessions = load_sessions(args.sessions)
    reports = []
    if args.checkpoint:
        if not args.catalog:
            raise ConfigError("--checkpoint needs --catalog")
        reports.append(_load_model(args).evaluate(sessions, label=Path(args.checkpoint).name))
    for path in args.preds or ():
        rows = load_predictions(path)
        reports.append(evaluate({r.session_id: r.predictions for r in rows}, sessions, label=Path(path).name))
    if not reports:
        raise ConfigError("evaluate needs --checkpoint or --preds")
    _emit_report(reports, args.json)
    return 0


def cmd_baseline(args) -> int:
    sessions = load_sessions(args.sessions)
    train_sessions = load_sessions(args.train) if args.train else None
    if args.mode == "skip_rate" and train_sessions is None:
        raise ConfigError("--mode skip_rate needs --train")
    modes = BASELINE_MODES if args.mode == "all" else (args.mode,)
    reports = []
    for mode in modes:
        if mode == "skip_rate" and train_sessions is None:
            continue
        est = BaselinePredictor(mode).fit(train_sessions)
        reports.append(est.evaluate(sessions, label=mode))
        if args.out and len(modes) == 1:
            write_predictions(args.out, est.predict_records(sessions))
    _emit_report(reports, args.json)
    return 0


def cmd_ensemble(args) -> int:
    if len(args.preds) % 2 == 0:
        raise ConfigError(f"majority vote needs an odd number of prediction files, got {len(args.preds)}")
    sessions = load_sessions(args.sessions)
    members = [{r.session_id: r for r in load_predictions(p)} for p in args.preds]
    voted = {}
    rows = []
    for s in sessions:
        missing = [p for p, m in zip(args.preds, members) if s.session_id not in m]
        if missing:
            raise ConfigError(f"session {s.session_id!r} missing from {missing[0]}")
        votes = [m[s.session_id].predictions for m in members]
        pred = majority_vote(votes)
        voted[s.session_id] = pred
        share = [sum(v[i] for v in votes) / len(votes) for i in range(len(pred))]
        rows.append(SessionPrediction(s.session_id, pred.tolist(), share))
    reports = [evaluate({r.session_id: r.predictions for r in m.values()}, sessions, label=Path(p).name)
               for p, m in zip(args.preds, members)]
    reports.append(evaluate(voted, sessions, label=f"majority vote ({len(members)})"))
    if args.out:
        write_predictions(args.out, rows)
    _emit_report(reports, args.json)
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import model_grad_check

    settings = resolve_settings(args)
    report = model_grad_check(seed=settings["seed"], h=args.step, tol=args.tol, paper_padding=args.paper_padding)
    print(report)
    print("PASS" if report.passed else f"FAIL: {', '.join(report.failures)}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skipnet", description="Sequential skip prediction with stacked LSTMs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def seeded(p):
        p.add_argument("--seed", type=int, help=f"random seed (falls back to ${SEED_ENV}, then 0)")
        p.add_argument("--config", help="key=value settings file; flags take precedence")
        return p

    p = seeded(sub.add_parser("synth", help="generate a synthetic corpus"))
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--tracks", type=int, required=True)
    p.add_argument("--test-sessions", type=int, default=0)
    p.add_argument("--alpha", type=float, default=SynthParams.alpha)
    p.add_argument("--beta", type=float, default=SynthParams.beta)
    p.add_argument("--gamma", type=float, default=SynthParams.gamma)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = seeded(sub.add_parser("train", help="train a model and write a checkpoint"))
    p.add_argument("--sessions", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES))
    for name in ("embedding_dim", "track_dim", "session_hidden", "hidden", "head_hidden", "batch_size",
                 "epochs", "max_steps"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    for name in ("learning_rate", "max_seconds", "validation_fraction", "threshold"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--paper-padding", action="store_true", default=None)
    p.add_argument("--json", help="write the validation report as JSON")
    p.set_defaults(func=cmd_train)

    def model_args(p):
        p.add_argument("--checkpoint")
        p.add_argument("--catalog")
        p.add_argument("--schema", help="defaults to the schema stored in the checkpoint")

    p = sub.add_parser("predict", help="write second-half predictions")
    model_args(p)
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a checkpoint or prediction files")
    model_args(p)
    p.add_argument("--preds", nargs="+")
    p.add_argument("--sessions", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="score a rule baseline")
    p.add_argument("--mode", choices=BASELINE_MODES + ("all",), required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--train", help="training sessions (needed for skip_rate)")
    p.add_argument("--out", help="write predictions (single mode only)")
    p.add_argument("--json")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ensemble", help="majority-vote prediction files")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--out")
    p.add_argument("--json")
    p.set_defaults(func=cmd_ensemble)

    p = seeded(sub.add_parser("gradcheck", help="finite-difference check of the full model"))
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--paper-padding", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (SkipNetError, OSError) as exc:
        print(f"skipnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
