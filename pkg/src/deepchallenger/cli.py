"""Command line interface: one subcommand per pipeline stage.

Exit codes: 0 on success, 1 for configuration or input problems, 2 for
runtime failures (encoding errors, numeric breakdowns, failed folds).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Any, Sequence

from . import __version__, pipeline
from .errors import ConfigError, DeepChallengerError
from .participation import BASELINE_KINDS

_STAGE_HELP = {
    "ingest": "validate an external manifest and copy it into the run directory",
    "synth": "generate the planted synthetic corpus",
    "encode": "encode every video into the two raw embedding stores",
    "train-proxy": "train both proxy heads and extract learned embeddings",
    "build-reprs": "build fixed-arity challenge and user representations",
    "train-participation": "train the participation head and the baselines",
    "evaluate": "cross-validate the proxy tasks and the participation models",
    "report": "render the evaluation tables into report files",
}


def _parse_baselines(value: str | None) -> tuple[str, ...]:
    if value is None or value == "all":
        return BASELINE_KINDS
    if value == "none":
        return ()
    kinds = tuple(part.strip() for part in value.split(",") if part.strip())
    unknown = sorted(set(kinds) - set(BASELINE_KINDS))
    if unknown:
        raise ConfigError(
            f"unknown baseline(s): {', '.join(unknown)};"
            f" choose from {', '.join(BASELINE_KINDS)}, all, none"
        )
    return kinds


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from overwriting a flag that was already
    # given before the subcommand; unset flags fall back in _resolve below.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH",
                        help="JSON run configuration (defaults apply if omitted)")
    common.add_argument("--seed", type=int, metavar="N",
                        help="master seed, overrides the configured one")
    common.add_argument("--out-dir", metavar="DIR",
                        help="run directory for all artifacts (default: run)")
    common.add_argument("--backend", choices=("toy", "pretrained"),
                        help="encoder profile, overrides the configured encoders")
    common.add_argument("--baselines", metavar="KINDS",
                        help="comma-separated baseline kinds, or all / none"
                             " (default: all)")

    parser = argparse.ArgumentParser(
        prog="deepchallenger",
        description="Predict user participation in video challenges.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _STAGE_HELP.items():
        sub = subparsers.add_parser(name, help=help_text, parents=[common])
        if name == "ingest":
            sub.add_argument("--manifest", required=True, metavar="PATH",
                             help="line-delimited JSON manifest to ingest")
    return parser


def _resolve_config(args: argparse.Namespace) -> pipeline.RunConfig:
    config = pipeline.load_run_config(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    backend = getattr(args, "backend", None)
    if backend is not None:
        config = pipeline.backend_profile(config, backend)
    config.validate()
    return config


def _summarize(command: str, result: dict[str, Any]) -> list[str]:
    if command in ("synth", "ingest"):
        return [
            f"corpus: {result['videos']} videos ({result['tagged']} challenge-tagged),"
            f" {result['users']} users, {result['challenges']} challenges",
        ]
    if command == "encode":
        return [
            f"{name}: {r['encoded']} encoded, {r['skipped']} already present"
            for name, r in sorted(result.items())
        ]
    if command == "train-proxy":
        return [
            f"proxy-{task}: {r['classes']} classes, holdout macro-F1"
            f" {r['holdout_macro_f1']:.3f} (best epoch {r['best_epoch']},"
            f" {r['learned_videos']} learned embeddings)"
            for task, r in sorted(result.items())
        ]
    if command == "build-reprs":
        return [
            f"representations: {result['challenges']} challenges,"
            f" {result['users']} users, audit clean",
            f"padding blocks: {result['challenge_padding']} challenge,"
            f" {result['user_padding']} user",
        ]
    if command == "train-participation":
        lines = [
            f"participation: trained on {result['train_pairs']} pairs,"
            f" holdout macro-F1 {result['holdout_macro_f1']:.3f}"
            f" over {result['test_pairs']} pairs",
        ]
        for kind in result["baselines"]:
            lines.append(
                f"baseline {kind}: holdout macro-F1"
                f" {result[f'baseline_{kind}_macro_f1']:.3f}"
            )
        return lines
    if command == "evaluate":
        return [
            f"evaluated {len(result['proxy_variants'])} proxy variants and"
            f" {1 + len(result['baselines'])} participation models"
            f" with {result['folds']}-fold cross-validation",
        ]
    if command == "report":
        return [f"report written ({result['rows']} participation rows,"
                f" {result['folds']}-fold)"]
    return []


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        baselines = _parse_baselines(getattr(args, "baselines", None))
        out_dir = getattr(args, "out_dir", "run")
        if args.command == "synth":
            result = pipeline.stage_synth(out_dir, config)
        elif args.command == "ingest":
            result = pipeline.stage_ingest(out_dir, config, args.manifest)
        elif args.command == "encode":
            result = pipeline.stage_encode(out_dir, config)
        elif args.command == "train-proxy":
            result = pipeline.stage_train_proxy(out_dir, config)
        elif args.command == "build-reprs":
            result = pipeline.stage_build_reprs(out_dir, config)
        elif args.command == "train-participation":
            result = pipeline.stage_train_participation(out_dir, config, baselines)
        elif args.command == "evaluate":
            result = pipeline.stage_evaluate(out_dir, config, baselines)
        else:
            result = pipeline.stage_report(out_dir, config)
    except DeepChallengerError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    for line in _summarize(args.command, result):
        print(line)
    print(f"{args.command}: done -> {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
