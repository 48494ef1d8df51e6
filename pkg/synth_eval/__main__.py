#!/usr/bin/env python3
"""
synth-eval - Evaluation harness for multi-modal MRI synthesis
Phantoms, corruptions, image metrics, loss diagnostics and embedding analysis
as deterministic batch runs with CSV/JSON reports.
Licensed under MPL-2.0
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from . import __app_name__, __version__
from .errors import ConfigError, SynthEvalError
from .log import setup_logging
from .process_manager import ProcessManager
from .settings import GlobalSettings, SettingsManager

logger = logging.getLogger("synth_eval")


def _param(text: str) -> tuple:
    """Parse a ``key=value`` corruption parameter override."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"value of {key} must be a number, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="global 64-bit seed")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--format", choices=["csv", "json", "both"], help="report format")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-format", choices=["text", "json"], help="log line format")
    common.add_argument("--threads", type=int, help="worker threads (0 = all cores)")
    common.add_argument("--plots", action="store_true", default=None, help="also write SVG plots")

    parser = argparse.ArgumentParser(prog=__app_name__, description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{__app_name__} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="write phantom volumes, masks and embeddings")
    p.add_argument("--subjects", type=int, help="number of phantom subjects")

    p = sub.add_parser("corrupt", parents=[common], help="corrupt every slice of a volume")
    p.add_argument("--input", help="input NIfTI volume")
    p.add_argument("--family", help="MotionArtifact, DownSampling, GaussianNoise or RicianNoise")
    p.add_argument("--severity", help="Minor, Moderate or Severe")
    p.add_argument("--param", type=_param, action="append", metavar="KEY=VALUE",
                   help="override a severity default (repeatable)")

    p = sub.add_parser("metrics", parents=[common], help="score synthesized against reference volumes")
    p.add_argument("--ref-dir", help="reference volumes <subject>_<modality>.nii[.gz]")
    p.add_argument("--syn-dir", help="synthesized volumes, same naming")
    p.add_argument("--compare-dir", help="second synthesized set for paired significance")
    p.add_argument("--manifest", help="explicit pairing manifest (JSON)")
    p.add_argument("--direction", help="group label, e.g. T1->T2")

    p = sub.add_parser("robustness", parents=[common], help="family x severity corruption grid")
    p.add_argument("--input-dir", help="clean volumes (default: the standard phantom)")
    p.add_argument("--prediction-dir", help="model outputs on corrupted inputs")
    p.add_argument("--sweep", action="store_true", default=None, help="also sweep each family's parameter")

    p = sub.add_parser("dice", parents=[common], help="per-slice Dice of mask stacks")
    p.add_argument("--pred", help="predicted mask stack")
    p.add_argument("--gt", help="ground-truth mask stack")

    p = sub.add_parser("losses", parents=[common], help="loss values and gradient checks")
    p.add_argument("--embeddings", help="embedding JSON (default: phantom embeddings)")
    p.add_argument("--instances", type=int, help="random instances per gradient check")

    p = sub.add_parser("embed-analyze", parents=[common], help="PCA, similarity and modality classification")
    p.add_argument("--embeddings", help="embedding JSON (default: phantom embeddings)")
    p.add_argument("--prototypes", help="prototype embedding JSON, one item per modality")
    p.add_argument("--k", type=int, help="PCA components")
    return parser


# argparse dest -> (config section, field), per subcommand where they differ
FLAG_FIELDS = {
    "seed": ("global", "seed"),
    "out_dir": ("global", "out_dir"),
    "format": ("global", "output_format"),
    "log_level": ("global", "log_level"),
    "log_format": ("global", "log_format"),
    "threads": ("global", "threads"),
    "plots": ("global", "plots"),
    "subjects": ("phantom", "subjects"),
    "input": ("corruption", "input"),
    "family": ("corruption", "family"),
    "severity": ("corruption", "severity"),
    "ref_dir": ("metrics", "ref_dir"),
    "syn_dir": ("metrics", "syn_dir"),
    "compare_dir": ("metrics", "compare_dir"),
    "manifest": ("metrics", "manifest"),
    "direction": ("metrics", "direction"),
    "input_dir": ("corruption", "input_dir"),
    "prediction_dir": ("corruption", "prediction_dir"),
    "sweep": ("corruption", "sweep"),
    "pred": ("dice", "pred"),
    "gt": ("dice", "gt"),
    "instances": ("losses", "instances"),
    "prototypes": ("embed", "prototypes"),
    "k": ("embed", "k"),
}


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Settings overrides for every flag given on the command line."""
    overrides: Dict[str, Dict[str, Any]] = {}
    for dest, value in vars(args).items():
        if value is None or dest not in FLAG_FIELDS:
            continue
        section, name = FLAG_FIELDS[dest]
        overrides.setdefault(section, {})[name] = value
    embeddings = getattr(args, "embeddings", None)
    if embeddings is not None:
        section = "losses" if args.command == "losses" else "embed"
        overrides.setdefault(section, {})["embeddings"] = embeddings
    if getattr(args, "param", None):
        overrides.setdefault("corruption", {})["params"] = dict(args.param)
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for synth-eval."""
    args = build_parser().parse_args(argv)

    # Log with environment defaults until the config is known
    bootstrap = GlobalSettings()
    try:
        bootstrap.load_from_env()
    except ConfigError:
        pass
    setup_logging(args.log_level or bootstrap.log_level, args.log_format or bootstrap.log_format)

    try:
        settings = SettingsManager(args.config, overrides_from_args(args))
    except SynthEvalError as e:
        logger.error("%s", e)
        return e.exit_code

    g = settings.global_settings
    out_dir = settings.get_out_dir()
    setup_logging(g.log_level, g.log_format, out_dir / "run.log")

    from .runs import RUNS
    run = RUNS[args.command](settings, ProcessManager(g.effective_threads()))
    logger.info("%s %s: %s (seed %d, %d threads)", __app_name__, __version__, args.command,
                g.seed, g.effective_threads())
    try:
        result = run.run()
        written = result.write(out_dir, g.output_format)
    except SynthEvalError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure in %s", args.command)
        return 2

    print(f"{result.summary_line()} -> {', '.join(str(p) for p in written)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
