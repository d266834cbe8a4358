"""
Command-line entry point for the stochastic motion prediction pipeline.

    python run_pipeline.py generate --patterns 4 --per-pattern 50 --seed 1 -o data/motion.stcm
    python run_pipeline.py train --stage 1 --epochs 200 --solver dopri5
    python run_pipeline.py sample --index 0 --samples 5
    python run_pipeline.py eval --protocol stochastic
    python run_pipeline.py export-plots

Exit codes: 0 success, 2 bad input, 3 missing artefact, 4 numerical failure.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from src import pipeline
from src.config import ExperimentConfig, load_config, setup_logging
from src.errors import DivergenceError, MissingArtifactError, NonFiniteError, StepBudgetError
from src.models.ode import METHODS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Config file (YAML or key=value lines)")
    common.add_argument("--seed", type=int, default=None, help="Root seed")
    common.add_argument("--out", type=str, default=None, help="Run output directory")
    common.add_argument("--data", type=str, default=None, help="Training dataset file")
    common.add_argument("--test-data", type=str, default=None, help="Test dataset file")
    common.add_argument("--solver", choices=METHODS, default=None, help="ODE solver")
    common.add_argument("--step", type=float, default=None, help="Fixed step size")
    common.add_argument("--rtol", type=float, default=None, help="Adaptive relative tolerance")
    common.add_argument("--atol", type=float, default=None, help="Adaptive absolute tolerance")
    common.add_argument("--anchors", type=int, default=None, help="Number of anchors N")
    common.add_argument("--jobs", type=int, default=None, help="Parallel workers")

    parser = argparse.ArgumentParser(description="Two-stage stochastic motion prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="Generate a synthetic dataset")
    gen.add_argument("--patterns", type=int, default=None, help="Planted pattern count")
    gen.add_argument("--per-pattern", type=int, default=None, help="Training samples per pattern")
    gen.add_argument("--test-per-pattern", type=int, default=None, help="Also write <stem>_test with this many per pattern")
    gen.add_argument("--jitter", type=float, default=None, help="Intra-class jitter scale")
    gen.add_argument("-o", "--output", type=str, default=None, help="Dataset file to write")

    train = sub.add_parser("train", parents=[common], help="Train stage 1 and/or stage 2")
    train.add_argument("--stage", type=int, choices=(1, 2), default=None, help="Run a single stage")
    train.add_argument("--epochs", type=int, default=None, help="Epochs per stage")
    train.add_argument("--lr", type=float, default=None, help="Initial learning rate")
    train.add_argument("--batch-size", type=int, default=None, help="Batch size")

    sample = sub.add_parser("sample", parents=[common], help="Sample N x M futures for one input")
    sample.add_argument("--index", type=int, default=0, help="Test input index")
    sample.add_argument("--samples", type=int, default=None, help="Samples per anchor M")
    sample.add_argument("--temperature", type=float, default=None, help="Standard deviation scale (0 = means)")

    evaluate = sub.add_parser("eval", parents=[common], help="Compute APD/ADE/FDE/MMADE/MMFDE")
    evaluate.add_argument("--protocol", choices=("stochastic", "deterministic", "ground_truth"), default=None)
    evaluate.add_argument("--samples", type=int, default=None, help="Samples per ranked component")
    evaluate.add_argument("--temperature", type=float, default=None, help="Standard deviation scale")
    evaluate.add_argument("--label", type=str, default=None, help="Row key in the results table")

    export = sub.add_parser("export-plots", parents=[common], help="Export plot data as CSV")
    export.add_argument("--run-dir", type=str, default=None, help="Run directory (defaults to --out)")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config keys for every flag the user set."""
    mapping = {
        "seed": "misc.seed",
        "out": "output.dir",
        "data": "data.path",
        "test_data": "data.test_path",
        "solver": "ode.method",
        "step": "ode.step_size",
        "rtol": "ode.rtol",
        "atol": "ode.atol",
        "anchors": "anchors.count",
        "jobs": "misc.n_jobs",
        "patterns": "data.pattern_count",
        "per_pattern": "data.samples_per_pattern",
        "test_per_pattern": "data.test_per_pattern",
        "jitter": "data.jitter_scale",
        "output": "data.path",
        "epochs": "train.epochs",
        "lr": "train.lr",
        "batch_size": "train.batch_size",
        "protocol": "eval.protocol",
    }
    overrides = {key: getattr(args, attr) for attr, key in mapping.items() if hasattr(args, attr)}
    if args.command == "eval":
        overrides["eval.samples_per_component"] = args.samples
        overrides["eval.temperature"] = args.temperature
    elif args.command == "sample":
        overrides["gmm.samples_per_anchor"] = args.samples
        overrides["gmm.temperature"] = args.temperature
    if overrides.get("misc.n_jobs") is not None:
        overrides["eval.n_jobs"] = overrides["misc.n_jobs"]
    return overrides


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config, overrides_from_args(args))
        log_cfg = raw.get("logging") or {}
        setup_logging(log_cfg.get("level", "INFO"), log_cfg.get("format"), log_cfg.get("file"))
        config = ExperimentConfig.from_dict(raw)

        if args.command == "generate":
            pipeline.cmd_generate(config)
        elif args.command == "train":
            pipeline.cmd_train(config, stage=args.stage)
        elif args.command == "sample":
            pipeline.cmd_sample(config, index=args.index)
        elif args.command == "eval":
            pipeline.cmd_eval(config, label=args.label)
        else:
            pipeline.cmd_export_plots(config, run_dir=args.run_dir)
    except MissingArtifactError as e:
        logger.error(f"Missing artefact: {e}")
        return EXIT_MISSING
    except (NonFiniteError, StepBudgetError, DivergenceError) as e:
        logger.error(f"Numerical failure: {e}", exc_info=True)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as e:
        logger.error(f"Bad input: {e}")
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
