import argparse
import hashlib
import logging
import sys
from pathlib import Path
from typing import List, Optional

from datagen.dataset import export_csv, write_dataset
from learning.models import load_model, save_model
from tasks.base import export_support_csv
from trainer.experiment import METHODS, SWEEPS, ExperimentRunner, default_output, run_ablation
from utils.config import Config, ExperimentConfig
from utils.errors import ConfigError, TsslError
from utils.presets import PRESETS
from utils.reports import (
    ABLATION_COLUMNS,
    EVAL_COLUMNS,
    load_ablation,
    summarize_ablation,
    write_rows,
    write_summary,
    write_training_log,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def configure_logging(level: str = "INFO"):
    """Configure logging once for the whole process"""
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="Experiment configuration file")
    shared.add_argument("--preset", choices=sorted(PRESETS), help="Preset supplying the defaults")
    shared.add_argument("--seed", type=int, help="Run a single seed instead of the configured list")
    shared.add_argument("--out", help="Output directory")
    shared.add_argument("--threads", type=int, help="Worker threads (capped by TSSL_THREADS)")
    shared.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override a configuration value; may be repeated")
    shared.add_argument("--print-config", action="store_true", help="Print the merged configuration and exit")

    parser = argparse.ArgumentParser(prog="tssl", description="Task-specific surrogate training")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", parents=[shared], help="Sample and label a training dataset")
    gen.add_argument("--csv", action="store_true", help="Also write a CSV export")

    train = commands.add_parser("train", parents=[shared], help="Train a surrogate model")
    train.add_argument("--method", choices=METHODS, default="ts")

    evaluate = commands.add_parser("eval", parents=[shared], help="Evaluate a model file against the ground truth")
    evaluate.add_argument("--model", required=True, help="TSSM model file")

    ablate = commands.add_parser("ablate", parents=[shared], help="Run an ablation sweep")
    ablate.add_argument("--sweep", choices=SWEEPS, required=True)

    report = commands.add_parser("report", parents=[shared], help="Summarize ablation tables")
    report.add_argument("--input", nargs="+", required=True, help="Ablation CSV files")

    return parser


def load_config(args) -> ExperimentConfig:
    """Preset, configuration file and overrides, in that order"""
    if args.config:
        config = ExperimentConfig.from_file(args.config, preset=args.preset)
    elif args.preset:
        config = ExperimentConfig.from_preset(args.preset)
    else:
        raise ConfigError("Either --config or --preset is required")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"experiment.seeds={args.seed}")
    return config.with_overrides(overrides) if overrides else config


def thread_count(args, env: Config) -> int:
    requested = args.threads if args.threads is not None else env.threads
    if requested < 1:
        raise ConfigError("--threads must be positive")
    return min(requested, env.threads)


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_gen_data(config: ExperimentConfig, args) -> int:
    out = default_output(config, args.out)
    for seed in config.seeds:
        runner = ExperimentRunner(config, seed)
        dataset = runner.build_data()
        path = write_dataset(dataset, out / f"data_seed{seed}.tssd")
        if args.csv:
            export_csv(dataset, out / f"data_seed{seed}.csv")
        print(f"{path} {file_digest(path)}")
    return EXIT_OK


def cmd_train(config: ExperimentConfig, args) -> int:
    out = default_output(config, args.out)
    for seed in config.seeds:
        runner = ExperimentRunner(config, seed)
        result = runner.train(args.method)
        stem = f"{args.method}_seed{seed}"
        save_model(result.model, out / f"{stem}.tssm")
        write_training_log(result.records, out / f"{stem}_log.csv")

        evaluation = runner.evaluate(result.model)
        row = {"experiment": config.experiment, "method": args.method, "seed": seed, **evaluation.as_row()}
        write_rows(out / f"{stem}_eval.csv", EVAL_COLUMNS, [row])
        export_support_csv(evaluation.support, out / f"{stem}_support.csv")
        logger.info(f"Seed {seed}: J_A={evaluation.J_A:.6e} R_S={evaluation.R_S:.6e}")
    return EXIT_OK


def cmd_eval(config: ExperimentConfig, args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise FileNotFoundError(f"Model file not found: {model_path}")
    model = load_model(model_path)
    out = default_output(config, args.out)
    rows = []
    for seed in config.seeds:
        runner = ExperimentRunner(config, seed)
        evaluation = runner.evaluate(model)
        rows.append({"experiment": config.experiment, "method": model_path.stem, "seed": seed, **evaluation.as_row()})
        export_support_csv(evaluation.support, out / f"{model_path.stem}_seed{seed}_support.csv")
    path = write_rows(out / f"{model_path.stem}_eval.csv", EVAL_COLUMNS, rows)
    print(path)
    return EXIT_OK


def cmd_ablate(config: ExperimentConfig, args) -> int:
    out = default_output(config, args.out)
    rows = run_ablation(config, args.sweep, thread_count(args, Config()))
    table = write_rows(out / f"ablation_{args.sweep}.csv", ABLATION_COLUMNS, rows)
    summary = write_summary(summarize_ablation(rows), out / f"ablation_{args.sweep}_summary.csv")
    failed = sum(1 for row in rows if row.get("status") == "error")
    if failed:
        logger.error(f"{failed} ablation rows failed; see the status column of {table}")
    print(table)
    print(summary)
    return EXIT_OK


def cmd_report(config: Optional[ExperimentConfig], args) -> int:
    rows = [row for path in args.input for row in load_ablation(path)]
    out = Path(args.out) if args.out else Path(args.input[0]).parent
    path = write_summary(summarize_ablation(rows), out / "summary.csv")
    print(path)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)

    env = Config()
    try:
        env.validate()
    except ConfigError as e:
        configure_logging()
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    configure_logging(env.log_level)

    try:
        if args.command == "report" and not (args.config or args.preset):
            return cmd_report(None, args)
        config = load_config(args)
        if args.print_config:
            print(config.to_text(), end="")
            return EXIT_OK
        config.validate()
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (TsslError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
