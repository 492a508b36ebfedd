import argparse
import sys
import tomllib
from pathlib import Path
from typing import Any, get_args

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError

from urnlab.check_executor import CheckExecutor
from urnlab.checks import CHECKS
from urnlab.errors import ConfigError
from urnlab.logging_setup import configure_logging
from urnlab.models import ExperimentConfig, Subcommand
from urnlab.settings import get_settings


load_dotenv(override=True)

# CLI flag -> ExperimentConfig field
FLAG_FIELDS = {
    "kernel": "kernel_file",
    "u0": "u0",
    "steps": "steps",
    "horizon": "horizon",
    "replicas": "replicas",
    "seed": "master_seed",
    "out": "output_dir",
    "tol": "tol",
    "workers": "workers",
    "target_color": "target_color",
    "l1_threshold": "l1_threshold",
    "median_threshold": "median_threshold",
    "limit_tolerance": "limit_tolerance",
    "check_states": "check_states",
    "check_colors": "check_colors",
    "n_max": "n_max",
    "fit_horizon": "fit_horizon",
    "doeblin_n0": "doeblin_n0",
    "r": "r_values",
    "t": "t_values",
    "mc_points": "mc_points",
    "checkpoints": "checkpoints",
    "trees": "trees",
    "tree_size": "tree_size",
    "pairs_per_tree": "pairs_per_tree",
    "samples": "samples",
    "coupling_steps": "coupling_steps",
}


def parse_toml(scenario_path: str) -> dict[str, Any]:
    """Read ``[experiment]`` and ``[config]`` tables; kernel paths resolve against the scenario directory."""
    path = Path(scenario_path)
    if not path.exists():
        raise ConfigError({"scenario": f"file not found: {path}"})
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError({"scenario": f"invalid TOML: {e}"}) from None

    raw = {**data.get("experiment", {}), **data.get("config", {})}
    kernel_file = raw.get("kernel_file")
    if kernel_file and not Path(kernel_file).is_absolute():
        raw["kernel_file"] = str(path.parent / kernel_file)
    if "generator_params" in raw:
        raw["generator_params"] = {k: str(v) for k, v in raw["generator_params"].items()}
    return raw


def parse_generator(tokens: list[str]) -> dict[str, Any]:
    name, *pairs = tokens
    params = {}
    for token in pairs:
        key, sep, value = token.partition("=")
        if not sep:
            raise ConfigError({"generator": f"expected key=value, got {token!r}"})
        params[key] = value
    return {"generator": name, "generator_params": params}


def config_from_args(args: argparse.Namespace) -> dict[str, Any]:
    raw: dict[str, Any] = {}
    if getattr(args, "subcommand", None) != "scenario":
        raw["subcommand"] = args.subcommand
    for flag, field in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[field] = value
    if getattr(args, "generator", None):
        raw.update(parse_generator(args.generator))
    return raw


def build_config(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        errors = {".".join(str(x) for x in err["loc"]) or "config": err["msg"] for err in e.errors()}
        raise ConfigError(errors) from None


def run_experiment(config: ExperimentConfig) -> int:
    """Run one configured check; the exit status is 0 iff every check passed."""
    configure_logging(get_settings().log_level, config.output_dir)
    executor = CheckExecutor(CHECKS[config.subcommand]())
    report, status = executor.execute(config)
    logger.info(f"Report written to {config.output_dir / 'report.json'}")
    return status


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--kernel", type=Path, help="Kernel file")
    source.add_argument("--generator", nargs="+", metavar="NAME [KEY=VAL ...]", help="Built-in kernel generator")
    parser.add_argument("--u0", help='Initial measure, e.g. "0:1,1:1/2"')
    parser.add_argument("--steps", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--tol", type=float, help="Stationary residual tolerance")
    parser.add_argument("--workers", type=int, help="Worker processes for replicas")
    parser.add_argument("--target-color", type=int)
    parser.add_argument("--l1-threshold", type=float)
    parser.add_argument("--median-threshold", type=float)
    parser.add_argument("--limit-tolerance", type=float)
    parser.add_argument("--check-states", type=int, nargs="+")
    parser.add_argument("--check-colors", type=int, nargs="+")
    parser.add_argument("--n-max", type=int)
    parser.add_argument("--fit-horizon", type=int)
    parser.add_argument("--doeblin-n0", type=int)
    parser.add_argument("--r", type=float, nargs="+")
    parser.add_argument("--t", type=float, nargs="+")
    parser.add_argument("--mc-points", type=int, nargs="+")
    parser.add_argument("--checkpoints", type=int, nargs="+")
    parser.add_argument("--trees", type=int)
    parser.add_argument("--tree-size", type=int)
    parser.add_argument("--pairs-per-tree", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--coupling-steps", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run a balanced-urn experiment")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in get_args(Subcommand):
        _add_common_flags(sub.add_parser(name, help=f"Run the {name} check"))
    scenario = sub.add_parser("scenario", help="Run a scenario TOML file")
    scenario.add_argument("scenario", help="Path to scenario TOML file")
    _add_common_flags(scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(get_settings().log_level)
    try:
        raw = parse_toml(args.scenario) if args.subcommand == "scenario" else {}
        overrides = config_from_args(args)
        if "kernel_file" in overrides or "generator" in overrides:
            raw.pop("kernel_file", None)
            raw.pop("generator", None)
            raw.pop("generator_params", None)
        raw.update(overrides)
        return run_experiment(build_config(raw))
    except ConfigError as e:
        logger.error(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
