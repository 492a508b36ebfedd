from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Iterable, Sequence

from loguru import logger

from urnlab.errors import ConfigError
from urnlab.models import CheckResult, ExperimentConfig, RunReport, StatusUpdate
from urnlab.reporting import check_line, write_csv, write_json


class RunContext:
    """Collects status updates, check outcomes and artifacts for one run."""

    def __init__(self, output_dir: Path, report: RunReport):
        self.output_dir = output_dir
        self.report = report

    def update_status(self, state: str, message: str) -> None:
        self.report.status.append(StatusUpdate(state=state, message=message))  # type: ignore[arg-type]
        logger.info(f"[{state}] {message.splitlines()[0] if message else ''}")

    def record(self, name: str, passed: bool, **detail: Any) -> None:
        self.report.checks.append(CheckResult(name=name, passed=bool(passed), detail=detail))
        logger.info(check_line(name, passed).strip())

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def add_artifact(self, path: Path) -> Path:
        self.report.artifacts.append(path.relative_to(self.output_dir).as_posix())
        return path

    @property
    def meta(self) -> dict[str, Any]:
        """Seed and config hash stamped into every artifact of the run."""
        return {"master_seed": self.report.master_seed, "config_hash": self.report.config_hash}

    def write_json(self, name: str, data: Any) -> Path:
        return self.add_artifact(write_json(self.path(name), data, self.meta))

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self.add_artifact(write_csv(self.path(name), header, rows, self.meta))


class Check(ABC):
    name: str

    @abstractmethod
    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        pass

    @abstractmethod
    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        pass


def format_summary(config: ExperimentConfig, report: RunReport) -> str:
    passed = sum(c.passed for c in report.checks)
    lines = "\n".join(check_line(c.name, c.passed) for c in report.checks)
    return f"""urnlab results
Subcommand: {config.subcommand}
Seed: {config.master_seed}
Status: {report.status[-1].state}
Checks: {passed}/{len(report.checks)} passed

Check Results:
{lines}"""


class CheckExecutor:

    def __init__(self, check: Check):
        self.check = check

    def execute(self, config: ExperimentConfig) -> tuple[RunReport, int]:
        """Validate, run and report; returns the report and the process exit status."""
        ok, msg = self.check.validate_config(config)
        if not ok:
            raise ConfigError({config.subcommand: msg})

        report = RunReport(
            config=config.model_dump(mode="json"),
            config_hash=config.config_hash(),
            master_seed=config.master_seed,
        )
        ctx = RunContext(config.output_dir, report)
        ctx.update_status("submitted", f"Config {report.config_hash} accepted.")
        ctx.update_status("working", f"Starting {self.check.name}.\n{config.model_dump_json()}")

        try:
            self.check.run(config, ctx)
            ctx.update_status("completed", f"{self.check.name} finished.")
        except Exception as e:
            logger.exception(f"Check error: {e}")
            ctx.update_status("failed", f"Check error: {type(e).__name__}: {e}")

        report.summary = format_summary(config, report)
        logger.info(f"\n{report.summary}")
        write_json(config.output_dir / "report.json", report.model_dump(mode="json"))
        return report, 0 if report.passed else 1
