import hashlib
import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from urnlab.kernel import Kernel, generator_from_strings, read_kernel_file
from urnlab.measure import SparseMeasure, parse_measure

Subcommand = Literal[
    "urn-run",
    "coupling-check",
    "lemma31-check",
    "lemma32-check",
    "variance-check",
    "starwalk-run",
    "ergodicity-fit",
]

KERNEL_FREE = {"lemma32-check"}


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    kernel_file: Path | None = None
    generator: str | None = None
    generator_params: dict[str, str] = Field(default_factory=dict)
    u0: str = "0:1"
    steps: int = Field(default=10_000, ge=0)
    horizon: int = Field(default=3, ge=0)
    replicas: int = Field(default=1, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: Path = Path("out")
    tol: float = Field(default=1e-10, gt=0)
    workers: int = Field(default=1, ge=1)

    target_color: int = Field(default=0, ge=0)
    l1_threshold: float = Field(default=0.02, gt=0)
    median_threshold: float = Field(default=0.01, gt=0)
    check_states: list[int] | None = None
    check_colors: list[int] | None = None
    n_max: int = Field(default=1000, ge=4)
    fit_horizon: int = Field(default=30, ge=4)
    limit_tolerance: float = Field(default=0.02, gt=0)
    doeblin_n0: int = Field(default=1, ge=1)
    r_values: list[float] = Field(default_factory=lambda: [0.5])
    t_values: list[float] = Field(default_factory=lambda: [1.0])
    mc_points: list[int] = Field(default_factory=lambda: [1, 5, 20])
    checkpoints: list[int] = Field(default_factory=lambda: [100, 1000, 10_000])
    trees: int = Field(default=10, ge=1)
    tree_size: int = Field(default=20, ge=1)
    pairs_per_tree: int = Field(default=3, ge=1)
    samples: int = Field(default=100_000, ge=1)
    coupling_steps: int = Field(default=10_000, ge=0)

    @model_validator(mode="after")
    def _check_kernel_source(self) -> "ExperimentConfig":
        if self.kernel_file is not None and self.generator is not None:
            raise ValueError("Give either kernel_file or generator, not both")
        if self.subcommand not in KERNEL_FREE and self.kernel_file is None and self.generator is None:
            raise ValueError(f"{self.subcommand} needs a kernel_file or a generator")
        for r in self.r_values:
            if not 0 < r < 1:
                raise ValueError(f"r values must lie in (0, 1), got {r}")
        for t in self.t_values:
            if t <= 0:
                raise ValueError(f"t values must be positive, got {t}")
        return self

    def build_kernel(self) -> Kernel:
        if self.kernel_file is not None:
            return read_kernel_file(self.kernel_file)
        assert self.generator is not None
        return generator_from_strings(self.generator, self.generator_params)

    def initial_measure(self) -> SparseMeasure:
        return parse_measure(self.u0)

    def config_hash(self) -> str:
        body = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(body.encode()).hexdigest()[:16]


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: dict[str, Any] = Field(default_factory=dict)


class StatusUpdate(BaseModel):
    state: Literal["submitted", "working", "completed", "failed"]
    message: str


class RunReport(BaseModel):
    config: dict[str, Any]
    config_hash: str
    master_seed: int
    status: list[StatusUpdate] = Field(default_factory=list)
    checks: list[CheckResult] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)
    summary: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks) and self.status[-1].state == "completed"
