"""Scenario files: schema, loading and validation diagnostics."""

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from analysis.metrics import DEFAULT_TRIM
from analysis.slo import LOOSE_FACTOR, TIGHT_FACTOR, SloConfig, derive_slo, slo_preset
from control.controller import ControllerConfig
from core.utils import dump_config, load_config
from serving.engines.base import EngineConfig, KvSizing
from serving.resource import CostParams, ParallelismConfig
from workload.presets import PRESETS, preset_params
from workload.trace import (
    DEFAULT_MAX_TOKENS,
    LengthDist,
    MixtureComponent,
    Request,
    TraceParams,
    generate_trace,
    load_trace,
)


class ScenarioError(Exception):
    """Raised for an unreadable or invalid scenario; one line per problem."""

    def __init__(self, problems: list[str], source: str | Path | None = None):
        self.problems = problems
        self.source = str(source) if source is not None else None
        prefix = f"{self.source}: " if self.source else ""
        super().__init__(prefix + "invalid scenario\n" + "\n".join(f"  {p}" for p in problems))


class WorkloadConfig(BaseModel):
    """Exactly one source: a preset, explicit distributions, or a trace file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: str | None = None
    trace_file: str | None = None
    input_dist: LengthDist | None = None
    output_dist: LengthDist | None = None
    mixture: list[MixtureComponent] = Field(default_factory=list)
    rate: float | None = Field(default=None, gt=0, description="requests per second (per GPU by default)")
    count: int = Field(default=1000, gt=0)
    rate_per_gpu: bool = True
    max_tokens: int = Field(default=DEFAULT_MAX_TOKENS, ge=1)

    @model_validator(mode="after")
    def _check_source(self) -> "WorkloadConfig":
        explicit = self.input_dist is not None or self.output_dist is not None
        sources = [self.preset is not None, self.trace_file is not None, explicit]
        if sum(sources) != 1:
            raise ValueError("exactly one of preset, trace_file or input_dist/output_dist is required")
        if explicit and (self.input_dist is None or self.output_dist is None):
            raise ValueError("input_dist and output_dist must be given together")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose one of: {', '.join(PRESETS)}")
        return self

    def trace_params(self, rate: float, seed: int) -> TraceParams:
        """Generation parameters at a total arrival rate ``rate``."""
        if self.preset is not None:
            overrides: dict[str, Any] = {"max_tokens": self.max_tokens}
            if self.mixture:
                overrides["mixture"] = self.mixture
            return preset_params(self.preset, rate, self.count, seed, **overrides)
        return TraceParams(
            rate=rate,
            count=self.count,
            input_dist=self.input_dist,
            output_dist=self.output_dist,
            mixture=self.mixture,
            seed=seed,
            max_tokens=self.max_tokens,
        )


class SloSection(BaseModel):
    """Explicit bounds, a shipped preset, or bounds derived from unloaded latency."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: str | None = None
    derive: Literal["tight", "loose"] | None = None
    derive_input_len: int = Field(default=251, ge=1)
    derive_output_len: int = Field(default=200, ge=1)
    ttft_slo: float | None = Field(default=None, gt=0)
    tpot_slo: float | None = Field(default=None, gt=0)
    percentile: float = Field(default=0.9, gt=0, le=1)

    @model_validator(mode="after")
    def _check_source(self) -> "SloSection":
        explicit = self.ttft_slo is not None or self.tpot_slo is not None
        if sum([self.preset is not None, self.derive is not None, explicit]) != 1:
            raise ValueError("give exactly one of preset, derive or ttft_slo/tpot_slo")
        if explicit and (self.ttft_slo is None or self.tpot_slo is None):
            raise ValueError("ttft_slo and tpot_slo must be given together")
        if self.preset is not None:
            slo_preset(self.preset)
        return self

    def resolve(self, cost: CostParams, par: ParallelismConfig) -> SloConfig:
        if self.preset is not None:
            return slo_preset(self.preset, self.percentile)
        if self.derive is not None:
            factor = TIGHT_FACTOR if self.derive == "tight" else LOOSE_FACTOR
            return derive_slo(cost, par, self.derive_input_len, self.derive_output_len, factor, self.percentile)
        assert self.ttft_slo is not None and self.tpot_slo is not None
        return SloConfig(ttft_slo=self.ttft_slo, tpot_slo=self.tpot_slo, percentile=self.percentile)


class MetricsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    trim: float = Field(default=DEFAULT_TRIM, ge=0, lt=0.5)


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rates: list[float] = Field(default_factory=list)
    threshold: float | None = Field(default=None, gt=0, le=1)

    @model_validator(mode="after")
    def _check_rates(self) -> "SweepConfig":
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        return self


class ScenarioConfig(BaseModel):
    """A complete, reproducible experiment description."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    workload: WorkloadConfig
    engine: EngineConfig = Field(default_factory=EngineConfig)
    cost: CostParams = Field(default_factory=CostParams)
    parallelism: ParallelismConfig = Field(default_factory=ParallelismConfig)
    kv: KvSizing = Field(default_factory=KvSizing)
    slo: SloSection | None = None
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _check_cross_sections(self) -> "ScenarioConfig":
        dynamic = self.engine.dynamic or any(m.dynamic for m in self.engine.members)
        if dynamic and self.slo is None:
            raise ValueError("slo: required when engine.dynamic is true")
        if self.workload.trace_file is None and self.workload.rate is None and not self.sweep.rates:
            raise ValueError("workload.rate: required unless the workload is a trace file")
        colocated = {"unified-pf", "unified-df", "unified-chunked", "semi-pd"}
        kinds = {self.engine.kind} | {m.kind for m in self.engine.members}
        if kinds & colocated and not self.parallelism.symmetric:
            raise ValueError("parallelism: prefill and decode degrees must match for unified and semi-pd engines")
        return self

    def resolved_slo(self) -> SloConfig:
        """The SLO used for attainment; the default preset when none is configured."""
        if self.slo is None:
            return slo_preset("llama3-8b/sharegpt/tight")
        return self.slo.resolve(self.cost, self.parallelism)

    def requests(self, gpus: int, rate: float | None = None) -> tuple[list[Request], float]:
        """Trace of this scenario and the rate to report.

        Args:
            gpus: GPUs of the engine; a per-GPU rate is multiplied by it
            rate: Rate override (sweeps)

        Returns:
            (requests, reported rate)
        """
        w = self.workload
        if w.trace_file is not None:
            if rate is not None:
                raise ValueError("a trace-file workload cannot be swept over rates")
            requests = load_trace(w.trace_file).requests
            span = requests[-1].arrival if requests else 0.0
            measured = len(requests) / span if span > 0 else 0.0
            return requests, round(measured / gpus if w.rate_per_gpu else measured, 9)
        reported = rate if rate is not None else w.rate
        if reported is None:
            raise ValueError("workload.rate is not set")
        total = reported * gpus if w.rate_per_gpu else reported
        return generate_trace(w.trace_params(total, self.seed)), reported


def format_validation_error(err: ValidationError) -> list[str]:
    """One ``dotted.field.path: message`` line per problem."""
    problems = []
    for e in err.errors():
        loc = ".".join(str(part) for part in e["loc"])
        msg = e["msg"].removeprefix("Value error, ")
        problems.append(f"{loc}: {msg}" if loc else msg)
    return problems


def parse_scenario(data: dict[str, Any], source: str | Path | None = None) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(format_validation_error(e), source) from e


def load_scenario(path: str | Path, seed: int | None = None, output_dir: str | None = None) -> ScenarioConfig:
    """Read and validate a YAML or TOML scenario.

    Args:
        path: Scenario file
        seed: Overrides the file's seed when given
        output_dir: Overrides the file's output directory when given

    Raises:
        ScenarioError: If the file is missing, unparsable or invalid
    """
    try:
        data = load_config(path)
    except FileNotFoundError as e:
        raise ScenarioError([f"file not found: {path}"], path) from e
    except ValueError as e:
        raise ScenarioError([str(e)], path) from e
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    return parse_scenario(data, path)


def save_resolved(config: ScenarioConfig, path: str | Path) -> None:
    """Write the fully resolved scenario; loading it reproduces the run."""
    dump_config(config.model_dump(mode="json", exclude_none=True), path)
