"""Request traces: Poisson arrivals with configurable length distributions.

Traces are plain lists of ``Request`` sorted by arrival. They can be generated
from ``TraceParams`` or loaded from / written to the trace CSV schema
``arrival_s,input_tokens,output_tokens``.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

TRACE_COLUMNS = ["arrival_s", "input_tokens", "output_tokens"]
DEFAULT_MAX_TOKENS = 8192


class TraceFormatError(ValueError):
    """Raised for a malformed trace file; names the offending line."""

    def __init__(self, path: str | Path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class Request:
    """One serving request. ``output_len`` is only read by the completion check."""

    id: int
    arrival: float
    input_len: int
    output_len: int


class _Dist(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError


class ConstantDist(_Dist):
    kind: Literal["constant"] = "constant"
    value: int = Field(ge=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, self.value, dtype=np.int64)


class UniformDist(_Dist):
    """Integers drawn uniformly from ``[lo, hi]`` inclusive."""

    kind: Literal["uniform"] = "uniform"
    lo: int = Field(ge=1)
    hi: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_bounds(self) -> "UniformDist":
        if self.hi < self.lo:
            raise ValueError(f"uniform: hi ({self.hi}) must be >= lo ({self.lo})")
        return self

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(self.lo, self.hi + 1, size=n, dtype=np.int64)


class LognormalDist(_Dist):
    """Lognormal lengths rounded to integers; clamping happens in ``generate_trace``."""

    kind: Literal["lognormal"] = "lognormal"
    mu: float
    sigma: float = Field(gt=0)
    max: int | None = Field(default=None, ge=1)

    @classmethod
    def from_mean(cls, mean: float, sigma: float, max: int | None = None) -> "LognormalDist":
        """Lognormal whose (unclamped) mean is ``mean``."""
        if mean <= 0:
            raise ValueError(f"lognormal mean must be positive, got {mean}")
        return cls(mu=float(np.log(mean) - sigma * sigma / 2.0), sigma=sigma, max=max)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        values = np.rint(rng.lognormal(self.mu, self.sigma, size=n)).astype(np.int64)
        if self.max is not None:
            values = np.minimum(values, self.max)
        return values


class EmpiricalDist(_Dist):
    """Histogram of lengths: ``values[i]`` is drawn with probability ∝ ``weights[i]``."""

    kind: Literal["empirical"] = "empirical"
    values: list[int] = Field(min_length=1)
    weights: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_histogram(self) -> "EmpiricalDist":
        if len(self.values) != len(self.weights):
            raise ValueError("empirical: values and weights must have the same length")
        if any(v < 1 for v in self.values):
            raise ValueError("empirical: every value must be >= 1")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("empirical: weights must be non-negative with a positive sum")
        return self

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = np.asarray(self.weights, dtype=float)
        idx = rng.choice(len(self.values), size=n, p=p / p.sum())
        return np.asarray(self.values, dtype=np.int64)[idx]


LengthDist = Annotated[
    Union[ConstantDist, UniformDist, LognormalDist, EmpiricalDist],
    Field(discriminator="kind"),
]


class MixtureComponent(BaseModel):
    """One share of a heterogeneous mix; unset distributions fall back to the base ones."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    weight: float = Field(gt=0, le=1)
    input_dist: LengthDist | None = None
    output_dist: LengthDist | None = None


class TraceParams(BaseModel):
    """Everything needed to generate a trace deterministically."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    rate: float = Field(gt=0, description="requests per second")
    count: int = Field(gt=0)
    input_dist: LengthDist
    output_dist: LengthDist
    mixture: list[MixtureComponent] = Field(default_factory=list)
    seed: int = Field(default=0, ge=0, lt=2**64)
    max_tokens: int = Field(default=DEFAULT_MAX_TOKENS, ge=1)

    @model_validator(mode="after")
    def _check_mixture(self) -> "TraceParams":
        if self.mixture:
            total = sum(c.weight for c in self.mixture)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"mixture weights must sum to 1, got {total!r}")
        return self


def generate_trace(p: TraceParams) -> list[Request]:
    """Generate ``p.count`` requests with exponential inter-arrival gaps.

    The result is a pure function of ``p``: the same parameters (seed included)
    always give the same trace. Arrivals are rounded to 9 decimals so the trace
    survives a CSV round trip unchanged.
    """
    rng = np.random.default_rng(p.seed)
    gaps = rng.exponential(1.0 / p.rate, size=p.count)
    arrivals = np.round(np.cumsum(gaps), 9)

    if p.mixture:
        weights = np.asarray([c.weight for c in p.mixture], dtype=float)
        component = rng.choice(len(p.mixture), size=p.count, p=weights / weights.sum())
        inputs = np.empty(p.count, dtype=np.int64)
        outputs = np.empty(p.count, dtype=np.int64)
        for i, comp in enumerate(p.mixture):
            mask = component == i
            n = int(mask.sum())
            inputs[mask] = (comp.input_dist or p.input_dist).sample(rng, n)
            outputs[mask] = (comp.output_dist or p.output_dist).sample(rng, n)
    else:
        inputs = p.input_dist.sample(rng, p.count)
        outputs = p.output_dist.sample(rng, p.count)

    inputs = np.clip(inputs, 1, p.max_tokens)
    outputs = np.clip(outputs, 1, p.max_tokens)
    return [
        Request(id=i, arrival=float(arrivals[i]), input_len=int(inputs[i]), output_len=int(outputs[i]))
        for i in range(p.count)
    ]


@dataclass
class LoadedTrace:
    """Result of ``load_trace``; ``resorted`` flags a file whose arrivals were out of order."""

    requests: list[Request]
    resorted: bool = False


def load_trace(path: str | Path) -> LoadedTrace:
    """Load a trace CSV.

    Requests come back sorted by arrival with ids assigned by row order. Blank
    lines are skipped; line numbers in errors count them.

    Raises:
        FileNotFoundError: If the file is missing
        TraceFormatError: On a missing header or a malformed row
    """
    path = Path(path)
    if path.stat().st_size == 0:
        return LoadedTrace([])
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise TraceFormatError(path, int(match.group(1)) if match else 0, f"malformed row ({e})") from e
    if list(frame.columns) != TRACE_COLUMNS:
        raise TraceFormatError(path, 1, f"expected header {','.join(TRACE_COLUMNS)}")

    requests = []
    for row_idx, row in enumerate(frame.itertuples(index=False)):
        if all(v == "" or pd.isna(v) for v in row):
            continue
        line = row_idx + 2
        try:
            arrival = float(row.arrival_s)
            input_len = int(row.input_tokens)
            output_len = int(row.output_tokens)
        except (TypeError, ValueError) as e:
            raise TraceFormatError(path, line, f"unparsable value ({e})") from e
        if not np.isfinite(arrival) or arrival < 0:
            raise TraceFormatError(path, line, f"arrival_s must be a finite value >= 0, got {row.arrival_s}")
        if input_len < 1:
            raise TraceFormatError(path, line, f"input_tokens must be >= 1, got {input_len}")
        if output_len < 1:
            raise TraceFormatError(path, line, f"output_tokens must be >= 1, got {output_len}")
        requests.append(Request(len(requests), arrival, input_len, output_len))

    arrivals = [r.arrival for r in requests]
    resorted = any(b < a for a, b in zip(arrivals, arrivals[1:]))
    if resorted:
        logging.warning(f"{path}: arrivals are not monotone; requests re-sorted by arrival")
        requests.sort(key=lambda r: (r.arrival, r.id))
    return LoadedTrace(requests, resorted)


def write_trace(requests: list[Request], path: str | Path) -> None:
    """Write requests in the trace CSV schema (9 decimal digits for arrivals)."""
    frame = pd.DataFrame(
        {
            "arrival_s": [r.arrival for r in requests],
            "input_tokens": [r.input_len for r in requests],
            "output_tokens": [r.output_len for r in requests],
        },
        columns=TRACE_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format="%.9f", lineterminator="\n")
