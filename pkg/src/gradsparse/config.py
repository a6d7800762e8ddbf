"""YAML run configuration, validated before anything runs.

Schema (unknown keys are rejected at every level)::

    seed: 0                 # drives every stochastic output
    out: results            # output directory
    train:
      iterations: 2000      # required
      lr: 0.5               # required
      workers: 8
      batch_size: 32
      model: logistic       # linear | logistic | mlp
      hidden: 16
      error_compensation: true
      warmup_iterations: 0
      threads: 1
      record_timing: false  # true makes elapsed_ns real but the CSV non-reproducible
      dataset: {kind: logistic, n_samples: 4096, n_features: 200, noise: 0.1}
      compressor:
        name: sidco_e       # required; none topk randk threshold dgc gaussian sidco_e sidco_gp sidco_p
        delta: 0.1          # required
        sample_fraction: 0.01   # dgc only
    sidco: {first_stage_ratio: 0.25, eps_high: 0.2, eps_low: 0.2, window: 5, max_stages: 10}
    bench:
      sizes: [262144, 2621440, 26214400]
      ratios: [0.1, 0.01, 0.001]
      compressors: [topk, dgc, gaussian, sidco_e, sidco_gp, sidco_p]
      repetitions: 30
      warmup: 5
      law: gaussian         # gaussian | laplace | powerlaw
      power: 0.7
      include_large: false  # adds the 262,144,000-element size
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .bench import DEFAULT_COMPRESSORS, DEFAULT_RATIOS, DEFAULT_SIZES, BenchSpec
from .compressors import COMPRESSORS, SIDCO_FLAVORS
from .errors import ConfigError, InvalidInput
from .simharness import CompressorSpec, DatasetSpec, TrainConfig

CompressorName = Literal[COMPRESSORS]  # type: ignore[valid-type]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSchema(_Strict):
    kind: Literal["linear", "logistic", "moons"] = "logistic"
    n_samples: int = Field(4096, ge=1)
    n_features: int = Field(200, ge=1)
    noise: float = Field(0.1, ge=0)


class CompressorSchema(_Strict):
    name: CompressorName
    delta: float = Field(gt=0, le=1)
    sample_fraction: Optional[float] = Field(None, gt=0, le=1)


class TrainSchema(_Strict):
    iterations: int = Field(ge=1)
    lr: float = Field(gt=0)
    workers: int = Field(8, ge=1)
    batch_size: int = Field(32, ge=1)
    model: Literal["linear", "logistic", "mlp"] = "logistic"
    hidden: int = Field(16, ge=1)
    error_compensation: bool = True
    warmup_iterations: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    record_timing: bool = False
    dataset: DatasetSchema = DatasetSchema()
    compressor: CompressorSchema


class SidcoSchema(_Strict):
    first_stage_ratio: float = Field(0.25, gt=0, lt=1)
    eps_high: float = Field(0.2, ge=0, lt=1)
    eps_low: float = Field(0.2, ge=0, lt=1)
    window: int = Field(5, ge=1)
    max_stages: int = Field(10, ge=1)


class BenchSchema(_Strict):
    sizes: List[int] = Field(default_factory=lambda: list(DEFAULT_SIZES), min_length=1)
    ratios: List[float] = Field(default_factory=lambda: list(DEFAULT_RATIOS), min_length=1)
    compressors: List[CompressorName] = Field(default_factory=lambda: list(DEFAULT_COMPRESSORS))
    repetitions: int = Field(30, ge=3)
    warmup: int = Field(5, ge=0)
    law: Literal["gaussian", "laplace", "powerlaw"] = "gaussian"
    power: float = Field(0.7, gt=0)
    include_large: bool = False


class RunSchema(_Strict):
    seed: int = Field(0, ge=0)
    out: str = "results"
    train: Optional[TrainSchema] = None
    sidco: SidcoSchema = SidcoSchema()
    bench: Optional[BenchSchema] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out: Path
    train: Optional[TrainConfig]
    bench: Optional[BenchSpec]


def _problems(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def parse_config(data, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Validate a mapping against the schema; ``seed`` / ``out`` override the file."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    try:
        run = RunSchema.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_problems(err)) from None
    seed = run.seed if seed is None else seed
    try:
        train, bench = _build(run, seed)
    except InvalidInput as exc:
        raise ConfigError([str(exc)]) from None
    return RunConfig(seed, Path(out if out is not None else run.out), train, bench)


def _build(run: RunSchema, seed: int):
    train = None
    if run.train is not None:
        t = run.train
        options = {}
        if t.compressor.name in SIDCO_FLAVORS:
            options = run.sidco.model_dump()
        elif t.compressor.name == "dgc" and t.compressor.sample_fraction is not None:
            options = {"sample_fraction": t.compressor.sample_fraction}
        elif t.compressor.sample_fraction is not None:
            raise ConfigError(["train.compressor.sample_fraction: only valid for the dgc compressor"])
        train = TrainConfig(
            workers=t.workers, batch_size=t.batch_size, lr=t.lr, iterations=t.iterations,
            model=t.model, hidden=t.hidden,
            dataset=DatasetSpec(t.dataset.kind, t.dataset.n_samples, t.dataset.n_features, t.dataset.noise, seed),
            compressor=CompressorSpec(t.compressor.name, t.compressor.delta, options),
            error_compensation=t.error_compensation, warmup_iterations=t.warmup_iterations,
            seed=seed, threads=t.threads, record_timing=t.record_timing,
        )
    bench = None
    if run.bench is not None:
        b = run.bench
        bench = BenchSpec(tuple(b.sizes), tuple(b.ratios), tuple(b.compressors), b.repetitions,
                          b.warmup, b.law, b.power, seed, b.include_large)
    return train, bench


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: invalid YAML ({exc})"]) from None
    return parse_config(data, seed=seed, out=out)
