"""Flat key-value experiment configs and run reports.

A config file holds one ``key = value`` pair per line.  Blank lines and
lines starting with ``#`` are ignored.  Lists are comma-separated, booleans
are ``true``/``false``, and floats are written with ``repr`` so a
write/read cycle is lossless.
"""

from __future__ import annotations

import io
import csv
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .linear import LAMBDA_GRID, SGDConfig

DATASETS = ("mnist", "circle", "blobs", "rotation", "file")
MODELS = ("ridge", "logistic")
NORMALIZATIONS = ("none", "unit_sphere")


@dataclass
class ExperimentConfig:
    """Every knob of an experiment run.

    ``dataset`` selects the input: ``mnist`` reads IDX files from
    ``data_dir``; ``circle``, ``blobs`` and ``rotation`` are generated from
    ``data_seed`` (the test split of ``blobs`` uses ``data_seed + 1``);
    ``file`` reads ``train_path`` and optionally ``test_path`` as dataset
    containers or labelled comma-separated text.
    """

    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    train_path: str = ""
    test_path: str = ""
    normalization: str = "none"
    data_seed: int = 0
    n_points: int = 100
    n_per_class: int = 400
    classes: int = 10
    dim: int = 100
    separation: float = 4.0
    n_angles: int = 33
    side: int = 24
    m: list[int] = field(default_factory=lambda: [1000])
    q: list[int] = field(default_factory=lambda: [4])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    model: str = "ridge"
    lambda_grid: list[float] = field(default_factory=lambda: list(LAMBDA_GRID))
    holdout: int = 10000
    holdout_seed: int = 0
    sgd_epochs: int = 30
    sgd_batch_size: int = 64
    sgd_lr0: float = 0.1
    sgd_lr_t0: float = 5.0
    sgd_l2: float = 1e-4
    pca_k: int = 2
    curve: bool = False
    kernel_q: list[int] = field(default_factory=lambda: [2, 4, 8, 16])
    kernel_rho_points: int = 21
    kernel_samples: int = 1_000_000
    out_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(name, msg):
            raise ConfigError(msg, field_name=name)

        if self.dataset not in DATASETS:
            bad("dataset", f"must be one of {', '.join(DATASETS)}")
        if self.model not in MODELS:
            bad("model", f"must be one of {', '.join(MODELS)}")
        if self.normalization not in NORMALIZATIONS:
            bad("normalization", f"must be one of {', '.join(NORMALIZATIONS)}")
        for name in ("m", "q", "seeds", "kernel_q", "lambda_grid"):
            if not getattr(self, name):
                bad(name, "list must be nonempty")
        for name in ("m", "q", "kernel_q"):
            if min(getattr(self, name)) < 1:
                bad(name, "values must be >= 1")
        if min(self.seeds) < 0:
            bad("seeds", "seeds must be >= 0")
        if min(self.lambda_grid) <= 0:
            bad("lambda_grid", "penalties must be > 0")
        for name in ("n_points", "n_per_class", "dim", "n_angles", "side", "holdout",
                     "sgd_epochs", "sgd_batch_size", "pca_k", "kernel_rho_points",
                     "kernel_samples", "threads"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if self.classes < 2:
            bad("classes", "must be >= 2")
        if self.dataset == "file" and not self.train_path:
            bad("train_path", "required when dataset = file")

    @property
    def sgd(self) -> SGDConfig:
        return SGDConfig(self.sgd_epochs, self.sgd_batch_size, self.sgd_lr0,
                         self.sgd_lr_t0, self.sgd_l2)

    def single(self, name: str) -> int:
        """The sole value of a list field that a non-sweep command needs as a scalar."""
        values = getattr(self, name)
        if len(values) != 1:
            raise ConfigError(f"expected one value for this command, got {len(values)}",
                              field_name=name)
        return values[0]

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        hints = _hints()
        return "".join(f"{f.name} = {_format(getattr(self, f.name), hints[f.name])}\n"
                       for f in fields(self))

    @staticmethod
    def parse_fields(text: str, source: str | None = None) -> dict:
        """Typed ``{field: value}`` pairs from config text, without applying defaults."""
        hints = _hints()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError("expected 'key = value'", line=lineno, source=source)
            if key not in hints:
                raise ConfigError("unknown field", line=lineno, field_name=key, source=source)
            if key in values:
                raise ConfigError("field given twice", line=lineno, field_name=key, source=source)
            try:
                values[key] = _parse(value.strip(), hints[key])
            except ValueError as exc:
                raise ConfigError(str(exc), line=lineno, field_name=key, source=source) from None
        return values

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None,
                  source: str | None = None) -> "ExperimentConfig":
        values = cls.parse_fields(text, source)
        values.update(overrides or {})
        return cls(**values)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), overrides, source=str(path))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _hints():
    return typing.get_type_hints(ExperimentConfig)


def _format(value, kind) -> str:
    if kind is bool:
        return "true" if value else "false"
    if kind is float:
        return repr(float(value))
    if typing.get_origin(kind) is list:
        (inner,) = typing.get_args(kind)
        return ", ".join(_format(v, inner) for v in value)
    return str(value)


def _parse(text: str, kind):
    if kind is bool:
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return text.lower() == "true"
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
    if typing.get_origin(kind) is list:
        (inner,) = typing.get_args(kind)
        return [_parse(part.strip(), inner) for part in text.split(",") if part.strip()]
    return text


# -- reports -------------------------------------------------------------

@dataclass
class Cell:
    """Per-seed test errors (fractions) for one ``(m, q)`` grid point."""

    m: int
    q: int
    seeds: list[int]
    errors: list[float]
    lambdas: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors, ddof=1)) if len(self.errors) > 1 else 0.0


@dataclass
class RunReport:
    """Result of one command: per-cell errors, timing, version and the full config."""

    command: str
    config: ExperimentConfig
    cells: list[Cell] = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"report.command = {self.command}",
                 f"report.version = {self.version}",
                 f"report.wall_clock_seconds = {self.wall_clock:.3f}"]
        lines += [f"report.{k} = {v}" for k, v in self.extra.items()]
        for c in self.cells:
            key = f"cell.m{c.m}_q{c.q}"
            lines += [f"{key}.seeds = {', '.join(map(str, c.seeds))}",
                      f"{key}.errors = {', '.join(repr(e) for e in c.errors)}",
                      f"{key}.mean = {c.mean!r}",
                      f"{key}.std = {c.std!r}"]
            if c.lambdas:
                lines.append(f"{key}.lambdas = {', '.join(repr(x) for x in c.lambdas)}")
        lines += [f"config.{line}" for line in self.config.to_text().splitlines()]
        return "\n".join(lines) + "\n"

    def grid_csv(self) -> str:
        """Table-style grid: one row per cell with mean and std in percent."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "q", "n_seeds", "mean_error_pct", "std_error_pct"])
        for c in self.cells:
            w.writerow([c.m, c.q, len(c.errors), f"{100 * c.mean:.4f}", f"{100 * c.std:.4f}"])
        return buf.getvalue()

    def seeds_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "q", "seed", "test_error", "lambda"])
        for c in self.cells:
            lams = c.lambdas or [""] * len(c.errors)
            for seed, err, lam in zip(c.seeds, c.errors, lams):
                w.writerow([c.m, c.q, seed, repr(err), repr(lam) if lam != "" else ""])
        return buf.getvalue()


def config_from_report(text: str) -> ExperimentConfig:
    """Recover the config embedded in a report so the run can be repeated."""
    prefix = "config."
    body = "\n".join(line[len(prefix):] for line in text.splitlines() if line.startswith(prefix))
    return ExperimentConfig.from_text(body)
