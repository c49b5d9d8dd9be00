"""Experiment configuration, labelled random streams and the worker pool.

A config is a small TOML document::

    experiment = "truncation-decay"
    seed = 0
    out = "runs/truncation-decay"
    tol_scale = 1.0

    [grid]
    resolution = 64
    bbox = [[-1.0, 1.0], [-1.0, 1.0]]
    mask = "ball(center=0.0,0.0;radius=1.0;closed=0)"

    [params]
    beta_factor = 0.9

Parsing then serializing then parsing again returns an equal config.
"""

from __future__ import annotations

import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .field import Grid, make_grid

DEFAULT_MASK = "ball(center=0.0,0.0;radius=1.0;closed=0)"


class ConfigError(ValueError):
    """A config that does not parse or does not validate; the message names the constraint."""


@dataclass
class GridSpec:
    resolution: int = 64
    bbox: list = field(default_factory=lambda: [[-1.0, 1.0], [-1.0, 1.0]])
    mask: str = DEFAULT_MASK

    def validate(self):
        if not isinstance(self.resolution, int) or self.resolution < 8:
            raise ConfigError(f"grid.resolution must be an integer >= 8, got {self.resolution!r}")
        if len(self.bbox) not in (2, 3) or any(len(ax) != 2 or ax[1] <= ax[0] for ax in self.bbox):
            raise ConfigError("grid.bbox must list 2 or 3 (lo, hi) pairs with hi > lo")

    def build(self, resolution: int | None = None) -> Grid:
        try:
            return make_grid(self.bbox, resolution or self.resolution, self.mask)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: str = ""
    tol_scale: float = 1.0
    grid: GridSpec = field(default_factory=GridSpec)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.out:
            self.out = f"runs/{self.experiment}"
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {"experiment", "seed", "out", "tol_scale", "grid", "params"}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown top-level keys {extra}")
        if "experiment" not in data:
            raise ConfigError("missing key 'experiment'")
        grid = data.pop("grid", {})
        if not isinstance(grid, dict):
            raise ConfigError("[grid] must be a table")
        bad = sorted(set(grid) - {"resolution", "bbox", "mask"})
        if bad:
            raise ConfigError(f"unknown [grid] keys {bad}")
        cfg = cls(grid=GridSpec(**grid), **data)
        cfg.validate_types()
        return cfg

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())

    def validate_types(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.tol_scale, (int, float)) or not self.tol_scale > 0:
            raise ConfigError(f"tol_scale must be positive, got {self.tol_scale!r}")
        self.tol_scale = float(self.tol_scale)
        if not isinstance(self.params, dict):
            raise ConfigError("[params] must be a table")
        self.grid.validate()


# --------------------------------------------------------------------------
# randomness: one seed, named substreams


def stream_seed(seed: int, label: str) -> int:
    """A 32-bit seed for the substream ``label`` of ``seed``.

    Streams are keyed by the label's CRC, so adding a new label never shifts
    the draws of an existing one.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1)[0])


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, label))


# --------------------------------------------------------------------------
# parallelism


def max_workers() -> int:
    env = os.environ.get("MORREYKIT_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MORREYKIT_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Iterable, workers: int | None = None) -> list[Any]:
    """``[fn(x) for x in items]`` on a thread pool capped by ``MORREYKIT_THREADS``; order kept."""
    items = list(items)
    workers = min(workers or max_workers(), max(len(items), 1))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))
