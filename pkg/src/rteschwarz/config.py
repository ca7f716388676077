"""Experiment configuration: schema, JSON loading, validation, fingerprints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .discretization import (
    AngularQuadrature,
    DecompositionGeometry,
    Grid1D,
    GridAlignmentError,
    MediaField,
    build_decomposition,
    build_grid,
    build_quadrature,
    homogenized_media,
    oscillatory_media,
    table_media,
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


MEDIA_KINDS = ("oscillatory", "homogenized", "table")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one experiment.  Defaults reproduce the standard setup."""

    epsilon: float = 1.0 / 81.0
    delta: float = 1.0 / 81.0
    m_count: int = 10
    beta: float = 0.5
    n_cells: int = 360
    n_v: int = 40
    rank: int = 6
    oversample: int = 5
    tau: float = 1e-8
    tau_ref: float = 1e-10
    max_iters: int = 800
    seed: int = 11
    media: str = "oscillatory"
    sigma_table: tuple[float, ...] | None = None
    out_dir: str = "out"


def load_config(path: str) -> ExperimentConfig:
    """Load and validate a JSON config; unknown keys are errors."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "sigma_table" in raw and raw["sigma_table"] is not None:
        raw["sigma_table"] = tuple(float(v) for v in raw["sigma_table"])
    cfg = ExperimentConfig(**raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every precondition, with precise diagnostics."""
    def require(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    require(cfg.epsilon > 0, f"epsilon must be positive, got {cfg.epsilon}")
    require(cfg.delta > 0, f"delta must be positive, got {cfg.delta}")
    require(isinstance(cfg.m_count, int) and cfg.m_count >= 1,
            f"m_count must be a positive integer, got {cfg.m_count}")
    require(0.0 < cfg.beta <= 0.5, f"beta must lie in (0, 1/2], got {cfg.beta}")
    require(isinstance(cfg.n_cells, int) and cfg.n_cells >= 1,
            f"n_cells must be a positive integer, got {cfg.n_cells}")
    require(isinstance(cfg.n_v, int) and cfg.n_v >= 2 and cfg.n_v % 2 == 0,
            f"n_v must be a positive even integer, got {cfg.n_v}")
    require(cfg.rank >= 1, f"rank must be >= 1, got {cfg.rank}")
    require(cfg.oversample >= 4, f"oversample must be >= 4, got {cfg.oversample}")
    require(cfg.rank + cfg.oversample <= cfg.n_v,
            f"rank + oversample = {cfg.rank + cfg.oversample} exceeds n_v = {cfg.n_v}")
    require(cfg.tau > 0, f"tau must be positive, got {cfg.tau}")
    require(cfg.tau_ref > 0, f"tau_ref must be positive, got {cfg.tau_ref}")
    require(cfg.max_iters >= 1, f"max_iters must be >= 1, got {cfg.max_iters}")
    require(isinstance(cfg.seed, int) and cfg.seed >= 0,
            f"seed must be a nonnegative integer, got {cfg.seed}")
    require(cfg.media in MEDIA_KINDS,
            f"media must be one of {MEDIA_KINDS}, got {cfg.media!r}")
    if cfg.media == "table":
        require(cfg.sigma_table is not None, "media 'table' requires sigma_table")
        require(len(cfg.sigma_table) == cfg.n_cells + 1,
                f"sigma_table must have n_cells + 1 = {cfg.n_cells + 1} entries, "
                f"got {len(cfg.sigma_table)}")
        require(all(v > 0 for v in cfg.sigma_table), "sigma_table entries must be positive")
    elif cfg.sigma_table is not None:
        raise ConfigError("sigma_table is only allowed with media 'table'")
    grid = build_grid(cfg.n_cells)
    try:
        build_decomposition(grid, cfg.m_count, cfg.beta)
    except (GridAlignmentError, ValueError) as e:
        raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class Problem:
    """Discretization objects derived from a config."""

    config: ExperimentConfig
    grid: Grid1D
    quad: AngularQuadrature
    media: MediaField
    geometry: DecompositionGeometry
    fingerprint: str


def make_media(cfg: ExperimentConfig, grid: Grid1D) -> MediaField:
    if cfg.media == "oscillatory":
        return oscillatory_media(grid, cfg.epsilon, cfg.delta)
    if cfg.media == "homogenized":
        return homogenized_media(grid, cfg.epsilon, cfg.delta)
    return table_media(grid, cfg.epsilon, np.asarray(cfg.sigma_table), cfg.delta)


def discretization_fingerprint(cfg: ExperimentConfig, media: MediaField) -> str:
    """Hash of everything a compressed map depends on."""
    h = hashlib.sha256()
    h.update(b"rteschwarz-fp-1")
    h.update(struct.pack("<qqd", cfg.n_cells, cfg.n_v, cfg.beta))
    h.update(struct.pack("<q", cfg.m_count))
    h.update(struct.pack("<dd", media.epsilon, media.delta))
    h.update(np.ascontiguousarray(media.sigma_nodes, dtype="<f8").tobytes())
    return h.hexdigest()


def build_problem(cfg: ExperimentConfig) -> Problem:
    validate_config(cfg)
    grid = build_grid(cfg.n_cells)
    quad = build_quadrature(cfg.n_v)
    media = make_media(cfg, grid)
    geometry = build_decomposition(grid, cfg.m_count, cfg.beta)
    return Problem(
        config=cfg,
        grid=grid,
        quad=quad,
        media=media,
        geometry=geometry,
        fingerprint=discretization_fingerprint(cfg, media),
    )
