"""Run configuration: flat key = value files with section headers.

Every parameter has a default, so a minimal config names only the input and
output paths. Unknown sections or keys are rejected (they are usually typos).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .errors import ConfigError
from .field import FieldConfig
from .inference import InferenceParams
from .losses import LossWeights
from .partition import PartitionParams
from .render import SamplingConfig
from .scene import BeamPattern


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 1
    batch_size: int = 1024
    base_lr: float = 4e-5
    seed: int = 0
    dtype: str = "float64"


@dataclass(frozen=True)
class SceneSection:
    frames: int = 30
    azimuth_steps: int = 100
    elevation_steps: int = 64
    vfov_lo: float = -25.0
    vfov_hi: float = 5.0
    max_range: float = 120.0

    def pattern(self) -> BeamPattern:
        return BeamPattern(
            azimuth_steps=self.azimuth_steps,
            elevation_steps=self.elevation_steps,
            vfov_deg=(self.vfov_lo, self.vfov_hi),
            max_range=self.max_range,
        )


@dataclass(frozen=True)
class BaselineSection:
    voxel: float = 0.05
    t_max: float = 120.0


@dataclass
class RunConfig:
    scans_dir: Path | None = None
    poses_path: Path | None = None
    scene_path: Path | None = None
    output: Path = Path("out")
    sparsity: float = 0.2
    r_max: float = 40.0  # 0 disables range filtering
    partition: PartitionParams = dc_field(default_factory=PartitionParams)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    sampling: SamplingConfig = dc_field(default_factory=SamplingConfig)
    loss_weights: LossWeights = dc_field(default_factory=LossWeights)
    train: TrainSection = dc_field(default_factory=TrainSection)
    inference: InferenceParams = dc_field(default_factory=InferenceParams)
    scene_gen: SceneSection = dc_field(default_factory=SceneSection)
    baseline: BaselineSection = dc_field(default_factory=BaselineSection)


_SCHEMA = {
    "data": {"scans_dir": str, "poses": str, "scene": str, "output": str},
    "split": {"sparsity": float, "r_max": float},
    "partition": {
        "yaw_threshold_deg": float,
        "margin": float,
        "merge_iou": float,
        "ground_cell": float,
        "ground_h_thresh": float,
        "cluster_radius": float,
        "cluster_min_points": int,
        "min_thickness": float,
        "ground_tile": float,
    },
    "model": {"enc_levels": int, "hidden_layers": int, "hidden_width": int, "skip_at": int},
    "sampling": {"n_coarse": int, "n_fine": int, "lambda_in": float},
    "loss": {
        "lambda_pd": float,
        "lambda_cf": float,
        "lambda_cd": float,
        "eps": float,
        "gamma": float,
    },
    "train": {"epochs": int, "batch_size": int, "base_lr": float, "seed": int, "dtype": str},
    "inference": {"w_min": float, "inflate_step": float, "max_retries": int, "eps": float},
    "scene": {
        "frames": int,
        "azimuth_steps": int,
        "elevation_steps": int,
        "vfov_lo": float,
        "vfov_hi": float,
        "max_range": float,
    },
    "baseline": {"voxel": float, "t_max": float},
}


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, value in parser.items(name):
        if key not in _SCHEMA[name]:
            raise ConfigError(f"unknown key '{key}' in section [{name}]")
        caster = _SCHEMA[name][key]
        try:
            out[key] = caster(value)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    return out


def load_config(path) -> RunConfig:
    """Parse and validate a config file; all numeric ranges are checked here."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")

    data = _section(parser, "data")
    split = _section(parser, "split")
    try:
        cfg = RunConfig(
            scans_dir=Path(data["scans_dir"]) if "scans_dir" in data else None,
            poses_path=Path(data["poses"]) if "poses" in data else None,
            scene_path=Path(data["scene"]) if "scene" in data else None,
            output=Path(data.get("output", "out")),
            sparsity=split.get("sparsity", 0.2),
            r_max=split.get("r_max", 40.0),
            partition=PartitionParams(**_section(parser, "partition")),
            field=FieldConfig(**_section(parser, "model")),
            sampling=SamplingConfig(**_section(parser, "sampling")),
            loss_weights=LossWeights(**_section(parser, "loss")),
            train=TrainSection(**_section(parser, "train")),
            inference=InferenceParams(**_section(parser, "inference")),
            scene_gen=SceneSection(**_section(parser, "scene")),
            baseline=BaselineSection(**_section(parser, "baseline")),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if not 0.0 < cfg.sparsity < 1.0:
        raise ConfigError(f"sparsity {cfg.sparsity} must lie in (0, 1)")
    if cfg.r_max < 0:
        raise ConfigError("r_max must be >= 0 (0 disables range filtering)")
    if cfg.train.dtype not in ("float32", "float64"):
        raise ConfigError("train dtype must be float32 or float64")
    if cfg.baseline.voxel <= 0 or cfg.baseline.t_max <= 0:
        raise ConfigError("baseline voxel and t_max must be positive")
    return cfg
