"""Experiment configuration: one JSON document with a section per module."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidInputError
from .robot import DEFAULT_NOISE, DEFAULT_RAW_POINTS, DEFAULT_SEGMENTS, HysteresisParams, RobotParams
from .training import TrainConfig

SECTIONS = ("robot", "hysteresis", "dataset", "network", "training", "eval")


@dataclass(frozen=True)
class DatasetConfig:
    levels: int = 6
    copies: int = 2
    M: int = 512
    noise_sigma: float = DEFAULT_NOISE
    n_raw: int = DEFAULT_RAW_POINTS
    segments: int = DEFAULT_SEGMENTS
    test_count: int = 50
    val_fraction: float = 0.3
    n_traj: int = 240
    traj_len: int = 5
    n_test_traj: int = 6


@dataclass(frozen=True)
class NetworkConfig:
    hidden_dims: tuple = (128, 256, 512, 1024)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))


@dataclass(frozen=True)
class EvalConfig:
    # None scales the tip region with the cloud size: M // 32 points, at least one.
    tip_k: int | None = None
    baseline_gain: float = 0.85
    baseline_offset_scale: float = 1.10
    calibration_pairs: int = 30
    calibration_evals: int = 200
    bench_runs: int = 100

    def tip_points(self, M):
        return self.tip_k if self.tip_k is not None else max(1, M // 32)


@dataclass(frozen=True)
class ExperimentConfig:
    robot: RobotParams = field(default_factory=RobotParams)
    hysteresis: HysteresisParams = field(default_factory=HysteresisParams)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        return {"robot": self.robot.to_dict(), "hysteresis": self.hysteresis.to_dict(),
                "dataset": asdict(self.dataset),
                "network": {"hidden_dims": list(self.network.hidden_dims)},
                "training": self.training.to_dict(), "eval": asdict(self.eval)}

    def with_seed(self, seed):
        return replace(self, training=replace(self.training, seed=seed))


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise InvalidInputError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidInputError(f"config section {name!r}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise InvalidInputError(f"config section {name!r}: {exc}") from exc


def config_from_dict(d):
    unknown = set(d) - set(SECTIONS)
    if unknown:
        raise InvalidInputError(f"unknown config sections {sorted(unknown)}")
    try:
        robot = RobotParams.from_dict(d.get("robot", {}))
        hysteresis = HysteresisParams.from_dict(d.get("hysteresis", {}))
    except TypeError as exc:
        raise InvalidInputError(f"config robot/hysteresis section: {exc}") from exc
    return ExperimentConfig(
        robot=robot, hysteresis=hysteresis,
        dataset=_section(DatasetConfig, d.get("dataset", {}), "dataset"),
        network=_section(NetworkConfig, d.get("network", {}), "network"),
        training=_section(TrainConfig, d.get("training", {}), "training"),
        eval=_section(EvalConfig, d.get("eval", {}), "eval"))


def load_config(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: cannot read config: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    return config_from_dict(doc)


def save_config(cfg, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def desk_config():
    """Laptop-scale settings used by the acceptance suite and scripts.

    340 nominal configurations with two random priors each, 64-point clouds, a
    narrower decoder, and a fixed optimizer-step budget shared by every model.
    """
    return ExperimentConfig(
        dataset=DatasetConfig(levels=11, copies=2, M=64),
        network=NetworkConfig(hidden_dims=(64, 128, 256, 512)),
        training=TrainConfig(lr=0.01, lr_decay_every=100, patience=100, max_epochs=300,
                             step_budget=6600))
