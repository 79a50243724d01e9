"""Flat run configuration: every hyperparameter under one documented key set.

Config files are plain ``key = value`` lines (# comments allowed).  Unknown
keys are rejected; all keys have defaults matching the reference training
recipe.  The effective config is echoed into every output directory and
reproduces the run when read back.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .data import BevGridSpec, CodebookSpec, SyntheticScenarioConfig
from .errors import ConfigError
from .metrics import DbaConfig
from .model import ModelConfig
from .training import OptimizerConfig


@dataclass
class RunConfig:
    # BEV grid and model structure
    grid_h: int = 128
    grid_w: int = 128
    extent: float = 50.0
    c_bev: int = 256
    c_back: int = 512
    cam_size: int = 256
    attn_layers: int = 3
    attn_heads: int = 4
    temporal_layers: int = 4
    temporal_heads: int = 4
    head_hidden: int = 512
    dropout: float = 0.1
    gps_mlp_hidden: int = 128
    beams: int = 64
    fov_deg: float = 90.0
    # optimization
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 150
    batch_size: int = 4
    gamma: float = 2.0
    class_weighting: bool = True
    flip_prob: float = 0.5
    photometric: bool = True
    clip_norm: float = 5.0
    early_stop_dba: float | None = None
    ablation: str = "full"
    # evaluation
    delta: float = 5.0
    top_k: int = 3
    eval_batch_size: int = 8
    # seeds and splits
    seed: int = 0
    split_seed: int = 0
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    # synthetic data generation
    sequences: int = 2000
    scenarios: int = 3
    speed_min: float = 4.0
    speed_max: float = 12.0
    frame_dt: float = 0.25
    gps_noise_std: float = 1.0
    lidar_points: int = 256
    radar_antennas: int = 8
    radar_chirps: int = 8
    radar_ranges: int = 16
    radar_noise_std: float = 0.05

    # -- derived views ----------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            grid_h=self.grid_h, grid_w=self.grid_w, extent=self.extent,
            c_bev=self.c_bev, c_back=self.c_back, cam_size=self.cam_size,
            attn_layers=self.attn_layers, attn_heads=self.attn_heads,
            temporal_layers=self.temporal_layers, temporal_heads=self.temporal_heads,
            head_hidden=self.head_hidden, dropout=self.dropout, beams=self.beams,
            gps_mlp_hidden=self.gps_mlp_hidden,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            lr=self.lr, weight_decay=self.weight_decay, beta1=self.beta1,
            beta2=self.beta2, eps=self.eps, epochs=self.epochs,
            batch_size=self.batch_size,
        )

    def dba_config(self) -> DbaConfig:
        return DbaConfig(k=self.top_k, delta=self.delta)

    def synthetic_config(self) -> SyntheticScenarioConfig:
        return SyntheticScenarioConfig(
            n_sequences=self.sequences, seed=self.seed,
            grid=BevGridSpec(extent=self.extent, height=self.grid_h, width=self.grid_w),
            codebook=CodebookSpec(beams=self.beams, fov_deg=self.fov_deg),
            n_scenarios=self.scenarios, cam_size=self.cam_size,
            speed_range=(self.speed_min, self.speed_max), frame_dt=self.frame_dt,
            gps_noise_std=self.gps_noise_std, lidar_points=self.lidar_points,
            radar_antennas=self.radar_antennas, radar_chirps=self.radar_chirps,
            radar_ranges=self.radar_ranges, radar_noise_std=self.radar_noise_std,
        )

    def split_ratios(self) -> tuple:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    # -- file round trip -----------------------------------------------------

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def _coerce(cls, name: str, value):
        for f in dataclasses.fields(cls):
            if f.name != name:
                continue
            if isinstance(value, str):
                text = value.strip()
                if f.name == "early_stop_dba":
                    return None if text.lower() in ("none", "") else float(text)
                if f.type in ("bool",):
                    if text.lower() in ("true", "1", "yes"):
                        return True
                    if text.lower() in ("false", "0", "no"):
                        return False
                    raise ConfigError(f"{name}: expected a boolean, got {text!r}")
                if f.type in ("int",):
                    return int(text)
                if f.type in ("float",):
                    return float(text)
                return text
            return value
        raise ConfigError(f"unknown config key {name!r}")

    def updated(self, overrides: dict) -> "RunConfig":
        """New config with overrides applied; unknown keys rejected."""
        known = self.field_names()
        values = dataclasses.asdict(self)
        for key, value in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = self._coerce(key, value)
        try:
            return RunConfig(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        overrides = {}
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = stripped.split("=", 1)
            overrides[key.strip()] = value.strip()
        return cls().updated(overrides)

    def to_file(self, path) -> None:
        lines = ["# effective run configuration"]
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        Path(path).write_text("\n".join(lines) + "\n")
