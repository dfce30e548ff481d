"""Run configuration: nested dataclasses with strict JSON loading.

Unknown keys are rejected with the full dotted path so typos never silently
fall back to defaults. Every run writes its resolved config next to its
outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DataCfg
from .model import ModelCfg
from .said import DecoupleLossCfg
from .trainer import EmaSsmCfg, TrainCfg


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"config key '{path}': {message}")


@dataclass
class DataSection:
    k_subdomains: int = 3
    n_per_subdomain: int = 80
    n_target: int = 160
    n_heldout: int = 64
    grid: int = 8
    cell_px: int = 8
    n_classes: int = 3
    style_rms: float = 0.22

    def to_data_cfg(self) -> DataCfg:
        return DataCfg(grid=self.grid, cell_px=self.cell_px, n_classes=self.n_classes,
                       style_rms=self.style_rms)


@dataclass
class ModelSection:
    channels: int = 8
    said_mode: str = "soft"
    n_filters: int = 100
    sigma_h: float = 0.1
    n_tokens: int = 8
    token_dim: int = 64
    no_said: bool = False
    no_coupling: bool = False

    def to_model_cfg(self, data: DataSection) -> ModelCfg:
        return ModelCfg(grid=data.grid, cell_px=data.cell_px, n_classes=data.n_classes,
                        channels=self.channels, said_mode=self.said_mode,
                        n_filters=self.n_filters, sigma_h=self.sigma_h,
                        n_tokens=self.n_tokens, token_dim=self.token_dim,
                        use_said=not self.no_said,
                        use_coupling=not self.no_said and not self.no_coupling)


@dataclass
class SaidSection:
    k: int = 2
    lambda_dcp: float = 50.0
    epsilon: float = 1e-8
    log_amplitude: bool = True

    def to_loss_cfg(self) -> DecoupleLossCfg:
        return DecoupleLossCfg(k=self.k, lambda_dcp=self.lambda_dcp, epsilon=self.epsilon,
                               log_amplitude=self.log_amplitude)


@dataclass
class TrainSection:
    burn_in_steps: int = 500
    mutual_steps: int = 2000
    batch_source: int = 4
    batch_target: int = 4
    lr: float = 0.01
    alpha_ema: float = 0.9996
    alpha_ssm: float = 0.5
    ssm_step: int = 500
    no_ssm: bool = False
    conf_threshold: float = 0.7
    eval_every: int = 0
    source_only: bool = False

    def to_train_cfg(self, said: SaidSection) -> TrainCfg:
        return TrainCfg(burn_in_steps=self.burn_in_steps, mutual_steps=self.mutual_steps,
                        batch_source=self.batch_source, batch_target=self.batch_target,
                        lr=self.lr, conf_threshold=self.conf_threshold,
                        use_ssm=not self.no_ssm, eval_every=self.eval_every,
                        source_only=self.source_only,
                        ema=EmaSsmCfg(self.alpha_ema, self.alpha_ssm, self.ssm_step),
                        said=said.to_loss_cfg())


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    said: SaidSection = field(default_factory=SaidSection)
    train: TrainSection = field(default_factory=TrainSection)


def _fill(cls, payload: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        here = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(here, "unknown key")
        if isinstance(value, dict):
            sub = {"data": DataSection, "model": ModelSection,
                   "said": SaidSection, "train": TrainSection}.get(key)
            if sub is None:
                raise ConfigError(here, "unexpected nested object")
            kwargs[key] = _fill(sub, value, here)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}")
    if not isinstance(payload, dict):
        raise ConfigError(str(path), "top level must be an object")
    return from_dict(payload)


def from_dict(payload: dict) -> RunConfig:
    return _fill(RunConfig, payload, "")


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def write_resolved(cfg: RunConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.resolved.json", "w") as fh:
        json.dump(to_dict(cfg), fh, indent=1, sort_keys=True)
