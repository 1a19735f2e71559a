"""Top-level simulation config: JSON round-trip and cross-field validation.

Keys starting with ``_`` are ignored anywhere in the file, so ``"_note"``
entries can carry comments.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agent import AgentConfig, actor_spec_for, critic_spec_for
from .data import BadNodeSpec, DataConfig, SyntheticParams
from .env import EnvConfig, TruncatedGaussian
from .fl import FLConfig
from .nn import NetSpec
from .orchestrator import EpisodeConfig, RewardConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    fl: FLConfig = field(default_factory=FLConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    output_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self) -> list[str]:
        K = self.env.K
        problems = (self.env.validate() + self.fl.validate() + self.agent.validate()
                    + self.reward.validate() + self.episode.validate() + self.data.validate(K))
        a, c, m = self.agent.actor_spec, self.agent.critic_spec, self.fl.model_spec
        if a.input_dim != 4 * K:
            problems.append(f"agent.actor_spec.input_dim is {a.input_dim}, state needs 4*K = {4 * K}")
        if a.output_dim != K:
            problems.append(f"agent.actor_spec output width is {a.output_dim}, action needs K = {K}")
        if c.input_dim != 5 * K:
            problems.append(f"agent.critic_spec.input_dim is {c.input_dim}, state+action needs 5*K = {5 * K}")
        if m.input_dim != self.data.feature_dim:
            problems.append(f"fl.model_spec.input_dim is {m.input_dim}, data has {self.data.feature_dim} features")
        if m.output_dim != self.data.n_classes:
            problems.append(f"fl.model_spec output width is {m.output_dim}, data has {self.data.n_classes} classes")
        if K * self.env.data_size_range[1] > self.data.n_train:
            problems.append(f"data.n_train = {self.data.n_train} cannot cover K * max data size "
                            f"= {K * self.env.data_size_range[1]}")
        return problems

    def check(self) -> "SimConfig":
        problems = self.validate()
        if problems:
            raise ConfigError("; ".join(problems))
        return self


_NESTED = {EnvConfig, FLConfig, AgentConfig, RewardConfig, EpisodeConfig, DataConfig,
           TruncatedGaussian, NetSpec, SyntheticParams, BadNodeSpec}


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key.startswith("_"):
            continue
        if key not in names:
            raise ConfigError(f"unknown config key {path}{key}")
        hint = hints[key]
        if hint in _NESTED and isinstance(value, dict):
            value = _build(hint, value, f"{path}{key}.")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(raw: dict) -> SimConfig:
    cfg = _build(SimConfig, raw, "")
    K = cfg.env.K
    agent_raw = raw.get("agent", {}) if isinstance(raw.get("agent"), dict) else {}
    # network shapes follow K unless given explicitly
    if "actor_spec" not in agent_raw or "critic_spec" not in agent_raw:
        agent = dataclasses.replace(
            cfg.agent,
            actor_spec=cfg.agent.actor_spec if "actor_spec" in agent_raw else actor_spec_for(K),
            critic_spec=cfg.agent.critic_spec if "critic_spec" in agent_raw else critic_spec_for(K),
        )
        cfg = dataclasses.replace(cfg, agent=agent)
    return cfg


def load_config(path) -> SimConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(raw)
