"""DDPG vehicle-selection agent: actor/critic, targets, replay and OU exploration."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .nn import NetSpec, ParamVector


def actor_spec_for(K: int) -> NetSpec:
    return nn.mlp(4 * K, [400, 300], K, output_act="sigmoid")


def critic_spec_for(K: int) -> NetSpec:
    return nn.mlp(5 * K, [400, 300], 1)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.001
    batch_size: int = 64
    buffer_capacity: int = 100_000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    ou_variance: float = 0.02
    ou_theta: float = 0.15
    reward_scale: float = 1e-3     # rewards are multiplied by this before storage
    actor_spec: NetSpec = field(default_factory=lambda: actor_spec_for(5))
    critic_spec: NetSpec = field(default_factory=lambda: critic_spec_for(5))

    def __post_init__(self):
        for name in ("actor_spec", "critic_spec"):
            value = getattr(self, name)
            if isinstance(value, dict):
                object.__setattr__(self, name, NetSpec.from_dict(value))

    def validate(self) -> list[str]:
        problems = []
        if not 0 < self.gamma < 1:
            problems.append("agent.gamma must lie in (0, 1)")
        if not 0 <= self.tau <= 1:
            problems.append("agent.tau must lie in [0, 1]")
        if self.batch_size < 1:
            problems.append("agent.batch_size must be >= 1")
        if self.buffer_capacity < self.batch_size:
            problems.append("agent.buffer_capacity must be >= agent.batch_size")
        if self.actor_lr < 0 or self.critic_lr < 0:
            problems.append("agent learning rates must be >= 0")
        if self.ou_variance < 0 or self.ou_theta < 0:
            problems.append("agent OU parameters must be >= 0")
        if self.actor_spec.output[1] != "sigmoid":
            problems.append("agent.actor_spec output activation must be sigmoid")
        if self.critic_spec.output_dim != 1:
            problems.append("agent.critic_spec must have a single output")
        return problems

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_spec"] = self.actor_spec.to_dict()
        d["critic_spec"] = self.critic_spec.to_dict()
        return d


@dataclass(frozen=True, eq=False)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.r = np.zeros(self.capacity)
        self.s_next = np.zeros((self.capacity, state_dim))
        self.count = 0
        self._head = 0

    def __len__(self) -> int:
        return self.count

    def store(self, t: Transition) -> None:
        i = self._head
        self.s[i], self.a[i], self.r[i], self.s_next[i] = t.s, t.a, t.r, t.s_next
        self._head = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def __getitem__(self, k: int) -> Transition:
        """k-th oldest stored transition."""
        if not 0 <= k < self.count:
            raise IndexError(k)
        i = (self._head - self.count + k) % self.capacity
        return Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]), self.s_next[i].copy())

    def sample_indices(self, size: int, seed) -> np.ndarray:
        if self.count < size:
            raise ValueError(f"cannot sample {size} transitions from a buffer holding {self.count}")
        rng = np.random.default_rng(seed)
        return rng.choice(self.count, size=size, replace=False)

    def sample_minibatch(self, size: int, seed):
        """Uniform sample without replacement as (s, a, r, s_next) arrays."""
        k = self.sample_indices(size, seed)
        rows = (self._head - self.count + k) % self.capacity
        return self.s[rows], self.a[rows], self.r[rows], self.s_next[rows]


@dataclass(frozen=True, eq=False)
class OUState:
    x: np.ndarray
    theta: float
    sigma: float


def ou_step(state: OUState, seed) -> OUState:
    """x <- x - theta*x + N(0, sigma^2), per component."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, state.sigma, size=state.x.shape) if state.sigma > 0 else 0.0
    return replace(state, x=state.x - state.theta * state.x + noise)


def select_action(actor: ParamVector, spec: NetSpec, state, noise: Optional[OUState] = None,
                  explore: bool = False) -> np.ndarray:
    """Actor output, plus OU noise when exploring, clipped to [0, 1]."""
    lam = nn.predict(actor, spec, state)[0]
    if explore and noise is not None:
        lam = np.clip(lam + noise.x, 0.0, 1.0)
    return lam


def threshold_action(lam) -> np.ndarray:
    return (np.asarray(lam) >= 0.5).astype(np.int64)


def critic_target(r, s_next, target_actor: ParamVector, target_critic: ParamVector,
                  actor_spec: NetSpec, critic_spec: NetSpec, gamma: float) -> np.ndarray:
    """y = r + gamma * Q'(s', mu'(s')) for a batch."""
    s_next = np.atleast_2d(s_next)
    a_next = nn.predict(target_actor, actor_spec, s_next)
    q_next = nn.predict(target_critic, critic_spec, np.hstack([s_next, a_next]))[:, 0]
    return np.asarray(r, dtype=np.float64) + gamma * q_next


def critic_loss_and_grad(critic: ParamVector, spec: NetSpec, s, a, y) -> tuple[float, ParamVector]:
    """Mean squared TD error and its gradient with respect to the critic."""
    q, trace = nn.forward(critic, spec, np.hstack([np.atleast_2d(s), np.atleast_2d(a)]))
    err = np.asarray(y, dtype=np.float64) - q[:, 0]
    n = err.shape[0]
    loss = float(np.mean(err ** 2))
    grad, _ = nn.backward(trace, spec, (-2.0 / n * err)[:, None])
    return loss, grad


def critic_update(critic: ParamVector, spec: NetSpec, s, a, y, lr: float) -> tuple[ParamVector, float]:
    loss, grad = critic_loss_and_grad(critic, spec, s, a, y)
    return nn.sgd_step(critic, grad, lr), loss


def actor_objective(actor: ParamVector, critic: ParamVector, actor_spec: NetSpec,
                    critic_spec: NetSpec, s) -> float:
    """Mean critic value of the actor's own actions."""
    s = np.atleast_2d(s)
    a = nn.predict(actor, actor_spec, s)
    return float(np.mean(nn.predict(critic, critic_spec, np.hstack([s, a]))))


def actor_gradient(actor: ParamVector, critic: ParamVector, actor_spec: NetSpec,
                   critic_spec: NetSpec, s) -> ParamVector:
    """Deterministic policy gradient: dQ/da chained into d(actor)/d(params)."""
    s = np.atleast_2d(s)
    n = s.shape[0]
    a, actor_trace = nn.forward(actor, actor_spec, s)
    _, critic_trace = nn.forward(critic, critic_spec, np.hstack([s, a]))
    _, d_input = nn.backward(critic_trace, critic_spec, np.full((n, 1), 1.0 / n))
    grad, _ = nn.backward(actor_trace, actor_spec, d_input[:, s.shape[1]:])
    return grad


def actor_update(actor: ParamVector, critic: ParamVector, actor_spec: NetSpec,
                 critic_spec: NetSpec, s, lr: float) -> ParamVector:
    # gradient ascent on the critic's value
    return nn.sgd_step(actor, actor_gradient(actor, critic, actor_spec, critic_spec, s), -lr)


class DDPGAgent:
    def __init__(self, cfg: AgentConfig, seed):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        a_seed, c_seed = rng.integers(0, 2 ** 63, size=2)
        self.actor = nn.init_params(cfg.actor_spec, a_seed)
        self.critic = nn.init_params(cfg.critic_spec, c_seed)
        self.target_actor = self.actor
        self.target_critic = self.critic
        self.buffer = ReplayBuffer(cfg.buffer_capacity, cfg.actor_spec.input_dim, cfg.actor_spec.output_dim)
        self.noise = self.fresh_noise()
        self.updates = 0
        self.last_critic_loss = math.nan

    @property
    def action_dim(self) -> int:
        return self.cfg.actor_spec.output_dim

    def fresh_noise(self) -> OUState:
        return OUState(np.zeros(self.action_dim), self.cfg.ou_theta, math.sqrt(self.cfg.ou_variance))

    def act(self, state, explore: bool, rng=None) -> np.ndarray:
        if explore:
            self.noise = ou_step(self.noise, rng)
        return select_action(self.actor, self.cfg.actor_spec, state, self.noise, explore)

    def store(self, t: Transition) -> None:
        self.buffer.store(t)

    def ready(self) -> bool:
        return len(self.buffer) > self.cfg.batch_size

    def update(self, rng) -> float:
        """Critic step, actor step, then soft target tracking on one minibatch."""
        cfg = self.cfg
        s, a, r, s_next = self.buffer.sample_minibatch(cfg.batch_size, rng)
        y = critic_target(r, s_next, self.target_actor, self.target_critic,
                          cfg.actor_spec, cfg.critic_spec, cfg.gamma)
        self.critic, loss = critic_update(self.critic, cfg.critic_spec, s, a, y, cfg.critic_lr)
        self.actor = actor_update(self.actor, self.critic, cfg.actor_spec, cfg.critic_spec, s, cfg.actor_lr)
        self.soft_update()
        self.updates += 1
        self.last_critic_loss = loss
        return loss

    def soft_update(self) -> None:
        self.target_critic = nn.soft_update_params(self.target_critic, self.critic, self.cfg.tau)
        self.target_actor = nn.soft_update_params(self.target_actor, self.actor, self.cfg.tau)

    # -- checkpoints -------------------------------------------------------

    NETWORKS = ("actor", "critic", "target_actor", "target_critic")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in self.NETWORKS:
            nn.save_params(getattr(self, name), directory / f"{name}.params")
        (directory / "agent_config.json").write_text(json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "DDPGAgent":
        directory = Path(directory)
        cfg = AgentConfig(**json.loads((directory / "agent_config.json").read_text()))
        agent = cls(cfg, 0)
        for name in cls.NETWORKS:
            params = nn.load_params(directory / f"{name}.params")
            spec = cfg.critic_spec if "critic" in name else cfg.actor_spec
            if params.layout != spec.layout:
                raise nn.LayoutMismatch(f"{name}.params does not match the stored agent config")
            setattr(agent, name, params)
        return agent
