"""Episode loops tying the fleet, the federated aggregator and the selection agent together."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np

from . import env, fl, nn
from .agent import DDPGAgent, Transition, threshold_action
from .data import apply_bad_node, load_datasets, partition
from .metrics import MetricsRecord
from .seeding import streams

if TYPE_CHECKING:
    from .config import SimConfig

log = logging.getLogger(__name__)

SCHEMES = ("dafl", "afl", "fl")
LAMBDA_SUM_FLOOR = 1e-12


@dataclass(frozen=True)
class RewardConfig:
    omega1: float = 1.0
    omega2: float = 0.5
    empty_selection_policy: str = "force-argmax"    # or "penalty"
    empty_selection_penalty: float = -1000.0
    # "lambda": K / sum(lambda) as printed; "selected": K / sum(a_d)
    scale_by: str = "lambda"

    def validate(self) -> list[str]:
        problems = []
        if self.omega1 < 0 or self.omega2 < 0:
            problems.append("reward.omega1 and reward.omega2 must be >= 0")
        if self.empty_selection_policy not in ("force-argmax", "penalty"):
            problems.append("reward.empty_selection_policy must be 'force-argmax' or 'penalty'")
        if self.scale_by not in ("lambda", "selected"):
            problems.append("reward.scale_by must be 'lambda' or 'selected'")
        return problems


@dataclass(frozen=True)
class EpisodeConfig:
    N: int = 20
    E_max: int = 200
    E_test: int = 3
    eval_during_train: bool = False

    def validate(self) -> list[str]:
        if min(self.N, self.E_max, self.E_test) < 1:
            return ["episode.N, episode.E_max and episode.E_test must be >= 1"]
        return []


# -- state and reward --------------------------------------------------------

def build_state(fleet: Sequence[env.VehicleState], cfg: env.EnvConfig, prev_action) -> np.ndarray:
    """(rates, compute, positions, previous action), each block scaled to about [0, 1]."""
    rates = np.array([env.transmission_rate(v, cfg) for v in fleet]) / cfg.max_rate
    mu = np.array([v.mu for v in fleet]) / cfg.compute_dist.hi
    x_min, x_max = cfg.coverage_x
    pos = (np.array([v.d_ix for v in fleet]) - x_min) / (x_max - x_min)
    return np.concatenate([rates, mu, pos, np.asarray(prev_action, dtype=np.float64)])


def compute_reward(lam, a_d, loss: float, delays, K: int, cfg: RewardConfig) -> float:
    """Negative weighted loss plus mean selected delay, scaled by K over the total action."""
    lam = np.asarray(lam, dtype=np.float64)
    a_d = np.asarray(a_d, dtype=np.float64)
    delays = np.asarray(delays, dtype=np.float64)
    n_sel = a_d.sum()
    mean_delay = float((delays * a_d).sum() / n_sel)
    # a (near) all-zero lambda, reachable after clipping, would blow the factor up
    denom = lam.sum() if cfg.scale_by == "lambda" and lam.sum() >= LAMBDA_SUM_FLOOR else n_sel
    return -(K / denom) * (cfg.omega1 * loss + cfg.omega2 * mean_delay)


def empty_selection_fallback(lam, a_d) -> np.ndarray:
    """Select the highest-probability vehicle (lowest index on ties) when none is selected."""
    a_d = np.asarray(a_d, dtype=np.int64).copy()
    if a_d.sum() == 0:
        a_d[int(np.argmax(lam))] = 1
    return a_d


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if len(rewards) == 0:
        raise ValueError("discounted return of an empty reward sequence")
    r = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(gamma ** np.arange(r.size) * r))


# -- episode engine ----------------------------------------------------------

Policy = Callable[[np.ndarray], np.ndarray]
Learner = Callable[[Transition], None]


class Simulation:
    """Shared episode machinery for training, testing and fixed-selection baselines."""

    def __init__(self, cfg: "SimConfig", seed: int):
        self.cfg = cfg
        self.seed = seed
        self.rng = streams(seed)
        self.pool, self.test_set = load_datasets(cfg.data, self.rng["data"])
        self.last_model: Optional[fl.GlobalModel] = None

    def run_episode(self, episode: int, policy: Policy, scheme: str = "dafl",
                    learner: Optional[Learner] = None, evaluate: bool = True,
                    on_slot: Optional[Callable] = None) -> list[MetricsRecord]:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        cfg = self.cfg
        ecfg, fcfg = cfg.env, cfg.fl
        K = ecfg.K
        fleet = env.reset(ecfg, self.rng["env"])
        datasets = partition(self.pool, [v.D for v in fleet], cfg.data.iid, self.rng["data"])
        fleet, datasets, hook = apply_bad_node(fleet, datasets, cfg.data.bad_node)
        model = fl.GlobalModel(nn.init_params(fcfg.model_spec, self.rng["model"]))

        prev = np.ones(K)
        state = build_state(fleet, ecfg, prev)
        records = []
        for t in range(1, cfg.episode.N + 1):
            lam = np.asarray(policy(state), dtype=np.float64)
            a_d = threshold_action(lam)
            t_l, t_u = env.delays(fleet, ecfg)
            total = t_l + t_u
            slot_seed = self.rng["fl"].spawn(1)[0]

            if a_d.sum() == 0 and cfg.reward.empty_selection_policy == "penalty":
                reward, loss, mean_delay, round_delay = cfg.reward.empty_selection_penalty, math.nan, 0.0, 0.0
            else:
                a_d = empty_selection_fallback(lam, a_d)
                selected = [(i, t_l[i], t_u[i]) for i in range(K) if a_d[i]]
                if scheme == "fl":
                    result = fl.run_sync_fl_slot(model, selected, datasets, fcfg, slot_seed, hook)
                else:
                    result = fl.run_afl_slot(model, selected, datasets, fcfg, slot_seed, hook,
                                             weighted=scheme == "dafl")
                model = result.global_model
                loss = result.loss
                reward = compute_reward(lam, a_d, loss, total, K, cfg.reward)
                mean_delay = float(total[a_d == 1].mean())
                round_delay = result.round_delay

            accuracy = fl.evaluate_accuracy(model.params, fcfg.model_spec, self.test_set) if evaluate else math.nan
            records.append(MetricsRecord(
                episode, t, float(reward), float(loss), accuracy, mean_delay, float(round_delay),
                tuple(float(x) for x in lam), tuple(float(x) for x in t_l),
                tuple(float(x) for x in t_u), tuple(int(x) for x in a_d),
            ))
            fleet = env.advance_slot(fleet, ecfg, self.rng["env"])
            next_state = build_state(fleet, ecfg, lam)
            if learner is not None:
                learner(Transition(state, lam, float(reward), next_state))
            if on_slot is not None:
                on_slot(t, fleet, model, state, next_state)
            state = next_state
        self.last_model = model
        return records


def train(cfg: "SimConfig", seed: int, progress: bool = False,
          sim: Optional[Simulation] = None) -> tuple[DDPGAgent, list[MetricsRecord]]:
    """Learn a selection policy with exploration noise and replay updates."""
    sim = sim or Simulation(cfg, seed)
    agent = DDPGAgent(cfg.agent, sim.rng["agent"])
    scale = cfg.agent.reward_scale

    def learner(t: Transition) -> None:
        agent.store(Transition(t.s, t.a, t.r * scale, t.s_next))
        if agent.ready():
            agent.update(sim.rng["replay"])

    records: list[MetricsRecord] = []
    for episode in range(1, cfg.episode.E_max + 1):
        agent.noise = agent.fresh_noise()
        rows = sim.run_episode(
            episode, lambda s: agent.act(s, explore=True, rng=sim.rng["noise"]), "dafl",
            learner=learner, evaluate=cfg.episode.eval_during_train,
        )
        records += rows
        if progress:
            total = sum(r.reward for r in rows)
            sel = np.mean([r.selected for r in rows], axis=0)
            log.info("episode %d reward %.2f selection %s", episode, total, np.round(sel, 2).tolist())
    return agent, records


def test(agent: DDPGAgent, cfg: "SimConfig", seed: int,
         sim: Optional[Simulation] = None) -> list[MetricsRecord]:
    """Noise-free rollouts of the trained actor; the agent is not modified."""
    sim = sim or Simulation(cfg, seed)
    actor, spec = agent.actor, agent.cfg.actor_spec
    records: list[MetricsRecord] = []
    for episode in range(1, cfg.episode.E_test + 1):
        records += sim.run_episode(episode, lambda s: nn.predict(actor, spec, s)[0], "dafl")
    return records


def run_fixed_selection(cfg: "SimConfig", seed: int, mask: Sequence[int], scheme: str,
                        sim: Optional[Simulation] = None) -> list[MetricsRecord]:
    """Testing-stage rollouts with a constant selection mask (baseline comparators)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (cfg.env.K,):
        raise ValueError(f"selection mask needs {cfg.env.K} entries")
    sim = sim or Simulation(cfg, seed)
    records: list[MetricsRecord] = []
    for episode in range(1, cfg.episode.E_test + 1):
        records += sim.run_episode(episode, lambda s: mask, scheme)
    return records
