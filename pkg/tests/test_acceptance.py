"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale setting is the default config: bundled MNIST subset (2,000
train / 1,000 test), K=5 with vehicle 4 as the bad node, N=20, E_max=200.
"""
import dataclasses
import time

import numpy as np
import pytest

from aflsim import agent as ag
from aflsim import cli, env, fl, metrics, nn
from aflsim import orchestrator as orc
from aflsim.config import SimConfig
from aflsim.data import load_datasets
from aflsim.orchestrator import RewardConfig

import oracles as ref

TRAIN_SEEDS = (0, 1, 2, 3, 4)
EVAL_SEEDS = (0, 1, 2)
GOOD_MASK = (1, 1, 1, 1, 0)


def verdict(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    log.append(line)
    assert ok, line


def unit(rng, n):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def relu_pattern(nets, x):
    """Signs of every pre-activation for the chained nets evaluated at flat params ``x``.

    ``nets(x)`` returns the forward traces involved in the objective.
    """
    return np.concatenate([(z > 0).ravel() for trace in nets(x) for z in trace.preacts])


class GradientProbe:
    """Central differences along probe directions, skipping any that straddle a ReLU kink."""

    def __init__(self, f, nets, x, grad, rng, eps=1e-5):
        self.f, self.nets, self.x, self.grad, self.rng, self.eps = f, nets, x, grad, rng, eps
        self.base = relu_pattern(nets, x)
        self.redraws = 0

    def smooth_along(self, v):
        return all(np.array_equal(self.base, relu_pattern(self.nets, self.x + s * self.eps * v)) for s in (1, -1))

    def slope(self, v):
        return ref.directional_difference(self.f, self.x, v, self.eps)

    def worst_error(self, directions=2, coords=8):
        worst = 0.0
        drawn = 0
        while drawn < directions:
            v = unit(self.rng, self.x.size)
            if not self.smooth_along(v):
                self.redraws += 1
                continue
            drawn += 1
            worst = max(worst, ref.rel_err(self.grad @ v, self.slope(v)))
        idx = []
        while len(idx) < coords:
            i = int(self.rng.integers(self.x.size))
            if i in idx:
                continue
            if not self.smooth_along(np.eye(1, self.x.size, i)[0]):
                self.redraws += 1
                continue
            idx.append(i)
        num = np.array([self.slope(np.eye(1, self.x.size, i)[0]) for i in idx])
        denom = max(np.linalg.norm(self.grad[idx]), np.linalg.norm(num), 1e-12)
        return max(worst, float(np.linalg.norm(self.grad[idx] - num) / denom))


# -- 1 -------------------------------------------------------------------------

def test_gradient_oracle(verdicts):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = SimConfig()
    model = cfg.fl.model_spec
    actor_spec, critic_spec = cfg.agent.actor_spec, cfg.agent.critic_spec
    pool, _ = load_datasets(cfg.data, 0)
    errors = {"classifier": 0.0, "critic": 0.0, "actor": 0.0}
    redraws = 0

    def record(name, probe):
        nonlocal redraws
        errors[name] = max(errors[name], probe.worst_error())
        redraws += probe.redraws

    for _ in range(100):
        w = nn.init_params(model, rng.integers(1 << 62))
        batch = rng.choice(pool.size, size=16, replace=False)
        x, y = pool.features[batch], pool.labels[batch]
        logits, trace = nn.forward(w, model, x)
        g, _ = nn.backward(trace, model, nn.softmax_cross_entropy(logits, y)[1])
        record("classifier", GradientProbe(
            lambda v: nn.softmax_cross_entropy(nn.predict(w.with_values(v), model, x), y)[0],
            lambda v: [nn.forward(w.with_values(v), model, x)[1]], w.values, g.values, rng))

        critic = nn.init_params(critic_spec, rng.integers(1 << 62))
        s, a, t = rng.uniform(size=(8, 20)), rng.uniform(size=(8, 5)), rng.normal(size=8)
        _, cg = ag.critic_loss_and_grad(critic, critic_spec, s, a, t)
        record("critic", GradientProbe(
            lambda v: ag.critic_loss_and_grad(critic.with_values(v), critic_spec, s, a, t)[0],
            lambda v: [nn.forward(critic.with_values(v), critic_spec, np.hstack([s, a]))[1]],
            critic.values, cg.values, rng))

        actor = nn.init_params(actor_spec, rng.integers(1 << 62))
        ga = ag.actor_gradient(actor, critic, actor_spec, critic_spec, s)

        def chained(v):
            act, at = nn.forward(actor.with_values(v), actor_spec, s)
            return [at, nn.forward(critic, critic_spec, np.hstack([s, act]))[1]]

        record("actor", GradientProbe(
            lambda v: ag.actor_objective(actor.with_values(v), critic, actor_spec, critic_spec, s),
            chained, actor.values, ga.values, rng))
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in errors.items())
    verdict(verdicts, 1, ok, f"{detail}; {redraws} kink-straddling probes redrawn; {elapsed:.1f}s (limit 1e-4, 60s)")


# -- 2 -------------------------------------------------------------------------

def test_channel_statistics(verdicts):
    start = time.perf_counter()
    rho, slots = 0.9, 10_000
    rng = np.random.default_rng(7)
    chains = 200
    h = env.complex_gaussian(rng, chains)
    trace = np.empty((slots, chains), dtype=complex)
    for t in range(slots):
        h = env.evolve_gain(h, rho, rng)
        trace[t] = h
    # single-chain lag-1 autocorrelation, then the spread over all chains
    x = trace[:, 0]
    acf = float(np.real(np.vdot(x[:-1], x[1:])) / np.vdot(x, x).real)
    per_chain = np.real(np.sum(np.conj(trace[:-1]) * trace[1:], axis=0)) / np.sum(np.abs(trace) ** 2, axis=0)
    power = float(np.mean(np.abs(trace) ** 2))
    drift = abs(power - 1.0)
    elapsed = time.perf_counter() - start
    ok = 0.85 <= acf <= 0.95 and np.all((per_chain >= 0.85) & (per_chain <= 0.95)) and drift < 0.05 and elapsed < 10
    verdict(verdicts, 2, ok, f"lag-1 acf {acf:.4f} (all {chains} chains in [{per_chain.min():.4f}, "
                             f"{per_chain.max():.4f}]), mean power drift {100 * drift:.2f}%; {elapsed:.1f}s")


# -- 3 -------------------------------------------------------------------------

def test_bessel_accuracy(verdicts):
    xs = np.linspace(0.0, 50.0, 1000)
    err = max(abs(env.bessel_j0(x) - ref.j0_series_adaptive(x)) for x in xs)
    verdict(verdicts, 3, err < 1e-6, f"max |J0 - series| on 1,000 points in [0, 50] = {err:.2e} (limit 1e-6)")


# -- 4 -------------------------------------------------------------------------

def _formula_checks(rng):
    cfg = env.EnvConfig()
    rcfg = RewardConfig
    out = {}

    def put(name, got, want):
        out[name] = max(out.get(name, 0.0), ref.rel_err(got, want))

    for _ in range(50):
        x = rng.uniform(-250, 250)
        h = complex(*rng.normal(size=2))
        mu, D = rng.uniform(1e8, 2e9), int(rng.integers(1, 2000))
        v = env.VehicleState(0, x, h, mu, D)
        d = ref.ref_distance(x, cfg.d_y, cfg.H_r)
        rate = ref.ref_rate(cfg.B, cfg.p0, h, d, cfg.alpha, cfg.sigma2)
        put("training delay", env.local_training_delay(v, cfg), ref.ref_training_delay(D, cfg.C0, mu))
        put("distance", env.distance(v, cfg), d)
        put("rate", env.transmission_rate(v, cfg), rate)
        put("doppler", env.doppler(v, cfg), ref.ref_doppler(cfg.v, cfg.Lambda, x, cfg.d_y, cfg.H_r))
        put("upload delay", env.upload_delay(v, cfg), ref.ref_upload_delay(cfg.model_size_bits, rate))

        K = int(rng.integers(1, 9))
        lam = rng.uniform(0, 1, K)
        a = (lam >= 0.5).astype(int)
        if not a.any():
            a[np.argmax(lam)] = 1
        loss, delays = rng.uniform(0, 1000), rng.uniform(0, 3, K)
        w1, w2 = rng.uniform(0, 2, 2)
        put("reward", orc.compute_reward(lam, a, loss, delays, K, rcfg(omega1=w1, omega2=w2)),
            ref.ref_reward(lam, a, loss, delays, K, w1, w2))
        rewards, gamma = rng.normal(size=int(rng.integers(1, 40))), rng.uniform(0.01, 0.999)
        put("discounted return", orc.discounted_return(rewards, gamma), ref.ref_return(rewards, gamma))

        r, q_next = rng.normal(size=4), rng.normal(size=4)
        spec_a, spec_c = nn.mlp(4, [3], 2, output_act="sigmoid"), nn.mlp(6, [], 1)
        ta = nn.init_params(spec_a, rng.integers(1 << 62))
        # a critic with only an output bias returns that bias everywhere
        tc = nn.ParamVector(np.r_[np.zeros(6), q_next[0]], spec_c.layout)
        put("critic target", ag.critic_target(r, rng.uniform(size=(4, 4)), ta, tc, spec_a, spec_c, gamma),
            ref.ref_target(r, gamma, q_next[0]))
        critic = nn.init_params(spec_c, rng.integers(1 << 62))
        s, act, y = rng.normal(size=(5, 4)), rng.uniform(size=(5, 2)), rng.normal(size=5)
        q = [float(np.dot(np.r_[si, ai], critic.values[:6]) + critic.values[6]) for si, ai in zip(s, act)]
        put("critic loss", ag.critic_loss_and_grad(critic, spec_c, s, act, y)[0], ref.ref_critic_loss(y, q))

        t_l, t_u, m1, m2 = rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)
        put("training weight", fl.training_weight(t_l, m1), ref.ref_weight(t_l, m1))
        put("transmission weight", fl.transmission_weight(t_u, m2), ref.ref_weight(t_u, m2))
        w = nn.init_params(spec_a, rng.integers(1 << 62))
        w = w.with_values(rng.normal(size=len(w)))
        b1, b2 = fl.training_weight(t_l, m1), fl.transmission_weight(t_u, m2)
        put("weight optimize", fl.weight_optimize(w, b1, b2).values,
            [x * ref.ref_weight(t_l, m1) * ref.ref_weight(t_u, m2) for x in w.values])
        old = fl.GlobalModel(w.with_values(rng.normal(size=len(w))))
        beta = rng.uniform(0.01, 0.99)
        put("async aggregation", fl.aggregate_async(old, fl.weight_optimize(w, b1, b2), beta).params.values,
            ref.ref_async_merge(old.params.values, w.values, t_l, t_u, m1, m2, beta))
    return out


def test_exact_formula_suite(verdicts):
    errs = _formula_checks(np.random.default_rng(99))
    worst = max(errs, key=errs.get)
    ok = len(errs) == 13 and all(e <= 1e-12 for e in errs.values())
    verdict(verdicts, 4, ok, f"{len(errs)} formulas x 50 inputs, worst {worst} rel err {errs[worst]:.1e} (limit 1e-12)")


# -- shared training runs (criteria 5 and 9) -------------------------------------

@pytest.fixture(scope="module")
def trained_runs():
    cfg = SimConfig()
    runs = {}
    start = time.perf_counter()
    for seed in TRAIN_SEEDS:
        agent, train_rows = orc.train(cfg, seed)
        runs[seed] = (train_rows, orc.test(agent, cfg, seed))
    return runs, time.perf_counter() - start


def test_bad_node_exclusion(verdicts, trained_runs):
    runs, elapsed = trained_runs
    freqs = np.array([metrics.selection_frequencies(test_rows) for _, test_rows in runs.values()])
    mean = freqs.mean(axis=0)
    bad = SimConfig().data.bad_node.indices[0]
    good = np.delete(mean, bad)
    ok = mean[bad] < 0.2 and good.mean() > 0.6 and elapsed <= 1800
    verdict(verdicts, 5, ok, f"bad-vehicle selection {mean[bad]:.3f} (< 0.2), good mean {good.mean():.3f} (> 0.6) "
                             f"over {len(runs)} seeds; per-vehicle {np.round(mean, 3).tolist()}; "
                             f"train+test {elapsed / 60:.1f} min (limit 30)")


def test_reward_stabilization(verdicts, trained_runs):
    runs, _ = trained_runs
    ratios = []
    for train_rows, _ in runs.values():
        ep = metrics.episode_rewards(train_rows)
        n = len(ep) // 5
        ratios.append(float(ep[-n:].std() / ep[:n].std()))
    wins = sum(r < 0.5 for r in ratios)
    verdict(verdicts, 9, wins > len(ratios) / 2,
            f"std(last 20%) / std(first 20%) per seed {np.round(ratios, 3).tolist()}; {wins}/{len(ratios)} below 0.5")


# -- fixed-selection comparisons (criteria 6, 7, 8) --------------------------------

@pytest.fixture(scope="module")
def scheme_runs():
    cfg = SimConfig()
    return {(scheme, seed): orc.run_fixed_selection(cfg, seed, GOOD_MASK, scheme)
            for scheme in orc.SCHEMES for seed in EVAL_SEEDS}


def test_accuracy_ordering(verdicts, scheme_runs):
    acc = {s: float(np.mean([metrics.final_accuracy(scheme_runs[s, seed]) for seed in EVAL_SEEDS]))
           for s in orc.SCHEMES}
    ok = (acc["dafl"] - acc["afl"] >= 0.01 and acc["dafl"] - acc["fl"] >= 0.01
          and min(acc.values()) > 0.80)
    verdict(verdicts, 6, ok, f"final accuracy (3-seed mean) DAFL {acc['dafl']:.4f}, AFL {acc['afl']:.4f}, "
                             f"FL {acc['fl']:.4f}; margins {100 * (acc['dafl'] - acc['afl']):.2f} / "
                             f"{100 * (acc['dafl'] - acc['fl']):.2f} pp (need >= 1), all > 80%")


def test_delay_advantage(verdicts, scheme_runs):
    pairs = [(a, f) for seed in EVAL_SEEDS for a, f in zip(scheme_runs["afl", seed], scheme_runs["fl", seed])]
    same = all(a.t_l == f.t_l and a.t_u == f.t_u and a.selected == f.selected for a, f in pairs)
    wins = sum(a.mean_delay < f.round_delay for a, f in pairs)
    verdict(verdicts, 7, same and wins == len(pairs),
            f"AFL per-aggregation delay < FL round delay in {wins}/{len(pairs)} rounds; "
            f"identical trajectories: {same}")


def test_beta_sensitivity(verdicts):
    cfg = SimConfig()
    acc = {}
    for beta in (0.2, 0.9):
        variant = dataclasses.replace(cfg, fl=dataclasses.replace(cfg.fl, beta=beta))
        acc[beta] = float(np.mean([metrics.final_accuracy(orc.run_fixed_selection(variant, s, GOOD_MASK, "dafl"))
                                   for s in EVAL_SEEDS]))
    gap = acc[0.2] - acc[0.9]
    verdict(verdicts, 8, gap >= 0.05, f"final accuracy beta=0.2 {acc[0.2]:.4f} vs beta=0.9 {acc[0.9]:.4f}; "
                                      f"gap {100 * gap:.2f} pp (need >= 5)")


# -- 10 ------------------------------------------------------------------------

def test_cli_determinism(verdicts, tmp_path):
    config = tmp_path / "c.json"
    config.write_text('{"_note": "short run", "episode": {"E_max": 4}}\n')
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert cli.run_command(["train", "--config", str(config), "--seed", "11", "--output-dir", str(out)]) == 0
        assert cli.run_command(["test", "--checkpoint", str(out / "checkpoint"), "--seed", "11",
                                "--output-dir", str(out / "test")]) == 0
        outputs.append(((out / "train_metrics.csv").read_bytes(), (out / "test" / "test_metrics.csv").read_bytes()))
    same = outputs[0] == outputs[1]
    verdict(verdicts, 10, same, f"train CSV {len(outputs[0][0])} bytes, test CSV {len(outputs[0][1])} bytes; "
                                f"byte-identical across runs: {same}")
