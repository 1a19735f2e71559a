"""Vehicle fleet under one roadside unit: kinematics, fading and delays.

Units are SI throughout: metres, seconds, hertz, watts, bits and CPU
cycles per second.  The RSU antenna sits at ``(0, 0, H_r)``; vehicles drive
east along ``y = d_y`` on the ground plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import truncnorm


@dataclass(frozen=True)
class TruncatedGaussian:
    mean: float
    std: float
    lo: float
    hi: float

    def sample(self, rng: np.random.Generator, size=None):
        a = (self.lo - self.mean) / self.std
        b = (self.hi - self.mean) / self.std
        return truncnorm.rvs(a, b, loc=self.mean, scale=self.std, size=size, random_state=rng)


@dataclass(frozen=True)
class EnvConfig:
    K: int = 5
    v: float = 20.0
    slot_duration_s: float = 0.5
    H_r: float = 10.0
    d_y: float = 5.0
    B: float = 1000.0
    p0: float = 0.25
    sigma2: float = 1e-12          # 1e-9 mW
    alpha: float = 2.0
    Lambda: float = 7.0
    C0: float = 1e6
    model_size_bits: float = 5000.0
    coverage_x: tuple[float, float] = (-250.0, 250.0)
    compute_dist: TruncatedGaussian = TruncatedGaussian(1e9, 3e8, 1e8, 2e9)
    data_size_range: tuple[int, int] = (200, 400)

    def __post_init__(self):
        object.__setattr__(self, "coverage_x", tuple(float(c) for c in self.coverage_x))
        object.__setattr__(self, "data_size_range", tuple(int(c) for c in self.data_size_range))
        if isinstance(self.compute_dist, dict):
            object.__setattr__(self, "compute_dist", TruncatedGaussian(**self.compute_dist))

    def validate(self) -> list[str]:
        problems = []
        if self.K < 1:
            problems.append("env.K must be >= 1")
        if self.slot_duration_s <= 0:
            problems.append("env.slot_duration_s must be > 0")
        if self.sigma2 <= 0:
            problems.append("env.sigma2 must be > 0")
        if self.alpha < 0:
            problems.append("env.alpha must be >= 0")
        if self.Lambda <= 0:
            problems.append("env.Lambda must be > 0")
        if self.d_y <= 0:
            problems.append("env.d_y must be > 0")
        if not self.coverage_x[0] < self.coverage_x[1]:
            problems.append("env.coverage_x needs x_min < x_max")
        cd = self.compute_dist
        if cd.lo <= 0 or cd.lo >= cd.hi or cd.std <= 0:
            problems.append("env.compute_dist needs 0 < lo < hi and std > 0")
        lo, hi = self.data_size_range
        if lo < 1 or hi < lo:
            problems.append("env.data_size_range needs 1 <= lo <= hi")
        return problems

    @property
    def max_rate(self) -> float:
        """Rate at the closest possible point with unit channel power gain."""
        d2 = self.H_r ** 2 + self.d_y ** 2
        return self.B * math.log2(1.0 + self.p0 / (self.sigma2 * d2 ** (self.alpha / 2)))


@dataclass(frozen=True)
class VehicleState:
    index: int
    d_ix: float
    h: complex
    mu: float
    D: int
    is_bad: bool = False
    compute_scale: float = 1.0


# -- Bessel J0 ---------------------------------------------------------------

_J0_SERIES_LIMIT = 8.0


def _j0_series(x: float) -> float:
    q = -(x * x) / 4.0
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if abs(term) < 1e-17 * max(1.0, abs(total)):
            return total


def _j0_asymptotic(x: float) -> float:
    # Hankel expansion; terms are summed until they stop shrinking.
    p, q = 0.0, 0.0
    term = 1.0
    k = 0
    prev = math.inf
    while True:
        mag = abs(term)
        if mag > prev or mag < 1e-17:
            break
        prev = mag
        if k % 2 == 0:
            p += term if (k // 2) % 2 == 0 else -term
        else:
            q += -term if (k // 2) % 2 == 0 else term
        k += 1
        term *= (2 * k - 1) ** 2 / (k * 8.0 * x)
    chi = x - math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j0(x: float) -> float:
    """Zeroth-order Bessel function of the first kind."""
    x = abs(float(x))
    if not math.isfinite(x):
        raise ValueError("bessel_j0 needs a finite argument")
    if x < _J0_SERIES_LIMIT:
        return _j0_series(x)
    return _j0_asymptotic(x)


# -- geometry and channel ----------------------------------------------------

def distance(vehicle: VehicleState, cfg: EnvConfig) -> float:
    return math.sqrt(vehicle.d_ix ** 2 + cfg.d_y ** 2 + cfg.H_r ** 2)


def cos_theta(vehicle: VehicleState, cfg: EnvConfig) -> float:
    """Cosine between the driving direction (+x) and the uplink direction."""
    norm = distance(vehicle, cfg)
    if norm == 0.0:
        raise ValueError("vehicle coincides with the antenna")
    return -vehicle.d_ix / norm


def doppler(vehicle: VehicleState, cfg: EnvConfig) -> float:
    return cfg.v / cfg.Lambda * cos_theta(vehicle, cfg)


def correlation_rho(f_d: float, slot_duration_s: float) -> float:
    return bessel_j0(2.0 * math.pi * f_d * slot_duration_s)


def complex_gaussian(rng: np.random.Generator, size=None):
    """Circularly symmetric complex Gaussian with unit variance."""
    shape = (2,) if size is None else (2, *np.atleast_1d(size))
    re, im = rng.standard_normal(shape)
    return (re + 1j * im) / math.sqrt(2.0)


def evolve_gain(h, rho: float, rng: np.random.Generator):
    """One first-order autoregressive step of the fading coefficient (scalar or array)."""
    size = None if np.ndim(h) == 0 else np.shape(h)
    return rho * h + complex_gaussian(rng, size) * math.sqrt(max(0.0, 1.0 - rho * rho))


def transmission_rate(vehicle: VehicleState, cfg: EnvConfig) -> float:
    d = distance(vehicle, cfg)
    snr = cfg.p0 * abs(vehicle.h) ** 2 * d ** (-cfg.alpha) / cfg.sigma2
    return cfg.B * math.log2(1.0 + snr)


def local_training_delay(vehicle: VehicleState, cfg: EnvConfig) -> float:
    if vehicle.D < 1:
        raise ValueError(f"vehicle {vehicle.index} has no local data")
    if vehicle.mu <= 0:
        raise ValueError(f"vehicle {vehicle.index} has non-positive compute")
    return vehicle.D * cfg.C0 / vehicle.mu


def upload_delay(vehicle: VehicleState, cfg: EnvConfig) -> float:
    """Model upload time; ``inf`` when the link carries no bits."""
    if cfg.model_size_bits == 0:
        return 0.0
    rate = transmission_rate(vehicle, cfg)
    if rate <= 0.0:
        return math.inf
    return cfg.model_size_bits / rate


def delays(fleet: Sequence[VehicleState], cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-vehicle (local training delay, upload delay) arrays."""
    t_l = np.array([local_training_delay(v, cfg) for v in fleet])
    t_u = np.array([upload_delay(v, cfg) for v in fleet])
    return t_l, t_u


# -- fleet dynamics ----------------------------------------------------------

def reset(cfg: EnvConfig, seed, bad: Sequence[int] = ()) -> list[VehicleState]:
    rng = np.random.default_rng(seed)
    x_min, x_max = cfg.coverage_x
    d0 = rng.uniform(x_min, x_max, size=cfg.K)
    h = complex_gaussian(rng, cfg.K)
    mu = cfg.compute_dist.sample(rng, size=cfg.K)
    lo, hi = cfg.data_size_range
    D = rng.integers(lo, hi, size=cfg.K, endpoint=True)
    bad = set(bad)
    return [
        VehicleState(i, float(d0[i]), complex(h[i]), float(mu[i]), int(D[i]), is_bad=i in bad)
        for i in range(cfg.K)
    ]


def _wrap(x: float, cfg: EnvConfig) -> float:
    x_min, x_max = cfg.coverage_x
    if x > x_max:
        x = x_min + (x - x_max) % (x_max - x_min)
    return x


def advance_slot(fleet: Sequence[VehicleState], cfg: EnvConfig, seed) -> list[VehicleState]:
    """Move every vehicle one slot, evolve its fading and redraw its compute."""
    rng = np.random.default_rng(seed)
    out = []
    for v in fleet:
        moved = replace(v, d_ix=_wrap(v.d_ix + cfg.v * cfg.slot_duration_s, cfg))
        rho = correlation_rho(doppler(moved, cfg), cfg.slot_duration_s)
        h = evolve_gain(v.h, rho, rng)
        mu = float(cfg.compute_dist.sample(rng)) * v.compute_scale
        out.append(replace(moved, h=complex(h), mu=mu))
    return out
