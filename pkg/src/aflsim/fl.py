"""Local training, staleness weighting and the asynchronous/synchronous aggregators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .data import ClientDataset
from .nn import NetSpec, ParamVector

UploadHook = Callable[[int, ParamVector, np.random.Generator], ParamVector]


def default_model_spec() -> NetSpec:
    return nn.mlp(784, [64], 10)


@dataclass(frozen=True)
class FLConfig:
    l: int = 8
    eta: float = 0.05
    m1: float = 0.9
    m2: float = 0.9
    beta: float = 0.3
    batch_size: int = 32
    model_spec: NetSpec = field(default_factory=default_model_spec)

    def __post_init__(self):
        if isinstance(self.model_spec, dict):
            object.__setattr__(self, "model_spec", NetSpec.from_dict(self.model_spec))

    def validate(self) -> list[str]:
        problems = []
        if self.l < 1:
            problems.append("fl.l must be >= 1")
        if self.eta < 0:
            problems.append("fl.eta must be >= 0")
        for name in ("m1", "m2", "beta"):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"fl.{name} must lie in (0, 1)")
        if self.batch_size < 1:
            problems.append("fl.batch_size must be >= 1")
        return problems


@dataclass(frozen=True)
class GlobalModel:
    params: ParamVector
    update_count: int = 0


@dataclass(frozen=True)
class Upload:
    """One selected vehicle's contribution to a slot."""

    vehicle: int
    t_l: float
    t_u: float
    local_params: ParamVector
    local_loss: float

    @property
    def delay(self) -> float:
        return self.t_l + self.t_u


@dataclass(frozen=True)
class SlotResult:
    global_model: GlobalModel
    loss: float
    uploads: tuple[Upload, ...]     # arrival order for async, index order for sync
    round_delay: float


def dataset_loss(params: ParamVector, spec: NetSpec, data: ClientDataset) -> float:
    """Summed cross-entropy over the whole local dataset."""
    logits = nn.predict(params, spec, data.features)
    return nn.softmax_cross_entropy(logits, data.labels, reduction="sum")[0]


def local_train(global_params: ParamVector, data: ClientDataset, cfg: FLConfig, seed) -> tuple[ParamVector, float]:
    """``l`` minibatch SGD steps from the downloaded model; returns (w_k, f_k(w_k))."""
    if data.size < 1:
        raise ValueError("local training needs at least one sample")
    rng = np.random.default_rng(seed)
    spec = cfg.model_spec
    params = global_params
    batch = min(cfg.batch_size, data.size)
    for _ in range(cfg.l):
        idx = rng.choice(data.size, size=batch, replace=False)
        logits, trace = nn.forward(params, spec, data.features[idx])
        _, g_logits = nn.softmax_cross_entropy(logits, data.labels[idx], reduction="mean")
        grad, _ = nn.backward(trace, spec, g_logits)
        params = nn.sgd_step(params, grad, cfg.eta)
    return params, dataset_loss(params, spec, data)


def training_weight(t_l: float, m1: float) -> float:
    return m1 ** (t_l - 0.5)


def transmission_weight(t_u: float, m2: float) -> float:
    return m2 ** (t_u - 0.5)


def weight_optimize(w_k: ParamVector, beta1: float, beta2: float) -> ParamVector:
    return nn.scale_params(w_k, beta1 * beta2)


def aggregate_async(global_model: GlobalModel, w_kw: ParamVector, beta: float) -> GlobalModel:
    params = nn.combine_params(global_model.params, w_kw, beta, 1.0 - beta)
    return GlobalModel(params, global_model.update_count + 1)


def _train_selected(global_params, selected, datasets, cfg, rng, upload_hook) -> list[Upload]:
    selected = sorted(selected, key=lambda s: s[0])
    children = rng.spawn(len(selected))
    uploads = []
    for (i, t_l, t_u), child in zip(selected, children):
        w_k, loss = local_train(global_params, datasets[i], cfg, child)
        if upload_hook is not None:
            polluted = upload_hook(i, w_k, child)
            if polluted is not w_k:
                # the polluted model is the vehicle's local model, loss included
                w_k, loss = polluted, dataset_loss(polluted, cfg.model_spec, datasets[i])
        uploads.append(Upload(i, float(t_l), float(t_u), w_k, loss))
    return uploads


def run_afl_slot(global_model: GlobalModel, selected: Sequence[tuple[int, float, float]],
                 datasets: Sequence[ClientDataset], cfg: FLConfig, seed,
                 upload_hook: Optional[UploadHook] = None, weighted: bool = True) -> SlotResult:
    """One slot of asynchronous FL over ``selected`` = [(vehicle, T_l, T_u), ...].

    Every vehicle trains from the slot-start model; uploads are aggregated in
    ascending ``T_l + T_u`` (ties by vehicle index).  With ``weighted=False``
    the staleness weights are skipped (plain AFL).
    """
    if not selected:
        raise ValueError("asynchronous slot needs at least one selected vehicle")
    rng = np.random.default_rng(seed)
    uploads = _train_selected(global_model.params, selected, datasets, cfg, rng, upload_hook)
    arrivals = sorted(uploads, key=lambda u: (u.delay, u.vehicle))
    model = global_model
    for u in arrivals:
        w_kw = u.local_params
        if weighted:
            w_kw = weight_optimize(w_kw, training_weight(u.t_l, cfg.m1), transmission_weight(u.t_u, cfg.m2))
        model = aggregate_async(model, w_kw, cfg.beta)
    loss = float(np.mean([u.local_loss for u in uploads]))
    return SlotResult(model, loss, tuple(arrivals), max(u.delay for u in uploads))


def run_sync_fl_slot(global_model: GlobalModel, selected: Sequence[tuple[int, float, float]],
                     datasets: Sequence[ClientDataset], cfg: FLConfig, seed,
                     upload_hook: Optional[UploadHook] = None) -> SlotResult:
    """One synchronous round: data-size weighted average once every upload is in."""
    if not selected:
        raise ValueError("synchronous round needs at least one selected vehicle")
    rng = np.random.default_rng(seed)
    uploads = _train_selected(global_model.params, selected, datasets, cfg, rng, upload_hook)
    sizes = np.array([datasets[u.vehicle].size for u in uploads], dtype=np.float64)
    weights = sizes / sizes.sum()
    values = sum(w * u.local_params.values for w, u in zip(weights, uploads))
    model = GlobalModel(global_model.params.with_values(values), global_model.update_count + 1)
    loss = float(np.mean([u.local_loss for u in uploads]))
    return SlotResult(model, loss, tuple(uploads), max(u.delay for u in uploads))


def evaluate_accuracy(params: ParamVector, spec: NetSpec, test: ClientDataset) -> float:
    if test.size == 0:
        raise ValueError("empty test set")
    logits = nn.predict(params, spec, test.features)
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


def save_global(model: GlobalModel, spec: NetSpec, directory, **meta) -> None:
    """Checkpoint as ``global.params`` plus a ``global.json`` metadata file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nn.save_params(model.params, directory / "global.params")
    info = {"update_count": model.update_count, "model_spec": spec.to_dict(), **meta}
    (directory / "global.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def load_global(directory) -> tuple[GlobalModel, NetSpec, dict]:
    directory = Path(directory)
    info = json.loads((directory / "global.json").read_text())
    spec = NetSpec.from_dict(info["model_spec"])
    params = nn.load_params(directory / "global.params")
    if params.layout != spec.layout:
        raise nn.LayoutMismatch("global.params does not match its recorded model spec")
    return GlobalModel(params, int(info["update_count"])), spec, info
