"""Per-slot metrics rows, CSV persistence and run summaries."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCALAR_COLUMNS = ("episode", "slot", "reward", "afl_loss", "accuracy", "mean_delay", "round_delay")
VEHICLE_COLUMNS = ("lambda", "t_l", "t_u", "selected")


@dataclass(frozen=True)
class MetricsRecord:
    episode: int
    slot: int
    reward: float
    afl_loss: float
    accuracy: float
    mean_delay: float       # mean T_l + T_u over the selected vehicles
    round_delay: float      # max T_l + T_u over the selected vehicles
    lam: tuple[float, ...]
    t_l: tuple[float, ...]
    t_u: tuple[float, ...]
    selected: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.selected)


def columns(K: int) -> list[str]:
    cols = list(SCALAR_COLUMNS)
    for name in VEHICLE_COLUMNS:
        cols += [f"{name}_{i}" for i in range(K)]
    return cols


def fmt(x: float) -> str:
    return format(float(x), ".9g")


def _row(rec: MetricsRecord) -> list[str]:
    row = [str(rec.episode), str(rec.slot)]
    row += [fmt(getattr(rec, c)) for c in SCALAR_COLUMNS[2:]]
    row += [fmt(x) for x in rec.lam]
    row += [fmt(x) for x in rec.t_l]
    row += [fmt(x) for x in rec.t_u]
    row += [str(int(x)) for x in rec.selected]
    return row


def emit_metrics(records: Sequence[MetricsRecord], path, K: int) -> None:
    """RFC-4180 CSV with a header row; floats carry 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns(K))
        for rec in records:
            writer.writerow(_row(rec))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = (len(header) - len(SCALAR_COLUMNS)) // len(VEHICLE_COLUMNS)
        if header != columns(K):
            raise ValueError(f"{path}: unexpected metrics header")
        out = []
        for row in reader:
            n = len(SCALAR_COLUMNS)
            veh = [row[n + j * K:n + (j + 1) * K] for j in range(len(VEHICLE_COLUMNS))]
            out.append(MetricsRecord(
                int(row[0]), int(row[1]), *(float(x) for x in row[2:n]),
                lam=tuple(float(x) for x in veh[0]),
                t_l=tuple(float(x) for x in veh[1]),
                t_u=tuple(float(x) for x in veh[2]),
                selected=tuple(int(x) for x in veh[3]),
            ))
        return out


def episode_rewards(records: Iterable[MetricsRecord]) -> np.ndarray:
    """Sum of slot rewards per episode, in episode order."""
    totals: dict[int, float] = {}
    for rec in records:
        totals[rec.episode] = totals.get(rec.episode, 0.0) + rec.reward
    return np.array([totals[e] for e in sorted(totals)])


def final_accuracy(records: Sequence[MetricsRecord]) -> float:
    """Mean over episodes of the accuracy reached in each episode's last slot."""
    last: dict[int, MetricsRecord] = {}
    for rec in records:
        if rec.episode not in last or rec.slot > last[rec.episode].slot:
            last[rec.episode] = rec
    accs = [r.accuracy for r in last.values() if not math.isnan(r.accuracy)]
    return float(np.mean(accs)) if accs else math.nan


def selection_frequencies(records: Sequence[MetricsRecord]) -> list[float]:
    if not records:
        return []
    return np.mean([r.selected for r in records], axis=0).tolist()


def summarize(records: Sequence[MetricsRecord]) -> dict:
    n = len(records)
    tail = records[n - max(1, math.ceil(0.1 * n)):] if n else []
    return {
        "rows": n,
        "final_accuracy": final_accuracy(records) if n else None,
        "mean_reward_last_10pct": float(np.mean([r.reward for r in tail])) if n else None,
        "selection_frequency": selection_frequencies(records),
    }


def write_summary(records: Sequence[MetricsRecord], path, extra: dict | None = None) -> dict:
    summary = summarize(records)
    if extra:
        summary.update(extra)
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return summary
