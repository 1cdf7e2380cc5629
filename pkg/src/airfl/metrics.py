"""Run summaries and the delimited/JSON output formats.

All summaries are pure functions of the round logs.  CSV cells hold the
shortest round-tripping decimal representation of each float, so rewriting
the same logs is byte-identical and parsing recovers every field exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sim import RoundLog

ROUNDS_HEADER = [
    "round",
    "time_s",
    "group",
    "staleness",
    "power_scale",
    "denoise",
    "cost",
    "solver_iterations",
    "worker_energy_j",
    "loss",
    "accuracy",
    "cum_energy_j",
]

STABILITY_DROP = 0.02  # accuracy may not fall more than 2 points after crossing


@dataclass(frozen=True)
class RunSummary:
    mechanism: str
    thresholds: tuple
    time_to: tuple      # seconds, aligned with thresholds; None when unattained
    energy_to: tuple    # joules, aligned with thresholds; None when unattained
    jitter: float
    rounds: int
    mean_round_s: float
    final_loss: float
    final_accuracy: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "mechanism": self.mechanism,
                "thresholds": list(self.thresholds),
                "time_to": list(self.time_to),
                "energy_to": list(self.energy_to),
                "jitter": self.jitter,
                "rounds": self.rounds,
                "mean_round_s": self.mean_round_s,
                "final_loss": self.final_loss,
                "final_accuracy": self.final_accuracy,
            }
        )


def _stable_crossing(logs: list[RoundLog], threshold: float) -> int | None:
    """Index of the first crossing that never dips more than the drop allowance."""
    if not logs:
        return None
    acc = [r.accuracy for r in logs]
    suffix_min = list(acc)
    for i in range(len(acc) - 2, -1, -1):
        suffix_min[i] = min(acc[i], suffix_min[i + 1])
    floor = threshold - STABILITY_DROP
    for i, a in enumerate(acc):
        if a >= threshold and suffix_min[i] >= floor:
            return i
    return None


def time_to_accuracy(logs: list[RoundLog], threshold: float) -> float | None:
    """Simulated seconds until accuracy stably reaches the threshold."""
    i = _stable_crossing(logs, threshold)
    return None if i is None else logs[i].time_s


def energy_to_accuracy(logs: list[RoundLog], threshold: float) -> float | None:
    """Cumulative aggregation energy spent when accuracy stably reaches the threshold."""
    i = _stable_crossing(logs, threshold)
    return None if i is None else logs[i].cum_energy_j


def jitter(logs: list[RoundLog]) -> float:
    """Standard deviation of successive loss differences (population)."""
    if len(logs) < 2:
        return 0.0
    deltas = np.diff([r.loss for r in logs])
    return float(np.std(deltas))


def summarize(logs: list[RoundLog], mechanism: str, thresholds) -> RunSummary:
    thresholds = tuple(thresholds)
    if sorted(thresholds) != list(thresholds):
        raise ValidationError("thresholds must be nondecreasing")
    times = tuple(time_to_accuracy(logs, th) for th in thresholds)
    energies = tuple(energy_to_accuracy(logs, th) for th in thresholds)
    last = logs[-1] if logs else None
    return RunSummary(
        mechanism=mechanism,
        thresholds=thresholds,
        time_to=times,
        energy_to=energies,
        jitter=jitter(logs),
        rounds=len(logs),
        mean_round_s=(last.time_s / len(logs)) if logs else 0.0,
        final_loss=last.loss if last else float("nan"),
        final_accuracy=last.accuracy if last else float("nan"),
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _energy_field(worker_energy: dict) -> str:
    return ";".join(f"{w}={repr(float(e))}" for w, e in sorted(worker_energy.items()))


def _parse_energy(cell: str) -> dict:
    out = {}
    if not cell:
        return out
    for part in cell.split(";"):
        key, val = part.split("=")
        out[int(key)] = float(val)
    return out


def write_rounds_csv(path, logs: list[RoundLog]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(ROUNDS_HEADER)
        for r in logs:
            out.writerow(
                [
                    r.round_index,
                    _fmt(r.time_s),
                    r.group,
                    r.staleness,
                    _fmt(r.power_scale),
                    _fmt(r.denoise),
                    _fmt(r.cost),
                    _fmt(r.solver_iterations),
                    _energy_field(r.worker_energy),
                    _fmt(r.loss),
                    _fmt(r.accuracy),
                    _fmt(r.cum_energy_j),
                ]
            )


def read_rounds_csv(path) -> list[RoundLog]:
    logs = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != ROUNDS_HEADER:
            raise ValidationError(f"unexpected round CSV header: {header}")
        for row in rows:
            logs.append(
                RoundLog(
                    round_index=int(row[0]),
                    time_s=float(row[1]),
                    group=int(row[2]),
                    staleness=int(row[3]),
                    power_scale=float(row[4]) if row[4] else None,
                    denoise=float(row[5]) if row[5] else None,
                    cost=float(row[6]) if row[6] else None,
                    solver_iterations=int(row[7]) if row[7] else None,
                    worker_energy=_parse_energy(row[8]),
                    loss=float(row[9]),
                    accuracy=float(row[10]),
                    cum_energy_j=float(row[11]),
                )
            )
    return logs


COMPARISON_HEADER = [
    "axis",
    "value",
    "seed",
    "mechanism",
    "rounds",
    "mean_round_s",
    "jitter",
    "final_loss",
    "final_accuracy",
    "thresholds",
    "time_to",
    "energy_to",
    "run_dir",
]


def write_comparison_csv(path, rows: list[dict]) -> None:
    """One row per run of a sweep; list-valued cells are ;-joined."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(COMPARISON_HEADER)
        for row in rows:
            out.writerow(
                [
                    row["axis"],
                    _fmt(row["value"]),
                    row["seed"],
                    row["mechanism"],
                    row["rounds"],
                    _fmt(row["mean_round_s"]),
                    _fmt(row["jitter"]),
                    _fmt(row["final_loss"]),
                    _fmt(row["final_accuracy"]),
                    ";".join(_fmt(t) for t in row["thresholds"]),
                    ";".join(_fmt(t) for t in row["time_to"]),
                    ";".join(_fmt(t) for t in row["energy_to"]),
                    row["run_dir"],
                ]
            )


def read_comparison_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rec = dict(rec)
            rec["value"] = float(rec["value"]) if rec["value"] else None
            rec["seed"] = int(rec["seed"])
            rec["rounds"] = int(rec["rounds"])
            for key in ("mean_round_s", "jitter", "final_loss", "final_accuracy"):
                rec[key] = float(rec[key]) if rec[key] else None
            rec["thresholds"] = [float(v) for v in rec["thresholds"].split(";") if v]
            rec["time_to"] = [float(v) if v else None for v in rec["time_to"].split(";")]
            rec["energy_to"] = [float(v) if v else None for v in rec["energy_to"].split(";")]
            rows.append(rec)
    return rows
