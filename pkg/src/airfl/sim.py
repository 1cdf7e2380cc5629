"""Discrete-event simulator of grouped asynchronous and synchronous training.

Time is simulated: each group trains, signals readiness, uploads, and the
server folds the group's aggregate into the global model.  Aggregation events
are totally ordered by completion time (ties broken by lowest group index),
each event gets the next round index, and a group's staleness is the number
of rounds that landed since it last received the global model.

Mechanisms:
  air-group   grouped asynchronous over-the-air aggregation (planned groups)
  tifl        same grouped asynchronous flow, but orthogonal per-worker
              uploads inside each group (latency-tiered plan, noise-free)
  air-fedavg  synchronous over-the-air aggregation of all workers
  dynamic     synchronous over-the-air aggregation of the fastest fraction
  fedavg      synchronous orthogonal uploads of all workers (noise-free)
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import channel, grouping, learner, powerctl
from .datagen import Dataset, Partition
from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class WorkerProfile:
    """Static per-worker facts: data held, speed, and energy budget."""

    worker_id: int
    data_size: int
    class_counts: np.ndarray
    kappa: float            # heterogeneity factor, >= 1
    latency_s: float        # local training time per participation
    energy_budget_j: float
    indices: np.ndarray     # sample indices into the training dataset

    def __post_init__(self):
        if self.kappa < 1:
            raise ValidationError("kappa must be at least 1")
        if self.latency_s <= 0:
            raise ValidationError("latency must be positive")


def build_profiles(
    partition: Partition,
    kappa_rng: np.random.Generator,
    base_latency_s: float = 1.0,
    kappa_range: tuple[float, float] = (1.0, 10.0),
    energy_budget_j: float = 10.0,
) -> list[WorkerProfile]:
    """Attach heterogeneity factors and budgets to a data partition."""
    lo, hi = kappa_range
    if lo < 1 or hi < lo:
        raise ConfigurationError("kappa range must satisfy 1 <= low <= high")
    kappas = kappa_rng.uniform(lo, hi, size=partition.num_workers)
    return [
        WorkerProfile(
            worker_id=i,
            data_size=int(partition.data_size[i]),
            class_counts=partition.class_counts[i].astype(np.float64),
            kappa=float(kappas[i]),
            latency_s=float(kappas[i]) * base_latency_s,
            energy_budget_j=energy_budget_j,
            indices=partition.assignments[i],
        )
        for i in range(partition.num_workers)
    ]


@dataclass
class RoundLog:
    """One aggregation event's record."""

    round_index: int
    time_s: float
    group: int
    staleness: int
    power_scale: float | None
    denoise: float | None
    cost: float | None
    solver_iterations: int | None
    worker_energy: dict  # worker id -> joules for this event's participants
    loss: float
    accuracy: float
    cum_energy_j: float


@dataclass(frozen=True)
class SimConfig:
    """Everything one mechanism run needs besides the plan and the data."""

    learner: learner.LearnerConfig
    timing: grouping.TimingConfig
    noise_var: float = 0.001
    gain_floor: float = 0.2
    power: powerctl.PowerCtlConfig = field(default_factory=powerctl.PowerCtlConfig)
    horizon_s: float | None = None
    max_rounds: int | None = None
    dynamic_fraction: float = 0.5

    def __post_init__(self):
        if self.horizon_s is None and self.max_rounds is None:
            raise ConfigurationError("need a time horizon or a round budget")
        if self.horizon_s is not None and self.horizon_s <= 0:
            raise ConfigurationError("horizon must be positive")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ConfigurationError("round budget must be at least 1")
        if not 0 < self.dynamic_fraction <= 1:
            raise ConfigurationError("dynamic fraction must be in (0, 1]")
        if self.noise_var < 0:
            raise ConfigurationError("noise variance must be nonnegative")
        if self.gain_floor < 0:
            raise ConfigurationError("gain floor must be nonnegative")


class _Experiment:
    """Shared immutable per-run context: data views and evaluation sets."""

    def __init__(self, dataset: Dataset, partition: Partition, test: Dataset, cfg: SimConfig):
        self.cfg = cfg
        self.spec = cfg.learner.spec
        self.views = [partition.worker_view(dataset, i) for i in range(partition.num_workers)]
        self.sizes = partition.data_size.astype(np.float64)
        self.total = float(partition.total_size)
        self.train_x = dataset.features
        self.train_y = dataset.labels
        self.test_x = test.features
        self.test_y = test.labels

    def local_model(self, worker: int, w_received: np.ndarray) -> np.ndarray:
        x, y = self.views[worker]
        return learner.local_update(w_received, x, y, self.cfg.learner)

    def evaluate(self, w: np.ndarray) -> tuple[float, float]:
        train_loss = learner.loss(w, self.train_x, self.train_y, self.spec, self.cfg.learner.l2)
        acc = learner.accuracy(w, self.test_x, self.test_y, self.spec)
        return train_loss, acc


def _air_aggregate(
    exp: _Experiment,
    members: tuple,
    models: np.ndarray,
    w_prev: np.ndarray,
    cfg: SimConfig,
    streams: dict,
    budgets: np.ndarray,
):
    """One over-the-air aggregation: power control, transmission, estimate."""
    sizes = exp.sizes[list(members)]
    caps = budgets[list(members)]
    draw = channel.draw(
        streams["channel"], len(members), exp.spec.dim, cfg.noise_var, cfg.gain_floor
    )
    norms = np.linalg.norm(models, axis=1)
    w_bound = float(norms.max())
    if w_bound <= 0:
        w_bound = 1e-12  # all-zero local models carry no signal; any schedule works
    sol = powerctl.solve(
        cfg.power,
        gains=draw.gains,
        sizes=sizes,
        budgets=caps,
        w_bound=w_bound,
        group_size=float(sizes.sum()),
        noise_var=cfg.noise_var,
    )
    received, energies = channel.receive(models, sizes, sol.power_scale, draw)
    # the scale was solved against the observed max norm, so caps already hold;
    # clip defensively in case a caller ever schedules with a stale bound
    over = energies > caps + 1e-9
    if over.any():
        warnings.warn(f"clipped {int(over.sum())} transmissions to the energy budget")
        energies = np.minimum(energies, caps)
    w_new = channel.estimate_global(w_prev, received, sizes, exp.total, sol.denoise)
    return w_new, energies, sol, int(over.sum())


def _exact_aggregate(exp: _Experiment, members: tuple, models: np.ndarray, w_prev: np.ndarray) -> np.ndarray:
    """Noise-free data-size weighted aggregation over one group."""
    sizes = exp.sizes[list(members)]
    share = float(sizes.sum()) / exp.total
    return (1.0 - share) * w_prev + (sizes / exp.total) @ models


def _run_grouped(
    plan: grouping.GroupPlan,
    profiles: list[WorkerProfile],
    exp: _Experiment,
    streams: dict,
    transport: str,
    on_final=None,
) -> list[RoundLog]:
    """Event loop shared by the grouped asynchronous mechanisms."""
    cfg = exp.cfg
    upload_air = grouping.upload_time(cfg.timing)
    lat = {p.worker_id: p.latency_s for p in profiles}
    budgets = np.zeros(len(profiles))
    for p in profiles:
        budgets[p.worker_id] = p.energy_budget_j

    def upload_seconds(members) -> float:
        if transport == "air":
            return upload_air
        return len(members) * cfg.timing.oma_upload

    periods = []
    heap = []
    for j, members in enumerate(plan.groups):
        train = max(lat[w] for w in members)
        period = train + upload_seconds(members)
        periods.append(period)
        heapq.heappush(heap, (period, j))

    w_global = learner.zeros(exp.spec)
    received_model = [w_global] * len(plan.groups)
    received_version = [0] * len(plan.groups)
    logs: list[RoundLog] = []
    cum_energy = 0.0
    t = 0
    while heap:
        done, j = heapq.heappop(heap)
        if cfg.horizon_s is not None and done > cfg.horizon_s:
            break
        if cfg.max_rounds is not None and t >= cfg.max_rounds:
            break
        t += 1
        members = plan.groups[j]
        models = np.stack([exp.local_model(w, received_model[j]) for w in members])
        staleness = (t - 1) - received_version[j]
        if transport == "air":
            w_global, energies, sol, _ = _air_aggregate(
                exp, members, models, w_global, cfg, streams, budgets
            )
            energy_map = {w: float(e) for w, e in zip(members, energies)}
            scale, denoise, cost, iters = sol.power_scale, sol.denoise, sol.cost, sol.iterations
        else:
            w_global = _exact_aggregate(exp, members, models, w_global)
            energy_map = {w: 0.0 for w in members}
            scale = denoise = cost = iters = None
        received_model[j] = w_global
        received_version[j] = t
        cum_energy += sum(energy_map.values())
        loss, acc = exp.evaluate(w_global)
        logs.append(
            RoundLog(
                round_index=t,
                time_s=done,
                group=j,
                staleness=staleness,
                power_scale=scale,
                denoise=denoise,
                cost=cost,
                solver_iterations=iters,
                worker_energy=energy_map,
                loss=loss,
                accuracy=acc,
                cum_energy_j=cum_energy,
            )
        )
        heapq.heappush(heap, (done + periods[j], j))
    if on_final is not None:
        on_final(w_global)
    return logs


def _run_synchronous(
    participants: list[int],
    profiles: list[WorkerProfile],
    exp: _Experiment,
    streams: dict,
    round_seconds: float,
    transport: str,
    on_final=None,
) -> list[RoundLog]:
    """Synchronous loop: every round the participants train on the latest model."""
    cfg = exp.cfg
    budgets = np.zeros(len(profiles))
    for p in profiles:
        budgets[p.worker_id] = p.energy_budget_j
    members = tuple(sorted(participants))
    w_global = learner.zeros(exp.spec)
    logs: list[RoundLog] = []
    cum_energy = 0.0
    t = 0
    clock = 0.0
    while True:
        clock_next = clock + round_seconds
        if cfg.horizon_s is not None and clock_next > cfg.horizon_s:
            break
        if cfg.max_rounds is not None and t >= cfg.max_rounds:
            break
        t += 1
        clock = clock_next
        models = np.stack([exp.local_model(w, w_global) for w in members])
        if transport == "air":
            w_global, energies, sol, _ = _air_aggregate(
                exp, members, models, w_global, cfg, streams, budgets
            )
            energy_map = {w: float(e) for w, e in zip(members, energies)}
            scale, denoise, cost, iters = sol.power_scale, sol.denoise, sol.cost, sol.iterations
        else:
            w_global = _exact_aggregate(exp, members, models, w_global)
            energy_map = {w: 0.0 for w in members}
            scale = denoise = cost = iters = None
        cum_energy += sum(energy_map.values())
        loss, acc = exp.evaluate(w_global)
        logs.append(
            RoundLog(
                round_index=t,
                time_s=clock,
                group=0,
                staleness=0,
                power_scale=scale,
                denoise=denoise,
                cost=cost,
                solver_iterations=iters,
                worker_energy=energy_map,
                loss=loss,
                accuracy=acc,
                cum_energy_j=cum_energy,
            )
        )
    if on_final is not None:
        on_final(w_global)
    return logs


def run_air_group(
    plan: grouping.GroupPlan,
    profiles: list[WorkerProfile],
    dataset: Dataset,
    partition: Partition,
    test: Dataset,
    cfg: SimConfig,
    streams: dict,
    on_final=None,
) -> list[RoundLog]:
    """Grouped asynchronous over-the-air training under a prepared plan."""
    exp = _Experiment(dataset, partition, test, cfg)
    return _run_grouped(plan, profiles, exp, streams, "air", on_final)


def run_tifl(
    plan: grouping.GroupPlan,
    profiles: list[WorkerProfile],
    dataset: Dataset,
    partition: Partition,
    test: Dataset,
    cfg: SimConfig,
    streams: dict,
    on_final=None,
) -> list[RoundLog]:
    """Grouped asynchronous training with orthogonal uploads inside each group."""
    exp = _Experiment(dataset, partition, test, cfg)
    return _run_grouped(plan, profiles, exp, streams, "oma", on_final)


def run_fedavg(
    profiles: list[WorkerProfile],
    dataset: Dataset,
    partition: Partition,
    test: Dataset,
    cfg: SimConfig,
    streams: dict,
    on_final=None,
) -> list[RoundLog]:
    """Synchronous baseline with orthogonal, noise-free uploads of all workers."""
    exp = _Experiment(dataset, partition, test, cfg)
    ids = [p.worker_id for p in profiles]
    round_seconds = max(p.latency_s for p in profiles) + len(profiles) * cfg.timing.oma_upload
    return _run_synchronous(ids, profiles, exp, streams, round_seconds, "oma", on_final)


def run_air_fedavg(
    profiles: list[WorkerProfile],
    dataset: Dataset,
    partition: Partition,
    test: Dataset,
    cfg: SimConfig,
    streams: dict,
    on_final=None,
) -> list[RoundLog]:
    """Synchronous over-the-air baseline: all workers, one upload per round."""
    exp = _Experiment(dataset, partition, test, cfg)
    ids = [p.worker_id for p in profiles]
    round_seconds = max(p.latency_s for p in profiles) + grouping.upload_time(cfg.timing)
    return _run_synchronous(ids, profiles, exp, streams, round_seconds, "air", on_final)


def dynamic_selection(profiles: list[WorkerProfile], fraction: float) -> list[int]:
    """Ids of the fastest fraction of workers (earliest completion first)."""
    count = max(1, round(fraction * len(profiles)))
    fastest = sorted(profiles, key=lambda p: (p.latency_s, p.worker_id))[:count]
    return [p.worker_id for p in fastest]


def run_dynamic(
    profiles: list[WorkerProfile],
    dataset: Dataset,
    partition: Partition,
    test: Dataset,
    cfg: SimConfig,
    streams: dict,
    on_final=None,
) -> list[RoundLog]:
    """Synchronous over-the-air baseline aggregating the fastest fraction.

    Selection favors the workers with the earliest completion time; the rest
    stay idle, so the selection is a pure function of the latency profile.
    """
    exp = _Experiment(dataset, partition, test, cfg)
    ids = dynamic_selection(profiles, cfg.dynamic_fraction)
    by_id = {p.worker_id: p for p in profiles}
    round_seconds = max(by_id[w].latency_s for w in ids) + grouping.upload_time(cfg.timing)
    return _run_synchronous(ids, profiles, exp, streams, round_seconds, "air", on_final)


MECHANISMS = ("air-group", "tifl", "air-fedavg", "dynamic", "fedavg")
