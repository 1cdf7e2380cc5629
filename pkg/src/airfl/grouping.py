"""Worker grouping: timing model, round-count scoring and the greedy planner.

A plan partitions the workers into groups that aggregate asynchronously.  The
planner scores a candidate partition by the estimated wall-clock cost of
training to a target optimality gap:

    score = mean_round_time * (1 + staleness_estimate) * log_B(A)

where B is the per-round contraction base of the convergence bound, and
A = (target_gap - residual) / initial_gap compresses how much progress the
bound still has to make.  Groups of similar-latency workers keep rounds short;
mixing classes within each group shrinks the residual.  A similarity
constraint caps how far any member's latency may fall below its group's
slowest member, relative to the global latency spread.

The greedy planner places workers one at a time (largest data size first)
into whichever existing or fresh group minimizes the score, subject to the
similarity constraint.  A latency-tiered planner and an exhaustive-search
planner (small instances only) serve as baselines and test oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import bounds, powerctl
from .datagen import emd
from .errors import ConfigurationError, ValidationError

if TYPE_CHECKING:  # only for annotations; the runtime type lives in sim
    from .sim import WorkerProfile

_SPREAD_SLACK = 1e-12  # float slack when testing the similarity constraint


@dataclass(frozen=True)
class TimingConfig:
    """Communication timing model.

    One over-the-air upload moves the whole model in model_dim/subchannels
    symbols regardless of group size; orthogonal (sequential) uploads pay
    oma_upload_seconds per worker instead.
    """

    model_dim: int
    subchannels: int = 10
    symbol_seconds: float = 0.05
    oma_upload_seconds: float | None = None  # default: same as one air upload
    xi: float = 0.3  # similarity slack, fraction of the global latency spread

    def __post_init__(self):
        if self.model_dim < 1 or self.subchannels < 1:
            raise ConfigurationError("model_dim and subchannels must be >= 1")
        if self.symbol_seconds <= 0:
            raise ConfigurationError("symbol duration must be positive")
        if self.xi < 0:
            raise ConfigurationError("xi must be nonnegative")

    @property
    def oma_upload(self) -> float:
        return self.oma_upload_seconds if self.oma_upload_seconds is not None else upload_time(self)


@dataclass(frozen=True)
class ConvergenceInputs:
    """Scoring constants for the round-count part of the plan objective.

    These are the objective's knobs, not measured properties of the learning
    task: the defaults are normalized so that the score discriminates between
    plans (the real task constants of a barely-regularized classifier make the
    bound so loose that every plan looks identical).  target_gap=None asks the
    planner to calibrate it just above the worst single-worker residual so
    that every placement stays scoreable.
    """

    strong_convexity: float = 1.0
    smoothness: float = 2.0
    learning_rate: float = 0.375
    grad_bound: float = 1.0
    initial_gap: float | None = None  # None: resolved to the target gap
    target_gap: float | None = None   # None: calibrated from the worst singleton
    noise_var: float = 1.0
    model_norm_bound: float = 1.0
    c_max: float | None = None  # fixed override for the per-group cost estimate

    def __post_init__(self):
        lo = 0.5 / self.smoothness
        hi = 1.0 / self.smoothness
        if not lo < self.learning_rate < hi:
            raise ConfigurationError(
                f"learning rate {self.learning_rate} outside ({lo:.6g}, {hi:.6g})"
            )
        if self.initial_gap is not None and self.initial_gap <= 0:
            raise ConfigurationError("initial gap must be positive")
        if self.target_gap is not None and self.target_gap <= 0:
            raise ConfigurationError("target gap must be positive")


@dataclass(frozen=True)
class GroupPlan:
    """A worker partition with its derived timing and distribution statistics."""

    groups: tuple            # tuple of tuples of worker ids, each sorted
    data_size: np.ndarray    # D_j
    data_share: np.ndarray   # beta_j
    class_props: np.ndarray  # (M, K) per-group class proportions
    divergence: np.ndarray   # Lambda_j, L1 distance to the global class mix
    completion: np.ndarray   # L_j seconds (slowest member + one air upload)
    participation: np.ndarray  # psi_j, normalized 1/L_j
    mean_round_s: float
    staleness_est: float
    objective: float | None = None
    bound_a: float | None = None
    bound_b: float | None = None
    residual: float | None = None
    rounds_needed: float | None = None
    target_gap: float | None = None

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_of(self) -> dict:
        return {w: j for j, g in enumerate(self.groups) for w in g}

    def to_json(self) -> str:
        def opt(v):
            return None if v is None else float(v)

        return json.dumps(
            {
                "groups": [list(g) for g in self.groups],
                "data_size": self.data_size.tolist(),
                "data_share": self.data_share.tolist(),
                "class_props": self.class_props.tolist(),
                "divergence": self.divergence.tolist(),
                "completion": self.completion.tolist(),
                "participation": self.participation.tolist(),
                "mean_round_s": self.mean_round_s,
                "staleness_est": self.staleness_est,
                "objective": opt(self.objective),
                "bound_a": opt(self.bound_a),
                "bound_b": opt(self.bound_b),
                "residual": opt(self.residual),
                "rounds_needed": opt(self.rounds_needed),
                "target_gap": opt(self.target_gap),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GroupPlan":
        obj = json.loads(text)
        return cls(
            groups=tuple(tuple(g) for g in obj["groups"]),
            data_size=np.asarray(obj["data_size"]),
            data_share=np.asarray(obj["data_share"]),
            class_props=np.asarray(obj["class_props"]),
            divergence=np.asarray(obj["divergence"]),
            completion=np.asarray(obj["completion"]),
            participation=np.asarray(obj["participation"]),
            mean_round_s=obj["mean_round_s"],
            staleness_est=obj["staleness_est"],
            objective=obj["objective"],
            bound_a=obj["bound_a"],
            bound_b=obj["bound_b"],
            residual=obj["residual"],
            rounds_needed=obj["rounds_needed"],
            target_gap=obj.get("target_gap"),
        )


# ---------------------------------------------------------------- timing ---

def upload_time(cfg: TimingConfig) -> float:
    """Duration of one over-the-air model upload, independent of group size."""
    return cfg.model_dim / cfg.subchannels * cfg.symbol_seconds


def group_completion(latencies, upload: float) -> float:
    """Cycle time of one group: slowest member's training plus the upload."""
    return float(max(latencies)) + upload


def mean_round_time(completions) -> float:
    """Harmonic mean round time when groups aggregate at rates 1/L_j."""
    arr = np.asarray(completions, dtype=np.float64)
    return float(1.0 / np.sum(1.0 / arr))


def staleness_estimate(completions) -> float:
    """Estimated worst staleness: slowest group's cycle times the total rate."""
    arr = np.asarray(completions, dtype=np.float64)
    return float(arr.max() * np.sum(1.0 / arr))


def plan_psi(completions) -> np.ndarray:
    """Relative aggregation frequency per group, proportional to 1/L_j."""
    arr = np.asarray(completions, dtype=np.float64)
    inv = 1.0 / arr
    return inv / inv.sum()


# ----------------------------------------------------------- round bound ---

def round_bound(
    psi,
    beta,
    lambdas,
    conv: ConvergenceInputs,
    c_max: float,
    tau_max: float = 0.0,
) -> tuple[float, float, float, float]:
    """Rounds needed to push the convergence bound below the target gap.

    Returns (A, B, residual, rounds): B is the contraction base, A the
    remaining gap ratio, and rounds = (1 + tau_max) * log_B(A), clamped at 0
    and +inf when the residual already exceeds the target.
    """
    psi = np.asarray(psi, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mu, lsm, gamma = conv.strong_convexity, conv.smoothness, conv.learning_rate
    share = float(np.dot(psi, beta))
    b = 1.0 - (2.0 * mu * gamma - mu / lsm) * share
    if not 0.0 < b < 1.0:
        raise ConfigurationError(
            f"contraction base {b:.6g} outside (0, 1); mu, L and gamma are inconsistent"
        )
    params = bounds.ConvergenceParams(
        strong_convexity=mu,
        smoothness=lsm,
        learning_rate=gamma,
        grad_bound=conv.grad_bound,
        max_staleness=0,
        participation=psi / psi.sum(),
        data_share=beta,
        divergence=np.asarray(lambdas, dtype=np.float64),
        c_max=c_max,
    )
    resid = bounds.delta(params)
    if conv.target_gap is None or conv.initial_gap is None:
        raise ConfigurationError("round_bound needs resolved target and initial gaps")
    a = (conv.target_gap - resid) / conv.initial_gap
    if a <= 0.0:
        return a, b, resid, math.inf
    rounds = (1.0 + tau_max) * math.log(a) / math.log(b)
    return a, b, resid, max(rounds, 0.0)


def _c_estimate(cap: float, group_data_size: float, conv: ConvergenceInputs) -> float:
    """Pre-run power-control cost for a group under nominal unit gains.

    With unit gains the feasible power scale is capped by the group's tightest
    member cap, so the full per-worker solve collapses to alternating the two
    closed forms on that single cap.
    """
    w = conv.model_norm_bound
    scale = cap
    den = powerctl.optimal_denoise(scale, w, group_data_size, conv.noise_var)
    for _ in range(100):
        den = powerctl.optimal_denoise(scale, w, group_data_size, conv.noise_var)
        new_scale = min(math.sqrt(den), cap)
        if abs(new_scale - scale) <= 1e-9 * scale:
            scale = new_scale
            break
        scale = new_scale
    return powerctl.c_cost(scale, den, w, group_data_size, conv.noise_var)


def _worker_cap(p, conv: ConvergenceInputs) -> float:
    return math.sqrt(p.energy_budget_j) / (p.data_size * conv.model_norm_bound)


def resolve_target_gap(profiles: Sequence["WorkerProfile"], conv: ConvergenceInputs) -> ConvergenceInputs:
    """Fill in the automatic target and initial gaps of the plan score.

    The target gap defaults to 5% above the worst single-worker residual, so
    placing any worker alone stays scoreable (the greedy needs that for its
    first placement) while high-divergence plans sit close to the target and
    pay a steep round-count penalty.  The initial gap defaults to the target
    gap itself: in that regime log(A) is approximately -residual/target, so
    the estimated round count scales linearly with the residual and the
    planner meaningfully trades class balance against group count.
    """
    if conv.target_gap is None:
        lam_global = _global_props(profiles)
        worst = 0.0
        for p in profiles:
            lam = emd(p.class_counts / p.data_size, lam_global)
            c = conv.c_max
            if c is None:
                c = _c_estimate(_worker_cap(p, conv), float(p.data_size), conv)
            params = bounds.ConvergenceParams(
                strong_convexity=conv.strong_convexity,
                smoothness=conv.smoothness,
                learning_rate=conv.learning_rate,
                grad_bound=conv.grad_bound,
                max_staleness=0,
                participation=np.array([1.0]),
                data_share=np.array([1.0]),
                divergence=np.array([lam]),
                c_max=c,
            )
            worst = max(worst, bounds.delta(params))
        conv = replace(conv, target_gap=1.05 * worst)
    if conv.initial_gap is None:
        conv = replace(conv, initial_gap=conv.target_gap)
    return conv


def _global_props(profiles: Sequence["WorkerProfile"]) -> np.ndarray:
    counts = np.sum([p.class_counts for p in profiles], axis=0)
    return counts / counts.sum()


def latency_spread(profiles: Sequence["WorkerProfile"]) -> float:
    lats = [p.latency_s for p in profiles]
    return max(lats) - min(lats)


# ------------------------------------------------------------- planners ---

class _GroupState:
    """Mutable accumulator for one group during plan construction."""

    __slots__ = ("ids", "data_size", "class_counts", "max_l", "min_l", "min_cap", "cost")

    def __init__(self, num_classes: int):
        self.ids: list[int] = []
        self.data_size = 0
        self.class_counts = np.zeros(num_classes)
        self.max_l = -math.inf
        self.min_l = math.inf
        self.min_cap = math.inf
        self.cost = 0.0


def _score(
    states: list[_GroupState],
    conv: ConvergenceInputs,
    lam_global: np.ndarray,
    upload: float,
) -> float:
    completions = np.array([g.max_l + upload for g in states])
    total = float(sum(g.data_size for g in states))
    beta = np.array([g.data_size / total for g in states])
    psi = plan_psi(completions)
    lambdas = np.array(
        [emd(g.class_counts / g.data_size, lam_global) for g in states]
    )
    c_max = conv.c_max
    if c_max is None:
        c_max = max(g.cost for g in states)
    tau = staleness_estimate(completions)
    try:
        _, _, _, rounds = round_bound(psi, beta, lambdas, conv, c_max, tau)
    except ConfigurationError:
        return math.inf
    if math.isinf(rounds):
        return math.inf
    return mean_round_time(completions) * rounds


def _augmented(g: _GroupState, p, conv: ConvergenceInputs, num_classes: int) -> _GroupState:
    out = _GroupState(num_classes)
    out.ids = g.ids + [p.worker_id]
    out.data_size = g.data_size + p.data_size
    out.class_counts = g.class_counts + p.class_counts
    out.max_l = max(g.max_l, p.latency_s)
    out.min_l = min(g.min_l, p.latency_s)
    out.min_cap = min(g.min_cap, _worker_cap(p, conv))
    out.cost = _c_estimate(out.min_cap, float(out.data_size), conv)
    return out


def greedy_group(
    profiles: Sequence["WorkerProfile"],
    timing: TimingConfig,
    conv: ConvergenceInputs | None = None,
) -> GroupPlan:
    """Greedy plan construction, largest data size first.

    Each worker is tried against every existing group and one fresh group; it
    joins the feasible placement with the smallest plan score.  Ties keep the
    lowest group index, with the fresh group considered last, so identical
    inputs always produce identical plans.
    """
    if not profiles:
        raise ValidationError("need at least one worker")
    conv = resolve_target_gap(profiles, conv or ConvergenceInputs())
    k = len(profiles[0].class_counts)
    lam_global = _global_props(profiles)
    delta_l = latency_spread(profiles)
    allowed = timing.xi * delta_l + _SPREAD_SLACK
    upload = upload_time(timing)

    # data size descending; ties by latency so equal-size one-hot workers do
    # not arrive in class blocks (which would freeze class-pure groups early)
    order = sorted(profiles, key=lambda p: (-p.data_size, p.latency_s, p.worker_id))
    states: list[_GroupState] = []
    for p in order:
        best_obj = math.inf
        best_j = None
        best_state = None
        fresh = _GroupState(k)
        for j, g in enumerate(states + [fresh]):
            cand = _augmented(g, p, conv, k)
            if cand.max_l - cand.min_l > allowed:
                continue
            trial = states[:j] + [cand] + states[j + 1 :] if j < len(states) else states + [cand]
            obj = _score(trial, conv, lam_global, upload)
            if obj < best_obj:
                best_obj = obj
                best_j = j
                best_state = cand
        if best_state is None:
            raise ConfigurationError(
                "no scoreable placement; the target gap is below the singleton residual"
            )
        if best_j < len(states):
            states[best_j] = best_state
        else:
            states.append(best_state)
    return build_plan(tuple(tuple(sorted(g.ids)) for g in states), profiles, timing, conv)


def tifl_group(
    profiles: Sequence["WorkerProfile"],
    timing: TimingConfig,
    conv: ConvergenceInputs | None = None,
    bands: int = 5,
) -> GroupPlan:
    """Latency-tiered baseline plan.

    Sorts workers by training latency, cuts them into ``bands`` equally sized
    tiers, and splits any tier whose latency spread violates the similarity
    constraint.  Class distribution is ignored entirely.
    """
    if not profiles:
        raise ValidationError("need at least one worker")
    if bands < 1:
        raise ConfigurationError("bands must be >= 1")
    allowed = timing.xi * latency_spread(profiles) + _SPREAD_SLACK
    by_latency = sorted(profiles, key=lambda p: (p.latency_s, p.worker_id))
    tiers = [t for t in np.array_split(np.arange(len(by_latency)), bands) if len(t)]
    groups: list[tuple[int, ...]] = []
    for tier in tiers:
        start = 0
        for i in range(1, len(tier) + 1):
            if i == len(tier) or by_latency[tier[i]].latency_s - by_latency[tier[start]].latency_s > allowed:
                groups.append(tuple(sorted(by_latency[tier[m]].worker_id for m in range(start, i))))
                start = i
    if conv is not None:
        conv = resolve_target_gap(profiles, conv)
    return build_plan(tuple(groups), profiles, timing, conv)


def single_group(
    profiles: Sequence["WorkerProfile"],
    timing: TimingConfig,
    conv: ConvergenceInputs | None = None,
) -> GroupPlan:
    """All workers in one synchronous group (similarity constraint waived)."""
    ids = tuple(sorted(p.worker_id for p in profiles))
    if conv is not None:
        conv = resolve_target_gap(profiles, conv)
    return build_plan((ids,), profiles, timing, conv, enforce_similarity=False)


def exhaustive_group(
    profiles: Sequence["WorkerProfile"],
    timing: TimingConfig,
    conv: ConvergenceInputs | None = None,
    max_workers: int = 10,
) -> GroupPlan:
    """Best feasible plan by enumerating every partition of the worker set.

    Exponential (Bell-number) cost; refuses instances above ``max_workers``.
    Used as the optimality oracle for the greedy planner on small instances.
    """
    n = len(profiles)
    if n == 0:
        raise ValidationError("need at least one worker")
    if n > max_workers:
        raise ConfigurationError(f"exhaustive search limited to {max_workers} workers")
    conv = resolve_target_gap(profiles, conv or ConvergenceInputs())
    k = len(profiles[0].class_counts)
    lam_global = _global_props(profiles)
    allowed = timing.xi * latency_spread(profiles) + _SPREAD_SLACK
    upload = upload_time(timing)
    ordered = sorted(profiles, key=lambda p: p.worker_id)

    best_obj = math.inf
    best_groups = None
    states: list[_GroupState] = []

    def recurse(i: int):
        nonlocal best_obj, best_groups
        if i == n:
            obj = _score(states, conv, lam_global, upload)
            if obj < best_obj:
                best_obj = obj
                best_groups = tuple(tuple(sorted(g.ids)) for g in states)
            return
        p = ordered[i]
        for j in range(len(states)):
            cand = _augmented(states[j], p, conv, k)
            if cand.max_l - cand.min_l > allowed:
                continue
            saved = states[j]
            states[j] = cand
            recurse(i + 1)
            states[j] = saved
        states.append(_augmented(_GroupState(k), p, conv, k))
        recurse(i + 1)
        states.pop()

    recurse(0)
    if best_groups is None:
        raise ConfigurationError("no feasible partition under the similarity constraint")
    return build_plan(best_groups, profiles, timing, conv)


def build_plan(
    groups,
    profiles: Sequence["WorkerProfile"],
    timing: TimingConfig,
    conv: ConvergenceInputs | None = None,
    enforce_similarity: bool = True,
) -> GroupPlan:
    """Assemble and validate a plan from explicit group membership.

    Checks the partition property and (optionally) the latency-similarity
    constraint, then computes every derived statistic from scratch.  The
    objective block is filled only when scoring constants are provided.
    """
    by_id = {p.worker_id: p for p in profiles}
    flat = [w for g in groups for w in g]
    if len(flat) != len(set(flat)) or set(flat) != set(by_id):
        raise ValidationError("groups must partition the worker set")
    if any(len(g) == 0 for g in groups):
        raise ValidationError("groups must be nonempty")

    k = len(profiles[0].class_counts)
    lam_global = _global_props(profiles)
    upload = upload_time(timing)
    allowed = timing.xi * latency_spread(profiles) + _SPREAD_SLACK

    d_j = np.array([sum(by_id[w].data_size for w in g) for g in groups], dtype=np.float64)
    counts = np.array(
        [np.sum([by_id[w].class_counts for w in g], axis=0) for g in groups], dtype=np.float64
    )
    lats = [[by_id[w].latency_s for w in g] for g in groups]
    if enforce_similarity:
        for g_lats in lats:
            if max(g_lats) - min(g_lats) > allowed:
                raise ValidationError("a group violates the latency-similarity constraint")
    completion = np.array([group_completion(g_lats, upload) for g_lats in lats])
    props = counts / d_j[:, None]
    divergence = np.array([emd(props[j], lam_global) for j in range(len(groups))])
    beta = d_j / d_j.sum()
    psi = plan_psi(completion)
    tau = staleness_estimate(completion)

    objective = bound_a = bound_b = resid = rounds = target = None
    if conv is not None:
        conv = resolve_target_gap(profiles, conv)
        c_max = conv.c_max
        if c_max is None:
            caps = [min(_worker_cap(by_id[w], conv) for w in g) for g in groups]
            c_max = max(
                _c_estimate(cap, float(d), conv) for cap, d in zip(caps, d_j)
            )
        bound_a, bound_b, resid, rounds = round_bound(psi, beta, divergence, conv, c_max, tau)
        objective = mean_round_time(completion) * rounds if math.isfinite(rounds) else math.inf
        target = conv.target_gap

    return GroupPlan(
        groups=tuple(tuple(sorted(g)) for g in groups),
        data_size=d_j,
        data_share=beta,
        class_props=props,
        divergence=divergence,
        completion=completion,
        participation=psi,
        mean_round_s=mean_round_time(completion),
        staleness_est=tau,
        objective=objective,
        bound_a=bound_a,
        bound_b=bound_b,
        residual=resid,
        rounds_needed=rounds,
        target_gap=target,
    )
