"""Convergence-rate calculators and their numerical verification.

Implements the geometric decay factor and residual term of the staleness-aware
convergence bound for grouped asynchronous training, a Monte Carlo checker for
the underlying delayed-recursion inequality, and helpers that turn a finished
run into the parameters the bound needs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import learner
from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class ConvergenceParams:
    """Inputs of the convergence bound for one training configuration.

    participation, data_share and divergence are per-group arrays: the
    relative aggregation frequency, the share of the total data, and the L1
    distance between the group's class mix and the global one.
    """

    strong_convexity: float   # mu
    smoothness: float         # L
    learning_rate: float      # gamma
    grad_bound: float         # G
    max_staleness: int
    participation: np.ndarray
    data_share: np.ndarray
    divergence: np.ndarray
    c_max: float              # worst per-round aggregation error cost

    def __post_init__(self):
        if self.strong_convexity < 0 or self.strong_convexity > self.smoothness:
            raise DomainError("need 0 <= mu <= L")
        if self.max_staleness < 0:
            raise DomainError("max staleness must be nonnegative")
        psi = np.asarray(self.participation, dtype=np.float64)
        if abs(psi.sum() - 1.0) > 1e-9 or (psi <= 0).any():
            raise ValidationError("participation weights must be positive and sum to 1")
        if not (
            len(psi) == len(np.asarray(self.data_share)) == len(np.asarray(self.divergence))
        ):
            raise ValidationError("per-group arrays must have equal length")


def _weighted_share(params: ConvergenceParams) -> float:
    return float(np.dot(params.participation, params.data_share))


def contraction_base(params: ConvergenceParams) -> float:
    """The bracket 1 - (2*mu*gamma - mu/L) * sum_j psi_j * beta_j."""
    mu, lsm, gamma = params.strong_convexity, params.smoothness, params.learning_rate
    return 1.0 - (2.0 * mu * gamma - mu / lsm) * _weighted_share(params)


def rho(params: ConvergenceParams) -> float:
    """Per-round geometric decay factor of the optimality gap."""
    base = contraction_base(params)
    if params.strong_convexity == 0.0:
        warnings.warn("mu = 0 gives a degenerate decay factor of 1", stacklevel=2)
        return 1.0
    if not 0.0 < base < 1.0:
        raise DomainError(
            f"contraction base {base:.6g} outside (0, 1); check the step-size window"
        )
    return base ** (1.0 / (1.0 + params.max_staleness))


def delta(params: ConvergenceParams) -> float:
    """Residual error floor of the convergence bound."""
    mu, lsm, gamma = params.strong_convexity, params.smoothness, params.learning_rate
    denom_core = 2.0 * mu * gamma * lsm - mu
    if denom_core <= 0:
        raise DomainError("residual needs gamma > 1/(2L) and mu > 0")
    g2 = params.grad_bound**2
    per_group = gamma * lsm * np.asarray(params.divergence) ** 2 * g2 + lsm**2 * params.c_max
    num = float(np.dot(params.participation * params.data_share, per_group))
    return num / (denom_core * _weighted_share(params))


def envelope(params: ConvergenceParams, initial_gap: float, num_rounds: int) -> np.ndarray:
    """Bound on the gap at rounds 0..num_rounds: rho^t * initial_gap + delta."""
    r = rho(params)
    d = delta(params)
    t = np.arange(num_rounds + 1)
    return r**t * initial_gap + d


def empirical_gap_curve(losses, f_star: float) -> np.ndarray:
    """Optimality gap per round from a loss trajectory (index 0 = initial model)."""
    return np.asarray(losses, dtype=np.float64) - f_star


@dataclass(frozen=True)
class Lemma1Report:
    sequences: int
    steps_checked: int
    violations: int
    max_excess: float  # largest (value - bound), negative when everything holds

    @property
    def ok(self) -> bool:
        return self.violations == 0


def recursion_bound_check(
    x: float,
    y: float,
    z: float,
    max_staleness: int,
    trials: int = 50,
    horizon: int = 80,
    rng: np.random.Generator | None = None,
    q0: float = 1.0,
) -> Lemma1Report:
    """Verify the delayed-recursion bound on saturated random sequences.

    Generates sequences with Q(t) = x*Q(t-1) + y*Q(l_t) + z where the delayed
    index l_t is drawn uniformly from the admissible window
    [max(0, t-1-max_staleness), t-1], and checks
    Q(t) <= (x+y)^(t/(1+max_staleness)) * Q(0) + z/(1-x-y) at every step.
    """
    if x < 0 or y < 0 or z < 0:
        raise DomainError("x, y, z must be nonnegative")
    if x + y >= 1:
        raise DomainError("need x + y < 1")
    if rng is None:
        rng = np.random.default_rng(0)
    r = (x + y) ** (1.0 / (1.0 + max_staleness))
    d = z / (1.0 - x - y)

    violations = 0
    checked = 0
    max_excess = -math.inf
    for _ in range(trials):
        q = [q0]
        for t in range(1, horizon + 1):
            lo = max(0, t - 1 - max_staleness)
            l_t = int(rng.integers(lo, t))  # uniform over [lo, t-1]
            val = x * q[t - 1] + y * q[l_t] + z
            q.append(val)
            bound = r**t * q0 + d
            # tiny relative slack so float accumulation cannot fake a violation
            excess = val - bound * (1.0 + 1e-12) - 1e-12
            checked += 1
            max_excess = max(max_excess, excess)
            if excess > 0:
                violations += 1
    return Lemma1Report(
        sequences=trials, steps_checked=checked, violations=violations, max_excess=max_excess
    )


def recursion_bound_monte_carlo(
    num_draws: int,
    seed: int = 0,
    max_staleness_cap: int = 10,
    trials_per_draw: int = 1,
    horizon: int = 60,
) -> Lemma1Report:
    """Random admissible (x, y, z, staleness) draws, each checked at saturation."""
    rng = np.random.default_rng(seed)
    total_checked = 0
    total_violations = 0
    worst = -math.inf
    for _ in range(num_draws):
        x = rng.uniform(0.0, 1.0)
        y = rng.uniform(0.0, 1.0 - x)
        if x + y >= 1.0:  # guard the open constraint at float edges
            x *= 0.999
            y *= 0.999
        z = rng.uniform(0.0, 2.0)
        tau = int(rng.integers(0, max_staleness_cap + 1))
        rep = recursion_bound_check(
            x, y, z, tau, trials=trials_per_draw, horizon=horizon, rng=rng,
            q0=float(rng.uniform(0.1, 10.0)),
        )
        total_checked += rep.steps_checked
        total_violations += rep.violations
        worst = max(worst, rep.max_excess)
    return Lemma1Report(
        sequences=num_draws,
        steps_checked=total_checked,
        violations=total_violations,
        max_excess=worst,
    )


def estimate_grad_bound(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    rng: np.random.Generator,
    num_probes: int = 8,
    scales=(0.0, 0.5, 1.0, 2.0),
) -> float:
    """Largest per-class log-probability gradient norm over random probe models.

    This is a measurement, not a certified bound: it probes random models at a
    few norm scales and reports the maximum over classes and probes.
    """
    spec = learner.ModelSpec(num_classes=num_classes, num_features=features.shape[1])
    worst = 0.0
    ones = np.ones((features.shape[0], 1))
    x1 = np.hstack([features, ones])
    for scale in scales:
        for _ in range(num_probes if scale > 0 else 1):
            w = scale * rng.normal(size=spec.dim)
            p = learner._probs(w, features, spec)
            for k in range(num_classes):
                mask = labels == k
                if not mask.any():
                    continue
                # gradient of mean-over-class-k log p_k w.r.t. the flat model
                coeff = -p[mask].copy()
                coeff[:, k] += 1.0
                g = coeff.T @ x1[mask] / mask.sum()
                worst = max(worst, float(np.linalg.norm(g)))
    return worst


def params_from_run(
    plan,
    logs,
    strong_convexity: float,
    smoothness: float,
    learning_rate: float,
    grad_bound: float,
) -> ConvergenceParams:
    """Assemble bound parameters from a finished run's plan and round logs.

    Participation frequencies, the staleness cap and the worst per-round cost
    are all observed quantities; data shares and class divergences come from
    the plan.
    """
    if not logs:
        raise ValidationError("need at least one logged round")
    m = len(plan.groups)
    counts = np.zeros(m)
    for rec in logs:
        counts[rec.group] += 1
    if (counts == 0).any():
        # groups that never aggregated carry no weight; give them a vanishing one
        counts = np.maximum(counts, 1e-9)
    psi = counts / counts.sum()
    tau = max(rec.staleness for rec in logs)
    c_max = max((rec.cost for rec in logs if rec.cost is not None), default=0.0)
    return ConvergenceParams(
        strong_convexity=strong_convexity,
        smoothness=smoothness,
        learning_rate=learning_rate,
        grad_bound=grad_bound,
        max_staleness=int(tau),
        participation=psi,
        data_share=np.asarray(plan.data_share, dtype=np.float64),
        divergence=np.asarray(plan.divergence, dtype=np.float64),
        c_max=float(c_max),
    )
