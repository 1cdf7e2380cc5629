"""Alternating power control for one over-the-air aggregation event.

Chooses the transmit power scale and the server denoising factor to minimize
the per-round aggregation error cost

    c(scale, denoise) = (scale/sqrt(denoise) - 1)^2 * w_bound^2
                        + noise_var / (group_size^2 * denoise)

subject to each member's per-round energy budget.  Both coordinate updates
have closed forms, so the solver just alternates them until the relative
change of both factors drops below a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, ValidationError


@dataclass(frozen=True)
class PowerCtlConfig:
    theta: float = 1e-3        # relative convergence threshold on both factors
    max_iters: int = 100
    init_scale: float | None = None  # default: the tightest energy cap

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ConfigurationError("theta must lie in (0, 1)")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")


@dataclass(frozen=True)
class PowerSolution:
    power_scale: float
    denoise: float
    cost: float
    iterations: int
    converged: bool
    cost_trace: tuple  # cost after every half-step, for descent checks


def c_cost(power_scale: float, denoise: float, w_bound: float, group_size: float, noise_var: float) -> float:
    """Aggregation error cost of one event under a given power schedule."""
    if denoise <= 0:
        raise DomainError("denoising factor must be positive")
    if power_scale <= 0 or w_bound <= 0 or group_size <= 0:
        raise DomainError("scale, model bound and group size must be positive")
    if noise_var < 0:
        raise DomainError("noise variance must be nonnegative")
    mismatch = power_scale / math.sqrt(denoise) - 1.0
    return mismatch * mismatch * w_bound * w_bound + noise_var / (group_size * group_size * denoise)


def optimal_denoise(power_scale: float, w_bound: float, group_size: float, noise_var: float) -> float:
    """Cost-minimizing denoising factor for a fixed power scale (closed form)."""
    if power_scale <= 0 or w_bound <= 0:
        raise DomainError("scale and model bound must be positive")
    s2w2 = power_scale * power_scale * w_bound * w_bound
    num = s2w2 + noise_var / (group_size * group_size)
    return (num / (power_scale * w_bound * w_bound)) ** 2


def energy_caps(gains, sizes, budgets, w_bound: float) -> np.ndarray:
    """Largest feasible power scale per worker under its energy budget."""
    gains = np.asarray(gains, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    budgets = np.asarray(budgets, dtype=np.float64)
    if gains.size == 0:
        raise ValidationError("need at least one worker")
    if (gains <= 0).any() or (sizes <= 0).any() or (budgets <= 0).any() or w_bound <= 0:
        raise DomainError("gains, sizes, budgets and model bound must be positive")
    return gains * np.sqrt(budgets) / (sizes * w_bound)


def optimal_scale(denoise: float, w_bound: float, gains, sizes, budgets) -> float:
    """Cost-minimizing power scale for a fixed denoising factor.

    The unconstrained optimum is sqrt(denoise); each worker's energy budget
    caps the scale, so the result is the minimum over the optimum and all caps.
    """
    if denoise <= 0:
        raise DomainError("denoising factor must be positive")
    caps = energy_caps(gains, sizes, budgets, w_bound)
    return float(min(math.sqrt(denoise), caps.min()))


def solve(
    cfg: PowerCtlConfig,
    gains,
    sizes,
    budgets,
    w_bound: float,
    group_size: float,
    noise_var: float,
) -> PowerSolution:
    """Alternate the two closed-form updates until both factors settle.

    Returns the last iterate with converged=False if the iteration budget runs
    out; the cost trace records the value after every half-step so callers can
    assert monotone descent.
    """
    caps = energy_caps(gains, sizes, budgets, w_bound)
    scale = cfg.init_scale if cfg.init_scale is not None else float(caps.min())
    if scale <= 0:
        raise ConfigurationError("initial power scale must be positive")
    denoise = optimal_denoise(scale, w_bound, group_size, noise_var)
    trace = [c_cost(scale, denoise, w_bound, group_size, noise_var)]

    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        prev_scale, prev_denoise = scale, denoise
        denoise = optimal_denoise(scale, w_bound, group_size, noise_var)
        trace.append(c_cost(scale, denoise, w_bound, group_size, noise_var))
        scale = optimal_scale(denoise, w_bound, gains, sizes, budgets)
        trace.append(c_cost(scale, denoise, w_bound, group_size, noise_var))
        if (
            abs(scale - prev_scale) / prev_scale <= cfg.theta
            and abs(denoise - prev_denoise) / prev_denoise <= cfg.theta
        ):
            converged = True
            break

    return PowerSolution(
        power_scale=scale,
        denoise=denoise,
        cost=trace[-1],
        iterations=iterations,
        converged=converged,
        cost_trace=tuple(trace),
    )
