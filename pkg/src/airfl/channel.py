"""Wireless multiple-access channel model for analog model aggregation.

Transmitters invert their own channel gain, so concurrently sent model
vectors superpose at the server as a data-size weighted sum plus white
Gaussian noise.  The server rescales the received signal by a denoising
factor to form its estimate of the new global model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChannelError, ConfigurationError, ValidationError


@dataclass(frozen=True)
class ChannelDraw:
    """One aggregation event's channel realization for a transmitting group.

    gains are aligned with the group's member order and strictly positive;
    noise is a length-q vector with variance noise_var per component.
    """

    gains: np.ndarray
    noise: np.ndarray
    noise_var: float

    def __post_init__(self):
        if (np.asarray(self.gains) <= 0).any():
            raise ChannelError("channel gains must be strictly positive")
        if self.noise_var < 0:
            raise ChannelError("noise variance must be nonnegative")


@dataclass(frozen=True)
class PowerSchedule:
    """Transmit-side power scaling and receive-side denoising pair."""

    power_scale: float  # multiplies each worker's data-size weighted signal
    denoise: float      # the server divides by sqrt(denoise)

    def __post_init__(self):
        for v in (self.power_scale, self.denoise):
            if not np.isfinite(v) or v <= 0:
                raise ConfigurationError("power schedule entries must be finite and positive")


def draw(
    rng: np.random.Generator,
    num_workers: int,
    dim: int,
    noise_var: float,
    gain_floor: float = 0.2,
) -> ChannelDraw:
    """Sample per-worker Rayleigh gains (unit mean power) and the noise vector.

    Gains are floored at ``gain_floor`` (truncated channel inversion): a deep
    fade would otherwise collapse the whole group's power scale, since the
    transmit budget caps scale inversely with the weakest member's gain.
    """
    gains = rng.rayleigh(scale=1.0 / np.sqrt(2.0), size=num_workers)
    gains = np.maximum(gains, gain_floor if gain_floor > 0 else 1e-12)
    if noise_var > 0:
        noise = rng.normal(0.0, np.sqrt(noise_var), size=dim)
    else:
        noise = np.zeros(dim)
    return ChannelDraw(gains=gains, noise=noise, noise_var=noise_var)


def transmit_power(data_size: float, power_scale: float, gain: float) -> float:
    """Per-worker transmit power: data size times the scale, over the gain."""
    if gain <= 0:
        raise ChannelError("channel gain must be positive")
    return data_size * power_scale / gain


def energy(power: float, w: np.ndarray) -> float:
    """Transmission energy of sending model w at the given power."""
    return float(power * power * (w @ w))


def receive(
    models: np.ndarray,
    sizes: np.ndarray,
    power_scale: float,
    chan: ChannelDraw,
) -> tuple[np.ndarray, np.ndarray]:
    """Superpose a group's transmissions at the server.

    models is (m, q) in member order, sizes is (m,).  Gains cancel against the
    transmit-side inversion, so the received vector is
    sum_i d_i * power_scale * w_i + noise.  Returns (received, per-worker
    transmission energies), the latter computed from the actual powers.
    """
    models = np.asarray(models, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    if models.ndim != 2 or models.shape[0] == 0:
        raise ValidationError("receive needs a nonempty (m, q) model block")
    if sizes.shape != (models.shape[0],) or chan.gains.shape != (models.shape[0],):
        raise ValidationError("sizes and gains must match the group size")
    if chan.noise.shape != (models.shape[1],):
        raise ValidationError("noise vector length must equal the model dimension")
    received = (sizes * power_scale) @ models + chan.noise
    powers = sizes * power_scale / chan.gains
    energies = powers**2 * np.einsum("ij,ij->i", models, models)
    return received, energies


def estimate_global(
    w_prev: np.ndarray,
    received: np.ndarray,
    sizes: np.ndarray,
    total_size: float,
    denoise: float,
) -> np.ndarray:
    """Server-side global model estimate from one aggregation event.

    Keeps the non-participating share of the previous global model and adds
    the received signal scaled by 1/(D * sqrt(denoise)).  With zero noise and
    power_scale == sqrt(denoise) this reduces to the error-free data-size
    weighted average.
    """
    if denoise <= 0:
        raise ConfigurationError("denoising factor must be positive")
    share = float(np.sum(sizes)) / float(total_size)
    return (1.0 - share) * w_prev + received / (total_size * np.sqrt(denoise))
