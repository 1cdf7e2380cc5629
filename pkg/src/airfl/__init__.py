"""Desk-scale simulator of grouped asynchronous over-the-air federated learning."""

from . import bounds, channel, config, datagen, grouping, learner, metrics, powerctl, sim
from .errors import (
    AirflError,
    ChannelError,
    ConfigurationError,
    DomainError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "bounds",
    "channel",
    "config",
    "datagen",
    "grouping",
    "learner",
    "metrics",
    "powerctl",
    "sim",
    "AirflError",
    "ChannelError",
    "ConfigurationError",
    "DomainError",
    "ValidationError",
]
