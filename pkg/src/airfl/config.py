"""Run configuration: INI schema, defaults, named RNG substreams.

A run is described by a flat key-value file with sections.  Every key has an
embedded default except run.seed, and the fully resolved configuration is
echoed into the run manifest so each output directory is self-describing.
All randomness in a run flows from the single seed through named substreams,
so changing how one consumer draws does not perturb the others.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, fields

import numpy as np

from . import datagen, grouping, learner, powerctl, sim
from .errors import ConfigurationError

SUBSTREAMS = ("data", "jitter", "kappa", "channel", "noise", "probe")

MECHANISM_CHOICES = sim.MECHANISMS + ("all",)
GROUPING_CHOICES = ("greedy", "tifl", "single")


def _opt(parser):
    def parse(text):
        return None if text == "" else parser(text)

    return parse


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


# section -> key -> (default, parser).  REQUIRED means the key must be present.
REQUIRED = object()
SCHEMA = {
    "run": {
        "seed": (REQUIRED, int),
        "mechanism": ("air-group", str),
        "horizon_s": (None, _opt(float)),
        "max_rounds": (None, _opt(int)),
        "thresholds": ((0.5, 0.6, 0.7, 0.8), _floats),
    },
    "data": {
        "classes": (10, int),
        "features": (20, int),
        "samples": (2000, int),
        "separation": (3.0, float),
        "test_samples": (1000, int),
        "classes_per_worker": (1, int),
        "size_jitter": (0.0, float),
    },
    "workers": {
        "count": (100, int),
        "base_latency_s": (1.0, float),
        "kappa_low": (1.0, float),
        "kappa_high": (10.0, float),
        "energy_budget_j": (10.0, float),
    },
    "channel": {
        "noise_var": (0.001, float),
        "gain_floor": (0.2, float),
        "subchannels": (10, int),
        "symbol_seconds": (0.05, float),
        "oma_upload_s": (None, _opt(float)),
    },
    "learner": {
        "learning_rate": (None, _opt(float)),
        "l2": (0.001, float),
    },
    "power": {
        "theta": (1e-3, float),
        "max_iters": (100, int),
    },
    "grouping": {
        "method": ("greedy", str),
        "xi": (0.3, float),
        "bands": (5, int),
        "fraction": (0.5, float),
        "mu": (1.0, float),
        "smoothness": (2.0, float),
        "gamma": (0.375, float),
        "grad_bound": (1.0, float),
        "target_gap": (None, _opt(float)),
        "initial_gap": (None, _opt(float)),
        "cost_noise_var": (1.0, float),
    },
}


@dataclass
class RunConfig:
    """Fully resolved configuration; attribute names are section_key."""

    run_seed: int
    run_mechanism: str
    run_horizon_s: float | None
    run_max_rounds: int | None
    run_thresholds: tuple
    data_classes: int
    data_features: int
    data_samples: int
    data_separation: float
    data_test_samples: int
    data_classes_per_worker: int
    data_size_jitter: float
    workers_count: int
    workers_base_latency_s: float
    workers_kappa_low: float
    workers_kappa_high: float
    workers_energy_budget_j: float
    channel_noise_var: float
    channel_gain_floor: float
    channel_subchannels: int
    channel_symbol_seconds: float
    channel_oma_upload_s: float | None
    learner_learning_rate: float | None
    learner_l2: float
    power_theta: float
    power_max_iters: int
    grouping_method: str
    grouping_xi: float
    grouping_bands: int
    grouping_fraction: float
    grouping_mu: float
    grouping_smoothness: float
    grouping_gamma: float
    grouping_grad_bound: float
    grouping_target_gap: float | None
    grouping_initial_gap: float | None
    grouping_cost_noise_var: float

    def validate(self) -> None:
        if self.run_mechanism not in MECHANISM_CHOICES:
            raise ConfigurationError(
                f"run.mechanism must be one of {MECHANISM_CHOICES}, got {self.run_mechanism!r}"
            )
        if self.grouping_method not in GROUPING_CHOICES:
            raise ConfigurationError(
                f"grouping.method must be one of {GROUPING_CHOICES}, got {self.grouping_method!r}"
            )
        if self.run_horizon_s is None and self.run_max_rounds is None:
            raise ConfigurationError("set run.horizon_s or run.max_rounds")
        if tuple(sorted(self.run_thresholds)) != self.run_thresholds:
            raise ConfigurationError("run.thresholds must be nondecreasing")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def config_hash(self) -> str:
        """Stable short hash of everything except the seed."""
        payload = {k: v for k, v in self.to_dict().items() if k != "run_seed"}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse an INI run file against the schema; every error names the key."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown config key {section}.{key}")

    values = {}
    for section, keys in SCHEMA.items():
        for key, (default, parse) in keys.items():
            name = f"{section}_{key}"
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    values[name] = parse(raw)
                except ValueError as exc:
                    raise ConfigurationError(f"bad value for {section}.{key}: {raw!r}") from exc
            elif default is REQUIRED:
                raise ConfigurationError(f"missing required config key {section}.{key}")
            else:
                values[name] = default
    cfg = RunConfig(**values)
    for name, value in (overrides or {}).items():
        if not hasattr(cfg, name):
            raise ConfigurationError(f"unknown override {name}")
        setattr(cfg, name, value)
    cfg.validate()
    return cfg


def substreams(seed: int) -> dict:
    """Named, independent random streams derived from the run seed."""
    children = np.random.SeedSequence(seed).spawn(len(SUBSTREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(SUBSTREAMS, children)}


@dataclass
class Experiment:
    """Everything build_experiment derived from a config, ready to run."""

    config: RunConfig
    dataset: datagen.Dataset
    test: datagen.Dataset
    partition: datagen.Partition
    profiles: list
    sim_config: sim.SimConfig
    conv: grouping.ConvergenceInputs
    smoothness: float
    streams: dict


def build_experiment(cfg: RunConfig) -> Experiment:
    """Materialize data, partition, worker profiles and runtime configs."""
    streams = substreams(cfg.run_seed)
    data_seed = int(streams["data"].integers(2**63))
    test_seed = int(streams["data"].integers(2**63))
    dataset = datagen.generate_synthetic(
        data_seed, cfg.data_classes, cfg.data_features, cfg.data_samples, cfg.data_separation
    )
    test = datagen.generate_synthetic(
        test_seed, cfg.data_classes, cfg.data_features, cfg.data_test_samples, cfg.data_separation
    )
    partition = datagen.partition_label_skew(
        dataset,
        cfg.workers_count,
        cfg.data_classes_per_worker,
        size_jitter=cfg.data_size_jitter,
        rng=streams["jitter"],
    )
    profiles = sim.build_profiles(
        partition,
        streams["kappa"],
        base_latency_s=cfg.workers_base_latency_s,
        kappa_range=(cfg.workers_kappa_low, cfg.workers_kappa_high),
        energy_budget_j=cfg.workers_energy_budget_j,
    )
    spec = learner.ModelSpec(num_classes=cfg.data_classes, num_features=cfg.data_features)
    smoothness = learner.smoothness_estimate(dataset.features, cfg.learner_l2)
    rate = cfg.learner_learning_rate
    if rate is None:
        rate = 0.75 / smoothness  # middle of the (1/(2L), 1/L) window
    lcfg = learner.LearnerConfig(spec=spec, learning_rate=rate, l2=cfg.learner_l2)
    timing = grouping.TimingConfig(
        model_dim=spec.dim,
        subchannels=cfg.channel_subchannels,
        symbol_seconds=cfg.channel_symbol_seconds,
        oma_upload_seconds=cfg.channel_oma_upload_s,
        xi=cfg.grouping_xi,
    )
    conv = grouping.ConvergenceInputs(
        strong_convexity=cfg.grouping_mu,
        smoothness=cfg.grouping_smoothness,
        learning_rate=cfg.grouping_gamma,
        grad_bound=cfg.grouping_grad_bound,
        initial_gap=cfg.grouping_initial_gap,
        target_gap=cfg.grouping_target_gap,
        noise_var=cfg.grouping_cost_noise_var,
        model_norm_bound=1.0,
    )
    sim_cfg = sim.SimConfig(
        learner=lcfg,
        timing=timing,
        noise_var=cfg.channel_noise_var,
        gain_floor=cfg.channel_gain_floor,
        power=powerctl.PowerCtlConfig(theta=cfg.power_theta, max_iters=cfg.power_max_iters),
        horizon_s=cfg.run_horizon_s,
        max_rounds=cfg.run_max_rounds,
        dynamic_fraction=cfg.grouping_fraction,
    )
    return Experiment(
        config=cfg,
        dataset=dataset,
        test=test,
        partition=partition,
        profiles=profiles,
        sim_config=sim_cfg,
        conv=conv,
        smoothness=smoothness,
        streams=streams,
    )


def make_plan(exp: Experiment, mechanism: str) -> grouping.GroupPlan | None:
    """The group plan a mechanism runs under, or None for planless baselines."""
    if mechanism == "air-group":
        if exp.config.grouping_method == "greedy":
            return grouping.greedy_group(exp.profiles, exp.sim_config.timing, exp.conv)
        if exp.config.grouping_method == "tifl":
            return grouping.tifl_group(
                exp.profiles, exp.sim_config.timing, exp.conv, bands=exp.config.grouping_bands
            )
        return grouping.single_group(exp.profiles, exp.sim_config.timing, exp.conv)
    if mechanism == "tifl":
        return grouping.tifl_group(
            exp.profiles, exp.sim_config.timing, exp.conv, bands=exp.config.grouping_bands
        )
    if mechanism == "air-fedavg":
        return grouping.single_group(exp.profiles, exp.sim_config.timing, exp.conv)
    return None
