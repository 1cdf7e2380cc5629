"""Experiment runner: single runs, sweeps, and the output directory layout.

Each run writes, under <out>/<config-hash>-seed<seed>[/<mechanism>]:

    manifest.json   resolved config echo, plan, bound report, summary
    rounds.csv      one row per aggregation event
    groups.csv      group membership with per-worker latency and data size
    summary.json    the RunSummary
    model.bin       final global model, length-prefixed little-endian float64

Sweeps additionally write a comparison.csv with one row per (value, seed,
mechanism).  Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds, datagen, learner, metrics, sim
from .config import SCHEMA, Experiment, RunConfig, build_experiment, load_config, make_plan, substreams
from .errors import AirflError, ConfigurationError


def _dispatch(exp: Experiment, mechanism: str, plan, streams, on_final):
    args = (exp.dataset, exp.partition, exp.test, exp.sim_config, streams)
    if mechanism == "air-group":
        return sim.run_air_group(plan, exp.profiles, *args, on_final=on_final)
    if mechanism == "tifl":
        return sim.run_tifl(plan, exp.profiles, *args, on_final=on_final)
    if mechanism == "air-fedavg":
        return sim.run_air_fedavg(exp.profiles, *args, on_final=on_final)
    if mechanism == "dynamic":
        return sim.run_dynamic(exp.profiles, *args, on_final=on_final)
    if mechanism == "fedavg":
        return sim.run_fedavg(exp.profiles, *args, on_final=on_final)
    raise ConfigurationError(f"unknown mechanism {mechanism!r}")


def _groups_for_output(exp: Experiment, mechanism: str, plan) -> tuple:
    if plan is not None:
        return plan.groups
    if mechanism == "dynamic":
        return (tuple(sim.dynamic_selection(exp.profiles, exp.sim_config.dynamic_fraction)),)
    return (tuple(p.worker_id for p in exp.profiles),)


def _write_groups_csv(path: Path, exp: Experiment, groups: tuple) -> None:
    by_id = {p.worker_id: p for p in exp.profiles}
    lines = ["group,worker,latency_s,data_size"]
    for j, members in enumerate(groups):
        for w in sorted(members):
            p = by_id[w]
            lines.append(f"{j},{w},{repr(p.latency_s)},{p.data_size}")
    path.write_text("\n".join(lines) + "\n")


def _bound_report(exp: Experiment, groups: tuple, plan, logs) -> dict:
    """Decay factor and residual under measured task constants."""
    if not logs:
        return {"error": "no aggregation events"}
    gamma = exp.sim_config.learner.learning_rate
    grad = bounds.estimate_grad_bound(
        exp.dataset.features, exp.dataset.labels, exp.dataset.num_classes, exp.streams["probe"]
    )
    if plan is not None:
        shares = plan.data_share
        divs = plan.divergence
    else:
        lam = exp.partition.global_props()
        counts = np.array(
            [np.sum(exp.partition.class_counts[list(g)], axis=0) for g in groups], dtype=np.float64
        )
        sizes = counts.sum(axis=1)
        shares = sizes / exp.partition.total_size
        divs = np.array([datagen.emd(counts[j] / sizes[j], lam) for j in range(len(groups))])
    inputs = {
        "strong_convexity": exp.sim_config.learner.l2,
        "smoothness": exp.smoothness,
        "learning_rate": gamma,
        "grad_bound_estimate": grad,
        "data_share": shares.tolist(),
        "divergence": divs.tolist(),
    }
    try:
        pseudo_plan = plan if plan is not None else _PlanShim(groups, shares, divs)
        params = bounds.params_from_run(
            pseudo_plan, logs, exp.sim_config.learner.l2, exp.smoothness, gamma, grad
        )
        rho = bounds.rho(params)
        delta = bounds.delta(params)
    except AirflError as exc:
        return {"inputs": inputs, "error": str(exc)}
    target = exp.conv.target_gap
    rounds = None
    if target is not None and delta < target and rho < 1:
        gap0 = exp.conv.initial_gap
        if target - delta < gap0:
            rounds = float(np.log((target - delta) / gap0) / np.log(rho))
    return {
        "inputs": inputs,
        "rho": rho,
        "delta": delta,
        "max_staleness": params.max_staleness,
        "c_max": params.c_max,
        "rounds_to_target": rounds,
    }


class _PlanShim:
    """Minimal plan-shaped carrier for planless mechanisms."""

    def __init__(self, groups, shares, divs):
        self.groups = groups
        self.data_share = shares
        self.divergence = divs


def execute_run(cfg: RunConfig, outdir: Path, axis: str = "", axis_value="") -> list[dict]:
    """Run one config (possibly mechanism=all) and write its output tree."""
    exp = build_experiment(cfg)
    mechanisms = list(sim.MECHANISMS) if cfg.run_mechanism == "all" else [cfg.run_mechanism]
    run_dir = outdir / f"{cfg.config_hash()}-seed{cfg.run_seed}"
    rows = []
    for mech in mechanisms:
        mech_dir = run_dir / mech if len(mechanisms) > 1 else run_dir
        mech_dir.mkdir(parents=True, exist_ok=True)
        plan = make_plan(exp, mech)
        streams = substreams(cfg.run_seed)  # fresh draws so mechanisms share seeds
        final = {}
        logs = _dispatch(exp, mech, plan, streams, on_final=lambda w: final.update(model=w))
        summary = metrics.summarize(logs, mech, cfg.run_thresholds)
        groups = _groups_for_output(exp, mech, plan)

        metrics.write_rounds_csv(mech_dir / "rounds.csv", logs)
        _write_groups_csv(mech_dir / "groups.csv", exp, groups)
        (mech_dir / "summary.json").write_text(summary.to_json())
        if "model" in final:
            (mech_dir / "model.bin").write_bytes(learner.model_to_bytes(final["model"]))
        manifest = {
            "config": {**cfg.to_dict(), "run_mechanism": mech},
            "config_hash": cfg.config_hash(),
            "mechanism": mech,
            "substreams": list(substreams(cfg.run_seed).keys()),
            "learning_rate": exp.sim_config.learner.learning_rate,
            "smoothness_estimate": exp.smoothness,
            "plan": json.loads(plan.to_json()) if plan is not None else None,
            "bound_report": _bound_report(exp, groups, plan, logs),
            "summary": json.loads(summary.to_json()),
        }
        (mech_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        rows.append(
            {
                "axis": axis,
                "value": axis_value,
                "seed": cfg.run_seed,
                "mechanism": mech,
                "rounds": summary.rounds,
                "mean_round_s": summary.mean_round_s,
                "jitter": summary.jitter,
                "final_loss": summary.final_loss,
                "final_accuracy": summary.final_accuracy,
                "thresholds": summary.thresholds,
                "time_to": summary.time_to,
                "energy_to": summary.energy_to,
                "run_dir": str(mech_dir),
            }
        )
    return rows


def _axis_parser(axis: str):
    section, _, key = axis.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; use section.key")
    return f"{section}_{key}", SCHEMA[section][key][1]


def _sweep_task(task) -> list[dict]:
    path, overrides, outdir, axis, value = task
    cfg = load_config(path, overrides)
    return execute_run(cfg, Path(outdir), axis=axis, axis_value=value)


def cmd_run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["run_seed"] = args.seed
    if args.mechanism is not None:
        overrides["run_mechanism"] = args.mechanism
    cfg = load_config(args.config, overrides)
    rows = execute_run(cfg, Path(args.out))
    for row in rows:
        print(f"{row['mechanism']}: {row['rounds']} rounds -> {row['run_dir']}")
    return 0


def cmd_sweep(args) -> int:
    name, parse = _axis_parser(args.axis)
    raw_values = [v for v in args.values.split(",") if v.strip() != ""]
    if not raw_values:
        raise ConfigurationError("sweep needs a nonempty value list")
    values = [parse(v) for v in raw_values]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [None]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    tasks = []
    for value in values:
        for seed in seeds:
            overrides = {name: value}
            if seed is not None:
                overrides["run_seed"] = seed
            tasks.append((args.config, overrides, str(outdir), args.axis, value))
    # validate everything up front so config errors surface before any run
    for task in tasks:
        load_config(task[0], task[1])

    rows: list[dict] = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for result in pool.map(_sweep_task, tasks):
                rows.extend(result)
    else:
        for task in tasks:
            rows.extend(_sweep_task(task))
    metrics.write_comparison_csv(outdir / "comparison.csv", rows)
    print(f"{len(rows)} runs -> {outdir / 'comparison.csv'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="airfl",
        description="Grouped asynchronous over-the-air federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("-c", "--config", required=True)
    p_run.add_argument("-o", "--out", default="runs")
    p_run.add_argument("--seed", type=int, default=None, help="override run.seed")
    p_run.add_argument("--mechanism", default=None, help="override run.mechanism")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid over one config key")
    p_sweep.add_argument("-c", "--config", required=True)
    p_sweep.add_argument("-o", "--out", default="sweep")
    p_sweep.add_argument("--axis", required=True, help="config key as section.key")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--seeds", default="", help="comma-separated seed replications")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
