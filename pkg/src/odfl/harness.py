"""Experiment harness: JSON-configured runs, deterministic metrics CSVs, the
persistent transition log feeding offline pretraining, and the comparison and
weight-ablation studies.

Every command is a pure function of its config (seeds included), so reruns
produce bit-identical outputs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import baselines, dqn
from .baselines import GaConfig, TabularAgent, TabularConfig
from .core import ModelSpec, Transition
from .cost import ObjectiveWeights
from .data import DatasetConfig
from .dqn import AgentConfig, DqnAgent, EpisodeTrace
from .env import EnvConfig, MobilityModel, OnDemandEnv

METRICS_SCHEMA = "odfl-metrics-v1"
SELECTORS = ("dqn", "random", "tabular", "ga")

# Weight-ablation scenarios: which objectives stay on, renormalized to sum 1.
ABLATION_SCENARIOS = {
    "main": (1.0, 1.0, 1.0, 1.0),
    "run1": (1.0, 0.0, 1.0, 1.0),
    "run2": (0.0, 1.0, 0.0, 1.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    mobility: MobilityModel
    dataset: DatasetConfig
    model_spec: ModelSpec
    weights: ObjectiveWeights
    agent: AgentConfig
    hidden: tuple[int, ...] = (128, 256, 128)
    selector: str = "dqn"
    episodes: int = 30
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    target_accuracy: float = 0.60
    output_dir: str = "out"
    random_fraction: float = 0.2
    tabular: TabularConfig = TabularConfig()
    ga: GaConfig = GaConfig()

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0.0 <= self.target_accuracy <= 1.0:
            raise ValueError("target_accuracy must lie in [0, 1]")
        if not 0.0 < self.random_fraction <= 1.0:
            raise ValueError("random_fraction must lie in (0, 1]")


def default_config(output_dir: str = "out") -> ExperimentConfig:
    """Desk-scale defaults: 40 devices, 5 areas, 50 rounds, 30 episodes."""
    env = EnvConfig()
    return ExperimentConfig(
        env=env,
        mobility=MobilityModel.uniform(
            env.num_areas,
            dwell_mean=16.0,
            mobile_fraction=0.35,
            mobile_dwell_mean=2.0,
        ),
        dataset=DatasetConfig(
            num_classes=12,
            feature_dim=8,
            area_skew=0.12,
            records_per_round_static=3,
            records_per_move=6,
            test_set_size=600,
        ),
        model_spec=ModelSpec(cpu=1.0, memory=1.0, diskspace=1.0, battery=1.0),
        weights=ObjectiveWeights.equal(),
        agent=AgentConfig(max_selected=16),
        output_dir=output_dir,
    )


def high_mobility_config(output_dir: str = "out-hm") -> ExperimentConfig:
    """Stress scenario: most devices churn areas quickly, so uninformed
    selection loses many updates to mid-round departures."""
    base = default_config(output_dir)
    env = replace(base.env, infeasible_fraction=0.3)
    return replace(
        base,
        env=env,
        mobility=MobilityModel.uniform(
            env.num_areas,
            dwell_mean=10.0,
            mobile_fraction=0.6,
            mobile_dwell_mean=1.5,
        ),
    )


# ------------------------------------------------------------- config (de)ser


def _merge_dataclass(instance, overrides: dict | None, coerce: dict | None = None):
    if not overrides:
        return instance
    valid = {f.name for f in fields(instance)}
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    cleaned = dict(overrides)
    for key, fn in (coerce or {}).items():
        if key in cleaned:
            cleaned[key] = fn(cleaned[key])
    return replace(instance, **cleaned)


def _mobility_from_dict(obj: dict | None, num_areas: int, base: MobilityModel) -> MobilityModel:
    if not obj:
        if base.num_areas == num_areas:
            return base
        return MobilityModel.uniform(
            num_areas,
            base.dwell_mean,
            high_mobility_threshold=base.high_mobility_threshold,
            mobile_fraction=base.mobile_fraction,
            mobile_dwell_mean=base.mobile_dwell_mean,
        )
    obj = dict(obj)
    transition = obj.pop("transition", "uniform")
    kwargs = {
        "dwell_mean": obj.pop("dwell_mean", base.dwell_mean),
        "high_mobility_threshold": obj.pop(
            "high_mobility_threshold", base.high_mobility_threshold
        ),
        "mobile_fraction": obj.pop("mobile_fraction", base.mobile_fraction),
        "mobile_dwell_mean": obj.pop("mobile_dwell_mean", base.mobile_dwell_mean),
    }
    if obj:
        raise ValueError(f"unknown mobility keys: {', '.join(sorted(obj))}")
    if isinstance(transition, str):
        if transition != "uniform":
            raise ValueError("transition must be 'uniform' or an explicit matrix")
        return MobilityModel.uniform(num_areas, **kwargs)
    return MobilityModel(np.asarray(transition, dtype=float), **kwargs)


def config_from_dict(obj: dict) -> ExperimentConfig:
    """Build a full config from a (possibly partial) JSON document; omitted
    sections fall back to the defaults. Weights are renormalized to sum 1."""
    base = default_config()
    known = {
        "env", "mobility", "dataset", "model_spec", "weights", "agent", "tabular",
        "ga", "hidden", "selector", "episodes", "seeds", "target_accuracy",
        "output_dir", "random_fraction",
    }
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    env = _merge_dataclass(base.env, obj.get("env"), coerce={"task_hidden": tuple})
    mobility = _mobility_from_dict(obj.get("mobility"), env.num_areas, base.mobility)
    weights_obj = obj.get("weights")
    if weights_obj:
        weights = ObjectiveWeights.normalized(
            weights_obj.get("w1", 0.0),
            weights_obj.get("w2", 0.0),
            weights_obj.get("w3", 0.0),
            weights_obj.get("w4", 0.0),
        )
    else:
        weights = base.weights
    return ExperimentConfig(
        env=env,
        mobility=mobility,
        dataset=_merge_dataclass(base.dataset, obj.get("dataset")),
        model_spec=_merge_dataclass(base.model_spec, obj.get("model_spec")),
        weights=weights,
        agent=_merge_dataclass(
            base.agent, obj.get("agent"), coerce={"max_selected": lambda v: v}
        ),
        hidden=tuple(obj.get("hidden", base.hidden)),
        selector=obj.get("selector", base.selector),
        episodes=int(obj.get("episodes", base.episodes)),
        seeds=tuple(obj.get("seeds", base.seeds)),
        target_accuracy=float(obj.get("target_accuracy", base.target_accuracy)),
        output_dir=str(obj.get("output_dir", base.output_dir)),
        random_fraction=float(obj.get("random_fraction", base.random_fraction)),
        tabular=_merge_dataclass(base.tabular, obj.get("tabular")),
        ga=_merge_dataclass(base.ga, obj.get("ga")),
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------- experiment


def build_env(config: ExperimentConfig, seed: int) -> OnDemandEnv:
    return OnDemandEnv(
        replace(config.env, seed=seed),
        config.mobility,
        config.dataset,
        config.model_spec,
        config.weights,
    )


def _run_policy_episode(
    env: OnDemandEnv,
    act: Callable,
    observe: Callable | None = None,
) -> EpisodeTrace:
    """Shared round loop for the non-learning and tabular selectors."""
    state = env.state
    trace = EpisodeTrace()
    for _ in range(env.config.rounds):
        devices_before = list(env.devices)
        action = act(state, devices_before)
        next_state, cost, report = env.step(action)
        if observe is not None:
            observe(state, devices_before, action, cost.total, next_state, list(env.devices))
        trace.costs.append(cost)
        trace.reports.append(report)
        trace.transitions.append(
            Transition(s=state, a=action, c=cost.total, s_next=next_state)
        )
        trace.volumes.append(env.snapshot_data_volume())
        state = next_state
    return trace


def run_seed(
    config: ExperimentConfig, seed: int
) -> tuple[list[EpisodeTrace], DqnAgent | None]:
    """All episodes of one selector on one seeded environment."""
    env = build_env(config, seed)
    agent: DqnAgent | None = None
    tab: TabularAgent | None = None
    if config.selector == "dqn":
        agent = DqnAgent(
            n=config.env.n,
            num_areas=config.env.num_areas,
            horizon=config.env.rounds,
            config=config.agent,
            hidden=config.hidden,
            seed=seed,
        )
    elif config.selector == "tabular":
        tab = TabularAgent(config.env.rounds, config.tabular, seed=seed)
    selector_rng = np.random.default_rng(np.random.SeedSequence([seed, 401]))

    traces: list[EpisodeTrace] = []
    for episode in range(config.episodes):
        env.reset(episode)
        if config.selector == "dqn":
            assert agent is not None
            traces.append(dqn.run_episode(agent, env))
        elif config.selector == "random":
            traces.append(
                _run_policy_episode(
                    env,
                    lambda s, devs: baselines.random_select(
                        config.env.n, config.random_fraction, selector_rng
                    ),
                )
            )
        elif config.selector == "tabular":
            assert tab is not None
            traces.append(_run_policy_episode(env, tab.act, tab.observe))
        else:  # ga
            traces.append(
                _run_policy_episode(
                    env,
                    lambda s, devs: baselines.ga_select(
                        s, devs, env.cost_oracle(), config.ga, selector_rng,
                        batch_cost_fn=env.batch_cost_oracle(),
                    ),
                )
            )
    return traces, agent


def _metrics_header(num_areas: int) -> list[str]:
    return [
        "run", "seed", "episode", "round", "accepted", "global_accuracy", "ac",
        "c1", "c2", "c3", "c4", "pun", "total_cost", "n_selected", "n_received",
    ] + [f"area_records_{a}" for a in range(num_areas)]


def _trace_rows(
    run_id: str, seed: int, episode: int, trace: EpisodeTrace
) -> list[list]:
    rows = []
    for r, (cost, report, transition, volume) in enumerate(
        zip(trace.costs, trace.reports, trace.transitions, trace.volumes)
    ):
        rows.append(
            [
                run_id, seed, episode, r,
                int(report.accepted),
                repr(report.global_accuracy),
                repr(transition.s_next.ac),
                repr(cost.c1), repr(cost.c2), repr(cost.c3), repr(cost.c4),
                cost.pun, repr(cost.total),
                len(report.selected), len(report.received),
            ]
            + [int(v) for v in volume]
        )
    return rows


@dataclass
class RunResult:
    """Output paths plus per-seed final-episode statistics."""

    paths: dict[str, str]
    stats: dict[int, dict[str, float]]

    def median(self, key: str) -> float:
        return float(np.median([s[key] for s in self.stats.values()]))

    def mean(self, key: str) -> float:
        return float(np.mean([s[key] for s in self.stats.values()]))


def run_experiment(config: ExperimentConfig, run_id: str | None = None) -> RunResult:
    """Run the configured selector over every seed; stream metrics to CSV and
    transitions to the JSONL log repository."""
    run_id = run_id or config.selector
    os.makedirs(config.output_dir, exist_ok=True)
    metrics_path = os.path.join(config.output_dir, "metrics.csv")
    log_path = os.path.join(config.output_dir, "transitions.jsonl")
    open(log_path, "w").close()
    paths = {"metrics": metrics_path, "transitions": log_path}
    stats: dict[int, dict[str, float]] = {}
    with open(metrics_path, "w", newline="") as fh:
        fh.write(f"# {METRICS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(_metrics_header(config.env.num_areas))
        for seed in config.seeds:
            traces, agent = run_seed(config, seed)
            for episode, trace in enumerate(traces):
                writer.writerows(_trace_rows(run_id, seed, episode, trace))
                dqn.append_transitions(log_path, trace.transitions)
            stats[seed] = final_episode_stats(
                traces, config.target_accuracy, config.env.rounds
            )
            if agent is not None:
                model_path = os.path.join(config.output_dir, f"model_seed{seed}.json")
                dqn.save_agent(model_path, agent)
                paths[f"model_seed{seed}"] = model_path
    return RunResult(paths=paths, stats=stats)


# ------------------------------------------------------------------ analysis


def rounds_to_target(trace: EpisodeTrace, target: float, horizon: int) -> int:
    """Rounds needed to first reach the target accuracy; horizon+1 if never."""
    for r, report in enumerate(trace.reports):
        if report.global_accuracy >= target:
            return r + 1
    return horizon + 1


def final_episode_stats(
    traces: list[EpisodeTrace], target: float, horizon: int
) -> dict[str, float]:
    last = traces[-1]
    return {
        "rounds_to_target": rounds_to_target(last, target, horizon),
        "accepted_fraction": last.accepted_fraction(),
        "final_accuracy": last.reports[-1].global_accuracy,
        "mean_cost": last.mean_cost(),
    }


def pretrain_command(
    log_path: str, config: ExperimentConfig, epochs: int, out_path: str
) -> list[float]:
    """Offline pretraining from a transition log into a mature-model file."""
    transitions = dqn.read_transitions(log_path)
    if not transitions:
        raise ValueError(f"transition log {log_path} is empty")
    agent = DqnAgent(
        n=config.env.n,
        num_areas=config.env.num_areas,
        horizon=config.env.rounds,
        config=config.agent,
        hidden=config.hidden,
        seed=config.env.seed,
    )
    losses = dqn.pretrain_master(transitions, agent, epochs)
    dqn.save_agent(out_path, agent)
    return losses


def compare_command(config: ExperimentConfig) -> list[dict]:
    """Run every selector on the shared seeds and summarize rounds-to-target,
    accepted fraction, and final accuracy (each from the final episode)."""
    rows = []
    for selector in SELECTORS:
        sub = replace(
            config,
            selector=selector,
            output_dir=os.path.join(config.output_dir, selector),
        )
        result = run_experiment(sub, run_id=selector)
        rows.append(
            {
                "selector": selector,
                "median_rounds_to_target": result.median("rounds_to_target"),
                "mean_accepted_fraction": result.mean("accepted_fraction"),
                "mean_final_accuracy": result.mean("final_accuracy"),
            }
        )
    _write_summary_csv(os.path.join(config.output_dir, "compare.csv"), rows)
    return rows


def ablation_command(config: ExperimentConfig) -> list[dict]:
    """Run the three weight scenarios on shared seeds with the DQN selector."""
    rows = []
    for name, raw in ABLATION_SCENARIOS.items():
        weights = ObjectiveWeights.normalized(*raw)
        sub = replace(
            config,
            selector="dqn",
            weights=weights,
            output_dir=os.path.join(config.output_dir, name),
        )
        result = run_experiment(sub, run_id=name)
        meta = {
            "scenario": name,
            "weights": list(weights.as_tuple()),
            "rounds_to_target_per_seed": {
                str(seed): s["rounds_to_target"] for seed, s in result.stats.items()
            },
        }
        with open(os.path.join(sub.output_dir, "scenario.json"), "w") as fh:
            json.dump(meta, fh, indent=2)
        rows.append(
            {
                "scenario": name,
                "w1": weights.w1, "w2": weights.w2,
                "w3": weights.w3, "w4": weights.w4,
                "median_rounds_to_target": result.median("rounds_to_target"),
                "mean_final_accuracy": result.mean("final_accuracy"),
            }
        )
    _write_summary_csv(os.path.join(config.output_dir, "ablation.csv"), rows)
    return rows


def _write_summary_csv(path: str, rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(rows[0].keys()))
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])


def format_table(rows: list[dict]) -> str:
    """Plain-text table for terminal output."""
    keys = list(rows[0].keys())
    cells = [[str(k) for k in keys]] + [
        [f"{row[k]:.4g}" if isinstance(row[k], float) else str(row[k]) for k in keys]
        for row in rows
    ]
    widths = [max(len(line[i]) for line in cells) for i in range(len(keys))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def export_plots(metrics_path: str, out_path: str) -> int:
    """Melt a metrics CSV into plot-ready long format (one metric per row).
    Returns the number of rows written."""
    with open(metrics_path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{metrics_path} is missing the schema header line")
        reader = csv.DictReader(fh)
        id_cols = ["run", "seed", "episode", "round"]
        count = 0
        with open(out_path, "w", newline="") as out:
            writer = csv.writer(out)
            writer.writerow(id_cols + ["metric", "value"])
            for row in reader:
                for key, value in row.items():
                    if key in id_cols:
                        continue
                    writer.writerow([row[c] for c in id_cols] + [key, value])
                    count += 1
    return count
