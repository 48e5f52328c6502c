"""Comparison selectors sharing the environment and cost engine: uniform
random (the fixed-fraction default), a factored tabular Q-learner, and a
myopic genetic algorithm driven by the round's cost oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Device, EnvState, Placement


def random_select(n: int, fraction: float, rng: np.random.Generator) -> Placement:
    """Uniformly select ceil(fraction * n) distinct devices."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    count = math.ceil(fraction * n)
    chosen = rng.choice(n, size=count, replace=False)
    k = np.zeros(n, dtype=int)
    k[chosen] = 1
    return tuple(int(b) for b in k)


# --------------------------------------------------------------- tabular RL


@dataclass(frozen=True)
class TabularState:
    """Coarse discretization of the decision state."""

    ac_bin: int   # 0..9
    r_bin: int    # 0..4
    da_count_bin: int  # 0..2

    def __post_init__(self) -> None:
        if not (0 <= self.ac_bin <= 9 and 0 <= self.r_bin <= 4 and 0 <= self.da_count_bin <= 2):
            raise ValueError("tabular bins out of range")


def discretize_state(state: EnvState, horizon: int) -> TabularState:
    ac_bin = int(np.clip((state.ac + 1.0) / 2.0 * 10.0, 0, 9))
    r_bin = int(np.clip(state.r / horizon * 5.0, 0, 4))
    return TabularState(ac_bin=ac_bin, r_bin=r_bin, da_count_bin=min(len(state.da), 2))


def device_bucket(device: Device) -> tuple[int, bool]:
    """Table keys are (area, high-mobility flag), so the table stays bounded
    regardless of the roster size."""
    return (device.area, device.high_mobility)


@dataclass(frozen=True)
class TabularConfig:
    epsilon: float = 0.15
    alpha: float = 0.1
    gamma: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


QTable = dict[tuple[TabularState, tuple[int, bool]], float]


def tabular_select(
    q_table: QTable,
    state: EnvState,
    devices: Sequence[Device],
    epsilon: float,
    rng: np.random.Generator,
    horizon: int,
) -> Placement:
    """Per-device epsilon-greedy: pick a device iff its cell value sits below
    the median of the current lookups; explore each device with prob epsilon."""
    ts = discretize_state(state, horizon)
    values = np.array(
        [q_table.get((ts, device_bucket(d)), 0.0) for d in devices]
    )
    median = float(np.median(values))
    explore = rng.random(len(devices)) < epsilon
    coin = rng.random(len(devices)) < 0.5
    greedy = values < median
    k = np.where(explore, coin, greedy).astype(int)
    return tuple(int(b) for b in k)


def tabular_update(
    q_table: QTable,
    state: EnvState,
    devices: Sequence[Device],
    action: Sequence[int],
    cost: float,
    next_state: EnvState,
    next_devices: Sequence[Device],
    alpha: float,
    gamma: float,
    horizon: int,
) -> None:
    """Soft Bellman blend Q <- (1-a)Q + a(c + g * minQ') on every selected
    device's cell."""
    ts = discretize_state(state, horizon)
    ts_next = discretize_state(next_state, horizon)
    next_values = [
        q_table.get((ts_next, device_bucket(d)), 0.0) for d in next_devices
    ]
    min_next = min(next_values) if next_values else 0.0
    target = cost + gamma * min_next
    for bit, device in zip(action, devices):
        if not bit:
            continue
        key = (ts, device_bucket(device))
        old = q_table.get(key, 0.0)
        q_table[key] = (1.0 - alpha) * old + alpha * target


class TabularAgent:
    """Owns the factored Q table across episodes of one run."""

    def __init__(self, horizon: int, config: TabularConfig | None = None, seed: int = 0):
        self.horizon = horizon
        self.config = config or TabularConfig()
        self.q_table: QTable = {}
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 307]))

    def act(self, state: EnvState, devices: Sequence[Device]) -> Placement:
        return tabular_select(
            self.q_table, state, devices, self.config.epsilon, self.rng, self.horizon
        )

    def observe(
        self,
        state: EnvState,
        devices: Sequence[Device],
        action: Sequence[int],
        cost: float,
        next_state: EnvState,
        next_devices: Sequence[Device],
    ) -> None:
        tabular_update(
            self.q_table,
            state,
            devices,
            action,
            cost,
            next_state,
            next_devices,
            self.config.alpha,
            self.config.gamma,
            self.horizon,
        )


# ----------------------------------------------------------------- genetic


@dataclass(frozen=True)
class GaConfig:
    population: int = 30
    generations: int = 20
    tournament_size: int = 3
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05

    def __post_init__(self) -> None:
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be even and >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 1 <= self.tournament_size <= self.population:
            raise ValueError("tournament_size must lie in [1, population]")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def ga_select(
    state: EnvState,
    devices: Sequence[Device],
    cost_fn: Callable[[Placement], float],
    config: GaConfig,
    rng: np.random.Generator,
    batch_cost_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Placement:
    """Evolve bit-string selections against the round's cost oracle.

    Tournament parent selection, uniform crossover, bit-flip mutation, and
    one-elite survival; myopic by design (no lookahead across rounds). A
    vectorized oracle can be supplied to evaluate whole populations at once.
    """
    del state  # the oracle already closes over the round's view
    n = len(devices)
    if batch_cost_fn is None:
        batch_cost_fn = lambda pop: np.array(
            [cost_fn(tuple(int(b) for b in row)) for row in pop]
        )
    population = rng.integers(0, 2, size=(config.population, n))
    costs = batch_cost_fn(population)

    def tournament() -> np.ndarray:
        idx = rng.choice(config.population, size=config.tournament_size, replace=False)
        return population[idx[np.argmin(costs[idx])]]

    for _ in range(config.generations):
        elite = population[int(np.argmin(costs))].copy()
        children = [elite]
        while len(children) < config.population:
            parent_a, parent_b = tournament(), tournament()
            if rng.random() < config.crossover_rate:
                mask = rng.random(n) < 0.5
                child = np.where(mask, parent_a, parent_b)
            else:
                child = parent_a.copy()
            flips = rng.random(n) < config.mutation_rate
            child = np.where(flips, 1 - child, child)
            children.append(child)
        population = np.stack(children)
        costs = batch_cost_fn(population)

    best = population[int(np.argmin(costs))]
    return tuple(int(b) for b in best)
