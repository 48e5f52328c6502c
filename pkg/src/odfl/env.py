"""Discrete-time environment: areas, device mobility, orchestrator requests,
on-demand container provisioning, availability-driven dropouts, and the MDP
step function consumed by selection agents.

One environment instance is single-context (mutable state); run several
instances for seed sweeps. All randomness flows from the run seed through
separate named streams, so mobility and data draws stay aligned between runs
that differ only in selection policy.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import data as data_mod
from . import fl, nn
from .core import Device, EnvState, ModelSpec, Placement, RoundReport, as_placement, fits
from .cost import CostBreakdown, ObjectiveWeights, client_priorities, total_cost

# Stream tags keeping the per-purpose generators independent.
_ROSTER, _PLACE, _MOVE, _DATA, _MODEL, _CLIENT = 11, 23, 37, 53, 71, 89


@dataclass(frozen=True, eq=False)
class MobilityModel:
    """Markov area transitions with geometric dwell times.

    A device redraws its area from its current transition row whenever its
    dwell expires. A ``mobile_fraction`` of the roster uses the (shorter)
    ``mobile_dwell_mean``, modeling persistently fast movers; the rest dwell
    for ``dwell_mean`` rounds on average.
    """

    transition: np.ndarray
    dwell_mean: float
    high_mobility_threshold: float = 0.2
    mobile_fraction: float = 0.0
    mobile_dwell_mean: float | None = None

    def __post_init__(self) -> None:
        matrix = np.array(self.transition, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("transition matrix must be square")
        if (matrix < 0).any() or np.abs(matrix.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("transition rows must be non-negative and sum to 1")
        matrix.flags.writeable = False
        object.__setattr__(self, "transition", matrix)
        if self.dwell_mean < 1.0:
            raise ValueError("dwell_mean must be >= 1 round")
        if not 0.0 <= self.high_mobility_threshold <= 1.0:
            raise ValueError("high_mobility_threshold must lie in [0, 1]")
        if not 0.0 <= self.mobile_fraction <= 1.0:
            raise ValueError("mobile_fraction must lie in [0, 1]")
        if self.mobile_dwell_mean is not None and self.mobile_dwell_mean < 1.0:
            raise ValueError("mobile_dwell_mean must be >= 1 round")

    @property
    def num_areas(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def uniform(
        cls,
        num_areas: int,
        dwell_mean: float,
        high_mobility_threshold: float = 0.2,
        mobile_fraction: float = 0.0,
        mobile_dwell_mean: float | None = None,
    ) -> "MobilityModel":
        """Uniform off-diagonal transitions: a move always changes area."""
        if num_areas == 1:
            matrix = np.ones((1, 1))
        else:
            matrix = np.full((num_areas, num_areas), 1.0 / (num_areas - 1))
            np.fill_diagonal(matrix, 0.0)
        return cls(
            matrix,
            dwell_mean,
            high_mobility_threshold=high_mobility_threshold,
            mobile_fraction=mobile_fraction,
            mobile_dwell_mean=mobile_dwell_mean,
        )


@dataclass
class OrchestratorState:
    """Per-area bookkeeping feeding the deployment-request pipeline."""

    area: int
    activity_window: deque[int]
    request_pending: bool = False


@dataclass(frozen=True)
class EnvConfig:
    """Environment dimensions plus scenario and local-training knobs."""

    n: int = 40
    num_areas: int = 5
    rounds: int = 50
    t_min: int = 1
    accept_fraction: float = 0.5
    request_low_water: float = 0.1
    seed: int = 0
    # roster / scenario
    static_fraction: float = 0.1
    on_demand: bool = True
    infeasible_fraction: float = 0.25
    # local training
    local_epochs: int = 2
    local_batch_size: int = 16
    local_alpha: float = 0.01
    local_recent_window: int = 128
    task_hidden: tuple[int, ...] = (32,)
    # orchestrator requests
    activity_window: int = 5
    activity_surge: float = 1.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_hidden", tuple(int(h) for h in self.task_hidden))
        if self.n < 1 or self.num_areas < 1 or self.rounds < 1:
            raise ValueError("n, num_areas and rounds must all be >= 1")
        if self.t_min < 0:
            raise ValueError("t_min must be >= 0")
        if not 0.0 < self.accept_fraction <= 1.0:
            raise ValueError("accept_fraction must lie in (0, 1]")
        for name in ("request_low_water", "static_fraction", "infeasible_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.local_epochs < 0 or self.local_batch_size < 1 or self.local_recent_window < 1:
            raise ValueError("invalid local training settings")
        if self.activity_window < 1 or self.activity_surge <= 0:
            raise ValueError("invalid orchestrator activity settings")


class OnDemandEnv:
    """The volunteer-device world one selection agent interacts with.

    The roster (resources, which devices are fast movers) is fixed by the run
    seed; placement, dwell, and data streams are redrawn on every reset so
    episodes differ while staying reproducible.
    """

    def __init__(
        self,
        config: EnvConfig,
        mobility: MobilityModel,
        dataset_config: data_mod.DatasetConfig,
        model_spec: ModelSpec,
        weights: ObjectiveWeights,
    ) -> None:
        if mobility.num_areas != config.num_areas:
            raise ValueError("mobility matrix size must match the area count")
        self.config = config
        self.mobility = mobility
        self.dataset_config = dataset_config
        self.model_spec = model_spec
        self.weights = weights

        roster_rng = self._rng(_ROSTER)
        self._resources = self._draw_resources(roster_rng)
        n_mobile = int(round(mobility.mobile_fraction * config.n))
        mobile_ids = roster_rng.choice(config.n, size=n_mobile, replace=False)
        self._dwell_means = np.full(config.n, mobility.dwell_mean)
        if mobility.mobile_dwell_mean is not None:
            self._dwell_means[mobile_ids] = mobility.mobile_dwell_mean
        n_static = int(np.ceil(config.static_fraction * config.n))
        self.static_roster = frozenset(
            int(i) for i in roster_rng.choice(config.n, size=n_static, replace=False)
        )

        self.area_distributions = data_mod.init_area_distributions(
            dataset_config, config.num_areas, seed=config.seed
        )
        self.test_features, self.test_labels = data_mod.global_test_set(
            dataset_config, self.area_distributions, seed=config.seed
        )
        self.task_spec = nn.NetworkSpec.mlp(
            dataset_config.feature_dim, config.task_hidden, dataset_config.num_classes,
            output_activation="softmax",
        )
        self._episode = 0
        self.reset()

    # ------------------------------------------------------------------ setup

    def _rng(self, tag: int, *extra: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.config.seed, tag, *extra])
        )

    def _draw_resources(self, rng: np.random.Generator) -> np.ndarray:
        """(n, 4) capacities for cpu/memory/diskspace/battery. A configured
        fraction of devices is left short on one demanded resource, so they
        can never host the container."""
        demands = np.array(
            [
                self.model_spec.cpu,
                self.model_spec.memory,
                self.model_spec.diskspace,
                self.model_spec.battery,
            ]
        )
        n = self.config.n
        capacities = demands * rng.uniform(1.5, 4.0, size=(n, 4))
        n_infeasible = int(round(self.config.infeasible_fraction * n))
        infeasible_ids = rng.choice(n, size=n_infeasible, replace=False)
        demanded_dims = np.flatnonzero(demands > 0)
        if demanded_dims.size:
            for i in infeasible_ids:
                dim = rng.choice(demanded_dims)
                capacities[i, dim] = demands[dim] * rng.uniform(0.2, 0.9)
        return capacities

    def _draw_availability(self, device_id: int, rng: np.random.Generator) -> int:
        # Dwell L ~ geometric(1/mean) counts residence rounds including the
        # current one; availability stores the L-1 full rounds that remain.
        return int(rng.geometric(1.0 / self._dwell_means[device_id])) - 1

    def reset(self, episode: int | None = None) -> EnvState:
        """Start a fresh episode: place devices, redraw dwells, clear data
        streams, reinitialize the FL model, and recompute requests."""
        if episode is not None:
            self._episode = episode
        ep = self._episode
        cfg = self.config
        place_rng = self._rng(_PLACE, ep)
        self._mobility_rng = self._rng(_MOVE, ep)
        self._data_rng = self._rng(_DATA, ep)

        areas = place_rng.integers(0, cfg.num_areas, size=cfg.n)
        self.devices: list[Device] = [
            Device(
                id=i,
                cpu=float(self._resources[i, 0]),
                memory=float(self._resources[i, 1]),
                diskspace=float(self._resources[i, 2]),
                battery=float(self._resources[i, 3]),
                area=int(areas[i]),
                availability=self._draw_availability(i, place_rng),
            )
            for i in range(cfg.n)
        ]
        self._moves = np.zeros(cfg.n, dtype=int)
        self._rounds_elapsed = 0
        self.datasets = {i: data_mod.ClientDataset(owner=i) for i in range(cfg.n)}
        self._area_records = np.zeros(cfg.num_areas, dtype=int)
        self.provisioned: set[int] = set(self.static_roster)
        for device_id in sorted(self.provisioned):
            self._emit_for(device_id, moved=False)

        self.model = self._init_model(self._rng(_MODEL, ep))
        self.orchestrators = [
            OrchestratorState(area=a, activity_window=deque(maxlen=cfg.activity_window))
            for a in range(cfg.num_areas)
        ]
        self._record_activity()
        self._recent_participants: deque[frozenset[int]] = deque(
            maxlen=cfg.activity_window
        )
        self._apply_requests(self.compute_requests())
        self.state = EnvState(
            k=(0,) * cfg.n, ac=0.0, r=0, da=self._pending_areas()
        )
        return self.state

    def _init_model(self, rng: np.random.Generator) -> fl.GlobalModel:
        params = nn.init(self.task_spec, rng)
        accuracy = fl.evaluate_global(params, self.test_features, self.test_labels)
        return fl.GlobalModel(params=params, accuracy=accuracy)

    # ------------------------------------------------------------------ cost

    def evaluate_action(self, action: Sequence[int]) -> CostBreakdown:
        """Cost of a hypothetical action on the current pre-round state."""
        priorities = client_priorities(self.devices, self.model.accuracy)
        return total_cost(
            self.state,
            as_placement(action, self.config.n),
            self.devices,
            self.model_spec,
            priorities,
            self.weights,
            self.config.t_min,
            self.config.num_areas,
        )

    def cost_oracle(self) -> Callable[[Placement], float]:
        """Total-cost closure over the current round's environment view."""
        return lambda action: self.evaluate_action(action).total

    def batch_cost_oracle(self) -> Callable[[np.ndarray], np.ndarray]:
        """Vectorized cost over a (population, n) 0/1 matrix; agrees with
        evaluate_action row by row (heavy optimizers call this in bulk)."""
        cfg = self.config
        w = self.weights
        n = cfg.n
        spec = self.model_spec
        demands = np.array([spec.cpu, spec.memory, spec.diskspace, spec.battery])
        caps = np.array(
            [[d.cpu, d.memory, d.diskspace, d.battery] for d in self.devices]
        )
        violations = (caps < demands).sum(axis=1) + np.array(
            [d.availability < cfg.t_min for d in self.devices]
        )
        flags = np.array([d.high_mobility for d in self.devices], dtype=float)
        area_onehot = np.zeros((n, cfg.num_areas))
        area_onehot[np.arange(n), [d.area for d in self.devices]] = 1.0
        in_da = np.array([d.area in self.state.da for d in self.devices], dtype=float)
        has_requests = bool(self.state.da)
        priorities = client_priorities(self.devices, self.model.accuracy)
        priority_total = max(1e-12, priorities.sum())

        def batch_cost(population: np.ndarray) -> np.ndarray:
            k = np.asarray(population, dtype=float)
            m = k.sum(axis=1)
            nonempty = m > 0
            safe_m = np.where(nonempty, m, 1.0)
            c1 = w.w1 * m / n
            distinct = (k @ area_onehot > 0).sum(axis=1)
            spread = distinct / np.minimum(safe_m, cfg.num_areas)
            movement = (k @ flags) / safe_m
            er = np.where(nonempty, 1.0 - (spread + movement) / 2.0, 1.0)
            c2 = w.w2 * er
            c3 = w.w3 * (k @ priorities) / priority_total
            if has_requests:
                rt = np.where(nonempty, (k @ in_da) / safe_m, 0.0)
            else:
                rt = np.ones(len(k))
            c4 = w.w4 * rt
            pun = 1.0 + k @ violations
            return (c1 + c2 - c3 - c4 + 1.0) * pun

        return batch_cost

    # ------------------------------------------------------------------ step

    def step(self, action: Sequence[int]) -> tuple[EnvState, CostBreakdown, RoundReport]:
        """Deploy per the action, run one FL round, cost it, then advance the
        world (mobility, data emission, orchestrator requests)."""
        cfg = self.config
        if self.state.r >= cfg.rounds:
            raise RuntimeError("episode exhausted: call reset() before stepping again")
        k = as_placement(action, cfg.n)
        round_index = self.state.r
        selected_ids = frozenset(i for i, bit in enumerate(k) if bit)
        if cfg.on_demand:
            self.provisioned.update(selected_ids)
        selected_areas = {self.devices[i].area for i in selected_ids}

        cost = self.evaluate_action(k)

        trainable = [
            (d, self.datasets[d.id])
            for d in self.devices
            if d.id in selected_ids and fits(d, self.model_spec) and d.availability >= 1
        ]
        old_accuracy = self.model.accuracy
        ep = self._episode
        client_rng = lambda device_id: self._rng(_CLIENT, ep, round_index, device_id)
        new_model, fl_report, updates = fl.run_round(
            self.model,
            selected_ids,
            trainable,
            self.test_features,
            self.test_labels,
            accept_fraction=cfg.accept_fraction,
            epochs=cfg.local_epochs,
            client_rng=client_rng,
            batch_size=cfg.local_batch_size,
            alpha=cfg.local_alpha,
            recent_window=cfg.local_recent_window,
            round_index=round_index,
        )
        for update in updates:
            d = self.devices[update.device_id]
            self.devices[update.device_id] = replace(
                d,
                last_local_accuracy=update.local_accuracy,
                rounds_participated=d.rounds_participated + 1,
            )
        self.model = new_model
        ac_delta = (new_model.accuracy - old_accuracy) if fl_report.accepted else 0.0

        moved_flags = dict(self.advance_mobility())
        for device_id in sorted(self.provisioned):
            self._emit_for(device_id, moved=moved_flags.get(device_id, False))
        self._record_activity()
        if fl_report.accepted:
            self._recent_participants.append(fl_report.received)
        for orch in self.orchestrators:
            if orch.request_pending and orch.area in selected_areas:
                orch.request_pending = False
        self._apply_requests(self.compute_requests())

        self.state = EnvState(
            k=k, ac=ac_delta, r=round_index + 1, da=self._pending_areas()
        )
        report = replace(fl_report, cost_components=cost.components)
        return self.state, cost, report

    # ------------------------------------------------------------ world model

    def advance_mobility(
        self, rng: np.random.Generator | None = None
    ) -> list[tuple[int, bool]]:
        """Move expired devices, decrement everyone else's availability, and
        refresh the empirical high-mobility flags."""
        rng = rng if rng is not None else self._mobility_rng
        self._rounds_elapsed += 1
        out: list[tuple[int, bool]] = []
        for i, device in enumerate(self.devices):
            if device.availability == 0:
                row = self.mobility.transition[device.area]
                next_area = int(rng.choice(self.mobility.num_areas, p=row))
                moved = next_area != device.area
                self._moves[i] += moved
                device = replace(
                    device,
                    area=next_area,
                    availability=self._draw_availability(i, rng),
                )
            else:
                moved = False
                device = replace(device, availability=device.availability - 1)
            rate = self._moves[i] / self._rounds_elapsed
            device = replace(
                device, high_mobility=rate > self.mobility.high_mobility_threshold
            )
            self.devices[i] = device
            out.append((i, moved))
        return out

    def _emit_for(self, device_id: int, moved: bool) -> None:
        device = self.devices[device_id]
        count = data_mod.emit_records(
            self.datasets[device_id],
            device,
            moved,
            self.dataset_config,
            self.area_distributions,
            self._data_rng,
        )
        self._area_records[device.area] += count

    def _record_activity(self) -> None:
        counts = np.bincount(
            [d.area for d in self.devices], minlength=self.config.num_areas
        )
        self._last_surges = set()
        for orch in self.orchestrators:
            window = orch.activity_window
            if window:
                trailing_mean = sum(window) / len(window)
                if counts[orch.area] > self.config.activity_surge * trailing_mean:
                    self._last_surges.add(orch.area)
            window.append(int(counts[orch.area]))

    def compute_requests(self) -> frozenset[int]:
        """Areas that should carry a pending deployment request right now:
        an activity surge, or recently-trained clients covering too little of
        the area's data."""
        requested = set(getattr(self, "_last_surges", set()))
        if self._recent_participants:
            participants: set[int] = set()
            for received in self._recent_participants:
                participants.update(received)
            for area in range(self.config.num_areas):
                total = int(self._area_records[area])
                if total == 0:
                    continue
                covered = sum(
                    self.datasets[i].area_counts.get(area, 0) for i in participants
                )
                if covered / total < self.config.request_low_water:
                    requested.add(area)
        return frozenset(requested)

    def _apply_requests(self, requested: frozenset[int]) -> None:
        for orch in self.orchestrators:
            if orch.area in requested:
                orch.request_pending = True

    def _pending_areas(self) -> frozenset[int]:
        return frozenset(o.area for o in self.orchestrators if o.request_pending)

    def snapshot_data_volume(self) -> tuple[int, ...]:
        """Records accessible for learning, per area (append-only counters)."""
        return tuple(int(c) for c in self._area_records)
