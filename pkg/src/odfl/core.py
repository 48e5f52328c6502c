"""Shared value types for the on-demand FL simulator, plus device feasibility checks.

Everything here is an immutable value object: environments and agents exchange
these freely between threads or processes without copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

# An area is identified by its integer index in [0, num_areas).
AreaId = int

# A placement/selection is a 0/1 vector over the device roster: k[i] == 1 means
# the model container is deployed on device i this round.
Placement = tuple[int, ...]


def as_placement(bits: Iterable[int], n: int | None = None) -> Placement:
    """Normalize a bit sequence into a canonical placement tuple.

    Raises ValueError if any entry is not 0/1 or if the length differs from n.
    """
    k = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in k):
        raise ValueError("placement entries must be 0 or 1")
    if n is not None and len(k) != n:
        raise ValueError(f"placement length {len(k)} != device count {n}")
    return k


def _require_finite_nonneg(name: str, value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and non-negative, got {value!r}")


@dataclass(frozen=True)
class Device:
    """One volunteer fog device.

    ``availability`` counts the full rounds the device will still spend in its
    current area after the present one; a device at 0 is leaving mid-round.
    ``high_mobility`` is the empirical flag maintained by the environment from
    observed moves, and ``last_local_accuracy`` is None until the device has
    trained at least once.
    """

    id: int
    cpu: float
    memory: float
    diskspace: float
    battery: float
    area: AreaId
    availability: int
    high_mobility: bool = False
    rounds_participated: int = 0
    last_local_accuracy: float | None = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("device id must be non-negative")
        for name in ("cpu", "memory", "diskspace", "battery"):
            _require_finite_nonneg(name, getattr(self, name))
        if self.area < 0:
            raise ValueError("area index must be non-negative")
        if self.availability < 0:
            raise ValueError("availability must be >= 0")
        if self.last_local_accuracy is not None and not 0.0 <= self.last_local_accuracy <= 1.0:
            raise ValueError("last_local_accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class ModelSpec:
    """Resource demands and priority of the deployable model container."""

    cpu: float
    memory: float
    diskspace: float
    battery: float
    priority: float = 0.5

    def __post_init__(self) -> None:
        for name in ("cpu", "memory", "diskspace", "battery"):
            _require_finite_nonneg(name, getattr(self, name))
        if not 0.0 <= self.priority <= 1.0:
            raise ValueError("priority must lie in [0, 1]")


@dataclass(frozen=True)
class EnvState:
    """Decision state seen by a selection agent.

    k is the previous round's placement, ac the accuracy delta of the last
    accepted round, r the round index, and da the set of areas with pending
    orchestrator deployment requests.
    """

    k: Placement
    ac: float
    r: int
    da: frozenset[AreaId]

    def __post_init__(self) -> None:
        object.__setattr__(self, "k", as_placement(self.k))
        object.__setattr__(self, "da", frozenset(int(a) for a in self.da))
        if self.r < 0:
            raise ValueError("round index must be >= 0")
        if not -1.0 <= self.ac <= 1.0:
            raise ValueError("ac must lie in [-1, 1]")


@dataclass(frozen=True)
class Transition:
    """One (state, action, cost, next state) step, as stored in the replay
    buffer and the persistent transition log."""

    s: EnvState
    a: Placement
    c: float
    s_next: EnvState

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", as_placement(self.a, n=len(self.s.k)))
        if not math.isfinite(self.c):
            raise ValueError("transition cost must be finite")


@dataclass(frozen=True)
class RoundReport:
    """Outcome of one FL round.

    cost_components is the 6-tuple (c1, c2, c3, c4, pun, total).
    """

    round: int
    selected: frozenset[int]
    received: frozenset[int]
    accepted: bool
    global_accuracy: float
    cost_components: tuple[float, float, float, float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "selected", frozenset(self.selected))
        object.__setattr__(self, "received", frozenset(self.received))
        if not self.received <= self.selected:
            raise ValueError("received clients must be a subset of selected clients")
        if len(self.cost_components) != 6:
            raise ValueError("cost_components must be (c1, c2, c3, c4, pun, total)")


def fits(device: Device, spec: ModelSpec) -> bool:
    """True iff the device can host the container: every resource demand is
    within the device's capacity."""
    return (
        spec.cpu <= device.cpu
        and spec.memory <= device.memory
        and spec.diskspace <= device.diskspace
        and spec.battery <= device.battery
    )


def available_long_enough(device: Device, t_min: int) -> bool:
    """True iff the device will remain in place for at least t_min rounds."""
    if t_min < 0:
        raise ValueError("t_min must be >= 0")
    return device.availability >= t_min


def count_violations(
    placement: Sequence[int],
    devices: Sequence[Device],
    spec: ModelSpec,
    t_min: int,
) -> int:
    """Count violated constraint instances over the selected devices.

    Each selected device contributes one count per exceeded resource
    (cpu, memory, diskspace, battery) plus one if its availability falls
    short of t_min. Violations are additive across devices.
    """
    if len(placement) != len(devices):
        raise ValueError(
            f"placement length {len(placement)} != device count {len(devices)}"
        )
    violations = 0
    for k_i, device in zip(placement, devices):
        if not k_i:
            continue
        violations += spec.cpu > device.cpu
        violations += spec.memory > device.memory
        violations += spec.diskspace > device.diskspace
        violations += spec.battery > device.battery
        violations += not available_long_enough(device, t_min)
    return violations
