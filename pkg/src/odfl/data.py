"""Synthetic per-area data streams for a small classification task.

Each area has its own categorical label distribution (Dirichlet-skewed, so
non-IID-ness is tied to geography); features for a class are drawn around a
fixed per-class Gaussian center shared by all areas. Client movement changes
which area distribution feeds a client's records.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import Device


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 5
    feature_dim: int = 8
    area_skew: float = 0.3          # Dirichlet concentration; small = skewed
    records_per_round_static: int = 3
    records_per_move: int = 6
    test_set_size: int = 500

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.area_skew <= 0:
            raise ValueError("area_skew must be > 0")
        if self.records_per_round_static < 0 or self.records_per_move < 0:
            raise ValueError("record counts must be >= 0")
        if self.test_set_size < 1:
            raise ValueError("test_set_size must be >= 1")


@dataclass(frozen=True)
class AreaDistributions:
    """Per-area label distributions plus the shared class feature centers."""

    label_probs: np.ndarray   # (num_areas, num_classes), rows sum to 1
    centers: np.ndarray       # (num_classes, feature_dim)

    @property
    def num_areas(self) -> int:
        return self.label_probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.label_probs.shape[1]

    def mean_label_probs(self) -> np.ndarray:
        return self.label_probs.mean(axis=0)


@dataclass
class ClientDataset:
    """Append-only record store owned by one device.

    area_counts tracks how many records were emitted from each area, which
    feeds the data-availability coverage used by orchestrator requests.
    """

    owner: int
    features: list[np.ndarray] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    area_counts: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def append(self, features: np.ndarray, labels: np.ndarray, area: int) -> None:
        for row, label in zip(features, labels):
            self.features.append(row)
            self.labels.append(int(label))
        self.area_counts[area] = self.area_counts.get(area, 0) + len(labels)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.labels:
            raise ValueError("dataset is empty")
        return np.stack(self.features), np.asarray(self.labels, dtype=int)


def init_area_distributions(
    config: DatasetConfig, num_areas: int, seed: int
) -> AreaDistributions:
    """Draw one Dirichlet label distribution per area and the class centers."""
    if num_areas < 1:
        raise ValueError("num_areas must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDA7A]))
    centers = rng.standard_normal((config.num_classes, config.feature_dim))
    alpha = np.full(config.num_classes, config.area_skew)
    label_probs = rng.dirichlet(alpha, size=num_areas)
    return AreaDistributions(label_probs=label_probs, centers=centers)


def sample_records(
    dists: AreaDistributions, area: int, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` labeled feature vectors from an area's distribution."""
    labels = rng.choice(dists.num_classes, size=count, p=dists.label_probs[area])
    features = dists.centers[labels] + rng.standard_normal(
        (count, dists.centers.shape[1])
    )
    return features, labels


def emit_records(
    dataset: ClientDataset,
    device: Device,
    moved: bool,
    config: DatasetConfig,
    dists: AreaDistributions,
    rng: np.random.Generator,
) -> int:
    """Append one round's records for a device: the static trickle plus the
    movement bonus when the device changed area. Returns the count appended."""
    count = config.records_per_round_static + (config.records_per_move if moved else 0)
    if count == 0:
        return 0
    features, labels = sample_records(dists, device.area, count, rng)
    dataset.append(features, labels, device.area)
    return count


def global_test_set(
    config: DatasetConfig, dists: AreaDistributions, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Held-out evaluation set: an equal-weight mixture over all areas, drawn
    from its own generator stream so it never overlaps the training streams."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7E57]))
    mean_probs = dists.mean_label_probs()
    labels = rng.choice(dists.num_classes, size=config.test_set_size, p=mean_probs)
    features = dists.centers[labels] + rng.standard_normal(
        (config.test_set_size, dists.centers.shape[1])
    )
    return features, labels


def export_records_csv(path: str, features: np.ndarray, labels: np.ndarray) -> None:
    """Write a labeled dataset as CSV: feature columns then a label column."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels must have equal length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(features.shape[1])] + ["label"])
        for row, label in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
