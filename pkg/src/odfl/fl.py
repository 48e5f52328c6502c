"""Federated round engine: broadcast, local training, sample-weighted
aggregation, round validation, and global accuracy measurement.

Clients within a round are independent; aggregation consumes updates in
ascending device-id order so results do not depend on completion order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import nn
from .core import Device, RoundReport
from .data import ClientDataset


@dataclass
class GlobalModel:
    """Task-network parameters plus their accuracy on the held-out test set."""

    params: nn.Parameters
    accuracy: float


@dataclass
class ClientUpdate:
    device_id: int
    params: nn.Parameters
    sample_count: int
    local_accuracy: float

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("an update must cover at least one sample")


def _accuracy(params: nn.Parameters, features: np.ndarray, labels: np.ndarray) -> float:
    probs, _ = nn.forward(params, features)
    # np.argmax breaks ties toward the lowest class index.
    return float((np.argmax(probs, axis=1) == labels).mean())


def local_train(
    global_params: nn.Parameters,
    dataset: ClientDataset,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 16,
    alpha: float = 0.01,
    recent_window: int | None = None,
) -> ClientUpdate | None:
    """Train a copy of the global parameters on one client's records.

    Returns None for an empty dataset (the client drops out). With
    recent_window set, training uses the newest that many records (local data
    keeps growing; recent records also track the client's current area).
    The reported local accuracy is measured on the trained records.
    """
    if len(dataset) == 0:
        return None
    features, labels = dataset.as_arrays()
    if recent_window is not None and len(labels) > recent_window:
        features, labels = features[-recent_window:], labels[-recent_window:]
    params = nn.clone_parameters(global_params)
    adam = nn.init_adam(params, alpha=alpha)
    count = len(labels)
    for _ in range(epochs):
        order = rng.permutation(count)
        for start in range(0, count, batch_size):
            idx = order[start : start + batch_size]
            probs, cache = nn.forward(params, features[idx])
            _, out_grad = nn.loss_cross_entropy(probs, labels[idx])
            grads = nn.backward(params, cache, out_grad)
            params, adam = nn.adam_step(params, grads, adam, inplace=True)
    return ClientUpdate(
        device_id=dataset.owner,
        params=params,
        sample_count=count,
        local_accuracy=_accuracy(params, features, labels),
    )


def fedavg(updates: Sequence[ClientUpdate]) -> nn.Parameters:
    """Sample-count-weighted element-wise mean of client parameters."""
    if not updates:
        raise ValueError("fedavg needs at least one update")
    ordered = sorted(updates, key=lambda u: u.device_id)
    total = sum(u.sample_count for u in ordered)
    out = nn.zeros_like_parameters(ordered[0].params)
    for update in ordered:
        share = update.sample_count / total
        for acc, w in zip(out.weights, update.params.weights):
            acc += share * w
        for acc, b in zip(out.biases, update.params.biases):
            acc += share * b
    return out


def validate_round(
    selected: Iterable[int], received: Sequence[ClientUpdate], accept_fraction: float
) -> bool:
    """Accept the round iff enough of the selected clients reported back."""
    if not 0.0 < accept_fraction <= 1.0:
        raise ValueError("accept_fraction must lie in (0, 1]")
    n_selected = len(set(selected))
    if n_selected == 0:
        return False
    return len(received) >= math.ceil(accept_fraction * n_selected)


def evaluate_global(
    params: nn.Parameters, test_features: np.ndarray, test_labels: np.ndarray
) -> float:
    """Argmax-prediction accuracy on the held-out set."""
    if len(test_labels) == 0:
        raise ValueError("test set must be nonempty")
    return _accuracy(params, test_features, test_labels)


def run_round(
    model: GlobalModel,
    selected: Iterable[int],
    trainable: Sequence[tuple[Device, ClientDataset]],
    test_features: np.ndarray,
    test_labels: np.ndarray,
    accept_fraction: float,
    epochs: int,
    client_rng: Callable[[int], np.random.Generator],
    batch_size: int = 16,
    alpha: float = 0.01,
    recent_window: int | None = None,
    round_index: int = 0,
) -> tuple[GlobalModel, RoundReport, list[ClientUpdate]]:
    """One broadcast/train/aggregate cycle over the eligible clients.

    ``trainable`` lists the selected devices that are actually able to train
    this round (present long enough and hosting the container); empty-data
    clients still drop out here. A discarded round returns the caller's model
    object untouched.
    """
    selected_ids = frozenset(int(i) for i in selected)
    updates: list[ClientUpdate] = []
    for device, dataset in sorted(trainable, key=lambda pair: pair[0].id):
        if device.id not in selected_ids:
            raise ValueError("trainable devices must come from the selected set")
        update = local_train(
            model.params,
            dataset,
            epochs=epochs,
            rng=client_rng(device.id),
            batch_size=batch_size,
            alpha=alpha,
            recent_window=recent_window,
        )
        if update is not None:
            updates.append(update)
    accepted = validate_round(selected_ids, updates, accept_fraction)
    if accepted:
        new_params = fedavg(updates)
        new_model = GlobalModel(
            params=new_params,
            accuracy=evaluate_global(new_params, test_features, test_labels),
        )
    else:
        new_model = model
    report = RoundReport(
        round=round_index,
        selected=selected_ids,
        received=frozenset(u.device_id for u in updates),
        accepted=accepted,
        global_accuracy=new_model.accuracy,
        cost_components=(0.0, 0.0, 0.0, 0.0, 1.0, 0.0),
    )
    return new_model, report, updates
