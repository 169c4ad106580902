"""SGD training with early stopping, SWAG moment collection and deep ensembles."""

from __future__ import annotations

import csv
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import InvalidStateError, seeded_stream, softmax
from .dataset import Dataset
from .model import Architecture, backward_batch, forward_batch, init_params, param_count


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs_max: int = 2000
    batch_size: int = 50
    early_stop_patience: int = 50
    validation_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate, weight_decay >= 0 and momentum in [0, 1) required")


@dataclass
class SwagConfig:
    burn_in_epochs: int = 10
    snapshot_every_epochs: int = 1
    max_rank: int = 20
    swa_learning_rate: float = 1e-2
    swa_epochs: int = 20

    def validate(self) -> None:
        if self.max_rank < 2:
            raise ValueError("max_rank must be >= 2")
        if self.burn_in_epochs < 1 or self.snapshot_every_epochs < 1 or self.swa_epochs < 1:
            raise ValueError("burn_in_epochs, snapshot_every_epochs and swa_epochs must be >= 1")
        if self.swa_learning_rate < 0:
            raise ValueError("swa_learning_rate must be non-negative")


@dataclass
class EnsembleConfig:
    member_count: int = 10
    base_seed: int = 0

    def validate(self) -> None:
        if self.member_count < 1:
            raise ValueError("member_count must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)])


class SwagStats:
    """Running first/second moments and a FIFO of deviation columns."""

    def __init__(self, n_params: int, max_rank: int):
        if max_rank < 2:
            raise ValueError("max_rank must be >= 2")
        self.n_snapshots = 0
        self.max_rank = max_rank
        self.first_moment = np.zeros(n_params)
        self.second_moment = np.zeros(n_params)
        self.deviation_columns: deque[np.ndarray] = deque(maxlen=max_rank)

    def collect(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        n = self.n_snapshots
        # incremental form of (n * m + x) / (n + 1); exact when x == m
        self.first_moment = self.first_moment + (theta - self.first_moment) / (n + 1)
        self.second_moment = self.second_moment + (theta * theta - self.second_moment) / (n + 1)
        self.deviation_columns.append(theta - self.first_moment)
        self.n_snapshots = n + 1

    def diag_variance(self) -> np.ndarray:
        """Raw ``E[theta^2] - E[theta]^2``; may dip slightly below zero from rounding."""
        return self.second_moment - self.first_moment**2


def evaluate_loss(arch: Architecture, params, x, y, batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode mean cross-entropy (nats) and accuracy."""
    if len(y) == 0:
        return math.nan, math.nan
    total, correct = 0.0, 0
    for i in range(0, len(y), batch_size):
        logits = forward_batch(arch, params, x[i : i + batch_size]).logits
        yb = y[i : i + batch_size]
        z = logits - logits.max(axis=1, keepdims=True)
        total += float(np.sum(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(yb)), yb]))
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return total / len(y), correct / len(y)


def carve_validation(train_indices, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(train_indices, dtype=np.int64)
    n_val = min(int(math.floor(fraction * len(idx))), len(idx) - 1)
    perm = seeded_stream(seed).split(3).permutation(len(idx))
    return np.sort(idx[perm[n_val:]]), np.sort(idx[perm[:n_val]])


def _sgd_epochs(arch, params, x, y, xv, yv, lr, config, epochs, shuffle_rng, dropout_rng,
                early_stop, on_epoch=None, epoch_offset=0):
    params = params.copy()
    velocity = np.zeros_like(params)
    history: list[EpochRecord] = []
    best = (math.inf, params.copy())
    since_best = 0
    n = len(y)
    for epoch in range(1, epochs + 1):
        perm = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            b = perm[start : start + config.batch_size]
            out = forward_batch(arch, params, x[b], dropout_rng)
            loss, grad = backward_batch(arch, params, out, y[b])
            loss_sum += loss * len(b)
            correct += int(np.sum(np.argmax(out.logits, axis=1) == y[b]))
            grad += config.weight_decay * params
            velocity = config.momentum * velocity + grad
            params = params - lr * velocity
        if not np.all(np.isfinite(params)):
            raise FloatingPointError(f"non-finite parameters after epoch {epoch + epoch_offset}")
        val_loss, val_acc = evaluate_loss(arch, params, xv, yv)
        rec = EpochRecord(epoch + epoch_offset, loss_sum / n, correct / n, val_loss, val_acc)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(epoch, params)
        if early_stop:
            monitor = val_loss if len(yv) else rec.train_loss
            if monitor < best[0]:
                best = (monitor, params.copy())
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.early_stop_patience:
                    break
    return (best[1] if early_stop else params), history


def train(arch: Architecture, dataset: Dataset, train_indices, config: TrainConfig):
    """Early-stopped SGD from a seeded initialization; returns ``(params, history)``.

    The returned weights are those with the lowest validation loss (training
    loss when ``validation_fraction`` leaves no validation samples).
    """
    config.validate()
    if len(train_indices) == 0:
        raise ValueError("training set is empty")
    params, history, _ = _train_impl(arch, dataset, train_indices, config)
    return params, history


def _train_impl(arch, dataset, train_indices, config):
    root = seeded_stream(config.seed)
    tr, va = carve_validation(train_indices, config.validation_fraction, config.seed)
    x, y = dataset.values[tr], dataset.labels[tr]
    xv, yv = dataset.values[va], dataset.labels[va]
    params0 = init_params(arch, root.split(0))
    params, history = _sgd_epochs(
        arch, params0, x, y, xv, yv, config.learning_rate, config, config.epochs_max,
        root.split(1), root.split(2), early_stop=True,
    )
    return params, history, (x, y, xv, yv)


def train_swag(arch: Architecture, dataset: Dataset, train_indices, config: TrainConfig, swag: SwagConfig):
    """Burn-in with early-stopped SGD, then constant-rate SGD with per-epoch snapshots.

    Returns ``(stats, swa_params, history)``; ``swa_params`` is the running
    mean of the snapshots.
    """
    config.validate()
    swag.validate()
    if len(train_indices) == 0:
        raise ValueError("training set is empty")
    burn = replace(config, epochs_max=swag.burn_in_epochs)
    params, history, (x, y, xv, yv) = _train_impl(arch, dataset, train_indices, burn)
    stats = SwagStats(param_count(arch), swag.max_rank)

    def snap(epoch, theta):
        if epoch % swag.snapshot_every_epochs == 0:
            stats.collect(theta)

    root = seeded_stream(config.seed)
    _, swa_history = _sgd_epochs(
        arch, params, x, y, xv, yv, swag.swa_learning_rate, config, swag.swa_epochs,
        root.split(4), root.split(5), early_stop=False, on_epoch=snap, epoch_offset=len(history),
    )
    if stats.n_snapshots < 2:
        raise InvalidStateError(f"collected {stats.n_snapshots} SWAG snapshot(s); at least 2 are needed")
    return stats, stats.first_moment.copy(), history + swa_history


def _member_job(args):
    arch, dataset, train_indices, config, i = args
    try:
        return train(arch, dataset, train_indices, config)
    except Exception as exc:
        raise RuntimeError(f"ensemble member {i} failed: {exc}") from exc


def default_workers() -> int:
    cap = os.environ.get("UQPEN_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def train_ensemble(arch: Architecture, dataset: Dataset, train_indices, config: TrainConfig,
                   ens: EnsembleConfig, workers: int = 1):
    """Train ``member_count`` networks with seeds ``base_seed + i``.

    Returns ``(members, histories)``.  Members only share read-only inputs,
    so ``workers > 1`` (process pool) gives bitwise the same result as a
    sequential run.
    """
    config.validate()
    ens.validate()
    jobs = [
        (arch, dataset, train_indices, replace(config, seed=ens.base_seed + i), i)
        for i in range(ens.member_count)
    ]
    if workers <= 1 or ens.member_count == 1:
        results = [_member_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, ens.member_count)) as pool:
            results = list(pool.map(_member_job, jobs))
    return [r[0] for r in results], [r[1] for r in results]


def accuracy(arch: Architecture, params, dataset: Dataset, indices) -> float:
    idx = np.asarray(indices, dtype=np.int64)
    logits = forward_batch(arch, params, dataset.values[idx]).logits
    return float(np.mean(np.argmax(softmax(logits), axis=1) == dataset.labels[idx]))
