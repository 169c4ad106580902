import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_arch
from uqpen.core import InvalidStateError, seeded_stream
from uqpen.dataset import Dataset
from uqpen.model import Architecture, init_params, param_count
from uqpen.training import (
    HISTORY_HEADER,
    EnsembleConfig,
    SwagConfig,
    SwagStats,
    TrainConfig,
    accuracy,
    carve_validation,
    evaluate_loss,
    train,
    train_ensemble,
    train_swag,
    write_history_csv,
)

FAST = TrainConfig(epochs_max=4, early_stop_patience=2, batch_size=16)


@pytest.fixture(scope="module")
def arch64():
    return tiny_arch(steps=64)


@pytest.fixture(scope="module")
def train_idx(small_dataset):
    return np.arange(0, len(small_dataset), 2)


def test_lr_zero_returns_init(arch64, small_dataset, train_idx):
    cfg = dataclasses.replace(FAST, learning_rate=0.0)
    params, _ = train(arch64, small_dataset, train_idx, cfg)
    init = init_params(arch64, seeded_stream(cfg.seed).split(0))
    assert np.array_equal(params, init)


def test_train_deterministic(arch64, small_dataset, train_idx):
    a, ha = train(arch64, small_dataset, train_idx, FAST)
    b, hb = train(arch64, small_dataset, train_idx, FAST)
    assert np.array_equal(a, b) and ha == hb


def test_empty_training_set(arch64, small_dataset):
    with pytest.raises(ValueError):
        train(arch64, small_dataset, [], FAST)


def test_early_stopping_restores_best(arch64, small_dataset, train_idx):
    cfg = dataclasses.replace(FAST, epochs_max=8, validation_fraction=0.3, learning_rate=0.05)
    params, history = train(arch64, small_dataset, train_idx, cfg)
    tr, va = carve_validation(train_idx, cfg.validation_fraction, cfg.seed)
    loss, _ = evaluate_loss(arch64, params, small_dataset.values[va], small_dataset.labels[va])
    assert loss == pytest.approx(min(r.val_loss for r in history), rel=1e-12)


def test_validation_carve_disjoint(train_idx):
    tr, va = carve_validation(train_idx, 0.25, 3)
    assert not set(tr) & set(va)
    assert sorted(np.concatenate([tr, va]).tolist()) == sorted(train_idx.tolist())
    assert len(va) == int(0.25 * len(train_idx))


def test_separable_toy_reaches_full_accuracy():
    rng = seeded_stream(0)
    y = np.arange(20) % 2
    x = 0.1 * rng.normal((20, 64, 13))
    x[:, :, 0] += np.where(y == 1, 1.0, -1.0)[:, None]
    ds = Dataset(x, y, np.zeros(20), ["R"] * 20, ("a", "b"))
    params, history = train(Architecture.desk(2), ds, np.arange(20),
                            TrainConfig(epochs_max=200, validation_fraction=0.0))
    first = next(r.epoch for r in history if r.train_acc == 1.0)
    assert first <= 200
    assert first <= 5  # observed: epoch 3
    assert accuracy(Architecture.desk(2), params, ds, np.arange(20)) == 1.0


def test_history_csv(tmp_path, arch64, small_dataset, train_idx):
    _, history = train(arch64, small_dataset, train_idx, FAST)
    path = tmp_path / "h.csv"
    write_history_csv(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_HEADER)
    assert len(lines) == len(history) + 1


def test_swag_stats_two_snapshots():
    s = SwagStats(2, 5)
    s.collect([0.0, 0.0])
    s.collect([2.0, 2.0])
    assert s.first_moment.tolist() == [1.0, 1.0]
    assert s.second_moment.tolist() == [2.0, 2.0]
    assert s.diag_variance().tolist() == [1.0, 1.0]


def test_swag_fifo():
    s = SwagStats(1, 3)
    snaps = [1.0, 4.0, 2.0, 8.0, 5.0]
    means = []
    for i, v in enumerate(snaps):
        s.collect([v])
        means.append(np.mean(snaps[: i + 1]))
    assert len(s.deviation_columns) == 3
    expect = [snaps[i] - means[i] for i in (2, 3, 4)]
    np.testing.assert_allclose([c[0] for c in s.deviation_columns], expect, atol=1e-15)


def test_swag_rank_minimum():
    with pytest.raises(ValueError):
        SwagStats(3, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 20), st.integers(0, 2**32))
def test_running_mean_matches_stored_list(n, p, seed):
    rng = seeded_stream(seed)
    snaps = rng.normal((n, p)) * rng.uniform(0.01, 100.0)
    s = SwagStats(p, 20)
    for theta in snaps:
        s.collect(theta)
    np.testing.assert_allclose(s.first_moment, snaps.mean(axis=0), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s.second_moment, (snaps**2).mean(axis=0), rtol=1e-12, atol=1e-12)
    assert np.all(s.diag_variance() >= -1e-12 * np.maximum(1.0, s.second_moment))


def test_train_swag_frozen_trajectory(arch64, small_dataset, train_idx):
    swag = SwagConfig(burn_in_epochs=2, swa_learning_rate=0.0, swa_epochs=4, max_rank=3)
    stats, swa, history = train_swag(arch64, small_dataset, train_idx, FAST, swag)
    burn, _ = train(arch64, small_dataset, train_idx, dataclasses.replace(FAST, epochs_max=2))
    assert stats.n_snapshots == 4
    assert np.array_equal(swa, burn)
    assert np.all(stats.diag_variance() == 0.0)
    assert all(np.all(c == 0.0) for c in stats.deviation_columns)
    assert [r.epoch for r in history] == list(range(1, len(history) + 1))


def test_train_swag_snapshot_cadence(arch64, small_dataset, train_idx):
    swag = SwagConfig(burn_in_epochs=1, snapshot_every_epochs=2, swa_epochs=5, max_rank=2)
    stats, swa, _ = train_swag(arch64, small_dataset, train_idx, FAST, swag)
    assert stats.n_snapshots == 2
    assert len(stats.deviation_columns) == 2
    assert np.array_equal(swa, stats.first_moment)


def test_train_swag_too_few_snapshots(arch64, small_dataset, train_idx):
    swag = SwagConfig(burn_in_epochs=1, swa_epochs=1)
    with pytest.raises(InvalidStateError):
        train_swag(arch64, small_dataset, train_idx, FAST, swag)


def test_ensemble_single_member_equals_train(arch64, small_dataset, train_idx):
    cfg = dataclasses.replace(FAST, seed=123)
    members, _ = train_ensemble(arch64, small_dataset, train_idx, cfg, EnsembleConfig(1, base_seed=7))
    single, _ = train(arch64, small_dataset, train_idx, dataclasses.replace(cfg, seed=7))
    assert members[0].tobytes() == single.tobytes()


def test_ensemble_parallel_matches_sequential(arch64, small_dataset, train_idx):
    ens = EnsembleConfig(3, base_seed=2)
    seq, hs = train_ensemble(arch64, small_dataset, train_idx, FAST, ens, workers=1)
    par, hp = train_ensemble(arch64, small_dataset, train_idx, FAST, ens, workers=3)
    assert [m.tobytes() for m in seq] == [m.tobytes() for m in par]
    assert hs == hp
    assert not np.array_equal(seq[0], seq[1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_ensemble_error_names_member(arch64, small_dataset, train_idx):
    cfg = dataclasses.replace(FAST, learning_rate=1e200, momentum=0.0)
    with pytest.raises(RuntimeError, match="member 0"):
        train_ensemble(arch64, small_dataset, train_idx, cfg, EnsembleConfig(2))


@pytest.mark.parametrize(
    "cfg",
    [TrainConfig(validation_fraction=1.0), TrainConfig(batch_size=0), TrainConfig(momentum=1.0)],
)
def test_train_config_validation(cfg):
    with pytest.raises(ValueError):
        cfg.validate()


def test_param_vector_size(arch64):
    assert init_params(arch64, seeded_stream(0)).shape == (param_count(arch64),)
