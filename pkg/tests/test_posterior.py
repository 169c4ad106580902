import math

import numpy as np
import pytest

from conftest import tiny_arch
from uqpen.core import FormatError, InvalidStateError, RngStream, seeded_stream, softmax
from uqpen.model import forward, init_params, param_count, save_checkpoint
from uqpen.posterior import (
    EnsemblePredictor,
    SwagPosterior,
    SwagPredictor,
    build_posterior,
    load_posterior,
    predictive_draws_ensemble,
    predictive_draws_swag,
    sample_weights,
    save_posterior,
)
from uqpen.training import SwagStats


@pytest.fixture
def setup(arch):
    rng = seeded_stream(8)
    p = param_count(arch)
    theta = init_params(arch, rng.split(0))
    x = rng.split(1).normal((16, 13))
    stats = SwagStats(p, 4)
    for i in range(6):
        stats.collect(theta + 0.05 * rng.split(10 + i).normal(p))
    return arch, theta, x, build_posterior(stats)


def test_frozen_stats_degenerate_posterior():
    theta = seeded_stream(0).normal(5)
    s = SwagStats(5, 3)
    for _ in range(7):
        s.collect(theta)
    post = build_posterior(s)
    assert np.array_equal(post.mean, theta)
    assert np.all(post.diag_var == 0.0)
    assert np.all(post.deviation == 0.0)
    assert post.rank == 3


def test_two_snapshot_posterior():
    s = SwagStats(2, 5)
    s.collect([0.0, 0.0])
    s.collect([2.0, 2.0])
    post = build_posterior(s)
    assert post.diag_var.tolist() == [1.0, 1.0]
    # deviation columns in snapshot order: theta_i - running mean after update
    assert post.deviation.tolist() == [[0.0, 1.0], [0.0, 1.0]]


def test_negative_rounding_variance_clamped():
    s = SwagStats(1, 3)
    s.collect([1.0])
    s.collect([1.0])
    s.second_moment = np.array([1.0 - 1e-15])
    assert s.diag_variance()[0] < 0
    assert build_posterior(s).diag_var[0] == 0.0


def test_rank_deficient_stats():
    s = SwagStats(2, 3)
    s.collect([1.0, 2.0])
    with pytest.raises(InvalidStateError):
        build_posterior(s)
    with pytest.raises(InvalidStateError):
        SwagPosterior(np.zeros(2), np.zeros(2), np.zeros((2, 1)))


def test_zero_scale_sample_is_mean(setup):
    _, _, _, post = setup
    post.scale = 0.0
    for seed in range(3):
        assert np.array_equal(sample_weights(post, RngStream(seed)), post.mean)


def test_degenerate_gaussian_sample_is_mean():
    post = SwagPosterior(np.arange(4.0), np.zeros(4), np.zeros((4, 3)))
    assert np.array_equal(sample_weights(post, RngStream(1)), post.mean)


def test_sampling_formula_by_hand():
    mean = np.array([1.0, -2.0])
    var = np.array([4.0, 0.5])
    dev = np.array([[1.0, -1.0, 0.5], [0.0, 2.0, 1.0]])
    post = SwagPosterior(mean, var, dev, scale=0.7)
    rng = RngStream(3)
    z1 = rng.normal(2)
    z2 = rng.normal(3)
    expect = mean + 0.7 * (np.sqrt(var / 2) * z1 + dev @ z2 / math.sqrt(4.0))
    np.testing.assert_allclose(sample_weights(post, RngStream(3)), expect, rtol=1e-15, atol=1e-15)


def test_monte_carlo_mean_and_variance():
    mean = np.array([0.5, -3.0])
    var = np.array([2.0, 0.08])
    post = SwagPosterior(mean, var, np.zeros((2, 2)))
    rng = RngStream(17)
    n = 10_000
    samples = np.stack([sample_weights(post, rng) for _ in range(n)])
    emp_mean = samples.mean(axis=0)
    emp_std = samples.std(axis=0, ddof=1)
    assert np.all(np.abs(emp_mean - mean) < 3 * emp_std / math.sqrt(n))
    target = var / 2
    se = target * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(samples.var(axis=0, ddof=1) - target) < 5 * se)


def test_low_rank_part_moves_samples():
    post = SwagPosterior(np.zeros(3), np.zeros(3), np.array([[1.0, -1.0], [0.0, 0.0], [2.0, 2.0]]))
    s = sample_weights(post, RngStream(0))
    assert s[1] == 0.0 and s[0] != 0.0


def test_swag_draws_zero_scale_rows_identical(setup):
    arch, _, x, post = setup
    post.scale = 0.0
    d = predictive_draws_swag(arch, post, x, 5, RngStream(0))
    assert d.shape == (5, 4)
    assert all(np.array_equal(d[0], row) for row in d)
    np.testing.assert_array_equal(d[0], softmax(forward(arch, post.mean, x).logits))


def test_swag_single_draw(setup):
    arch, _, x, post = setup
    d = predictive_draws_swag(arch, post, x, 1, RngStream(4))
    theta = sample_weights(post, RngStream(4))
    np.testing.assert_array_equal(d[0], softmax(forward(arch, theta, x).logits))


def test_swag_draws_deterministic_and_valid(setup):
    arch, _, x, post = setup
    a = predictive_draws_swag(arch, post, x, 8, RngStream(2))
    assert np.array_equal(a, predictive_draws_swag(arch, post, x, 8, RngStream(2)))
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)
    assert len({r.tobytes() for r in a}) == 8
    with pytest.raises(ValueError):
        predictive_draws_swag(arch, post, x, 0, RngStream(2))


def test_swag_predictor_shares_draws(setup):
    arch, _, x, post = setup
    xs = np.stack([x, 2 * x, -x])
    batch = SwagPredictor(arch, post).draws(xs, 4, RngStream(5))
    assert batch.shape == (3, 4, 4)
    for i in range(3):
        single = predictive_draws_swag(arch, post, xs[i], 4, RngStream(5))
        np.testing.assert_allclose(batch[i], single, rtol=0, atol=1e-14)


def test_ensemble_draws(arch):
    rng = seeded_stream(3)
    members = [init_params(arch, rng.split(i)) for i in range(3)]
    x = rng.split(9).normal((16, 13))
    d = predictive_draws_ensemble(arch, members, x)
    for m, theta in enumerate(members):
        np.testing.assert_array_equal(d[m], softmax(forward(arch, theta, x).logits))
    perm = [2, 0, 1]
    assert np.array_equal(predictive_draws_ensemble(arch, [members[i] for i in perm], x), d[perm])
    dup = predictive_draws_ensemble(arch, [members[0], members[0]], x)
    assert np.array_equal(dup[0], dup[1])
    single = predictive_draws_ensemble(arch, members[:1], x)
    assert single.shape == (1, 4)
    batch = EnsemblePredictor(arch, members).draws(x[None])
    np.testing.assert_allclose(batch[0], d, rtol=0, atol=1e-14)


def test_ensemble_member_size_mismatch(arch):
    x = np.zeros((16, 13))
    with pytest.raises(ValueError, match="member 1"):
        predictive_draws_ensemble(arch, [np.zeros(param_count(arch)), np.zeros(5)], x)
    with pytest.raises(ValueError):
        EnsemblePredictor(arch, [np.zeros(5)])
    with pytest.raises(ValueError):
        predictive_draws_ensemble(arch, [], x)


def test_posterior_file_round_trip(tmp_path, setup):
    arch, _, _, post = setup
    post.scale = 0.25
    path = tmp_path / "s.post"
    save_posterior(post, arch, path)
    arch2, back = load_posterior(path)
    assert arch2 == arch
    for name in ("mean", "diag_var", "deviation"):
        assert getattr(back, name).tobytes() == getattr(post, name).tobytes()
        assert getattr(back, name).shape == getattr(post, name).shape
    assert back.scale == 0.25


def test_posterior_file_errors(tmp_path, setup, arch):
    arch, theta, _, post = setup
    path = tmp_path / "s.post"
    save_posterior(post, arch, path)
    blob = path.read_bytes()
    path.write_bytes(b"UQHX" + blob[4:])
    with pytest.raises(FormatError, match="magic"):
        load_posterior(path)
    for cut in (1, 9, 200):
        path.write_bytes(blob[:-cut])
        with pytest.raises(FormatError):
            load_posterior(path)
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(theta, arch, ckpt)
    with pytest.raises(FormatError, match="version"):
        load_posterior(ckpt)
