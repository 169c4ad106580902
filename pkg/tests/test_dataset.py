import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uqpen.core import ParseError
from uqpen.dataset import (
    CSV_HEADER,
    GRAVITY,
    PAIR_SCALE,
    Dataset,
    FoldSplit,
    GeneratorConfig,
    Hand,
    SplitMode,
    filter_by_hand,
    generate,
    load_csv,
    make_templates,
    render_sample,
    save_csv,
    split,
    writer_style,
)
from uqpen.core import seeded_stream


def test_generated_shapes_and_finite(small_dataset, small_config):
    n = (small_config.writers_right + small_config.writers_left) * small_config.class_count * 2
    assert small_dataset.values.shape == (n, 64, 13)
    assert np.all(np.isfinite(small_dataset.values))
    assert set(small_dataset.labels.tolist()) == set(range(small_config.class_count))


def test_generate_deterministic(small_config):
    assert generate(small_config) == generate(small_config)
    other = generate(dataclasses.replace(small_config, seed=small_config.seed + 1))
    assert not np.array_equal(other.values, generate(small_config).values)


def test_noise_free_single_writer_repeats():
    cfg = GeneratorConfig(class_count=3, confusable_pairs=[], writers_right=1, writers_left=0,
                          samples_per_writer_per_class=2, noise_sigma=0.0)
    ds = generate(cfg)
    for k in range(3):
        a, b = np.flatnonzero(ds.labels == k)
        assert np.array_equal(ds.values[a], ds.values[b])


def test_confusable_pair_is_scaled_copy():
    cfg = GeneratorConfig(noise_sigma=0.0)
    templates = make_templates(cfg)
    style = writer_style(seeded_stream(5))
    for a, b in cfg.confusable_pairs:
        xa = render_sample(templates[a], style, Hand.RIGHT)
        xb = render_sample(templates[b], style, Hand.RIGHT)
        acc = [0, 1, 3, 4]
        np.testing.assert_allclose(xb[:, acc], PAIR_SCALE * xa[:, acc], rtol=1e-9, atol=1e-12)
        # gravity offset is not positional
        np.testing.assert_array_equal(xb[:, [2, 5]], GRAVITY)
        np.testing.assert_allclose(xb[:, 6:12], xa[:, 6:12], rtol=1e-9, atol=1e-12)
        np.testing.assert_array_equal(xb[:, 12], xa[:, 12])


def test_left_right_differ_where_expected():
    cfg = GeneratorConfig(noise_sigma=0.0)
    style = writer_style(seeded_stream(9))
    for tpl in make_templates(cfg):
        r = render_sample(tpl, style, "R")
        l = render_sample(tpl, style, "L")
        for c in [0] + list(range(6, 12)):
            assert not np.allclose(r[:, c], l[:, c]), c
        np.testing.assert_array_equal(r[:, 12], l[:, 12])
        np.testing.assert_array_equal(r[:, 3:6], l[:, 3:6])


def test_force_channel_zero_during_lift():
    cfg = GeneratorConfig()
    ds = generate(dataclasses.replace(cfg, writers_right=2, writers_left=1, samples_per_writer_per_class=1))
    force = ds.values[:, :, 12]
    assert np.all(force >= 0)
    assert np.any(force == 0)


@pytest.mark.parametrize(
    "change",
    [{"class_count": 1}, {"confusable_pairs": [(0, 0)]}, {"confusable_pairs": [(0, 12)]},
     {"noise_sigma": -1.0}, {"writers_right": 0, "writers_left": 0}],
)
def test_generator_rejects_bad_config(change):
    with pytest.raises(ValueError):
        generate(dataclasses.replace(GeneratorConfig(), **change))


def test_filter_by_hand_counts(small_dataset, small_config):
    right = filter_by_hand(small_dataset, "R")
    assert len(right) == small_config.writers_right * small_config.class_count * 2
    assert np.all(right.hands == "R")
    assert right.class_count == small_dataset.class_count
    # order preserved
    assert list(right.sample_ids) == [s for s, h in zip(small_dataset.sample_ids, small_dataset.hands) if h == "R"]


def test_filter_identity_on_single_hand(small_dataset):
    right = filter_by_hand(small_dataset, Hand.RIGHT)
    assert filter_by_hand(right, "right") == right


def test_filter_warns_on_empty_class():
    ds = Dataset(np.zeros((3, 4, 2)), [0, 1, 2], [0, 0, 1], ["R", "R", "L"], ("a", "b", "c"))
    with pytest.warns(UserWarning, match=r"\[2\]"):
        sub = filter_by_hand(ds, "R")
    assert len(sub) == 2 and sub.class_count == 3


def test_filter_empty_result_raises():
    ds = Dataset(np.zeros((2, 4, 2)), [0, 1], [0, 0], ["R", "R"], ("a", "b"))
    with pytest.raises(ValueError):
        filter_by_hand(ds, "L")


def test_csv_round_trip_exact(tmp_path, small_dataset):
    path = tmp_path / "d.csv"
    save_csv(small_dataset, path)
    back = load_csv(path)
    assert back == small_dataset
    assert path.read_bytes().count(b"\r") == 0


def _write_rows(path, rows, header=CSV_HEADER):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rows(sid, steps, label="a", hand="R", writer=0, value=1.0):
    return [[sid, writer, hand, label, t] + [value + t] * 13 for t in range(steps)]


def test_load_two_samples(tmp_path):
    p = tmp_path / "x.csv"
    _write_rows(p, _rows("s0", 64, "b") + _rows("s1", 64, "a"))
    ds = load_csv(p)
    assert len(ds) == 2 and ds.values.shape == (2, 64, 13)
    # labels follow sorted class-name order
    assert ds.class_names == ("a", "b") and ds.labels.tolist() == [1, 0]


def test_load_resamples_short_sample(tmp_path):
    p = tmp_path / "x.csv"
    _write_rows(p, _rows("s0", 32) + _rows("s1", 64, "b"))
    ds = load_csv(p)
    x = ds.values[0]
    assert x.shape == (64, 13)
    assert x[0, 0] == 1.0 and x[-1, 0] == 32.0


def test_load_reorders_steps(tmp_path):
    p = tmp_path / "x.csv"
    rows = _rows("s0", 64) + _rows("s1", 64, "b")
    _write_rows(p, rows[::-1])
    assert np.array_equal(load_csv(p).values[0][:, 0], np.arange(64) + 1.0)


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda rows: rows[5].pop(), 7),  # short row
        (lambda rows: rows[3].__setitem__(2, "X"), 5),  # bad hand
        (lambda rows: rows[10].__setitem__(8, "nan"), 12),  # non-finite
        (lambda rows: rows[10].__setitem__(8, "inf"), 12),
        (lambda rows: rows[4].__setitem__(9, "abc"), 6),
        (lambda rows: rows[20].__setitem__(3, "zz"), 22),  # label changes within sample
    ],
)
def test_load_errors_name_line(tmp_path, mutate, line):
    rows = _rows("s0", 64) + _rows("s1", 64, "b")
    mutate(rows)
    p = tmp_path / "bad.csv"
    _write_rows(p, rows)
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_load_gap_in_steps(tmp_path):
    rows = _rows("s0", 64) + _rows("s1", 64, "b")
    del rows[10]
    p = tmp_path / "gap.csv"
    _write_rows(p, rows)
    with pytest.raises(ParseError, match="step"):
        load_csv(p)


def test_load_missing_header_column(tmp_path):
    p = tmp_path / "h.csv"
    header = [c for c in CSV_HEADER if c != "c12"]
    _write_rows(p, [r[:-1] for r in _rows("s0", 4)], header)
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.line == 1


def test_wd_split_partition():
    ds = Dataset(np.zeros((100, 2, 1)), np.arange(100) % 4, np.arange(100) % 7, ["R"] * 100,
                 ("a", "b", "c", "d"))
    fs = split(ds, "WD", 5, seed=3)
    tests = [set(fs.test(k).tolist()) for k in range(5)]
    assert all(len(t) == 20 for t in tests)
    assert set().union(*tests) == set(range(100))
    for k in range(5):
        assert not set(fs.train(k).tolist()) & tests[k]
        assert len(fs.train(k)) + len(tests[k]) == 100
        # stratified: 5 of each class per fold
        assert np.bincount(ds.labels[fs.test(k)]).tolist() == [5, 5, 5, 5]


def test_wi_split_writer_disjoint():
    ds = Dataset(np.zeros((60, 2, 1)), np.arange(60) % 3, np.arange(60) % 10, ["R"] * 60, ("a", "b", "c"))
    fs = split(ds, SplitMode.WI, 5, seed=1)
    for k in range(5):
        assert not set(ds.writer_ids[fs.train(k)]) & set(ds.writer_ids[fs.test(k)])


def test_wi_too_few_writers():
    ds = Dataset(np.zeros((6, 2, 1)), [0, 1] * 3, [0, 1, 2] * 2, ["R"] * 6, ("a", "b"))
    with pytest.raises(ValueError, match="writers"):
        split(ds, "WI", 5)


def test_split_deterministic_and_manifest_round_trip(tmp_path, small_dataset):
    a = split(small_dataset, "WD", 5, 4)
    assert a == split(small_dataset, "WD", 5, 4)
    p = tmp_path / "m.json"
    a.save(p)
    assert FoldSplit.load(p) == a
    text = p.read_text()
    a2 = FoldSplit.from_json(text)
    assert a2.to_json() == text


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 80), st.integers(2, 6), st.integers(2, 7), st.integers(0, 2**32))
def test_split_partition_property(n, k, folds, seed):
    labels = np.arange(n) % k
    writers = np.arange(n) % max(folds, 7)
    ds = Dataset(np.zeros((n, 2, 1)), labels, writers, ["R"] * n, tuple(f"k{i}" for i in range(k)))
    for mode in ("WD", "WI"):
        fs = split(ds, mode, folds, seed)
        seen = np.concatenate([fs.test(f) for f in range(folds)])
        assert sorted(seen.tolist()) == list(range(n))
        if mode == "WI":
            for f in range(folds):
                assert not set(writers[fs.train(f)]) & set(writers[fs.test(f)])
