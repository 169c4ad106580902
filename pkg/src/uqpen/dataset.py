"""Labeled 13-channel pen recordings: synthetic generation, CSV I/O and fold splits.

The synthetic generator stands in for a real sensor pen.  Each class owns a
2D stroke template; each writer owns a style transform (size, slant, speed
and a speed profile).  Channels are derived from the traversed trajectory:

    c0..c2   front accelerometer: second differences of position, z carries gravity
    c3..c5   rear accelerometer: same signal with a lower gain
    c6..c8   gyroscope: first differences of heading angle and heading vector
    c9..c11  magnetometer: unit heading vector rotated into the pen frame
    c12      pen force: positive while the tip is down, 0 during lifts

Left-handed writers see the same trajectory through a mirrored front
accelerometer x axis, a negated heading rate (c6), an extra pen roll and an
extra magnetometer rotation.  The rear accelerometer and force channel do not
depend on the hand.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .core import ParseError, RngStream, resample_linear, seeded_stream

N_CHANNELS = 13
N_STEPS = 64

# generator constants
BASE_STEPS = 80
N_CONTROL = 6
SMOOTH_SIGMA = 2.0
ACC_GAIN = 130.0
FRONT_GAIN = 0.5
REAR_GAIN = 1.0
GRAVITY = 1.0
GYRO_GAIN = 2.0
MAG_TILT = 0.5
MAG_ANGLE = {"R": math.radians(20.0), "L": math.radians(80.0)}
HAND_ROLL = {"R": 0.0, "L": math.radians(45.0)}
ROLL_JITTER = math.radians(20.0)
PAIR_SCALE = 0.6


class Hand(str, enum.Enum):
    RIGHT = "R"
    LEFT = "L"

    @classmethod
    def parse(cls, token) -> "Hand":
        if isinstance(token, Hand):
            return token
        t = str(token).strip().lower()
        if t in ("r", "right"):
            return cls.RIGHT
        if t in ("l", "left"):
            return cls.LEFT
        raise ValueError(f"unknown hand {token!r}")


@dataclass(frozen=True)
class MultivariateTimeSeries:
    values: np.ndarray
    label: int
    writer_id: int
    hand: Hand


@dataclass(frozen=True, eq=False)
class Dataset:
    """Stacked samples: ``values`` is ``(n, q, l)``."""

    values: np.ndarray
    labels: np.ndarray
    writer_ids: np.ndarray
    hands: np.ndarray
    class_names: tuple[str, ...]
    sample_ids: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        n = len(labels)
        if n == 0:
            raise ValueError("dataset must contain at least one sample")
        if values.ndim != 3 or values.shape[0] != n:
            raise ValueError(f"values must be (n, q, l) with n={n}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset values must be finite")
        if len(self.class_names) < 2:
            raise ValueError("need at least two classes")
        if labels.min() < 0 or labels.max() >= len(self.class_names):
            raise ValueError("label out of range")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "writer_ids", np.asarray(self.writer_ids, dtype=np.int64))
        object.__setattr__(self, "hands", np.asarray([Hand.parse(h).value for h in self.hands]))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        ids = tuple(str(s) for s in self.sample_ids) or tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise ValueError("sample_ids length mismatch")
        object.__setattr__(self, "sample_ids", ids)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> MultivariateTimeSeries:
        return MultivariateTimeSeries(
            self.values[i], int(self.labels[i]), int(self.writer_ids[i]), Hand(self.hands[i])
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and self.sample_ids == other.sample_ids
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.writer_ids, other.writer_ids)
            and np.array_equal(self.hands, other.hands)
        )

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.values[idx],
            self.labels[idx],
            self.writer_ids[idx],
            self.hands[idx],
            self.class_names,
            tuple(self.sample_ids[i] for i in idx),
        )

    def hand_mask(self, hand) -> np.ndarray:
        return self.hands == Hand.parse(hand).value


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class GeneratorConfig:
    class_count: int = 10
    confusable_pairs: list[tuple[int, int]] = field(default_factory=lambda: [(0, 1), (2, 3)])
    writers_right: int = 20
    writers_left: int = 4
    samples_per_writer_per_class: int = 6
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        seen = set()
        for a, b in self.confusable_pairs:
            if a == b or not (0 <= a < self.class_count and 0 <= b < self.class_count):
                raise ValueError(f"invalid confusable pair {(a, b)}")
            if b in seen:
                raise ValueError(f"class {b} is the scaled member of two pairs")
            seen.add(b)
        if self.writers_right < 0 or self.writers_left < 0 or self.writers_right + self.writers_left < 1:
            raise ValueError("need at least one writer")
        if self.samples_per_writer_per_class < 1:
            raise ValueError("samples_per_writer_per_class must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class StrokeTemplate:
    points: np.ndarray  # (N_CONTROL, 2)
    pen_down: np.ndarray  # (N_CONTROL - 1,) bool per segment


@dataclass(frozen=True)
class WriterStyle:
    scale: float
    slant: float  # radians
    speed: float
    warp: float  # speed-profile amplitude, |warp| < 1 keeps traversal monotone
    roll: float = 0.0  # pen roll about its axis, radians


def class_names_for(k: int) -> tuple[str, ...]:
    width = len(str(k - 1))
    return tuple(f"c{i:0{width}d}" for i in range(k))


def make_templates(config: GeneratorConfig) -> list[StrokeTemplate]:
    rng = seeded_stream(config.seed).split(0)
    templates = []
    for _ in range(config.class_count):
        pts = rng.uniform(-1.0, 1.0, size=(N_CONTROL, 2))
        down = np.ones(N_CONTROL - 1, dtype=bool)
        if rng.next_uniform() < 0.5:
            down[rng.integers(1, N_CONTROL - 2)] = False
        templates.append(StrokeTemplate(pts, down))
    for a, b in config.confusable_pairs:
        src = templates[a]
        templates[b] = StrokeTemplate(src.points * PAIR_SCALE, src.pen_down.copy())
    return templates


def writer_style(rng: RngStream) -> WriterStyle:
    return WriterStyle(
        scale=float(rng.uniform(0.8, 1.2)),
        slant=math.radians(float(rng.uniform(-15.0, 15.0))),
        speed=float(rng.uniform(0.8, 1.2)),
        warp=float(rng.uniform(-0.5, 0.5)),
        roll=float(rng.uniform(-ROLL_JITTER, ROLL_JITTER)),
    )


def _rotation_111(angle: float) -> np.ndarray:
    # rotation about the (1, 1, 1) diagonal
    u = np.ones(3) / math.sqrt(3.0)
    c, s = math.cos(angle), math.sin(angle)
    ux = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return c * np.eye(3) + s * ux + (1 - c) * np.outer(u, u)


def render_sample(
    template: StrokeTemplate,
    style: WriterStyle,
    hand,
    noise_sigma: float = 0.0,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Render one ``N_STEPS x 13`` recording of ``template`` by a writer."""
    hand = Hand.parse(hand)
    n_raw = int(round(BASE_STEPS / style.speed))
    u = np.linspace(0.0, 1.0, n_raw)
    u = u + style.warp * np.sin(2 * np.pi * u) / (2 * np.pi)
    n_seg = len(template.pen_down)
    s = np.clip(u * n_seg, 0.0, n_seg)
    seg = np.minimum(np.floor(s).astype(int), n_seg - 1)
    frac = (s - seg)[:, None]
    pts = template.points
    pos = pts[seg] * (1.0 - frac) + pts[seg + 1] * frac

    shear = np.array([[1.0, 0.0], [math.tan(style.slant), 1.0]])
    pos = style.scale * (pos @ shear)
    pos = gaussian_filter1d(pos, SMOOTH_SIGMA, axis=0, mode="nearest")

    vel = np.gradient(pos, axis=0)
    acc = np.gradient(vel, axis=0) * ACC_GAIN

    # heading in the writing plane, then seen from the rolled pen frame
    heading = np.arctan2(vel[:, 1], vel[:, 0])
    dtheta = np.diff(heading, prepend=heading[0])
    dtheta = (dtheta + np.pi) % (2 * np.pi) - np.pi
    psi = heading + style.roll + HAND_ROLL[hand.value]
    hvec = np.stack([np.cos(psi), np.sin(psi)], axis=1)
    dhvec = np.diff(hvec, axis=0, prepend=hvec[:1])

    out = np.zeros((n_raw, N_CHANNELS))
    out[:, 0:2] = FRONT_GAIN * acc
    out[:, 2] = GRAVITY
    out[:, 3:5] = REAR_GAIN * acc
    out[:, 5] = GRAVITY
    out[:, 6] = GYRO_GAIN * dtheta
    out[:, 7:9] = GYRO_GAIN * dhvec
    mag = np.column_stack([hvec, np.full(n_raw, MAG_TILT)])
    out[:, 9:12] = mag @ _rotation_111(MAG_ANGLE[hand.value]).T
    if hand is Hand.LEFT:
        out[:, 0] = -out[:, 0]
        out[:, 6] = -out[:, 6]
    down = template.pen_down[seg]
    out[:, 12] = np.where(down, 1.0 + 0.3 * np.sin(np.pi * (s - seg)), 0.0)


    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        noise = noise_sigma * rng.normal((n_raw, N_CHANNELS))
        force = out[:, 12]
        out = out + noise
        out[:, 12] = np.where(down, np.maximum(force + noise[:, 12], 1e-3), 0.0)
    return resample_linear(out, N_STEPS)


def generate(config: GeneratorConfig) -> Dataset:
    """Deterministic synthetic dataset; right-handed writers come first."""
    config.validate()
    templates = make_templates(config)
    root = seeded_stream(config.seed)
    writer_rng = root.split(1)
    noise_rng = root.split(2)
    values, labels, writers, hands = [], [], [], []
    n_writers = config.writers_right + config.writers_left
    idx = 0
    for w in range(n_writers):
        hand = Hand.RIGHT if w < config.writers_right else Hand.LEFT
        style = writer_style(writer_rng.split(w))
        for k in range(config.class_count):
            for _ in range(config.samples_per_writer_per_class):
                values.append(
                    render_sample(templates[k], style, hand, config.noise_sigma, noise_rng.split(idx))
                )
                labels.append(k)
                writers.append(w)
                hands.append(hand.value)
                idx += 1
    return Dataset(
        np.stack(values), np.array(labels), np.array(writers), np.array(hands),
        class_names_for(config.class_count),
    )


def filter_by_hand(dataset: Dataset, hand) -> Dataset:
    """Keep samples written with ``hand``; warns when a class ends up empty."""
    idx = np.flatnonzero(dataset.hand_mask(hand))
    if len(idx) == len(dataset):
        return dataset
    if len(idx) == 0:
        raise ValueError(f"no samples written with hand {Hand.parse(hand).value}")
    sub = dataset.subset(idx)
    empty = sorted(set(range(dataset.class_count)) - set(sub.labels.tolist()))
    if empty:
        warnings.warn(f"classes without samples after hand filter: {empty}", stacklevel=2)
    return sub


# ---------------------------------------------------------------------------
# CSV


CSV_HEADER = ["sample_id", "writer_id", "hand", "label", "step"] + [f"c{i}" for i in range(N_CHANNELS)]


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(dataset)):
            sid = dataset.sample_ids[i]
            head = [sid, int(dataset.writer_ids[i]), dataset.hands[i], dataset.class_names[dataset.labels[i]]]
            for t, row in enumerate(dataset.values[i]):
                w.writerow(head + [t] + [repr(float(v)) for v in row])


def load_csv(path, steps: int = N_STEPS) -> Dataset:
    """Read the sample CSV format; samples of other lengths are resampled to ``steps``."""
    groups: dict[str, dict] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {missing}", 1)
        col = {name: header.index(name) for name in CSV_HEADER}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                missing = [c for c in CSV_HEADER if col[c] >= len(row)]
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}"
                    + (f" (missing {missing})" if missing else ""),
                    line,
                )
            sid = row[col["sample_id"]]
            try:
                hand = Hand.parse(row[col["hand"]]).value
            except ValueError:
                raise ParseError(f"unknown hand token {row[col['hand']]!r}", line) from None
            try:
                writer = int(row[col["writer_id"]])
                step = int(row[col["step"]])
                vals = [float(row[col[f"c{i}"]]) for i in range(N_CHANNELS)]
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
            if writer < 0:
                raise ParseError("writer_id must be non-negative", line)
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite channel value", line)
            label = row[col["label"]]
            g = groups.get(sid)
            if g is None:
                g = groups[sid] = {"writer": writer, "hand": hand, "label": label, "rows": []}
            elif (g["writer"], g["hand"], g["label"]) != (writer, hand, label):
                raise ParseError(f"sample {sid!r} changes writer/hand/label", line)
            g["rows"].append((step, line, vals))
    if not groups:
        raise ParseError("no samples", 1)

    names = tuple(sorted({g["label"] for g in groups.values()}))
    label_of = {n: i for i, n in enumerate(names)}
    values, labels, writers, hands = [], [], [], []
    for sid, g in groups.items():
        rows = sorted(g["rows"], key=lambda r: r[0])
        for expect, (step, line, _) in enumerate(rows):
            if step != expect:
                raise ParseError(f"sample {sid!r}: expected step {expect}, found {step}", line)
        mat = np.array([r[2] for r in rows], dtype=np.float64)
        values.append(resample_linear(mat, steps))
        labels.append(label_of[g["label"]])
        writers.append(g["writer"])
        hands.append(g["hand"])
    return Dataset(np.stack(values), np.array(labels), np.array(writers), np.array(hands), names, tuple(groups))


# ---------------------------------------------------------------------------
# folds


class SplitMode(str, enum.Enum):
    WD = "WD"
    WI = "WI"

    @classmethod
    def parse(cls, token) -> "SplitMode":
        t = str(getattr(token, "value", token)).upper()
        aliases = {"WD": cls.WD, "WRITERDEPENDENT": cls.WD, "WI": cls.WI, "WRITERINDEPENDENT": cls.WI}
        if t not in aliases:
            raise ValueError(f"unknown split mode {token!r}")
        return aliases[t]


@dataclass(frozen=True)
class FoldSplit:
    mode: SplitMode
    folds: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]  # (train, test) per fold

    @property
    def fold_count(self) -> int:
        return len(self.folds)

    def train(self, k: int) -> np.ndarray:
        return np.array(self.folds[k][0], dtype=np.int64)

    def test(self, k: int) -> np.ndarray:
        return np.array(self.folds[k][1], dtype=np.int64)

    def to_json(self) -> str:
        doc = {
            "mode": self.mode.value,
            "folds": [{"train": list(tr), "test": list(te)} for tr, te in self.folds],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "FoldSplit":
        doc = json.loads(text)
        if set(doc) != {"mode", "folds"}:
            raise ValueError("split manifest needs exactly 'mode' and 'folds'")
        folds = tuple(
            (tuple(int(i) for i in f["train"]), tuple(int(i) for i in f["test"])) for f in doc["folds"]
        )
        return cls(SplitMode.parse(doc["mode"]), folds)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FoldSplit":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def split(dataset: Dataset, mode="WD", fold_count: int = 5, seed: int = 0) -> FoldSplit:
    """Writer-dependent (label-stratified) or writer-independent k-fold split."""
    mode = SplitMode.parse(mode)
    if fold_count < 2:
        raise ValueError("fold_count must be at least 2")
    n = len(dataset)
    rng = seeded_stream(seed)
    fold_of = np.empty(n, dtype=np.int64)
    if mode is SplitMode.WD:
        if n < fold_count:
            raise ValueError(f"need at least {fold_count} samples for {fold_count} folds")
        # deal each class round-robin; the dealer position carries over between
        # classes so fold sizes differ by at most one
        pos = 0
        for k in range(dataset.class_count):
            members = np.flatnonzero(dataset.labels == k)
            members = members[rng.split(k).permutation(len(members))]
            fold_of[members] = (pos + np.arange(len(members))) % fold_count
            pos = (pos + len(members)) % fold_count
    else:
        writers = np.unique(dataset.writer_ids)
        if len(writers) < fold_count:
            raise ValueError(
                f"writer-independent split needs >= {fold_count} writers, found {len(writers)}"
            )
        writers = writers[rng.permutation(len(writers))]
        group = {int(w): g for g, ws in enumerate(np.array_split(writers, fold_count)) for w in ws}
        fold_of[:] = [group[int(w)] for w in dataset.writer_ids]
    folds = []
    for f in range(fold_count):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        folds.append((tuple(train.tolist()), tuple(test.tolist())))
    return FoldSplit(mode, tuple(folds))
