"""SWAG posteriors, weight sampling and per-input softmax draw matrices."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FormatError, InvalidStateError, RngStream, check_prob_vector, softmax
from .model import Architecture, decode_header, encode_header, forward, forward_batch, param_count
from .training import SwagStats

POSTERIOR_VERSION = 2


@dataclass
class SwagPosterior:
    mean: np.ndarray
    diag_var: np.ndarray
    deviation: np.ndarray  # (P, K_dev), columns in snapshot order
    scale: float = 1.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.diag_var = np.asarray(self.diag_var, dtype=np.float64)
        self.deviation = np.asarray(self.deviation, dtype=np.float64)
        p = self.mean.shape[0]
        if self.diag_var.shape != (p,) or self.deviation.ndim != 2 or self.deviation.shape[0] != p:
            raise ValueError("posterior component shapes disagree")
        if np.any(self.diag_var < 0):
            raise ValueError("diag_var must be non-negative")
        if self.rank < 2:
            raise InvalidStateError(f"deviation rank {self.rank} < 2")

    @property
    def rank(self) -> int:
        return self.deviation.shape[1]


def build_posterior(stats: SwagStats, scale: float = 1.0) -> SwagPosterior:
    if stats.n_snapshots < 2 or len(stats.deviation_columns) < 2:
        raise InvalidStateError(f"SWAG statistics hold {stats.n_snapshots} snapshot(s); need at least 2")
    mean = stats.first_moment.copy()
    var = np.maximum(stats.second_moment - mean**2, 0.0)
    dev = np.stack(list(stats.deviation_columns), axis=1)
    return SwagPosterior(mean, var, dev, scale)


def sample_weights(post: SwagPosterior, rng: RngStream) -> np.ndarray:
    """mean + scale * (sqrt(var / 2) * z1 + deviation @ z2 / sqrt(2 (K - 1)))."""
    z1 = rng.normal(post.mean.shape[0])
    z2 = rng.normal(post.rank)
    diag = np.sqrt(post.diag_var) * z1 / math.sqrt(2.0)
    low_rank = post.deviation @ z2 / math.sqrt(2.0 * (post.rank - 1))
    return post.mean + post.scale * (diag + low_rank)


def predictive_draws_swag(arch: Architecture, post: SwagPosterior, x, n_draws: int, rng: RngStream) -> np.ndarray:
    """``(S, K)`` softmax rows for one input, one fresh weight sample per row."""
    if n_draws < 1:
        raise ValueError("need at least one draw")
    rows = [softmax(forward(arch, sample_weights(post, rng), x).logits) for _ in range(n_draws)]
    return check_prob_vector(np.stack(rows))


def predictive_draws_ensemble(arch: Architecture, members, x) -> np.ndarray:
    """``(M, K)`` softmax rows for one input, row ``m`` from member ``m``."""
    if len(members) < 1:
        raise ValueError("ensemble needs at least one member")
    p = param_count(arch)
    for i, m in enumerate(members):
        if np.shape(m) != (p,):
            raise ValueError(f"member {i} has {np.size(m)} parameters, architecture needs {p}")
    return check_prob_vector(np.stack([softmax(forward(arch, m, x).logits) for m in members]))


class SwagPredictor:
    """Batched SWAG draws: ``S`` weight samples shared by every input."""

    def __init__(self, arch: Architecture, post: SwagPosterior):
        self.arch = arch
        self.post = post

    def draws(self, x, n_draws: int, rng: RngStream) -> np.ndarray:
        if n_draws < 1:
            raise ValueError("need at least one draw")
        out = np.empty((len(x), n_draws, self.arch.class_count))
        for s in range(n_draws):
            theta = sample_weights(self.post, rng)
            out[:, s] = _batched_softmax(self.arch, theta, x)
        return check_prob_vector(out)


class EnsemblePredictor:
    def __init__(self, arch: Architecture, members):
        p = param_count(arch)
        for i, m in enumerate(members):
            if np.shape(m) != (p,):
                raise ValueError(f"member {i} has {np.size(m)} parameters, architecture needs {p}")
        if len(members) < 1:
            raise ValueError("ensemble needs at least one member")
        self.arch = arch
        self.members = [np.asarray(m, dtype=np.float64) for m in members]

    def draws(self, x, n_draws=None, rng=None) -> np.ndarray:
        out = np.empty((len(x), len(self.members), self.arch.class_count))
        for m, theta in enumerate(self.members):
            out[:, m] = _batched_softmax(self.arch, theta, x)
        return check_prob_vector(out)


def _batched_softmax(arch, theta, x, batch_size: int = 256):
    return np.concatenate(
        [softmax(forward_batch(arch, theta, x[i : i + batch_size]).logits) for i in range(0, len(x), batch_size)]
    )


# ---------------------------------------------------------------------------
# posterior file: checkpoint header (version 2, vector = mean) followed by
#   u64 n | n x f64 diag_var
#   u32 rank | u64 n | n x f64 deviation (column-major: one column after another)
#   f64 scale


def save_posterior(post: SwagPosterior, arch: Architecture, path) -> None:
    if post.mean.shape != (param_count(arch),):
        raise ValueError("posterior does not match architecture")
    dev = np.ascontiguousarray(post.deviation.T, dtype="<f8")
    blob = (
        encode_header(arch, POSTERIOR_VERSION, post.mean)
        + struct.pack("<Q", post.diag_var.size)
        + np.ascontiguousarray(post.diag_var, dtype="<f8").tobytes()
        + struct.pack("<IQ", post.rank, dev.size)
        + dev.tobytes()
        + struct.pack("<d", post.scale)
    )
    Path(path).write_bytes(blob)


def load_posterior(path) -> tuple[Architecture, SwagPosterior]:
    arch, mean, r = decode_header(Path(path).read_bytes(), POSTERIOR_VERSION)
    p = mean.size
    (n_var,) = r.unpack("<Q")
    if n_var != p:
        raise FormatError("diag_var section length does not match parameter count")
    var = r.f64s(n_var)
    rank, n_dev = r.unpack("<IQ")
    if n_dev != rank * p:
        raise FormatError("deviation section length does not match rank x parameter count")
    dev = r.f64s(n_dev).reshape(rank, p).T.copy()
    (scale,) = r.unpack("<d")
    r.done()
    try:
        return arch, SwagPosterior(mean, var, dev, scale)
    except (ValueError, InvalidStateError) as exc:
        raise FormatError(f"invalid posterior contents: {exc}") from None
