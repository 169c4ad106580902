"""Seeded random streams, resampling and small probability helpers.

All randomness in the package flows through :class:`RngStream`, a thin
wrapper around numpy's Philox4x64 counter-based generator.  Philox output
is defined bit-for-bit by (key, counter), so a stream is reproducible on
every platform numpy supports.  Child streams are derived with
``SeedSequence(seed, spawn_key=path)``, which hashes the seed together with
the child path into a fresh Philox key.
"""

from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)

_SEED_MASK = (1 << 64) - 1


class RngStream:
    """Deterministic random stream identified by a 64-bit seed and a split path.

    Not safe for concurrent use; give each worker its own ``split``.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0 or seed > _SEED_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"

    def split(self, i: int) -> "RngStream":
        """Child stream number ``i``; independent of how much of ``self`` was consumed."""
        if i < 0:
            raise ValueError("split index must be non-negative")
        return RngStream(self.seed, self.path + (i,))

    def next_uniform(self) -> float:
        return float(self._gen.random())

    def next_normal(self) -> float:
        return float(self._gen.standard_normal())

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)


def seeded_stream(seed: int) -> RngStream:
    return RngStream(seed)


def resample_linear(series, target_steps: int) -> np.ndarray:
    """Channel-wise linear interpolation of a ``T_in x L`` matrix onto ``target_steps`` rows.

    Output row ``i`` sits at input position ``i * (T_in - 1) / (target_steps - 1)``,
    so first and last rows are copied exactly.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"expected a non-empty T x L matrix, got shape {x.shape}")
    if target_steps < 1:
        raise ValueError("target_steps must be positive")
    t_in = x.shape[0]
    if t_in == 1:
        return np.repeat(x, target_steps, axis=0)
    if t_in == target_steps:
        return x.copy()
    if target_steps == 1:
        return x[:1].copy()
    pos = np.arange(target_steps) * ((t_in - 1) / (target_steps - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), t_in - 2)
    frac = (pos - lo)[:, None]
    out = x[lo] * (1.0 - frac) + x[lo + 1] * frac
    # pin endpoints against rounding in pos
    out[0] = x[0]
    out[-1] = x[-1]
    return out


def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains NaN or infinity")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_bits(p) -> np.ndarray | float:
    """Shannon entropy in bits over the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    h = -np.sum(p * np.log(safe), axis=-1) / LN2
    # -0.0 and tiny negatives from rounding
    h = np.maximum(h, 0.0)
    return float(h) if np.ndim(h) == 0 else h


def check_prob_vector(p, atol: float = 1e-9) -> np.ndarray:
    """Validate ``p`` as a probability vector (or rows of them) and return it."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("probability vectors need at least two classes")
    if np.any(p < -atol) or np.any(p > 1 + atol):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.allclose(p.sum(axis=-1), 1.0, rtol=0.0, atol=atol):
        raise ValueError("probabilities must sum to 1")
    return p


def argmax_lowest(p) -> np.ndarray | int:
    """Argmax over the last axis; ties go to the lowest class index."""
    # np.argmax already returns the first maximal index
    return np.argmax(np.asarray(p), axis=-1)


class FormatError(ValueError):
    """Malformed file or wire format."""


class ParseError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InvalidStateError(RuntimeError):
    """An object is not in a state that supports the requested operation."""
