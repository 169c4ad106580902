"""CNN + TCN classifier with exact backprop over a flat float64 parameter vector.

Pipeline for an input of shape ``(steps, channels)``:

    for each conv block: conv1d (same padding) -> ReLU -> max-pool(2, stride 2) -> dropout
    for each dilation d: h <- ReLU(causal_conv_d(h)) + residual(h)
    global average pool over time -> dense -> logits

``residual`` is the identity when channel counts match and a 1x1
projection otherwise.  "Same" padding for an even kernel puts the extra
zero on the right: ``left = (k - 1) // 2``, ``right = k - 1 - left``.
Max-pool output length is ``floor(T / 2)``; a trailing odd step is dropped.
Causal convolutions pad ``(k - 1) * d`` zeros on the left only.

Parameter layout (in order, each block flattened C-contiguously)::

    conv{i}.w   (k, c_in, filters)      conv{i}.b   (filters,)
    tcn{j}.w    (k, c_in, channels)     tcn{j}.b    (channels,)
    tcn{j}.pw   (c_in, channels)        tcn{j}.pb   (channels,)    only if c_in != channels
    dense.w     (channels, K)           dense.b     (K,)

For the desk preset (13 inputs, two blocks of 64 filters with kernel 4,
TCN with 48 channels, kernel 4, dilations [1, 2], K = 10) this is

    conv0   4*13*64 + 64 =  3392
    conv1   4*64*64 + 64 = 16448
    tcn0    4*64*48 + 48 = 12336   + projection 64*48 + 48 = 3120
    tcn1    4*48*48 + 48 =  9264
    dense   48*10 + 10   =   490
    total                  45050
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import FormatError, RngStream, softmax


@dataclass
class ConvBlock:
    filters: int = 64
    kernel_size: int = 4
    dropout_rate: float = 0.2


@dataclass
class TcnConfig:
    channels: int = 48
    kernel_size: int = 4
    dilations: list[int] = field(default_factory=lambda: [1, 2])


@dataclass
class Architecture:
    input_steps: int = 64
    input_channels: int = 13
    conv_blocks: list[ConvBlock] = field(default_factory=lambda: [ConvBlock(), ConvBlock()])
    tcn: TcnConfig = field(default_factory=TcnConfig)
    class_count: int = 10

    def __post_init__(self):
        self.conv_blocks = [b if isinstance(b, ConvBlock) else ConvBlock(**b) for b in self.conv_blocks]
        if not isinstance(self.tcn, TcnConfig):
            self.tcn = TcnConfig(**self.tcn)
        self.validate()

    def validate(self) -> None:
        if self.input_steps < 1 or self.input_channels < 1:
            raise ValueError("input shape must be positive")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        steps = self.input_steps
        for b in self.conv_blocks:
            if b.filters < 1 or b.kernel_size < 1:
                raise ValueError("conv filters and kernel sizes must be >= 1")
            if not 0.0 <= b.dropout_rate < 1.0:
                raise ValueError("dropout rate must be in [0, 1)")
            steps //= 2
        if steps < 1:
            raise ValueError("too many pooling stages for input_steps")
        t = self.tcn
        if t.channels < 1 or t.kernel_size < 1:
            raise ValueError("tcn channels and kernel size must be >= 1")
        d = list(t.dilations)
        if any(x < 1 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("dilations must be strictly increasing positive integers")

    @classmethod
    def desk(cls, class_count: int = 10) -> "Architecture":
        return cls(class_count=class_count)

    @classmethod
    def paper(cls, class_count: int = 10) -> "Architecture":
        return cls(
            conv_blocks=[ConvBlock(200, 4, 0.2), ConvBlock(200, 4, 0.2)],
            tcn=TcnConfig(120, 4, [1, 2]),
            class_count=class_count,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "Architecture":
        return cls(**doc)

    def feature_channels(self) -> int:
        if self.tcn.dilations:
            return self.tcn.channels
        return self.conv_blocks[-1].filters if self.conv_blocks else self.input_channels


@dataclass(frozen=True)
class LayerSlot:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def param_layout(arch: Architecture) -> list[LayerSlot]:
    slots = []
    offset = 0

    def add(name, shape):
        nonlocal offset
        slots.append(LayerSlot(name, tuple(shape), offset))
        offset += int(np.prod(shape))

    c = arch.input_channels
    for i, b in enumerate(arch.conv_blocks):
        add(f"conv{i}.w", (b.kernel_size, c, b.filters))
        add(f"conv{i}.b", (b.filters,))
        c = b.filters
    ch = arch.tcn.channels
    for j, _ in enumerate(arch.tcn.dilations):
        add(f"tcn{j}.w", (arch.tcn.kernel_size, c, ch))
        add(f"tcn{j}.b", (ch,))
        if c != ch:
            add(f"tcn{j}.pw", (c, ch))
            add(f"tcn{j}.pb", (ch,))
        c = ch
    add("dense.w", (c, arch.class_count))
    add("dense.b", (arch.class_count,))
    return slots


def param_count(arch: Architecture) -> int:
    return sum(s.size for s in param_layout(arch))


def unflatten(arch: Architecture, params: np.ndarray) -> dict[str, np.ndarray]:
    """Named views into ``params`` (no copy)."""
    params = np.asarray(params, dtype=np.float64)
    layout = param_layout(arch)
    total = layout[-1].offset + layout[-1].size
    if params.shape != (total,):
        raise ValueError(f"parameter vector has shape {params.shape}, architecture needs ({total},)")
    return {s.name: params[s.offset : s.offset + s.size].reshape(s.shape) for s in layout}


def flatten(arch: Architecture, named: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(named[s.name], dtype=np.float64).ravel() for s in param_layout(arch)])


def init_params(arch: Architecture, rng: RngStream) -> np.ndarray:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    out = np.zeros(param_count(arch))
    for s in param_layout(arch):
        if s.name.endswith(".b") or s.name.endswith(".pb"):
            continue
        fan_in = int(np.prod(s.shape[:-1]))
        if s.name == "dense.w":
            std = np.sqrt(1.0 / fan_in)
        else:
            std = np.sqrt(2.0 / fan_in)
        out[s.offset : s.offset + s.size] = std * rng.normal(s.size)
    return out


# ---------------------------------------------------------------------------
# layer primitives, batch-major (B, T, C)


def _conv_forward(x, w, b, dilation, pad_left, pad_right):
    k = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad_left, pad_right), (0, 0)))
    t_out = xp.shape[1] - (k - 1) * dilation
    cols = np.stack([xp[:, j * dilation : j * dilation + t_out] for j in range(k)], axis=2)
    bsz, _, _, c = cols.shape
    cols2 = cols.reshape(bsz * t_out, k * c)
    out = cols2 @ w.reshape(k * c, -1) + b
    return out.reshape(bsz, t_out, -1), cols2


def _conv_backward(dout, cols2, w, x_shape, dilation, pad_left, pad_right):
    k, c, f = w.shape
    bsz, t_in, _ = x_shape
    t_out = dout.shape[1]
    d2 = dout.reshape(-1, f)
    dw = (cols2.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(k * c, f).T).reshape(bsz, t_out, k, c)
    dxp = np.zeros((bsz, t_in + pad_left + pad_right, c))
    for j in range(k):
        dxp[:, j * dilation : j * dilation + t_out] += dcols[:, :, j]
    return dxp[:, pad_left : pad_left + t_in], dw, db


def _pool_forward(a):
    bsz, t, f = a.shape
    t2 = t // 2
    win = a[:, : 2 * t2].reshape(bsz, t2, 2, f)
    arg = np.argmax(win, axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0]
    return out, arg


def _pool_backward(dout, arg, t):
    bsz, t2, f = dout.shape
    dwin = np.zeros((bsz, t2, 2, f))
    np.put_along_axis(dwin, arg[:, :, None, :], dout[:, :, None, :], axis=2)
    da = np.zeros((bsz, t, f))
    da[:, : 2 * t2] = dwin.reshape(bsz, 2 * t2, f)
    return da


# ---------------------------------------------------------------------------


@dataclass
class ForwardOutput:
    logits: np.ndarray
    cache: dict


def forward_batch(arch: Architecture, params, x, rng: RngStream | None = None) -> ForwardOutput:
    """Forward a ``(B, steps, channels)`` batch.

    Passing ``rng`` selects training mode: inverted dropout masks are drawn
    from it.  Without ``rng`` the pass is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (arch.input_steps, arch.input_channels):
        raise ValueError(
            f"input shape {x.shape[1:]} does not match architecture "
            f"({arch.input_steps}, {arch.input_channels})"
        )
    p = unflatten(arch, params)
    cache: dict = {"conv": [], "tcn": []}
    h = x
    for i, blk in enumerate(arch.conv_blocks):
        k = blk.kernel_size
        pl = (k - 1) // 2
        z, cols = _conv_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"], 1, pl, k - 1 - pl)
        a = np.maximum(z, 0.0)
        pooled, arg = _pool_forward(a)
        mask = None
        if rng is not None and blk.dropout_rate > 0:
            keep = 1.0 - blk.dropout_rate
            mask = (rng.uniform(size=pooled.shape) < keep) / keep
            pooled = pooled * mask
        cache["conv"].append((h.shape, cols, z, arg, mask))
        h = pooled
    kt = arch.tcn.kernel_size
    for j, d in enumerate(arch.tcn.dilations):
        pad = (kt - 1) * d
        z, cols = _conv_forward(h, p[f"tcn{j}.w"], p[f"tcn{j}.b"], d, pad, 0)
        a = np.maximum(z, 0.0)
        if f"tcn{j}.pw" in p:
            res = h @ p[f"tcn{j}.pw"] + p[f"tcn{j}.pb"]
        else:
            res = h
        cache["tcn"].append((h, cols, z))
        h = a + res
    cache["pooled_in"] = h
    g = h.mean(axis=1)
    logits = g @ p["dense.w"] + p["dense.b"]
    cache["features"] = g
    return ForwardOutput(logits, cache)


def backward_batch(arch: Architecture, params, output: ForwardOutput, targets) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy (nats) over the batch and its gradient."""
    logits = output.logits
    targets = np.asarray(targets, dtype=np.int64)
    bsz, n_cls = logits.shape
    if targets.shape != (bsz,):
        raise ValueError("one target per batch element required")
    if targets.min() < 0 or targets.max() >= n_cls:
        raise ValueError(f"target out of range for {n_cls} classes")
    p = unflatten(arch, params)
    grad = np.zeros_like(np.asarray(params, dtype=np.float64))
    gp = unflatten(arch, grad)
    cache = output.cache

    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(bsz), targets]))
    dlogits = softmax(logits)
    dlogits[np.arange(bsz), targets] -= 1.0
    dlogits /= bsz

    g = cache["features"]
    gp["dense.w"][...] = g.T @ dlogits
    gp["dense.b"][...] = dlogits.sum(axis=0)
    dg = dlogits @ p["dense.w"].T
    h_last = cache["pooled_in"]
    dh = np.broadcast_to(dg[:, None, :] / h_last.shape[1], h_last.shape).copy()

    kt = arch.tcn.kernel_size
    for j in reversed(range(len(arch.tcn.dilations))):
        d = arch.tcn.dilations[j]
        h_in, cols, zj = cache["tcn"][j]
        dz = dh * (zj > 0)
        dx, dw, db = _conv_backward(dz, cols, p[f"tcn{j}.w"], h_in.shape, d, (kt - 1) * d, 0)
        gp[f"tcn{j}.w"][...] = dw
        gp[f"tcn{j}.b"][...] = db
        if f"tcn{j}.pw" in p:
            c_in = h_in.shape[2]
            gp[f"tcn{j}.pw"][...] = h_in.reshape(-1, c_in).T @ dh.reshape(-1, dh.shape[2])
            gp[f"tcn{j}.pb"][...] = dh.sum(axis=(0, 1))
            dx = dx + dh @ p[f"tcn{j}.pw"].T
        else:
            dx = dx + dh
        dh = dx

    for i in reversed(range(len(arch.conv_blocks))):
        blk = arch.conv_blocks[i]
        x_shape, cols, zi, arg, mask = cache["conv"][i]
        if mask is not None:
            dh = dh * mask
        da = _pool_backward(dh, arg, zi.shape[1])
        dz = da * (zi > 0)
        k = blk.kernel_size
        pl = (k - 1) // 2
        dh, dw, db = _conv_backward(dz, cols, p[f"conv{i}.w"], x_shape, 1, pl, k - 1 - pl)
        gp[f"conv{i}.w"][...] = dw
        gp[f"conv{i}.b"][...] = db
    return loss, grad


def forward(arch: Architecture, params, x, rng: RngStream | None = None) -> ForwardOutput:
    """Single-sample forward of a ``(steps, channels)`` matrix; logits have shape ``(K,)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arch.input_steps, arch.input_channels):
        raise ValueError(f"input shape {x.shape} does not match architecture")
    out = forward_batch(arch, params, x[None], rng)
    return ForwardOutput(out.logits[0], out.cache)


def backward(arch: Architecture, params, output: ForwardOutput, target: int) -> tuple[float, np.ndarray]:
    if not 0 <= target < arch.class_count:
        raise ValueError(f"target {target} out of range for {arch.class_count} classes")
    batched = ForwardOutput(output.logits[None], output.cache)
    return backward_batch(arch, params, batched, [target])


def predict_proba(arch: Architecture, params, x, batch_size: int = 256) -> np.ndarray:
    """Eval-mode softmax for a ``(n, steps, channels)`` array."""
    x = np.asarray(x, dtype=np.float64)
    out = [softmax(forward_batch(arch, params, x[i : i + batch_size]).logits) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoint container
#
#   b"UQHW" | u32 version | u32 json length | arch json (utf-8) | u64 P | P x f64
#
# all little-endian.  Version 1 holds a parameter vector; version 2 (see
# posterior.py) appends posterior sections after the vector.

MAGIC = b"UQHW"
CHECKPOINT_VERSION = 1


def encode_header(arch: Architecture, version: int, values: np.ndarray) -> bytes:
    desc = json.dumps(arch.to_dict(), sort_keys=True).encode("utf-8")
    values = np.ascontiguousarray(values, dtype="<f8")
    return (
        MAGIC
        + struct.pack("<II", version, len(desc))
        + desc
        + struct.pack("<Q", values.size)
        + values.tobytes()
    )


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("truncated file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def done(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(f"{len(self.blob) - self.pos} trailing bytes")


def decode_header(blob: bytes, version: int) -> tuple[Architecture, np.ndarray, _Reader]:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic; not a UQHW file")
    (ver, n_desc) = r.unpack("<II")
    if ver != version:
        raise FormatError(f"unsupported format version {ver} (expected {version})")
    try:
        arch = Architecture.from_dict(json.loads(r.take(n_desc).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad architecture descriptor: {exc}") from None
    (n_params,) = r.unpack("<Q")
    if n_params != param_count(arch):
        raise FormatError(f"parameter count {n_params} does not match architecture ({param_count(arch)})")
    return arch, r.f64s(n_params), r


def save_checkpoint(params, arch: Architecture, path) -> None:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (param_count(arch),):
        raise ValueError("parameter vector does not match architecture")
    Path(path).write_bytes(encode_header(arch, CHECKPOINT_VERSION, params))


def load_checkpoint(path) -> tuple[Architecture, np.ndarray]:
    arch, values, r = decode_header(Path(path).read_bytes(), CHECKPOINT_VERSION)
    r.done()
    return arch, values
