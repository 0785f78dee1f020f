"""Differentiable building blocks for the generator.

Tensors are feature maps shaped ``(depth, eeg_channels, time)``, optionally
with a leading batch axis.  Convolutions run along time only and share their
kernels across EEG channels, so the channel axis is never resampled.

Every forward op has a ``*_backward`` companion that maps the upstream
gradient to gradients of its inputs and parameters.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

WEIGHTS_MAGIC = b"FGW1"
WEIGHTS_VERSION = 1


def _to_cl(x):
    """``(d, C, t)`` or ``(B, d, C, t)`` to channels-last ``(B, C, t, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.transpose(1, 2, 0)[None], True
    if x.ndim == 4:
        return x.transpose(0, 2, 3, 1), False
    raise ValueError(f"expected (d, C, t) or (B, d, C, t) tensor, got shape {x.shape}")


def _from_cl(y, squeeze):
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    return y[0] if squeeze else y


@dataclass
class ConvLayerParams:
    """Kernels ``(d_out, d_in, 2 * stride)`` plus bias; ``direction`` is ``down`` or ``up``."""

    kernels: np.ndarray
    bias: np.ndarray
    stride: int
    direction: str = "down"

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.direction not in ("down", "up"):
            raise ValueError("direction must be 'down' or 'up'")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")
        if self.kernels.ndim != 3 or self.kernels.shape[2] != 2 * self.stride:
            raise ValueError(f"kernel shape {self.kernels.shape} needs length 2*stride = {2 * self.stride}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ValueError("bias needs one value per output depth")

    @property
    def d_out(self) -> int:
        return self.kernels.shape[0]

    @property
    def d_in(self) -> int:
        return self.kernels.shape[1]

    @classmethod
    def init(cls, d_in, d_out, stride, direction, rng: np.random.Generator):
        k = 2 * stride
        bound = np.sqrt(1.0 / (d_in * k))
        W = rng.uniform(-bound, bound, size=(d_out, d_in, k))
        b = rng.uniform(-bound, bound, size=d_out)
        return cls(W, b, stride, direction)

    def copy(self) -> "ConvLayerParams":
        return ConvLayerParams(self.kernels.copy(), self.bias.copy(), self.stride, self.direction)


# ------------------------------------------------- channels-last convolutions
# The generator works on (B, C, t, d) arrays directly; the public
# (d, C, t) functions below wrap these.


def conv_cl(x, p: ConvLayerParams):
    if p.direction != "down":
        raise ValueError("conv_time needs a 'down' layer")
    if x.shape[3] != p.d_in:
        raise ValueError(f"input depth {x.shape[3]} != layer d_in {p.d_in}")
    if x.shape[2] % p.stride:
        raise ValueError(f"time length {x.shape[2]} not divisible by stride {p.stride}")
    y = kernels.corr_down(x, p.kernels, p.stride)
    y += p.bias
    return y


def conv_cl_backward(x, p: ConvLayerParams, gy):
    gx = kernels.scatter_up(gy, p.kernels, p.stride, x.shape[2])
    gW = kernels.kernel_grad(x, gy, p.stride)
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gW, gb


def tconv_cl(x, p: ConvLayerParams):
    if p.direction != "up":
        raise ValueError("tconv_time needs an 'up' layer")
    if x.shape[3] != p.d_in:
        raise ValueError(f"input depth {x.shape[3]} != layer d_in {p.d_in}")
    K = p.kernels.transpose(1, 0, 2)
    y = kernels.scatter_up(x, K, p.stride, x.shape[2] * p.stride)
    y += p.bias
    return y


def tconv_cl_backward(x, p: ConvLayerParams, gy):
    K = p.kernels.transpose(1, 0, 2)
    gx = kernels.corr_down(gy, K, p.stride)
    gW = np.ascontiguousarray(kernels.kernel_grad(gy, x, p.stride).transpose(1, 0, 2))
    gb = gy.sum(axis=(0, 1, 2))
    return gx, gW, gb


# ------------------------------------------------------------------ convolutions


def conv_time(x, p: ConvLayerParams):
    """Strided temporal convolution: ``t`` samples in, ``t / stride`` out."""
    xc, squeeze = _to_cl(x)
    return _from_cl(conv_cl(xc, p), squeeze)


def conv_time_backward(x, p: ConvLayerParams, gy):
    """Returns ``(grad_x, grad_kernels, grad_bias)``."""
    xc, squeeze = _to_cl(x)
    gyc, _ = _to_cl(gy)
    gx, gW, gb = conv_cl_backward(xc, p, gyc)
    return _from_cl(gx, squeeze), gW, gb


def tconv_time(x, p: ConvLayerParams):
    """Transposed temporal convolution: ``t`` samples in, ``t * stride`` out.

    Without bias this is the exact adjoint of :func:`conv_time` run with
    ``kernels.transpose(1, 0, 2)``.
    """
    xc, squeeze = _to_cl(x)
    return _from_cl(tconv_cl(xc, p), squeeze)


def tconv_time_backward(x, p: ConvLayerParams, gy):
    xc, squeeze = _to_cl(x)
    gyc, _ = _to_cl(gy)
    gx, gW, gb = tconv_cl_backward(xc, p, gyc)
    return _from_cl(gx, squeeze), gW, gb


# ------------------------------------------------------------ pointwise ops


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gy):
    return gy * (np.asarray(x) > 0)


def concat_depth(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    axis = a.ndim - 3
    if a.shape[:axis] != b.shape[:axis] or a.shape[axis + 1:] != b.shape[axis + 1:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape} along depth")
    return np.concatenate([a, b], axis=axis)


def concat_depth_backward(gy, depth_a: int):
    gy = np.asarray(gy)
    axis = gy.ndim - 3
    return np.split(gy, [depth_a], axis=axis)


def mse(a, b) -> float:
    """Mean squared error over every element (batch included)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def mse_backward(a, b):
    a = np.asarray(a, dtype=np.float64)
    return 2.0 * (a - np.asarray(b, dtype=np.float64)) / a.size


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update of ``params`` (in place); returns ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# --------------------------------------------------------------- weights file


def write_weights(path, layers, meta=None) -> None:
    """Serialize named layers.

    Layout: 4-byte magic ``FGW1``, uint32 little-endian header length, a UTF-8
    JSON header ``{format_version, layers: [{name, d_out, d_in, k, stride,
    direction}], meta}``, then float32 little-endian kernels and biases in
    layer order.
    """
    header = {
        "format_version": WEIGHTS_VERSION,
        "layers": [
            {"name": name, "d_out": p.d_out, "d_in": p.d_in, "k": int(p.kernels.shape[2]),
             "stride": int(p.stride), "direction": p.direction}
            for name, p in layers
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [WEIGHTS_MAGIC, struct.pack("<I", len(blob)), blob]
    for _, p in layers:
        parts.append(np.ascontiguousarray(p.kernels, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(p.bias, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_weights(path):
    """Inverse of :func:`write_weights`: returns ``(layers, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not a weights file")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n].decode())
    if header.get("format_version") != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weights format {header.get('format_version')}")
    off = 8 + n
    layers = []
    for spec in header["layers"]:
        nk = spec["d_out"] * spec["d_in"] * spec["k"]
        W = np.frombuffer(raw, dtype="<f4", count=nk, offset=off).astype(np.float64)
        off += 4 * nk
        b = np.frombuffer(raw, dtype="<f4", count=spec["d_out"], offset=off).astype(np.float64)
        off += 4 * spec["d_out"]
        W = W.reshape(spec["d_out"], spec["d_in"], spec["k"])
        layers.append((spec["name"], ConvLayerParams(W, b, spec["stride"], spec["direction"])))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return layers, header["meta"]
