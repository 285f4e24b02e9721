"""Depth-adapted convolution and average pooling, forward and backward.

The adapted operators consume a precomputed offset field: each kernel tap
samples the input at ``regular position + offset`` with zero-padded
bilinear interpolation, so a zero offset field reproduces the standard
operator exactly.  Offsets never receive gradients; backward only
produces gradients for the input and the weights.

Accumulation happens in float64 and is cast to float32 at the end.  Two
forward paths share one interface: ``method="direct"`` streams taps one
at a time, ``method="gathered"`` materializes all sampled taps first and
contracts once (the im2col-style variant the benchmark harness compares
against).

Every kernel here is vectorized single-threaded numpy with a fixed
accumulation order (einsum without BLAS dispatch, sequential bincount
scatter), so outputs are bit-identical across runs and unaffected by
BLAS thread counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import KernelSpec
from .tensor import (
    FeatureTensor,
    OffsetField,
    _bilinear_gather,
    _bilinear_scatter_weights,
)

__all__ = [
    "ConvWeights",
    "OpSummary",
    "conv_param_count",
    "standard_conv",
    "za_conv_forward",
    "za_conv_backward",
    "standard_avg_pool",
    "za_avg_pool",
]


@dataclass(frozen=True)
class ConvWeights:
    """Dense kernel bank, layout (out_channels, in_channels, N, N)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[2] != arr.shape[3]:
            raise ConfigError(f"weights must be (co, ci, N, N), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("weights contain non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def out_channels(self) -> int:
        return self.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.data.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.data.shape[2]

    @property
    def param_count(self) -> int:
        return int(self.data.size)


@dataclass(frozen=True)
class OpSummary:
    """Bookkeeping for one adapted-operator invocation.

    ``degenerate_pixels`` counts output pixels where at least one tap
    sampled fully outside the input (contributing nothing);
    ``oob_sample_fraction`` is the fraction of all (pixel, tap) samples
    whose bilinear weights were clipped by the border at all.
    """

    degenerate_pixels: int
    oob_sample_fraction: float
    elapsed_seconds: float

    def __post_init__(self):
        if not (0.0 <= self.oob_sample_fraction <= 1.0):
            raise ConfigError(
                f"out-of-bounds fraction {self.oob_sample_fraction} outside [0, 1]"
            )

    def as_dict(self, include_elapsed: bool = True) -> dict:
        d = {
            "degenerate_pixels": self.degenerate_pixels,
            "oob_sample_fraction": self.oob_sample_fraction,
        }
        if include_elapsed:
            d["elapsed_seconds"] = self.elapsed_seconds
        return d


def conv_param_count(in_channels: int, out_channels: int, size: int) -> int:
    """Learnable parameter count of an NxN conv; identical for the
    standard and the depth-adapted operator (offsets are not learned)."""
    return out_channels * in_channels * size * size


def _check_conv_shapes(x: FeatureTensor, w: ConvWeights, spec: KernelSpec):
    if w.kernel_size != spec.size:
        raise ConfigError(
            f"weights are {w.kernel_size}x{w.kernel_size} but spec says {spec.size}x{spec.size}"
        )
    if w.in_channels != x.channels:
        raise ConfigError(
            f"weights expect {w.in_channels} input channels, tensor has {x.channels}"
        )
    return spec.output_shape(x.height, x.width)


def _check_offsets(offsets: OffsetField, spec: KernelSpec, out_h: int, out_w: int):
    if offsets.tap_count != spec.tap_count:
        raise ConfigError(
            f"offset field has {offsets.tap_count} taps, spec needs {spec.tap_count}"
        )
    if (offsets.height, offsets.width) != (out_h, out_w):
        raise ConfigError(
            f"offset field is {offsets.height}x{offsets.width}, "
            f"output is {out_h}x{out_w}"
        )


def _padded_tap_slices(x: FeatureTensor, spec: KernelSpec, out_h: int, out_w: int) -> np.ndarray:
    """Regular-grid tap values, shape (ci, N*N, out_h, out_w), float64."""
    p = spec.padding
    data = x.data.astype(np.float64)
    if p > 0:
        data = np.pad(data, ((0, 0), (p, p), (p, p)))
    di, dj = spec.tap_grid()
    start_v = di + spec.dilation * spec.center  # first input row read by tap
    start_u = dj + spec.dilation * spec.center
    taps = np.empty((x.channels, spec.tap_count, out_h, out_w), dtype=np.float64)
    s = spec.stride
    for n in range(spec.tap_count):
        v0 = int(start_v[n])
        u0 = int(start_u[n])
        taps[:, n] = data[:, v0 : v0 + out_h * s : s, u0 : u0 + out_w * s : s]
    return taps


def _sample_positions(spec: KernelSpec, offsets: OffsetField):
    """Deformed sampling positions (u, v), each (N*N, out_h, out_w) float64."""
    oh, ow = offsets.height, offsets.width
    c = spec.center
    di, dj = spec.tap_grid()
    base_v = np.arange(oh, dtype=np.float64) * spec.stride - spec.padding + spec.dilation * c
    base_u = np.arange(ow, dtype=np.float64) * spec.stride - spec.padding + spec.dilation * c
    off = offsets.data.astype(np.float64).reshape(spec.tap_count, 2, oh, ow)
    v = base_v[None, :, None] + di[:, None, None] + off[:, 0]
    u = base_u[None, None, :] + dj[:, None, None] + off[:, 1]
    return np.broadcast_arrays(u, v)


def _gather_taps(x: FeatureTensor, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear samples at deformed positions, (ci, N*N, out_h, out_w)."""
    return _bilinear_gather(x.data, u, v)


def _oob_stats(h: int, w: int, u: np.ndarray, v: np.ndarray) -> tuple[int, float]:
    inside_u = (u >= 0.0) & (u <= w - 1)
    inside_v = (v >= 0.0) & (v <= h - 1)
    clipped = ~(inside_u & inside_v)  # any part of the bilinear footprint lost
    fully_out = (u <= -1.0) | (u >= w) | (v <= -1.0) | (v >= h)
    degenerate = int(np.count_nonzero(fully_out.any(axis=0)))
    frac = float(np.count_nonzero(clipped)) / clipped.size
    return degenerate, frac


def standard_conv(x: FeatureTensor, w: ConvWeights, spec: KernelSpec) -> FeatureTensor:
    """Direct convolution over the regular dilated grid with zero padding."""
    out_h, out_w = _check_conv_shapes(x, w, spec)
    w2 = w.data.astype(np.float64).reshape(w.out_channels, w.in_channels, spec.tap_count)
    out = np.zeros((w.out_channels, out_h, out_w), dtype=np.float64)
    taps = _padded_tap_slices(x, spec, out_h, out_w)
    for n in range(spec.tap_count):
        out += np.einsum("oi,ihw->ohw", w2[:, :, n], taps[:, n])
    return FeatureTensor(out.astype(np.float32))


def za_conv_forward(
    x: FeatureTensor,
    w: ConvWeights,
    offsets: OffsetField,
    spec: KernelSpec,
    method: str = "direct",
) -> tuple[FeatureTensor, OpSummary]:
    """Depth-adapted convolution: taps read ``regular grid + offset``.

    ``method="direct"`` accumulates one tap at a time; ``"gathered"``
    materializes the full (ci, N*N, h, w) sample block and contracts it
    in one step.  Both return identical results up to float64 summation
    order.
    """
    t0 = time.perf_counter()
    out_h, out_w = _check_conv_shapes(x, w, spec)
    _check_offsets(offsets, spec, out_h, out_w)
    u, v = _sample_positions(spec, offsets)
    w2 = w.data.astype(np.float64).reshape(w.out_channels, w.in_channels, spec.tap_count)

    if method == "direct":
        out = np.zeros((w.out_channels, out_h, out_w), dtype=np.float64)
        for n in range(spec.tap_count):
            samp = _bilinear_gather(x.data, u[n], v[n])
            out += np.einsum("oi,ihw->ohw", w2[:, :, n], samp)
    elif method == "gathered":
        samp = _gather_taps(x, u, v)
        out = np.einsum("oin,inhw->ohw", w2, samp)
    else:
        raise ConfigError(f"unknown method {method!r}, expected 'direct' or 'gathered'")

    degenerate, frac = _oob_stats(x.height, x.width, u, v)
    summary = OpSummary(degenerate, frac, time.perf_counter() - t0)
    return FeatureTensor(out.astype(np.float32)), summary


def za_conv_backward(
    x: FeatureTensor,
    w: ConvWeights,
    offsets: OffsetField,
    spec: KernelSpec,
    grad_out: FeatureTensor,
) -> tuple[FeatureTensor, ConvWeights]:
    """Gradients of the adapted convolution w.r.t. input and weights.

    ``grad_w[o,i,n] = sum_p grad_out[o,p] * sample(x, i, pos_n(p))`` and
    ``grad_x`` distributes ``grad_out * w`` through the bilinear weights
    onto the four integer neighbors of each sample.  The offsets receive
    no gradient.
    """
    out_h, out_w = _check_conv_shapes(x, w, spec)
    _check_offsets(offsets, spec, out_h, out_w)
    if grad_out.data.shape != (w.out_channels, out_h, out_w):
        raise ConfigError(
            f"grad_out shape {grad_out.data.shape} does not match output "
            f"({w.out_channels}, {out_h}, {out_w})"
        )
    u, v = _sample_positions(spec, offsets)
    g = grad_out.data.astype(np.float64)
    w2 = w.data.astype(np.float64).reshape(w.out_channels, w.in_channels, spec.tap_count)

    samp = _gather_taps(x, u, v)  # (ci, n2, oh, ow)
    grad_w = np.einsum("ohw,inhw->oin", g, samp).reshape(w.data.shape)

    # Per-tap upstream gradient for each input channel, then bilinear scatter.
    gpix = np.einsum("oin,ohw->inhw", w2, g)  # (ci, n2, oh, ow)
    idx, wgt, _ = _bilinear_scatter_weights(x.height, x.width, u, v)  # (4, n2, oh, ow)
    flat_idx = idx.ravel()
    grad_x = np.empty((x.channels, x.height * x.width), dtype=np.float64)
    for i in range(x.channels):
        contrib = gpix[i][None, ...] * wgt
        grad_x[i] = np.bincount(
            flat_idx, weights=contrib.ravel(), minlength=x.height * x.width
        )
    grad_x = grad_x.reshape(x.channels, x.height, x.width)
    return FeatureTensor(grad_x.astype(np.float32)), ConvWeights(grad_w.astype(np.float32))


def standard_avg_pool(x: FeatureTensor, spec: KernelSpec) -> FeatureTensor:
    """Average pooling over the regular grid; divisor is always N*N."""
    out_h, out_w = spec.output_shape(x.height, x.width)
    taps = _padded_tap_slices(x, spec, out_h, out_w)
    out = taps.sum(axis=1) / spec.tap_count
    return FeatureTensor(out.astype(np.float32))


def za_avg_pool(
    x: FeatureTensor, offsets: OffsetField, spec: KernelSpec
) -> tuple[FeatureTensor, OpSummary]:
    """Depth-adapted average pooling.

    The divisor stays at the full tap count N*N even when deformed taps
    fall outside the input (they contribute zero), which darkens borders
    rather than re-weighting them.
    """
    t0 = time.perf_counter()
    out_h, out_w = spec.output_shape(x.height, x.width)
    _check_offsets(offsets, spec, out_h, out_w)
    u, v = _sample_positions(spec, offsets)
    samp = _gather_taps(x, u, v)
    out = samp.sum(axis=1) / spec.tap_count
    degenerate, frac = _oob_stats(x.height, x.width, u, v)
    summary = OpSummary(degenerate, frac, time.perf_counter() - t0)
    return FeatureTensor(out.astype(np.float32)), summary
