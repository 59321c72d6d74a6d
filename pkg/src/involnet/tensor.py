"""Array primitives shared by every layer.

Tensors are plain ``numpy.ndarray`` objects in float64, laid out
batch-height-width-channel (NHWC).
"""
import zlib

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when a tensor shape violates an operation's contract."""


class NumericError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"rank must be 1..4, got {len(shape)}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def tensor_new(shape, fill=0.0):
    return np.full(_check_shape(shape), fill, dtype=DTYPE)


def make_rng(seed, stream=""):
    """Deterministic generator for one consumer of a master seed.

    Each named stream ("init", "shuffle", "dropout", ...) gets an
    independent sub-seed so that adding draws to one consumer never
    perturbs another.
    """
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.PCG64([int(seed) & 0xFFFFFFFFFFFFFFFF, key]))


def glorot_bound(fan_in, fan_out):
    if fan_in < 1 or fan_out < 1:
        raise ShapeError(f"fan_in/fan_out must be >= 1, got {fan_in}/{fan_out}")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform_init(shape, fan_in, fan_out, rng):
    limit = glorot_bound(fan_in, fan_out)
    out = rng.uniform(-limit, limit, size=_check_shape(shape))
    # uniform() is half-open but guard the bound against rounding anyway
    return np.clip(out, -limit, limit).astype(DTYPE, copy=False)


def pad_spatial(x, pad):
    if x.ndim != 4:
        raise ShapeError(f"pad_spatial expects NHWC input, got rank {x.ndim}")
    if pad == 0:
        return x.copy()
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains NaN or Inf")
    return x
