"""Involution: a K x K kernel generated at every pixel from that pixel's own
channel vector, then applied to the pixel's neighbourhood and shared across
the channels of a group.

Kernel generation is a 1x1 bottleneck::

    kernel(i, j) = W1 @ relu(BN(W0 @ x(i, j) + b0)) + b1

and the kernel field has shape ``(N, H, W, K*K, G)`` with flat tap index
``u*K + v`` for offsets ``(u - K//2, v - K//2)``.
"""
from dataclasses import dataclass

import numpy as np

from .layers import (BN_EPSILON, BN_MOMENTUM, Layer, StateError, batchnorm_backward,
                     batchnorm_forward, relu_backward, relu_forward)
from .tensor import DTYPE, NumericError, ShapeError, glorot_uniform_init, pad_spatial


@dataclass(frozen=True)
class InvolutionSpec:
    channels: int = 3
    kernel_size: int = 3
    groups: int = 1
    reduction_ratio: int = 2

    def __post_init__(self):
        if self.channels < 1 or self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"channels ({self.channels}) must be divisible by groups ({self.groups})")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.reduction_ratio < 1:
            raise ValueError("reduction_ratio must be >= 1")

    @property
    def reduced(self):
        return max(1, self.channels // self.reduction_ratio)

    @property
    def taps(self):
        return self.kernel_size * self.kernel_size


def inv_param_count(spec):
    """Return ``(total, trainable, non_trainable)`` for one involution layer."""
    c, cr, kg = spec.channels, spec.reduced, spec.taps * spec.groups
    trainable = c * cr + cr + 2 * cr + cr * kg + kg
    non_trainable = 2 * cr
    return trainable + non_trainable, trainable, non_trainable


def init_involution_weights(spec, rng=None):
    """Glorot-uniform 1x1 maps (zeros without ``rng``).

    With an ``rng``, the expand bias starts as a centre-tap delta for every
    group so a freshly built layer is close to the identity; with zero bias a
    stack of involutions attenuates sparse inputs to almost nothing.
    """
    c, cr, kg = spec.channels, spec.reduced, spec.taps * spec.groups
    span_bias = np.zeros((spec.taps, spec.groups), dtype=DTYPE)
    if rng is not None:
        span_bias[spec.taps // 2, :] = 1.0

    def glorot(shape, fan_in, fan_out):
        if rng is None:
            return np.zeros(shape, dtype=DTYPE)
        return glorot_uniform_init(shape, fan_in, fan_out, rng)

    return {
        "reduce_kernel": glorot((cr, c), c, cr),
        "reduce_bias": np.zeros(cr, dtype=DTYPE),
        "bn_gamma": np.ones(cr, dtype=DTYPE),
        "bn_beta": np.zeros(cr, dtype=DTYPE),
        "bn_moving_mean": np.zeros(cr, dtype=DTYPE),
        "bn_moving_variance": np.ones(cr, dtype=DTYPE),
        "span_kernel": glorot((kg, cr), cr, kg),
        "span_bias": span_bias.reshape(kg),
    }


NON_TRAINABLE = ("bn_moving_mean", "bn_moving_variance")


def _grouped(a, groups):
    # (N,H,W,C) -> (N,H,W,G,C/G) view
    return a.reshape(*a.shape[:3], groups, a.shape[3] // groups)


def apply_kernels(x, kernels, spec):
    """Apply a kernel field ``(N,H,W,K*K,G)`` to ``x`` with same padding."""
    k, half, g = spec.kernel_size, spec.kernel_size // 2, spec.groups
    _, h, w, _ = x.shape
    xp = pad_spatial(x, half)
    y = np.zeros(x.shape, dtype=DTYPE)
    yg = _grouped(y, g)
    for t in range(k * k):
        u, v = divmod(t, k)
        yg += kernels[:, :, :, t, :, None] * _grouped(xp[:, u:u + h, v:v + w, :], g)
    return y


def generate_kernels(x, w, spec, train=False,
                     momentum=BN_MOMENTUM, eps=BN_EPSILON):
    """Per-pixel kernel generation. Returns ``(kernels, cache)``."""
    z = x @ w["reduce_kernel"].T + w["reduce_bias"]
    a, bn_cache = batchnorm_forward(z, w["bn_gamma"], w["bn_beta"], w["bn_moving_mean"],
                                    w["bn_moving_variance"], train, momentum, eps)
    r, r_mask = relu_forward(a)
    flat = r @ w["span_kernel"].T + w["span_bias"]
    kernels = flat.reshape(*x.shape[:3], spec.taps, spec.groups)
    return kernels, (bn_cache, r, r_mask)


def inv_forward(x, w, spec, train=False):
    """Involution forward pass.

    Returns ``(y, kernels, cache)``; ``cache`` feeds :func:`inv_backward`.
    """
    if x.ndim != 4 or x.shape[-1] != spec.channels:
        raise ShapeError(f"involution expects (N,H,W,{spec.channels}), got {x.shape}")
    kernels, gen_cache = generate_kernels(x, w, spec, train)
    y = apply_kernels(x, kernels, spec)
    if not np.all(np.isfinite(y)):
        raise NumericError("involution output contains NaN or Inf")
    return y, kernels, (x, w, spec, kernels, gen_cache)


def inv_backward(dy, cache):
    """Gradients through both the kernel application and kernel generation.

    Returns ``(dx, grads)`` with ``grads`` keyed like the trainable weights.
    """
    if cache is None:
        raise StateError("involution backward called without a forward cache")
    x, w, spec, kernels, (bn_cache, r, r_mask) = cache
    k, half = spec.kernel_size, spec.kernel_size // 2
    n, h, wd, c = x.shape

    # application path: y = sum_t kernel_t * shifted_t(x)
    g = spec.groups
    xp = pad_spatial(x, half)
    dyg = _grouped(dy, g)
    dxp = np.zeros_like(xp)
    dkernels = np.empty(kernels.shape, dtype=DTYPE)
    for t in range(k * k):
        u, v = divmod(t, k)
        shifted = _grouped(xp[:, u:u + h, v:v + wd, :], g)
        dkernels[:, :, :, t, :] = np.einsum("nhwgc,nhwgc->nhwg", dyg, shifted)
        _grouped(dxp[:, u:u + h, v:v + wd, :], g)[...] += dyg * kernels[:, :, :, t, :, None]
    dx = dxp[:, half:half + h, half:half + wd, :].copy()

    # generation path
    dflat = dkernels.reshape(-1, spec.taps * spec.groups)
    r2 = r.reshape(-1, spec.reduced)
    d_span_kernel = dflat.T @ r2
    d_span_bias = dflat.sum(axis=0)
    dr = (dflat @ w["span_kernel"]).reshape(r.shape)
    da = relu_backward(dr, r_mask)
    dz, dgamma, dbeta = batchnorm_backward(da, bn_cache)
    dz2 = dz.reshape(-1, spec.reduced)
    d_reduce_kernel = dz2.T @ x.reshape(-1, c)
    d_reduce_bias = dz2.sum(axis=0)
    dx += dz @ w["reduce_kernel"]

    return dx, {
        "reduce_kernel": d_reduce_kernel,
        "reduce_bias": d_reduce_bias,
        "bn_gamma": dgamma,
        "bn_beta": dbeta,
        "span_kernel": d_span_kernel,
        "span_bias": d_span_bias,
    }


class Involution(Layer):
    """Same-padded, stride-1 involution layer followed by an optional ReLU."""

    kind = "Involution"

    def __init__(self, name, spec=None, activation="relu", rng=None):
        super().__init__(name)
        self.spec = spec or InvolutionSpec()
        self.activation = activation
        self.params = init_involution_weights(self.spec, rng)
        self.frozen = NON_TRAINABLE
        self.last_kernels = None

    def output_shape(self, in_shape):
        return in_shape

    def aux_shape(self, in_shape):
        h, w, _ = in_shape
        return (h, w, self.spec.taps, 1, self.spec.groups)

    def forward(self, x, train=False):
        y, kernels, cache = inv_forward(x, self.params, self.spec, train)
        self.last_kernels = kernels
        mask = None
        if self.activation == "relu":
            y, mask = relu_forward(y)
        if train:
            self._cache = (cache, mask)
        return y

    def backward(self, dy):
        cache, mask = self._take_cache()
        if mask is not None:
            dy = relu_backward(dy, mask)
        dx, self.grads = inv_backward(dy, cache)
        return dx
