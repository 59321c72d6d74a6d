"""Forward/backward kernels and layer objects for the non-involution parts
of the network: convolution, max pooling, batch normalization, dense,
ReLU, dropout and the softmax cross-entropy head.

The ``*_forward`` functions return ``(output, cache)``; the matching
``*_backward`` functions consume the cache. Layer classes wrap them and own
their parameters, gradients and caches.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError, glorot_uniform_init, make_rng

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-3


class StateError(RuntimeError):
    """Raised when backward is called without a matching forward cache."""


# ---------------------------------------------------------------------------
# functional kernels
# ---------------------------------------------------------------------------

def _im2col(x, k):
    # (N,H,W,C) -> (N*Ho*Wo, k*k*C) with column order (u, v, c)
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # N,Ho,Wo,C,k,k
    n, ho, wo, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def conv2d_forward(x, w, b):
    """Valid-padding, stride-1 convolution. ``w`` is (K, K, C_in, C_out)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got rank {x.ndim}")
    k, k2, c_in, c_out = w.shape
    n, h, wd, c = x.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    if h < k or wd < k:
        raise ShapeError(f"conv2d: input {h}x{wd} smaller than kernel {k}x{k2}")
    ho, wo = h - k + 1, wd - k + 1
    cols = _im2col(x, k)
    y = cols @ w.reshape(k * k * c_in, c_out) + b
    return y.reshape(n, ho, wo, c_out), (x.shape, cols, w)


def conv2d_backward(dy, cache):
    x_shape, cols, w = cache
    k, _, c_in, c_out = w.shape
    n, ho, wo, _ = dy.shape
    dy2 = dy.reshape(-1, c_out)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(k * k * c_in, c_out).T).reshape(n, ho, wo, k, k, c_in)
    dx = np.zeros(x_shape, dtype=DTYPE)
    for u in range(k):
        for v in range(k):
            dx[:, u:u + ho, v:v + wo, :] += dcols[:, :, :, u, v, :]
    return dx, dw, db


def maxpool2d_forward(x, size=2, stride=2):
    n, h, w, c = x.shape
    if h < size or w < size:
        raise ShapeError(f"maxpool: input {h}x{w} smaller than window {size}")
    ho, wo = (h - size) // stride + 1, (w - size) // stride + 1
    taps = [x[:, m:m + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride, :]
            for m in range(size) for q in range(size)]
    y = taps[0].copy()
    for tap in taps[1:]:
        np.maximum(y, tap, out=y)
    # scan taps backwards so the first (row-major) maximum wins ties
    idx = np.zeros(y.shape, dtype=np.int8)
    for t in range(len(taps) - 1, 0, -1):
        idx[taps[t] == y] = t
    idx[taps[0] == y] = 0
    return y, (x.shape, idx, size, stride)


def maxpool2d_backward(dy, cache):
    x_shape, idx, size, stride = cache
    _, ho, wo, _ = dy.shape
    dx = np.zeros(x_shape, dtype=DTYPE)
    for t in range(size * size):
        m, q = divmod(t, size)
        view = dx[:, m:m + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride, :]
        view += np.where(idx == t, dy, 0.0)
    return dx


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=BN_MOMENTUM, eps=BN_EPSILON):
    """Per-channel (last axis) normalization.

    In train mode the running statistics are updated in place.
    """
    if x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm: {x.shape[-1]} channels, state has {gamma.shape[0]}")
    axes = tuple(range(x.ndim - 1))
    if train:
        count = int(np.prod(x.shape[:-1]))
        if count == 0:
            raise StateError("batchnorm: empty batch")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    return gamma * x_hat + beta, (x_hat, inv_std, gamma, train)


def batchnorm_backward(dy, cache):
    x_hat, inv_std, gamma, train = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * x_hat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dx_hat = dy * gamma
    if not train:
        return dx_hat * inv_std, dgamma, dbeta
    m = np.prod(dy.shape[:-1])
    dx = inv_std / m * (m * dx_hat - dx_hat.sum(axis=axes)
                        - x_hat * (dx_hat * x_hat).sum(axis=axes))
    return dx, dgamma, dbeta


def dense_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    return x @ w + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy, mask):
    return np.where(mask, dy, 0.0)


def dropout_forward(x, rate, train, rng=None):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def softmax_xent(logits, labels):
    """Mean cross-entropy of row-softmax(logits) against one-hot labels.

    Returns ``(loss, probs, dlogits)``.
    """
    labels = np.asarray(labels, dtype=DTYPE)
    if labels.shape != logits.shape:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise ValueError("labels must be one-hot rows")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    probs = np.exp(log_p)
    n = logits.shape[0]
    loss = float(-(labels * log_p).sum() / n)
    return loss, probs, (probs - labels) / n


def one_hot(labels, num_classes=2):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, num_classes), dtype=DTYPE)
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# layer objects
# ---------------------------------------------------------------------------

class Layer:
    """Base class. Subclasses fill ``params`` (name -> array) and list the
    non-trainable ones in ``frozen``."""

    kind = "Layer"

    def __init__(self, name):
        self.name = name
        self.params = {}
        self.grads = {}
        self.frozen = ()
        self._cache = None

    def output_shape(self, in_shape):
        return in_shape

    def aux_shape(self, in_shape):
        return None

    @property
    def trainable_names(self):
        return [k for k in self.params if k not in self.frozen]

    def count_params(self):
        total = sum(p.size for p in self.params.values())
        frozen = sum(self.params[k].size for k in self.frozen)
        return total, total - frozen, frozen

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        cache, self._cache = self._cache, None
        return cache


class InputLayer(Layer):
    kind = "InputLayer"

    def __init__(self, name, shape):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, train=False):
        if x.shape[1:] != self.shape:
            raise ShapeError(f"expected input (N, {self.shape}), got {x.shape}")
        return x

    def backward(self, dy):
        return dy


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, name, c_in, c_out, kernel_size=3, activation="relu", rng=None):
        super().__init__(name)
        k = kernel_size
        self.kernel_size = k
        self.activation = activation
        if rng is None:
            w = np.zeros((k, k, c_in, c_out), dtype=DTYPE)
        else:
            w = glorot_uniform_init((k, k, c_in, c_out), k * k * c_in, k * k * c_out, rng)
        self.params = {"kernel": w, "bias": np.zeros(c_out, dtype=DTYPE)}

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        k = self.kernel_size
        return (h - k + 1, w - k + 1, self.params["kernel"].shape[3])

    def forward(self, x, train=False):
        y, cache = conv2d_forward(x, self.params["kernel"], self.params["bias"])
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
        dx, dw, db = conv2d_backward(dy, cache)
        self.grads = {"kernel": dw, "bias": db}
        return dx


class MaxPool2D(Layer):
    kind = "MaxPooling2D"

    def __init__(self, name, size=2, stride=2):
        super().__init__(name)
        if size < 1 or stride < 1:
            raise ValueError("pool window and stride must be positive")
        self.size, self.stride = size, stride

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return ((h - self.size) // self.stride + 1, (w - self.size) // self.stride + 1, c)

    def forward(self, x, train=False):
        y, cache = maxpool2d_forward(x, self.size, self.stride)
        if train:
            self._cache = cache
        return y

    def backward(self, dy):
        return maxpool2d_backward(dy, self._take_cache())


class BatchNorm(Layer):
    kind = "BatchNormalization"

    def __init__(self, name, channels, momentum=BN_MOMENTUM, eps=BN_EPSILON):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.params = {
            "gamma": np.ones(channels, dtype=DTYPE),
            "beta": np.zeros(channels, dtype=DTYPE),
            "moving_mean": np.zeros(channels, dtype=DTYPE),
            "moving_variance": np.ones(channels, dtype=DTYPE),
        }
        self.frozen = ("moving_mean", "moving_variance")

    def forward(self, x, train=False):
        p = self.params
        y, cache = batchnorm_forward(x, p["gamma"], p["beta"], p["moving_mean"],
                                     p["moving_variance"], train, self.momentum, self.eps)
        if train:
            self._cache = cache
        return y

    def backward(self, dy):
        dx, dgamma, dbeta = batchnorm_backward(dy, self._take_cache())
        self.grads = {"gamma": dgamma, "beta": dbeta}
        return dx


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._take_cache())


class Dense(Layer):
    kind = "Dense"

    def __init__(self, name, fan_in, fan_out, activation=None, rng=None):
        super().__init__(name)
        self.activation = activation
        if rng is None:
            w = np.zeros((fan_in, fan_out), dtype=DTYPE)
        else:
            w = glorot_uniform_init((fan_in, fan_out), fan_in, fan_out, rng)
        self.params = {"kernel": w, "bias": np.zeros(fan_out, dtype=DTYPE)}

    def output_shape(self, in_shape):
        return (self.params["kernel"].shape[1],)

    def forward(self, x, train=False):
        y, cache = dense_forward(x, self.params["kernel"], self.params["bias"])
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
        dx, dw, db = dense_backward(dy, cache)
        self.grads = {"kernel": dw, "bias": db}
        return dx


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, name, rate, rng=None):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else make_rng(0, "dropout")

    def forward(self, x, train=False):
        y, keep = dropout_forward(x, self.rate, train, self.rng)
        if train:
            self._cache = (keep,)
        return y

    def backward(self, dy):
        (keep,) = self._take_cache()
        return dropout_backward(dy, keep)
