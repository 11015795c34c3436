"""Dense-array layer kernels with explicit forward/backward passes.

Every kernel is a pure function: forward returns (out, cache), backward takes
(dout, cache) and returns input/parameter gradients. Shapes follow the
(N, C, H, W) convention for images and (N, D) for vectors; single samples
(C, H, W) / (D,) are accepted and returned at the same rank.

Default precision is float64 so analytic gradients can be checked against
central differences; call set_float_dtype(np.float32) for faster training.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLOAT = np.dtype(np.float64)


class ShapeError(ValueError):
    """Raised when an input shape violates a kernel's contract."""


class NonFiniteError(ArithmeticError):
    """Raised when a NaN or Inf shows up where the contract forbids it."""


def set_float_dtype(dtype):
    """Select the working precision (np.float64 or np.float32)."""
    global _FLOAT
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported float dtype: {dtype}")
    _FLOAT = dt


def float_dtype():
    return _FLOAT


def assert_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")


@dataclass
class LayerParams:
    """A weight/bias pair plus same-shaped gradient accumulators."""

    weights: np.ndarray
    bias: np.ndarray
    grad_weights: np.ndarray = field(default=None)
    grad_bias: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)
        if self.grad_weights.shape != self.weights.shape:
            raise ShapeError("grad_weights shape does not match weights")
        if self.grad_bias.shape != self.bias.shape:
            raise ShapeError("grad_bias shape does not match bias")

    def zero_grads(self):
        self.grad_weights[...] = 0.0
        self.grad_bias[...] = 0.0


def he_init(shape, fan_in, rng):
    """Zero-mean Gaussian scaled by sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(_FLOAT)


def logit_init(shape, fan_in, rng):
    """Quarter-strength init for layers that feed a softmax directly, so an
    untrained model starts close to the uniform distribution."""
    return (rng.standard_normal(shape) * (0.5 / np.sqrt(fan_in))).astype(_FLOAT)


def sgd_step(params, lr):
    """Vanilla SGD: w <- w - lr * grad for every LayerParams. Grads are left
    untouched; the caller zeroes them."""
    for p in params:
        p.weights -= lr * p.grad_weights
        p.bias -= lr * p.grad_bias


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_forward(x, params, stride=1, pad=0):
    """2-D cross-correlation of an (N, C, H, W) batch (or a single (C, H, W)
    sample) with (C_out, C_in, kH, kW) kernels.

    Output spatial size is (H + 2*pad - kH) / stride + 1, which must divide
    exactly; anything else is a ShapeError naming the offending dimension.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"conv2d: expected 3- or 4-d input, got {x.ndim}-d")
    w, b = params.weights, params.bias
    n, c, h, width = x.shape
    c_out, c_in, kh, kw = w.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {c_in}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if h + 2 * pad < kh:
        raise ShapeError(f"conv2d: padded height {h + 2 * pad} < kernel height {kh}")
    if width + 2 * pad < kw:
        raise ShapeError(f"conv2d: padded width {width + 2 * pad} < kernel width {kw}")
    if (h + 2 * pad - kh) % stride:
        raise ShapeError(f"conv2d: height {h} with pad {pad}, kernel {kh}, stride "
                         f"{stride} gives a non-integer output height")
    if (width + 2 * pad - kw) % stride:
        raise ShapeError(f"conv2d: width {width} with pad {pad}, kernel {kw}, stride "
                         f"{stride} gives a non-integer output width")

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, C, H', W', kH, kW); contract C, kH, kW against the kernels
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]
    cache = (xp, x.shape, w, stride, pad)
    return (out[0] if squeeze else out), cache


def conv2d_backward(dout, cache, params):
    """Accumulates grad_weights / grad_bias on `params` and returns the
    gradient w.r.t. the input, shaped like the forward input."""
    xp, x_shape, w, stride, pad = cache
    squeeze = dout.ndim == 3
    if squeeze:
        dout = dout[None]
    c_out, c_in, kh, kw = w.shape
    _, _, ho, wo = dout.shape

    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # dW[o, c, i, j] = sum_{n, y, x} dout[n, o, y, x] * win[n, c, y, x, i, j]
    params.grad_weights += np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
    params.grad_bias += dout.sum(axis=(0, 2, 3))

    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            # contribution of kernel tap (i, j) lands on a strided slice of dxp
            patch = np.tensordot(dout, w[:, :, i, j], axes=([1], [0]))  # (N, H', W', C)
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                patch.transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]] if pad else dxp
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# 2x2 max pooling
# ---------------------------------------------------------------------------

def maxpool2_forward(x):
    """2x2 max pooling with stride 2. Spatial dims must be even."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c, h, w = x.shape
    if h % 2:
        raise ShapeError(f"maxpool2: height {h} is odd")
    if w % 2:
        raise ShapeError(f"maxpool2: width {w} is odd")
    # (N, C, H/2, W/2, 4) with the window flattened in row-major order so
    # argmax breaks ties toward the first (top-left) element
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (idx, x.shape)
    return (out[0] if squeeze else out), cache


def maxpool2_backward(dout, cache):
    idx, x_shape = cache
    squeeze = dout.ndim == 3
    if squeeze:
        dout = dout[None]
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = dx.reshape(n, c, h, w)
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Per-channel scale/shift parameters plus running statistics.

    Normalizes over every axis except the channel axis (axis 1 for image
    batches, axis 1 for (N, D) vectors). eps keeps the variance strictly
    positive; momentum is the fraction of the new batch statistic blended
    into the running mean/var each training step.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.params = LayerParams(weights=np.ones(channels, dtype=_FLOAT),
                                  bias=np.zeros(channels, dtype=_FLOAT))
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(channels, dtype=_FLOAT)
        self.running_var = np.ones(channels, dtype=_FLOAT)


def _bn_axes(x):
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ShapeError(f"batchnorm: expected 2- or 4-d input, got {x.ndim}-d")


def batchnorm_forward(x, state, mode):
    """Train mode normalizes with batch statistics and updates the running
    stats; infer mode normalizes with the running stats."""
    axes, bshape = _bn_axes(x)
    gamma = state.params.weights.reshape(bshape)
    beta = state.params.bias.reshape(bshape)
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError(f"batchnorm: train mode needs a batch of >= 2 samples, "
                             f"got {x.shape[0]}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var
    elif mode == "infer":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var.reshape(bshape) + state.eps)
    centered = x - mean.reshape(bshape)
    xhat = centered * inv_std
    out = gamma * xhat + beta
    cache = (mode, xhat, inv_std, gamma, axes, bshape)
    return out, cache


def batchnorm_backward(dout, cache, state):
    mode, xhat, inv_std, gamma, axes, bshape = cache
    state.params.grad_weights += (dout * xhat).sum(axis=axes)
    state.params.grad_bias += dout.sum(axis=axes)
    dxhat = dout * gamma
    if mode == "infer":
        return dxhat * inv_std
    m = xhat.size / xhat.shape[1] if xhat.ndim == 4 else xhat.shape[0]
    # dx for y = gamma * (x - mu) / sqrt(var + eps), mu/var over the batch
    dx = (dxhat - dxhat.mean(axis=axes).reshape(bshape)
          - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape) / m) * inv_std
    return dx


# ---------------------------------------------------------------------------
# dense layer
# ---------------------------------------------------------------------------

def dense_forward(x, params):
    """out = W x + b with W shaped (out_dim, in_dim). Batches go in as
    (N, in_dim)."""
    w, b = params.weights, params.bias
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense: input length {x.shape[1]} != weight inner "
                         f"dimension {w.shape[1]}")
    out = x @ w.T + b
    cache = (x, w)
    return (out[0] if squeeze else out), cache


def dense_backward(dout, cache, params):
    x, w = cache
    squeeze = dout.ndim == 1
    if squeeze:
        dout = dout[None]
    params.grad_weights += dout.T @ x
    params.grad_bias += dout.sum(axis=0)
    dx = dout @ w
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x):
    # evaluate on the negative half-line via exp(x)/(1+exp(x)) to avoid overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_forward(x, kind):
    if kind == "sigmoid":
        out = sigmoid(x)
    elif kind == "relu":
        out = np.maximum(x, 0.0)
    elif kind == "tanh":
        out = np.tanh(x)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return out, (kind, out)


def activation_backward(dout, cache):
    kind, out = cache
    if kind == "sigmoid":
        return dout * out * (1.0 - out)
    if kind == "relu":
        return dout * (out > 0)
    return dout * (1.0 - out * out)  # tanh


# ---------------------------------------------------------------------------
# softmax + cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits):
    """Row-wise softmax with max subtraction for stability."""
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs[0] if squeeze else probs


def softmax_xent(logits, target):
    """Softmax cross-entropy for one length-C logit vector and a class index.

    Returns (probs, loss); softmax_xent_grad gives probs - onehot(target).
    """
    c = logits.shape[-1]
    if not 0 <= int(target) < c:
        raise ValueError(f"softmax_xent: target {target} out of range [0, {c})")
    probs, losses = softmax_xent_batch(logits[None], np.array([target]))
    return probs[0], float(losses[0])


def softmax_xent_batch(logits, targets):
    """(N, C) logits, (N,) integer targets -> ((N, C) probs, (N,) losses)."""
    targets = np.asarray(targets)
    c = logits.shape[1]
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
        raise ValueError(f"softmax_xent: target out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    probs = np.exp(shifted - logsumexp[:, None])
    losses = logsumexp - shifted[np.arange(len(targets)), targets]
    return probs, losses


def softmax_xent_grad(probs, targets):
    """Gradient of the summed cross-entropy w.r.t. the logits."""
    squeeze = probs.ndim == 1
    if squeeze:
        probs, targets = probs[None], np.array([targets])
    grad = probs.copy()
    grad[np.arange(len(targets)), np.asarray(targets)] -= 1.0
    return grad[0] if squeeze else grad
