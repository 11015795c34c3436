"""VGG-style feature extractor: stacks of 3x3 conv + batchnorm + ReLU blocks,
each stage closed by 2x2 max pooling, then a small dense head that emits one
fixed-length feature vector per image (360 = 10 positions x 36 classes by
default).

The stage list is free-form so the same code builds the fast desk-scale
network and a full 13-conv configuration; shapes are chained and validated
at build time, before any parameter is allocated.
"""

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNormState,
    LayerParams,
    ShapeError,
    activation_backward,
    activation_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    float_dtype,
    he_init,
    logit_init,
    maxpool2_backward,
    maxpool2_forward,
)

DEFAULT_STAGES = ((2, 16), (2, 32), (2, 64), (2, 64))


@dataclass
class CnnConfig:
    input_hw: tuple = (32, 64)
    stages: tuple = DEFAULT_STAGES      # (conv_count, channels) per pooled stage
    head_widths: tuple = (256,)         # hidden dense widths before the output
    out_dim: int = 360                  # 10 positions x 36 classes

    def validate(self):
        h, w = self.input_hw
        for si, (n_convs, width) in enumerate(self.stages):
            if n_convs < 1 or width < 1:
                raise ShapeError(f"stage {si}: bad stage spec "
                                 f"({n_convs} convs, width {width})")
            if h < 2 or w < 2:
                raise ShapeError(f"stage {si}: pooling exhausts the spatial "
                                 f"dims (only {h}x{w} left)")
            if h % 2 or w % 2:
                raise ShapeError(f"stage {si}: cannot pool {h}x{w} "
                                 f"(odd spatial dimension)")
            h, w = h // 2, w // 2
        return h, w

    def feature_hw(self):
        return self.validate()


class _Conv:
    def __init__(self, name, c_in, c_out, rng):
        self.name = name
        self.params = LayerParams(
            weights=he_init((c_out, c_in, 3, 3), c_in * 9, rng),
            bias=np.zeros(c_out, dtype=float_dtype()))
        self.cache = None

    def forward(self, x, mode):
        out, self.cache = conv2d_forward(x, self.params, stride=1, pad=1)
        return out

    def backward(self, dout):
        return conv2d_backward(dout, self.cache, self.params)


class _BatchNorm:
    def __init__(self, name, channels):
        self.name = name
        self.state = BatchNormState(channels)
        self.params = self.state.params
        self.cache = None

    def forward(self, x, mode):
        out, self.cache = batchnorm_forward(x, self.state, mode)
        return out

    def backward(self, dout):
        return batchnorm_backward(dout, self.cache, self.state)


class _ReLU:
    params = None

    def __init__(self, name):
        self.name = name
        self.cache = None

    def forward(self, x, mode):
        out, self.cache = activation_forward(x, "relu")
        return out

    def backward(self, dout):
        return activation_backward(dout, self.cache)


class _MaxPool:
    params = None

    def __init__(self, name):
        self.name = name
        self.cache = None

    def forward(self, x, mode):
        out, self.cache = maxpool2_forward(x)
        return out

    def backward(self, dout):
        return maxpool2_backward(dout, self.cache)


class _Flatten:
    params = None

    def __init__(self, name):
        self.name = name
        self.cache = None

    def forward(self, x, mode):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.cache)


class _Dense:
    def __init__(self, name, d_in, d_out, rng, init=he_init):
        self.name = name
        self.params = LayerParams(
            weights=init((d_out, d_in), d_in, rng),
            bias=np.zeros(d_out, dtype=float_dtype()))
        self.cache = None

    def forward(self, x, mode):
        out, self.cache = dense_forward(x, self.params)
        return out

    def backward(self, dout):
        return dense_backward(dout, self.cache, self.params)


class CnnNet:
    """The built network: an ordered layer list plus its config."""

    def __init__(self, cfg, layers):
        self.cfg = cfg
        self.layers = layers

    def forward(self, batch, mode):
        """(N, 1, H, W) batch -> (N, out_dim) features. Train mode updates
        batchnorm running statistics and needs N >= 2."""
        if batch.ndim != 4 or batch.shape[1] != 1:
            raise ShapeError(f"expected a (N, 1, H, W) batch, got {batch.shape}")
        if batch.shape[2:] != tuple(self.cfg.input_hw):
            raise ShapeError(f"batch spatial dims {batch.shape[2:]} do not match "
                             f"the configured input {tuple(self.cfg.input_hw)}")
        out = batch
        for layer in self.layers:
            out = layer.forward(out, mode)
        return out

    def backward(self, dout):
        """Backprop a (N, out_dim) gradient; fills every LayerParams grad and
        returns the gradient w.r.t. the input batch."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def param_layers(self):
        return [l for l in self.layers if l.params is not None]

    def all_params(self):
        return [l.params for l in self.param_layers()]

    def zero_grads(self):
        for p in self.all_params():
            p.zero_grads()

    def named_tensors(self):
        """Stable (name, array) pairs covering parameters and running stats;
        the arrays are the live ones, so loading can write into them."""
        out = []
        for layer in self.layers:
            if layer.params is not None:
                out.append((f"{layer.name}.w", layer.params.weights))
                out.append((f"{layer.name}.b", layer.params.bias))
            if isinstance(layer, _BatchNorm):
                out.append((f"{layer.name}.rm", layer.state.running_mean))
                out.append((f"{layer.name}.rv", layer.state.running_var))
        return out


def build_cnn(cfg, seed):
    """Validate the config, then allocate and initialize every layer.
    Deterministic in the seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    layers = []
    c_in = 1
    idx = 0
    for n_convs, width in cfg.stages:
        for _ in range(n_convs):
            layers.append(_Conv(f"conv{idx}", c_in, width, rng))
            layers.append(_BatchNorm(f"bn{idx}", width))
            layers.append(_ReLU(f"relu{idx}"))
            c_in = width
            idx += 1
        layers.append(_MaxPool(f"pool{idx}"))
    layers.append(_Flatten("flatten"))
    fh, fw = cfg.feature_hw()
    d_in = c_in * fh * fw
    for fi, width in enumerate(cfg.head_widths):
        layers.append(_Dense(f"fc{fi}", d_in, width, rng))
        layers.append(_ReLU(f"fcrelu{fi}"))
        d_in = width
    # the 360-wide output doubles as per-position class logits for the
    # RNN-free variant, so it starts near the uniform distribution
    layers.append(_Dense("out", d_in, cfg.out_dim, rng, init=logit_init))
    return CnnNet(cfg, layers)
