"""Layers, architectures, loss, and the momentum-SGD optimizer.

Everything here is plain numpy with explicit forward/backward methods. A
"unit" is any object with a ``name``, a ``params`` dict, a ``grads`` dict and
``forward``/``backward``; residual blocks are composites that expose their
sub-units. Parameter updates mutate arrays in place, so optimizer state can
be keyed by ``unit.name + "." + param_key``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral_conv import SpectralConv, symmetrize, update_mask


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    mask_enabled: bool = True
    mask_init_mean: float = 0.8
    mask_init_variance: float = 0.2
    mask_lr: float | None = None  # defaults to learning_rate
    random_drop_p: float = 0.0
    augment_crop: bool = False
    augment_flip: bool = False
    normalize: bool = False
    dropout_keep: float | None = None

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if self.random_drop_p < 0 or self.random_drop_p > 1:
            raise ValueError(f"random drop p must be in [0, 1], got {self.random_drop_p}")
        if self.dropout_keep is not None and not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError(f"dropout keep-prob must be in (0, 1], got {self.dropout_keep}")
        return self

    @property
    def effective_mask_lr(self) -> float:
        return self.learning_rate if self.mask_lr is None else self.mask_lr


@dataclass
class ArchSpec:
    kind: str = "lenet"  # "lenet" | "resnet"
    stages: int = 3
    blocks: int = 3
    widths: tuple[int, ...] = (16, 32, 64)

    def validate(self):
        if self.kind not in ("lenet", "resnet"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.kind == "resnet":
            if self.stages < 1 or self.blocks < 1:
                raise ValueError("resnet needs at least one stage and one block per stage")
            if len(self.widths) != self.stages:
                raise ValueError(
                    f"resnet widths {self.widths} must list one width per stage ({self.stages})"
                )
        return self


class ReLU:
    def __init__(self, name="relu"):
        self.name = name
        self.params: dict = {}
        self.grads: dict = {}
        self._mask = None

    def forward(self, x, train=True):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0)


class Pool2x2:
    """2x2 window, stride 2. Max pooling routes gradient to the first argmax."""

    def __init__(self, kind="max", name="pool"):
        if kind not in ("max", "avg"):
            raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
        self.kind = kind
        self.name = name
        self.params: dict = {}
        self.grads: dict = {}
        self._cache = None

    def forward(self, x, train=True):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        windows = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        windows = windows.reshape(b, c, h // 2, w // 2, 4)
        if self.kind == "max":
            idx = np.argmax(windows, axis=-1)
            y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
            self._cache = (x.shape, idx)
        else:
            y = windows.mean(axis=-1)
            self._cache = (x.shape, None)
        return y

    def backward(self, dy):
        (b, c, h, w), idx = self._cache
        dwin = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
        if self.kind == "max":
            np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        else:
            dwin[...] = dy[..., None] / 4.0
        dx = dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(dx.reshape(b, c, h, w))


class GlobalAvgPool:
    """Reduce each channel plane to its mean; output shape (B, C)."""

    def __init__(self, name="gap"):
        self.name = name
        self.params: dict = {}
        self.grads: dict = {}
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None], self._shape).astype(dy.dtype) / (h * w)


class BatchNorm:
    def __init__(self, channels, bn_momentum=0.9, eps=1e-5, dtype=np.float32, name="bn"):
        self.name = name
        self.channels = channels
        self.bn_momentum = bn_momentum
        self.eps = eps
        self.dtype = dtype
        self.params = {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
        }
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grads: dict = {}
        self._cache = None

    def forward(self, x, train=True):
        if x.shape[1] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        x64 = x.astype(np.float64)
        gamma = self.params["gamma"].astype(np.float64)[None, :, None, None]
        beta = self.params["beta"].astype(np.float64)[None, :, None, None]
        if train:
            if x.shape[0] < 2:
                raise ValueError(f"{self.name}: train mode needs batch size >= 2, got {x.shape[0]}")
            mean = x64.mean(axis=(0, 2, 3))
            var = x64.var(axis=(0, 2, 3))
            m = self.bn_momentum
            self.running_mean[...] = (m * self.running_mean.astype(np.float64) + (1 - m) * mean).astype(self.dtype)
            self.running_var[...] = (m * self.running_var.astype(np.float64) + (1 - m) * var).astype(self.dtype)
        else:
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        std = np.sqrt(var + self.eps)
        xhat = (x64 - mean[None, :, None, None]) / std[None, :, None, None]
        self._cache = (xhat, 1.0 / std, train)
        return (gamma * xhat + beta).astype(x.dtype)

    def backward(self, dy):
        xhat, inv_std, was_train = self._cache
        dy64 = dy.astype(np.float64)
        gamma = self.params["gamma"].astype(np.float64)
        self.grads = {
            "gamma": np.sum(dy64 * xhat, axis=(0, 2, 3)).astype(self.dtype),
            "beta": np.sum(dy64, axis=(0, 2, 3)).astype(self.dtype),
        }
        dxhat = dy64 * gamma[None, :, None, None]
        if not was_train:
            return (dxhat * inv_std[None, :, None, None]).astype(dy.dtype)
        n = dy.shape[0] * dy.shape[2] * dy.shape[3]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv_std[None, :, None, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx.astype(dy.dtype)


class Dense:
    def __init__(self, in_dim, out_dim, seed=0, dtype=np.float32, name="fc"):
        self.name = name
        rng = np.random.default_rng(seed)
        self.params = {
            "w": rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim)).astype(dtype),
            "b": np.zeros(out_dim, dtype=dtype),
        }
        self.grads: dict = {}
        self._x = None

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.params["w"].shape[1]:
            raise ValueError(
                f"{self.name}: expected input (B, {self.params['w'].shape[1]}), got {x.shape}"
            )
        self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dy):
        self.grads = {"w": dy.T @ self._x, "b": dy.sum(axis=0)}
        return dy @ self.params["w"]


class Flatten:
    def __init__(self, name="flatten"):
        self.name = name
        self.params: dict = {}
        self.grads: dict = {}
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dropout:
    """Inverted dropout: scales kept units by 1/keep at train time, identity at eval."""

    def __init__(self, keep_prob, seed=0, name="dropout"):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"{name}: keep-prob must be in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.name = name
        self.params: dict = {}
        self.grads: dict = {}
        self._rng = np.random.default_rng(seed)
        self._mask = None

    def forward(self, x, train=True):
        if not train or self.keep_prob >= 1.0:
            self._mask = None
            return x
        self._mask = (self._rng.random(x.shape) < self.keep_prob).astype(x.dtype) / self.keep_prob
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class ResidualBlock:
    """Two masked spectral convolutions with an unmasked identity shortcut.

    When the block downsamples (stride 2 / channel growth), the shortcut is
    parameter-free: spatial subsampling plus zero padding of the new channels.
    The mask never touches the shortcut path.
    """

    def __init__(self, in_channels, out_channels, stride, input_hw, name, layer_args):
        self.name = name
        h, w = input_hw
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = SpectralConv(
            in_channels, out_channels, 3, input_hw, stride=stride,
            name=f"{name}.1", **layer_args(f"{name}.1"),
        )
        mid_hw = self.conv1.output_hw
        self.bn1 = BatchNorm(out_channels, dtype=self.conv1.dtype, name=f"{name}.1.bn")
        self.relu1 = ReLU(name=f"{name}.1.relu")
        self.conv2 = SpectralConv(
            out_channels, out_channels, 3, mid_hw, stride=1,
            name=f"{name}.2", **layer_args(f"{name}.2"),
        )
        self.bn2 = BatchNorm(out_channels, dtype=self.conv2.dtype, name=f"{name}.2.bn")
        self.relu_out = ReLU(name=f"{name}.relu")
        self.output_hw = self.conv2.output_hw
        self._x_shape = None

    def units(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]

    def _shortcut(self, x):
        if self.stride == 1 and self.in_channels == self.out_channels:
            return x
        sc = x[:, :, :: self.stride, :: self.stride]
        extra = self.out_channels - self.in_channels
        front = extra // 2
        return np.pad(sc, ((0, 0), (front, extra - front), (0, 0), (0, 0)))

    def _shortcut_backward(self, dy):
        if self.stride == 1 and self.in_channels == self.out_channels:
            return dy
        extra = self.out_channels - self.in_channels
        front = extra // 2
        dsc = dy[:, front : front + self.in_channels]
        b, c, h, w = self._x_shape
        dx = np.zeros((b, c, h, w), dtype=dy.dtype)
        dx[:, :, :: self.stride, :: self.stride] = dsc
        return dx

    def forward(self, x, train=True):
        self._x_shape = x.shape
        out = self.conv1.forward(x, train)
        out = self.bn1.forward(out, train)
        out = self.relu1.forward(out, train)
        out = self.conv2.forward(out, train)
        out = self.bn2.forward(out, train)
        return self.relu_out.forward(out + self._shortcut(x), train)

    def backward(self, dy):
        dsum = self.relu_out.backward(dy)
        dmain = self.bn2.backward(dsum)
        dmain = self.conv2.backward(dmain)
        dmain = self.relu1.backward(dmain)
        dmain = self.bn1.backward(dmain)
        dmain = self.conv1.backward(dmain)
        return dmain + self._shortcut_backward(dsum)


class Network:
    """Ordered layer stack with a softmax cross-entropy head applied by the trainer."""

    def __init__(self, layers, meta=None):
        self.layers = list(layers)
        self.meta = dict(meta or {})

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def iter_units(self):
        for layer in self.layers:
            if hasattr(layer, "units"):
                yield from layer.units()
            else:
                yield layer

    def conv_layers(self):
        return [u for u in self.iter_units() if isinstance(u, SpectralConv)]

    def parameter_count(self):
        return sum(int(p.size) for u in self.iter_units() for p in u.params.values())


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the minibatch; returns (loss, dlogits)."""
    logits64 = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, classes = logits64.shape
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels must lie in [0, {classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits64 - logits64.max(axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - logsumexp[:, None])
    probs[np.arange(n), labels] -= 1.0
    dlogits = (probs / n).astype(np.asarray(logits).dtype)
    return loss, dlogits


def sgd_momentum_step(param, grad, velocity, lr, momentum, weight_decay, is_mask=False):
    """v <- momentum*v + grad + wd*param; param <- param - lr*v, all in place.

    Mask parameters skip weight decay and are clipped back to [0, 1] and
    re-symmetrized after the step.
    """
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {np.shape(grad)}, "
                         f"velocity {velocity.shape}")
    wd = 0.0 if is_mask else weight_decay
    v = momentum * velocity.astype(np.float64) + np.asarray(grad, np.float64) + wd * param.astype(np.float64)
    new = param.astype(np.float64) - lr * v
    if is_mask:
        new = symmetrize(np.clip(new, 0.0, 1.0))
    velocity[...] = v.astype(velocity.dtype)
    param[...] = new.astype(param.dtype)


@dataclass
class OptimizerState:
    velocities: dict = field(default_factory=dict)

    def velocity_for(self, key, param):
        if key not in self.velocities:
            self.velocities[key] = np.zeros_like(param)
        return self.velocities[key]


def apply_gradients(net, state, lr, momentum, weight_decay, mask_lr=None):
    """One optimizer step over every unit's accumulated gradients."""
    for unit in net.iter_units():
        for key, param in unit.params.items():
            sgd_momentum_step(
                param, unit.grads[key], state.velocity_for(f"{unit.name}.{key}", param),
                lr, momentum, weight_decay,
            )
        if isinstance(unit, SpectralConv) and not unit.mask_frozen:
            update_mask(unit.mask, unit.dmask, lr if mask_lr is None else mask_lr, momentum)


def build_network(
    arch: ArchSpec,
    classes: int = 10,
    input_shape=(3, 32, 32),
    mask_enabled: bool = True,
    mask_init_mean: float = 0.8,
    mask_init_variance: float = 0.2,
    random_drop_p: float = 0.0,
    dropout_keep: float | None = None,
    seed: int = 0,
    dtype=np.float32,
) -> Network:
    """Assemble a LeNet variant or a residual stack around spectral conv layers.

    Every convolution is a SpectralConv; with mask_enabled=False it carries a
    frozen all-ones mask instead, which is the same computation.
    """
    arch.validate()
    root = np.random.SeedSequence(seed)
    streams = iter(root.spawn(4096))

    def layer_args(_name):
        w_ss, m_ss, d_ss = next(streams), next(streams), next(streams)
        return dict(
            mask_enabled=mask_enabled,
            mask_init_mean=mask_init_mean,
            mask_init_variance=mask_init_variance,
            random_drop_p=random_drop_p,
            weight_seed=w_ss,
            mask_seed=m_ss,
            drop_seed=d_ss,
            dtype=dtype,
        )

    c, h, w = input_shape
    layers = []
    if arch.kind == "lenet":
        conv1 = SpectralConv(c, 6, 5, (h, w), name="conv1", **layer_args("conv1"))
        conv2 = SpectralConv(6, 16, 5, (h // 2, w // 2), name="conv2", **layer_args("conv2"))
        layers += [conv1, ReLU("conv1.relu"), Pool2x2("max", "pool1"),
                   conv2, ReLU("conv2.relu"), Pool2x2("max", "pool2"), Flatten()]
        flat = 16 * (h // 4) * (w // 4)
        dims = [(flat, 120, "fc1"), (120, 84, "fc2"), (84, classes, "fc3")]
        for i, (din, dout, name) in enumerate(dims):
            if dropout_keep is not None and dropout_keep < 1.0:
                layers.append(Dropout(dropout_keep, seed=next(streams), name=f"{name}.dropout"))
            layers.append(Dense(din, dout, seed=next(streams), dtype=dtype, name=name))
            if i < len(dims) - 1:
                layers.append(ReLU(f"{name}.relu"))
    else:
        width0 = arch.widths[0]
        stem = SpectralConv(c, width0, 3, (h, w), name="conv1", **layer_args("conv1"))
        layers += [stem, BatchNorm(width0, dtype=dtype, name="conv1.bn"), ReLU("conv1.relu")]
        in_ch, cur_hw = width0, (h, w)
        for s, width in enumerate(arch.widths, start=1):
            for b in range(1, arch.blocks + 1):
                stride = 2 if (s > 1 and b == 1) else 1
                block = ResidualBlock(in_ch, width, stride, cur_hw,
                                      name=f"layer{s}conv{b}", layer_args=layer_args)
                layers.append(block)
                in_ch, cur_hw = width, block.output_hw
        layers.append(GlobalAvgPool())
        if dropout_keep is not None and dropout_keep < 1.0:
            layers.append(Dropout(dropout_keep, seed=next(streams), name="fc.dropout"))
        layers.append(Dense(in_ch, classes, seed=next(streams), dtype=dtype, name="fc"))

    meta = dict(
        arch=arch.kind, stages=arch.stages, blocks=arch.blocks, widths=list(arch.widths),
        classes=classes, input_shape=list(input_shape), mask_enabled=mask_enabled,
        mask_init_mean=mask_init_mean, mask_init_variance=mask_init_variance,
        random_drop_p=random_drop_p, dropout_keep=dropout_keep, seed=seed,
    )
    return Network(layers, meta=meta)
