"""Frequency-domain convolution layer gated by a learnable binarized mask.

The layer realizes standard "same" cross-correlation through the spectrum:
input planes and kernels are zero-padded to (H+K-1, W+K-1), transformed with
the unitary DFT, multiplied elementwise (kernel spectrum conjugated, product
scaled by sqrt(PQ) so the unitary transforms compose to exact circular
convolution), summed over input channels, inverse-transformed, circularly
realigned, and cropped back to the input window.

Between multiply and inverse transform sits the regularizer: a per-layer real
mask in [0, 1] over the padded frequency grid, binarized at 0.5 on every
forward pass. The binarization has pass-through (straight-through) derivative,
so gradients accumulate into the continuous real-valued mask, which is clipped
back to [0, 1] and re-symmetrized after every update. Conjugate symmetry of
the mask is what keeps layer outputs real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import crop_same, dft2, hermitian_mirror, idft2, zero_pad

BINARIZE_THRESHOLD = 0.5


@dataclass
class MaskParams:
    """Continuous frequency mask plus its optimizer state."""

    real_values: np.ndarray  # (P, Q), every entry in [0, 1]
    momentum_buffer: np.ndarray  # same shape

    @property
    def shape(self):
        return self.real_values.shape


@dataclass
class LayerCache:
    """Everything the backward pass needs from one forward call."""

    x_spec: np.ndarray  # (B, Cin, P, Q) input spectra
    premask_spec: np.ndarray  # (B, Cout, P, Q) channel-summed spectrum before masking
    kernel_spec_conj: np.ndarray  # (Cout, Cin, P, Q)
    mask_binary: np.ndarray  # (P, Q) snapshot actually multiplied in
    imag_residual: float  # max |imag| discarded after the inverse transform


def symmetrize(values: np.ndarray) -> np.ndarray:
    """Average with the conjugate-mirror positions; exact fixed point of the mirror."""
    return (values + hermitian_mirror(values)) / 2.0


def init_mask(p: int, q: int, mean: float, variance: float, seed: int) -> MaskParams:
    """Sample a mask from N(mean, variance), clip to [0, 1], symmetrize.

    Deterministic for a fixed seed. The symmetrization averages each entry
    with its mirror, which leaves the global mean untouched.
    """
    if p < 1 or q < 1:
        raise ValueError(f"init_mask: mask size {p}x{q} must be at least 1x1")
    if variance < 0:
        raise ValueError(f"init_mask: negative variance {variance}")
    rng = np.random.default_rng(seed)
    values = rng.normal(mean, np.sqrt(variance), size=(p, q))
    values = symmetrize(np.clip(values, 0.0, 1.0))
    return MaskParams(real_values=values, momentum_buffer=np.zeros((p, q)))


def binarize(mask) -> np.ndarray:
    """Threshold the continuous mask to {0, 1}; entries at exactly 0.5 go to 1."""
    values = mask.real_values if isinstance(mask, MaskParams) else np.asarray(mask)
    return (values >= BINARIZE_THRESHOLD).astype(np.float64)


def mask_percentage(mask: MaskParams) -> float:
    """Fraction of frequency bins the binarized mask suppresses."""
    b = binarize(mask)
    return float(np.count_nonzero(b == 0.0)) / b.size


def random_drop(binary_mask: np.ndarray, p: float, seed: int) -> np.ndarray:
    """Drop surviving frequency bins with probability p (ablation).

    Each kept bin is zeroed with marginal probability exactly p; conjugate
    mirror pairs share one draw so the dropped mask stays symmetric and the
    layer remains a real operator. Deterministic per seed.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"random_drop: p={p} outside [0, 1]")
    binary_mask = np.asarray(binary_mask, dtype=np.float64)
    if p == 0.0:
        return binary_mask.copy()
    m, n = binary_mask.shape
    u = np.random.default_rng(seed).random((m, n))
    rows = np.arange(m).reshape(-1, 1)
    cols = np.arange(n).reshape(1, -1)
    mrows, mcols = (-rows) % m, (-cols) % n
    # one draw per mirror orbit, read from the lexicographically smaller index
    canonical = (rows < mrows) | ((rows == mrows) & (cols <= mcols))
    u = np.where(canonical, u, hermitian_mirror(u))
    return np.where(u < p, 0.0, binary_mask)


def update_mask(mask: MaskParams, dm: np.ndarray, lr: float, momentum: float) -> MaskParams:
    """Momentum-SGD step on the continuous mask, then clip to [0, 1] and symmetrize.

    No weight decay is ever applied to masks. Mutates in place and returns
    the same object.
    """
    if dm.shape != mask.real_values.shape:
        raise ValueError(f"update_mask: gradient shape {dm.shape} vs mask {mask.shape}")
    dtype = mask.real_values.dtype
    v = momentum * mask.momentum_buffer.astype(np.float64) + np.asarray(dm, dtype=np.float64)
    new = mask.real_values.astype(np.float64) - lr * v
    new = symmetrize(np.clip(new, 0.0, 1.0))
    mask.momentum_buffer[...] = v.astype(dtype)
    mask.real_values[...] = new.astype(dtype)
    return mask


class SpectralConv:
    """Convolution layer evaluated through the masked frequency domain.

    Expects inputs of shape (B, in_channels, H, W) with fixed spatial size;
    the padded transform size is P x Q = (H+K-1) x (W+K-1) and the mask lives
    on that grid. Stride > 1 is plain spatial subsampling of the stride-1
    result (the transform has no native stride).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        input_hw: tuple[int, int],
        stride: int = 1,
        mask_enabled: bool = True,
        mask_init_mean: float = 0.8,
        mask_init_variance: float = 0.2,
        random_drop_p: float = 0.0,
        weight_seed: int = 0,
        mask_seed: int = 0,
        drop_seed: int = 0,
        dtype=np.float32,
        name: str = "conv",
    ):
        if kernel_size % 2 != 1:
            raise ValueError(f"{name}: kernel size {kernel_size} must be odd")
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.input_hw = tuple(input_hw)
        self.stride = stride
        self.pad = kernel_size // 2
        h, w = self.input_hw
        self.padded_hw = (h + kernel_size - 1, w + kernel_size - 1)
        self.dtype = dtype
        self.mask_frozen = not mask_enabled
        self.random_drop_p = float(random_drop_p)
        self.binarize_identity = False  # test hook: use the continuous mask

        rng = np.random.default_rng(weight_seed)
        fan_in = in_channels * kernel_size * kernel_size
        std = np.sqrt(2.0 / fan_in)
        self.params = {
            "w": rng.normal(0.0, std, size=(out_channels, in_channels, kernel_size, kernel_size)).astype(dtype),
            "b": np.zeros(out_channels, dtype=dtype),
        }
        self.grads: dict[str, np.ndarray] = {}

        p, q = self.padded_hw
        if mask_enabled:
            mask = init_mask(p, q, mask_init_mean, mask_init_variance, mask_seed)
            mask.real_values = mask.real_values.astype(dtype)
            mask.momentum_buffer = mask.momentum_buffer.astype(dtype)
            self.mask = mask
        else:
            self.mask = MaskParams(np.ones((p, q), dtype=dtype), np.zeros((p, q), dtype=dtype))
        self.dmask: np.ndarray | None = None
        self._drop_rng = np.random.default_rng(drop_seed)
        self.cache: LayerCache | None = None

    @property
    def output_hw(self) -> tuple[int, int]:
        h, w = self.input_hw
        s = self.stride
        return ((h + s - 1) // s, (w + s - 1) // s)

    def effective_mask(self, train: bool) -> np.ndarray:
        mb = self.mask.real_values.astype(np.float64) if self.binarize_identity else binarize(self.mask)
        if train and self.random_drop_p > 0.0 and not self.mask_frozen:
            seed = int(self._drop_rng.integers(0, 2**63 - 1))
            mb = random_drop(mb, self.random_drop_p, seed)
        return mb

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        h, w = self.input_hw
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[2:] != (h, w):
            raise ValueError(
                f"{self.name}: expected input (B, {self.in_channels}, {h}, {w}), got {x.shape}"
            )
        p, q = self.padded_hw
        k = self.kernel_size
        scale = np.sqrt(p * q)

        mb = self.effective_mask(train)
        x_spec = dft2(zero_pad(x, p, q))
        kernel_spec_conj = np.conj(dft2(zero_pad(self.params["w"], p, q)))
        premask = np.einsum("bipq,oipq->bopq", x_spec, kernel_spec_conj, optimize=True) * scale
        u = idft2(mb * premask)
        residual = float(np.max(np.abs(u.imag))) if u.size else 0.0
        v = np.roll(u.real, (k - 1, k - 1), axis=(-2, -1))
        y = crop_same(v, h, w, self.pad, self.pad) + self.params["b"][None, :, None, None]
        if self.stride > 1:
            y = y[:, :, :: self.stride, :: self.stride]
        self.cache = LayerCache(x_spec, premask, kernel_spec_conj, mb, residual)
        return np.ascontiguousarray(y.astype(self.dtype))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cache = self.cache
        if cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        batch = cache.x_spec.shape[0]
        oh, ow = self.output_hw
        if dy.shape != (batch, self.out_channels, oh, ow):
            raise ValueError(
                f"{self.name}: gradient shape {dy.shape} does not match forward output "
                f"({batch}, {self.out_channels}, {oh}, {ow})"
            )
        h, w = self.input_hw
        p, q = self.padded_hw
        k = self.kernel_size
        scale = np.sqrt(p * q)
        dy = dy.astype(np.float64)

        dv = np.zeros((batch, self.out_channels, p, q))
        dv[:, :, self.pad : self.pad + h : self.stride, self.pad : self.pad + w : self.stride] = dy
        du = np.roll(dv, (-(k - 1), -(k - 1)), axis=(-2, -1))
        dt = dft2(du)

        # straight-through: the mask gradient sees the pre-mask spectrum,
        # gradients to weights/inputs see the binarized value used in forward
        self.dmask = np.einsum("bopq,bopq->pq", dt, np.conj(cache.premask_spec), optimize=True).real
        ds = dt * cache.mask_binary

        dx_spec = np.einsum("bopq,oipq->bipq", ds, np.conj(cache.kernel_spec_conj), optimize=True) * scale
        dk_conj = np.einsum("bopq,bipq->oipq", ds, np.conj(cache.x_spec), optimize=True) * scale

        dw = idft2(np.conj(dk_conj)).real[:, :, :k, :k]
        dx = idft2(dx_spec).real[:, :, :h, :w]
        self.grads = {
            "w": dw.astype(self.dtype),
            "b": dy.sum(axis=(0, 2, 3)).astype(self.dtype),
        }
        return np.ascontiguousarray(dx.astype(self.dtype))
