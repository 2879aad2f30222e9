"""Unitary 2D discrete Fourier transforms and the plane/spectrum plumbing around them.

Conventions used throughout the package:

* a "real plane" is a real ndarray whose last two axes are (height M, width N);
* a "spectrum" is a complex ndarray of the same layout (full complex storage,
  no half-spectrum packing -- conjugate symmetry is an invariant, not a format);
* both transforms are unitary (1/sqrt(MN) each direction), so Parseval holds
  exactly and dft2/idft2 are mutual inverses.

All arithmetic is carried out in double precision regardless of the input
dtype; callers that store single-precision values cast back themselves.
Leading axes (batch, channel, ...) are passed through untouched, which lets
the convolution layers transform whole batches in one call.
"""

from __future__ import annotations

import numpy as np


def _check_plane(x: np.ndarray, op: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"{op}: expected at least 2 axes, got shape {x.shape}")
    m, n = x.shape[-2], x.shape[-1]
    if m < 1 or n < 1:
        raise ValueError(f"{op}: zero-sized plane {m}x{n}")
    return x


def dft2(x: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the last two axes.

    Accepts real or complex input; returns complex128.
    """
    x = _check_plane(x, "dft2")
    if np.iscomplexobj(x):
        x = x.astype(np.complex128, copy=False)
    else:
        x = x.astype(np.float64, copy=False)
    return np.fft.fft2(x, axes=(-2, -1), norm="ortho")


def idft2(s: np.ndarray) -> np.ndarray:
    """Unitary inverse 2D DFT over the last two axes (complex in, complex out)."""
    s = _check_plane(s, "idft2")
    return np.fft.ifft2(s.astype(np.complex128, copy=False), axes=(-2, -1), norm="ortho")


def cmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise complex product of two equal-shape spectra."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"cmul: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def zero_pad(x: np.ndarray, target_m: int, target_n: int) -> np.ndarray:
    """Embed the plane in a target_m x target_n plane of zeros, top-left aligned."""
    x = _check_plane(x, "zero_pad")
    m, n = x.shape[-2], x.shape[-1]
    if target_m < m or target_n < n:
        raise ValueError(f"zero_pad: target {target_m}x{target_n} smaller than source {m}x{n}")
    out = np.zeros(x.shape[:-2] + (target_m, target_n), dtype=np.float64)
    out[..., :m, :n] = x
    return out


def crop_same(y: np.ndarray, out_m: int, out_n: int, offset_m: int, offset_n: int) -> np.ndarray:
    """Extract the out_m x out_n window at (offset_m, offset_n)."""
    y = _check_plane(y, "crop_same")
    m, n = y.shape[-2], y.shape[-1]
    if offset_m < 0 or offset_n < 0 or offset_m + out_m > m or offset_n + out_n > n:
        raise ValueError(
            f"crop_same: window {out_m}x{out_n}@({offset_m},{offset_n}) out of bounds for {m}x{n}"
        )
    return y[..., offset_m : offset_m + out_m, offset_n : offset_n + out_n]


def hermitian_mirror(a: np.ndarray) -> np.ndarray:
    """Value at (h, w) mirrored to ((-h) mod M, (-w) mod N), per trailing plane."""
    return a[..., (-np.arange(a.shape[-2])) % a.shape[-2], :][
        ..., :, (-np.arange(a.shape[-1])) % a.shape[-1]
    ]


def hermitian_residual(s: np.ndarray) -> float:
    """Max deviation of a spectrum from conjugate symmetry S[h,w] = conj(S[-h,-w])."""
    return float(np.max(np.abs(s - np.conj(hermitian_mirror(s)))))
