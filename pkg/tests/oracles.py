"""Independent reference computations the test suite checks the package against.

Everything here is deliberately written from the defining formulas (explicit
sums, quadruple loops, Monte-Carlo draws) and never calls into the package's
own transform or convolution code paths.
"""

import numpy as np


def naive_dft2(x):
    """Literal double-sum unitary DFT: one explicit sum per output bin."""
    x = np.asarray(x, dtype=np.complex128)
    m_size, n_size = x.shape
    m = np.arange(m_size).reshape(-1, 1)
    n = np.arange(n_size).reshape(1, -1)
    out = np.empty((m_size, n_size), dtype=np.complex128)
    for h in range(m_size):
        for w in range(n_size):
            phase = np.exp(-2j * np.pi * (m * h / m_size + n * w / n_size))
            out[h, w] = np.sum(x * phase)
    return out / np.sqrt(m_size * n_size)


def naive_idft2(s):
    """Literal double-sum unitary inverse DFT."""
    s = np.asarray(s, dtype=np.complex128)
    m_size, n_size = s.shape
    h = np.arange(m_size).reshape(-1, 1)
    w = np.arange(n_size).reshape(1, -1)
    out = np.empty((m_size, n_size), dtype=np.complex128)
    for m in range(m_size):
        for n in range(n_size):
            phase = np.exp(2j * np.pi * (h * m / m_size + w * n / n_size))
            out[m, n] = np.sum(s * phase)
    return out / np.sqrt(m_size * n_size)


def same_corr2d(x, w):
    """Zero-padded "same" cross-correlation by quadruple loop.

    x: (H, W) single plane, w: (K, K) kernel, K odd.
    out[i, j] = sum_{a,b} x[i + a - K//2, j + b - K//2] * w[a, b]
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    hh, ww = x.shape
    k = w.shape[0]
    pad = k // 2
    out = np.zeros((hh, ww), dtype=np.float64)
    for i in range(hh):
        for j in range(ww):
            acc = 0.0
            for a in range(k):
                for b in range(k):
                    r, c = i + a - pad, j + b - pad
                    if 0 <= r < hh and 0 <= c < ww:
                        acc += x[r, c] * w[a, b]
            out[i, j] = acc
    return out


def conv_layer_naive(x, weights, bias, mask_binary, stride=1):
    """Masked convolution via spatially materialized effective kernels.

    x: (Cin, H, W), weights: (Cout, Cin, K, K), mask_binary: (P, Q) in {0, 1}.
    The mask gating is defined in the frequency domain, so each (out, in)
    kernel is pushed through the literal double-sum DFT, gated, and brought
    back with the literal inverse sum; the resulting P x Q effective kernel is
    then applied by an explicit spatial circular convolution, realigned, and
    cropped to the "same" window.
    """
    cin, hh, ww = x.shape
    cout, _, k, _ = weights.shape
    p, q = hh + k - 1, ww + k - 1
    pad = k // 2

    def pad_to(plane):
        out = np.zeros((p, q), dtype=np.float64)
        out[: plane.shape[0], : plane.shape[1]] = plane
        return out

    def circ_conv(a, g):
        out = np.zeros((p, q), dtype=np.float64)
        for n0 in range(p):
            for n1 in range(q):
                acc = 0.0
                for m0 in range(p):
                    for m1 in range(q):
                        acc += a[m0, m1] * g[(n0 - m0) % p, (n1 - m1) % q]
                out[n0, n1] = acc
        return out

    x_pad = [pad_to(x[i]) for i in range(cin)]
    y = np.zeros((cout, hh, ww), dtype=np.float64)
    for o in range(cout):
        acc = np.zeros((p, q), dtype=np.float64)
        for i in range(cin):
            gated = mask_binary * np.conj(naive_dft2(pad_to(weights[o, i])))
            eff_kernel = naive_idft2(gated).real
            acc += circ_conv(x_pad[i], eff_kernel)
        v = np.roll(acc, (k - 1, k - 1), axis=(0, 1))
        y[o] = v[pad : pad + hh, pad : pad + ww] + bias[o]
    if stride > 1:
        y = y[:, ::stride, ::stride]
    return y


def central_diff_grad(loss_fn, param, h=1e-3):
    """Central-difference gradient of a scalar loss w.r.t. an in-place array.

    Perturbs each entry of `param` by +/-h in the array's own dtype and uses
    the actually realized step, so single-precision storage does not bias the
    quotient. `loss_fn` takes no arguments and must read `param` afresh.
    """
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = np.asarray(orig + h, dtype=param.dtype)
        hi_val = float(flat[idx])
        f_hi = loss_fn()
        flat[idx] = np.asarray(orig - h, dtype=param.dtype)
        lo_val = float(flat[idx])
        f_lo = loss_fn()
        flat[idx] = orig
        grad.reshape(-1)[idx] = (f_hi - f_lo) / (hi_val - lo_val)
    return grad


def assert_grads_close(analytic, numeric, rtol, label="", floor=1e-8):
    """max |a - n| <= rtol * scale, with scale the larger gradient magnitude.

    `floor` keeps the comparison meaningful for tensors whose true gradient is
    (numerically) zero; callers checking a whole network pass the network-wide
    gradient scale so "relative" means relative to the problem, not to noise.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    err = np.max(np.abs(analytic - numeric)) / scale
    assert err < rtol, f"{label}: gradient mismatch, rel err {err:.3e} >= {rtol}"
    return err


def clipped_normal_mean(mean, variance, n=200_000, seed=0):
    """Monte-Carlo mean of a normal(mean, variance) draw clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    draws = rng.normal(mean, np.sqrt(variance), size=n)
    return float(np.mean(np.clip(draws, 0.0, 1.0)))
