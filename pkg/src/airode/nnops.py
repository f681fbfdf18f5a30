"""Fused differentiable primitives for the complex-valued layers.

These are the operations that need a hand-derived adjoint rather than a
composition of `tensor` primitives: convolution, the linear map, the
componentwise pools/upsample, batch normalization, the per-row symbol
normalization used around the ODE bottleneck, the straight-through
codebook snap, and the cross-entropy head.

Conventions match `airode.tensor`: complex128 data, gradient stored as
dL/dRe + 1j*dL/dIm, deterministic accumulation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ComplexTensor, _accum

__all__ = [
    "conv2d",
    "linear",
    "avgpool2d",
    "maxpool2d",
    "upsample2d",
    "batchnorm2d",
    "normalize_rows",
    "denormalize_rows",
    "ste_snap",
    "cross_entropy",
    "relu_c",
]


def relu_c(z):
    """Componentwise complex ReLU on a plain ndarray (no autodiff)."""
    return np.maximum(z.real, 0.0) + 1j * np.maximum(z.imag, 0.0)


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _im2col(xp, kh, kw, sh, sw):
    # xp: (N, C, Hp, Wp) -> (N, Ho*Wo, C*kh*kw), window-major rows
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Complex 2-D cross-correlation, NCHW layout.

    x: (N, Cin, H, W); w: (Cout, Cin, kH, kW); bias: (Cout,) or None.
    Complex multiply-accumulate realizes the real/imaginary
    cross-convolution (Re = Rw*Ru - Iw*Iu, Im = Iw*Ru + Rw*Iu) directly.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError(f"conv2d: need 4-D input/kernel, got {xd.shape} and {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(
            f"conv2d: channel mismatch, input {xd.shape} vs kernel {wd.shape}"
        )
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, cin, h, wdt = xd.shape
    cout, _, kh, kw = wd.shape
    if h + 2 * ph < kh or wdt + 2 * pw < kw:
        raise ValueError(f"conv2d: kernel {wd.shape} larger than padded input {xd.shape}")

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols, ho, wo = _im2col(xp, kh, kw, sh, sw)
    wmat = wd.reshape(cout, cin * kh * kw)
    ymat = cols @ wmat.T  # (N, Ho*Wo, Cout)
    y = ymat.transpose(0, 2, 1).reshape(n, cout, ho, wo)
    if bias is not None:
        y = y + bias.data[None, :, None, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def backprop(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, cout)
        gw = np.einsum("nlo,nlk->ok", gmat, np.conj(cols)).reshape(wd.shape)
        _accum(w, gw)
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        gcols = gmat @ np.conj(wmat)  # (N, Ho*Wo, Cin*kh*kw)
        gcols = gcols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                gxp[:, :, a : a + ho * sh : sh, b : b + wo * sw : sw] += gcols[
                    :, :, :, :, a, b
                ]
        _accum(x, gxp[:, :, ph : ph + h, pw : pw + wdt])

    return ComplexTensor._from_op(y, parents, backprop)


def linear(x, w, bias=None):
    """y = x @ w^T + bias with complex entries; x: (N, In), w: (Out, In)."""
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"linear: incompatible shapes {xd.shape} and {wd.shape}")
    y = xd @ wd.T
    if bias is not None:
        y = y + bias.data[None, :]
    parents = (x, w) if bias is None else (x, w, bias)

    def backprop(g):
        _accum(x, g @ np.conj(wd))
        _accum(w, g.T @ np.conj(xd))
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    return ComplexTensor._from_op(y, parents, backprop)


def _pool_geometry(shape, k, s):
    n, c, h, w = shape
    if h < k or w < k or (h - k) % s or (w - k) % s:
        raise ValueError(
            f"pool: window {k} stride {s} does not tile input of shape {shape}"
        )
    return (h - k) // s + 1, (w - k) // s + 1


def avgpool2d(x, k, s=None):
    """Componentwise average pooling (identical arithmetic for re and im)."""
    s = k if s is None else s
    xd = x.data
    ho, wo = _pool_geometry(xd.shape, k, s)
    n, c, h, w = xd.shape
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    y = win.mean(axis=(4, 5))

    def backprop(g):
        gx = np.zeros_like(xd)
        gw = g / (k * k)
        for a in range(k):
            for b in range(k):
                gx[:, :, a : a + ho * s : s, b : b + wo * s : s] += gw
        _accum(x, gx)

    return ComplexTensor._from_op(y, (x,), backprop)


def maxpool2d(x, k, s=None):
    """Max pooling applied to re and im independently per window.

    Ties take the first (lowest flat index) position in the window,
    which keeps forward and backward deterministic.
    """
    s = k if s is None else s
    xd = x.data
    ho, wo = _pool_geometry(xd.shape, k, s)
    n, c, h, w = xd.shape
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    flat = win.reshape(n, c, ho, wo, k * k)
    idx_re = np.argmax(flat.real, axis=-1)
    idx_im = np.argmax(flat.imag, axis=-1)
    take = np.take_along_axis
    y = (
        take(flat.real, idx_re[..., None], axis=-1)[..., 0]
        + 1j * take(flat.imag, idx_im[..., None], axis=-1)[..., 0]
    )

    def backprop(g):
        sel = np.arange(k * k)
        gwin = g.real[..., None] * (sel == idx_re[..., None]) + 1j * (
            g.imag[..., None] * (sel == idx_im[..., None])
        )
        gwin = gwin.reshape(n, c, ho, wo, k, k)
        gx = np.zeros_like(xd)
        for a in range(k):
            for b in range(k):
                gx[:, :, a : a + ho * s : s, b : b + wo * s : s] += gwin[:, :, :, :, a, b]
        _accum(x, gx)

    return ComplexTensor._from_op(y, (x,), backprop)


def upsample2d(x, factor):
    """Nearest-neighbour upsampling by an integer factor."""
    f = int(factor)
    if f < 1:
        raise ValueError(f"upsample: factor must be a positive integer, got {factor}")
    xd = x.data
    n, c, h, w = xd.shape
    y = np.repeat(np.repeat(xd, f, axis=2), f, axis=3)

    def backprop(g):
        _accum(x, g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)))

    return ComplexTensor._from_op(y, (x,), backprop)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training, eps=1e-5, momentum=0.1):
    """Batch normalization of re and im independently, complex affine.

    Per channel, re and im are separately shifted/scaled to zero mean and
    unit variance (batch statistics in training, running statistics in
    eval), then the complex affine y = gamma * x_hat + beta is applied.
    `running_mean` (complex) and `running_var` (var of re in .real, var of
    im in .imag) are plain arrays mutated in place during training.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"batchnorm2d: need NCHW input, got shape {xd.shape}")
    axes = (0, 2, 3)
    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if training:
        mu_re = xd.real.mean(axis=axes)
        mu_im = xd.imag.mean(axis=axes)
        var_re = xd.real.var(axis=axes)
        var_im = xd.imag.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * (mu_re + 1j * mu_im)
        running_var *= 1.0 - momentum
        running_var += momentum * (var_re + 1j * var_im)
    else:
        mu_re, mu_im = running_mean.real, running_mean.imag
        var_re, var_im = running_var.real, running_var.imag
    sd_re = np.sqrt(var_re + eps)
    sd_im = np.sqrt(var_im + eps)
    xhat = (xd.real - mu_re[None, :, None, None]) / sd_re[None, :, None, None] + 1j * (
        (xd.imag - mu_im[None, :, None, None]) / sd_im[None, :, None, None]
    )
    gd, bd = gamma.data, beta.data
    y = gd[None, :, None, None] * xhat + bd[None, :, None, None]

    def backprop(g):
        _accum(gamma, np.einsum("nchw,nchw->c", g, np.conj(xhat)))
        _accum(beta, g.sum(axis=axes))
        gh = g * np.conj(gd)[None, :, None, None]
        if training:
            # d x_hat/d x for batch statistics, per component
            ghr, ghi = gh.real, gh.imag
            xr, xi = xhat.real, xhat.imag
            gx_re = (
                ghr - ghr.mean(axis=axes)[None, :, None, None]
                - xr * (ghr * xr).mean(axis=axes)[None, :, None, None]
            ) / sd_re[None, :, None, None]
            gx_im = (
                ghi - ghi.mean(axis=axes)[None, :, None, None]
                - xi * (ghi * xi).mean(axis=axes)[None, :, None, None]
            ) / sd_im[None, :, None, None]
        else:
            gx_re = gh.real / sd_re[None, :, None, None]
            gx_im = gh.imag / sd_im[None, :, None, None]
        _accum(x, gx_re + 1j * gx_im)

    return ComplexTensor._from_op(y, (x, gamma, beta), backprop)


def normalize_rows(x):
    """Per-row normalization to zero mean and unit variance.

    x: (N, C). Returns (y, mean, scale, clamped) where y[n] =
    (x[n] - mean[n]) / scale[n], mean is the complex row mean, scale the
    root mean squared modulus deviation (a real-valued tensor), and
    clamped a boolean array marking constant rows whose scale was forced
    to 1. mean and scale are differentiable outputs, so reusing them in
    `denormalize_rows` gives exact end-to-end gradients.
    """
    xd = x.data
    if xd.ndim != 2 or xd.shape[1] < 2:
        raise ValueError(f"normalize_rows: need (N, C) with C >= 2, got {xd.shape}")
    n_, c = xd.shape
    mu = xd.mean(axis=1)
    d = xd - mu[:, None]
    sigma = np.sqrt(np.mean(np.abs(d) ** 2, axis=1))
    clamped = sigma == 0.0
    sig = np.where(clamped, 1.0, sigma)
    y = d / sig[:, None]

    def backprop_y(g):
        # full Jacobian of y w.r.t. x, including the mean/scale paths
        r = np.sum(g.real * d.real + g.imag * d.imag, axis=1)
        gd = g / sig[:, None] - np.where(clamped, 0.0, r)[:, None] * d / (
            c * sig**3
        )[:, None]
        _accum(x, gd - gd.mean(axis=1)[:, None])

    def backprop_mu(g):
        _accum(x, np.broadcast_to((g / c)[:, None], xd.shape))

    def backprop_sigma(g):
        coeff = np.where(clamped, 0.0, g.real / (c * sig))
        _accum(x, coeff[:, None] * d)

    out = ComplexTensor._from_op(y, (x,), backprop_y)
    mean_t = ComplexTensor._from_op(mu, (x,), backprop_mu)
    scale_t = ComplexTensor._from_op(sig.astype(np.complex128), (x,), backprop_sigma)
    return out, mean_t, scale_t, clamped


def denormalize_rows(y, mean, scale):
    """Inverse of `normalize_rows`: x = y * scale + mean, per row."""
    yd = y.data
    md, sd = mean.data, scale.data
    if yd.ndim != 2 or md.shape != (yd.shape[0],) or sd.shape != (yd.shape[0],):
        raise ValueError(
            f"denormalize_rows: shapes {yd.shape}, {md.shape}, {sd.shape} disagree"
        )
    x = yd * sd[:, None] + md[:, None]

    def backprop(g):
        _accum(y, g * np.conj(sd)[:, None])
        _accum(scale, np.sum(g * np.conj(yd), axis=1))
        _accum(mean, g.sum(axis=1))

    return ComplexTensor._from_op(x, (y, mean, scale), backprop)


def ste_snap(latent, codebook):
    """Snap each latent weight to its nearest codebook entry.

    latent: tensor of shape (K,); codebook: plain complex array (K, Nc).
    Forward picks, per tap, the entry minimizing Euclidean distance in
    the complex plane (ties -> lowest index); backward is the identity
    (straight-through). Returns (effective_weights, chosen_indices).
    """
    ld = latent.data
    if codebook.ndim != 2 or codebook.shape[0] != ld.shape[0]:
        raise ValueError(
            f"ste_snap: codebook {codebook.shape} does not match latent {ld.shape}"
        )
    if codebook.shape[1] == 0:
        raise ValueError("ste_snap: empty codebook")
    dist = np.abs(ld[:, None] - codebook)
    idx = np.argmin(dist, axis=1)
    eff = codebook[np.arange(ld.shape[0]), idx]

    def backprop(g):
        _accum(latent, g)

    return ComplexTensor._from_op(eff.copy(), (latent,), backprop), idx


def cross_entropy(scores, onehot):
    """Mean cross-entropy of softmax(scores) against one-hot labels.

    scores: real-valued tensor (N, Q) (e.g. moduli of the tagging head);
    onehot: plain array (N, Q) with exactly one 1 per row. Uses the
    log-sum-exp form for stability.
    """
    sd = scores.data.real
    if sd.ndim != 2:
        raise ValueError(f"cross_entropy: need (N, Q) scores, got {scores.data.shape}")
    lab = np.asarray(onehot, dtype=np.float64)
    if lab.shape != sd.shape:
        raise ValueError(
            f"cross_entropy: label shape {lab.shape} vs scores {sd.shape}"
        )
    rows = lab.sum(axis=1)
    if np.any(rows == 0):
        raise ValueError("cross_entropy: all-zero label row")
    if not (np.all(rows == 1.0) and np.all((lab == 0.0) | (lab == 1.0))):
        raise ValueError("cross_entropy: labels must be one-hot")
    n = sd.shape[0]
    m = sd.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sd - m).sum(axis=1))
    loss = float(np.mean(lse - (lab * sd).sum(axis=1)))
    softmax = np.exp(sd - lse[:, None])

    def backprop(g):
        _accum(scores, (g.real / n) * (softmax - lab).astype(np.complex128))

    return ComplexTensor._from_op(
        np.asarray(loss, dtype=np.complex128), (scores,), backprop
    )
