"""Layer-level primitives with fused backward passes.

Image tensors are ``(B, C, H, W)``.  Padding is given per side as
``((top, bottom), (left, right))``.
"""

import numpy as np

from desnet import kernels
from desnet.autodiff.tensor import Tensor, _make, as_tensor, concat, getitem


def _pad_spec(padding):
    if isinstance(padding, int):
        return ((padding, padding), (padding, padding))
    (a, b) = padding
    if isinstance(a, int) and isinstance(b, int):
        return ((a, a), (b, b))
    return (tuple(a), tuple(b))


def _windows(xp, kh, kw, sh, sw):
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::sh, ::sw]  # (B, C, Ho, Wo, kh, kw)


def _im2col(xp, kh, kw, sh, sw):
    """Contiguous patch matrix ``(B*Ho*Wo, C*kh*kw)`` plus ``(Ho, Wo)``."""
    win = _windows(xp, kh, kw, sh, sw)
    B, C, Ho, Wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    return cols, (Ho, Wo)


def _rows(g):
    """``(B, C, H, W)`` -> contiguous ``(B*H*W, C)``."""
    B, C, H, W = g.shape
    return np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * H * W, C)


def _unrows(m, B, H, W):
    return m.reshape(B, H, W, -1).transpose(0, 3, 1, 2)


def _scatter(m, B, Ho, Wo, C, kh, kw, stride, shape):
    """Overlap-add patch rows back onto an image of spatial ``shape``."""
    cols = m.reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    return kernels.col2im(cols, stride, shape)


def conv2d(x, weight, bias=None, stride=(1, 1), padding=0):
    """Cross-correlation with ``weight`` shaped ``(C_out, C_in, kh, kw)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError("conv2d: incompatible shapes %s and %s" % (x.shape, weight.shape))
    (pt, pb), (pl, pr) = _pad_spec(padding)
    sh, sw = stride
    cout, cin, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    Hp, Wp = xp.shape[2:]
    if Hp < kh or Wp < kw:
        raise ValueError("conv2d: padded input %s smaller than kernel %s" % ((Hp, Wp), (kh, kw)))
    B, _, H, W = x.shape
    cols, (Ho, Wo) = _im2col(xp, kh, kw, sh, sw)
    w2 = weight.data.reshape(cout, -1)
    out = cols @ w2.T
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = gw = gb = None
        g2 = _rows(g)
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if x.requires_grad:
            gpad = _scatter(g2 @ w2, B, Ho, Wo, cin, kh, kw, (sh, sw), (Hp, Wp))
            gx = gpad[:, :, pt:pt + H, pl:pl + W]
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw, gb)

    return _make(np.ascontiguousarray(_unrows(out, B, Ho, Wo)), parents, back)


def deconv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0), output_size=None):
    """Transposed convolution with ``weight`` shaped ``(C_in, C_out, kh, kw)``.

    The full output ``((H-1)*sh + kh, (W-1)*sw + kw)`` is cropped to
    ``[ph:ph+out_h, pw:pw+out_w]``; ``output_size`` defaults to cropping
    ``padding`` from both ends.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ValueError("deconv2d: incompatible shapes %s and %s" % (x.shape, weight.shape))
    sh, sw = stride
    ph, pw = padding
    cin, cout, kh, kw = weight.shape
    B, _, H, W = x.shape
    Hf, Wf = (H - 1) * sh + kh, (W - 1) * sw + kw
    if output_size is None:
        output_size = (Hf - 2 * ph, Wf - 2 * pw)
    Ho, Wo = output_size
    if Ho < 1 or Wo < 1 or ph + Ho > Hf or pw + Wo > Wf:
        raise ValueError("deconv2d: output size %s not reachable from input %s" % (output_size, x.shape))
    w2 = weight.data.reshape(cin, -1)
    x2 = _rows(x.data)
    full = _scatter(x2 @ w2, B, H, W, cout, kh, kw, (sh, sw), (Hf, Wf))
    out = full[:, :, ph:ph + Ho, pw:pw + Wo]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = gw = gb = None
        gfull = np.zeros((B, g.shape[1], Hf, Wf), dtype=g.dtype)
        gfull[:, :, ph:ph + Ho, pw:pw + Wo] = g
        gcols, _ = _im2col(gfull, kh, kw, sh, sw)  # (B*H*W, C_out*kh*kw)
        if x.requires_grad:
            gx = _unrows(gcols @ w2.T, B, H, W)
        if weight.requires_grad:
            gw = (x2.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    return _make(np.ascontiguousarray(out), parents, back)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training=True, momentum=0.9, eps=1e-5):
    """Per-channel batch normalisation over ``(B, H, W)``.

    In training mode the running statistics (plain numpy arrays) are updated
    in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],):
        raise ValueError("batchnorm2d: incompatible shapes %s and %s" % (x.shape, gamma.shape))
    xd = x.data
    shp = (1, -1, 1, 1)
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        n = xd.size // xd.shape[1]
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(shp)) * inv.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)

    def back(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(shp)
        if training:
            gx = inv.reshape(shp) * (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                                     - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, gg, gb

    return _make(out.astype(xd.dtype), (x, gamma, beta), back)


def _sig(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_cell(x, h, c, w_ih, w_hh, bias):
    """One LSTM step; gates ``[i, f, g, o]`` from ``x @ w_ih + h @ w_hh + bias``.

    Returns ``(h_new, c_new)``.
    """
    x, h, c, w_ih, w_hh, bias = (as_tensor(t) for t in (x, h, c, w_ih, w_hh, bias))
    H = w_hh.shape[0]
    if w_ih.shape != (x.shape[-1], 4 * H) or w_hh.shape != (H, 4 * H) or h.shape[-1] != H:
        raise ValueError("lstm_cell: incompatible shapes x %s, h %s, w_ih %s, w_hh %s"
                         % (x.shape, h.shape, w_ih.shape, w_hh.shape))
    z = x.data @ w_ih.data + h.data @ w_hh.data + bias.data
    gi, gf = _sig(z[..., :H]), _sig(z[..., H:2 * H])
    gg, go = np.tanh(z[..., 2 * H:3 * H]), _sig(z[..., 3 * H:])
    cn = gf * c.data + gi * gg
    tc = np.tanh(cn)
    hn = go * tc

    def back(g):
        dh, dc = g[..., :H], g[..., H:]
        dc = dc + dh * go * (1.0 - tc * tc)
        dz = np.concatenate([dc * gg * gi * (1 - gi), dc * c.data * gf * (1 - gf),
                             dc * gi * (1 - gg * gg), dh * tc * go * (1 - go)], axis=-1)
        z2 = dz.reshape(-1, 4 * H)
        return (dz @ w_ih.data.T, dz @ w_hh.data.T, dc * gf,
                x.data.reshape(-1, x.shape[-1]).T @ z2,
                h.data.reshape(-1, H).T @ z2, z2.sum(axis=0))

    hc = _make(np.concatenate([hn, cn], axis=-1), (x, h, c, w_ih, w_hh, bias), back)
    return getitem(hc, (Ellipsis, slice(0, H))), getitem(hc, (Ellipsis, slice(H, 2 * H)))


def lstm(x, w_ih, w_hh, bias, h0=None, c0=None):
    """Full-sequence LSTM over ``x`` shaped ``(T, B, I)``; returns ``(T, B, H)``.

    The recurrence runs in :mod:`desnet.kernels`; initial states are constants.
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    T, B, I = x.shape
    H = w_hh.shape[0]
    if w_ih.shape != (I, 4 * H) or w_hh.shape != (H, 4 * H):
        raise ValueError("lstm: incompatible shapes x %s, w_ih %s, w_hh %s" % (x.shape, w_ih.shape, w_hh.shape))
    dt = x.dtype
    h0 = np.zeros((B, H), dtype=dt) if h0 is None else np.asarray(h0, dtype=dt)
    c0 = np.zeros((B, H), dtype=dt) if c0 is None else np.asarray(c0, dtype=dt)
    xproj = np.tensordot(x.data, w_ih.data, axes=([2], [0])) + bias.data
    hs, cs, acts = kernels.lstm_forward(xproj, w_hh.data, h0, c0)

    def back(g):
        dz, dw_hh, _, _ = kernels.lstm_backward(g, hs, cs, acts, w_hh.data, h0, c0)
        gx = np.tensordot(dz, w_ih.data, axes=([2], [1])) if x.requires_grad else None
        gw_ih = np.tensordot(x.data, dz, axes=([0, 1], [0, 1]))
        return gx, gw_ih, dw_hh, dz.sum(axis=(0, 1))

    return _make(hs, (x, w_ih, w_hh, bias), back)


def overlap_add(frames, hop, length):
    """Differentiable overlap-add of ``(B, T, N)`` frames into ``(B, length)``."""
    frames = as_tensor(frames)
    B, T, N = frames.shape
    out = kernels.overlap_add(frames.data, hop, length)
    return _make(out, (frames,), lambda g: (kernels.frame_signal(g, N, hop, T),))


def complex_mask(hr, hi):
    """Bounded complex mask ``tanh(|H|) * exp(j angle(H))`` as ``(M_r, M_i)``.

    Evaluated as ``H * tanh(rho) / rho`` so the gradient is finite at ``H = 0``.
    """
    hr, hi = as_tensor(hr), as_tensor(hi)
    a, b = hr.data, hi.data
    rho = np.sqrt(a * a + b * b)
    r2 = a * a + b * b
    small = rho < 1e-2
    safe = np.where(small, 1.0, rho)
    t = np.tanh(rho)
    # series below 1e-2 avoid the cancellation in the closed forms
    ratio = np.where(small, 1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0 - 17.0 * r2 ** 3 / 315.0, t / safe)
    # d(ratio)/drho divided by rho
    dr = np.where(small, -2.0 / 3.0 + 8.0 * r2 / 15.0 - 34.0 * r2 * r2 / 105.0,
                  ((1.0 - t * t) * safe - t) / (safe ** 3))
    out = np.stack([a * ratio, b * ratio])

    def back(g):
        gr, gi = g[0], g[1]
        proj = (a * gr + b * gi) * dr
        return ratio * gr + a * proj, ratio * gi + b * proj

    m = _make(out.astype(a.dtype), (hr, hi), back)
    return getitem(m, 0), getitem(m, 1)


def complex_mul(ar, ai, br, bi):
    """``(ar + j ai)(br + j bi)`` on real parts."""
    return ar * br - ai * bi, ar * bi + ai * br


def complex_concat(parts, axis=1):
    """Concatenate complex tensors given as ``(re, im)`` pairs along ``axis``."""
    return concat([p[0] for p in parts], axis), concat([p[1] for p in parts], axis)


def tensor_like(data, ref):
    return Tensor(np.asarray(data, dtype=ref.dtype))
