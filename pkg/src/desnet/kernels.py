"""Hot inner loops, each in a numba and a pure-numpy flavour.

Every public kernel ``foo`` dispatches to ``_foo_numba`` or ``_foo_numpy``
depending on :func:`desnet._accel.use_numba`.  Both flavours are kept
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""

import numpy as np

from desnet._accel import njit, use_numba

# ---------------------------------------------------------------------------
# overlap-add / framing (adjoint pair)
# ---------------------------------------------------------------------------


def _overlap_add_numpy(frames, hop, length):
    B, T, N = frames.shape
    out = np.zeros((B, length), dtype=frames.dtype)
    for t in range(T):
        out[:, t * hop:t * hop + N] += frames[:, t]
    return out


@njit
def _overlap_add_numba(frames, hop, length):
    B, T, N = frames.shape
    out = np.zeros((B, length), dtype=frames.dtype)
    for b in range(B):
        for t in range(T):
            s = t * hop
            for n in range(N):
                out[b, s + n] += frames[b, t, n]
    return out


def overlap_add(frames, hop, length):
    """Sum ``(B, T, N)`` frames spaced ``hop`` apart into ``(B, length)``."""
    frames = np.ascontiguousarray(frames)
    if frames.shape[1] and (frames.shape[1] - 1) * hop + frames.shape[2] > length:
        raise ValueError("frames overrun output length %d" % length)
    if use_numba():
        return _overlap_add_numba(frames, hop, length)
    return _overlap_add_numpy(frames, hop, length)


def frame_signal(x, frame_len, hop, num_frames):
    """Adjoint of :func:`overlap_add`: ``(B, L) -> (B, T, N)`` (copies)."""
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)
    return np.ascontiguousarray(view[:, ::hop][:, :num_frames])


# ---------------------------------------------------------------------------
# WPE correlation statistics and filtering
# ---------------------------------------------------------------------------


def _wpe_stats_numpy(buf, y, w):
    # buf: (F, T, L) complex, y: (F, T, M), w: (F, T) real
    bw = buf * w[:, :, None]
    R = np.matmul(bw.transpose(0, 2, 1), buf.conj())
    r = np.matmul(bw.transpose(0, 2, 1), y.conj())
    return R, r


@njit
def _wpe_stats_numba(buf, y, w):
    F, T, L = buf.shape
    M = y.shape[2]
    R = np.empty((F, L, L), dtype=buf.dtype)
    r = np.empty((F, L, M), dtype=buf.dtype)
    for f in range(F):
        bw = np.empty((L, T), dtype=buf.dtype)
        for t in range(T):
            for i in range(L):
                bw[i, t] = buf[f, t, i] * w[f, t]
        R[f] = np.dot(bw, np.conj(buf[f]))
        r[f] = np.dot(bw, np.conj(y[f]))
    return R, r


def wpe_stats(buf, y, w):
    """Weighted correlations ``R_f = sum_t w ybar ybar^H``, ``r_f = sum_t w ybar y^H``."""
    buf = np.ascontiguousarray(buf)
    y = np.ascontiguousarray(y)
    w = np.ascontiguousarray(w, dtype=buf.real.dtype)
    if use_numba():
        return _wpe_stats_numba(buf, y, w)
    return _wpe_stats_numpy(buf, y, w)


def _wpe_filter_numpy(y, G, delay, taps):
    F, T, M = y.shape
    out = y.copy()
    for k in range(taps):
        d = delay + k
        if d >= T:
            break
        Gk = G[:, k * M:(k + 1) * M, :]
        out[:, d:] -= np.matmul(y[:, :T - d], Gk.conj())
    return out


@njit
def _wpe_filter_numba(y, G, delay, taps):
    F, T, M = y.shape
    out = y.copy()
    for f in range(F):
        for k in range(taps):
            d = delay + k
            if d >= T:
                break
            Gk = np.conj(G[f, k * M:(k + 1) * M, :])
            out[f, d:] -= np.dot(y[f, :T - d], Gk)
    return out


def wpe_filter(y, G, delay, taps):
    """``out_t = y_t - G^H ybar_{t-delay}`` for ``y`` in ``(F, T, M)`` layout."""
    y = np.ascontiguousarray(y)
    G = np.ascontiguousarray(G, dtype=y.dtype)
    if use_numba():
        return _wpe_filter_numba(y, G, delay, taps)
    return _wpe_filter_numpy(y, G, delay, taps)


# ---------------------------------------------------------------------------
# col2im (conv2d input gradient / transposed convolution)
# ---------------------------------------------------------------------------


def _col2im_numpy(cols, sh, sw, Hp, Wp):
    B, C, kh, kw, Ho, Wo = cols.shape
    img = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            img[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += cols[:, :, i, j]
    return img


@njit
def _col2im_numba(cols, sh, sw, Hp, Wp):
    B, C, kh, kw, Ho, Wo = cols.shape
    img = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    for p in range(Ho):
                        row = i + sh * p
                        for q in range(Wo):
                            img[b, c, row, j + sw * q] += cols[b, c, i, j, p, q]
    return img


def col2im(cols, stride, padded_shape):
    """Scatter-add ``(B, C, kh, kw, Ho, Wo)`` patches into a padded image."""
    cols = np.ascontiguousarray(cols)
    Hp, Wp = padded_shape
    if use_numba():
        return _col2im_numba(cols, stride[0], stride[1], Hp, Wp)
    return _col2im_numpy(cols, stride[0], stride[1], Hp, Wp)


# ---------------------------------------------------------------------------
# LSTM recurrence (gate order i, f, g, o)
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _lstm_forward_numpy(xproj, w_hh, h0, c0):
    T, B, G4 = xproj.shape
    H = G4 // 4
    hs = np.empty((T, B, H), dtype=xproj.dtype)
    cs = np.empty((T, B, H), dtype=xproj.dtype)
    acts = np.empty((T, B, G4), dtype=xproj.dtype)
    h, c = h0, c0
    for t in range(T):
        z = xproj[t] + h @ w_hh
        a = np.empty_like(z)
        a[:, :2 * H] = _sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        h = a[:, 3 * H:] * np.tanh(c)
        hs[t], cs[t], acts[t] = h, c, a
    return hs, cs, acts


@njit
def _lstm_forward_numba(xproj, w_hh, h0, c0):
    T, B, G4 = xproj.shape
    H = G4 // 4
    hs = np.empty((T, B, H), dtype=xproj.dtype)
    cs = np.empty((T, B, H), dtype=xproj.dtype)
    acts = np.empty((T, B, G4), dtype=xproj.dtype)
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        z = xproj[t] + np.dot(h, w_hh)
        for b in range(B):
            for k in range(H):
                gi = 0.5 * (np.tanh(0.5 * z[b, k]) + 1.0)
                gf = 0.5 * (np.tanh(0.5 * z[b, H + k]) + 1.0)
                gg = np.tanh(z[b, 2 * H + k])
                go = 0.5 * (np.tanh(0.5 * z[b, 3 * H + k]) + 1.0)
                cn = gf * c[b, k] + gi * gg
                c[b, k] = cn
                h[b, k] = go * np.tanh(cn)
                acts[t, b, k] = gi
                acts[t, b, H + k] = gf
                acts[t, b, 2 * H + k] = gg
                acts[t, b, 3 * H + k] = go
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def lstm_forward(xproj, w_hh, h0, c0):
    """Run the recurrence over precomputed input projections ``(T, B, 4H)``."""
    args = [np.ascontiguousarray(a) for a in (xproj, w_hh, h0, c0)]
    if use_numba():
        return _lstm_forward_numba(*args)
    return _lstm_forward_numpy(*args)


def _lstm_backward_numpy(dhs, hs, cs, acts, w_hh, h0, c0):
    T, B, H = hs.shape
    dz_all = np.empty((T, B, 4 * H), dtype=hs.dtype)
    dh = np.zeros((B, H), dtype=hs.dtype)
    dc = np.zeros((B, H), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        a = acts[t]
        gi, gf, gg, go = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else c0
        dh = dh + dhs[t]
        tc = np.tanh(cs[t])
        dc = dc + dh * go * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * gg * gi * (1.0 - gi)
        dz[:, H:2 * H] = dc * c_prev * gf * (1.0 - gf)
        dz[:, 2 * H:3 * H] = dc * gi * (1.0 - gg * gg)
        dz[:, 3 * H:] = dh * tc * go * (1.0 - go)
        dh = dz @ w_hh.T
        dc = dc * gf
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    dw_hh = np.tensordot(h_prev, dz_all, axes=([0, 1], [0, 1]))
    return dz_all, dw_hh, dh, dc


@njit
def _lstm_backward_numba(dhs, hs, cs, acts, w_hh, h0, c0):
    T, B, H = hs.shape
    dz_all = np.empty((T, B, 4 * H), dtype=hs.dtype)
    dw_hh = np.zeros((H, 4 * H), dtype=hs.dtype)
    dh = np.zeros((B, H), dtype=hs.dtype)
    dc = np.zeros((B, H), dtype=hs.dtype)
    w_t = np.ascontiguousarray(w_hh.T)
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for k in range(H):
                gi = acts[t, b, k]
                gf = acts[t, b, H + k]
                gg = acts[t, b, 2 * H + k]
                go = acts[t, b, 3 * H + k]
                cp = cs[t - 1, b, k] if t > 0 else c0[b, k]
                dhk = dh[b, k] + dhs[t, b, k]
                tc = np.tanh(cs[t, b, k])
                dck = dc[b, k] + dhk * go * (1.0 - tc * tc)
                dz_all[t, b, k] = dck * gg * gi * (1.0 - gi)
                dz_all[t, b, H + k] = dck * cp * gf * (1.0 - gf)
                dz_all[t, b, 2 * H + k] = dck * gi * (1.0 - gg * gg)
                dz_all[t, b, 3 * H + k] = dhk * tc * go * (1.0 - go)
                dc[b, k] = dck * gf
        hp = hs[t - 1] if t > 0 else h0
        dw_hh += np.dot(np.ascontiguousarray(hp.T), dz_all[t])
        dh = np.dot(dz_all[t], w_t)
    return dz_all, dw_hh, dh, dc


def lstm_backward(dhs, hs, cs, acts, w_hh, h0, c0):
    """Backprop through time.

    Returns ``(d_xproj, d_w_hh, d_h0, d_c0)``.
    """
    args = [np.ascontiguousarray(a) for a in (dhs, hs, cs, acts, w_hh, h0, c0)]
    if use_numba():
        return _lstm_backward_numba(*args)
    return _lstm_backward_numpy(*args)


NUMPY_IMPLS = {
    "overlap_add": _overlap_add_numpy,
    "wpe_stats": _wpe_stats_numpy,
    "wpe_filter": _wpe_filter_numpy,
    "col2im": _col2im_numpy,
    "lstm_forward": _lstm_forward_numpy,
    "lstm_backward": _lstm_backward_numpy,
}

NUMBA_IMPLS = {
    "overlap_add": _overlap_add_numba,
    "wpe_stats": _wpe_stats_numba,
    "wpe_filter": _wpe_filter_numba,
    "col2im": _col2im_numba,
    "lstm_forward": _lstm_forward_numba,
    "lstm_backward": _lstm_backward_numba,
}
