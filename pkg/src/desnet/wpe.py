"""Weighted prediction error (WPE) dereverberation.

Internally everything runs frequency-major: observations ``y`` are
``(F, T, M)``, the delayed buffer is ``(F, T, M*K)`` with element
``k*M + m`` holding channel ``m`` at frame ``t - delay - k``, and filter
taps ``G`` are ``(F, M*K, M)``.
"""

from dataclasses import dataclass

import numpy as np

from scipy.ndimage import uniform_filter1d

from desnet import kernels


class ConditioningError(ArithmeticError):
    """The weighted correlation matrix of some frequency bin is not positive definite."""

    def __init__(self, freq_index, msg=None):
        self.freq_index = freq_index
        super().__init__(msg or "correlation matrix not positive definite at frequency bin %d" % freq_index)


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3
    iterations: int = 3
    variance_floor: float = 1e-8
    diagonal_loading: float = 1e-5
    psd_context: int = 1  # frames averaged on each side when re-estimating the variance

    def __post_init__(self):
        if self.taps < 1 or self.delay < 1:
            raise ValueError("taps and delay must be >= 1 (got K=%d, delay=%d)" % (self.taps, self.delay))
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.diagonal_loading < 0:
            raise ValueError("diagonal_loading must be non-negative")
        if self.psd_context < 0:
            raise ValueError("psd_context must be >= 0")


@dataclass
class FilterTaps:
    G: np.ndarray  # (F, M*K, M)
    delay: int
    taps: int

    @property
    def num_channels(self):
        return self.G.shape[2]


def _freq_major(spec):
    return np.ascontiguousarray(spec.bins.transpose(2, 1, 0))


def delayed_buffer(y, delay, taps):
    """Stacked delayed observations for ``y`` in ``(F, T, M)`` layout."""
    F, T, M = y.shape
    buf = np.zeros((F, T, M * taps), dtype=y.dtype)
    for k in range(taps):
        d = delay + k
        if d < T:
            buf[:, d:, k * M:(k + 1) * M] = y[:, :T - d]
    return buf


def build_delayed_buffer(spec, delay, taps):
    """Delayed-context buffer of a spectrogram, returned as ``(F, T, M*K)``."""
    T = spec.num_frames
    if T <= delay + taps:
        raise ValueError("need more than delay + taps = %d frames, got %d" % (delay + taps, T))
    return delayed_buffer(_freq_major(spec), delay, taps)


def floor_variance(lam, floor):
    lam = np.asarray(lam, dtype=np.float64)
    return np.maximum(lam, floor)


def solve_taps(R, r, loading):
    """Solve ``(R + loading * tr(R)/L * I) G = r`` per frequency."""
    F, L, _ = R.shape
    tr = np.trace(R, axis1=1, axis2=2).real
    A = R + (loading * tr / L)[:, None, None] * np.eye(L)
    G = np.zeros_like(r)
    live = tr > 0
    if not np.any(live):
        return G
    try:
        np.linalg.cholesky(A[live])
    except np.linalg.LinAlgError:
        for f in np.flatnonzero(live):
            try:
                np.linalg.cholesky(A[f])
            except np.linalg.LinAlgError:
                raise ConditioningError(int(f)) from None
    G[live] = np.linalg.solve(A[live], r[live])
    return G


def estimate_taps(buffer, spec, variance, loading=1e-5):
    """Filter taps from the variance-weighted normal equations.

    ``variance`` is ``(T, F)`` and must already be floored.
    """
    y = _freq_major(spec)
    M = y.shape[2]
    if buffer.shape[:2] != y.shape[:2] or buffer.shape[2] % M:
        raise ValueError("buffer shape %s does not match spectrogram %s" % (buffer.shape, y.shape))
    lam = np.asarray(variance, dtype=np.float64)
    if lam.shape != (y.shape[1], y.shape[0]):
        raise ValueError("variance must be (T, F) = %s, got %s" % ((y.shape[1], y.shape[0]), lam.shape))
    R, r = kernels.wpe_stats(buffer, y, 1.0 / lam.T)
    return solve_taps(R, r, loading)


def apply_taps(spec, taps, delay=None, num_taps=None):
    """Subtract the predicted late reverberation from every channel."""
    delay = taps.delay if delay is None else delay
    num_taps = taps.taps if num_taps is None else num_taps
    G = np.asarray(taps.G)
    M = spec.num_channels
    if G.shape != (spec.num_bins, M * num_taps, M):
        raise ValueError("taps shape %s incompatible with spectrogram (M=%d, F=%d, K=%d)"
                         % (G.shape, M, spec.num_bins, num_taps))
    out = kernels.wpe_filter(_freq_major(spec), G, delay, num_taps)
    return spec.with_bins(out.transpose(2, 1, 0))


def channel_power(spec):
    """Channel-averaged power ``(T, F)``."""
    b = spec.bins
    return np.mean(b.real ** 2 + b.imag ** 2, axis=0)


def context_power(spec, context=0):
    """Channel-averaged power, optionally averaged over ``context`` frames each side.

    The per-bin power ``|y_tf|^2`` shares its noise with the prediction target
    and biases the weighted estimate towards zero taps; a short moving
    average decorrelates the two.
    """
    p = channel_power(spec)
    if context == 0:
        return p
    return uniform_filter1d(p, 2 * context + 1, axis=0, mode="nearest")


def _one_round(spec, buf, lam, cfg):
    G = estimate_taps(buf, spec, lam, cfg.diagonal_loading)
    taps = FilterTaps(G, cfg.delay, cfg.taps)
    return apply_taps(spec, taps), taps


def iterative_wpe(spec, cfg=WpeConfig(), return_variance=False):
    """Classic WPE alternating filter estimation and variance re-estimation.

    With ``return_variance`` the variance used in the final round is also
    returned (the input power when ``iterations == 0``).
    """
    M, F = spec.num_channels, spec.num_bins
    lam = floor_variance(context_power(spec, cfg.psd_context), cfg.variance_floor)
    out = spec
    taps = FilterTaps(np.zeros((F, M * cfg.taps, M), dtype=np.complex128), cfg.delay, cfg.taps)
    if cfg.iterations > 0:
        buf = build_delayed_buffer(spec, cfg.delay, cfg.taps)
        for i in range(cfg.iterations):
            if i > 0:
                lam = floor_variance(context_power(out, cfg.psd_context), cfg.variance_floor)
            out, taps = _one_round(spec, buf, lam, cfg)
    if return_variance:
        return out, taps, lam
    return out, taps


def wpe_with_variance(spec, variance, cfg=WpeConfig()):
    """One-shot WPE with an externally supplied variance (the DNN-WPE path)."""
    lam = np.asarray(variance, dtype=np.float64)
    if lam.shape != (spec.num_frames, spec.num_bins):
        raise ValueError("variance must be (T, F) = %s, got %s"
                         % ((spec.num_frames, spec.num_bins), lam.shape))
    lam = floor_variance(lam, cfg.variance_floor)
    buf = build_delayed_buffer(spec, cfg.delay, cfg.taps)
    return _one_round(spec, buf, lam, cfg)


def wpe_variance_op(bins, variance, cfg=WpeConfig()):
    """Differentiable DNN-WPE filtering for a batch.

    ``bins`` is a constant complex array ``(B, M, T, F)``; ``variance`` is a
    :class:`~desnet.autodiff.Tensor` ``(B, T, F)`` (already floored).
    Returns ``(re, im)`` tensors shaped like ``bins``.  The backward pass
    propagates through the weighted normal equations to the variance.
    """
    from desnet.autodiff.tensor import _make, as_tensor, getitem

    variance = as_tensor(variance)
    B, M, T, F = bins.shape
    if variance.shape != (B, T, F):
        raise ValueError("variance must be %s, got %s" % ((B, T, F), variance.shape))
    if T <= cfg.delay + cfg.taps:
        raise ValueError("need more than delay + taps = %d frames, got %d" % (cfg.delay + cfg.taps, T))
    L = M * cfg.taps
    lam = variance.data.astype(np.float64)
    cache = []
    out = np.empty((B, M, T, F), dtype=np.complex128)
    for b in range(B):
        y = np.ascontiguousarray(bins[b].transpose(2, 1, 0)).astype(np.complex128)
        buf = delayed_buffer(y, cfg.delay, cfg.taps)
        R, r = kernels.wpe_stats(buf, y, 1.0 / lam[b].T)
        G = solve_taps(R, r, cfg.diagonal_loading)
        o = kernels.wpe_filter(y, G, cfg.delay, cfg.taps)
        out[b] = o.transpose(2, 1, 0)
        cache.append((y, buf, R, G, o))

    def back(g):
        gr, gi = g[0].astype(np.float64), g[1].astype(np.float64)
        glam = np.zeros((B, T, F))
        for b in range(B):
            y, buf, R, G, o = cache[b]
            delta = (gr[b] + 1j * gi[b]).transpose(2, 1, 0)  # (F, T, M)
            tr = np.trace(R, axis1=1, axis2=2).real
            live = tr > 0
            A = R + (cfg.diagonal_loading * tr / L)[:, None, None] * np.eye(L)
            # dL/dG = -sum_t ybar_t delta_t^H; Z = A^{-1} dL/dG
            Q = np.matmul(buf.transpose(0, 2, 1), delta.conj())
            Z = np.zeros_like(Q)
            Z[live] = np.linalg.solve(A[live], -Q[live])
            U = np.matmul(buf, Z.conj())  # u_t = Z^H ybar_t
            gw = np.sum((o.conj() * U).real, axis=2)  # (F, T)
            load = (cfg.diagonal_loading / L) * np.einsum("fij,fij->f", G, Z.conj()).real
            gw -= load[:, None] * np.sum(np.abs(buf) ** 2, axis=2)
            gw[~live] = 0.0
            glam[b] = (-gw / lam[b].T ** 2).T
        return (glam.astype(variance.dtype),)

    dt = variance.dtype
    stacked = np.stack([out.real, out.imag]).astype(dt)
    node = _make(stacked, (variance,), back)
    return getitem(node, 0), getitem(node, 1)
