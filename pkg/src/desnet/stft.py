"""Short-time Fourier analysis/synthesis.

Spectrogram bins are stored channel-major as ``(M, T, F)`` with
``F = fft_size // 2 + 1``.  Analysis reflect-pads ``fft_size // 2`` samples
at both ends (frame ``t`` is centered on sample ``t * hop``) and uses a
periodic Hann window; synthesis is weighted overlap-add normalised by the
summed squared window.
"""

from dataclasses import dataclass

import numpy as np

from desnet import kernels


@dataclass
class Waveform:
    samples: np.ndarray  # (M, L)
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be (channels, length), got %s" % (s.shape,))
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        self.samples = s

    @property
    def num_channels(self):
        return self.samples.shape[0]

    def __len__(self):
        return self.samples.shape[1]


@dataclass
class Spectrogram:
    bins: np.ndarray  # (M, T, F) complex
    frame_shift: int
    fft_size: int
    sample_rate: int
    length: int = None  # original waveform length, used to trim synthesis

    def __post_init__(self):
        b = np.asarray(self.bins)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3 or b.shape[-1] != self.fft_size // 2 + 1:
            raise ValueError(
                "bins must be (M, T, %d), got %s" % (self.fft_size // 2 + 1, b.shape))
        self.bins = b.astype(np.complex128, copy=False)

    @property
    def num_channels(self):
        return self.bins.shape[0]

    @property
    def num_frames(self):
        return self.bins.shape[1]

    @property
    def num_bins(self):
        return self.bins.shape[2]

    def with_bins(self, bins):
        return Spectrogram(bins, self.frame_shift, self.fft_size, self.sample_rate, self.length)


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames(length, hop):
    return 1 + length // hop


def _check_params(fft_size, hop):
    if fft_size < 2 or fft_size % 2:
        raise ValueError("fft_size must be even and >= 2, got %d" % fft_size)
    if hop < 1 or fft_size % hop:
        raise ValueError("hop (%d) must divide fft_size (%d)" % (hop, fft_size))


def stft(wave, fft_size=512, hop=256):
    """Complex spectrogram of every channel of ``wave``."""
    _check_params(fft_size, hop)
    x = wave.samples
    L = x.shape[1]
    if L == 0:
        raise ValueError("empty waveform")
    if L < fft_size:
        raise ValueError("waveform length %d shorter than fft_size %d" % (L, fft_size))
    pad = fft_size // 2
    xp = np.pad(x, ((0, 0), (pad, pad)), mode="reflect")
    T = num_frames(L, hop)
    frames = kernels.frame_signal(xp, fft_size, hop, T) * hann(fft_size)
    bins = np.fft.rfft(frames, axis=-1)
    return Spectrogram(bins, hop, fft_size, wave.sample_rate, L)


def synthesis_envelope(T, fft_size, hop):
    w2 = hann(fft_size) ** 2
    return kernels.overlap_add(np.broadcast_to(w2, (1, T, fft_size)), hop,
                               (T - 1) * hop + fft_size)[0]


def istft(spec, length=None):
    """Weighted overlap-add inverse of :func:`stft`."""
    N, hop = spec.fft_size, spec.frame_shift
    M, T, _ = spec.bins.shape
    if length is None:
        length = spec.length if spec.length is not None else (T - 1) * hop
    pad = N // 2
    frames = np.fft.irfft(spec.bins, n=N, axis=-1) * hann(N)
    full = (T - 1) * hop + N
    y = kernels.overlap_add(frames.reshape(M, T, N), hop, full)
    env = synthesis_envelope(T, N, hop)
    keep = slice(pad, min(pad + length, full))
    assert np.all(env[keep] > 1e-10), "zero synthesis normalisation inside the signal"
    out = y[:, keep] / env[keep]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return Waveform(out, spec.sample_rate)


def irfft_matrices(fft_size):
    """Real matrices ``(C, S)`` of shape ``(F, N)`` with ``irfft(X) = Xr C - Xi S``."""
    F = fft_size // 2 + 1
    k = np.arange(F)[:, None]
    n = np.arange(fft_size)[None]
    scale = np.full((F, 1), 2.0 / fft_size)
    scale[0] = 1.0 / fft_size
    scale[-1] = 1.0 / fft_size
    ang = 2.0 * np.pi * k * n / fft_size
    return scale * np.cos(ang), scale * np.sin(ang)
