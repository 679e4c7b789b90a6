"""Fixed beamformer bank and angle features.

Array layouts: spectrograms ``(M, T, F)``; beam weights ``(N_B, F, M)``;
beams ``(N_B, T, F)``; angle features ``(N_A, T, F)``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from desnet.geometry import DoaGrid, bin_frequencies, reference_ipd, steering_vector

DEFAULT_PAIRS = ((0, 1), (0, 2), (1, 3))


@dataclass
class BeamformerBank:
    weights: np.ndarray  # (N_B, F, M) complex
    directions: DoaGrid


@dataclass
class AngleFeatureSet:
    features: np.ndarray  # (N_A, T, F) real in [-1, 1]
    pairs: tuple

    @property
    def num_pairs(self):
        return len(self.pairs)


def design_das_bank(geom, grid, num_bins, sample_rate):
    """Delay-and-sum weights ``w = d(theta, f) / M`` for every grid direction."""
    freqs = bin_frequencies(num_bins, sample_rate)
    d = steering_vector(geom, grid.azimuths, freqs)  # (N, F, M)
    return BeamformerBank(d / geom.num_mics, grid)


def beamform(spec_bins, bank):
    """``b[i, t, f] = w[i, f]^H y[:, t, f]``."""
    Y = np.asarray(spec_bins)
    W = bank.weights
    if Y.ndim != 3 or Y.shape[0] != W.shape[2] or Y.shape[2] != W.shape[1]:
        raise ValueError("spectrogram %s incompatible with bank weights %s" % (Y.shape, W.shape))
    return np.einsum("ifm,mtf->itf", W.conj(), Y)


def _check_pairs(pairs, M):
    if len(pairs) == 0:
        raise ValueError("angle features need at least one mic pair")
    for m, n in pairs:
        if not (0 <= m < M and 0 <= n < M) or m == n:
            raise ValueError("invalid mic pair (%d, %d) for %d microphones" % (m, n, M))


def observed_ipd(spec_bins, pair):
    """Raw phase difference ``angle(Y_m) - angle(Y_n)`` as ``(T, F)``."""
    Y = np.asarray(spec_bins)
    _check_pairs([pair], Y.shape[0])
    m, n = pair
    return np.angle(Y[m]) - np.angle(Y[n])


@lru_cache(maxsize=32)
def _reference_table(geom, grid, pairs, num_bins, sample_rate):
    freqs = bin_frequencies(num_bins, sample_rate)
    table = np.stack([reference_ipd(geom, grid.azimuths, p, freqs) for p in pairs], axis=1)
    table.setflags(write=False)
    return table  # (N, P, F)


def reference_table(geom, grid, pairs, num_bins, sample_rate):
    """Cached reference IPDs ``(N, P, F)`` for a grid and pair list."""
    return _reference_table(geom, grid, tuple(map(tuple, pairs)), int(num_bins), float(sample_rate))


def angle_features(spec_bins, geom, grid, pairs=DEFAULT_PAIRS, sample_rate=16000):
    """Pair-averaged cosine similarity between observed and reference IPDs."""
    Y = np.asarray(spec_bins)
    pairs = tuple(map(tuple, pairs))
    _check_pairs(pairs, Y.shape[0])
    ref = reference_table(geom, grid, pairs, Y.shape[2], sample_rate)
    obs = np.stack([observed_ipd(Y, p) for p in pairs])  # (P, T, F)
    # cos(o - r) = cos o cos r + sin o sin r, summed over pairs
    feats = (np.einsum("ptf,npf->ntf", np.cos(obs), np.cos(ref))
             + np.einsum("ptf,npf->ntf", np.sin(obs), np.sin(ref))) / len(pairs)
    return AngleFeatureSet(np.clip(feats, -1.0, 1.0), pairs)


# -- differentiable versions ---------------------------------------------------------

def _freq_mix(x, mat):
    """``out[b, n, t, f] = sum_k x[b, k, t, f] * mat[f, k, n]`` for ``(B, K, T, F)`` input."""
    from desnet.autodiff import tensor as ad
    B, K, T, F = x.shape
    xt = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (B, T, F, 1, K))
    out = ad.matmul(xt, mat)  # (B, T, F, 1, N)
    return ad.transpose(ad.reshape(out, (B, T, F, mat.shape[-1])), (0, 3, 1, 2))


def beamform_tensor(yr, yi, bank):
    """Batched :func:`beamform` on ``(B, M, T, F)`` tensor parts -> ``(B, N, T, F)`` parts."""
    W = bank.weights.transpose(1, 2, 0)  # (F, M, N)
    # conj(w) y = (wr - j wi)(yr + j yi)
    wr, wi = W.real.astype(yr.dtype), W.imag.astype(yr.dtype)
    br = _freq_mix(yr, wr) + _freq_mix(yi, wi)
    bi = _freq_mix(yi, wr) - _freq_mix(yr, wi)
    return br, bi


def angle_features_tensor(yr, yi, ref, pairs, floor=1e-12):
    """Batched angle features from ``(B, M, T, F)`` parts and a ``(N, P, F)`` reference table.

    Phase differences enter through ``Y_m conj(Y_n) / |Y_m conj(Y_n)|`` so the
    result stays differentiable in the spectrum.
    """
    from desnet.autodiff import tensor as ad
    _check_pairs(pairs, yr.shape[1])
    cos_o, sin_o = [], []
    for m, n in pairs:
        ar, ai, br, bi = yr[:, m:m + 1], yi[:, m:m + 1], yr[:, n:n + 1], yi[:, n:n + 1]
        pr = ar * br + ai * bi
        pi = ai * br - ar * bi
        mag = ad.sqrt(pr * pr + pi * pi + floor)
        cos_o.append(pr / mag)
        sin_o.append(pi / mag)
    P = len(pairs)
    cr = (np.cos(ref).transpose(2, 1, 0) / P).astype(yr.dtype)  # (F, P, N)
    sr = (np.sin(ref).transpose(2, 1, 0) / P).astype(yr.dtype)
    return _freq_mix(ad.concat(cos_o, axis=1), cr) + _freq_mix(ad.concat(sin_o, axis=1), sr)
