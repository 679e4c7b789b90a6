"""Attentional selection of angle and beam features.

Each speaker's unmixing-mask magnitude and every candidate feature map are
linearly embedded, compared frame by frame with a scaled dot product,
averaged over time and normalised with a softmax over candidates.  The
resulting weights mix the candidate features into one map per speaker.

The numpy functions operate on single utterances (``(T, F)`` maps); the
``*_tensor`` functions are the batched, differentiable versions used in
training.
"""

from dataclasses import dataclass

import numpy as np

from desnet.autodiff import tensor as ad


@dataclass
class EmbeddingWeights:
    W_p: np.ndarray  # (F, D) mask embedding
    W_a: np.ndarray  # (F, D) angle-feature embedding
    W_b: np.ndarray  # (F, D) beam-magnitude embedding

    def __post_init__(self):
        shapes = {np.shape(self.W_p), np.shape(self.W_a), np.shape(self.W_b)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError("embedding weights must share one (F, D) shape, got %s" % sorted(shapes))
        for w in (self.W_p, self.W_a, self.W_b):
            if not np.all(np.isfinite(w)):
                raise ValueError("embedding weights must be finite")

    @property
    def num_bins(self):
        return np.shape(self.W_p)[0]

    @property
    def dim(self):
        return np.shape(self.W_p)[1]

    @classmethod
    def identity(cls, num_bins):
        eye = np.eye(num_bins)
        return cls(eye, eye.copy(), eye.copy())

    @classmethod
    def random(cls, num_bins, dim, rng):
        s = 1.0 / np.sqrt(num_bins)
        return cls(*(rng.uniform(-s, s, size=(num_bins, dim)) for _ in range(3)))


@dataclass
class AttentionWeights:
    w: np.ndarray  # (C, N), rows on the probability simplex

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] == 0:
            raise ValueError("attention weights must be (C, N) with N >= 1, got %s" % (w.shape,))
        if np.any(w < 0) or not np.allclose(w.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("attention weight rows must be nonnegative and sum to 1")
        self.w = w

    @property
    def num_candidates(self):
        return self.w.shape[1]

    def argmax(self):
        return np.argmax(self.w, axis=1)


def _embed(x, W, what):
    x = np.asarray(x)
    W = np.asarray(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ValueError("%s: feature shape %s does not match embedding %s" % (what, x.shape, W.shape))
    return x @ W


def embed_masks(mask_mag, W_p):
    """``|M^U_c| W_p``: ``(T, F)`` mask magnitude to a ``(T, D)`` embedding."""
    return _embed(mask_mag, W_p, "embed_masks")


def embed_features(features, W):
    """Embed angle features or beam magnitudes: ``(..., T, F) -> (..., T, D)``.

    Complex input (beams) is embedded from its magnitude.
    """
    f = np.asarray(features)
    if np.iscomplexobj(f):
        f = np.abs(f)
    return _embed(f, W, "embed_features")


def _softmax(s, axis=-1):
    e = np.exp(s - np.max(s, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def attention_scores(V_u, V_cand):
    """Time-averaged scaled dot products.

    ``V_u`` is ``(T, D)`` (or ``(C, T, D)``), ``V_cand`` is ``(N, T, D)``.
    Returns ``(N,)`` (or ``(C, N)``) scores.  The time mean of frame-wise dot
    products equals one inner product over the flattened ``T*D`` maps.
    """
    V_u = np.asarray(V_u)
    V_cand = np.asarray(V_cand)
    if V_cand.ndim != 3 or V_cand.shape[0] == 0:
        raise ValueError("need at least one candidate embedding (N, T, D), got %s" % (V_cand.shape,))
    if V_u.shape[-2:] != V_cand.shape[1:]:
        raise ValueError("embedding shapes differ: %s vs %s" % (V_u.shape, V_cand.shape))
    T, D = V_cand.shape[1:]
    flat = V_cand.reshape(V_cand.shape[0], T * D)
    return (V_u.reshape(V_u.shape[:-2] + (T * D,)) @ flat.T) / (T * np.sqrt(D))


def attention_weights(V_u, V_cand):
    """Softmax over candidates of the time-averaged scores.

    ``V_u`` may be one speaker ``(T, D)`` or all speakers ``(C, T, D)``.
    """
    s = attention_scores(V_u, V_cand)
    return AttentionWeights(np.atleast_2d(_softmax(s, axis=-1)))


def weighted_feature(weights, features):
    """Convex combination ``sum_n w_n X_n`` of ``(N, T, F)`` candidates (real or complex)."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    f = np.asarray(features)
    if f.shape[0] != w.size:
        raise ValueError("got %d weights for %d candidate features" % (w.size, f.shape[0]))
    return np.tensordot(w, f, axes=(0, 0))


@dataclass
class ChunkedWeights:
    weights: np.ndarray  # (K, C, N)
    scores: np.ndarray  # (K, C, N) per-chunk time-averaged scores
    sizes: np.ndarray  # (K,) frames per chunk

    def pooled_scores(self):
        """Frame-weighted average of chunk scores (the full-utterance scores)."""
        return np.tensordot(self.sizes / self.sizes.sum(), self.scores, axes=(0, 0))


def chunked_weights(V_u, V_cand, chunk_frames):
    """Per-chunk attention weights for time-varying inspection.

    ``V_u`` is ``(C, T, D)``, ``V_cand`` is ``(N, T, D)``; the last chunk may
    be shorter than ``chunk_frames``.
    """
    if chunk_frames < 1:
        raise ValueError("chunk_frames must be >= 1")
    V_u = np.asarray(V_u)
    V_cand = np.asarray(V_cand)
    T = V_cand.shape[1]
    starts = range(0, T, chunk_frames)
    scores = np.stack([attention_scores(V_u[:, s:s + chunk_frames], V_cand[:, s:s + chunk_frames])
                       for s in starts])
    sizes = np.array([min(chunk_frames, T - s) for s in starts], dtype=np.float64)
    return ChunkedWeights(_softmax(scores, axis=-1), scores, sizes)


# -- differentiable path ----------------------------------------------------------

def attend_tensor(mask_mag, features, W_p, W_f):
    """Batched attention weights.

    ``mask_mag`` is ``(B, C, T, F)``, ``features`` ``(B, N, T, F)`` (real),
    ``W_p``/``W_f`` are ``(F, D)``.  Returns weights ``(B, C, N)``.  The
    score is bilinear, so the two embeddings are folded into one ``F x F``
    kernel before touching the candidate axis.
    """
    mask_mag, features = ad.as_tensor(mask_mag), ad.as_tensor(features)
    B, C, T, F = mask_mag.shape
    N = features.shape[1]
    if features.shape != (B, N, T, F):
        raise ValueError("feature shape %s does not match mask shape %s" % (features.shape, mask_mag.shape))
    if N == 0:
        raise ValueError("need at least one candidate feature")
    D = W_p.shape[1]
    kernel = ad.matmul(W_p, ad.transpose(W_f, (1, 0)))  # (F, F)
    proj = ad.reshape(ad.matmul(mask_mag, kernel), (B, C, T * F))
    flat = ad.transpose(ad.reshape(features, (B, N, T * F)), (0, 2, 1))
    scores = ad.matmul(proj, flat) * (1.0 / (T * np.sqrt(D)))
    return ad.softmax(scores, axis=-1)


def select_tensor(weights, features):
    """``(B, C, N)`` weights applied to ``(B, N, T, F)`` candidates -> ``(B, C, T, F)``."""
    features = ad.as_tensor(features)
    B, N, T, F = features.shape
    out = ad.matmul(weights, ad.reshape(features, (B, N, T * F)))
    return ad.reshape(out, (B, weights.shape[1], T, F))
