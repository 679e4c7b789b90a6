"""SI-SNR, permutation-invariant training and the track-conditional symphonic loss."""

import enum
import itertools

import numpy as np

from desnet.autodiff import tensor as ad

EPS = 1e-8


class TrackLabel(enum.Enum):
    SE = "se"  # one speaker plus noise
    CSS = "css"  # two clean speakers
    NSS = "nss"  # two speakers plus noise

    @property
    def num_speakers(self):
        return 1 if self is TrackLabel.SE else 2

    @property
    def noisy(self):
        return self is not TrackLabel.CSS

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError("unknown track %r (expected se, css or nss)" % (value,)) from None


def si_snr(estimate, reference, eps=EPS):
    """Scale-invariant SNR in dB along the last axis (no mean removal)."""
    s = np.asarray(estimate, dtype=np.float64)
    x = np.asarray(reference, dtype=np.float64)
    if s.shape[-1] != x.shape[-1] or s.shape[-1] < 1:
        raise ValueError("estimate and reference lengths differ: %s vs %s" % (s.shape, x.shape))
    xx = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(xx == 0):
        raise ValueError("reference signal is all zeros")
    alpha = np.sum(s * x, axis=-1, keepdims=True) / xx
    proj = alpha * x
    num = np.maximum(np.linalg.norm(proj, axis=-1), eps)
    den = np.maximum(np.linalg.norm(s - proj, axis=-1), eps)
    return 20.0 * np.log10(num / den)


def pairwise_si_snr(estimates, references):
    """``S[i, j] = si_snr(estimates[i], references[j])``."""
    e = np.asarray(estimates, dtype=np.float64)
    r = np.asarray(references, dtype=np.float64)
    return si_snr(e[:, None, :], r[None, :, :])


def _best_assignment(S):
    """Maximise the mean of ``S[perm[j], j]`` over injective branch choices.

    ``S`` is ``(C, R)`` with ``R <= C``; ``perm[j]`` is the estimate used for
    reference ``j``.  Ties go to the first candidate in lexicographic order.
    """
    C, R = S.shape
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(C), R):
        val = np.mean(S[perm, range(R)])
        if val > best_val:
            best, best_val = perm, val
    return best, best_val


def pit_loss(estimates, references):
    """``(-max_perm mean SI-SNR, perm)`` where ``perm[j]`` is the estimate matched to reference ``j``."""
    e = np.asarray(estimates, dtype=np.float64)
    r = np.asarray(references, dtype=np.float64)
    if e.ndim != 2 or r.ndim != 2 or e.shape != r.shape:
        raise ValueError("pit_loss needs equal (C, L) shapes, got %s and %s" % (e.shape, r.shape))
    perm, val = _best_assignment(pairwise_si_snr(e, r))
    return -val, perm


def _check_chunk(label, refs):
    label = TrackLabel.parse(label)
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 1:
        refs = refs[None]
    if refs.shape[0] != label.num_speakers:
        raise ValueError("%s chunk needs %d reference(s), got %d"
                         % (label.name, label.num_speakers, refs.shape[0]))
    return label, refs


def chunk_loss(estimates, references, label, symphonic=True):
    """Loss of one chunk: branch 0 only for SE, PIT over branches otherwise.

    With ``symphonic=False`` SE references are matched to whichever branch
    fits best.
    """
    label, refs = _check_chunk(label, references)
    est = np.asarray(estimates, dtype=np.float64)
    if label is TrackLabel.SE and symphonic:
        return -float(si_snr(est[0], refs[0]))
    if refs.shape[0] == est.shape[0]:
        return float(pit_loss(est, refs)[0])
    return -float(_best_assignment(pairwise_si_snr(est, refs))[1])


def symphonic_loss(estimates, references, labels, symphonic=True):
    """Mean chunk loss over a batch; ``estimates`` is ``(B, C, L)``."""
    if len(estimates) != len(references) or len(references) != len(labels):
        raise ValueError("batch sizes differ: %d estimates, %d references, %d labels"
                         % (len(estimates), len(references), len(labels)))
    losses = [chunk_loss(e, r, l, symphonic) for e, r, l in zip(estimates, references, labels)]
    return float(np.mean(losses))


# -- differentiable versions -------------------------------------------------------

def si_snr_tensor(estimate, reference, eps=EPS):
    """SI-SNR in dB along the last axis; ``estimate`` is a Tensor, ``reference`` constant."""
    x = np.asarray(reference, dtype=estimate.dtype)
    xx = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(xx == 0):
        raise ValueError("reference signal is all zeros")
    alpha = ad.sum_(estimate * x, axis=-1, keepdims=True) / xx
    proj = alpha * x
    err = estimate - proj
    num = ad.maximum(ad.sum_(proj * proj, axis=-1), eps * eps)
    den = ad.maximum(ad.sum_(err * err, axis=-1), eps * eps)
    return ad.log(num / den) * (10.0 / np.log(10.0))


def chunk_loss_tensor(estimates, references, label, symphonic=True):
    """Differentiable :func:`chunk_loss`; ``estimates`` is a ``(C, L)`` Tensor."""
    label, refs = _check_chunk(label, references)
    if label is TrackLabel.SE and symphonic:
        return -si_snr_tensor(estimates[0], refs[0])
    C, R = estimates.shape[0], refs.shape[0]
    S = si_snr_tensor(_expand_pairs(estimates, R), np.broadcast_to(refs[None], (C, R, refs.shape[1])))
    perm, _ = _best_assignment(S.data.astype(np.float64))
    picked = S[np.asarray(perm), np.arange(R)]
    return -ad.mean(picked)


def _expand_pairs(estimates, R):
    C, L = estimates.shape
    return ad.concat([ad.reshape(estimates, (C, 1, L))] * R, axis=1)


def symphonic_loss_tensor(estimates, references, labels, symphonic=True):
    """Mean of per-chunk losses; ``estimates`` is a ``(B, C, L)`` Tensor."""
    B = estimates.shape[0]
    if len(references) != B or len(labels) != B:
        raise ValueError("batch sizes differ: %d estimates, %d references, %d labels"
                         % (B, len(references), len(labels)))
    losses = [chunk_loss_tensor(estimates[b], references[b], labels[b], symphonic) for b in range(B)]
    return ad.mean(ad.stack(losses))
