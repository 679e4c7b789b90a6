"""The full dereverberation / enhancement / separation network.

Waveforms go through an STFT, optional DNN-WPE, fixed beams and angle
features, the DCCRN unmixer with complex ratio masks, attentional feature
selection, the extraction LSTM and finally a differentiable inverse STFT.
"""

from dataclasses import dataclass, field

import numpy as np

from desnet import attention, spatial
from desnet.autodiff import functional as AF
from desnet.autodiff import tensor as ad
from desnet.autodiff.nn import Module, uniform_init
from desnet.geometry import ArrayGeometry, DoaGrid, circular_positions
from desnet.stft import Waveform, hann, irfft_matrices, stft, synthesis_envelope
from desnet.unmix import DccrnConfig, Dccrn, ExtractionNet, VarianceNet
from desnet.wpe import WpeConfig, wpe_variance_op


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 8000
    fft_size: int = 512
    hop: int = 256
    num_angles: int = 36
    num_beams: int = 18
    pairs: tuple = spatial.DEFAULT_PAIRS
    embed_dim: int = None  # None: equal to the number of bins
    dccrn: DccrnConfig = field(default_factory=DccrnConfig)
    extract_hidden: int = 64
    extract_layers: int = 2
    dereverb: bool = False  # prepend DNN-WPE
    wpe: WpeConfig = field(default_factory=WpeConfig)
    variance_hidden: int = 8
    beam_feature: bool = True

    @property
    def num_bins(self):
        return self.fft_size // 2 + 1

    @property
    def dim(self):
        return self.embed_dim or self.num_bins


class DESNet(Module):
    def __init__(self, cfg=ModelConfig(), geometry=None, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.geometry = geometry or ArrayGeometry(circular_positions())
        F, D = cfg.num_bins, cfg.dim
        self.unmix = Dccrn(cfg.dccrn, F, rng, dtype)
        self.W_p = uniform_init(rng, (F, D), F, dtype)
        self.W_a = uniform_init(rng, (F, D), F, dtype)
        self.W_b = uniform_init(rng, (F, D), F, dtype) if cfg.beam_feature else None
        in_dim = (3 if cfg.beam_feature else 2) * F
        self.extract = ExtractionNet(in_dim, F, rng, cfg.extract_hidden, cfg.extract_layers, dtype)
        self.variance = VarianceNet(rng, cfg.variance_hidden, dtype=dtype,
                                    floor=cfg.wpe.variance_floor) if cfg.dereverb else None
        self.dtype = dtype
        self._angle_ref = spatial.reference_table(self.geometry, DoaGrid.uniform(cfg.num_angles),
                                                  cfg.pairs, F, cfg.sample_rate)
        self._bank = spatial.design_das_bank(self.geometry, DoaGrid.uniform(cfg.num_beams), F,
                                             cfg.sample_rate)
        C, S = irfft_matrices(cfg.fft_size)
        win = hann(cfg.fft_size)
        self._synth = ((C * win).astype(dtype), (S * win).astype(dtype))

    @property
    def num_speakers(self):
        return self.cfg.dccrn.num_speakers

    # -- stages ----------------------------------------------------------------------

    def analyse(self, mixtures):
        """Normalised complex spectra ``(B, M, T, F)`` and the per-chunk input scales."""
        x = np.asarray(mixtures, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1] != self.geometry.num_mics:
            raise ValueError("expected %d channels, got %d" % (self.geometry.num_mics, x.shape[1]))
        bins = np.stack([stft(Waveform(c, self.cfg.sample_rate), self.cfg.fft_size, self.cfg.hop).bins
                         for c in x])
        rms = np.sqrt(np.mean(np.abs(bins[:, 0]) ** 2, axis=(1, 2)))
        scale = 1.0 / np.maximum(rms, 1e-12)
        return bins * scale[:, None, None, None], scale

    def dereverberate(self, bins):
        """DNN-WPE on constant spectra; identity when the model has no variance network."""
        dt = self.dtype
        if self.variance is None:
            return ad.Tensor(bins.real.astype(dt)), ad.Tensor(bins.imag.astype(dt))
        lam = self.variance(ad.Tensor(np.abs(bins).astype(dt)))
        return wpe_variance_op(bins, lam, self.cfg.wpe)

    def synthesise(self, re, im, length):
        """Inverse STFT of ``(..., T, F)`` tensor parts to ``(..., length)`` waveforms."""
        N, hop = self.cfg.fft_size, self.cfg.hop
        C, S = self._synth
        frames = ad.matmul(re, C) - ad.matmul(im, S)  # (..., T, N)
        lead = frames.shape[:-2]
        T = frames.shape[-2]
        flat = ad.reshape(frames, (-1, T, N))
        full = (T - 1) * hop + N
        y = AF.overlap_add(flat, hop, full)
        env = synthesis_envelope(T, N, hop)
        keep = slice(N // 2, N // 2 + length)
        if full - N // 2 < length:
            raise ValueError("%d frames cannot cover %d samples" % (T, length))
        out = y[:, keep] * (1.0 / env[keep]).astype(self.dtype)
        return ad.reshape(out, lead + (length,))

    def forward(self, mixtures, return_details=False):
        """``(B, M, L)`` waveforms -> Tensor ``(B, C, L)`` estimates (input-normalised scale)."""
        x = np.asarray(mixtures)
        if x.ndim == 2:
            x = x[None]
        L = x.shape[-1]
        bins, scale = self.analyse(x)
        yr, yi = self.dereverberate(bins)
        B, M, T, F = yr.shape
        C = self.num_speakers

        y0r, y0i = yr[:, 0], yi[:, 0]
        heads = self.unmix(y0r, y0i)
        masks = [AF.complex_mask(hr, hi) for hr, hi in heads]
        mr = ad.stack([m[0] for m in masks], axis=1)  # (B, C, T, F)
        mi = ad.stack([m[1] for m in masks], axis=1)
        ur, ui = AF.complex_mul(mr, mi, ad.reshape(y0r, (B, 1, T, F)), ad.reshape(y0i, (B, 1, T, F)))
        mask_mag = ad.complex_abs(mr, mi)

        A = spatial.angle_features_tensor(yr, yi, self._angle_ref, self.cfg.pairs)
        w_a = attention.attend_tensor(mask_mag, A, self.W_p, self.W_a)
        feats = [ad.complex_abs(ur, ui)]
        w_b = None
        if self.cfg.beam_feature:
            br, bi = spatial.beamform_tensor(yr, yi, self._bank)
            w_b = attention.attend_tensor(mask_mag, ad.complex_abs(br, bi), self.W_p, self.W_b)
            sel_r = attention.select_tensor(w_b, br)
            sel_i = attention.select_tensor(w_b, bi)
            feats.append(ad.complex_abs(sel_r, sel_i))
        feats.append(attention.select_tensor(w_a, A))
        z = ad.reshape(ad.concat(feats, axis=3), (B * C, T, len(feats) * F))
        me = ad.reshape(self.extract(z), (B, C, T, F))
        est = self.synthesise(me * ur, me * ui, L)
        if return_details:
            return est, {"scale": scale, "angle_weights": w_a.data, "beam_weights": None if w_b is None
                         else w_b.data, "mask_mag": mask_mag.data, "angle_features": A.data}
        return est

    def separate(self, mixture):
        """Numpy inference on one ``(M, L)`` waveform -> ``(C, L)`` at the input level."""
        was = self.training
        self.eval()
        try:
            est, info = self.forward(np.asarray(mixture)[None], return_details=True)
        finally:
            self.train(was)
        return est.data[0].astype(np.float64) / info["scale"][0]
