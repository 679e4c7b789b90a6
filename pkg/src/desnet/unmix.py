"""Unmixing (DCCRN-style), variance and extraction networks.

Network tensors use ``(B, C, F, T)`` for feature maps: frequency is the
strided axis and time is convolved causally (one frame of left padding),
so the time length is preserved through the encoder/decoder.
"""

from dataclasses import dataclass, field

import numpy as np

from desnet.autodiff import functional as AF
from desnet.autodiff import tensor as ad
from desnet.autodiff.nn import LSTM, BatchNorm2d, Linear, Module, _param, uniform_init


@dataclass(frozen=True)
class DccrnConfig:
    encoder_channels: tuple = (8, 16, 32)
    kernel: tuple = (5, 2)
    stride: tuple = (2, 1)
    recurrent_hidden: int = 64
    recurrent_layers: int = 2
    projection_dim: int = None
    num_speakers: int = 2
    leaky_slope: float = 0.01

    @classmethod
    def full_size(cls):
        """The full-scale layout: six encoder stages, three 512-unit LSTM layers."""
        return cls(encoder_channels=(16, 32, 64, 128, 256, 256), recurrent_hidden=512,
                   recurrent_layers=3, projection_dim=1024)

    @property
    def depth(self):
        return len(self.encoder_channels)


def encoder_bins(num_bins, cfg):
    """Frequency sizes after each encoder layer, starting with the input."""
    k, s = cfg.kernel[0], cfg.stride[0]
    p = k // 2
    sizes = [num_bins]
    for _ in cfg.encoder_channels:
        sizes.append((sizes[-1] + 2 * p - k) // s + 1)
    return sizes


def min_bins(cfg):
    """Smallest ``F`` that leaves at least two bins at the bottleneck."""
    F = 2
    while encoder_bins(F, cfg)[-1] < 2:
        F += 1
    return F


# -- complex convolution --------------------------------------------------------

def complex_conv2d(yr, yi, wr, wi, stride=(1, 1), padding=0):
    """``W (*) Y`` for complex ``W = W_r + j W_i``, ``Y = Y_r + j Y_i`` via one real conv."""
    yr, yi, wr, wi = (ad.as_tensor(t) for t in (yr, yi, wr, wi))
    if wr.shape != wi.shape or yr.shape != yi.shape:
        raise ValueError("complex_conv2d: mismatched parts %s/%s, %s/%s"
                         % (yr.shape, yi.shape, wr.shape, wi.shape))
    w = ad.concat([ad.concat([wr, -wi], axis=1), ad.concat([wi, wr], axis=1)], axis=0)
    out = AF.conv2d(ad.concat([yr, yi], axis=1), w, None, stride, padding)
    c = wr.shape[0]
    return out[:, :c], out[:, c:]


def complex_deconv2d(yr, yi, wr, wi, stride, padding, output_size):
    """Transposed complex convolution; weights are ``(C_in, C_out, kh, kw)``."""
    w = ad.concat([ad.concat([wr, wi], axis=1), ad.concat([-wi, wr], axis=1)], axis=0)
    out = AF.deconv2d(ad.concat([yr, yi], axis=1), w, None, stride, padding, output_size)
    c = wr.shape[1]
    return out[:, :c], out[:, c:]


class ComplexConvBlock(Module):
    """Complex conv (or deconv) followed by real batch norm and leaky ReLU."""

    def __init__(self, cin, cout, cfg, rng, dtype, transposed=False, last=False):
        kh, kw = cfg.kernel
        shape = (cin, cout, kh, kw) if transposed else (cout, cin, kh, kw)
        fan_in = 2 * cin * kh * kw
        self.wr = uniform_init(rng, shape, fan_in, dtype)
        self.wi = uniform_init(rng, shape, fan_in, dtype)
        # a bias in front of batch norm is cancelled by the mean subtraction
        self.br = _param(np.zeros(cout), dtype) if last else None
        self.bi = _param(np.zeros(cout), dtype) if last else None
        self.bn = None if last else BatchNorm2d(2 * cout, dtype)
        self.transposed, self.cfg = transposed, cfg

    def forward(self, xr, xi, out_bins=None):
        cfg = self.cfg
        kh = cfg.kernel[0]
        if self.transposed:
            T = xr.shape[3]
            yr, yi = complex_deconv2d(xr, xi, self.wr, self.wi, cfg.stride, (kh // 2, 0),
                                      (out_bins, T))
        else:
            yr, yi = complex_conv2d(xr, xi, self.wr, self.wi, cfg.stride,
                                    ((kh // 2, kh // 2), (cfg.kernel[1] - 1, 0)))
        if self.bn is None:
            return yr + ad.reshape(self.br, (1, -1, 1, 1)), yi + ad.reshape(self.bi, (1, -1, 1, 1))
        c = yr.shape[1]
        y = ad.leaky_relu(self.bn(ad.concat([yr, yi], axis=1)), cfg.leaky_slope)
        return y[:, :c], y[:, c:]


class Branch(Module):
    """Per-speaker projection and mirrored decoder."""

    def __init__(self, cfg, hidden, bottleneck, rng, dtype):
        if cfg.projection_dim:
            self.proj = [Linear(hidden, cfg.projection_dim, rng, dtype),
                         Linear(cfg.projection_dim, bottleneck, rng, dtype)]
        else:
            self.proj = [Linear(hidden, bottleneck, rng, dtype)]
        chans = list(cfg.encoder_channels)
        self.decoder = []
        for j in range(cfg.depth):
            k = cfg.depth - 1 - j
            cout = chans[k - 1] if k > 0 else 1
            self.decoder.append(ComplexConvBlock(2 * chans[k], cout, cfg, rng, dtype,
                                                 transposed=True, last=(k == 0)))
        self.slope = cfg.leaky_slope

    def project(self, h):
        for i, lin in enumerate(self.proj):
            h = lin(h)
            if i < len(self.proj) - 1:
                h = ad.leaky_relu(h, self.slope)
        return h


class Dccrn(Module):
    """Shared complex encoder + recurrent bottleneck, per-speaker decoders.

    ``forward`` takes the channel-0 spectrogram as real/imag tensors
    ``(B, T, F)`` and returns ``[(H_r, H_i), ...]`` per speaker, each ``(B, T, F)``.
    """

    def __init__(self, cfg, num_bins, rng, dtype=np.float64, tie_branches=False):
        if num_bins < min_bins(cfg):
            raise ValueError("F=%d too small for %d-layer encoder; need F >= %d"
                             % (num_bins, cfg.depth, min_bins(cfg)))
        self.cfg, self.num_bins = cfg, num_bins
        self.bins = encoder_bins(num_bins, cfg)
        chans = (1,) + tuple(cfg.encoder_channels)
        self.encoder = [ComplexConvBlock(chans[i], chans[i + 1], cfg, rng, dtype)
                        for i in range(cfg.depth)]
        bottleneck = 2 * chans[-1] * self.bins[-1]
        self.rnn = LSTM(bottleneck, cfg.recurrent_hidden, cfg.recurrent_layers, rng, dtype)
        self.branches = [Branch(cfg, cfg.recurrent_hidden, bottleneck, rng, dtype)
                         for _ in range(cfg.num_speakers)]
        if tie_branches:
            src = dict(self.branches[0].named_parameters())
            for br in self.branches[1:]:
                for name, p in br.named_parameters():
                    p.data = src[name].data.copy()

    def forward(self, yr, yi):
        B, T, F = yr.shape
        if F != self.num_bins:
            raise ValueError("network built for F=%d, got input with F=%d" % (self.num_bins, F))
        if T < 1:
            raise ValueError("need at least 1 frame")
        xr = ad.reshape(ad.transpose(yr, (0, 2, 1)), (B, 1, F, T))
        xi = ad.reshape(ad.transpose(yi, (0, 2, 1)), (B, 1, F, T))
        skips = []
        for blk in self.encoder:
            xr, xi = blk(xr, xi)
            skips.append((xr, xi))
        C, Fb = xr.shape[1], xr.shape[2]
        z = ad.concat([xr, xi], axis=1)  # (B, 2C, Fb, T)
        z = ad.reshape(ad.transpose(z, (3, 0, 1, 2)), (T, B, 2 * C * Fb))
        h = self.rnn(z)
        outs = []
        for br in self.branches:
            p = ad.reshape(br.project(h), (T, B, 2 * C, Fb))
            p = ad.transpose(p, (1, 2, 3, 0))
            dr, di = p[:, :C], p[:, C:]
            for j, blk in enumerate(br.decoder):
                k = self.cfg.depth - 1 - j
                er, ei = skips[k]
                xr_, xi_ = AF.complex_concat([(dr, di), (er, ei)], axis=1)
                dr, di = blk(xr_, xi_, out_bins=self.bins[k])
            outs.append((ad.transpose(dr[:, 0], (0, 2, 1)), ad.transpose(di[:, 0], (0, 2, 1))))
        return outs


def dccrn_forward(net, spec0):
    """Numpy convenience: complex ``(T, F)`` or ``(B, T, F)`` in, per-speaker ``H`` out."""
    x = np.asarray(spec0)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    dt = net.encoder[0].wr.dtype
    outs = net(ad.Tensor(x.real.astype(dt)), ad.Tensor(x.imag.astype(dt)))
    res = [(hr.data, hi.data) for hr, hi in outs]
    if squeeze:
        res = [(hr[0], hi[0]) for hr, hi in res]
    return res


# -- complex ratio masks ------------------------------------------------------------

@dataclass
class CrmMask:
    parts: list = field(default_factory=list)  # per speaker (M_r, M_i)

    def magnitude(self, c):
        mr, mi = self.parts[c]
        return np.sqrt(mr ** 2 + mi ** 2)

    def complex(self, c):
        mr, mi = self.parts[c]
        return mr + 1j * mi


def crm_from_decoder(decoder_outputs):
    """Polar-form CRM ``tanh(|H|) exp(j arctan2(H_i, H_r))`` for each speaker."""
    parts = []
    for hr, hi in decoder_outputs:
        hr, hi = np.asarray(hr, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        mag = np.tanh(np.sqrt(hr ** 2 + hi ** 2))
        pha = np.arctan2(hi, hr)
        parts.append((mag * np.cos(pha), mag * np.sin(pha)))
    return CrmMask(parts)


def apply_crm(mask, spec0):
    """``Y^U_c = M^U_c * Y_0`` for every speaker."""
    y = np.asarray(spec0)
    out = []
    for mr, mi in mask.parts:
        if np.shape(mr) != y.shape:
            raise ValueError("mask shape %s != spectrogram shape %s" % (np.shape(mr), y.shape))
        out.append((mr + 1j * mi) * y)
    return out


# -- DNN-WPE variance network -------------------------------------------------------

class VarianceNet(Module):
    """Two-layer CNN mapping ``|Y_m|`` to a per-channel variance, averaged over channels."""

    def __init__(self, rng, hidden=8, kernel=3, floor=1e-8, dtype=np.float64, slope=0.01):
        self.w1 = uniform_init(rng, (hidden, 1, kernel, kernel), kernel * kernel, dtype)
        self.b1 = _param(np.zeros(hidden), dtype)
        self.w2 = uniform_init(rng, (1, hidden, kernel, kernel), hidden * kernel * kernel, dtype)
        self.b2 = _param(np.zeros(1), dtype)
        self.floor, self.kernel, self.slope = floor, kernel, slope

    def forward(self, mags):
        """``mags``: constant or tensor ``(B, M, T, F)`` -> floored variance ``(B, T, F)``."""
        mags = ad.as_tensor(mags)
        B, M, T, F = mags.shape
        p = self.kernel // 2
        x = ad.reshape(mags, (B * M, 1, T, F))
        h = ad.leaky_relu(AF.conv2d(x, self.w1, self.b1, (1, 1), p), self.slope)
        lam = ad.softplus(AF.conv2d(h, self.w2, self.b2, (1, 1), p))
        lam = ad.mean(ad.reshape(lam, (B, M, T, F)), axis=1)
        return ad.maximum(lam, self.floor)


def variance_net_forward(net, mags):
    """Numpy convenience: ``(M, T, F)`` magnitudes -> ``(T, F)`` variance map."""
    m = np.asarray(mags)
    dt = net.w1.dtype
    return net(ad.Tensor(m[None].astype(dt))).data[0]


# -- extraction ---------------------------------------------------------------------

class ExtractionNet(Module):
    """LSTM stack + linear projection + sigmoid giving real masks ``(B, T, F)``."""

    def __init__(self, input_dim, num_bins, rng, hidden=64, layers=2, dtype=np.float64):
        self.rnn = LSTM(input_dim, hidden, layers, rng, dtype)
        self.out = Linear(hidden, num_bins, rng, dtype)

    def forward(self, feats):
        """``feats``: ``(B, T, D)`` -> masks ``(B, T, F)`` in (0, 1)."""
        x = ad.transpose(ad.as_tensor(feats), (1, 0, 2))
        h = self.rnn(x)
        return ad.transpose(ad.sigmoid(self.out(h)), (1, 0, 2))


def extraction_forward(net, feats):
    x = np.asarray(feats)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    m = net(ad.Tensor(x.astype(net.out.weight.dtype))).data
    return m[0] if squeeze else m
