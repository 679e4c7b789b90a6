"""On-the-fly mixture simulation and the staged SNR/SDR curriculum.

Sources are convolved with multi-channel room impulse responses, the
second speaker is scaled to a target SDR against the first (measured on
channel-0 reverberant images), directional noise is scaled to a target SNR
against the speaker sum, and isotropic noise is added on top.  RIRs come
from WAV files listed in a manifest or from :func:`synth_plane_rir`.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve

from desnet.geometry import ArrayGeometry, circular_positions
from desnet.losses import TrackLabel
from desnet.stft import Waveform

MIN_SEPARATION_DEG = 20.0
ISO_SNR_RANGE = (15.0, 20.0)
ISO_DIRECTIONS = 36


# -- primitives --------------------------------------------------------------------

def convolve_rir(source, rir, rir_rate=None):
    """Convolve a mono source with an ``(M, L_h)`` RIR; output keeps the source length."""
    if isinstance(source, Waveform):
        if source.num_channels != 1:
            raise ValueError("source must be mono, got %d channels" % source.num_channels)
        if rir_rate is not None and rir_rate != source.sample_rate:
            raise ValueError("sample rates differ: source %d Hz, rir %d Hz" % (source.sample_rate, rir_rate))
        s, rate = source.samples[0], source.sample_rate
    else:
        s, rate = np.asarray(source, dtype=np.float64).reshape(-1), rir_rate
    h = np.atleast_2d(np.asarray(rir, dtype=np.float64))
    out = fftconvolve(s[None, :], h, axes=1)[:, :s.size]
    return Waveform(out, rate) if isinstance(source, Waveform) else out


def early_part(rir, sample_rate, boundary_ms=50.0):
    """Keep taps up to ``boundary_ms`` after each channel's direct-path peak."""
    h = np.atleast_2d(np.array(rir, dtype=np.float64))
    keep = int(round(boundary_ms * 1e-3 * sample_rate))
    peaks = np.argmax(np.abs(h), axis=1)
    for m, p in enumerate(peaks):
        h[m, p + keep + 1:] = 0.0
    return h


def signal_power(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def gain_for_snr(signal_pow, noise_pow, target_db):
    """Amplitude gain that puts noise ``target_db`` below the signal."""
    if not (signal_pow > 0 and noise_pow > 0):
        raise ValueError("signal and noise power must be positive (got %g, %g)" % (signal_pow, noise_pow))
    return float(np.sqrt(signal_pow / (noise_pow * 10.0 ** (target_db / 10.0))))


def snr_db(signal, noise):
    return 10.0 * np.log10(signal_power(signal) / signal_power(noise))


def fractional_delay(delay, length, half_width=16):
    """Hann-windowed sinc interpolator delaying by ``delay`` samples."""
    n = np.arange(length, dtype=np.float64)
    x = n - delay
    win = np.where(np.abs(x) <= half_width, 0.5 + 0.5 * np.cos(np.pi * x / half_width), 0.0)
    return np.sinc(x) * win


@dataclass(frozen=True)
class EchoTail:
    """Exponentially decaying echo train appended to the direct path."""
    rt60: float = 0.3
    echoes_per_second: float = 400.0
    seed: int = 0


def synth_plane_rir(geom, azimuth, sample_rate, length=None, tail=None, lead=32, half_width=16):
    """Far-field multi-channel RIR with an optional :class:`EchoTail`.

    Every channel's direct path sits at ``lead`` samples plus the plane-wave
    delay of that microphone relative to the array centroid.
    """
    delays = lead + geom.delays(azimuth) * sample_rate
    if length is None:
        extra = int(np.ceil(tail.rt60 * sample_rate)) if tail else 0
        length = int(np.ceil(delays.max())) + half_width + 1 + extra
    h = np.stack([fractional_delay(d, length, half_width) for d in delays])
    if tail is not None:
        rng = np.random.default_rng(tail.seed)
        t0 = lead + 2 * half_width
        count = int(tail.echoes_per_second * (length - t0) / sample_rate)
        for m in range(geom.num_mics):
            pos = rng.integers(t0, length, size=count)
            amp = rng.choice([-1.0, 1.0], size=count) * 0.5 * np.exp(-6.9 * (pos - lead) / (tail.rt60 * sample_rate))
            np.add.at(h[m], pos, amp)
    return h


def angular_distance(a, b):
    d = abs((a - b) % 360.0)
    return min(d, 360.0 - d)


# -- speech-like and noise sources ----------------------------------------------------

def synth_speech(seed, num_samples, sample_rate):
    """Deterministic voiced, syllable-modulated harmonic signal.

    Pitch glides around a seed-dependent base between 90 and 250 Hz, with a
    handful of harmonics under a slowly moving spectral tilt.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(num_samples) / sample_rate
    f0 = rng.uniform(90.0, 250.0) * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t
                                                          + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    x = np.zeros(num_samples)
    nyq = sample_rate / 2.0
    for k in range(1, 24):
        amp = rng.uniform(0.3, 1.0) / k ** rng.uniform(0.6, 1.2)
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi)) * (k * f0 < 0.9 * nyq)
    rate = rng.uniform(3.0, 5.0)  # syllables per second
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0, None) ** 1.5
    x = x * (0.1 + env) + 0.02 * rng.standard_normal(num_samples) * env
    return x / np.sqrt(np.mean(x ** 2))


def synth_noise(seed, num_samples, sample_rate, color=0.7):
    """First-order low-passed Gaussian noise (``color`` is the pole)."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(num_samples + 256)
    from scipy.signal import lfilter
    x = lfilter([1.0], [1.0, -color], w)[256:]
    return x / np.sqrt(np.mean(x ** 2))


# -- corpus manifests --------------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    path: str
    duration: float
    attrs: dict = field(default_factory=dict)


def read_manifest(path):
    """Parse ``id path duration [key=value ...]`` lines; ``#`` starts a comment.

    Relative paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError("%s:%d: expected 'id path duration', got %r" % (path, lineno, line))
            try:
                dur = float(parts[2])
            except ValueError:
                raise ValueError("%s:%d: bad duration %r" % (path, lineno, parts[2])) from None
            attrs = {}
            for kv in parts[3:]:
                if "=" not in kv:
                    raise ValueError("%s:%d: expected key=value, got %r" % (path, lineno, kv))
                k, v = kv.split("=", 1)
                attrs[k] = v
            p = parts[1] if os.path.isabs(parts[1]) else os.path.join(base, parts[1])
            entries.append(ManifestEntry(parts[0], p, dur, attrs))
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("%s: duplicate ids" % path)
    return entries


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for e in entries:
            extra = "".join(" %s=%s" % kv for kv in e.attrs.items())
            fh.write("%s %s %.6f%s\n" % (e.id, e.path, e.duration, extra))


class Corpus:
    """Resolves speech, noise and RIR ids to arrays.

    Ids of the form ``synth:<n>`` are generated procedurally; others are
    looked up in the manifests.  RIR ids ``plane`` and ``plane-rt<rt60>``
    produce :func:`synth_plane_rir` responses at the requested azimuth.
    """

    def __init__(self, sample_rate=8000, geometry=None, speech=(), noise=(), rirs=()):
        self.sample_rate = sample_rate
        self.geometry = geometry or ArrayGeometry(circular_positions())
        self.speech = {e.id: e for e in speech}
        self.noise = {e.id: e for e in noise}
        self.rirs = {e.id: e for e in rirs}

    def speech_ids(self):
        return list(self.speech)

    def noise_ids(self):
        return list(self.noise)

    def _file(self, table, key, kind):
        from desnet.fileio import read_wav
        if key not in table:
            raise KeyError("unknown %s id %r" % (kind, key))
        wav = read_wav(table[key].path)
        if wav.sample_rate != self.sample_rate:
            raise ValueError("%s %r has %d Hz, corpus runs at %d Hz"
                             % (kind, key, wav.sample_rate, self.sample_rate))
        return wav.samples

    def _clip(self, key, table, kind, num_samples, offset_rng, synth):
        if key.startswith("synth:"):
            return synth(int(key.split(":", 1)[1]), num_samples, self.sample_rate)
        x = self._file(table, key, kind)[0]
        if x.size >= num_samples:
            start = int(offset_rng.integers(0, x.size - num_samples + 1))
            return x[start:start + num_samples].astype(np.float64)
        return np.resize(x, num_samples).astype(np.float64)

    def speech_clip(self, key, num_samples, rng):
        return self._clip(key, self.speech, "speech", num_samples, rng, synth_speech)

    def noise_clip(self, key, num_samples, rng):
        return self._clip(key, self.noise, "noise", num_samples, rng, synth_noise)

    def rir(self, key, azimuth):
        if key == "plane":
            return synth_plane_rir(self.geometry, azimuth, self.sample_rate)
        if key.startswith("plane-rt"):
            rt60, _, seed = key[len("plane-rt"):].partition(":")
            tail = EchoTail(rt60=float(rt60), seed=int(seed or 0))
            return synth_plane_rir(self.geometry, azimuth, self.sample_rate, tail=tail)
        h = self._file(self.rirs, key, "rir")
        if h.shape[0] != self.geometry.num_mics:
            raise ValueError("rir %r has %d channels, array has %d" % (key, h.shape[0], self.geometry.num_mics))
        return h


# -- mixtures ------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureSpec:
    source_ids: tuple
    rir_ids: tuple
    doas: tuple
    noise_id: str = None
    noise_rir_id: str = None
    noise_doa: float = None
    iso_noise_id: str = None
    snr_db: float = None
    sdr_db: float = 0.0
    iso_snr_db: float = None  # drawn from the seed when None
    chunk_seconds: float = 4.0
    seed: int = 0

    @property
    def track(self):
        if len(self.source_ids) == 1:
            return TrackLabel.SE
        return TrackLabel.NSS if self.noise_id else TrackLabel.CSS

    def validate(self):
        n = len(self.source_ids)
        if n not in (1, 2) or len(self.rir_ids) != n or len(self.doas) != n:
            raise ValueError("need 1 or 2 sources with matching rir ids and doas")
        dirs = list(self.doas) + ([self.noise_doa] if self.noise_id else [])
        for i in range(len(dirs)):
            for j in range(i):
                if angular_distance(dirs[i], dirs[j]) < MIN_SEPARATION_DEG:
                    raise ValueError("sources at %.1f and %.1f deg are closer than %.0f deg"
                                     % (dirs[j], dirs[i], MIN_SEPARATION_DEG))
        if self.noise_id and (self.snr_db is None or self.noise_doa is None):
            raise ValueError("directional noise needs snr_db and noise_doa")
        if self.chunk_seconds <= 0:
            raise ValueError("chunk_seconds must be positive")


@dataclass
class SimResult:
    mixture: Waveform  # (M, L)
    references: np.ndarray  # (C, L) channel-0 reverberant images
    early: np.ndarray  # (C, L) channel-0 early-reverberation images
    spec: MixtureSpec
    measured: dict  # realised SNR/SDR values in dB

    @property
    def track(self):
        return self.spec.track

    def targets(self, dereverb):
        return self.early if dereverb else self.references


def simulate(spec, corpus):
    """Render a :class:`MixtureSpec`; deterministic given ``spec.seed``."""
    spec.validate()
    rate = corpus.sample_rate
    L = int(round(spec.chunk_seconds * rate))
    rng = np.random.default_rng(spec.seed)
    images, early = [], []
    for sid, rid, doa in zip(spec.source_ids, spec.rir_ids, spec.doas):
        s = corpus.speech_clip(sid, L, rng)
        h = corpus.rir(rid, doa)
        images.append(convolve_rir(s, h))
        early.append(convolve_rir(s, early_part(h, rate)))
    measured = {}
    if len(images) == 2:
        g = gain_for_snr(signal_power(images[0][0]), signal_power(images[1][0]), spec.sdr_db)
        images[1] = images[1] * g
        early[1] = early[1] * g
        measured["sdr_db"] = snr_db(images[0][0], images[1][0])
    speech = np.sum(images, axis=0)
    mix = speech.copy()
    if spec.noise_id:
        n = convolve_rir(corpus.noise_clip(spec.noise_id, L, rng),
                         corpus.rir(spec.noise_rir_id or spec.rir_ids[0], spec.noise_doa))
        n *= gain_for_snr(signal_power(speech[0]), signal_power(n[0]), spec.snr_db)
        measured["snr_db"] = snr_db(speech[0], n[0])
        mix += n
    if spec.iso_noise_id:
        iso_target = spec.iso_snr_db if spec.iso_snr_db is not None else rng.uniform(*ISO_SNR_RANGE)
        iso = isotropic_noise(corpus, spec.iso_noise_id, L, rng)
        iso *= gain_for_snr(signal_power(speech[0]), signal_power(iso[0]), iso_target)
        measured["iso_snr_db"] = snr_db(speech[0], iso[0])
        measured["iso_target_db"] = float(iso_target)
        mix += iso
    refs = np.stack([im[0] for im in images])
    early_refs = np.stack([e[0] for e in early])
    return SimResult(Waveform(mix, rate), refs, early_refs, spec, measured)


def isotropic_noise(corpus, noise_id, num_samples, rng, directions=ISO_DIRECTIONS):
    """Diffuse-field approximation: independent noise from evenly spaced plane waves."""
    base = int(rng.integers(0, 2 ** 31))
    out = np.zeros((corpus.geometry.num_mics, num_samples))
    for k, az in enumerate(np.arange(directions) * 360.0 / directions):
        if noise_id.startswith("synth:"):
            n = synth_noise(base + k, num_samples, corpus.sample_rate)
        else:
            n = corpus.noise_clip(noise_id, num_samples, rng)
        out += convolve_rir(n, synth_plane_rir(corpus.geometry, az, corpus.sample_rate))
    return out


def simulate_many(specs, corpus, workers=1):
    """Render specs in order; each spec owns its generator, so results do not depend on ``workers``."""
    if workers <= 1:
        return [simulate(s, corpus) for s in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: simulate(s, corpus), specs))


# -- staged SNR curriculum ---------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    first_epoch: int
    last_epoch: int
    se_snr: tuple
    css_sdr: tuple = None  # None: CSS chunks are not drawn
    nss_snr: tuple = None  # None: NSS chunks are not drawn
    nss_sdr: tuple = None

    @property
    def tracks(self):
        out = [TrackLabel.SE]
        if self.css_sdr is not None:
            out.append(TrackLabel.CSS)
        if self.nss_snr is not None:
            out.append(TrackLabel.NSS)
        return out


TABLE_STAGES = (
    Stage(1, 5, (5.0, 10.0), css_sdr=(-2.0, 2.0)),
    Stage(6, 10, (0.0, 10.0), nss_snr=(15.0, 20.0), nss_sdr=(-2.0, 2.0)),
    Stage(11, 15, (-2.0, 10.0), nss_snr=(10.0, 20.0), nss_sdr=(-4.0, 4.0)),
    Stage(16, 20, (-5.0, 10.0), nss_snr=(5.0, 20.0), nss_sdr=(-5.0, 5.0)),
)


@dataclass(frozen=True)
class StageSchedule:
    stages: tuple = TABLE_STAGES

    @property
    def num_epochs(self):
        return self.stages[-1].last_epoch

    def stage(self, epoch):
        for s in self.stages:
            if s.first_epoch <= epoch <= s.last_epoch:
                return s
        raise ValueError("epoch %r outside 1..%d" % (epoch, self.num_epochs))

    @classmethod
    def fixed(cls, num_epochs=20):
        """Every epoch uses the final stage (the curriculum ablation)."""
        last = TABLE_STAGES[-1]
        return cls((replace(last, first_epoch=1, last_epoch=num_epochs),))


@dataclass(frozen=True)
class ChunkDraw:
    track: TrackLabel
    snr_db: float = None
    sdr_db: float = None


def _draw_for(track, stage, rng):
    if track is TrackLabel.SE:
        return ChunkDraw(track, snr_db=float(rng.uniform(*stage.se_snr)))
    if track is TrackLabel.CSS:
        return ChunkDraw(track, sdr_db=float(rng.uniform(*stage.css_sdr)))
    return ChunkDraw(track, snr_db=float(rng.uniform(*stage.nss_snr)), sdr_db=float(rng.uniform(*stage.nss_sdr)))


def sample_stage(epoch, schedule, rng):
    """One chunk draw: the two active tracks are equally likely, levels uniform in range."""
    stage = schedule.stage(epoch)
    tracks = stage.tracks
    return _draw_for(tracks[int(rng.integers(len(tracks)))], stage, rng)


def plan_epoch(epoch, schedule, num_chunks, rng):
    """Exactly balanced track mix for one epoch, in shuffled order."""
    stage = schedule.stage(epoch)
    tracks = stage.tracks
    order = [tracks[i % len(tracks)] for i in range(num_chunks)]
    rng.shuffle(order)
    return [_draw_for(t, stage, rng) for t in order]


def draw_spec(draw, corpus, rng, chunk_seconds=4.0, rir_id="plane", iso_noise=True,
              speech_pool=None, noise_pool=None):
    """Turn a :class:`ChunkDraw` into a concrete :class:`MixtureSpec`.

    Directions are redrawn until every pair is at least 20 degrees apart.
    Without manifests the pools fall back to procedural ``synth:<n>`` ids.
    """
    n_src = draw.track.num_speakers
    speech_pool = speech_pool or corpus.speech_ids()
    noise_pool = noise_pool or corpus.noise_ids()
    if speech_pool:
        idx = rng.choice(len(speech_pool), size=n_src, replace=len(speech_pool) < n_src)
        sources = tuple(speech_pool[i] for i in idx)
    else:
        sources = tuple("synth:%d" % rng.integers(0, 2 ** 31) for _ in range(n_src))

    def pick_noise():
        if noise_pool:
            return noise_pool[int(rng.integers(len(noise_pool)))]
        return "synth:%d" % rng.integers(0, 2 ** 31)

    noisy = draw.track.noisy
    n_dirs = n_src + (1 if noisy else 0)
    while True:
        dirs = rng.uniform(0.0, 360.0, size=n_dirs)
        if all(angular_distance(dirs[i], dirs[j]) >= MIN_SEPARATION_DEG
               for i in range(n_dirs) for j in range(i)):
            break
    return MixtureSpec(
        source_ids=sources,
        rir_ids=(rir_id,) * n_src,
        doas=tuple(float(d) for d in dirs[:n_src]),
        noise_id=pick_noise() if noisy else None,
        noise_rir_id=rir_id if noisy else None,
        noise_doa=float(dirs[-1]) if noisy else None,
        iso_noise_id=pick_noise() if iso_noise else None,
        snr_db=draw.snr_db,
        sdr_db=draw.sdr_db if draw.sdr_db is not None else 0.0,
        chunk_seconds=chunk_seconds,
        seed=int(rng.integers(0, 2 ** 31)),
    )
