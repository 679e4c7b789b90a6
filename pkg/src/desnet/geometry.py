"""Microphone-array geometry, far-field steering vectors and DoA grids.

Azimuth convention: degrees, counter-clockwise from the +x axis, in the
z = 0 plane (elevation fixed at 0).  Delays are referenced to the array
centroid.
"""

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 343.0


def circular_positions(num_mics=4, radius=0.05):
    ang = 2.0 * np.pi * np.arange(num_mics) / num_mics
    return np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(num_mics)], axis=1)


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    mic_positions: np.ndarray = field(default_factory=circular_positions)
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.array(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("mic_positions must be an (M, 3) array, got shape %s" % (pos.shape,))
        if pos.shape[0] < 2:
            raise ValueError("need at least 2 microphones, got %d" % pos.shape[0])
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic positions must be finite")
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(d[np.triu_indices(len(pos), 1)] == 0.0):
            raise ValueError("mic positions must be pairwise distinct")
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @property
    def num_mics(self):
        return self.mic_positions.shape[0]

    @property
    def centroid(self):
        return self.mic_positions.mean(axis=0)

    def delays(self, azimuth):
        """Far-field arrival delay (seconds) of each mic relative to the centroid.

        ``azimuth`` may be a scalar or an array; the mic axis is last.
        """
        az = np.deg2rad(np.asarray(azimuth, dtype=np.float64))
        # unit vector pointing from the array towards the source
        u = np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=-1)
        rel = self.mic_positions - self.centroid
        # mics closer to the source receive the wavefront earlier
        return -(u @ rel.T) / self.speed_of_sound

    @classmethod
    def from_config(cls, section):
        """Build from a config mapping with ``mic<i> = x y z`` entries (meters)."""
        mics = []
        for key in sorted((k for k in section if k.startswith("mic")), key=lambda k: int(k[3:])):
            mics.append([float(v) for v in str(section[key]).replace(",", " ").split()])
        kwargs = {}
        if "speed_of_sound" in section:
            kwargs["speed_of_sound"] = float(section["speed_of_sound"])
        if not mics:
            return cls(**kwargs)
        return cls(np.array(mics), **kwargs)


@dataclass(frozen=True, eq=False)
class DoaGrid:
    azimuths: np.ndarray

    def __post_init__(self):
        az = np.array(self.azimuths, dtype=np.float64).ravel()
        if az.size < 1:
            raise ValueError("DoA grid needs at least one direction")
        az.setflags(write=False)
        object.__setattr__(self, "azimuths", az)

    @classmethod
    def uniform(cls, n):
        return cls(np.arange(n) * (360.0 / n))

    def __len__(self):
        return self.azimuths.size

    def nearest(self, azimuth):
        """Index of the grid point closest (circularly) to ``azimuth``."""
        diff = (self.azimuths - azimuth + 180.0) % 360.0 - 180.0
        return int(np.argmin(np.abs(diff)))


def _check_finite(**kw):
    for name, v in kw.items():
        if not np.all(np.isfinite(np.asarray(v, dtype=np.float64))):
            raise ValueError("%s must be finite" % name)


def steering_vector(geom, azimuth, freq):
    """Unit-modulus far-field steering vector ``exp(-j 2 pi f tau_m)``.

    Broadcasts: ``azimuth`` shape ``A`` and ``freq`` shape ``B`` give an
    array of shape ``A + B + (M,)``.
    """
    _check_finite(azimuth=azimuth, freq=freq)
    az = np.asarray(azimuth, dtype=np.float64)
    f = np.asarray(freq, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("freq must be non-negative")
    tau = geom.delays(az)  # A + (M,)
    tau = tau.reshape(az.shape + (1,) * f.ndim + (geom.num_mics,))
    phase = -2.0 * np.pi * f[..., None] * tau
    return np.exp(1j * phase)


def wrap_phase(x):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _check_pair(geom, pair):
    m, n = pair
    M = geom.num_mics
    if not (0 <= m < M and 0 <= n < M) or m == n:
        raise ValueError("invalid mic pair %r for %d microphones" % (pair, M))


def reference_ipd(geom, azimuth, pair, freq):
    """Geometry-derived phase difference between mics ``pair = (m, n)``."""
    _check_pair(geom, pair)
    d = steering_vector(geom, azimuth, freq)
    m, n = pair
    return wrap_phase(np.angle(d[..., m]) - np.angle(d[..., n]))


def bin_frequencies(num_bins, sample_rate):
    """Center frequencies of the ``F`` one-sided STFT bins."""
    fft_size = 2 * (num_bins - 1)
    return np.arange(num_bins) * sample_rate / fft_size
