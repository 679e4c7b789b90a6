"""WAV files and raw spectrogram/feature dumps.

Dump layout: one ASCII header line of 8 whitespace-separated fields

    DESNET <kind> <d0> <d1> <d2> <hop> <fft_size> <rate>\\n

followed by little-endian float32 data in C order.  ``kind`` is ``c`` for
complex data (``(re, im)`` interleaved per element) and ``r`` for real data.
Spectrograms use ``(d0, d1, d2) = (M, T, F)``; angle features ``(N_A, T, F)``;
beams ``(N_B, T, F)``.
"""

import numpy as np
from scipy.io import wavfile

from desnet.stft import Spectrogram, Waveform

MAGIC = "DESNET"


def read_wav(path):
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return Waveform(x.T, int(rate))


def write_wav(path, wave, subtype="float"):
    """Write ``wave`` as 32-bit IEEE float (default) or 16-bit PCM (``"pcm16"``)."""
    x = np.asarray(wave.samples).T
    if subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif subtype == "float":
        data = x.astype("<f4")
    else:
        raise ValueError("unknown wav subtype %r" % subtype)
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(path, int(wave.sample_rate), data)


def write_dump(path, array, hop, fft_size, rate):
    array = np.asarray(array)
    if array.ndim != 3:
        raise ValueError("dump arrays must be 3-D, got shape %s" % (array.shape,))
    kind = "c" if np.iscomplexobj(array) else "r"
    header = "%s %s %d %d %d %d %d %d\n" % ((MAGIC, kind) + array.shape + (hop, fft_size, rate))
    if kind == "c":
        payload = np.stack([array.real, array.imag], axis=-1).astype("<f4")
    else:
        payload = array.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes())


def read_dump(path):
    """Return ``(array, meta)`` where ``meta`` holds hop, fft_size and rate."""
    with open(path, "rb") as fh:
        fields = fh.readline().decode("ascii").split()
        raw = fh.read()
    if len(fields) != 8 or fields[0] != MAGIC or fields[1] not in ("c", "r"):
        raise ValueError("%s: not a desnet dump (header %r)" % (path, fields))
    shape = tuple(int(v) for v in fields[2:5])
    meta = {"hop": int(fields[5]), "fft_size": int(fields[6]), "rate": int(fields[7])}
    data = np.frombuffer(raw, dtype="<f4")
    if fields[1] == "c":
        data = data.reshape(shape + (2,))
        arr = data[..., 0].astype(np.complex64)
        arr.imag = data[..., 1]
    else:
        arr = data.reshape(shape).copy()
    return arr, meta


def write_spectrogram(path, spec):
    write_dump(path, spec.bins, spec.frame_shift, spec.fft_size, spec.sample_rate)


def read_spectrogram(path):
    arr, meta = read_dump(path)
    return Spectrogram(arr, meta["hop"], meta["fft_size"], meta["rate"])
