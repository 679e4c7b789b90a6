import numpy as np
import pytest

from desnet.config import ConfigError, load_config, parse_config
from desnet.fileio import read_dump, read_spectrogram, read_wav, write_dump, write_spectrogram, write_wav
from desnet.stft import Waveform, stft
from desnet.training import model_config_dict, model_config_from_dict

FULL = """
# toy setup
[geometry]
mic0 = 0.05 0 0
mic1 = 0, 0.05, 0
mic2 = -0.05 0 0
speed_of_sound = 340
[stft]
sample_rate = 8000
fft_size = 128   # short frames
hop = 64
[wpe]
taps = 6
psd_context = 2
[network]
encoder_channels = 4 8
recurrent_hidden = 16
projection_dim = none
extract_hidden = 12
[attention]
num_angles = 12
pairs = 0-1, 1-2
[datasim]
chunk_seconds = 0.5
[training]
epochs = 3
staged_snr = off
category = dereverb
"""


def test_full_config_builds_objects():
    cfg = parse_config(FULL)
    geom = cfg.geometry()
    assert geom.num_mics == 3 and geom.speed_of_sound == 340.0
    np.testing.assert_allclose(geom.mic_positions[1], [0, 0.05, 0])
    assert cfg.wpe_config().taps == 6 and cfg.wpe_config().psd_context == 2
    mc = cfg.model_config()
    assert mc.fft_size == 128 and mc.dccrn.encoder_channels == (4, 8) and mc.dccrn.projection_dim is None
    assert mc.pairs == ((0, 1), (1, 2)) and mc.num_angles == 12 and mc.extract_hidden == 12
    tc = cfg.train_config(epochs=5)
    assert tc.epochs == 5 and not tc.staged_snr and tc.dereverb and tc.chunk_seconds == 0.5


@pytest.mark.parametrize("text,line,msg", [
    ("[stft]\nfft_size = 64\nwindow = hann\n", 3, "unknown key"),
    ("[stft]\n\n[nope]\n", 3, "unknown section"),
    ("[stft]\nhop = many\n", 2, "bad value"),
    ("hop = 3\n", 1, "outside"),
    ("[stft]\nhop 3\n", 2, "key = value"),
    ("[stft]\nhop = 3\nhop = 4\n", 3, "duplicate"),
    ("[geometry]\nmic0 = 1 2\n", 2, "three coordinates"),
    ("[stft\n", 1, "malformed"),
    ("[training]\nsymphonic = maybe\n", 2, "boolean"),
])
def test_errors_carry_line_numbers(text, line, msg):
    with pytest.raises(ConfigError, match=msg) as info:
        parse_config(text, "x.cfg")
    assert info.value.lineno == line and str(info.value).startswith("x.cfg:%d:" % line)


def test_load_config_from_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("[wpe]\niterations = 2\n")
    cfg = load_config(str(p))
    assert cfg.path == str(p) and cfg.wpe_config().iterations == 2
    assert parse_config("").geometry().num_mics == 4


def test_model_config_dict_round_trip():
    mc = parse_config(FULL).model_config()
    assert model_config_from_dict(model_config_dict(mc)) == mc


# -- files ----------------------------------------------------------------------------

def test_wav_float_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, (3, 500)).astype(np.float32).astype(np.float64)
    write_wav(str(tmp_path / "a.wav"), Waveform(x, 16000))
    w = read_wav(str(tmp_path / "a.wav"))
    assert w.sample_rate == 16000
    np.testing.assert_array_equal(w.samples, x)


def test_wav_pcm16_quantises(tmp_path):
    x = np.random.default_rng(1).uniform(-0.9, 0.9, 400)
    write_wav(str(tmp_path / "b.wav"), Waveform(x, 8000), subtype="pcm16")
    w = read_wav(str(tmp_path / "b.wav"))
    assert w.num_channels == 1
    assert np.max(np.abs(w.samples[0] - x)) <= 0.5 / 32768 + 1e-12
    with pytest.raises(ValueError):
        write_wav(str(tmp_path / "c.wav"), Waveform(x, 8000), subtype="mp3")


def test_dump_header_and_payload(tmp_path):
    rng = np.random.default_rng(2)
    real = rng.standard_normal((5, 4, 9)).astype(np.float32)
    write_dump(str(tmp_path / "r.bin"), real, 64, 16, 8000)
    raw = (tmp_path / "r.bin").read_bytes()
    assert raw.split(b"\n", 1)[0] == b"DESNET r 5 4 9 64 16 8000"
    arr, meta = read_dump(str(tmp_path / "r.bin"))
    np.testing.assert_array_equal(arr, real)
    assert meta == {"hop": 64, "fft_size": 16, "rate": 8000}
    spec = stft(Waveform(rng.standard_normal((2, 300)), 8000), 32, 16)
    write_spectrogram(str(tmp_path / "s.bin"), spec)
    back = read_spectrogram(str(tmp_path / "s.bin"))
    assert back.bins.shape == spec.bins.shape and back.frame_shift == 16
    np.testing.assert_allclose(back.bins, spec.bins, rtol=1e-6, atol=1e-5)
    (tmp_path / "bad.bin").write_bytes(b"NOPE\n")
    with pytest.raises(ValueError):
        read_dump(str(tmp_path / "bad.bin"))
    with pytest.raises(ValueError):
        write_dump(str(tmp_path / "x.bin"), np.zeros((2, 2)), 1, 1, 1)
