import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desnet.datasim import (ISO_SNR_RANGE, TABLE_STAGES, ChunkDraw, Corpus, EchoTail, ManifestEntry,
                            MixtureSpec, StageSchedule, convolve_rir, draw_spec, early_part,
                            gain_for_snr, plan_epoch, read_manifest, sample_stage, signal_power,
                            simulate, simulate_many, snr_db, synth_plane_rir, write_manifest)
from desnet.fileio import write_wav
from desnet.geometry import ArrayGeometry
from desnet.losses import TrackLabel
from desnet.stft import Waveform

RATE = 8000


def naive_convolve(s, h):
    out = np.zeros(s.size)
    for n in range(s.size):
        for k in range(min(h.size, n + 1)):
            out[n] += h[k] * s[n - k]
    return out


# -- primitives ----------------------------------------------------------------------

def test_convolve_impulse_and_shift():
    s = np.random.default_rng(0).standard_normal(50)
    h = np.zeros((3, 8))
    h[:, 0] = 1.0
    np.testing.assert_allclose(convolve_rir(s, h, RATE), np.tile(s, (3, 1)), atol=1e-12)
    h = np.zeros((1, 8))
    h[0, 5] = 1.0
    out = convolve_rir(s, h, RATE)[0]
    np.testing.assert_allclose(out[5:], s[:-5], atol=1e-12)
    np.testing.assert_allclose(out[:5], 0.0, atol=1e-12)


def test_convolve_matches_naive_loop():
    rng = np.random.default_rng(1)
    s, h = rng.standard_normal(64), rng.standard_normal((2, 13))
    out = convolve_rir(Waveform(s, RATE), h, RATE)
    assert out.samples.shape == (2, 64)
    for m in range(2):
        np.testing.assert_allclose(out.samples[m], naive_convolve(s, h[m]), atol=1e-12)


def test_convolve_rate_mismatch():
    with pytest.raises(ValueError):
        convolve_rir(Waveform(np.ones(10), 8000), np.ones((1, 2)), rir_rate=16000)


def test_early_part_cases():
    h = np.zeros((2, 2000))
    h[:, 10] = 1.0
    np.testing.assert_array_equal(early_part(h, RATE), h)
    rng = np.random.default_rng(2)
    h = rng.uniform(-0.1, 0.1, (2, 2000))
    h[0, 30], h[1, 40] = 1.0, -1.0
    d = early_part(h, RATE, boundary_ms=0.0)
    assert np.all(d[0, 31:] == 0) and np.all(d[1, 41:] == 0)
    np.testing.assert_array_equal(d[0, :31], h[0, :31])
    # direct path plus an echo 80 ms later: the echo falls past the 50 ms boundary
    h = np.zeros((1, 2000))
    h[0, 20], h[0, 20 + 640] = 1.0, 0.5
    e = early_part(h, RATE)
    assert e[0, 20] == 1.0 and np.count_nonzero(e) == 1


def test_gain_for_snr_cases():
    assert gain_for_snr(1.0, 1.0, 0.0) == 1.0
    assert gain_for_snr(1.0, 1.0, 20.0) == pytest.approx(0.1, abs=1e-15)
    rng = np.random.default_rng(3)
    s, n = rng.standard_normal(1000), rng.standard_normal(1000) * 3
    g = gain_for_snr(signal_power(s), signal_power(n), 7.5)
    assert snr_db(s, g * n) == pytest.approx(7.5, abs=1e-9)
    with pytest.raises(ValueError):
        gain_for_snr(0.0, 1.0, 0.0)


def test_plane_rir_broadside_and_endfire():
    pair = ArrayGeometry(np.array([[-0.05, 0, 0], [0.05, 0, 0]]))
    h = synth_plane_rir(pair, 90.0, 16000)
    np.testing.assert_allclose(h[0], h[1], atol=1e-15)
    h = synth_plane_rir(pair, 0.0, 16000)
    # inter-channel delay from the cross-spectrum phase slope at low frequency
    N = 4096
    H = np.fft.rfft(h, N)
    k = np.arange(1, 200)
    lag = np.angle(H[1, k] * np.conj(H[0, k])) / (2 * np.pi * k / N)
    np.testing.assert_allclose(lag, 0.1 / pair.speed_of_sound * 16000, atol=1e-3)
    assert np.mean(lag) == pytest.approx(4.66, abs=0.01)


def test_plane_rir_tail_is_deterministic_and_decays():
    tail = EchoTail(rt60=0.2, seed=4)
    a = synth_plane_rir(ArrayGeometry(), 30.0, RATE, tail=tail)
    b = synth_plane_rir(ArrayGeometry(), 30.0, RATE, tail=tail)
    np.testing.assert_array_equal(a, b)
    half = a.shape[1] // 2
    assert np.sum(a[:, half:] ** 2) < 0.05 * np.sum(a[:, 64:half] ** 2)


# -- manifests and corpus ------------------------------------------------------------------

def test_manifest_round_trip_and_errors(tmp_path):
    p = tmp_path / "m.txt"
    write_manifest(p, [ManifestEntry("a", "a.wav", 1.5, {"spk": "7"}), ManifestEntry("b", "/x/b.wav", 2.0)])
    got = read_manifest(p)
    assert [e.id for e in got] == ["a", "b"]
    assert got[0].path == str(tmp_path / "a.wav") and got[0].attrs == {"spk": "7"}
    assert got[1].path == "/x/b.wav" and got[1].duration == 2.0
    p.write_text("a a.wav 1\n# comment\n\nbad.wav\n")
    with pytest.raises(ValueError, match=":4:"):
        read_manifest(p)
    p.write_text("a a.wav 1\na b.wav 2\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_manifest(p)


def _impulse_corpus(tmp_path, speech):
    geom = ArrayGeometry()
    rir = np.zeros((4, 16))
    rir[:, 0] = 1.0
    write_wav(str(tmp_path / "imp.wav"), Waveform(rir, RATE))
    write_wav(str(tmp_path / "s.wav"), Waveform(speech, RATE))
    return Corpus(RATE, geom, speech=[ManifestEntry("s", str(tmp_path / "s.wav"), 1.0)],
                  rirs=[ManifestEntry("imp", str(tmp_path / "imp.wav"), 0.002)])


def test_single_source_impulse_rir_reproduces_source(tmp_path):
    speech = np.random.default_rng(5).uniform(-0.5, 0.5, RATE).astype(np.float32).astype(np.float64)
    corpus = _impulse_corpus(tmp_path, speech)
    res = simulate(MixtureSpec(("s",), ("imp",), (0.0,), chunk_seconds=1.0), corpus)
    assert res.track is TrackLabel.SE
    np.testing.assert_allclose(res.mixture.samples, np.tile(speech, (4, 1)), atol=1e-12)
    np.testing.assert_allclose(res.references[0], speech, atol=1e-12)
    np.testing.assert_allclose(res.early[0], speech, atol=1e-12)


def test_corpus_rejects_wrong_rate_and_unknown_id(tmp_path):
    write_wav(str(tmp_path / "s.wav"), Waveform(np.zeros(100), 16000))
    c = Corpus(RATE, speech=[ManifestEntry("s", str(tmp_path / "s.wav"), 0.1)])
    with pytest.raises(ValueError, match="16000"):
        c.speech_clip("s", 50, np.random.default_rng(0))
    with pytest.raises(KeyError):
        c.speech_clip("nope", 50, np.random.default_rng(0))


# -- simulation ---------------------------------------------------------------------------

def _nss_spec(seed=0, sdr=0.0, snr=5.0):
    return MixtureSpec(("synth:1", "synth:2"), ("plane", "plane"), (10.0, 100.0), noise_id="synth:3",
                       noise_rir_id="plane", noise_doa=200.0, iso_noise_id="synth:4", snr_db=snr,
                       sdr_db=sdr, chunk_seconds=0.5, seed=seed)


def test_two_sources_at_zero_sdr_have_equal_power():
    res = simulate(MixtureSpec(("synth:1", "synth:2"), ("plane", "plane"), (0.0, 90.0),
                               chunk_seconds=0.5), Corpus(RATE))
    assert res.track is TrackLabel.CSS and res.references.shape == (2, 4000)
    assert 10 * np.log10(signal_power(res.references[0]) / signal_power(res.references[1])) == \
        pytest.approx(0.0, abs=1e-9)


def test_calibration_and_arity():
    res = simulate(_nss_spec(sdr=-3.0, snr=2.5), Corpus(RATE))
    assert res.track is TrackLabel.NSS and res.references.shape[0] == 2 and res.early.shape[0] == 2
    assert res.measured["sdr_db"] == pytest.approx(-3.0, abs=1e-6)
    assert res.measured["snr_db"] == pytest.approx(2.5, abs=1e-6)
    assert ISO_SNR_RANGE[0] <= res.measured["iso_target_db"] <= ISO_SNR_RANGE[1]
    assert res.measured["iso_snr_db"] == pytest.approx(res.measured["iso_target_db"], abs=1e-6)


# Recorded at first build from _nss_spec(seed=11).
MIX_SNAPSHOT = [311.3023413845028, -2.870693244673325, -7.889296701207912]


def test_determinism_snapshot():
    corpus = Corpus(RATE)
    a, b = simulate(_nss_spec(seed=11), corpus), simulate(_nss_spec(seed=11), corpus)
    np.testing.assert_array_equal(a.mixture.samples, b.mixture.samples)
    np.testing.assert_array_equal(a.early, b.early)
    m = a.mixture.samples
    np.testing.assert_allclose([m.sum(), m[2, 1234], a.references.sum()], MIX_SNAPSHOT, rtol=1e-9)
    c = simulate(_nss_spec(seed=12), corpus)
    assert not np.array_equal(c.mixture.samples, m)


def test_simulate_many_independent_of_workers():
    specs = [_nss_spec(seed=s) for s in range(3)]
    one, three = simulate_many(specs, Corpus(RATE), 1), simulate_many(specs, Corpus(RATE), 3)
    for x, y in zip(one, three):
        np.testing.assert_array_equal(x.mixture.samples, y.mixture.samples)


def test_separation_constraint():
    with pytest.raises(ValueError, match="closer than 20"):
        MixtureSpec(("a", "b"), ("plane", "plane"), (355.0, 10.0)).validate()
    with pytest.raises(ValueError):
        MixtureSpec(("a",), ("plane",), (0.0,), noise_id="n", noise_doa=15.0, snr_db=0.0).validate()
    with pytest.raises(ValueError):
        MixtureSpec(("a", "b", "c"), ("p",) * 3, (0.0, 90.0, 180.0)).validate()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(list(TrackLabel)))
def test_draw_spec_respects_constraints(seed, track):
    rng = np.random.default_rng(seed)
    spec = draw_spec(ChunkDraw(track, snr_db=3.0, sdr_db=-1.0), Corpus(RATE), rng, chunk_seconds=0.25)
    spec.validate()
    assert spec.track is track
    assert len(spec.source_ids) == track.num_speakers


# -- curriculum ---------------------------------------------------------------------------

def test_table_one_rows():
    sched = StageSchedule()
    s = sched.stage(3)
    assert (s.se_snr, s.css_sdr, s.nss_snr) == ((5.0, 10.0), (-2.0, 2.0), None)
    s = sched.stage(8)
    assert (s.se_snr, s.css_sdr, s.nss_snr, s.nss_sdr) == ((0.0, 10.0), None, (15.0, 20.0), (-2.0, 2.0))
    s = sched.stage(12)
    assert (s.se_snr, s.nss_snr, s.nss_sdr) == ((-2.0, 10.0), (10.0, 20.0), (-4.0, 4.0))
    s = sched.stage(18)
    assert (s.se_snr, s.nss_snr, s.nss_sdr) == ((-5.0, 10.0), (5.0, 20.0), (-5.0, 5.0))
    for bad in (0, 21):
        with pytest.raises(ValueError):
            sched.stage(bad)


def test_fixed_schedule_uses_last_row():
    sched = StageSchedule.fixed(20)
    for epoch in (1, 10, 20):
        assert sched.stage(epoch).se_snr == TABLE_STAGES[-1].se_snr
        assert sched.stage(epoch).nss_snr == TABLE_STAGES[-1].nss_snr


@pytest.mark.parametrize("epoch", range(1, 21))
def test_sample_stage_draws_in_range(epoch):
    stage = StageSchedule().stage(epoch)
    rng = np.random.default_rng(epoch)
    counts = {}
    for _ in range(400):
        d = sample_stage(epoch, StageSchedule(), rng)
        counts[d.track] = counts.get(d.track, 0) + 1
        assert d.track in stage.tracks
        if d.track is TrackLabel.SE:
            assert stage.se_snr[0] <= d.snr_db <= stage.se_snr[1] and d.sdr_db is None
        elif d.track is TrackLabel.CSS:
            assert stage.css_sdr[0] <= d.sdr_db <= stage.css_sdr[1] and d.snr_db is None
        else:
            assert stage.nss_snr[0] <= d.snr_db <= stage.nss_snr[1]
            assert stage.nss_sdr[0] <= d.sdr_db <= stage.nss_sdr[1]
    assert set(counts) == set(stage.tracks)
    assert abs(counts[TrackLabel.SE] - 200) < 50


def test_plan_epoch_is_balanced():
    draws = plan_epoch(7, StageSchedule(), 10, np.random.default_rng(0))
    assert sum(d.track is TrackLabel.SE for d in draws) == 5
    assert sum(d.track is TrackLabel.NSS for d in draws) == 5
