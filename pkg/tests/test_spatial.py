import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from desnet import autodiff as ad
from desnet.geometry import ArrayGeometry, DoaGrid, bin_frequencies, steering_vector
from desnet.spatial import (DEFAULT_PAIRS, angle_features, angle_features_tensor, beamform,
                            beamform_tensor, design_das_bank, observed_ipd, reference_table)

GEOM = ArrayGeometry()
RATE, F = 16000, 257
BEAMS = DoaGrid.uniform(18)
ANGLES = DoaGrid.uniform(36)

# Delay-and-sum weights for the default array at 0 deg and 4 kHz, from a
# standalone scalar script using raw coordinates (cos/sin of each delay / 4).
DAS_0DEG_4KHZ = np.array([-0.21669691449163894 - 0.12466935168598302j, 0.25 + 0j,
                          -0.21669691449163894 + 0.12466935168598302j, 0.25 + 0j])


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def plane_wave(geom, azimuth, T=6, seed=0, num_bins=F, rate=RATE):
    S = cplx(np.random.default_rng(seed), T, num_bins)
    d = steering_vector(geom, azimuth, bin_frequencies(num_bins, rate))  # (F, M)
    return d.T[:, None, :] * S[None], S


def test_das_weights_at_dc():
    bank = design_das_bank(GEOM, BEAMS, F, RATE)
    assert bank.weights.shape == (18, F, 4)
    np.testing.assert_array_equal(bank.weights[:, 0], 0.25)


def test_das_matches_scalar_oracle():
    bank = design_das_bank(GEOM, DoaGrid([0.0]), F, RATE)
    assert bin_frequencies(F, RATE)[128] == 4000.0
    np.testing.assert_allclose(bank.weights[0, 128], DAS_0DEG_4KHZ, atol=1e-12)


def test_distortionless():
    bank = design_das_bank(GEOM, BEAMS, F, RATE)
    d = steering_vector(GEOM, BEAMS.azimuths, bin_frequencies(F, RATE))  # (N, F, M)
    resp = np.einsum("nfm,nfm->nf", bank.weights.conj(), d)
    assert np.max(np.abs(resp - 1.0)) < 1e-10


def test_beamform_zero_and_plane_wave():
    bank = design_das_bank(GEOM, BEAMS, F, RATE)
    assert np.all(beamform(np.zeros((4, 3, F), complex), bank) == 0)
    Y, S = plane_wave(GEOM, BEAMS.azimuths[5])
    np.testing.assert_allclose(beamform(Y, bank)[5], S, atol=1e-12)


def test_beamform_matches_naive_loop():
    rng = np.random.default_rng(1)
    bank = design_das_bank(GEOM, DoaGrid.uniform(3), 5, 8000)
    Y = cplx(rng, 4, 4, 5)
    out = beamform(Y, bank)
    for i in range(3):
        for t in range(4):
            for f in range(5):
                ref = sum(np.conj(bank.weights[i, f, m]) * Y[m, t, f] for m in range(4))
                assert abs(out[i, t, f] - ref) < 1e-10


def test_beamform_shape_mismatch():
    bank = design_das_bank(GEOM, BEAMS, F, RATE)
    with pytest.raises(ValueError):
        beamform(np.zeros((3, 2, F), complex), bank)


def test_observed_ipd_cases():
    rng = np.random.default_rng(2)
    Y = cplx(rng, 2, 5, 7)
    assert np.all(observed_ipd(np.stack([Y[0], Y[0]]), (0, 1)) == 0)
    o = observed_ipd(np.stack([Y[0], 1j * Y[0]]), (0, 1))
    np.testing.assert_allclose(np.exp(1j * o), -1j, atol=1e-12)
    o = observed_ipd(Y, (1, 0))
    for t in range(5):
        for f in range(7):
            assert o[t, f] == pytest.approx(np.angle(Y[1, t, f]) - np.angle(Y[0, t, f]), abs=1e-15)
    with pytest.raises(ValueError):
        observed_ipd(Y, (0, 2))


def test_angle_feature_plane_wave_is_one():
    az = ANGLES.azimuths[7]
    Y, _ = plane_wave(GEOM, az)
    A = angle_features(Y, GEOM, ANGLES, DEFAULT_PAIRS, RATE).features
    assert A.shape == (36, 6, F)
    np.testing.assert_allclose(A[7], 1.0, atol=1e-9)


def test_angle_feature_pi_offset_is_minus_one():
    az = ANGLES.azimuths[3]
    Y, _ = plane_wave(GEOM, az)
    # flip the sign of mics 0 and 3 only: pairs (0,1), (0,2), (1,3) all shift by pi
    Y[0] *= -1
    Y[3] *= -1
    A = angle_features(Y, GEOM, ANGLES, DEFAULT_PAIRS, RATE).features
    np.testing.assert_allclose(A[3], -1.0, atol=1e-9)


def test_single_pair_cosine_oracle():
    rng = np.random.default_rng(3)
    Y = cplx(rng, 4, 3, 9)
    A = angle_features(Y, GEOM, ANGLES, [(2, 1)], 8000).features
    ref = reference_table(GEOM, ANGLES, [(2, 1)], 9, 8000)
    for n in (0, 11, 35):
        for t in range(3):
            for f in range(9):
                o = np.angle(Y[2, t, f]) - np.angle(Y[1, t, f])
                assert A[n, t, f] == pytest.approx(np.cos(o - ref[n, 0, f]), abs=1e-12)


def test_empty_pairs_rejected():
    with pytest.raises(ValueError):
        angle_features(np.ones((4, 2, 5)), GEOM, ANGLES, [], 8000)


def test_reference_table_is_cached():
    a = reference_table(GEOM, ANGLES, DEFAULT_PAIRS, F, RATE)
    b = reference_table(GEOM, ANGLES, [list(p) for p in DEFAULT_PAIRS], F, RATE)
    assert a is b and not a.flags.writeable


def test_tensor_versions_match_numpy():
    rng = np.random.default_rng(4)
    Y = cplx(rng, 2, 4, 3, 17)
    bank = design_das_bank(GEOM, BEAMS, 17, 8000)
    br, bi = beamform_tensor(ad.Tensor(Y.real), ad.Tensor(Y.imag), bank)
    ref = reference_table(GEOM, ANGLES, DEFAULT_PAIRS, 17, 8000)
    A = angle_features_tensor(ad.Tensor(Y.real), ad.Tensor(Y.imag), ref, DEFAULT_PAIRS)
    for b in range(2):
        np.testing.assert_allclose(br.data[b] + 1j * bi.data[b], beamform(Y[b], bank), atol=1e-12)
        np.testing.assert_allclose(A.data[b], angle_features(Y[b], GEOM, ANGLES, DEFAULT_PAIRS, 8000).features,
                                   atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 359.99), st.integers(0, 1000))
def test_argmax_is_nearest_grid_point(az, seed):
    # stay clear of the exact midpoints between grid directions, where two are tied
    assume(abs((az % 10.0) - 5.0) > 0.25)
    Y, _ = plane_wave(GEOM, az, T=3, seed=seed)
    A = angle_features(Y, GEOM, ANGLES, DEFAULT_PAIRS, RATE).features
    assert np.all((A >= -1) & (A <= 1))
    assert int(np.argmax(A.mean(axis=(1, 2)))) == ANGLES.nearest(az)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 35), st.floats(0.0, 359.99))
def test_rotation_equivariance(k, az):
    phi = 10.0 * k
    c, s = np.cos(np.deg2rad(phi)), np.sin(np.deg2rad(phi))
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    rotated = ArrayGeometry(GEOM.mic_positions @ R.T)
    A = angle_features(plane_wave(GEOM, az, T=2, num_bins=33)[0], GEOM, ANGLES, DEFAULT_PAIRS, 8000).features
    B = angle_features(plane_wave(rotated, (az + phi) % 360.0, T=2, num_bins=33)[0], rotated, ANGLES,
                       DEFAULT_PAIRS, 8000).features
    np.testing.assert_allclose(np.roll(A, k, axis=0), B, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-2, 2), st.floats(-2, 2))
def test_beamform_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    bank = design_das_bank(GEOM, BEAMS, 9, 8000)
    X, Y = cplx(rng, 4, 3, 9), cplx(rng, 4, 3, 9)
    np.testing.assert_allclose(beamform(a * X + b * Y, bank), a * beamform(X, bank) + b * beamform(Y, bank),
                               atol=1e-10)
