import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from desnet import autodiff as ad
from desnet.autodiff.gradcheck import check_gradients
from desnet.losses import (EPS, TrackLabel, _best_assignment, chunk_loss, chunk_loss_tensor,
                           pairwise_si_snr, pit_loss, si_snr, si_snr_tensor, symphonic_loss,
                           symphonic_loss_tensor)


def test_hand_computed_values():
    assert si_snr([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    assert si_snr([2.0, 0.0], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    # s = [3, 1], x = [1, 0]: alpha = 3, error [0, 1] -> 20 log10(3)
    assert si_snr([3.0, 1.0], [1.0, 0.0]) == pytest.approx(20 * np.log10(3.0), abs=1e-12)


def test_identical_signals_hit_the_ceiling():
    x = np.random.default_rng(0).standard_normal(1000)
    v = si_snr(x, x)
    assert np.isfinite(v) and v > 150
    assert v <= 20 * np.log10(np.linalg.norm(x) / EPS) + 1e-9


def test_zero_reference_and_length_errors():
    with pytest.raises(ValueError):
        si_snr([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        si_snr([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, 32, elements=st.floats(-1, 1)), st.integers(0, 10_000),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_scale_invariance(s, seed, beta, gamma):
    x = np.random.default_rng(seed).standard_normal(32)
    # invariance is exact only while both norms stay clear of the eps floor
    proj = (s @ x) / (x @ x) * x
    assume(min(np.linalg.norm(proj), np.linalg.norm(s - proj)) > 1e-4)
    base = si_snr(s, x)
    assert si_snr(beta * s, x) == pytest.approx(base, abs=1e-9)
    assert si_snr(s, gamma * x) == pytest.approx(base, abs=1e-9)


def test_tensor_si_snr_matches_and_gradient():
    rng = np.random.default_rng(1)
    s, x = rng.standard_normal((3, 40)), rng.standard_normal((3, 40))
    np.testing.assert_allclose(si_snr_tensor(ad.Tensor(s), x).data, si_snr(s, x), atol=1e-10)
    assert check_gradients(lambda e: -si_snr_tensor(e, x).sum(), [s]) < 1e-5


def test_pit_matrix_example():
    perm, val = _best_assignment(np.array([[10.0, 0.0], [0.0, 10.0]]))
    assert perm == (0, 1) and -val == -10.0
    perm, val = _best_assignment(np.array([[0.0, 10.0], [10.0, 0.0]]))
    assert perm == (1, 0) and -val == -10.0


def test_pit_swapped_references_and_single_speaker():
    rng = np.random.default_rng(2)
    refs = rng.standard_normal((2, 200))
    est = refs + 0.3 * rng.standard_normal((2, 200))
    loss, perm = pit_loss(est, refs)
    loss2, perm2 = pit_loss(est, refs[::-1])
    assert loss == pytest.approx(loss2) and perm == (0, 1) and perm2 == (1, 0)
    assert pit_loss(est[:1], refs[:1])[0] == pytest.approx(-si_snr(est[0], refs[0]))
    with pytest.raises(ValueError):
        pit_loss(est, refs[:, :100])


@pytest.mark.parametrize("C", [2, 3])
def test_pit_equals_enumeration(C):
    rng = np.random.default_rng(C)
    for _ in range(20):
        refs = rng.standard_normal((C, 64))
        est = rng.standard_normal((C, 64)) + refs[rng.permutation(C)]
        brute = max(np.mean([si_snr(est[p[j]], refs[j]) for j in range(C)])
                    for p in itertools.permutations(range(C)))
        assert pit_loss(est, refs)[0] == pytest.approx(-brute, abs=1e-12)


def test_pairwise_matrix():
    rng = np.random.default_rng(3)
    e, r = rng.standard_normal((3, 20)), rng.standard_normal((2, 20))
    S = pairwise_si_snr(e, r)
    assert S.shape == (3, 2) and S[2, 1] == pytest.approx(si_snr(e[2], r[1]))


def test_track_label_parse():
    assert TrackLabel.parse(" NSS ") is TrackLabel.NSS
    assert TrackLabel.SE.num_speakers == 1 and not TrackLabel.CSS.noisy
    with pytest.raises(ValueError):
        TrackLabel.parse("mix")


def test_symphonic_cases():
    rng = np.random.default_rng(4)
    ref = rng.standard_normal((2, 100))
    est = rng.standard_normal((2, 100)) + ref
    se = chunk_loss(est, ref[:1], "se")
    assert se == pytest.approx(-si_snr(est[0], ref[0]))
    other = est.copy()
    other[1] = 1e3 * rng.standard_normal(100)
    assert chunk_loss(other, ref[:1], "se") == se
    assert chunk_loss(est, ref, "css") == pytest.approx(pit_loss(est, ref)[0])
    mixed = symphonic_loss([est, est], [ref[:1], ref], ["se", "nss"])
    assert mixed == pytest.approx(0.5 * (se + pit_loss(est, ref)[0]))
    with pytest.raises(ValueError):
        chunk_loss(est, ref, "se")
    with pytest.raises(ValueError):
        symphonic_loss([est], [ref, ref], ["css"])


def test_non_symphonic_se_uses_best_branch():
    rng = np.random.default_rng(5)
    ref = rng.standard_normal((1, 100))
    est = np.stack([rng.standard_normal(100), ref[0] + 0.1 * rng.standard_normal(100)])
    best = max(si_snr(est[0], ref[0]), si_snr(est[1], ref[0]))
    assert chunk_loss(est, ref, "se", symphonic=False) == pytest.approx(-best)


def test_tensor_losses_match_numpy():
    rng = np.random.default_rng(6)
    refs = [rng.standard_normal((1, 50)), rng.standard_normal((2, 50)), rng.standard_normal((2, 50))]
    est = rng.standard_normal((3, 2, 50))
    labels = ["se", "css", "nss"]
    for sym in (True, False):
        got = symphonic_loss_tensor(ad.Tensor(est), refs, labels, sym).item()
        assert got == pytest.approx(symphonic_loss(est, refs, labels, sym), abs=1e-10)


def test_symphonic_gradient():
    rng = np.random.default_rng(7)
    refs = [rng.standard_normal((1, 30)), rng.standard_normal((2, 30))]
    est = rng.standard_normal((2, 2, 30))
    assert check_gradients(lambda e: symphonic_loss_tensor(e, refs, ["se", "nss"]), [est]) < 1e-5


def test_se_chunk_gives_branch_one_exact_zero_gradient():
    rng = np.random.default_rng(8)
    w0 = ad.Tensor(rng.standard_normal((30, 30)), requires_grad=True)
    w1 = ad.Tensor(rng.standard_normal((30, 30)), requires_grad=True)
    x = ad.Tensor(rng.standard_normal((1, 30)))
    b0 = ad.matmul(x, w0)
    b1 = ad.tanh(ad.matmul(x, w1))
    chunk_loss_tensor(ad.concat([b0, b1], axis=0), rng.standard_normal((1, 30)), "se").backward()
    assert np.any(w0.grad != 0)
    assert w1.grad is None or np.all(w1.grad == 0)
