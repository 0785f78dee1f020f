import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from fusiongen.augment import (BASELINES, AugmentParams, ChannelPairMap, apply_baseline, aug_channel_reflection,
                               aug_cut_resize, aug_dwt, aug_flip, aug_fshift, aug_noise, aug_scale,
                               augment_dataset, haar_dwt, haar_idwt)
from fusiongen.data import SynthConfig, Trial, synthesize_dataset

FS = 250.0
SEEDS = st.integers(0, 2**32 - 1)


def sine_trial(freq, T=1000, C=1, label=0):
    t = np.arange(T) / FS
    return Trial(np.tile(np.sin(2 * np.pi * freq * t), (C, 1)), label, sample_rate_hz=FS)


def rand_trial(seed, C=3, T=64, label=0):
    return Trial(np.random.default_rng(seed).standard_normal((C, T)), label, sample_rate_hz=FS)


def peak_hz(x, nperseg=None):
    f, p = sps.welch(x, fs=FS, nperseg=nperseg or len(x))
    return f[np.argmax(p)], f[1] - f[0]


# ------------------------------------------------------------------ amplitude


def test_noise_zero_is_identity():
    t = rand_trial(0)
    np.testing.assert_array_equal(aug_noise(t, 0.0).samples, t.samples)


def test_noise_statistics_and_label():
    t = Trial(np.random.default_rng(0).standard_normal((4, 50_000)), 1)
    out = aug_noise(t, 0.1, np.random.default_rng(1))
    assert abs((out.samples - t.samples).std() / (0.1 * t.samples.std()) - 1) < 0.1
    assert out.label == 1


def test_scale_fixed_ranges():
    t = rand_trial(1)
    np.testing.assert_array_equal(aug_scale(t, (1, 1)).samples, t.samples)
    np.testing.assert_array_equal(aug_scale(t, (2, 2)).samples, 2 * t.samples)


@settings(max_examples=30)
@given(seed=SEEDS)
def test_scale_std_matches_factor(seed):
    t = rand_trial(seed)
    out, s = aug_scale(t, (0.5, 1.5), np.random.default_rng(seed), return_factor=True)
    assert 0.5 <= s <= 1.5
    assert out.samples.std() == pytest.approx(s * t.samples.std(), rel=1e-12)


def test_flip_involution_constant_and_psd():
    t = rand_trial(2, T=500)
    np.testing.assert_array_equal(aug_flip(aug_flip(t)).samples, t.samples)
    c = Trial(np.full((2, 10), 3.0), 0)
    np.testing.assert_array_equal(aug_flip(c).samples, c.samples)
    # the full-length periodogram is time-reversal invariant
    _, p1 = sps.periodogram(t.samples, fs=FS, axis=1)
    _, p2 = sps.periodogram(aug_flip(t).samples, fs=FS, axis=1)
    np.testing.assert_allclose(p2, p1, rtol=1e-9, atol=1e-12)


def test_sign_flip():
    t = rand_trial(3)
    np.testing.assert_array_equal(aug_flip(t, "sign").samples, -t.samples)
    with pytest.raises(ValueError):
        aug_flip(t, "space")


# ------------------------------------------------------------------ cut & resize


def test_cut_resize_rho_one_is_identity():
    t = rand_trial(4)
    np.testing.assert_array_equal(aug_cut_resize(t, (1, 1), np.random.default_rng(0)).samples, t.samples)


@settings(max_examples=30)
@given(seed=SEEDS, T=st.integers(2, 300))
def test_cut_resize_keeps_length(seed, T):
    t = rand_trial(seed, T=T)
    out, (start, L) = aug_cut_resize(t, (0.3, 0.9), np.random.default_rng(seed), return_cut=True)
    assert out.samples.shape == t.samples.shape and 0 <= start <= T - L and 2 <= L <= T


@pytest.mark.parametrize("rho", [0.5, 0.8])
def test_cut_resize_scales_frequency_down(rho):
    out = aug_cut_resize(sine_trial(10.0), (rho, rho), np.random.default_rng(0))
    f, df = peak_hz(out.samples[0])
    assert abs(f - 10.0 * rho) <= df


@pytest.mark.xfail(strict=True, reason="stretching a cut window back to full length lowers frequencies, "
                                       "so 10 Hz at rho=0.5 lands at 5 Hz rather than 20 Hz")
def test_cut_resize_literal_twenty_hertz_example():
    out = aug_cut_resize(sine_trial(10.0), (0.5, 0.5), np.random.default_rng(0))
    f, df = peak_hz(out.samples[0])
    assert abs(f - 20.0) <= df


# ------------------------------------------------------------------ frequency shift


def test_fshift_zero_is_identity():
    t = rand_trial(5)
    np.testing.assert_allclose(aug_fshift(t, (0, 0)).samples, t.samples, atol=1e-9)


def test_fshift_moves_peak():
    out, delta = aug_fshift(sine_trial(10.0), (2, 2), np.random.default_rng(0), return_shift=True)
    assert delta == 2.0
    f, _ = peak_hz(out.samples[0])
    assert f == 12.0
    assert np.isrealobj(out.samples) and out.samples.shape == (1, 1000)


# ------------------------------------------------------------------ channel reflection


NAMES = ["C3", "Cz", "C4", "FC1", "FC2"]


def test_reflection_moves_energy():
    m = ChannelPairMap.from_names([("C3", "C4")], [], NAMES)
    x = np.zeros((5, 20))
    x[0] = 1.0
    out = aug_channel_reflection(Trial(x, 0), m)
    assert not out.samples[0].any() and out.samples[2].all()
    np.testing.assert_array_equal(out.samples[1], x[1])


@settings(max_examples=20)
@given(seed=SEEDS)
def test_reflection_involution(seed):
    m = ChannelPairMap.standard(NAMES, ["left_hand", "right_hand"])
    t = rand_trial(seed, C=5, label=int(seed % 2))
    once = aug_channel_reflection(t, m)
    assert once.label == 1 - t.label
    twice = aug_channel_reflection(once, m)
    np.testing.assert_array_equal(twice.samples, t.samples)
    assert twice.label == t.label


def test_empty_pair_map_is_identity():
    t = rand_trial(6)
    out = aug_channel_reflection(t, ChannelPairMap())
    np.testing.assert_array_equal(out.samples, t.samples)
    assert out.label == t.label


def test_standard_map_pairs():
    m = ChannelPairMap.standard(NAMES, ["left_hand", "right_hand", "feet"])
    assert set(m.pairs) == {(0, 2), (3, 4)}
    assert m.label_swap == {0: 1, 1: 0}


@pytest.mark.parametrize("pairs, swap", [([(0, 0)], {}), ([(0, 1), (1, 2)], {}), ([(0, 9)], {}),
                                         ([], {0: 1, 1: 2, 2: 0})])
def test_invalid_pair_maps(pairs, swap):
    with pytest.raises(ValueError):
        ChannelPairMap(pairs, swap, n_channels=5)


def test_pair_map_file(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({"pairs": [["C3", "C4"]],
                                                 "label_swap": [["left_hand", "right_hand"]]}))
    m = ChannelPairMap.load(tmp_path / "p.json", NAMES, ["left_hand", "right_hand"])
    assert m.pairs == ((0, 2),) and m.map_label(0) == 1
    (tmp_path / "q.json").write_text(json.dumps({"pairs": [["C3", "T7"]]}))
    with pytest.raises(ValueError, match="T7"):
        ChannelPairMap.load(tmp_path / "q.json", NAMES)


# ------------------------------------------------------------------ Haar / DWT


def test_haar_matches_frozen_oracle(frozen):
    o = frozen["haar"]
    a, d = haar_dwt(np.array(o["x"]))
    np.testing.assert_allclose(np.concatenate([a, d]), o["coeffs"], atol=1e-14)
    a, d = haar_dwt(np.ones(4))
    np.testing.assert_allclose(a, [np.sqrt(2)] * 2, atol=1e-15)
    np.testing.assert_array_equal(d, [0.0, 0.0])
    np.testing.assert_allclose(np.concatenate([a, d]), o["ones4"], atol=1e-15)


def test_dwt_self_is_identity():
    t = rand_trial(7)
    np.testing.assert_allclose(aug_dwt(t, t).samples, t.samples, atol=1e-9)


@settings(max_examples=30)
@given(seed=SEEDS, half=st.integers(1, 40))
def test_dwt_recombination_against_matrix_oracle(seed, half):
    rng = np.random.default_rng(seed)
    T = 2 * half
    a = Trial(rng.standard_normal((2, T)), 1)
    b = Trial(rng.standard_normal((2, T)), 1)
    H = np.zeros((T, T))
    s = 1 / np.sqrt(2)
    for k in range(half):
        H[k, 2 * k] = H[k, 2 * k + 1] = s
        H[half + k, 2 * k], H[half + k, 2 * k + 1] = s, -s
    ca, cb = a.samples @ H.T, b.samples @ H.T
    expected = np.concatenate([ca[:, :half], cb[:, half:]], axis=1) @ H
    out = aug_dwt(a, b)
    np.testing.assert_allclose(out.samples, expected, atol=1e-12)
    assert out.label == 1
    np.testing.assert_allclose(haar_idwt(*haar_dwt(a.samples)), a.samples, atol=1e-12)


def test_dwt_errors():
    with pytest.raises(ValueError):
        aug_dwt(rand_trial(0, label=0), rand_trial(1, label=1))
    with pytest.raises(ValueError):
        haar_dwt(np.ones(5))


# ------------------------------------------------------------------ dataset level


@pytest.mark.parametrize("method", BASELINES)
def test_every_baseline_preserves_shape_and_is_seeded(method):
    ds = synthesize_dataset(SynthConfig(trials_per_class=4, n_samples=100))
    a = augment_dataset(ds, method, 3, np.random.default_rng(0))
    b = augment_dataset(ds, method, 3, np.random.default_rng(0))
    assert len(a) == 6 and a.X.shape[1:] == ds.X.shape[1:]
    np.testing.assert_array_equal(a.X, b.X)
    assert np.bincount(a.labels).tolist() == [3, 3]
    assert all(t.sample_rate_hz == ds.sample_rate_hz for t in a.trials)


def test_unknown_baseline_rejected():
    ds = synthesize_dataset(SynthConfig(trials_per_class=2, n_samples=50))
    with pytest.raises(ValueError):
        augment_dataset(ds, "mixup", 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        apply_baseline("dwt", ds.trials[0], np.random.default_rng(0), AugmentParams())


def test_invalid_params():
    with pytest.raises(ValueError):
        AugmentParams(flip_mode="x")
    with pytest.raises(ValueError):
        aug_cut_resize(rand_trial(0), (0.0, 0.5))
