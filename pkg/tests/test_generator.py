import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusiongen.alignment import align_dataset
from fusiongen.data import PreprocessConfig, SynthConfig, Trial, preprocess_dataset, synthesize_dataset
from fusiongen.fusion import FusionConfig, fuse_bottleneck, vectorize
from fusiongen.generator import (GeneratorModel, TrainConfig, add_training_noise, generate_augmented_set,
                                 generate_trial, load_model, sample_pairs, save_model, train_dae)


@pytest.fixture(scope="module")
def trained():
    raw = synthesize_dataset(SynthConfig(n_channels=4, trials_per_class=10))
    ds, _ = align_dataset(preprocess_dataset(raw, PreprocessConfig(crop_seconds=2.0)))
    res = train_dae(ds, TrainConfig(epochs=40))
    return ds, res


# ------------------------------------------------------------------ shapes


def test_encode_shapes_for_22_channels():
    m = GeneratorModel.init((22, 1000))
    stack = m.encode(np.zeros((22, 1000)))
    assert [s.shape for s in stack] == [(8, 22, 200), (16, 22, 40), (32, 22, 20)]
    assert m.layer_lengths() == [200, 40, 20]


def test_zero_input_zero_bias_gives_zero_stack():
    m = GeneratorModel.init((3, 100))
    for p in m.layers.values():
        p.bias[:] = 0.0
    assert all(not s.any() for s in m.encode(np.zeros((3, 100))))


@settings(max_examples=15, deadline=None)
@given(C=st.integers(1, 5), T=st.integers(1, 160), seed=st.integers(0, 2**31))
def test_reconstruction_shape_round_trip(C, T, seed):
    rng = np.random.default_rng(seed)
    m = GeneratorModel.init((C, T), rng=rng)
    x = rng.standard_normal((C, T))
    y = m.reconstruct(x)
    assert y.shape == (C, T)
    np.testing.assert_array_equal(y, m.reconstruct(x))
    stack = m.encode(x)
    np.testing.assert_array_equal(m.decode_with_skips(stack), m.decode_with_skips(stack))


def test_batch_encode_equals_single():
    rng = np.random.default_rng(0)
    m = GeneratorModel.init((2, 100), rng=rng)
    X = rng.standard_normal((3, 2, 100))
    batch = m.encode(X)
    for i in range(3):
        for a, b in zip(batch, m.encode(X[i])):
            np.testing.assert_allclose(a[i], b, atol=1e-13)


def test_wrong_input_shape_rejected():
    with pytest.raises(ValueError):
        GeneratorModel.init((2, 100)).encode(np.zeros((3, 100)))


# ------------------------------------------------------------------ noise


def test_noise_coefficient_zero_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 50))
    np.testing.assert_array_equal(add_training_noise(x, 0.0, np.random.default_rng(1)), x)


def test_noise_statistics():
    x = np.random.default_rng(0).standard_normal((10, 10_000))
    x /= x.std()
    d = add_training_noise(x, 5.0, np.random.default_rng(1)) - x
    assert abs(d.std() - 0.05) < 0.005


def test_noise_is_seeded():
    x = np.ones((2, 10)) * np.arange(10)
    a = add_training_noise(x, 5.0, np.random.default_rng(3))
    b = add_training_noise(x, 5.0, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


# ------------------------------------------------------------------ training


def test_zero_epochs():
    ds = synthesize_dataset(SynthConfig(trials_per_class=2))
    res = train_dae(ds, TrainConfig(epochs=0))
    assert res.history == [] and res.model.input_shape == (8, 500)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_dae(np.zeros((0, 2, 50)), TrainConfig(epochs=1))


def test_divergence_is_reported():
    ds = synthesize_dataset(SynthConfig(trials_per_class=2))
    with pytest.raises(FloatingPointError, match="non-finite loss"):
        train_dae(ds, TrainConfig(epochs=3, lr=1e200))


def test_training_reduces_loss_and_is_deterministic(trained):
    ds, res = trained
    assert np.all(np.isfinite(res.history)) and res.history[-1] < res.history[0]
    again = train_dae(ds, TrainConfig(epochs=40))
    assert again.history == res.history
    for k, v in res.model.params().items():
        np.testing.assert_array_equal(v, again.model.params()[k])


def test_non_divisible_length_is_padded():
    ds = synthesize_dataset(SynthConfig(trials_per_class=2, n_samples=130, n_channels=2))
    res = train_dae(ds, TrainConfig(epochs=2))
    assert res.model.padded_length == 150
    assert res.model.reconstruct(ds.trials[0].samples).shape == (2, 130)


def test_invalid_train_config():
    for bad in (dict(lr=0), dict(batch_size=0), dict(noise_coefficient=-1), dict(epochs=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_model_file_round_trip(tmp_path, trained):
    _, res = trained
    save_model(res.model, tmp_path / "m.bin", res.history)
    m, hist = load_model(tmp_path / "m.bin")
    assert hist == pytest.approx(res.history)
    x = np.random.default_rng(0).standard_normal(res.model.input_shape)
    np.testing.assert_allclose(m.reconstruct(x), res.model.reconstruct(x), rtol=1e-5, atol=1e-5)


# ------------------------------------------------------------------ generation


def test_alpha_zero_generation_is_reconstruction(trained):
    ds, res = trained
    a, b = ds.trials[0], ds.trials[2]
    out = generate_trial(res.model, a, b, FusionConfig(0.0))
    np.testing.assert_array_equal(out.samples, res.model.reconstruct(a.samples))
    assert out.label == a.label and out.subject_id == a.subject_id


def test_self_fusion_matches_are_collinear(trained):
    ds, res = trained
    F = res.model.encode(ds.trials[1].samples)[-1]
    out, plan = fuse_bottleneck(F, F, FusionConfig(1.0))
    for cell, m in zip(plan.selected, plan.matches):
        a, b = F[:, cell[0], cell[1]], out[:, cell[0], cell[1]]
        if m is None:
            assert not a.any()
        else:
            assert a @ b == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b), rel=1e-12)


def test_self_fusion_is_reconstruction_without_collinear_features():
    rng = np.random.default_rng(11)
    m = GeneratorModel.init((3, 100), rng=rng)
    x = rng.standard_normal((3, 100))
    V = vectorize(m.encode(x)[-1])
    nz = V[np.linalg.norm(V, axis=1) > 0]
    U = nz / np.linalg.norm(nz, axis=1, keepdims=True)
    G = U @ U.T
    assert np.sum(G > 1 - 1e-12) == len(U), "fixture must have no collinear bottleneck vectors"
    t = Trial(x, 0)
    np.testing.assert_allclose(generate_trial(m, t, t, FusionConfig(1.0)).samples, m.reconstruct(x), atol=1e-12)


@pytest.mark.xfail(strict=True, reason="single-unit rectified bottleneck vectors are collinear, so the "
                                       "lowest-index tie-break can swap in a same-direction vector of "
                                       "another magnitude")
def test_self_fusion_is_reconstruction_on_trained_model(trained):
    ds, res = trained
    a = ds.trials[1]
    out = generate_trial(res.model, a, a, FusionConfig(1.0))
    np.testing.assert_allclose(out.samples, res.model.reconstruct(a.samples), atol=1e-12)


def test_generation_does_not_mutate(trained):
    ds, res = trained
    before = {k: v.copy() for k, v in res.model.params().items()}
    a, b = ds.trials[0], ds.trials[2]
    xa = a.samples.copy()
    generate_trial(res.model, a, b, FusionConfig(0.5, 3))
    for k, v in res.model.params().items():
        np.testing.assert_array_equal(v, before[k])
    np.testing.assert_array_equal(a.samples, xa)


def test_label_mismatch_rejected(trained):
    ds, res = trained
    with pytest.raises(ValueError, match="label"):
        generate_trial(res.model, ds.trials[0], ds.trials[1])


def test_generated_trials_stay_in_band(trained):
    ds, res = trained
    gen = generate_augmented_set(res.model, ds, None, 5, FusionConfig(0.2), seed=1)
    for t in gen.trials:
        spec = np.abs(np.fft.rfft(t.samples, axis=1)) ** 2
        f = np.fft.rfftfreq(t.n_samples, 1 / t.sample_rate_hz)
        band = (f >= 8) & (f <= 32)
        assert spec[:, band].sum() / spec.sum() >= 0.5


def test_augmented_set_counts_and_labels(trained):
    ds, res = trained
    gen = generate_augmented_set(res.model, ds, ds, 20, FusionConfig(0.2), seed=0)
    assert len(gen) == 40 and np.bincount(gen.labels).tolist() == [20, 20]
    assert set(gen.labels) <= set(ds.labels)
    assert len(generate_augmented_set(res.model, ds, ds, 0)) == 0


def test_augmented_set_is_seeded(trained):
    ds, res = trained
    a = generate_augmented_set(res.model, ds, None, 3, FusionConfig(0.3), seed=5)
    b = generate_augmented_set(res.model, ds, None, 3, FusionConfig(0.3), seed=5)
    np.testing.assert_array_equal(a.X, b.X)


def test_alpha_zero_set_equals_reconstructions(trained):
    ds, res = trained
    gen, pairs = generate_augmented_set(res.model, ds, None, 3, FusionConfig(0.0), seed=2, return_pairs=True)
    for t, (ti, _) in zip(gen.trials, pairs):
        np.testing.assert_allclose(t.samples, res.model.reconstruct(ds.trials[ti].samples), atol=1e-12)


def test_pairs_are_same_class_and_avoid_self():
    labels = np.array([0, 1, 0, 1, 0, 1])
    pairs = sample_pairs(labels, None, 10, np.random.default_rng(0), within=True)
    assert all(labels[a] == labels[b] and a != b for a, b in pairs)
    with pytest.raises(ValueError):
        sample_pairs(labels, np.array([0, 0]), 1, np.random.default_rng(0))
