import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speed.dsp import average_reference
from speed.errors import DegenerateCovariance
from speed.ica import (
    IC_CLASSES,
    FeatureVector,
    IcLabel,
    amari_index,
    classify_ic,
    exclude_and_reconstruct,
    extended_infomax,
    fit_ica,
    ic_features,
    ica_drop_check,
    is_excluded,
    read_label_file,
    whiten,
)
from speed.synth import ica_mixture

FS = 250.0


def total_unmixing(model):
    w = model.whitener
    return model.unmixing @ (w.eig_vectors / np.sqrt(w.eig_values)).T


# ------------------------------------------------------------------ whitening


def test_whitened_covariance_identity():
    x, _, _ = ica_mixture(seed=1)
    z, _ = whiten(x)
    cov = z @ z.T / z.shape[1]
    np.testing.assert_allclose(cov, np.eye(z.shape[0]), atol=1e-8)


def test_average_reference_loses_one_rank():
    x = np.random.default_rng(0).standard_normal((19, 5000))
    _, w = whiten(average_reference(x))
    eig = np.linalg.eigvalsh(np.cov(average_reference(x)))
    assert w.rank <= 18
    assert w.rank == np.sum(eig > 1e-10 * eig.max())


def test_duplicate_channel_rank():
    x = np.random.default_rng(1).standard_normal((6, 3000))
    x[5] = x[2]
    _, w = whiten(x)
    assert w.rank <= 5


def test_whitener_round_trip():
    x, _, _ = ica_mixture(seed=2)
    z, w = whiten(x)
    np.testing.assert_allclose(w.inverse(z), x, atol=1e-9)


def test_whiten_degenerate():
    with pytest.raises(DegenerateCovariance):
        whiten(np.zeros((4, 1000)))
    with pytest.raises(DegenerateCovariance):
        whiten(np.ones((4, 10)))


# ------------------------------------------------------------------ extended Infomax


def test_two_source_recovery():
    x, _, mixing = ica_mixture(n_super=1, n_sub=1, n_samples=20000, seed=3)
    model = fit_ica(x, seed=0)
    assert amari_index(total_unmixing(model), mixing) < 0.05


def test_independent_input_gives_permutation():
    _, sources, _ = ica_mixture(n_super=2, n_sub=1, n_samples=20000, seed=4)
    z = (sources - sources.mean(axis=1, keepdims=True)) / sources.std(axis=1, keepdims=True)
    unmixing, _, _ = extended_infomax(z, seed=0)
    assert amari_index(unmixing, np.eye(3)) < 0.05


def test_same_seed_bit_identical():
    x, _, _ = ica_mixture(seed=5, n_samples=5000)
    a = fit_ica(x, seed=7)
    b = fit_ica(x, seed=7)
    np.testing.assert_array_equal(a.unmixing, b.unmixing)


def test_components_unit_variance():
    x, _, _ = ica_mixture(seed=6, n_samples=8000)
    model = fit_ica(x, seed=0)
    np.testing.assert_allclose(model.sources(x).var(axis=1), 1.0, rtol=0.02)


def test_amari_index_bounds():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4))
    perm = np.eye(4)[[2, 0, 3, 1]] * [[1.5], [-2], [0.3], [4]]
    assert amari_index(perm @ np.linalg.inv(a), a) < 1e-12
    assert 0 < amari_index(np.ones((4, 4)) + np.eye(4) * 1e-3, np.eye(4)) <= 1


# ------------------------------------------------------------------ features


def _tone(freq, seconds=20.0):
    return np.sin(2 * np.pi * freq * np.arange(int(seconds * FS)) / FS)


def test_line_component_ratio():
    rng = np.random.default_rng(0)
    comp = _tone(60.0) + 0.01 * rng.standard_normal(int(20 * FS))
    f = ic_features(comp, np.ones(19), FS, 60.0)
    assert f.line_ratio > 10


def test_one_hot_concentration():
    topo = np.zeros(19)
    topo[4] = -2.5
    f = ic_features(np.random.default_rng(1).standard_normal(5000), topo, FS, 60.0)
    assert f.concentration == 1.0


def test_pink_source_negative_slope():
    rng = np.random.default_rng(2)
    n = int(60 * FS)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / FS)
    spec /= np.maximum(freqs, 0.5)
    f = ic_features(np.fft.irfft(spec, n), np.ones(19), FS, 60.0)
    assert f.spectral_slope < -1


def test_band_fractions_bounded():
    f = ic_features(np.random.default_rng(3).standard_normal(10000), np.ones(19), FS, 60.0)
    for v in (f.delta_frac, f.alpha_frac, f.high_frac):
        assert 0 <= v <= 1
    assert f.high_frac > f.alpha_frac


def test_frontal_weight():
    names = ["Fp1", "Fp2", "Cz", "Pz"]
    f = ic_features(np.random.default_rng(4).standard_normal(5000), np.array([1, 1, 0, 0.0]),
                    FS, 60.0, names)
    assert f.frontal == 1.0


# ------------------------------------------------------------------ classification


def _features(**kw):
    base = dict(spectral_slope=0.0, delta_frac=0.0, alpha_frac=0.0, high_frac=0.0,
                line_ratio=1.0, concentration=0.0, frontal=0.0, heart_autocorr=0.0)
    return FeatureVector(**{**base, **kw})


def test_one_hot_flat_spectrum_is_channel_noise():
    lab = classify_ic(_features(concentration=1.0, spectral_slope=0.0, high_frac=0.25,
                                alpha_frac=0.05))
    assert lab.label == "channel_noise"


def test_frontal_delta_is_blink():
    lab = classify_ic(_features(frontal=0.9, delta_frac=0.8, spectral_slope=-2.0))
    assert lab.label == "eye_blink"


def test_neutral_features_are_other():
    assert classify_ic(_features()).label == "other"


def test_alpha_pink_is_brain():
    lab = classify_ic(_features(spectral_slope=-1.5, alpha_frac=0.35, concentration=0.15))
    assert lab.label == "brain"


def test_periodic_beats_are_heart():
    assert classify_ic(_features(heart_autocorr=0.3, spectral_slope=-0.5)).label == "heart"


@settings(max_examples=200)
@given(st.floats(-4, 2), *[st.floats(0, 1)] * 3, st.floats(0, 1e3), *[st.floats(0, 1)] * 3)
def test_probabilities_form_distribution(slope, d, a, h, line, conc, front, heart):
    lab = classify_ic(FeatureVector(slope, d, a, h, line, conc, front, heart))
    assert len(lab.probs) == len(IC_CLASSES)
    assert sum(lab.probs) == pytest.approx(1.0)
    assert lab.prob == max(lab.probs)


# ------------------------------------------------------------------ exclusion


@pytest.mark.parametrize(
    "label, prob, excluded",
    [
        ("muscle_artifact", 0.85, True),
        ("muscle_artifact", 0.70, False),
        ("brain", 0.99, False),
        ("other", 0.95, False),
        ("line_noise", 0.81, True),
        ("eye_blink", 0.80, False),
    ],
)
def test_exclusion_rule(label, prob, excluded):
    assert is_excluded(IcLabel.certain(label, prob)) is excluded


@given(st.sampled_from(IC_CLASSES), st.floats(0, 1))
def test_exclusion_rule_property(label, prob):
    expected = label not in ("brain", "other") and prob > 0.8
    assert is_excluded(IcLabel.certain(label, prob)) is expected


def test_no_exclusion_is_projection():
    x, _, _ = ica_mixture(seed=8, n_samples=6000)
    model = fit_ica(x, seed=0)
    labels = [IcLabel.certain("brain", 0.9)] * model.n_components
    out, excluded = exclude_and_reconstruct(x, model, labels)
    assert excluded == []
    ref = model.whitener.project(x)
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-6


def test_excluded_component_removed():
    x, sources, mixing = ica_mixture(seed=9, n_samples=20000)
    model = fit_ica(x, seed=0)
    labels = [IcLabel.certain("brain", 0.9)] * model.n_components
    labels[0] = IcLabel.certain("muscle_artifact", 0.95)
    out, excluded = exclude_and_reconstruct(x, model, labels)
    assert excluded == [0]
    expected = x - np.outer(model.mixing[:, 0], model.sources(x)[0])
    np.testing.assert_allclose(out, expected, atol=1e-8 * np.abs(x).max())


@pytest.mark.parametrize("n_excluded, keep", [(10, False), (9, True), (0, True)])
def test_ica_drop_check(n_excluded, keep):
    assert bool(ica_drop_check(n_excluded, 18)) is keep


def test_label_file(tmp_path):
    path = tmp_path / "labels.txt"
    path.write_text("# rec win comp class prob\na.edf 0 3 heart 0.9\n\nb.edf 1 0 brain 0.5\n")
    labels = read_label_file(path)
    assert labels[("a.edf", 0, 3)].label == "heart"
    assert labels[("a.edf", 0, 3)].prob == pytest.approx(0.9)
    path.write_text("a.edf 0 3 ghost 0.9\n")
    with pytest.raises(ValueError):
        read_label_file(path)
