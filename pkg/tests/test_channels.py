import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from speed.channels import (
    TARGET_1020,
    apply_montage,
    default_montage,
    detect_type,
    standardize_name,
)
from speed.errors import NoEegChannels
from speed.recording import ChannelInfo, ChannelType, RawRecording
from speed.synth import gen_scenario, get_scenario


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("EEG FP1-REF", "Fp1"),
        ("EEG T3-LE", "T7"),
        ("EEG T4-REF", "T8"),
        ("EEG T5-REF", "P7"),
        ("EEG T6-LE", "P8"),
        ("EEG CZ-REF", "Cz"),
        ("Fz", "Fz"),
        ("eeg o2-ref", "O2"),
        ("BURSTS", None),
    ],
)
def test_standardize_name(raw, expected):
    assert standardize_name(raw) == expected


@given(st.sampled_from(TARGET_1020), st.sampled_from(["EEG {}-REF", "EEG {}-LE", "{}",
                                                       "EEG {}-AR"]),
       st.booleans())
def test_standardize_is_case_and_decoration_insensitive(name, fmt, upper):
    label = fmt.format(name.upper() if upper else name)
    assert standardize_name(label) == name


@pytest.mark.parametrize(
    "canon, raw, expected",
    [
        (None, "EEG EKG-REF", ChannelType.ECG),
        ("Fp1", "Fp1", ChannelType.EEG),
        (None, "DC1", ChannelType.OTHER),
        (None, "EOG LOC", ChannelType.EOG),
        (None, "EMG CHIN", ChannelType.EMG),
        (None, "PHOTIC PH", ChannelType.PHOTIC),
    ],
)
def test_detect_type(canon, raw, expected):
    assert detect_type(canon, raw) == expected


def test_montage_positions_on_unit_sphere(montage):
    pos = montage.positions(TARGET_1020)
    np.testing.assert_allclose(np.linalg.norm(pos, axis=1), 1.0, atol=1e-9)
    assert len({tuple(p) for p in pos}) == 19


def test_montage_left_right_mirror(montage):
    for left, right in [("Fp1", "Fp2"), ("C3", "C4"), ("T7", "T8"), ("O1", "O2"), ("P7", "P8")]:
        a, b = montage.position(left), montage.position(right)
        np.testing.assert_allclose(a * [-1, 1, 1], b, atol=1e-6)


def test_apply_montage_drops_non_eeg():
    rec, _ = gen_scenario(get_scenario("clean19", duration=4.0))
    extra = RawRecording(
        np.vstack([rec.data, np.zeros((2, rec.n_samples))]),
        rec.fs,
        rec.channels + [ChannelInfo("EEG EKG-REF"), ChannelInfo("ECG EKG2")],
    )
    assert len(extra.channels) == 21
    events = []
    out = apply_montage(extra, events=events)
    assert out.data.shape[0] == 19
    assert sorted(out.ch_names) == sorted(TARGET_1020)
    assert all(ch.position is not None and ch.ch_type is ChannelType.EEG for ch in out.channels)
    dropped = dict(events)["dropped"]["channels"]
    assert set(dropped) == {"EEG EKG-REF", "ECG EKG2"}


def test_apply_montage_identity_on_canonical(montage):
    data = np.random.default_rng(0).standard_normal((19, 50))
    rec = RawRecording(data, 100.0, [ChannelInfo(n) for n in TARGET_1020])
    out = apply_montage(rec)
    np.testing.assert_array_equal(out.data, data)
    assert out.ch_names == list(TARGET_1020)
    assert out.channels[4].position == montage.electrodes["Fz"]


def test_apply_montage_only_physiological():
    rec = RawRecording(np.zeros((2, 10)), 10.0, [ChannelInfo("EEG EKG-REF"), ChannelInfo("EMG")])
    with pytest.raises(NoEegChannels):
        apply_montage(rec)


def test_apply_montage_keeps_first_duplicate():
    rec = RawRecording(np.arange(20.0).reshape(2, 10), 10.0,
                       [ChannelInfo("EEG T3-REF"), ChannelInfo("T7")])
    out = apply_montage(rec)
    assert out.ch_names == ["T7"]
    np.testing.assert_array_equal(out.data[0], np.arange(10.0))


def test_default_montage_is_cached():
    assert default_montage() is default_montage()
