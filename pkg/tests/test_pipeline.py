import hashlib
import json

import numpy as np
import pytest
from conftest import scenario, write_corpus
from hypothesis import given
from hypothesis import strategies as st

from speed.channels import TARGET_1020
from speed.ica import IcLabel
from speed.logs import EventSink, read_log
from speed.pipeline import (
    Dropped,
    PipelineConfig,
    ProcessedWindow,
    harmonize_rates,
    process_downstream,
    process_window_pretrain,
    read_window,
    run_pipeline,
    sanitize_nonfinite,
    verify_output,
    window_at,
    window_seed,
    write_output,
)
from speed.recording import ChannelInfo, RawRecording
from speed.synth import Fault, get_scenario

WINDOW_BYTES = 19 * 15360 * 4


def _first_window(bundle):
    rec, truth, _ = bundle
    return window_at(rec, 60.0, 0), truth


class _AllBrain:
    def get(self, k, default):
        return IcLabel.certain("brain", 0.99)


# ------------------------------------------------------------------ config and seeding


def test_config_round_trip():
    cfg = PipelineConfig(line_freq=50.0, with_ica=True, jobs=3, input="in", output="out")
    back = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.zapline.f_line == 50.0


def test_config_rejects_unknown_keys():
    with pytest.raises((ValueError, TypeError)):
        PipelineConfig.from_dict({"colour": "blue"})


@pytest.mark.parametrize("bad", [{"mode": "train"}, {"jobs": 0}, {"window_secs": 0}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        PipelineConfig(**bad)


def test_snapshot_excludes_run_plumbing():
    snap = PipelineConfig(jobs=4, input="a", output="b").snapshot()
    assert not {"jobs", "input", "output"} & set(snap)


@given(st.integers(0, 2**31), st.text(max_size=20), st.integers(0, 10**6))
def test_window_seed_deterministic(seed, rec_id, idx):
    a = window_seed(seed, rec_id, idx)
    assert a == window_seed(seed, rec_id, idx)
    assert 0 <= a < 2**63


def test_window_seeds_distinct():
    seeds = {window_seed(0, f"r{r}.edf", k) for r in range(20) for k in range(50)}
    assert len(seeds) == 1000


# ------------------------------------------------------------------ preparation


def test_harmonize_mixed_rates():
    t = np.arange(500) / 250
    rec = RawRecording([np.sin(t), np.sin(t[::2])], 250.0,
                       [ChannelInfo("Cz", fs=250.0), ChannelInfo("Pz", fs=125.0)])
    out = harmonize_rates(rec)
    assert out.is_uniform and out.data.shape == (2, 500)


def test_sanitize_flags_channel():
    data = np.ones((2, 5))
    data[1, 2] = np.inf
    out = sanitize_nonfinite(RawRecording(data, 1.0, [ChannelInfo("Cz"), ChannelInfo("Pz")]))
    assert np.isfinite(out.data).all() and out.data[1, 2] == 0
    assert [c.had_nonfinite for c in out.channels] == [False, True]


# ------------------------------------------------------------------ pretrain window


def test_clean_window_processed(clean19):
    win, _ = _first_window(clean19)
    sink = EventSink(win.recording_id, 0)
    out = process_window_pretrain(win, PipelineConfig(), sink=sink)
    assert isinstance(out, ProcessedWindow)
    assert out.data.shape == (19, 15360)
    assert np.isfinite(out.data).all()
    assert out.channel_names == TARGET_1020
    assert sink.events[-1].stage == "output" and sink.events[-1].action == "kept"


def test_mostly_bad_window_dropped(clean19):
    win, _ = _first_window(clean19)
    win.data[:16] = 0.0
    out = process_window_pretrain(win, PipelineConfig())
    assert isinstance(out, Dropped)
    assert "min_channel_check" in out.reasons


def test_stage_error_drops_only_window(clean19):
    win, _ = _first_window(clean19)
    win.data = win.data[:, :100]
    out = process_window_pretrain(win, PipelineConfig(window_secs=0.4))
    assert isinstance(out, Dropped)
    assert out.reasons[0].startswith("error:")


@pytest.mark.slow
def test_ica_without_exclusions_matches_plain_path(clean19):
    win, _ = _first_window(clean19)
    plain = process_window_pretrain(win, PipelineConfig())
    with_ica = process_window_pretrain(win, PipelineConfig(with_ica=True),
                                       label_override=_AllBrain())
    rel = np.linalg.norm(with_ica.data - plain.data) / np.linalg.norm(plain.data)
    assert rel < 1e-5


def test_missing_channels_interpolated():
    rec, truth, _ = scenario("missing_fz_pz")
    sink = EventSink(rec.recording_id, 0)
    out = process_window_pretrain(window_at(rec, 60.0, 0), PipelineConfig(), sink=sink)
    assert isinstance(out, ProcessedWindow)
    interp = [e for e in sink.events if e.action == "interpolated"]
    assert interp[0].payload["reasons"] == {"Fz": "missing", "Pz": "missing"}


# ------------------------------------------------------------------ downstream


def test_downstream_span_length():
    rec, _, _ = scenario("events")
    out = process_downstream(rec, PipelineConfig(mode="downstream"))
    assert out.data.shape == (19, 23552)


def test_downstream_never_gates():
    rec, _, _ = scenario("events")
    loud = RawRecording(rec.data * 40, rec.fs, rec.channels, rec.annotations, "loud")
    sink = EventSink("loud", 0)
    out = process_downstream(loud, PipelineConfig(mode="downstream"), sink=sink)
    assert isinstance(out, ProcessedWindow)
    assert not {"qa", "qa_post", "qa_badchan"} & {e.stage for e in sink.events}


# ------------------------------------------------------------------ output files


def _pw(k, seed=0):
    data = np.random.default_rng(seed + k).standard_normal((19, 15360)).astype("<f4")
    return ProcessedWindow(data, "r.edf", k, TARGET_1020, 256.0)


def test_single_window_size(tmp_path):
    write_output([_pw(0)], tmp_path)
    assert (tmp_path / "windows.bin").stat().st_size == 1_167_360 == WINDOW_BYTES


def test_read_back_bitwise(tmp_path):
    wins = [_pw(k) for k in range(3)]
    manifest = write_output(wins, tmp_path)
    for win, entry in zip(wins, manifest.windows):
        assert read_window(tmp_path, entry).tobytes() == win.data.tobytes()
    assert verify_output(tmp_path)


def test_offsets_uniform(tmp_path):
    manifest = write_output([_pw(k) for k in range(4)], tmp_path)
    assert [e["offset"] for e in manifest.windows] == [k * WINDOW_BYTES for k in range(4)]
    index = json.loads((tmp_path / "index.json").read_text())
    assert index["window_shape"] == [19, 15360]
    assert index["channel_order"] == list(TARGET_1020)


def test_corrupted_output_detected(tmp_path):
    write_output([_pw(0)], tmp_path)
    with open(tmp_path / "windows.bin", "r+b") as fh:
        fh.seek(100)
        fh.write(b"\x7f")
    assert not verify_output(tmp_path)


# ------------------------------------------------------------------ full runs


def _digest(out):
    return {name: hashlib.sha256((out / name).read_bytes()).hexdigest()
            for name in ("windows.bin", "index.json")}


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, [
        ("a/clean.edf", get_scenario("clean19", duration=130.0, seed=1)),
        ("a/missing.edf", get_scenario("missing_fz_pz", duration=60.0, seed=2)),
        ("b/broken.edf", get_scenario("clean19", duration=60.0, seed=3, faults=(
            Fault("flat", tuple(TARGET_1020[:16])),))),
        ("b/short.edf", get_scenario("clean19", duration=30.0, seed=4)),
    ])
    (root / "README.txt").write_text("not a recording")
    return root


@pytest.mark.slow
def test_jobs_do_not_change_output(small_corpus, tmp_path):
    one = run_pipeline(PipelineConfig(input=str(small_corpus), output=str(tmp_path / "j1")))
    two = run_pipeline(PipelineConfig(input=str(small_corpus), output=str(tmp_path / "j2"),
                                      jobs=2))
    assert _digest(tmp_path / "j1") == _digest(tmp_path / "j2")
    assert one.summary == two.summary


def test_run_conservation_and_reasons(small_corpus, tmp_path):
    out = tmp_path / "run"
    result = run_pipeline(PipelineConfig(input=str(small_corpus), output=str(out)))
    assert result.n_recordings == 4
    assert result.n_items == 2 + 1 + 1
    assert result.kept + result.dropped == result.n_items
    assert result.summary["windows"]["total"] == result.n_items
    # 16 flat of 19: fewer than half left, and a bad ratio of 16/19 past 0.8
    assert result.summary["drop_reasons"] == {"min_channel_check": 1, "rbc": 1}
    assert result.summary["interpolated_channels"] == {"Fz": 1, "Pz": 1}
    assert verify_output(out)
    events = read_log(out / "log.jsonl")
    assert [e.sort_key() for e in events] == sorted(e.sort_key() for e in events)
    short = [e for e in events if e.recording_id == "b/short.edf" and "error" in e.payload]
    assert short and "RecordingTooShort" in short[0].payload["error"]


def test_downstream_run(tmp_path):
    root = tmp_path / "in"
    write_corpus(root, [("ev.edf", get_scenario("events"))])
    result = run_pipeline(PipelineConfig(mode="downstream", input=str(root),
                                         output=str(tmp_path / "out")))
    index = json.loads((tmp_path / "out" / "index.json").read_text())
    assert result.kept == 1
    assert index["windows"][0]["shape"] == [19, 23552]


@pytest.mark.slow
def test_ica_histogram_on_clean_corpus(tmp_path):
    root = tmp_path / "in"
    write_corpus(root, [(f"c{k}.edf", get_scenario("clean19", duration=60.0, seed=10 + k))
                        for k in range(2)])
    result = run_pipeline(PipelineConfig(with_ica=True, input=str(root),
                                         output=str(tmp_path / "out")))
    classes = result.summary["ic_classes"]
    retained = classes.get("brain", 0) + classes.get("other", 0)
    assert retained > 0.5 * sum(classes.values())
    assert result.summary["ic_excluded"] == {}
