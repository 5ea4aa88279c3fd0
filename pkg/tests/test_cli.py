import json
import subprocess
import sys

import pytest

from speed.cli import EXIT_IO, EXIT_NO_OUTPUT, EXIT_OK, EXIT_USAGE, main
from speed.edf import read_edf


def test_synth_writes_edf(tmp_path, capsys):
    out = tmp_path / "x" / "clean.edf"
    assert main(["synth", "--scenario", "missing_fz_pz", "--out", str(out), "--seed", "2"]) == 0
    rec = read_edf(out)
    assert len(rec.channels) == 17
    assert str(out) in capsys.readouterr().out


def test_synth_unknown_scenario(tmp_path, capsys):
    assert main(["synth", "--scenario", "nope", "--out", str(tmp_path / "a.edf")]) == EXIT_USAGE
    assert "unknown scenario" in capsys.readouterr().err


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["preprocess", "--input", "x"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["preprocess", "--input", "a", "--output", "b", "--line-freq", "55"])
    assert exc.value.code == EXIT_USAGE


def test_missing_input_dir(tmp_path):
    code = main(["preprocess", "--input", str(tmp_path / "none"), "--output", str(tmp_path / "o")])
    assert code == EXIT_IO


def test_no_windows_kept(tmp_path):
    (tmp_path / "in").mkdir()
    code = main(["preprocess", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "o")])
    assert code == EXIT_NO_OUTPUT


def test_preprocess_and_summarize(tmp_path, capsys):
    edf = tmp_path / "in" / "r.edf"
    main(["synth", "--scenario", "missing_fz_pz", "--out", str(edf)])
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"line_freq": 50.0, "window_secs": 30.0}))
    code = main(["preprocess", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "o"),
                 "--config", str(config), "--line-freq", "60"])
    assert code == EXIT_OK
    index = json.loads((tmp_path / "o" / "index.json").read_text())
    assert index["config"]["line_freq"] == 60.0
    assert index["config"]["window_secs"] == 30.0
    assert len(index["windows"]) == 4
    capsys.readouterr()
    assert main(["summarize", "--log", str(tmp_path / "o" / "log.jsonl")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["interpolated_channels"] == {"Fz": 4, "Pz": 4}


def test_bad_config(tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"mode": "sideways"}))
    (tmp_path / "in").mkdir()
    code = main(["preprocess", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "o"),
                 "--config", str(config)])
    assert code == EXIT_USAGE


def test_summarize_missing_log(tmp_path):
    assert main(["summarize", "--log", str(tmp_path / "none.jsonl")]) == EXIT_IO


def test_summarize_malformed_log(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text("{not json\n")
    assert main(["summarize", "--log", str(path)]) == EXIT_USAGE


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "speed.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    assert "preprocess" in out.stdout
