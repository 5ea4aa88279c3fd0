"""Stage wiring for pretrain and downstream modes, parallel corpus runs and output files."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import ica as ica_mod
from .badchan import RansacConfig, detect_bad_channels
from .channels import Montage, apply_montage, load_montage
from .dsp import FilterSpec, average_reference, detrend_channels, fir_filter, resample
from .edf import RecordingRef, read_edf, scan_corpus
from .errors import RecordingTooShort, SpeedError
from .interpolate import finalize_channels
from .logs import EventSink, merge_events, summarize_events, write_log
from .quality import (
    QualityThresholds,
    compute_metrics,
    gate,
    min_channel_check,
    qa_filter,
)
from .recording import RawRecording, Window
from .segmentation import crop_downstream
from .zapline import ZaplineConfig, zapline_iterative

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HIGHPASS_HZ = 0.5
LOWPASS_HZ = 100.0


@dataclass
class PipelineConfig:
    mode: str = "pretrain"
    line_freq: float = 60.0
    montage: str = "standard_1020"
    window_secs: float = 60.0
    with_ica: bool = False
    with_ransac: bool = False
    ic_labels: str | None = None
    thresholds: QualityThresholds = field(default_factory=QualityThresholds)
    zapline: ZaplineConfig = field(default_factory=ZaplineConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    max_excluded_frac: float = 0.5
    target_fs: float = 256.0
    seed: int = 0
    jobs: int = 1
    input: str | None = None
    output: str | None = None

    def __post_init__(self):
        if self.mode not in ("pretrain", "downstream"):
            raise ValueError(f"mode must be pretrain or downstream, got {self.mode!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.target_fs <= 0:
            raise ValueError("target_fs must be positive")
        if self.mode == "pretrain" and self.window_secs <= 0:
            raise ValueError("window_secs must be positive in pretrain mode")
        if self.zapline.f_line != self.line_freq:
            self.zapline = replace(self.zapline, f_line=self.line_freq)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> PipelineConfig:
        data = dict(data)
        nested = {"thresholds": QualityThresholds, "zapline": ZaplineConfig, "ransac": RansacConfig}
        for key, kind in nested.items():
            if isinstance(data.get(key), dict):
                data[key] = kind(**data[key])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def snapshot(self) -> dict:
        """Settings that affect output bytes (excludes paths and worker count)."""
        out = self.to_dict()
        for key in ("jobs", "input", "output"):
            out.pop(key)
        return out


def window_seed(seed: int, recording_id: str, window_index: int) -> int:
    digest = hashlib.blake2b(f"{seed}\0{recording_id}\0{window_index}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little") >> 1


@dataclass
class ProcessedWindow:
    data: np.ndarray
    recording_id: str
    window_index: int
    channel_names: tuple[str, ...]
    fs: float


@dataclass
class Dropped:
    recording_id: str
    window_index: int
    reasons: tuple[str, ...]


@dataclass(frozen=True)
class _Reject:
    reasons: tuple[str, ...]


# --------------------------------------------------------------------- preparation


def harmonize_rates(rec: RawRecording) -> RawRecording:
    """Resample every channel to the recording's modal rate."""
    if rec.is_uniform:
        return rec
    rows = [
        row if ch.fs == rec.fs else resample(row, ch.fs, rec.fs)
        for row, ch in zip(rec.data, rec.channels)
    ]
    n = min(len(r) for r in rows)
    return replace(rec, data=np.vstack([r[:n] for r in rows]))


def sanitize_nonfinite(rec: RawRecording) -> RawRecording:
    """Zero non-finite samples and flag the affected channels."""
    bad = ~np.all(np.isfinite(rec.data), axis=1)
    if not bad.any():
        return rec
    data = np.where(np.isfinite(rec.data), rec.data, 0.0)
    channels = [replace(ch, had_nonfinite=True) if b else ch for ch, b in zip(rec.channels, bad)]
    return replace(rec, data=data, channels=channels)


def prepare_recording(ref: RecordingRef, montage: Montage, sink: EventSink) -> RawRecording:
    rec = read_edf(ref.path, recording_id=ref.recording_id)
    if not rec.is_uniform:
        rates = sorted({ch.fs for ch in rec.channels})
        rec = harmonize_rates(rec)
        sink.emit("ingest", "info", resampled_to=rec.fs, rates=rates)
    rec = sanitize_nonfinite(rec)
    flagged = [ch.raw_label for ch in rec.channels if ch.had_nonfinite]
    if flagged:
        sink.emit("ingest", "flagged", nonfinite=flagged)
    montage_events = []
    rec = apply_montage(rec, montage, events=montage_events)
    for action, payload in montage_events:
        if action == "dropped":
            sink.emit("montage", "info", dropped_channels=payload["channels"])
        else:
            sink.emit("montage", action, **payload)
    return rec


# --------------------------------------------------------------------- window chain


def _n_good_targets(names, bad, montage: Montage) -> int:
    return sum(1 for n in names if n in montage.target_order and n not in bad)


def _main_filters(x: np.ndarray, fs: float) -> np.ndarray:
    x = detrend_channels(x)
    x = fir_filter(x, fs, FilterSpec("highpass", HIGHPASS_HZ))
    lp = FilterSpec("lowpass", LOWPASS_HZ)
    if LOWPASS_HZ + lp.transition / 2 < fs / 2:
        x = fir_filter(x, fs, lp)
    return x


def _run_chain(
    x: np.ndarray,
    fs: float,
    channels,
    cfg: PipelineConfig,
    montage: Montage,
    seed: int,
    sink: EventSink,
    gated: bool,
    label_override=None,
):
    """Shared processing chain. Returns ``(data, names)`` or a :class:`_Reject`."""
    names = [ch.name for ch in channels]
    positions = np.array([ch.position for ch in channels], dtype=float)
    nonfinite = np.array([ch.had_nonfinite for ch in channels])
    n_target = len(montage.target_order)
    th = cfg.thresholds

    if gated:
        quick = detect_bad_channels(x, fs, positions, with_ransac=False, nonfinite=nonfinite)
        quick_bad = sorted(quick.union)
        sink.emit("qa_badchan", "flagged" if quick_bad else "info",
                  channels=[names[i] for i in quick_bad], by_criterion=quick.named(names))
        filtered = qa_filter(x, fs, cfg.line_freq)
        metrics = compute_metrics(filtered, quick_bad, th)
        decision = gate(metrics, th)
        n_good = _n_good_targets(names, {names[i] for i in quick_bad}, montage)
        count = min_channel_check(n_good, n_target, th.min_channel_frac)
        reasons = decision.reasons + count.reasons
        sink.emit("qa", "info", metrics=metrics.as_dict(), good_target_channels=n_good)
        if reasons:
            return _Reject(reasons)

    x, zreport = zapline_iterative(x, fs, cfg.zapline)
    sink.emit("zapline", "info", **zreport.as_dict())

    report = detect_bad_channels(
        x, fs, positions, with_ransac=cfg.with_ransac, seed=seed, nonfinite=nonfinite,
        ransac=cfg.ransac,
    )
    bad = sorted(report.union)
    sink.emit("badchan", "flagged" if bad else "info",
              channels=[names[i] for i in bad], by_criterion=report.named(names),
              skipped=report.skipped)
    n_orig = len(names)
    if gated:
        n_good = _n_good_targets(names, {names[i] for i in bad}, montage)
        count = min_channel_check(n_good, n_target, th.min_channel_frac)
        if not count:
            return _Reject(count.reasons)
    good = [i for i in range(n_orig) if i not in set(bad)]
    if len(good) < 2:
        return _Reject(("too_few_channels",))
    x = x[good]
    names = [names[i] for i in good]
    positions = positions[good]

    x = _main_filters(x, fs)
    sink.emit("filter", "info", highpass_hz=HIGHPASS_HZ, lowpass_hz=LOWPASS_HZ, detrend_order=1)
    common = x.mean(axis=0)
    x = average_reference(x)
    sink.emit("reference", "info", channels=names)

    post_bad: list[str] = []
    if cfg.with_ica:
        model = ica_mod.fit_ica(x, seed=seed)
        labels = ica_mod.label_components(model, x, fs, cfg.line_freq, names)
        if label_override:
            labels = [label_override.get(k, lab) for k, lab in enumerate(labels)]
        x_clean, excluded = ica_mod.exclude_and_reconstruct(x, model, labels)
        components = [
            {"index": k, "class": lab.label, "prob": round(lab.prob, 6)}
            for k, lab in enumerate(labels)
        ]
        sink.emit("ica", "info", components=components, n_components=model.n_components,
                  rank_reduced=model.n_components < len(names), converged=model.converged,
                  n_iters=model.n_iters)
        if excluded:
            sink.emit("ica", "excluded", components=[components[k] for k in excluded])
        if gated:
            decision = ica_mod.ica_drop_check(len(excluded), model.n_components,
                                              cfg.max_excluded_frac)
            if not decision:
                return _Reject(decision.reasons)
        x = x_clean
        # detect in the original reference: averaging couples every channel to every other
        post = detect_bad_channels(x + common, fs, positions, with_ransac=cfg.with_ransac,
                                   seed=seed, ransac=cfg.ransac)
        post_bad = [names[i] for i in sorted(post.union)]
        sink.emit("badchan_post", "flagged" if post_bad else "info", channels=post_bad,
                  by_criterion=post.named(names))

    if gated:
        metrics = compute_metrics(x, [names.index(n) for n in post_bad], th)
        metrics = replace(metrics, rbc=(len(bad) + len(post_bad)) / n_orig)
        decision = gate(metrics, th)
        n_good = _n_good_targets(names, set(post_bad), montage)
        count = min_channel_check(n_good, n_target, th.min_channel_frac)
        sink.emit("qa_post", "info", metrics=metrics.as_dict())
        reasons = tuple(f"post_{r}" for r in decision.reasons) + count.reasons
        if reasons:
            return _Reject(reasons)

    interp_events = []
    out, interpolated = finalize_channels(x, names, set(post_bad), montage, events=interp_events)
    for action, payload in interp_events:
        if action == "interpolated":
            why = {n: ("bad" if n in post_bad or n in _names_of(channels, bad) else "missing")
                   for n in payload["channels"]}
            sink.emit("interpolate", "interpolated", channels=payload["channels"], reasons=why)
        else:
            sink.emit("interpolate", "info", dropped_extra=sorted(payload["channels"]))
    out = resample(out, fs, cfg.target_fs)
    sink.emit("resample", "info", fs_in=fs, fs_out=cfg.target_fs)
    return out, list(montage.target_order)


def _names_of(channels, idx):
    return {channels[i].name for i in idx}


def process_window_pretrain(
    win: Window, cfg: PipelineConfig, montage: Montage | None = None, label_override=None,
    sink: EventSink | None = None,
):
    """Full pretrain chain on one window.

    Returns a :class:`ProcessedWindow` or :class:`Dropped`; every decision goes
    to ``sink``. Hard errors in any stage drop only this window.
    """
    montage = montage or load_montage(cfg.montage)
    sink = sink or EventSink(win.recording_id, win.window_index)
    seed = window_seed(cfg.seed, win.recording_id, win.window_index)
    try:
        result = _run_chain(win.data, win.fs, win.channels, cfg, montage, seed, sink, True,
                            label_override)
    except (SpeedError, ValueError, np.linalg.LinAlgError) as exc:
        logger.debug("window %s/%d failed", win.recording_id, win.window_index, exc_info=True)
        result = (f"error:{type(exc).__name__}",)
        sink.emit("output", "dropped", reasons=list(result), detail=str(exc))
        return Dropped(win.recording_id, win.window_index, result)
    if isinstance(result, _Reject):
        sink.emit("output", "dropped", reasons=list(result.reasons))
        return Dropped(win.recording_id, win.window_index, result.reasons)
    data, names = result
    expected = (len(montage.target_order), int(round(cfg.window_secs * cfg.target_fs)))
    if data.shape != expected or not np.all(np.isfinite(data)):
        reasons = ("error:bad_output_shape",) if data.shape != expected else ("error:nonfinite",)
        sink.emit("output", "dropped", reasons=list(reasons))
        return Dropped(win.recording_id, win.window_index, reasons)
    sink.emit("output", "kept", shape=list(data.shape))
    return ProcessedWindow(data, win.recording_id, win.window_index, tuple(names), cfg.target_fs)


def process_downstream(
    rec: RawRecording, cfg: PipelineConfig, montage: Montage | None = None, label_override=None,
    sink: EventSink | None = None,
):
    """Crop to the event span and run the chain with every gate disabled."""
    montage = montage or load_montage(cfg.montage)
    sink = sink or EventSink(rec.recording_id, 0)
    cropped = crop_downstream(rec)
    sink.emit("crop", "info", duration_s=cropped.duration, n_events=len(cropped.annotations))
    seed = window_seed(cfg.seed, rec.recording_id, 0)
    result = _run_chain(cropped.data, cropped.fs, cropped.channels, cfg, montage, seed,
                        sink, False, label_override)
    if isinstance(result, _Reject):
        sink.emit("output", "dropped", reasons=list(result.reasons))
        return Dropped(rec.recording_id, 0, result.reasons)
    data, names = result
    sink.emit("output", "kept", shape=list(data.shape))
    return ProcessedWindow(data, rec.recording_id, 0, tuple(names), cfg.target_fs)


# --------------------------------------------------------------------- workers

_STATE: dict = {}


def _init_worker(cfg: PipelineConfig, labels):
    _STATE.clear()
    _STATE["cfg"] = cfg
    _STATE["montage"] = load_montage(cfg.montage)
    _STATE["labels"] = labels
    _STATE["limits"] = threadpool_limits(1)
    logging.getLogger("speed").setLevel(logging.WARNING)


def _cached_recording(ref: RecordingRef):
    cached = _STATE.get("rec")
    if cached is not None and cached[0] == ref:
        return cached[1]
    sink = EventSink(ref.recording_id)
    rec = prepare_recording(ref, _STATE["montage"], sink)
    _STATE["rec"] = (ref, rec)
    return rec


def window_at(rec: RawRecording, window_secs: float, index: int) -> Window:
    """The ``index``-th window of :func:`window_pretrain` without cutting the others."""
    size = int(round(window_secs * rec.fs))
    if (index + 1) * size > rec.n_samples:
        raise IndexError(f"window {index} out of range")
    return Window(
        data=rec.data[:, index * size : (index + 1) * size].copy(),
        fs=rec.fs,
        recording_id=rec.recording_id,
        window_index=index,
        t_start=index * size / rec.fs,
        channels=list(rec.channels),
    )


def _overrides_for(recording_id, window_index):
    labels = _STATE.get("labels") or {}
    return {c: lab for (r, w, c), lab in labels.items() if r == recording_id and w == window_index}


def _prepare_task(ref: RecordingRef):
    """Parse one recording; report how many work items it yields."""
    cfg = _STATE["cfg"]
    sink = EventSink(ref.recording_id)
    try:
        rec = prepare_recording(ref, _STATE["montage"], sink)
        if cfg.mode == "pretrain":
            size = int(round(cfg.window_secs * rec.fs))
            count = rec.n_samples // size
            if count == 0:
                raise RecordingTooShort(f"{rec.duration:.2f} s < {cfg.window_secs} s")
            sink.emit("segment", "info", n_windows=count, dropped_tail_samples=rec.n_samples - count * size)
        else:
            count = 1
        return ref, count, sink.events
    except (SpeedError, OSError, ValueError) as exc:
        sink.emit("ingest", "info", error=f"{type(exc).__name__}: {exc}")
        return ref, 0, sink.events


def _window_task(item):
    ref, index = item
    cfg = _STATE["cfg"]
    sink = EventSink(ref.recording_id, index)
    try:
        rec = _cached_recording(ref)
        if cfg.mode == "pretrain":
            win = window_at(rec, cfg.window_secs, index)
            result = process_window_pretrain(win, cfg, _STATE["montage"],
                                             _overrides_for(ref.recording_id, index), sink)
        else:
            result = process_downstream(rec, cfg, _STATE["montage"],
                                        _overrides_for(ref.recording_id, 0), sink)
    except Exception as exc:  # crash isolation: one bad item never stops the run
        sink.emit("output", "dropped", reasons=[f"error:{type(exc).__name__}"],
                  detail="".join(traceback.format_exception_only(type(exc), exc)).strip())
        result = Dropped(ref.recording_id, index, (f"error:{type(exc).__name__}",))
    if isinstance(result, ProcessedWindow):
        result.data = result.data.astype("<f4")
    return result, sink.events


# --------------------------------------------------------------------- output


@dataclass
class OutputManifest:
    format_version: int
    channel_order: list[str]
    fs: float
    window_shape: list[int] | None
    windows: list[dict]
    config: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


class OutputWriter:
    """Streams windows into ``windows.bin`` (little-endian float32, channel-major)."""

    def __init__(self, out_dir, config: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.dir / "windows.bin", "wb")
        self.offset = 0
        self.entries: list[dict] = []
        self.channel_order: list[str] = []
        self.fs = 0.0
        self.config = config

    def add(self, win: ProcessedWindow):
        data = np.ascontiguousarray(win.data, dtype="<f4")
        if self.entries:
            if list(win.channel_names) != self.channel_order:
                raise ValueError("channel order changed between windows")
        else:
            self.channel_order = list(win.channel_names)
            self.fs = float(win.fs)
        raw = data.tobytes()
        self._fh.write(raw)
        self.entries.append(
            {
                "recording_id": win.recording_id,
                "window_index": win.window_index,
                "offset": self.offset,
                "nbytes": len(raw),
                "shape": list(data.shape),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        self.offset += len(raw)

    def close(self) -> OutputManifest:
        self._fh.close()
        shapes = {tuple(e["shape"]) for e in self.entries}
        manifest = OutputManifest(
            format_version=FORMAT_VERSION,
            channel_order=self.channel_order,
            fs=self.fs,
            window_shape=list(shapes.pop()) if len(shapes) == 1 else None,
            windows=self.entries,
            config=self.config,
        )
        (self.dir / "index.json").write_text(manifest.to_json() + "\n")
        return manifest


def write_output(windows, out_dir, config: dict | None = None) -> OutputManifest:
    writer = OutputWriter(out_dir, config or {})
    for win in windows:
        writer.add(win)
    return writer.close()


def read_window(out_dir, entry: dict) -> np.ndarray:
    with open(Path(out_dir) / "windows.bin", "rb") as fh:
        fh.seek(entry["offset"])
        raw = fh.read(entry["nbytes"])
    return np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])


def verify_output(out_dir) -> bool:
    manifest = json.loads((Path(out_dir) / "index.json").read_text())
    return all(
        hashlib.sha256(read_window(out_dir, e).tobytes()).hexdigest() == e["sha256"]
        for e in manifest["windows"]
    )


# --------------------------------------------------------------------- run


@dataclass
class RunSummary:
    n_recordings: int
    n_items: int
    kept: int
    dropped: int
    summary: dict
    output: str

    @property
    def successes(self) -> int:
        return self.kept


def _map(fn, items, jobs, cfg, labels):
    if jobs == 1:
        _init_worker(cfg, labels)
        try:
            yield from map(fn, items)
        finally:
            _STATE.pop("limits").restore_original_limits()
        return
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(cfg, labels)) as pool:
        yield from pool.map(fn, items)


def run_pipeline(cfg: PipelineConfig) -> RunSummary:
    """Process every EDF under ``cfg.input`` into ``cfg.output``.

    Work items are distributed over ``cfg.jobs`` processes; results are
    consumed in (recording, window) order so the written bytes do not depend
    on scheduling.
    """
    if cfg.input is None or cfg.output is None:
        raise ValueError("input and output paths are required")
    refs = scan_corpus(cfg.input)
    labels = ica_mod.read_label_file(cfg.ic_labels) if cfg.ic_labels else None
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    batches = []
    items = []
    for ref, count, events in _map(_prepare_task, refs, cfg.jobs, cfg, labels):
        batches.append(events)
        items.extend((ref, k) for k in range(count))

    writer = OutputWriter(out_dir, cfg.snapshot())
    kept = dropped = 0
    for result, events in _map(_window_task, items, cfg.jobs, cfg, labels):
        batches.append(events)
        if isinstance(result, ProcessedWindow):
            writer.add(result)
            kept += 1
        else:
            dropped += 1
    writer.close()

    events = merge_events(batches)
    write_log(events, out_dir / "log.jsonl")
    summary = summarize_events(events)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    logger.info("%d recordings, %d windows kept, %d dropped", len(refs), kept, dropped)
    return RunSummary(len(refs), len(items), kept, dropped, summary, str(out_dir))


def expected_window_samples(cfg: PipelineConfig) -> int:
    return int(math.floor(cfg.window_secs * cfg.target_fs + 0.5))
