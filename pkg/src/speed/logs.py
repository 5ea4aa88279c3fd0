"""Structured per-decision log records and their summary."""

from __future__ import annotations

import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import MalformedLog

STAGES = (
    "ingest",
    "montage",
    "segment",
    "crop",
    "qa_badchan",
    "qa",
    "zapline",
    "badchan",
    "filter",
    "reference",
    "ica",
    "badchan_post",
    "qa_post",
    "interpolate",
    "resample",
    "output",
)
STAGE_RANK = {name: i for i, name in enumerate(STAGES)}
ACTIONS = ("kept", "dropped", "flagged", "interpolated", "excluded", "info")
CERTAINTY_BUCKETS = ((0.0, 0.5), (0.5, 0.8), (0.8, 1.0000001))


@dataclass
class LogEvent:
    recording_id: str
    window_index: int | None
    stage: str
    action: str
    payload: dict = field(default_factory=dict)
    wall_time: float = field(default_factory=time.time)
    seq: int = 0

    def __post_init__(self):
        if self.stage not in STAGE_RANK:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.action == "dropped" and not self.payload.get("reasons"):
            raise ValueError("a drop event needs at least one reason")

    def sort_key(self):
        win = -1 if self.window_index is None else self.window_index
        return (self.recording_id, win, STAGE_RANK[self.stage], self.seq)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_jsonable)

    @classmethod
    def from_json(cls, line: str) -> LogEvent:
        return cls(**json.loads(line))


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class EventSink:
    """Collects events for one work item, numbering them in emission order."""

    def __init__(self, recording_id: str, window_index: int | None = None):
        self.recording_id = recording_id
        self.window_index = window_index
        self.events: list[LogEvent] = []

    def emit(self, stage: str, action: str, **payload) -> LogEvent:
        event = LogEvent(
            self.recording_id, self.window_index, stage, action, payload, seq=len(self.events)
        )
        self.events.append(event)
        return event


def merge_events(batches) -> list[LogEvent]:
    """Deterministic order independent of completion order."""
    events = [e for batch in batches for e in batch]
    return sorted(events, key=LogEvent.sort_key)


def write_log(events, path) -> None:
    with open(path, "w") as fh:
        for event in events:
            fh.write(event.to_json() + "\n")


def read_log(path) -> list[LogEvent]:
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(LogEvent.from_json(line))
            except (ValueError, TypeError) as exc:
                raise MalformedLog(f"{path}:{lineno}: {exc}") from None
    return events


def _bucket(prob: float) -> str:
    for lo, hi in CERTAINTY_BUCKETS:
        if lo <= prob < hi:
            return f"{lo:.1f}-{min(hi, 1.0):.1f}"
    return "invalid"


def summarize_events(events) -> dict:
    """Counts behind the interpolated-channel and IC-class distribution plots."""
    interpolated = Counter()
    interp_reason = Counter()
    ic_classes = Counter()
    ic_buckets: dict[str, Counter] = {}
    ic_excluded = Counter()
    drop_reasons = Counter()
    kept = dropped = 0
    for ev in events:
        if ev.action == "interpolated":
            for name in ev.payload.get("channels", []):
                interpolated[name] += 1
            for name, why in ev.payload.get("reasons", {}).items():
                interp_reason[f"{name}:{why}"] += 1
        elif ev.stage == "ica" and ev.action == "info" and "components" in ev.payload:
            for comp in ev.payload["components"]:
                ic_classes[comp["class"]] += 1
                ic_buckets.setdefault(comp["class"], Counter())[_bucket(comp["prob"])] += 1
        elif ev.stage == "ica" and ev.action == "excluded":
            for comp in ev.payload.get("components", []):
                ic_excluded[comp["class"]] += 1
        if ev.window_index is None:
            continue
        if ev.stage == "output" and ev.action == "kept":
            kept += 1
        elif ev.action == "dropped" and ev.payload.get("terminal", True):
            dropped += 1
            for reason in ev.payload["reasons"]:
                drop_reasons[reason] += 1
    return {
        "windows": {"kept": kept, "dropped": dropped, "total": kept + dropped},
        "drop_reasons": dict(sorted(drop_reasons.items())),
        "interpolated_channels": dict(sorted(interpolated.items())),
        "interpolation_reasons": dict(sorted(interp_reason.items())),
        "ic_classes": dict(sorted(ic_classes.items())),
        "ic_certainty": {k: dict(sorted(v.items())) for k, v in sorted(ic_buckets.items())},
        "ic_excluded": dict(sorted(ic_excluded.items())),
    }


def summarize_log(path, plots_dir=None) -> dict:
    report = summarize_events(read_log(path))
    if plots_dir is not None:
        plot_summary(report, plots_dir)
    return report


def plot_summary(report: dict, out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key, title in (
        ("interpolated_channels", "Interpolated channels"),
        ("ic_classes", "IC classes"),
        ("drop_reasons", "Drop reasons"),
    ):
        counts = report[key]
        fig, ax = plt.subplots(figsize=(8, 3.5))
        ax.bar(list(counts), list(counts.values()), color="0.4")
        ax.set_title(title)
        ax.set_ylabel("count")
        ax.tick_params(axis="x", rotation=45)
        fig.tight_layout()
        path = out_dir / f"{key}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
