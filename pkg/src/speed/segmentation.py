"""Fixed-length windowing (pretrain mode) and event-span cropping (downstream mode)."""

from __future__ import annotations

import logging
from dataclasses import replace

from .errors import NoEvents, RecordingTooShort
from .recording import Annotation, RawRecording, Window

logger = logging.getLogger(__name__)


def n_windows(n_samples: int, fs: float, window_secs: float) -> int:
    return n_samples // int(round(window_secs * fs))


def window_pretrain(rec: RawRecording, window_secs: float = 60.0) -> list[Window]:
    """Cut ``rec`` into consecutive non-overlapping windows of ``window_secs``.

    A trailing remainder shorter than one window is discarded. Recordings
    shorter than one window raise :class:`RecordingTooShort`; the caller
    decides whether that is fatal.
    """
    if window_secs <= 0:
        raise ValueError("window_secs must be positive")
    size = int(round(window_secs * rec.fs))
    count = rec.n_samples // size
    if count == 0:
        raise RecordingTooShort(
            f"{rec.recording_id}: {rec.duration:.2f} s is shorter than one {window_secs} s window"
        )
    remainder = rec.n_samples - count * size
    if remainder:
        logger.debug("%s: dropping %d trailing samples", rec.recording_id, remainder)
    return [
        Window(
            data=rec.data[:, k * size : (k + 1) * size].copy(),
            fs=rec.fs,
            recording_id=rec.recording_id,
            window_index=k,
            t_start=k * size / rec.fs,
            channels=list(rec.channels),
        )
        for k in range(count)
    ]


def crop_bounds(annotations: list[Annotation], fs: float, n_samples: int) -> tuple[int, int]:
    """Sample range ``[start, stop)`` from the first onset to the latest event end."""
    if not annotations:
        raise NoEvents("downstream mode requires at least one event annotation")
    first = min(a.onset for a in annotations)
    last = max(a.onset + a.duration for a in annotations)
    start = int(round(first * fs))
    stop = min(int(round(last * fs)), n_samples)
    return start, max(stop, start)


def crop_downstream(rec: RawRecording) -> RawRecording:
    """Remove data before the first event and after the end of the last one."""
    start, stop = crop_bounds(rec.annotations, rec.fs, rec.n_samples)
    t0 = min(a.onset for a in rec.annotations)
    annotations = [
        Annotation(max(a.onset - t0, 0.0), a.duration, a.text) for a in rec.annotations
    ]
    return replace(rec, data=rec.data[:, start:stop].copy(), annotations=annotations)
