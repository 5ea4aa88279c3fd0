"""EDF / EDF+ reading and corpus discovery."""

from __future__ import annotations

import datetime
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DiscontinuousEdf,
    EmptyRecording,
    MalformedHeader,
    MalformedTal,
    SizeMismatch,
)
from .recording import Annotation, ChannelInfo, RawRecording

logger = logging.getLogger(__name__)

ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of the fixed part of the header
_MAIN_FIELDS = [
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_data_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
]
_SIGNAL_FIELDS = [
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("phys_min", 8),
    ("phys_max", 8),
    ("dig_min", 8),
    ("dig_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
]

_UNIT_SCALE = {"uv": 1.0, "µv": 1.0, "μv": 1.0, "mv": 1e3, "v": 1e6, "nv": 1e-3}


@dataclass(frozen=True)
class EdfHeader:
    version: str
    start_datetime: datetime.datetime | None
    n_data_records: int
    record_duration: float
    n_signals: int
    header_bytes: int
    reserved: str
    patient: str = ""
    recording: str = ""

    @property
    def is_edfplus(self) -> bool:
        return self.reserved.startswith("EDF+")


@dataclass(frozen=True)
class SignalHeader:
    label: str
    physical_dim: str
    phys_min: float
    phys_max: float
    dig_min: int
    dig_max: int
    samples_per_record: int
    transducer: str = ""
    prefilter: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label.strip() == ANNOTATION_LABEL

    @property
    def gain(self) -> float:
        return (self.phys_max - self.phys_min) / (self.dig_max - self.dig_min)

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return (digital.astype(np.float64) - self.dig_min) * self.gain + self.phys_min


def _text(raw: bytes) -> str:
    return raw.decode("latin-1").strip()


def _number(raw: bytes, name: str, kind=float):
    txt = _text(raw)
    try:
        value = float(txt)
    except ValueError:
        raise MalformedHeader(f"field {name!r} is not numeric: {txt!r}") from None
    if kind is int:
        if not value.is_integer():
            raise MalformedHeader(f"field {name!r} is not an integer: {txt!r}")
        return int(value)
    return value


def _parse_start(date: str, time: str) -> datetime.datetime | None:
    try:
        day, month, year = (int(p) for p in date.split("."))
        hour, minute, second = (int(p) for p in time.split("."))
    except ValueError:
        logger.warning("unparseable start date/time %r %r", date, time)
        return None
    year += 1900 if year >= 85 else 2000
    try:
        return datetime.datetime(year, month, day, hour, minute, second)
    except ValueError:
        logger.warning("invalid start date/time %r %r", date, time)
        return None


def _read_fields(buf: bytes, offset: int, fields, n: int = 1):
    """Decode a block of fixed-width ASCII fields.

    Signal fields are stored column-wise: all labels, then all transducers, ...
    so each field spans ``n`` consecutive slots.
    """
    out = [dict() for _ in range(n)]
    for name, width in fields:
        for i in range(n):
            out[i][name] = buf[offset : offset + width]
            offset += width
    return out, offset


def parse_header(buf: bytes) -> tuple[EdfHeader, list[SignalHeader]]:
    if len(buf) < 256:
        raise MalformedHeader("file shorter than the 256-byte fixed header")
    (main,), off = _read_fields(buf, 0, _MAIN_FIELDS)
    n_signals = _number(main["n_signals"], "n_signals", int)
    if n_signals < 1:
        raise MalformedHeader(f"n_signals must be >= 1, got {n_signals}")
    if len(buf) < 256 * (n_signals + 1):
        raise MalformedHeader("file shorter than its signal headers")
    header = EdfHeader(
        version=_text(main["version"]),
        start_datetime=_parse_start(_text(main["startdate"]), _text(main["starttime"])),
        n_data_records=_number(main["n_data_records"], "n_data_records", int),
        record_duration=_number(main["record_duration"], "record_duration"),
        n_signals=n_signals,
        header_bytes=_number(main["header_bytes"], "header_bytes", int),
        reserved=_text(main["reserved"]),
        patient=_text(main["patient"]),
        recording=_text(main["recording"]),
    )
    if header.record_duration <= 0:
        raise MalformedHeader(f"record duration must be > 0, got {header.record_duration}")
    if header.n_data_records < -1:
        raise MalformedHeader(f"invalid n_data_records {header.n_data_records}")

    raw_sigs, _ = _read_fields(buf, off, _SIGNAL_FIELDS, n_signals)
    signals = []
    for raw in raw_sigs:
        sig = SignalHeader(
            label=_text(raw["label"]),
            physical_dim=_text(raw["physical_dim"]),
            phys_min=_number(raw["phys_min"], "phys_min"),
            phys_max=_number(raw["phys_max"], "phys_max"),
            dig_min=_number(raw["dig_min"], "dig_min", int),
            dig_max=_number(raw["dig_max"], "dig_max", int),
            samples_per_record=_number(raw["samples_per_record"], "samples_per_record", int),
            transducer=_text(raw["transducer"]),
            prefilter=_text(raw["prefilter"]),
        )
        if sig.dig_max <= sig.dig_min:
            raise MalformedHeader(f"{sig.label}: dig_max must exceed dig_min")
        if sig.phys_max == sig.phys_min:
            raise MalformedHeader(f"{sig.label}: phys_max equals phys_min")
        if sig.samples_per_record < 1:
            raise MalformedHeader(f"{sig.label}: samples_per_record must be >= 1")
        signals.append(sig)
    return header, signals


def read_annotations(tal_bytes: bytes) -> list[Annotation]:
    """Decode an EDF+ time-stamped annotation list.

    Timekeeping TALs (no text) are dropped; the result is sorted by onset.
    """
    annotations = []
    for tal in bytes(tal_bytes).split(b"\x00"):
        if not tal:
            continue
        parts = tal.split(b"\x14")
        if len(parts) < 2 or not parts[0][:1] in (b"+", b"-"):
            raise MalformedTal(f"TAL does not start with a signed onset: {tal[:40]!r}")
        stamp, texts = parts[0], parts[1:]
        onset_raw, _, duration_raw = stamp.partition(b"\x15")
        try:
            onset = float(onset_raw)
            duration = float(duration_raw) if duration_raw else 0.0
        except ValueError:
            raise MalformedTal(f"bad onset/duration in {stamp!r}") from None
        for text in texts:
            text = text.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            try:
                annotations.append(Annotation(onset, duration, text))
            except ValueError as exc:
                raise MalformedTal(str(exc)) from None
    annotations.sort(key=lambda a: a.onset)
    return annotations


def parse_edf(stream, recording_id: str = "") -> RawRecording:
    """Parse an EDF or EDF+C byte stream into a calibrated :class:`RawRecording`.

    Parameters
    ----------
    stream : binary file-like or bytes
        The complete file contents.
    recording_id : str
        Stable key carried through the pipeline.

    Returns
    -------
    RawRecording
        Samples in microvolts. If signals have different sampling rates the
        data is returned unharmonized (see :class:`RawRecording`).
    """
    buf = stream if isinstance(stream, (bytes, bytearray, memoryview)) else stream.read()
    buf = bytes(buf)
    header, signals = parse_header(buf)
    if header.reserved.startswith("EDF+D"):
        raise DiscontinuousEdf("EDF+D (discontinuous) files are not supported")
    expected_header = 256 * (header.n_signals + 1)
    if header.header_bytes != expected_header:
        raise MalformedHeader(
            f"header_bytes field says {header.header_bytes}, layout needs {expected_header}"
        )

    record_samples = sum(s.samples_per_record for s in signals)
    record_bytes = 2 * record_samples
    payload = len(buf) - expected_header
    n_records = header.n_data_records
    if n_records == -1:
        if payload % record_bytes:
            raise SizeMismatch("data section is not a whole number of records")
        n_records = payload // record_bytes
    elif payload != n_records * record_bytes:
        raise SizeMismatch(
            f"header implies {n_records * record_bytes} data bytes, file has {payload}"
        )
    data_signals = [i for i, s in enumerate(signals) if not s.is_annotation]
    if n_records == 0 or not data_signals:
        raise EmptyRecording("no data records or no data signals")

    raw = np.frombuffer(buf, dtype="<i2", offset=expected_header).reshape(
        n_records, record_samples
    )
    offsets = np.concatenate([[0], np.cumsum([s.samples_per_record for s in signals])])

    annotations: list[Annotation] = []
    rows, channels = [], []
    for i, sig in enumerate(signals):
        block = raw[:, offsets[i] : offsets[i + 1]]
        if sig.is_annotation:
            annotations.extend(read_annotations(block.tobytes()))
            continue
        values = sig.to_physical(block.reshape(-1))
        values *= _UNIT_SCALE.get(sig.physical_dim.lower(), 1.0)
        rows.append(values)
        channels.append(
            ChannelInfo(raw_label=sig.label, fs=sig.samples_per_record / header.record_duration)
        )
    annotations.sort(key=lambda a: a.onset)

    rates = {ch.fs for ch in channels}
    if len(rates) == 1:
        data = np.vstack(rows)
        fs = rates.pop()
    else:
        data = rows
        values, counts = np.unique([ch.fs for ch in channels], return_counts=True)
        fs = float(values[np.argmax(counts)])
        logger.info("%s: mixed sampling rates %s", recording_id, sorted(rates))
    return RawRecording(
        data=data, fs=fs, channels=channels, annotations=annotations, recording_id=recording_id
    )


def read_edf(path, recording_id: str | None = None) -> RawRecording:
    path = Path(path)
    with open(path, "rb") as fh:
        return parse_edf(fh, recording_id=recording_id if recording_id is not None else path.name)


@dataclass(frozen=True)
class RecordingRef:
    path: Path
    recording_id: str


def scan_corpus(root) -> list[RecordingRef]:
    """Find every ``.edf`` file below ``root``, in lexicographic order of relative path."""
    root = Path(root)
    if not root.is_dir():
        raise OSError(f"corpus root {root} is not a directory")
    refs = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fname in filenames:
            path = Path(dirpath) / fname
            if path.suffix.lower() != ".edf":
                logger.info("skipping non-EDF file %s", path)
                continue
            refs.append(RecordingRef(path, path.relative_to(root).as_posix()))
    refs.sort(key=lambda r: r.recording_id)
    return refs
