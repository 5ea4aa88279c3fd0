"""Synthetic EEG with known ground truth, and an EDF+ writer for round-trip tests."""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import TARGET_1020, Montage, default_montage
from .errors import RangeOverflow
from .recording import Annotation, ChannelInfo, RawRecording

FAULT_KINDS = ("flat", "deviant", "hf_noise", "shuffled", "line", "blink", "muscle", "heart")

_TUEG_LABEL = "EEG {}-REF"


@dataclass(frozen=True)
class Fault:
    kind: str
    channels: tuple[str, ...] = ()
    strength: float = 1.0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    name: str
    n_channels: int = 19
    fs: float = 250.0
    duration: float = 120.0
    n_sources: int = 5
    source_uv: float = 12.0
    background_uv: float = 2.0
    reference_uv: float = 15.0
    faults: tuple[Fault, ...] = ()
    missing: tuple[str, ...] = ()
    extra_labels: tuple[str, ...] = ()
    events: tuple[tuple[float, float, str], ...] = ()
    line_freq: float = 60.0
    seed: int = 0


@dataclass
class GroundTruth:
    """What was injected; enough to score every detector."""

    fault_channels: dict[str, list[str]] = field(default_factory=dict)
    mixing: np.ndarray | None = None
    sources: np.ndarray | None = None
    line_amplitude_uv: float = 0.0
    line_patterns: np.ndarray | None = None
    artifact_sources: dict[str, np.ndarray] = field(default_factory=dict)
    artifact_patterns: dict[str, np.ndarray] = field(default_factory=dict)
    missing: list[str] = field(default_factory=list)

    @property
    def bad_channels(self) -> set[str]:
        out = set()
        for kind in ("flat", "deviant", "hf_noise", "shuffled"):
            out |= set(self.fault_channels.get(kind, ()))
        return out


def _harmonic_pattern(pos: np.ndarray, rng, degree2_weight: float = 0.0) -> np.ndarray:
    """Random low-order spherical-harmonic field at ``pos`` (max |value| = 1)."""
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    field_ = rng.uniform(-1, 1) + 0.5 * pos @ direction
    if degree2_weight:
        q = rng.standard_normal((3, 3))
        q = q + q.T
        q -= np.trace(q) / 3 * np.eye(3)
        field_ = field_ + degree2_weight * np.einsum("ci,ij,cj->c", pos, q, pos) / np.abs(q).max()
    return field_ / np.abs(field_).max()


def shaped_noise(rng, n: int, fs: float, shape) -> np.ndarray:
    """Gaussian noise with amplitude spectrum ``shape(freqs)``, unit variance."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec *= shape(freqs)
    out = np.fft.irfft(spec, n=n)
    std = out.std()
    return out / std if std > 0 else out


def pink(f):
    return 1.0 / np.sqrt(np.maximum(f, 0.5))


def _one_over_f(f):
    return 1.0 / np.maximum(f, 1.0)


def _brain_source(rng, n, fs):
    peak = rng.uniform(8.0, 12.0)
    width = rng.uniform(1.0, 2.0)

    def shape(f):
        return _one_over_f(f) + 0.4 * np.exp(-0.5 * ((f - peak) / width) ** 2)

    return shaped_noise(rng, n, fs, shape)


def _blink(rng, n, fs):
    t = np.arange(n) / fs
    out = np.zeros(n)
    onset = rng.uniform(0.5, 2.0)
    while onset < t[-1]:
        out += np.exp(-0.5 * ((t - onset) / 0.08) ** 2)
        onset += rng.uniform(2.0, 4.0)
    return out


def _heart(rng, n, fs, rate_hz=1.2):
    t = np.arange(n) / fs
    out = np.zeros(n)
    beat = 0.3
    while beat < t[-1]:
        out += np.exp(-0.5 * ((t - beat) / 0.012) ** 2)
        out -= 0.25 * np.exp(-0.5 * ((t - beat - 0.04) / 0.02) ** 2)
        beat += (1.0 / rate_hz) * rng.uniform(0.97, 1.03)
    return out


def _muscle(rng, n, fs):
    hi = min(100.0, 0.45 * fs)
    burst = shaped_noise(rng, n, fs, lambda f: ((f >= 20) & (f <= hi)).astype(float))
    envelope = shaped_noise(rng, n, fs, lambda f: (f < 0.5).astype(float))
    return burst * np.exp(1.5 * envelope)


def _line(rng, n, fs, f_line):
    t = np.arange(n) / fs
    drift = 1.0 + 0.3 * shaped_noise(rng, n, fs, lambda f: (f < 0.2).astype(float))
    return drift * np.sin(2 * np.pi * f_line * t + rng.uniform(0, 2 * np.pi))


def gen_scenario(sc: Scenario, montage: Montage | None = None) -> tuple[RawRecording, GroundTruth]:
    """Generate the recording described by ``sc``.

    The first ``sc.n_channels`` names of the montage's target order are used,
    minus ``sc.missing``. Faults refer to channels by canonical name.
    """
    montage = montage or default_montage()
    rng = np.random.default_rng(np.random.SeedSequence([sc.seed, _name_key(sc.name)]))
    names = [n for n in list(montage.target_order)[: sc.n_channels]]
    if sc.n_channels > len(names):
        extra = [n for n in montage.electrodes if n not in names]
        names += extra[: sc.n_channels - len(names)]
    pos = montage.positions(names)
    n = int(round(sc.duration * sc.fs))
    truth = GroundTruth()

    mixing = np.column_stack([_harmonic_pattern(pos, rng) for _ in range(sc.n_sources)])
    sources = np.vstack([_brain_source(rng, n, sc.fs) for _ in range(sc.n_sources)])
    data = sc.source_uv * (mixing @ sources)
    # sensor noise level differs per electrode
    levels = sc.background_uv * rng.uniform(0.6, 1.6, len(names))
    data += levels[:, None] * np.vstack(
        [shaped_noise(rng, n, sc.fs, pink) for _ in range(len(names))]
    )
    # activity at the shared reference electrode appears on every channel
    if sc.reference_uv:
        data += sc.reference_uv * _brain_source(rng, n, sc.fs)
    truth.mixing, truth.sources = mixing, sources

    idx = {name: i for i, name in enumerate(names)}
    for fault in sc.faults:
        chans = [idx[c] for c in fault.channels]
        truth.fault_channels.setdefault(fault.kind, []).extend(fault.channels)
        if fault.kind == "flat":
            data[chans] = 0.0
        elif fault.kind == "deviant":
            data[chans] *= 20.0 * fault.strength
        elif fault.kind == "hf_noise":
            for c in chans:
                hi = min(100.0, 0.45 * sc.fs)
                band = shaped_noise(rng, n, sc.fs, lambda f: ((f >= 60) & (f <= hi)).astype(float))
                data[c] += 10 * fault.strength * data[c].std() * band
        elif fault.kind == "shuffled":
            for c in chans:
                data[c] = rng.permutation(data[c])
        elif fault.kind == "line":
            n_pat = max(1, int(fault.strength))
            amp = 10 * sc.background_uv
            patterns = np.column_stack([_harmonic_pattern(pos, rng) for _ in range(n_pat)])
            lines = np.vstack([_line(rng, n, sc.fs, sc.line_freq) for _ in range(n_pat)])
            data += amp * (patterns @ lines)
            truth.line_amplitude_uv = amp
            truth.line_patterns = patterns
        else:
            pattern, course = _artifact(fault.kind, names, pos, rng, n, sc.fs)
            amp = {"blink": 80.0, "muscle": 6.0, "heart": 40.0}[fault.kind] * fault.strength
            data += amp * np.outer(pattern, course)
            truth.artifact_sources[fault.kind] = amp * course
            truth.artifact_patterns[fault.kind] = pattern

    keep = [i for i, name in enumerate(names) if name not in sc.missing]
    truth.missing = [n for n in names if n in sc.missing]
    rows = [data[i] for i in keep]
    channels = [ChannelInfo(raw_label=_TUEG_LABEL.format(names[i].upper()), fs=sc.fs) for i in keep]
    for label in sc.extra_labels:
        rows.append(rng.standard_normal(n) * 50.0)
        channels.append(ChannelInfo(raw_label=label, fs=sc.fs))
    annotations = [Annotation(*ev[:2], ev[2]) for ev in sc.events]
    rec = RawRecording(
        data=np.vstack(rows),
        fs=sc.fs,
        channels=channels,
        annotations=annotations,
        recording_id=f"{sc.name}-{sc.seed}",
    )
    return rec, truth


def _artifact(kind, names, pos, rng, n, fs):
    if kind == "blink":
        frontal = {"Fp1": 1.0, "Fp2": 1.0, "F7": 0.5, "F8": 0.5, "F3": 0.4, "F4": 0.4, "Fz": 0.45}
        pattern = np.array([frontal.get(nm, 0.02) for nm in names])
        return pattern, _blink(rng, n, fs)
    if kind == "heart":
        # focal over the left temporal region, where cardiac fields usually peak
        focus = np.array([-0.9, -0.3, -0.3])
        angle = np.arccos(np.clip(pos @ (focus / np.linalg.norm(focus)), -1.0, 1.0))
        pattern = np.exp(-0.5 * (angle / np.deg2rad(50.0)) ** 2)
        return pattern, _heart(rng, n, fs)
    temporal = {"T7": 1.0, "T8": 0.2, "P7": 0.3, "F7": 0.3}
    pattern = np.array([temporal.get(nm, 0.0) for nm in names])
    return pattern, _muscle(rng, n, fs)


def _name_key(name: str) -> int:
    return int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "little")


SCENARIOS = {
    "clean19": Scenario("clean19"),
    "line60": Scenario("line60", faults=(Fault("line", strength=3),)),
    "badmix": Scenario(
        "badmix",
        faults=(
            Fault("flat", ("C3", "P4")),
            Fault("deviant", ("F8",)),
            Fault("shuffled", ("O1",)),
        ),
    ),
    "artifacts": Scenario(
        "artifacts",
        duration=60.0,
        faults=(Fault("blink"), Fault("heart")),
    ),
    "missing_fz_pz": Scenario("missing_fz_pz", missing=("Fz", "Pz")),
    "missing_artifacts": Scenario(
        "missing_artifacts",
        duration=60.0,
        faults=(Fault("blink"), Fault("heart")),
        missing=("Fz", "Pz"),
    ),
    "tueg21": Scenario("tueg21", extra_labels=("EEG EKG-REF", "PHOTIC PH")),
    "events": Scenario(
        "events", events=((10.0, 1.0, "T1"), (55.0, 4.0, "T2"), (100.0, 2.0, "T0"))
    ),
}


def get_scenario(name: str, seed: int = 0, **overrides) -> Scenario:
    from dataclasses import replace

    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return replace(SCENARIOS[name], seed=seed, **overrides)


# --------------------------------------------------------------------- EDF writer


def _field(value, width: int) -> bytes:
    raw = str(value).encode("latin-1")
    if len(raw) > width:
        raise ValueError(f"{value!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _fmt_number(value: float, width: int = 8) -> str:
    if float(value).is_integer() and len(str(int(value))) <= width:
        return str(int(value))
    for digits in range(width, 0, -1):
        txt = f"{value:.{digits}g}"
        if len(txt) <= width and "e" not in txt:
            return txt
    raise ValueError(f"cannot format {value} in {width} characters")


def _phys_bounds(row: np.ndarray) -> tuple[str, str]:
    """Symmetric physical range, formatted, covering every sample of ``row``."""
    peak = float(np.max(np.abs(row))) if row.size else 0.0
    peak = max(peak, 1e-3)
    for sig in range(6, 0, -1):
        scale = 10 ** (math.floor(math.log10(peak)) - sig + 1)
        bound = math.ceil(peak / scale) * scale
        txt = _fmt_number(bound, 7)
        if float(txt) >= peak:
            return "-" + txt, txt
    raise RangeOverflow(f"cannot represent peak {peak}")


def _tal(onset: float, duration: float | None = None, texts=("",)) -> bytes:
    stamp = f"{onset:+.6g}".encode()
    if duration:
        stamp += b"\x15" + f"{duration:.6g}".encode()
    return stamp + b"\x14" + b"".join(t.encode("utf-8") + b"\x14" for t in texts) + b"\x00"


def write_edf(rec: RawRecording, path, phys_range: tuple[float, float] | None = None) -> Path:
    """Write ``rec`` with 1 s records: EDF+C when it has annotations, plain EDF otherwise.

    ``phys_range`` fixes the physical min/max of every signal; samples outside
    it raise :class:`RangeOverflow`. By default each signal gets a symmetric
    range just covering its peak.
    """
    path = Path(path)
    data = np.asarray(rec.data, dtype=float)
    fs = rec.fs
    spr = int(round(fs))
    if abs(spr - fs) > 1e-9:
        raise ValueError("write_edf needs an integer sampling rate")
    n_ch, n = data.shape
    n_records = math.ceil(n / spr)
    if n_records * spr != n:
        data = np.pad(data, ((0, 0), (0, n_records * spr - n)))

    tals = [[_tal(float(r))] for r in range(n_records)]
    for ann in rec.annotations:
        r = min(int(ann.onset), n_records - 1)
        tals[r].append(_tal(ann.onset, ann.duration, (ann.text,)))
    tal_bytes = [b"".join(t) for t in tals]
    annot_spr = max(1, math.ceil(max(len(t) for t in tal_bytes) / 2))

    labels, dims, pmins, pmaxs, digital = [], [], [], [], []
    for i in range(n_ch):
        row = data[i]
        if phys_range is not None:
            lo, hi = phys_range
            if row.min() < lo or row.max() > hi:
                raise RangeOverflow(f"channel {i} exceeds physical range {phys_range}")
            pmin, pmax = _fmt_number(lo), _fmt_number(hi)
        else:
            pmin, pmax = _phys_bounds(row)
        lo, hi = float(pmin), float(pmax)
        dig = np.round((row - lo) / (hi - lo) * 65535.0 - 32768.0)
        digital.append(np.clip(dig, -32768, 32767).astype("<i2"))
        labels.append(rec.channels[i].raw_label)
        dims.append("uV")
        pmins.append(pmin)
        pmaxs.append(pmax)

    plus = bool(rec.annotations)
    ns = n_ch + 1 if plus else n_ch
    start = datetime.datetime(2000, 1, 1)
    head = b"".join(
        [
            _field("0", 8),
            _field("X X X X", 80),
            _field("Startdate 01-JAN-2000 X X X", 80),
            _field(start.strftime("%d.%m.%y"), 8),
            _field(start.strftime("%H.%M.%S"), 8),
            _field(256 * (ns + 1), 8),
            _field("EDF+C" if plus else "", 44),
            _field(n_records, 8),
            _field(1, 8),
            _field(ns, 4),
        ]
    )
    extra = 1 if plus else 0
    columns = [
        (labels + ["EDF Annotations"] * extra, 16),
        ([""] * ns, 80),
        (dims + [""] * extra, 8),
        (pmins + ["-1"] * extra, 8),
        (pmaxs + ["1"] * extra, 8),
        (["-32768"] * ns, 8),
        (["32767"] * ns, 8),
        ([""] * ns, 80),
        ([str(spr)] * n_ch + [str(annot_spr)] * extra, 8),
        ([""] * ns, 32),
    ]
    head += b"".join(_field(v, w) for values, w in columns for v in values)

    blocks = []
    stacked = np.stack(digital)  # (n_ch, n_records * spr)
    for r in range(n_records):
        blocks.append(stacked[:, r * spr : (r + 1) * spr].tobytes())
        if plus:
            blocks.append(tal_bytes[r].ljust(2 * annot_spr, b"\x00"))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(b"".join(blocks))
    return path


def quantum(pmin: float, pmax: float) -> float:
    return (pmax - pmin) / 65535.0


def ica_mixture(n_super: int = 3, n_sub: int = 2, n_samples: int = 10000, seed: int = 0):
    """Independent Laplacian (super-Gaussian) and uniform (sub-Gaussian) sources, randomly mixed.

    Returns ``(x, sources, mixing)`` with ``x = mixing @ sources``.
    """
    rng = np.random.default_rng(seed)
    sup = rng.laplace(size=(n_super, n_samples)) / np.sqrt(2)
    sub = rng.uniform(-np.sqrt(3), np.sqrt(3), size=(n_sub, n_samples))
    sources = np.vstack([sup, sub])
    k = n_super + n_sub
    mixing = rng.standard_normal((k, k))
    while np.linalg.cond(mixing) > 50:
        mixing = rng.standard_normal((k, k))
    return mixing @ sources, sources, mixing


def target_names(n: int = 19) -> list[str]:
    return list(TARGET_1020[:n])
