"""Channel-name standardization, type detection and montage attachment."""

from __future__ import annotations

import functools
import logging
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import NoEegChannels
from .recording import ChannelInfo, ChannelType, RawRecording

logger = logging.getLogger(__name__)

TARGET_1020 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz",
    "C4", "T8", "P7", "P3", "Pz", "P4", "P8", "O1", "O2",
)  # fmt: skip

_PREFIX = re.compile(r"^(EEG|EOG|ECG|EKG|EMG)[\s_:-]+", re.IGNORECASE)
_SUFFIX = re.compile(r"[\s_-]+(REF|LE|AR|AVG|A1|A2|M1|M2|CZ)$", re.IGNORECASE)

_TYPE_KEYWORDS = [
    (ChannelType.ECG, ("EKG", "ECG")),
    (ChannelType.EOG, ("EOG", "LOC", "ROC")),
    (ChannelType.EMG, ("EMG",)),
    (ChannelType.PHOTIC, ("PHOTIC",)),
]


@dataclass(frozen=True)
class Montage:
    """Named electrode positions on the unit sphere plus the output channel order."""

    name: str
    electrodes: dict[str, tuple[float, float, float]]
    target_order: tuple[str, ...] = TARGET_1020
    aliases: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.target_order) - set(self.electrodes)
        if missing:
            raise ValueError(f"target channels without positions: {sorted(missing)}")
        for name, pos in self.electrodes.items():
            if abs(np.linalg.norm(pos) - 1.0) > 1e-6:
                raise ValueError(f"electrode {name} is not on the unit sphere")

    def __hash__(self):
        return hash((self.name, tuple(self.electrodes), self.target_order))

    def position(self, name: str) -> np.ndarray:
        return np.asarray(self.electrodes[name], dtype=float)

    def positions(self, names) -> np.ndarray:
        return np.array([self.electrodes[n] for n in names], dtype=float)


def read_positions(path) -> dict[str, tuple[float, float, float]]:
    """Read a ``name x y z`` table, normalizing each position to unit length."""
    electrodes = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, *xyz = line.split()
        if len(xyz) != 3:
            raise ValueError(f"bad montage line: {line!r}")
        vec = np.array([float(v) for v in xyz])
        vec /= np.linalg.norm(vec)
        electrodes[name] = tuple(float(v) for v in vec)
    return electrodes


def read_aliases(path) -> dict[str, str]:
    aliases = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            src, dst = line.split()
            aliases[src.upper()] = dst
    return aliases


def _data_file(name: str) -> Path:
    return Path(str(resources.files("speed") / "data" / name))


def load_montage(
    name_or_path="standard_1020", target_order=None, aliases_path=None
) -> Montage:
    """Load a montage by builtin name or from a ``name x y z`` file."""
    if isinstance(name_or_path, Montage):
        return name_or_path
    path = Path(str(name_or_path))
    if not path.exists():
        path = _data_file(f"{name_or_path}.txt")
    electrodes = read_positions(path)
    aliases = read_aliases(aliases_path or _data_file("aliases.txt"))
    return Montage(
        name=Path(str(name_or_path)).stem,
        electrodes=electrodes,
        target_order=tuple(target_order) if target_order else TARGET_1020,
        aliases=aliases,
    )


def standardize_name(raw_label: str, montage: Montage | None = None) -> str | None:
    """Map a raw channel label to its canonical montage name.

    >>> standardize_name("EEG FP1-REF")
    'Fp1'
    >>> standardize_name("EEG T3-LE")
    'T7'
    >>> standardize_name("BURSTS") is None
    True
    """
    montage = montage or default_montage()
    label = _PREFIX.sub("", raw_label.strip())
    label = _SUFFIX.sub("", label).strip()
    key = label.upper()
    key = montage.aliases.get(key, key).upper()
    return _upper_lookup(montage).get(key)


@functools.lru_cache(maxsize=16)
def _upper_lookup(montage: Montage) -> dict[str, str]:
    return {name.upper(): name for name in montage.electrodes}


def detect_type(canonical_name: str | None, raw_label: str) -> ChannelType:
    upper = raw_label.upper()
    for ch_type, words in _TYPE_KEYWORDS:
        if any(w in upper for w in words):
            return ch_type
    if canonical_name is not None:
        return ChannelType.EEG
    return ChannelType.OTHER


def apply_montage(
    rec: RawRecording, montage: Montage | None = None, events: list | None = None
) -> RawRecording:
    """Keep EEG channels with a known position and attach that position.

    Dropped channels and renamed aliases are appended to ``events`` as
    ``(action, payload)`` pairs when a list is passed.
    """
    montage = montage or default_montage()
    keep, infos, dropped, renamed = [], [], {}, {}
    seen = set()
    for i, ch in enumerate(rec.channels):
        canon = standardize_name(ch.raw_label, montage)
        ch_type = detect_type(canon, ch.raw_label)
        if ch_type is not ChannelType.EEG:
            dropped[ch.raw_label] = f"non-EEG ({ch_type.value})"
            continue
        if canon is None or canon not in montage.electrodes:
            dropped[ch.raw_label] = "not in montage"
            continue
        if canon in seen:
            dropped[ch.raw_label] = f"duplicate of {canon}"
            continue
        seen.add(canon)
        stripped = _SUFFIX.sub("", _PREFIX.sub("", ch.raw_label.strip())).strip()
        if stripped.upper() != canon.upper():
            renamed[ch.raw_label] = canon
        keep.append(i)
        infos.append(
            replace(ch, canonical_name=canon, ch_type=ch_type, position=montage.electrodes[canon])
        )
    if not keep:
        raise NoEegChannels(f"{rec.recording_id}: no EEG channels left after montage")
    if dropped:
        logger.debug("%s: dropped channels %s", rec.recording_id, dropped)
    if events is not None:
        if dropped:
            events.append(("dropped", {"channels": dropped}))
        if renamed:
            events.append(("info", {"aliased": renamed}))
    out = rec.pick(keep)
    out.channels = infos
    return out


_DEFAULT: Montage | None = None


def default_montage() -> Montage:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_montage()
    return _DEFAULT
