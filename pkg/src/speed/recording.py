"""Core data containers passed between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class ChannelType(str, Enum):
    EEG = "EEG"
    EOG = "EOG"
    ECG = "ECG"
    EMG = "EMG"
    PHOTIC = "PHOTIC"
    OTHER = "OTHER"


@dataclass(frozen=True)
class ChannelInfo:
    """Metadata for one recorded channel.

    ``fs`` is the channel's own sampling rate as stored in the file, and
    ``had_nonfinite`` marks channels whose non-finite samples were zeroed.
    """

    raw_label: str
    canonical_name: str | None = None
    ch_type: ChannelType = ChannelType.OTHER
    position: tuple[float, float, float] | None = None
    fs: float | None = None
    had_nonfinite: bool = False

    def __post_init__(self):
        if self.position is not None:
            if self.canonical_name is None:
                raise ValueError("a positioned channel needs a canonical name")
            if abs(np.linalg.norm(self.position) - 1.0) > 1e-6:
                raise ValueError(f"position of {self.canonical_name} is not unit norm")

    @property
    def name(self) -> str:
        return self.canonical_name if self.canonical_name is not None else self.raw_label


@dataclass(frozen=True)
class Annotation:
    onset: float
    duration: float
    text: str

    def __post_init__(self):
        if self.onset < 0 or self.duration < 0:
            raise ValueError(f"negative onset/duration in annotation {self!r}")


@dataclass
class RawRecording:
    """A multichannel recording in microvolts.

    ``data`` is a ``(n_channels, n_samples)`` float array when every channel
    shares one sampling rate. A freshly parsed file whose channels disagree on
    rate instead holds a list of 1-D arrays, one per channel, with each rate in
    ``channels[i].fs``; :func:`speed.pipeline.harmonize_rates` turns that into
    the matrix form used everywhere else.
    """

    data: np.ndarray | list[np.ndarray]
    fs: float
    channels: list[ChannelInfo]
    annotations: list[Annotation] = field(default_factory=list)
    recording_id: str = ""

    def __post_init__(self):
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if len(self.data) != len(self.channels):
            raise ValueError(
                f"{len(self.data)} data rows but {len(self.channels)} channels"
            )

    @property
    def is_uniform(self) -> bool:
        return isinstance(self.data, np.ndarray)

    @property
    def ch_names(self) -> list[str]:
        return [ch.name for ch in self.channels]

    @property
    def n_samples(self) -> int:
        if not self.is_uniform:
            raise ValueError("recording has mixed sampling rates")
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def pick(self, idx) -> RawRecording:
        """Return a copy restricted to the channel indices ``idx`` (in that order)."""
        idx = list(idx)
        if self.is_uniform:
            data = self.data[idx]
        else:
            data = [self.data[i] for i in idx]
        return replace(self, data=data, channels=[self.channels[i] for i in idx])


@dataclass
class Window:
    """A fixed-duration slice of a recording, the unit of pretrain processing."""

    data: np.ndarray
    fs: float
    recording_id: str
    window_index: int
    t_start: float
    channels: list[ChannelInfo]

    @property
    def channel_names(self) -> list[str]:
        return [ch.name for ch in self.channels]

    @property
    def positions(self) -> np.ndarray:
        return np.array([ch.position for ch in self.channels], dtype=float)
