"""Window quality metrics and keep/drop gates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import FilterSpec, fir_filter, robust_std


@dataclass(frozen=True)
class QualityMetrics:
    oha: float
    thv: float
    chv: float
    rbc: float

    def as_dict(self) -> dict[str, float]:
        return {"oha": self.oha, "thv": self.thv, "chv": self.chv, "rbc": self.rbc}


@dataclass(frozen=True)
class QualityThresholds:
    oha_max: float = 0.8
    thv_max: float = 0.5
    chv_max: float = 0.5
    rbc_max: float = 0.8
    amp_abs_uv: float = 100.0
    var_time_uv: float = 50.0
    var_chan_uv: float = 50.0
    min_channel_frac: float = 0.5

    def __post_init__(self):
        for name in ("oha_max", "thv_max", "chv_max", "rbc_max", "min_channel_frac"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        for name in ("amp_abs_uv", "var_time_uv", "var_chan_uv"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Decision:
    """Outcome of a gate: ``keep`` or drop with the violated criteria as reasons."""

    keep: bool
    reasons: tuple[str, ...] = ()

    def __bool__(self):
        return self.keep


KEEP = Decision(True)


def drop(*reasons: str) -> Decision:
    return Decision(False, tuple(reasons))


def qa_filter(x: np.ndarray, fs: float, line_freq: float, lowpass_hz: float = 100.0):
    """Filtered copy used only for quality metrics: line notches, 1 Hz HP, 100 Hz LP."""
    out = np.array(x, dtype=float)
    top = min(fs / 2, lowpass_hz + FilterSpec("lowpass", lowpass_hz).transition)
    k = 1
    while line_freq and k * line_freq + 1.0 < min(top, fs / 2):
        out = fir_filter(out, fs, FilterSpec("notch", k * line_freq))
        k += 1
    out = fir_filter(out, fs, FilterSpec("highpass", 1.0))
    lp = FilterSpec("lowpass", lowpass_hz)
    if lowpass_hz + lp.transition / 2 < fs / 2:
        out = fir_filter(out, fs, lp)
    return out


def compute_metrics(
    x: np.ndarray, bad_channels=(), th: QualityThresholds = QualityThresholds()
) -> QualityMetrics:
    """OHA, THV, CHV and RBC for a window that has already been QA-filtered."""
    x = np.asarray(x, dtype=float)
    n_ch = x.shape[0]
    oha = float(np.mean(np.abs(x) > th.amp_abs_uv))
    thv = float(np.mean(robust_std(x, axis=0) > th.var_time_uv))
    chv = float(np.mean(x.std(axis=1) > th.var_chan_uv))
    rbc = len(set(bad_channels)) / n_ch
    return QualityMetrics(oha=oha, thv=thv, chv=chv, rbc=rbc)


def gate(m: QualityMetrics, th: QualityThresholds = QualityThresholds()) -> Decision:
    """Drop when any ratio reaches its cutoff; every violated criterion is reported."""
    reasons = [
        name
        for name, value, cutoff in (
            ("oha", m.oha, th.oha_max),
            ("thv", m.thv, th.thv_max),
            ("chv", m.chv, th.chv_max),
            ("rbc", m.rbc, th.rbc_max),
        )
        if value >= cutoff
    ]
    return drop(*reasons) if reasons else KEEP


def min_channel_check(n_present: int, n_target: int, min_frac: float = 0.5) -> Decision:
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    if n_present < math.ceil(min_frac * n_target):
        return drop("min_channel_check")
    return KEEP
