"""PREP-style bad-channel detection.

All criteria run on a detection copy (robust linear detrend plus 1 Hz
high-pass); the caller's array is never modified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dsp import FilterSpec, detrend_channels, fir_filter, robust_std
from .errors import TooFewChannels
from .interpolate import interpolation_weights

logger = logging.getLogger(__name__)

CRITERIA = ("flat", "nan", "deviation", "hf_noise", "correlation", "ransac")

DEVIATION_Z = 5.0
HF_NOISE_Z = 5.0
CORR_THRESH = 0.4
CORR_BAD_FRAC = 0.01
CORR_WINDOW_SECS = 1.0
FLAT_STD = 1e-9
FLAT_REPEAT_FRAC = 0.99


@dataclass(frozen=True)
class RansacConfig:
    window_secs: float = 5.0
    n_samples: int = 50
    subset_frac: float = 0.25
    corr_thresh: float = 0.85
    bad_frac: float = 0.40
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.subset_frac <= 1:
            raise ValueError("subset_frac must be in (0, 1]")
        if not 0 < self.corr_thresh < 1:
            raise ValueError("corr_thresh must be in (0, 1)")


@dataclass
class BadChannelReport:
    by_criterion: dict[str, set[int]] = field(
        default_factory=lambda: {name: set() for name in CRITERIA}
    )
    z_scores: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    @property
    def union(self) -> set[int]:
        out = set()
        for chans in self.by_criterion.values():
            out |= chans
        return out

    def named(self, names) -> dict[str, list[str]]:
        return {k: sorted(names[i] for i in v) for k, v in self.by_criterion.items() if v}


def _robust_z(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    center = np.median(values)
    spread = robust_std(values)
    if spread <= 0:
        spread = max(1e-12 * abs(center), np.finfo(float).tiny)
    return (values - center) / spread


def detect_flat_nan(x: np.ndarray, nonfinite=None) -> tuple[set[int], set[int]]:
    """Return ``(flat, nan)`` channel index sets.

    ``nonfinite`` marks channels whose non-finite samples were zeroed upstream.
    """
    x = np.asarray(x, dtype=float)
    nan = set(np.flatnonzero(~np.all(np.isfinite(x), axis=1)).tolist())
    if nonfinite is not None:
        nan |= set(np.flatnonzero(np.asarray(nonfinite, dtype=bool)).tolist())
    flat = set()
    for i, row in enumerate(x):
        if i in nan:
            continue
        if robust_std(row) < FLAT_STD or np.mean(np.diff(row) == 0) > FLAT_REPEAT_FRAC:
            flat.add(i)
    return flat, nan


def detect_deviation(x: np.ndarray, z_thresh: float = DEVIATION_Z):
    """Channels whose robust amplitude is a robust-z outlier across channels."""
    if x.shape[0] < 3:
        raise TooFewChannels("deviation criterion needs >= 3 channels")
    z = _robust_z(robust_std(x, axis=1))
    return set(np.flatnonzero(np.abs(z) > z_thresh).tolist()), z


def _lowpass50(x, fs):
    return fir_filter(x, fs, FilterSpec("lowpass", 50.0))


def detect_hf_noise(x: np.ndarray, fs: float, z_thresh: float = HF_NOISE_Z, lowpassed=None):
    """Channels with an outlying ratio of >50 Hz to <50 Hz robust amplitude."""
    if fs <= 100:
        logger.info("fs=%s Hz: noisiness criterion skipped", fs)
        return set(), np.zeros(x.shape[0])
    low = _lowpass50(x, fs) if lowpassed is None else lowpassed
    low_amp = robust_std(low, axis=1)
    noisiness = robust_std(x - low, axis=1) / np.maximum(low_amp, np.finfo(float).tiny)
    z = _robust_z(noisiness)
    return set(np.flatnonzero(z > z_thresh).tolist()), z


def _window_bounds(n_samples, size):
    n_win = n_samples // size
    return [(k * size, (k + 1) * size) for k in range(n_win)] or [(0, n_samples)]


def detect_correlation(
    x: np.ndarray,
    fs: float,
    thresh: float = CORR_THRESH,
    bad_frac: float = CORR_BAD_FRAC,
    window_secs: float = CORR_WINDOW_SECS,
    lowpassed=None,
):
    """Channels whose best absolute correlation with any other channel is weak too often."""
    if x.shape[0] < 3:
        raise TooFewChannels("correlation criterion needs >= 3 channels")
    low = _lowpass50(x, fs) if (lowpassed is None and fs > 100) else (
        x if lowpassed is None else lowpassed
    )
    size = max(int(round(window_secs * fs)), 2)
    bounds = _window_bounds(low.shape[1], size)
    weak = np.zeros(x.shape[0])
    for start, stop in bounds:
        seg = low[:, start:stop]
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(seg)
        corr = np.nan_to_num(np.abs(corr), nan=0.0)
        np.fill_diagonal(corr, 0.0)
        weak += corr.max(axis=1) < thresh
    frac = weak / len(bounds)
    return set(np.flatnonzero(frac > bad_frac).tolist()), frac


def _rowwise_corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    denom = np.sqrt((a * a).sum(-1) * (b * b).sum(-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (a * b).sum(-1) / denom
    return np.nan_to_num(r, nan=0.0)


def ransac_predict(x, positions, target: int, predictors, cfg: RansacConfig, rng) -> np.ndarray:
    """Median over ``cfg.n_samples`` spline predictions of channel ``target``."""
    predictors = np.asarray([p for p in predictors if p != target])
    n_pick = max(4, int(round(cfg.subset_frac * len(positions))))
    n_pick = min(n_pick, len(predictors))
    preds = np.empty((cfg.n_samples, x.shape[1]))
    for k in range(cfg.n_samples):
        subset = np.sort(rng.choice(predictors, size=n_pick, replace=False))
        w = interpolation_weights(positions[subset], positions[target : target + 1])[0]
        preds[k] = w @ x[subset]
    return np.median(preds, axis=0)


def detect_ransac(
    x: np.ndarray, fs: float, positions: np.ndarray, cfg: RansacConfig = RansacConfig(), exclude=()
):
    """Channels poorly predicted by spline reconstructions from random channel subsets.

    ``exclude`` channels are never used as predictors. Randomness comes only
    from ``cfg.seed``; each target channel draws from its own child stream so
    verdicts do not depend on evaluation order.
    """
    positions = np.asarray(positions, dtype=float)
    n_ch = x.shape[0]
    exclude = set(exclude)
    predictors = [i for i in range(n_ch) if i not in exclude]
    if n_ch < 8 or len(predictors) < 5:
        raise TooFewChannels(f"RANSAC needs >= 8 channels and >= 5 predictors, got {n_ch}")
    size = int(round(cfg.window_secs * fs))
    bounds = _window_bounds(x.shape[1], size)
    streams = np.random.SeedSequence(cfg.seed).spawn(n_ch)
    bad_windows = np.zeros(n_ch)
    for ch in range(n_ch):
        rng = np.random.default_rng(streams[ch])
        pred = ransac_predict(x, positions, ch, predictors, cfg, rng)
        for start, stop in bounds:
            r = _rowwise_corr(pred[start:stop], x[ch, start:stop])
            bad_windows[ch] += r < cfg.corr_thresh
    frac = bad_windows / len(bounds)
    return set(np.flatnonzero(frac > cfg.bad_frac).tolist()), frac


def detection_copy(x: np.ndarray, fs: float) -> np.ndarray:
    """Robust linear detrend followed by a 1 Hz high-pass, on a new array."""
    out = detrend_channels(np.array(x, dtype=float))
    return fir_filter(out, fs, FilterSpec("highpass", 1.0))


def detect_bad_channels(
    x: np.ndarray,
    fs: float,
    positions=None,
    with_ransac: bool = False,
    seed: int = 0,
    nonfinite=None,
    ransac: RansacConfig | None = None,
) -> BadChannelReport:
    """Run every criterion and collect the verdicts.

    Parameters
    ----------
    x : ndarray, shape (n_channels, n_samples)
        Data in microvolts; left untouched.
    fs : float
        Sampling rate in Hz.
    positions : ndarray, shape (n_channels, 3), optional
        Unit-sphere electrode positions; required for RANSAC.
    with_ransac : bool
        Run the predictability criterion.
    seed : int
        RANSAC seed (overrides ``ransac.seed``).
    nonfinite : array_like of bool, optional
        Channels whose non-finite samples were replaced upstream.
    """
    report = BadChannelReport()
    raw = np.nan_to_num(np.asarray(x, dtype=float), nan=0.0, posinf=0.0, neginf=0.0)
    flat, nan = detect_flat_nan(np.asarray(x, dtype=float), nonfinite)
    report.by_criterion["flat"] = flat
    report.by_criterion["nan"] = nan
    usable = [i for i in range(raw.shape[0]) if i not in flat | nan]
    if len(usable) < 3:
        report.skipped.append("too few usable channels")
        return report
    data = detection_copy(raw[usable], fs)
    lowpassed = _lowpass50(data, fs) if fs > 100 else None

    def mapped(found):
        return {usable[i] for i in found}

    found, z = detect_deviation(data)
    report.by_criterion["deviation"] = mapped(found)
    report.z_scores["deviation"] = _scatter(z, usable, raw.shape[0])
    found, z = detect_hf_noise(data, fs, lowpassed=lowpassed)
    if fs <= 100:
        report.skipped.append("hf_noise")
    report.by_criterion["hf_noise"] = mapped(found)
    report.z_scores["hf_noise"] = _scatter(z, usable, raw.shape[0])
    found, frac = detect_correlation(data, fs, lowpassed=lowpassed)
    report.by_criterion["correlation"] = mapped(found)
    report.z_scores["correlation"] = _scatter(frac, usable, raw.shape[0])

    if with_ransac:
        cfg = ransac or RansacConfig()
        cfg = RansacConfig(**{**cfg.__dict__, "seed": seed})
        if positions is None:
            report.skipped.append("ransac: no positions")
        else:
            pos = np.asarray(positions, dtype=float)[usable]
            others = report.by_criterion["deviation"] | report.by_criterion["correlation"]
            exclude = [k for k, i in enumerate(usable) if i in others]
            try:
                found, frac = detect_ransac(data, fs, pos, cfg, exclude=exclude)
            except TooFewChannels as exc:
                logger.info("RANSAC skipped: %s", exc)
                report.skipped.append("ransac")
            else:
                report.by_criterion["ransac"] = mapped(found)
                report.z_scores["ransac"] = _scatter(frac, usable, raw.shape[0])
    return report


def _scatter(values, idx, n):
    out = np.full(n, np.nan)
    out[idx] = values
    return out
