"""Zero-phase FIR filtering, robust detrending, re-referencing and resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import signal as sps

from .errors import DegenerateFit, SignalTooShort, TooFewGoodChannels

ROBUST_STD = 0.7413  # IQR -> std for a Gaussian


def robust_std(x, axis=-1):
    q75, q25 = np.percentile(x, [75, 25], axis=axis)
    return ROBUST_STD * (q75 - q25)


@dataclass(frozen=True)
class FilterSpec:
    """FIR filter request.

    ``transition_hz`` defaults per kind: high-pass ``min(cutoff/2, 2)``,
    low-pass ``min(cutoff/4, 10)``, notch ``notch_bw_hz/2``.
    """

    kind: str
    cutoff_hz: float
    transition_hz: float | None = None
    notch_bw_hz: float = 2.0

    def __post_init__(self):
        if self.kind not in ("highpass", "lowpass", "notch"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.cutoff_hz <= 0:
            raise ValueError("cutoff must be positive")
        if self.transition_hz is not None and self.transition_hz <= 0:
            raise ValueError("transition must be positive")

    @property
    def transition(self) -> float:
        if self.transition_hz is not None:
            return self.transition_hz
        if self.kind == "highpass":
            return min(self.cutoff_hz / 2, 2.0)
        if self.kind == "lowpass":
            return min(self.cutoff_hz / 4, 10.0)
        return self.notch_bw_hz / 2


def filter_length(fs: float, transition_hz: float) -> int:
    n = math.ceil(3.3 * fs / transition_hz)
    return n + 1 if n % 2 == 0 else n


@lru_cache(maxsize=64)
def design_fir(fs: float, spec: FilterSpec) -> np.ndarray:
    """Hamming-windowed sinc taps (odd length, linear phase) for ``spec``."""
    nyq = fs / 2
    if spec.cutoff_hz >= nyq:
        raise ValueError(f"cutoff {spec.cutoff_hz} Hz is not below Nyquist {nyq} Hz")
    n = filter_length(fs, spec.transition)
    if spec.kind == "highpass":
        taps = sps.firwin(n, spec.cutoff_hz, window="hamming", pass_zero=False, fs=fs)
    elif spec.kind == "lowpass":
        taps = sps.firwin(n, spec.cutoff_hz, window="hamming", fs=fs)
    else:
        half = spec.notch_bw_hz / 2
        edges = [spec.cutoff_hz - half, spec.cutoff_hz + half]
        taps = sps.firwin(n, edges, window="hamming", pass_zero=True, fs=fs)
    taps.setflags(write=False)
    return taps


def fir_filter(x: np.ndarray, fs: float, spec: FilterSpec) -> np.ndarray:
    """Apply ``spec`` along the last axis with zero phase.

    The linear-phase FIR is applied once; its group delay of ``(n-1)/2``
    samples is removed by trimming. Both edges are reflect-padded by that
    amount.
    """
    taps = design_fir(float(fs), spec)
    x = np.asarray(x, dtype=float)
    n_samples = x.shape[-1]
    if n_samples <= len(taps):
        raise SignalTooShort(
            f"{n_samples} samples, {spec.kind} filter needs more than {len(taps)}"
        )
    delay = (len(taps) - 1) // 2
    pad_width = [(0, 0)] * (x.ndim - 1) + [(delay, delay)]
    padded = np.pad(x, pad_width, mode="reflect")
    kernel = taps.reshape((1,) * (x.ndim - 1) + (-1,))
    out = sps.oaconvolve(padded, kernel, mode="valid", axes=-1)
    return out


def robust_detrend(
    x: np.ndarray, order: int = 1, n_iter: int = 3, z_thresh: float = 3.0, return_fit=False
):
    """Remove a polynomial trend fitted by iteratively down-weighting outliers.

    Each pass fits a weighted least-squares polynomial, z-scores the
    residual over currently-weighted samples and zeroes the weight of every
    sample with ``|z| > z_thresh``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n <= 10 * (order + 1):
        raise SignalTooShort(f"{n} samples is too short for an order-{order} detrend")
    t = np.linspace(-1.0, 1.0, n)
    w = np.ones(n)
    coef = P.polyfit(t, x, order)
    for _ in range(n_iter):
        if np.count_nonzero(w) <= order:
            raise DegenerateFit("all samples were rejected as outliers")
        coef = P.polyfit(t, x, order, w=w)
        resid = x - P.polyval(t, coef)
        kept = resid[w > 0]
        sigma = kept.std()
        if sigma <= 1e-12 * max(np.abs(x).max(), 1e-300):
            break
        new_w = (np.abs(resid) <= z_thresh * sigma).astype(float)
        if np.array_equal(new_w, w):
            break
        w = new_w
    if np.count_nonzero(w) <= order:
        raise DegenerateFit("all samples were rejected as outliers")
    coef = P.polyfit(t, x, order, w=w)
    fit = P.polyval(t, coef)
    if return_fit:
        return x - fit, fit
    return x - fit


def detrend_channels(x: np.ndarray, **kwargs) -> np.ndarray:
    return np.vstack([robust_detrend(row, **kwargs) for row in np.atleast_2d(x)])


def average_reference(x: np.ndarray, good_mask=None) -> np.ndarray:
    """Subtract, at every sample, the mean over good channels from all channels."""
    x = np.asarray(x, dtype=float)
    if good_mask is None:
        good_mask = np.ones(x.shape[0], dtype=bool)
    good_mask = np.asarray(good_mask, dtype=bool)
    if good_mask.sum() < 2:
        raise TooFewGoodChannels("average reference needs at least two good channels")
    return x - x[good_mask].mean(axis=0, keepdims=True)


def _ratio(fs_in: float, fs_out: float) -> tuple[int, int]:
    frac = Fraction(fs_out).limit_denominator(10**6) / Fraction(fs_in).limit_denominator(10**6)
    frac = frac.limit_denominator(10**4)
    return frac.numerator, frac.denominator


@lru_cache(maxsize=16)
def _antialias(up: int, down: int, taps_per_phase: int = 64, beta: float = 5.0) -> np.ndarray:
    factor = max(up, down)
    n = taps_per_phase * factor + 1
    return sps.firwin(n, 1.0 / factor, window=("kaiser", beta))


def resample(x: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    """Polyphase rational resampling along the last axis.

    The output has ``round(n * fs_out / fs_in)`` samples.
    """
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sampling rates must be positive")
    x = np.asarray(x, dtype=float)
    if fs_in == fs_out:
        return x.copy()
    up, down = _ratio(fs_in, fs_out)
    n_out = int(round(x.shape[-1] * up / down))
    y = sps.resample_poly(x, up, down, axis=-1, window=_antialias(up, down), padtype="line")
    if y.shape[-1] < n_out:
        pad = [(0, 0)] * (y.ndim - 1) + [(0, n_out - y.shape[-1])]
        y = np.pad(y, pad, mode="edge")
    return y[..., :n_out]
