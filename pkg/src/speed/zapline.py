"""Power-line removal: boxcar spectral split plus denoising source separation, iterated."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.ndimage import uniform_filter1d
from scipy.signal import welch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZaplineConfig:
    f_line: float = 60.0
    max_iters: int = 6
    components_per_iter: int = 1
    stop_ratio_db: float = 3.0
    n_harmonics: int | None = None  # None: every harmonic below Nyquist - 1 Hz

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.components_per_iter < 0:
            raise ValueError("components_per_iter must be >= 0")

    def harmonics(self, fs: float) -> int:
        if self.f_line >= fs / 2:
            raise ValueError(f"line frequency {self.f_line} Hz is not below Nyquist")
        if self.n_harmonics is not None:
            return self.n_harmonics
        return max(1, int((fs / 2 - 1) // self.f_line))


@dataclass
class ZaplineReport:
    iters: int = 0
    prominence_db: list[float] = field(default_factory=list)
    scores: list[list[float]] = field(default_factory=list)

    def as_dict(self):
        return {"iters": self.iters, "prominence_db": self.prominence_db, "scores": self.scores}


def boxcar_split(x: np.ndarray, fs: float, f_line: float):
    """Split ``x`` into a line-period moving average and the residual.

    The residual is computed as ``x - smooth`` and the returned smooth part
    as ``x - residual`` so that ``smooth + residual`` reproduces ``x``.
    """
    if fs / f_line < 2:
        raise ValueError("need at least two samples per line period")
    x = np.asarray(x, dtype=float)
    size = int(round(fs / f_line))
    smooth = uniform_filter1d(x, size, axis=-1, mode="wrap")
    residual = x - smooth
    smooth = x - residual
    return smooth, residual


def line_band_mask(n_samples: int, fs: float, f_line: float, n_harmonics: int, half_width=0.5):
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    mask = np.zeros(freqs.size, dtype=bool)
    for k in range(1, n_harmonics + 1):
        f = k * f_line
        if f >= fs / 2:
            break
        mask |= np.abs(freqs - f) <= half_width
    return mask


def dss_line_components(residual: np.ndarray, fs: float, cfg: ZaplineConfig):
    """Spatial filters ranked by the fraction of their power at the line harmonics.

    Returns
    -------
    rotation : ndarray, shape (n_channels, n_channels)
        Columns are spatial filters, best line component first.
    scores : ndarray, shape (n_channels,)
        Generalized eigenvalues: line-band power over total power per component.
    """
    residual = np.asarray(residual, dtype=float)
    n_ch, n = residual.shape
    if n_ch < 2:
        raise ValueError("DSS needs at least two channels")
    centered = residual - residual.mean(axis=1, keepdims=True)
    c0 = centered @ centered.T / n
    spec = np.fft.rfft(centered, axis=1)
    spec[:, ~line_band_mask(n, fs, cfg.f_line, cfg.harmonics(fs))] = 0
    biased = np.fft.irfft(spec, n=n, axis=1)
    cb = biased @ biased.T / n
    trace = np.trace(c0)
    if trace <= 0:
        return np.eye(n_ch), np.zeros(n_ch)
    c0 = c0 + (1e-9 * trace / n_ch) * np.eye(n_ch)
    evals, evecs = linalg.eigh(cb, c0)
    order = np.argsort(evals)[::-1]
    return evecs[:, order], evals[order]


def zapline_once(x: np.ndarray, fs: float, cfg: ZaplineConfig, return_scores=False):
    """Project the top ``cfg.components_per_iter`` line components out of ``x``.

    Returns the cleaned data and the number of components removed, plus the
    DSS scores when ``return_scores`` is set.
    """
    x = np.asarray(x, dtype=float)
    k = cfg.components_per_iter
    if k == 0:
        return (x.copy(), 0, np.array([])) if return_scores else (x.copy(), 0)
    smooth, residual = boxcar_split(x, fs, cfg.f_line)
    rotation, scores = dss_line_components(residual, fs, cfg)
    k = min(k, x.shape[0])
    sources = rotation[:, :k].T @ residual
    # least-squares channel patterns of the removed sources
    gram = sources @ sources.T
    patterns = residual @ sources.T @ np.linalg.pinv(gram)
    cleaned = smooth + (residual - patterns @ sources)
    return (cleaned, k, scores) if return_scores else (cleaned, k)


def line_prominence_db(x: np.ndarray, fs: float, f_line: float) -> float:
    """Channel-averaged PSD at ``f_line +- 0.5`` Hz over the median of ``+-[2, 8]`` Hz flanks, in dB."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    nperseg = min(x.shape[1], int(round(4 * fs)))
    freqs, psd = welch(x, fs=fs, nperseg=nperseg, axis=-1)
    psd = psd.mean(axis=0)
    dist = np.abs(freqs - f_line)
    line = psd[dist <= 0.5]
    flank = psd[(dist >= 2) & (dist <= 8)]
    if line.size == 0 or flank.size == 0:
        return 0.0
    floor = np.median(flank)
    tiny = np.finfo(float).tiny
    return float(10 * np.log10(max(line.mean(), tiny) / max(floor, tiny)))


def zapline_iterative(x: np.ndarray, fs: float, cfg: ZaplineConfig = ZaplineConfig()):
    """Repeat :func:`zapline_once` until the line prominence falls below ``cfg.stop_ratio_db``.

    An iteration that would raise the prominence is discarded and the loop
    stops, so the prominence never increases.
    """
    current = np.asarray(x, dtype=float)
    report = ZaplineReport()
    prom = line_prominence_db(current, fs, cfg.f_line)
    report.prominence_db.append(prom)
    while prom > cfg.stop_ratio_db and report.iters < cfg.max_iters:
        cleaned, n_removed, scores = zapline_once(current, fs, cfg, return_scores=True)
        if n_removed == 0:
            break
        new_prom = line_prominence_db(cleaned, fs, cfg.f_line)
        if new_prom > prom:
            logger.debug("zapline iteration raised prominence %.2f -> %.2f; stopping", prom, new_prom)
            break
        current, prom = cleaned, new_prom
        report.iters += 1
        report.prominence_db.append(prom)
        report.scores.append([float(s) for s in scores[: max(n_removed, 3)]])
    if report.iters == 0:
        current = np.array(x, dtype=float, copy=True)
    return current, report
