"""Extended Infomax ICA, rule-based component labelling and artifact removal."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import welch

from .dsp import FilterSpec, fir_filter
from .errors import DegenerateCovariance, SignalTooShort
from .quality import KEEP, Decision, drop

logger = logging.getLogger(__name__)

IC_CLASSES = (
    "brain",
    "muscle_artifact",
    "eye_blink",
    "heart",
    "line_noise",
    "channel_noise",
    "other",
)
RETAINED_CLASSES = frozenset({"brain", "other"})
EXCLUDE_PROB = 0.80
FRONTAL = ("Fp1", "Fp2", "F7", "F8")


@dataclass(frozen=True)
class Whitener:
    mean: np.ndarray
    eig_vectors: np.ndarray  # (n_channels, rank)
    eig_values: np.ndarray  # (rank,), descending

    @property
    def rank(self) -> int:
        return self.eig_values.size

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (self.eig_vectors.T @ (x - self.mean[:, None])) / np.sqrt(self.eig_values)[:, None]

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return self.eig_vectors @ (np.sqrt(self.eig_values)[:, None] * z) + self.mean[:, None]

    def project(self, x: np.ndarray) -> np.ndarray:
        """``x`` restricted to the retained principal subspace."""
        return self.inverse(self.transform(x))


def whiten(x: np.ndarray, rel_tol: float = 1e-10):
    """PCA-whiten ``x``, dropping directions with eigenvalue below ``rel_tol`` of the largest."""
    x = np.asarray(x, dtype=float)
    n_ch, n = x.shape
    if n_ch < 2 or n < 10 * n_ch:
        raise DegenerateCovariance(f"cannot whiten {n_ch} channels x {n} samples")
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    cov = centered @ centered.T / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0:
        raise DegenerateCovariance("covariance is zero")
    keep = evals > rel_tol * evals[0]
    evecs = evecs[:, keep]
    # fix eigenvector signs so results do not depend on LAPACK's choice
    peak = np.abs(evecs).argmax(axis=0)
    evecs = evecs * np.sign(evecs[peak, np.arange(evecs.shape[1])])
    w = Whitener(mean=mean, eig_vectors=evecs, eig_values=evals[keep])
    return w.transform(x), w


@dataclass
class IcaModel:
    unmixing: np.ndarray  # (rank, rank), acts on whitened data
    whitener: Whitener
    converged: bool
    n_iters: int

    @property
    def n_components(self) -> int:
        return self.unmixing.shape[0]

    @property
    def mixing(self) -> np.ndarray:
        """Channel topographies, shape (n_channels, n_components)."""
        w = self.whitener
        return w.eig_vectors @ (np.sqrt(w.eig_values)[:, None] * np.linalg.inv(self.unmixing))

    def sources(self, x: np.ndarray) -> np.ndarray:
        return self.unmixing @ self.whitener.transform(x)


def _kurtosis_signs(u: np.ndarray) -> np.ndarray:
    m2 = np.mean(u * u, axis=1)
    m4 = np.mean(u**4, axis=1)
    kurt = m4 / np.maximum(m2 * m2, np.finfo(float).tiny) - 3.0
    return np.where(kurt >= 0, 1.0, -1.0)


def extended_infomax(
    z: np.ndarray,
    seed: int = 0,
    max_iters: int = 500,
    tol: float = 1e-7,
    lrate: float | None = None,
    block: int | None = None,
    anneal_deg: float = 60.0,
    anneal_step: float = 0.9,
    kurt_decay: float = 0.9,
):
    """Extended Infomax on whitened data ``z`` (components x samples).

    Each pass visits the samples in a seeded random order, one block at a
    time, applying ``W += lrate * (I - K tanh(u) u^T / b - u u^T / b) W``.
    ``K`` holds per-component kurtosis signs, tracked as an exponential
    running average of block moments. The learning rate shrinks by
    ``anneal_step`` whenever consecutive weight changes turn by more than
    ``anneal_deg`` degrees.

    Returns
    -------
    unmixing : ndarray, shape (n, n)
        Rows scaled so each component has unit variance.
    converged : bool
    n_iters : int
        Passes over the data.
    """
    z = np.asarray(z, dtype=float)
    n, n_samples = z.shape
    rng = np.random.default_rng(seed)
    if block is None:
        block = max(int(math.floor(math.sqrt(n_samples / 3.0))), 2)
    if lrate is None:
        lrate = min(0.01 * block / math.log(max(n, 2) ** 2), 0.1)
    eye = np.eye(n)
    weights = eye.copy()
    u_all = z
    m2 = np.mean(u_all**2, axis=1)
    m4 = np.mean(u_all**4, axis=1)
    signs = _kurtosis_signs(u_all)
    old_delta, old_change = None, None
    converged = False
    passes = 0
    restarts = 0
    while passes < max_iters:
        passes += 1
        start_weights = weights.copy()
        perm = rng.permutation(n_samples)
        blew_up = False
        for start in range(0, n_samples - block + 1, block):
            u = weights @ z[:, perm[start : start + block]]
            m2 = kurt_decay * m2 + (1 - kurt_decay) * np.mean(u * u, axis=1)
            m4 = kurt_decay * m4 + (1 - kurt_decay) * np.mean(u**4, axis=1)
            signs = np.where(m4 / np.maximum(m2 * m2, np.finfo(float).tiny) - 3.0 >= 0, 1.0, -1.0)
            y = np.tanh(u)
            grad = eye - (signs[:, None] * (y @ u.T) + u @ u.T) / block
            weights = weights + lrate * grad @ weights
            if not np.all(np.isfinite(weights)) or np.abs(weights).max() > 1e8:
                blew_up = True
                break
        if blew_up:
            restarts += 1
            lrate *= 0.8
            logger.debug("infomax diverged; restarting with lrate %.3g", lrate)
            weights = eye.copy()
            signs = _kurtosis_signs(z)
            old_delta, old_change = None, None
            if restarts > 20:
                break
            continue
        delta = weights - start_weights
        change = float(np.sum(delta * delta))
        if old_delta is not None:
            cos = np.sum(delta * old_delta) / math.sqrt(change * old_change) if change * old_change > 0 else 1.0
            angle = math.degrees(math.acos(float(np.clip(cos, -1.0, 1.0))))
            if angle > anneal_deg:
                lrate *= anneal_step
        old_delta, old_change = delta, change
        if passes > 2 and math.sqrt(change) < tol:
            converged = True
            break
    u = weights @ z
    scale = u.std(axis=1)
    scale[scale == 0] = 1.0
    weights = weights / scale[:, None]
    if not converged:
        logger.info("extended infomax did not converge in %d passes", passes)
    return weights, converged, passes


def fit_ica(x: np.ndarray, seed: int = 0, max_iters: int = 500, tol: float = 1e-7) -> IcaModel:
    z, whitener = whiten(x)
    if whitener.rank < x.shape[0]:
        logger.debug("ICA rank reduced from %d to %d", x.shape[0], whitener.rank)
    unmixing, converged, n_iters = extended_infomax(z, seed=seed, max_iters=max_iters, tol=tol)
    return IcaModel(unmixing=unmixing, whitener=whitener, converged=converged, n_iters=n_iters)


def amari_index(unmixing: np.ndarray, mixing: np.ndarray) -> float:
    """Normalized Amari distance of ``unmixing @ mixing`` from a scaled permutation (0 is perfect)."""
    p = np.abs(np.asarray(unmixing) @ np.asarray(mixing))
    n = p.shape[0]
    rows = (p.sum(axis=1) / p.max(axis=1) - 1).sum()
    cols = (p.sum(axis=0) / p.max(axis=0) - 1).sum()
    return float((rows + cols) / (2 * n * (n - 1)))


# ------------------------------------------------------------------ classification


@dataclass(frozen=True)
class FeatureVector:
    spectral_slope: float
    delta_frac: float
    alpha_frac: float
    high_frac: float
    line_ratio: float
    concentration: float
    frontal: float
    heart_autocorr: float


def ic_features(component, topography, fs: float, f_line: float, channel_names=()) -> FeatureVector:
    component = np.asarray(component, dtype=float)
    topography = np.asarray(topography, dtype=float)
    nperseg = min(component.size, int(round(4 * fs)))
    freqs, psd = welch(component, fs=fs, nperseg=nperseg)
    tiny = np.finfo(float).tiny
    band = (freqs > 0.5) & (freqs <= min(fs / 2, 100.0))
    total = max(psd[band].sum(), tiny)

    def frac(lo, hi):
        return float(psd[band & (freqs >= lo) & (freqs < hi)].sum() / total)

    fit = (freqs >= 2) & (freqs <= 40)
    slope = float(np.polyfit(np.log10(freqs[fit]), np.log10(psd[fit] + tiny), 1)[0])
    dist = np.abs(freqs - f_line)
    line = psd[dist <= 1.0]
    flank = psd[(dist >= 2) & (dist <= 8)]
    line_ratio = float(line.mean() / max(np.median(flank), tiny)) if line.size and flank.size else 0.0

    w2 = topography**2
    concentration = float(w2.max() / max(w2.sum(), tiny))
    frontal_idx = [i for i, name in enumerate(channel_names) if name in FRONTAL]
    frontal = float(w2[frontal_idx].sum() / max(w2.sum(), tiny)) if frontal_idx else 0.0

    heart = _beat_periodicity(component, fs)

    return FeatureVector(
        spectral_slope=slope,
        delta_frac=frac(0.5, 4.0),
        alpha_frac=frac(8.0, 13.0),
        high_frac=frac(20.0, np.inf),
        line_ratio=line_ratio,
        concentration=concentration,
        frontal=frontal,
        heart_autocorr=heart,
    )


def _beat_periodicity(component: np.ndarray, fs: float) -> float:
    """Peak autocorrelation of the >15 Hz energy envelope at 36-150 beats/min lags."""
    tiny = np.finfo(float).tiny
    try:
        sharp = fir_filter(component, fs, FilterSpec("highpass", 15.0))
    except SignalTooShort:
        return 0.0
    energy = sharp**2
    energy = energy - energy.mean()
    nfft = 1 << (2 * energy.size - 1).bit_length()
    spec = np.fft.rfft(energy, nfft)
    ac = np.fft.irfft(spec * np.conj(spec), nfft)[: energy.size]
    ac = ac / max(ac[0], tiny)
    lo, hi = int(round(fs / 2.5)), int(round(fs / 0.6))
    return float(ac[lo : min(hi + 1, ac.size)].max()) if lo < ac.size else 0.0


@dataclass(frozen=True)
class IcLabel:
    label: str
    probs: tuple[float, ...]

    @property
    def prob(self) -> float:
        return self.probs[IC_CLASSES.index(self.label)]

    @classmethod
    def from_probs(cls, probs) -> IcLabel:
        probs = np.asarray(probs, dtype=float)
        probs = probs / probs.sum()
        return cls(IC_CLASSES[int(np.argmax(probs))], tuple(float(p) for p in probs))

    @classmethod
    def certain(cls, label: str, prob: float) -> IcLabel:
        """A label with ``prob`` on ``label`` and the remainder spread evenly."""
        rest = (1.0 - prob) / (len(IC_CLASSES) - 1)
        probs = [prob if c == label else rest for c in IC_CLASSES]
        return cls(label, tuple(probs))


SOFTENING = 6.0
_BASELINE = 0.35


def _clip01(v):
    return float(min(max(v, 0.0), 1.0))


def class_scores(f: FeatureVector) -> dict[str, float]:
    """Rule scores in [0, 1] per class, before softening."""
    line = _clip01((math.log10(max(f.line_ratio, 1e-12)) - 0.5) / 1.0)
    channel = _clip01((f.concentration - 0.5) / 0.35) * _clip01(1.0 - f.alpha_frac / 0.3)
    blink = _clip01((f.delta_frac - 0.3) / 0.4) * _clip01((f.frontal - 0.3) / 0.3)
    muscle = _clip01((f.high_frac - 0.3) / 0.4) * _clip01((f.spectral_slope + 0.5) / 1.0)
    heart = _clip01((f.heart_autocorr - 0.06) / 0.08)
    artifact = max(line, channel, blink, muscle, heart)
    brain = _clip01(-f.spectral_slope / 1.0) * _clip01(f.alpha_frac / 0.25) * (1.0 - artifact)
    return {
        "brain": brain,
        "muscle_artifact": muscle,
        "eye_blink": blink,
        "heart": heart,
        "line_noise": line,
        "channel_noise": channel,
        "other": _BASELINE,
    }


def classify_ic(features: FeatureVector) -> IcLabel:
    """Softmax of the rule scores; ``other`` holds a fixed baseline and wins ties."""
    scores = class_scores(features)
    logits = np.array([SOFTENING * scores[c] for c in IC_CLASSES])
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    best = int(np.argmax(probs))
    if np.isclose(probs[best], probs[IC_CLASSES.index("other")]):
        best = IC_CLASSES.index("other")
    return IcLabel(IC_CLASSES[best], tuple(float(p) for p in probs))


def read_label_file(path) -> dict[tuple[str, int, int], IcLabel]:
    """Parse ``recording_id window_index component_index class prob`` lines."""
    labels = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5 or parts[3] not in IC_CLASSES:
            raise ValueError(f"{path}:{lineno}: malformed IC label line {line!r}")
        rec, win, comp, cls, prob = parts
        labels[(rec, int(win), int(comp))] = IcLabel.certain(cls, float(prob))
    return labels


def is_excluded(label: IcLabel, threshold: float = EXCLUDE_PROB) -> bool:
    return label.label not in RETAINED_CLASSES and label.prob > threshold


def exclude_and_reconstruct(x: np.ndarray, model: IcaModel, labels) -> tuple[np.ndarray, list[int]]:
    """Back-project ``x`` with confidently-artifactual components zeroed."""
    excluded = [k for k, lab in enumerate(labels) if is_excluded(lab)]
    sources = model.sources(x)
    sources[excluded] = 0.0
    w = model.whitener
    z = np.linalg.solve(model.unmixing, sources)
    return w.inverse(z), excluded


def ica_drop_check(n_excluded: int, n_total: int, max_excluded_frac: float = 0.5) -> Decision:
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    if n_excluded / n_total > max_excluded_frac:
        return drop("ica_drop_check")
    return KEEP


def label_components(model: IcaModel, x: np.ndarray, fs: float, f_line: float, channel_names):
    sources = model.sources(x)
    mixing = model.mixing
    return [
        classify_ic(ic_features(sources[k], mixing[:, k], fs, f_line, channel_names))
        for k in range(model.n_components)
    ]
