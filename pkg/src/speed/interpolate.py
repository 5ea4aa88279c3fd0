"""Spherical-spline interpolation of scalp potentials."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .errors import SingularSystem, TooFewSources

logger = logging.getLogger(__name__)

STIFFNESS = 4
N_TERMS = 50
LAMBDA = 1e-7


@lru_cache(maxsize=8)
def _series_factors(m: int, n_terms: int) -> np.ndarray:
    n = np.arange(1, n_terms + 1, dtype=float)
    return (2 * n + 1) / (n * (n + 1)) ** m / (4 * np.pi)


def legendre_g(cos_angle, m: int = STIFFNESS, n_terms: int = N_TERMS):
    """Spherical-spline kernel ``(1/4pi) sum_n (2n+1)/(n(n+1))^m P_n(c)``.

    Legendre polynomials come from Bonnet's recurrence; works elementwise on
    arrays.
    """
    c = np.clip(np.asarray(cos_angle, dtype=float), -1.0, 1.0)
    factors = _series_factors(m, n_terms)
    p_prev = np.ones_like(c)
    p_cur = c.copy()
    total = factors[0] * p_cur
    for n in range(1, n_terms):
        p_prev, p_cur = p_cur, ((2 * n + 1) * c * p_cur - n * p_prev) / (n + 1)
        total = total + factors[n] * p_cur
    return total


@dataclass(frozen=True)
class InterpolationMatrix:
    weights: np.ndarray
    source_names: tuple[str, ...]
    target_names: tuple[str, ...]

    def apply(self, source_data: np.ndarray) -> np.ndarray:
        return self.weights @ source_data


def interpolation_weights(
    sources: np.ndarray, targets: np.ndarray, m=STIFFNESS, n_terms=N_TERMS, lam=LAMBDA
) -> np.ndarray:
    """Weights mapping source-electrode values to target-electrode values.

    Solves the bordered spline system with a constant term, so every row
    sums to one.
    """
    sources = np.asarray(sources, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_src = sources.shape[0]
    if n_src < 4:
        raise TooFewSources(f"spline interpolation needs >= 4 sources, got {n_src}")
    g = legendre_g(sources @ sources.T, m, n_terms)
    gt = legendre_g(targets @ sources.T, m, n_terms)
    system = np.zeros((n_src + 1, n_src + 1))
    system[:n_src, :n_src] = g + lam * np.eye(n_src)
    system[:n_src, n_src] = 1.0
    system[n_src, :n_src] = 1.0
    rhs = np.zeros((n_src + 1, n_src))
    rhs[:n_src] = np.eye(n_src)
    try:
        coef = linalg.solve(system, rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if not np.all(np.isfinite(coef)):
        raise SingularSystem("non-finite spline coefficients")
    border = np.hstack([gt, np.ones((gt.shape[0], 1))])
    return border @ coef


def build_interp_matrix(
    source_names, source_pos, target_names, target_pos, m=STIFFNESS, n_terms=N_TERMS, lam=LAMBDA
) -> InterpolationMatrix:
    weights = interpolation_weights(source_pos, target_pos, m, n_terms, lam)
    return InterpolationMatrix(weights, tuple(source_names), tuple(target_names))


@lru_cache(maxsize=256)
def _cached_matrix(montage, sources: tuple[str, ...], targets: tuple[str, ...]):
    return build_interp_matrix(
        sources, montage.positions(sources), targets, montage.positions(targets)
    )


def finalize_channels(x: np.ndarray, present_names, bad, montage, events: list | None = None):
    """Produce data on ``montage.target_order``.

    Target channels that are absent or in ``bad`` are interpolated from the
    good present channels; non-target channels are dropped. Good target
    channels are copied through unchanged.

    Returns
    -------
    data : ndarray, shape (len(target_order), n_samples)
    interpolated : list of str
    """
    present_names = list(present_names)
    bad = set(bad)
    index = {name: i for i, name in enumerate(present_names)}
    good = sorted(n for n in present_names if n not in bad and n in montage.electrodes)
    target = list(montage.target_order)
    missing = [n for n in target if n not in index or n in bad]
    extras = [n for n in present_names if n not in montage.target_order]
    out = np.empty((len(target), x.shape[1]), dtype=x.dtype)
    for row, name in enumerate(target):
        if name in index and name not in bad:
            out[row] = x[index[name]]
    if missing:
        mat = _cached_matrix(montage, tuple(good), tuple(missing))
        values = mat.apply(x[[index[n] for n in good]])
        for k, name in enumerate(missing):
            out[target.index(name)] = values[k]
    if events is not None:
        if missing:
            events.append(("interpolated", {"channels": missing}))
        if extras:
            events.append(("dropped", {"channels": {n: "extra channel" for n in extras}}))
    return out, missing
