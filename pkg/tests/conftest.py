import numpy as np
import pytest
from scipy.special import sph_harm_y

from speed.channels import apply_montage, default_montage
from speed.synth import gen_scenario, get_scenario


def sine_fit(y, fs, freq):
    """Least-squares amplitude and phase of a ``freq`` Hz sinusoid plus offset."""
    t = np.arange(y.size) / fs
    basis = np.column_stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t),
                             np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return float(np.hypot(coef[0], coef[1])), float(np.arctan2(coef[1], coef[0]))


def real_harmonics(pos, max_degree):
    """Orthonormal real spherical harmonics up to ``max_degree`` at unit vectors ``pos``."""
    theta = np.arccos(np.clip(pos[:, 2], -1, 1))
    phi = np.arctan2(pos[:, 1], pos[:, 0])
    cols = []
    for n in range(max_degree + 1):
        for m in range(-n, n + 1):
            y = sph_harm_y(n, abs(m), theta, phi)
            if m < 0:
                cols.append(np.sqrt(2) * (-1) ** m * y.imag)
            elif m > 0:
                cols.append(np.sqrt(2) * (-1) ** m * y.real)
            else:
                cols.append(y.real)
    return np.column_stack(cols)


def harmonic_field(pos, max_degree, rng):
    """Random field with standard-normal coefficients on every harmonic up to ``max_degree``."""
    basis = real_harmonics(pos, max_degree)
    return basis @ rng.standard_normal(basis.shape[1])


def loo_relative_rmse(pos, values, weights_fn):
    """Leave-one-out reconstruction error relative to the field's RMS."""
    n = len(values)
    pred = np.empty(n)
    for i in range(n):
        rest = [j for j in range(n) if j != i]
        pred[i] = weights_fn(pos[rest], pos[i : i + 1])[0] @ values[rest]
    return float(np.sqrt(np.mean((pred - values) ** 2)) / np.sqrt(np.mean(values**2)))


@pytest.fixture(scope="session")
def montage():
    return default_montage()


_CACHE = {}


def scenario(name, seed=0, **overrides):
    """Generated recording with montage applied, cached across tests."""
    key = (name, seed, tuple(sorted(overrides.items())))
    if key not in _CACHE:
        rec, truth = gen_scenario(get_scenario(name, seed=seed, **overrides))
        _CACHE[key] = (apply_montage(rec), truth, rec)
    return _CACHE[key]


@pytest.fixture(scope="session")
def clean19():
    return scenario("clean19")


@pytest.fixture(scope="session")
def badmix():
    return scenario("badmix")


@pytest.fixture(scope="session")
def line60():
    return scenario("line60")


def write_corpus(root, scenarios):
    """Write ``[(relative_path, Scenario), ...]`` as EDF files; return ground truths by id."""
    from speed.synth import write_edf

    truths = {}
    for rel, sc in scenarios:
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        rec, truth = gen_scenario(sc)
        write_edf(rec, path)
        truths[rel] = truth
    return truths


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
