import numpy as np
import pytest

from cfduplex import channel, pilot
from cfduplex.config import SystemConfig

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion result: ``acceptance(n, ok, detail)``."""
    results = request.config.stash[_ACCEPTANCE]

    def record(n: int, ok: bool, detail: str) -> None:
        results[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def build_instance(cfg: SystemConfig, seed: int, max_colors=None):
    geom = channel.generate_geometry(cfg, seed)
    gains = channel.large_scale_fading(geom, cfg, seed)
    pilots, conn = pilot.assign_pilots(geom, cfg, seed, max_colors=max_colors)
    stats = channel.estimation_coefficients(gains, pilots, cfg)
    return geom, gains, pilots, conn, stats


@pytest.fixture
def small_cfg():
    return SystemConfig(num_aps=4, num_ues=6, area_side_m=500.0, inai_rel_noise_db=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_gains(beta, ul_ues, dl_ues, noise=1.0, zeta=0.0, zeta_si=0.0, epsilon=None):
    """Hand-built large-scale gains for plug-in tests."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    M = beta.shape[0]
    z = np.full((M, M), float(zeta))
    np.fill_diagonal(z, 0.0)
    ul, dl = np.asarray(ul_ues, dtype=int), np.asarray(dl_ues, dtype=int)
    eps = np.zeros((len(dl), len(ul))) if epsilon is None else np.asarray(epsilon, dtype=float)
    return channel.LargeScaleGains(beta, z, np.full(M, float(zeta_si)), eps, ul, dl, float(noise))


def perfect_stats(beta):
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    return channel.EstimateStats(np.ones_like(beta), beta.copy(), np.zeros_like(beta))
