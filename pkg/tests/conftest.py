import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bitload.bitpower import BerTargets, MoopWeights, allocate_relaxed
from bitload.channel import ChannelRealization, OfdmConfig, PuBand, adjacent_band_offsets, leakage_vector

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def random_instance(seed: int, n: int, mean_cnr: float = 100.0):
    rng = np.random.default_rng(seed)
    ch = ChannelRealization.from_cnr(rng.exponential(mean_cnr, n))
    return ch, BerTargets.uniform(1e-4, n)


def band_leakage(n: int, spacing: float = 1.0) -> np.ndarray:
    cfg = OfdmConfig(n, spacing)
    bw = n * spacing
    return leakage_vector(cfg, PuBand(bw, adjacent_band_offsets(cfg, bw)))


def tight_power_cap(ch, t, w=None, frac=0.5, b_max=6):
    w = w or MoopWeights(0.5)
    return frac * allocate_relaxed(ch, w, t, b_max).total_power


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    lines = request.config.stash[ACCEPTANCE]

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append((number, line))
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
