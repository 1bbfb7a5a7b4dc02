import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def fd_grad(f, x, h=1e-6):
    """Central differences of a scalar function."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- desk-scale data shared by the slow tests ---------------------------------------


@pytest.fixture(scope="session")
def desk_runs():
    """The 40 training runs of the default pipeline (seed 0) and their R0 pairs."""
    from ganrom.cli import stage_seed
    from ganrom.config import PipelineConfig
    from ganrom.epi_sim import RegionMask, run_many, sample_r0_pairs

    sim = PipelineConfig().simulation
    pairs = sample_r0_pairs(sim.n_runs, sim.r0_mean, sim.r0_std, rng=stage_seed(0, "simulate"))
    runs = run_many([sim.params.with_r0(*p) for p in pairs], RegionMask.default(), sim.duration)
    return runs, np.asarray(pairs)


@pytest.fixture(scope="session")
def truth_run():
    from ganrom.config import PipelineConfig
    from ganrom.epi_sim import RegionMask, simulate

    sim = PipelineConfig().simulation
    return simulate(sim.params.with_r0(*sim.truth_r0), RegionMask.default(), sim.duration)


# -- acceptance report ----------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
