import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bilateral import bs_kernel, dec_kernel, sim
from bilateral.feedback import assemble_gains
from bilateral.folding import fold, plant_from_strings

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

Y0 = 0.325
MU = 10.0
LAM = ["z^2+2", "exp(-z)+0.5"]
A = [["1", "1+z"], ["0.5+z", "1"]]

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_line(request):
    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_LINES].append(line)
        print(line)
    return emit


@pytest.fixture(scope="session")
def plant():
    return plant_from_strings(LAM, A)


@pytest.fixture(scope="session")
def folded(plant):
    return fold(plant, Y0)


@pytest.fixture(scope="session")
def design(folded):
    """Full design at the default resolution; ``extras`` keeps the coupling inputs."""
    bs = bs_kernel.solve(folded, MU)
    inputs = dec_kernel.inputs_from_solution(bs)
    dec = dec_kernel.solve_dec(folded, inputs)
    gains = assemble_gains(bs, dec, folded)
    return sim.Design(folded, MU, bs, dec, gains, extras={"inputs": inputs})


@pytest.fixture(scope="session")
def closed_loop(plant, design):
    return sim.simulate(plant, design.gains, sim.SimConfig())


@pytest.fixture(scope="session")
def open_loop(plant):
    return sim.simulate(plant, None, sim.SimConfig(mode=sim.OPEN_LOOP, y0=Y0))


@pytest.fixture(scope="session")
def target_run(design, closed_loop):
    w0 = sim.to_target(closed_loop.w[0], closed_loop.zhat, design)
    return sim.simulate_target(design, w0, sim.SimConfig())


def zero_plant(n=2, lam=None):
    lam = lam or [str(2.0 + n - k) for k in range(n)]
    return plant_from_strings(lam, [["0"] * n for _ in range(n)])


@pytest.fixture(scope="session")
def trivial_design():
    """A = 0 and mu = 0: every kernel vanishes."""
    f = fold(zero_plant(), 0.4)
    bs = bs_kernel.solve(f, 0.0)
    inputs = dec_kernel.inputs_from_solution(bs)
    dec = dec_kernel.solve_dec(f, inputs)
    return sim.Design(f, 0.0, bs, dec, assemble_gains(bs, dec, f), extras={"inputs": inputs})


def smooth_field(rng, shape, z):
    """Random low-order trigonometric field sampled on ``z`` (last axis)."""
    a = rng.standard_normal(shape + (3,))
    return a[..., 0:1] + a[..., 1:2] * np.sin(np.pi * z) + a[..., 2:3] * np.cos(2 * z)
