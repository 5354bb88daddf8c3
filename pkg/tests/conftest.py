import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("polcam", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("polcam")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running simulation test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class Timed:
    """A value computed once per session together with its wall time."""

    def __init__(self, fn):
        import time

        t = time.perf_counter()
        self.value = fn()
        self.seconds = time.perf_counter() - t


@pytest.fixture(scope="session")
def default_sweep():
    from polcam.evalbench import SweepSpec, run_sweep

    spec = SweepSpec()
    return spec, Timed(lambda: run_sweep(spec))


@pytest.fixture(scope="session")
def qwp_sweep():
    from polcam.evalbench import SweepSpec, dolp_error_growth, run_sweep

    spec = SweepSpec(stimulus="qwp", methods=("frames", "cf"))
    run = Timed(lambda: run_sweep(spec))
    return spec, run, dolp_error_growth(spec, run.value)


@pytest.fixture(scope="session")
def hdr_reports():
    from polcam.evalbench import HdrSpec, hdr_comparison

    return {ratio: hdr_comparison(HdrSpec(ratio=ratio)) for ratio in (1.0, 2000.0)}


@pytest.fixture(scope="session")
def qwp_roi_streams():
    """In-ROI event streams of the QWP stimulus at 30 and 1000 RPM (3 s, ideal sensor)."""
    from polcam.sensorsim import DvsPixelParams, DvsSensor, PolarizerPlusQwp, SensorGeometry

    g = SensorGeometry()
    roi = g.centered_roi(12)
    out = {}
    for rpm in (30.0, 1000.0):
        stim = PolarizerPlusQwp(g.width, g.height, rpm=rpm)
        out[rpm] = DvsSensor(g, DvsPixelParams.ideal()).simulate(stim, 40.0, 0, 3e6, region=roi)
    return roi, out


ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """Record and print one acceptance line; fails the test when the criterion is not met."""

    def check(number: int, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
