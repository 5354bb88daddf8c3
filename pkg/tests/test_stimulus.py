import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polcam.errors import ConfigError, DomainError
from polcam.polcore import PolarizationState, aop_error, malus_array
from polcam.sensorsim import (HdrFan, PiecewiseConstantField, PolarizerPlusQwp, Region, RotatingPolarizer,
                              SensorGeometry, eval_stimulus)
from polcam.sensorsim._dvs_kernel import seg_log

PI = math.pi
CX, CY = 172, 129  # inside the default disc


def mueller_polarizer(theta):
    c, s = math.cos(2 * theta), math.sin(2 * theta)
    return 0.5 * np.array([[1, c, s, 0], [c, c * c, c * s, 0], [s, c * s, s * s, 0], [0, 0, 0, 0]])


def mueller_retarder(q, delta):
    c, s = math.cos(2 * q), math.sin(2 * q)
    cd, sd = math.cos(delta), math.sin(delta)
    return np.array([[1, 0, 0, 0],
                     [0, c * c + s * s * cd, c * s * (1 - cd), -s * sd],
                     [0, c * s * (1 - cd), s * s + c * c * cd, c * sd],
                     [0, s * sd, -c * sd, cd]])


def qwp_oracle(theta, q):
    out = mueller_retarder(q, PI / 2) @ mueller_polarizer(theta) @ np.array([1.0, 0, 0, 0])
    s0, s1, s2 = out[:3]
    return math.hypot(s1, s2) / s0, 0.5 * math.atan2(s2, s1)


def segment_flux(tab, pixel, t):
    sel = (tab.pixel == pixel) & (tab.t_start <= t) & (t <= tab.t_end)
    i = np.flatnonzero(sel)[0]
    p = tab.params[i]
    return math.exp(seg_log(tab.kind[i], p[0], p[1], p[2], p[3], tab.t_start[i], t))


# --- closed forms ---------------------------------------------------------

def test_rotating_examples():
    stim = RotatingPolarizer(rpm=30)
    s = eval_stimulus(stim, CX, CY, 0)
    assert (s.aop, s.dolp) == (0.0, 1.0)
    assert eval_stimulus(stim, CX, CY, 0.5e6).aop == pytest.approx(PI / 2)
    assert eval_stimulus(stim, 0, 0, 0.3e6).dolp == 0.0  # background is unpolarized


def test_eval_rejects_negative_time():
    with pytest.raises(DomainError):
        eval_stimulus(RotatingPolarizer(), CX, CY, -1)


def _wraps(aop):
    return int(np.sum(np.diff(aop) < -PI / 2))


@pytest.mark.parametrize("rpm", [30, 200, 1000])
def test_rotating_two_aop_cycles_per_rev(rpm):
    stim = RotatingPolarizer(rpm=rpm)
    rev_us = 60e6 / rpm
    t = np.linspace(0, rev_us, 20001)[:-1] + 1e-3
    _, _, aop = stim.state_arrays(np.full_like(t, CX), np.full_like(t, CY), t)
    cycles = (np.unwrap(2 * aop)[-1] - 2 * aop[0]) / (2 * PI)
    assert cycles == pytest.approx(2.0, abs=1e-3)
    assert _wraps(aop) == 1  # one wrap strictly inside, the next lands on the revolution boundary


def test_qwp_examples():
    q = 0.3
    stim = PolarizerPlusQwp(rpm=30, qwp_axis_angle=q, phase=q)
    assert eval_stimulus(stim, CX, CY, 0).dolp == pytest.approx(1.0)
    t45 = (PI / 4) / stim.omega
    assert eval_stimulus(stim, CX, CY, t45).dolp == pytest.approx(0.0, abs=1e-12)


def test_qwp_matches_mueller_oracle(rng):
    for _ in range(200):
        q = rng.uniform(0, PI)
        stim = PolarizerPlusQwp(rpm=rng.uniform(1, 1000), qwp_axis_angle=q, phase=rng.uniform(0, 2 * PI))
        t = rng.uniform(0, 1e6)
        theta = stim.omega * t + stim.phase
        d_ref, a_ref = qwp_oracle(theta, q)
        s = eval_stimulus(stim, CX, CY, t)
        assert s.dolp == pytest.approx(d_ref, abs=1e-12)
        if d_ref > 1e-6:
            assert aop_error(s.aop, a_ref) < 1e-9


def test_qwp_four_dolp_cycles_per_rev():
    stim = PolarizerPlusQwp(rpm=60, qwp_axis_angle=0.2)
    t = np.linspace(0, 1e6, 40001)[:-1] + 7.0
    _, dolp, aop = stim.state_arrays(np.full_like(t, CX), np.full_like(t, CY), t)
    # DoLP = |cos 2(theta - q)| has one minimum per cycle
    low = dolp < 0.05
    assert int(np.sum(low[1:] & ~low[:-1])) + int(low[0]) == 4
    # the AoP switches between the two QWP axes at each of those minima
    assert int(np.sum(aop_error(aop[1:], aop[:-1]) > 1.0)) == 4


def test_hdr_fan_sectors():
    fan = HdrFan(rpm=200, bright_flux=2000, dark_flux=1)
    x, y = fan.center
    xs = np.array([x + 50, x - 50])
    ys = np.array([y + 1, y + 1])
    flux, dolp, aop = fan.state_arrays(xs, ys, np.zeros(2))
    assert flux.tolist() == [1.0, 2000.0]
    assert dolp.tolist() == [1.0, 1.0]
    ang = fan.azimuth(xs, ys)
    k = np.floor(np.mod(ang, 2 * PI) / (PI / 3)).astype(int)
    np.testing.assert_allclose(aop, np.mod(k * PI / 6, PI), atol=1e-12)
    assert fan.sector_count == 6 and fan.sector_aop_step == pytest.approx(PI / 6)
    with pytest.raises(ConfigError):
        HdrFan(sector_count=0)


def test_piecewise_constant_field():
    a = PolarizationState(2.0, 0.5, 0.3)
    b = PolarizationState(3.0, 1.0, 1.0)
    f = PiecewiseConstantField([Region(0, 0, 10, 10, [(0, a), (1000, b)])])
    assert eval_stimulus(f, 5, 5, 500) == a
    assert eval_stimulus(f, 5, 5, 1500) == b
    assert eval_stimulus(f, 20, 20, 1500) == f.default


# --- analytic segments agree with the state closed form ---------------------

STIMULI = [
    RotatingPolarizer(rpm=300, phase=0.4),
    RotatingPolarizer(rpm=45, dolp=0.6),
    PolarizerPlusQwp(rpm=120, qwp_axis_angle=0.7),
    HdrFan(rpm=200),
    HdrFan(rpm=-90, phase=1.0),
    PiecewiseConstantField([Region(100, 100, 200, 180, [(0, PolarizationState(1.5, 0.4, 0.2)),
                                                       (50_000, PolarizationState(0.7, 0.9, 2.5))])]),
]


@pytest.mark.parametrize("stim", STIMULI, ids=lambda s: type(s).__name__)
@pytest.mark.parametrize("er", [math.inf, 40.0])
def test_segments_match_state(stim, er, rng):
    g = SensorGeometry()
    xs = rng.integers(0, g.width, 64)
    ys = rng.integers(0, g.height, 64)
    ang = g.angle_map()[ys, xs]
    t0, t1 = 1000.0, 201_000.0
    tab = stim.segments(xs, ys, ang, er, t0, t1)
    for i in range(len(xs)):
        for t in rng.uniform(t0, t1, 5):
            f, d, a = stim.state_arrays(np.array([xs[i]]), np.array([ys[i]]), np.array([t]))
            ref = float(malus_array(f, d, a, ang[i], er)[0])
            if ref <= 0:
                continue
            assert segment_flux(tab, i, t) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@given(st.floats(0, 1e7), st.floats(1, 2000))
def test_rotating_aop_rate(t, rpm):
    stim = RotatingPolarizer(rpm=rpm)
    s = eval_stimulus(stim, CX, CY, t)
    assert aop_error(s.aop, 2 * PI * rpm / 60 * t * 1e-6) < 1e-6
