import math

import numpy as np
import pytest

from polcam.errors import ConfigError
from polcam.evalbench import SweepSpec, aop_mae_deg, run_point
from polcam.evalbench.sweep import frames_roi_series
from polcam.polcore import PolarizationState
from polcam.recon import frames_reconstruct
from polcam.sensorsim import ApsParams, PiecewiseConstantField, Region, RotatingPolarizer, SensorGeometry, simulate_aps
from polcam.sensorsim.stimulus import er_efficiency

G = SensorGeometry(32, 24)


def uniform(flux, dolp=0.0, aop=0.0):
    return PiecewiseConstantField([], default=PolarizationState(flux, dolp, aop))


def test_half_full_scale_unpolarized():
    p = ApsParams(full_scale_flux=2.0)
    frames = simulate_aps(uniform(1.0), G, p, math.inf, 0, 100_000)
    assert len(frames) == 2  # starts at 0 and 50 ms; the one at 100 ms would end after t1
    for fr in frames:
        assert np.all(fr.samples == round(1023 / 4))
        assert not fr.saturated.any()
        assert fr.t_end_us - fr.t_start_us == 20_000


def test_overexposure_saturates():
    p = ApsParams(full_scale_flux=1.0)
    fr = simulate_aps(uniform(4.0), G, p, math.inf, 0, 30_000)[0]  # each channel sees 2x full scale
    assert np.all(fr.samples == 1023) and fr.saturated.all()
    sg = frames_reconstruct(fr, G)
    assert sg.saturated.all()


def test_frame_timing():
    p = ApsParams(frame_rate_hz=20, exposure_us=10_000)
    frames = simulate_aps(uniform(1.0), G, p, math.inf, 30_000, 260_000)
    assert [f.t_start_us for f in frames] == [50_000, 100_000, 150_000, 200_000, 250_000]
    assert all(f.t_end_us - f.t_start_us == 10_000 for f in frames)


def test_dark_offset_and_range():
    p = ApsParams(full_scale_flux=2.0, dark_offset_dn=40)
    fr = simulate_aps(uniform(1.0), G, p, math.inf, 0, 30_000)[0]
    assert np.all(fr.samples == round(1023 / 4) + 40)
    assert fr.samples.min() >= 0 and fr.samples.max() <= 1023


def test_crossed_pairs_sum_to_total():
    stim = PiecewiseConstantField([Region(0, 0, 32, 24, [(0, PolarizationState(1.2, 0.8, 0.6))])])
    fr = simulate_aps(stim, G, ApsParams(full_scale_flux=3.0), math.inf, 0, 30_000)[0]
    s = frames_reconstruct(fr, G)
    s0_b = (fr.samples[0::2, 1].astype(int) + fr.samples[1::2, 0].astype(int))  # 45 + 135 of each macropixel
    assert np.max(np.abs(s.s0[:, 0] - s0_b)) <= 1


def test_blur_reduces_dolp_by_sinc():
    # an exposure spanning an AoP arc of width w keeps DoLP * sin(w) / w and the midpoint AoP
    rpm = 1000
    stim = RotatingPolarizer(frame_width=32, frame_height=24, rpm=rpm, disc_fraction=1.0)
    p = ApsParams(full_scale_flux=1.7)
    fr = simulate_aps(stim, G, p, 40.0, 0, 60_000)[0]
    s = frames_reconstruct(fr, G)
    core = (slice(4, 8), slice(6, 10))  # macropixels well inside the disc
    w = 2 * (2 * math.pi * rpm / 60) * 0.020  # doubled-angle arc swept during the exposure
    expected = er_efficiency(40.0) * math.sin(w / 2) / (w / 2)
    assert np.median(s.dolp[core]) == pytest.approx(expected, abs=0.01)
    truth = stim.omega * fr.t_mid_us % math.pi
    aop = s.aop[core].ravel()
    assert aop_mae_deg(aop, np.full(aop.size, truth), align=False)[0] < 1.0


@pytest.mark.parametrize("rpm,limit", [(30, 2.0), (1000, 30.0)])
def test_frame_aop_against_truth(rpm, limit):
    spec = SweepSpec(rpm_list=(rpm,), methods=("frames",), duration_s=2.0, frames_readout="interp", align=False)
    tr = run_point(spec, rpm)
    mae, _ = aop_mae_deg(tr.aop["frames"], tr.truth_aop, align=False)
    if rpm == 30:
        assert mae < limit
    else:
        assert mae > limit


def test_frames_series_midpoints():
    stim = RotatingPolarizer(frame_width=32, frame_height=24, rpm=30, disc_fraction=1.0)
    frames = simulate_aps(stim, G, ApsParams(full_scale_flux=1.7), 40.0, 0, 500_000)
    t, a, d, sat = frames_roi_series(frames, G, (8, 8, 20, 20), 0)
    assert np.all(t == [f.t_mid_us for f in frames])
    truth = stim.omega * t % math.pi
    assert aop_mae_deg(a, truth, align=False)[0] < 0.5
    assert not sat.any()


def test_params_validation():
    with pytest.raises(ConfigError):
        ApsParams(frame_rate_hz=20, exposure_us=60_000)
    with pytest.raises(ConfigError):
        ApsParams(full_scale_flux=0)
    with pytest.raises(ConfigError):
        ApsParams(dark_offset_dn=1023)
    with pytest.raises(ConfigError):
        simulate_aps(uniform(1.0), G, ApsParams(), math.inf, 10, 0)
