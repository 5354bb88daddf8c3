import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polcam.errors import DomainError, OrderingError, UndefinedAoPError
from polcam.evalbench.transfer import (cf_event_path_gain, cf_frame_path_gain, db, events_path_gain, highpass,
                                       lowpass)
from polcam.polcore import PolarizationState, aop_error
from polcam.recon import (FLAG_UNPOLARIZED, METHOD_EVENTS, POLEVENT_DTYPE, ApsLogSample, CfParams,
                          ComplementaryFilter, EventsFilter, aps_weight, cf_reconstruct, cf_update, events_aop,
                          events_update, frames_reconstruct)
from polcam.recon.events import aop_from_dl, tau_us
from polcam.recon.opcount import REFERENCE_OPS, SLACK, op_report
from polcam.sensorsim import (ApsFrame, ApsParams, DvsEvent, DvsPixelParams, DvsSensor, PiecewiseConstantField,
                              RotatingPolarizer, SensorGeometry, make_events, simulate_aps)

G2 = SensorGeometry(2, 2)
F_TAU_100MS = 1e6 / (2 * math.pi * 100_000)  # f3db whose tau is exactly 100 ms


def uniform(flux, dolp=0.0, aop=0.0):
    return PiecewiseConstantField([], default=PolarizationState(flux, dolp, aop))


# --- events method ----------------------------------------------------------

def test_tau_from_corner():
    assert tau_us(0.5) == pytest.approx(1e6 / math.pi)
    assert tau_us(F_TAU_100MS) == pytest.approx(100_000)


def test_events_update_example():
    f = EventsFilter(G2, F_TAU_100MS, 0.14, 0.14, neighbor_radius=0)
    f.state.dl[0] = 1.0
    events_update(f, DvsEvent(100_000, 0, 0, 1))
    assert f.state.dl[0] == pytest.approx(math.exp(-1) + 0.14, abs=1e-12)
    assert f.state.dl[0] == pytest.approx(0.5079, abs=1e-4)


def test_same_timestamp_accumulates():
    f = EventsFilter(G2, 0.5, 0.14, 0.1, neighbor_radius=0)
    f.process(make_events([500, 500, 500], [1, 1, 1], [0, 0, 0], [1, 1, 0]))
    assert f.dl[0, 1] == pytest.approx(0.14 + 0.14 - 0.1, abs=1e-15)


def test_ten_tau_decay():
    f = EventsFilter(G2, F_TAU_100MS, neighbor_radius=0)
    f.process(make_events([0], [0], [0], [1]))
    v = f.sample([1_000_000], [0])[0, 0]
    assert 0 < v < 5e-5 * 0.14


def test_step_decays_as_closed_form():
    f = EventsFilter(G2, 0.5, 0.14, 0.14, neighbor_radius=0)
    t0 = 250_000
    f.process(make_events([t0] * 7, [0] * 7, [0] * 7, [1] * 7))
    t = np.linspace(t0, t0 + 5e6, 500)
    got = f.sample(t, [0])[:, 0]
    ref = 0.98 * np.exp(-(t - t0) / tau_us(0.5))
    assert np.max(np.abs(got - ref)) < 1e-6


def test_neighbor_rule_same_angle_only():
    g = SensorGeometry(10, 10)
    f = EventsFilter(g, 0.5, 0.14, 0.14, neighbor_radius=1)
    f.process(make_events([10], [4], [4], [1]))
    touched = np.argwhere(f.dl != 0)
    expected = {(y, x) for y in (2, 4, 6) for x in (2, 4, 6)}
    assert {tuple(p) for p in touched} == expected
    assert np.all(f.dl[f.dl != 0] == 0.14)
    # at the border the neighbourhood is clipped
    f2 = EventsFilter(g, 0.5, 0.14, 0.14, neighbor_radius=1)
    f2.process(make_events([10], [0], [1], [0]))
    assert {tuple(p) for p in np.argwhere(f2.dl != 0)} == {(1, 0), (1, 2), (3, 0), (3, 2)}


def test_events_aop_examples():
    f = EventsFilter(G2, 0.5, neighbor_radius=0)
    chan = G2.channel_offsets()
    dl = (0.2, 0.0, -0.2, 0.0)
    for c, v in enumerate(dl):
        dx, dy = chan[c]
        f.state.dl[dy * 2 + dx] = v
    assert aop_error(events_aop(f, 0, 0, 0), 0.0) < 1e-12
    with pytest.raises(UndefinedAoPError):
        events_aop(EventsFilter(G2), 0, 0, 0)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(-5, 5))
def test_common_offset_leaves_aop_unchanged(d, c):
    if abs(d[0] - d[2]) + abs(d[1] - d[3]) < 1e-6:
        return
    a = aop_from_dl.py_func(*d)
    b = aop_from_dl.py_func(*[v + c for v in d])
    assert aop_error(a, b) < 1e-9


@pytest.fixture(scope="module")
def stream():
    g = SensorGeometry(24, 16)
    stim = RotatingPolarizer(frame_width=24, frame_height=16, rpm=200, disc_fraction=1.0)
    return g, DvsSensor(g, DvsPixelParams(rng_seed=5)).simulate(stim, 40.0, 0, 500_000)


def test_packet_split_invariance(stream, rng):
    g, ev = stream
    whole = EventsFilter(g, 0.5, neighbor_radius=1)
    whole.process(ev)
    for _ in range(3):
        cuts = np.sort(rng.choice(np.arange(1, len(ev)), 20, replace=False))
        parts = EventsFilter(g, 0.5, neighbor_radius=1)
        for chunk in np.split(ev, cuts):
            parts.process(chunk)
        assert parts.state.dl.tobytes() == whole.state.dl.tobytes()
        assert parts.state.last_t_us.tobytes() == whole.state.last_t_us.tobytes()


def test_grid_samples_independent_of_split(stream):
    g, ev = stream
    times = np.linspace(10_000, 490_000, 50)
    idx = np.arange(g.width * g.height)
    ref = EventsFilter(g).run(ev, times, idx)
    f = EventsFilter(g)
    rows = []
    for chunk in np.array_split(ev, 7):
        a, _ = f.process(chunk, times[sum(len(r) for r in rows):], idx)
        rows.append(a)
    rows.append(f.flush())
    assert np.array_equal(np.concatenate(rows), ref)


def test_out_of_order_event_rejected():
    f = EventsFilter(G2)
    f.process(make_events([100], [0], [0], [1]))
    before = f.state.dl.copy()
    with pytest.raises(OrderingError):
        f.process(make_events([50], [0], [0], [1]))
    assert np.array_equal(f.state.dl, before)


def test_polarization_events(stream):
    g, ev = stream
    rec = EventsFilter(g).polarization_events(ev[:500])
    assert rec.dtype == POLEVENT_DTYPE and len(rec) == 500
    assert np.all(rec["method"] == METHOD_EVENTS)
    assert np.all(np.isnan(rec["dolp"]))
    ok = np.isfinite(rec["aop"])
    assert np.all((rec["aop"][ok] >= 0) & (rec["aop"][ok] < math.pi))
    assert np.all((rec["flags"] & FLAG_UNPOLARIZED).astype(bool) == ~ok)
    assert np.array_equal(rec["X"], ev["x"][:500] // 2)


def test_events_path_minus_3db_at_corner():
    g = abs(events_path_gain(0.5, 0.5))
    assert db(g) == pytest.approx(-3.01, abs=0.2)


@pytest.mark.parametrize("mult", [0.1, 1.0, 10.0])
def test_events_path_matches_highpass(mult):
    g = events_path_gain(mult * 0.5, 0.5)
    assert abs(db(g) - db(highpass(mult * 0.5, 0.5))) < 1.0


# --- frames method ----------------------------------------------------------

def test_flat_frame_is_unpolarized():
    g = SensorGeometry(8, 8)
    fr = ApsFrame(0, 20_000, np.full((8, 8), 300, np.uint16))
    s = frames_reconstruct(fr, g)
    assert np.all(s.dolp == 0)
    assert np.all(np.isnan(s.aop))
    assert s.t_us == 10_000


def test_static_30deg_aop():
    g = SensorGeometry(16, 16)
    fr = simulate_aps(uniform(1.0, 1.0, math.radians(30)), g, ApsParams(full_scale_flux=1.2), math.inf, 0, 30_000)[0]
    err = np.degrees(aop_error(frames_reconstruct(fr, g).aop, math.radians(30)))
    assert err.max() <= 0.3


@pytest.mark.parametrize("dolp", [0.0, 0.3, 0.7, 1.0])
@pytest.mark.parametrize("exposure", [2_000, 20_000, 50_000])
def test_static_dolp(dolp, exposure):
    g = SensorGeometry(16, 16)
    p = ApsParams(frame_rate_hz=10, exposure_us=exposure, full_scale_flux=1.2 * exposure / 20_000)
    fr = simulate_aps(uniform(1.0, dolp, 1.1), g, p, math.inf, 0, 200_000)[0]
    s = frames_reconstruct(fr, g)
    assert np.max(np.abs(s.dolp - dolp)) < 0.02


def test_dark_offset_cancels():
    g = SensorGeometry(8, 8)
    stim = uniform(1.0, 0.5, 0.4)
    a = frames_reconstruct(simulate_aps(stim, g, ApsParams(full_scale_flux=1.5), math.inf, 0, 30_000)[0], g)
    b = frames_reconstruct(simulate_aps(stim, g, ApsParams(full_scale_flux=1.5, dark_offset_dn=64), math.inf, 0,
                                        30_000)[0], g)
    assert np.allclose(a.s0, b.s0) and np.allclose(a.s1, b.s1) and np.allclose(a.s2, b.s2)


# --- complementary filter ----------------------------------------------------

def frame_of(dn, t_end, g=G2):
    return ApsFrame(t_end - 20_000, t_end, np.full((g.height, g.width), dn, np.uint16))


def test_cf_steady_state_follows_aps():
    cf = ComplementaryFilter(G2, CfParams(adaptive=False))
    cf_update(cf, frame_of(100, 20_000))
    for k in range(2, 400):
        cf_update(cf, frame_of(400, 50_000 * k))
    l = cf.sample([50_000 * 399 + 1], np.arange(4))[0]
    assert np.allclose(l, math.log(400), atol=1e-6)


def test_cf_zero_change_matches_frames():
    g = SensorGeometry(8, 8)
    stim = uniform(1.0, 0.6, 0.9)
    frames = simulate_aps(stim, g, ApsParams(full_scale_flux=1.5), math.inf, 0, 500_000)
    cf = ComplementaryFilter(g)
    for fr in frames:
        cf.update_frame(fr)
    s_cf = cf_reconstruct(cf, frames[-1].t_end_us + 1000)
    s_fr = frames_reconstruct(frames[-1], g)
    assert np.max(np.abs(s_cf.s0 - s_fr.s0)) <= 1
    assert np.max(np.abs(s_cf.s1 - s_fr.s1)) <= 1
    assert np.max(np.abs(s_cf.s2 - s_fr.s2)) <= 1


def test_cf_log_state_limit():
    cf = ComplementaryFilter(G2)
    cf.update_frame(frame_of(500, 20_000))
    chan = G2.channel_offsets()
    for eps in (1e-3, 1e-6, 1e-9):
        vals = (1.0, 0.5, eps, 0.5)
        for c, v in enumerate(vals):
            dx, dy = chan[c]
            cf.state.l[dy * 2 + dx] = math.log(v)
            cf.state.l_aps[dy * 2 + dx] = math.log(v)
        s = cf.reconstruct(20_000)
        assert s.dolp[0, 0] == pytest.approx(1.0, abs=3 * eps)
        assert aop_error(s.aop[0, 0], 0.0) < 1e-9


def test_cf_static_dolp_after_two_frames():
    g = SensorGeometry(16, 16)
    stim = uniform(1.0, 1.0, 0.5)
    frames = simulate_aps(stim, g, ApsParams(full_scale_flux=1.2), math.inf, 0, 80_000)[:2]
    cf = ComplementaryFilter(g)
    out = cf.run(np.zeros(0, make_events([], [], [], []).dtype), frames, [frames[-1].t_end_us + 5000],
                 np.arange(g.width * g.height))
    i = np.exp(out[0].reshape(g.height, g.width))
    s = frames_reconstruct(ApsFrame(0, 1, i), g)
    assert np.all(s.dolp > 0.95)


def test_cf_drops_events_before_first_frame():
    cf = ComplementaryFilter(G2)
    cf.update_events(make_events([10, 20, 30], [0, 1, 0], [0, 0, 1], [1, 1, 0]))
    assert cf.state.dropped_events == 3
    assert not cf.state.initialized
    with pytest.raises(DomainError):
        cf.reconstruct(40)
    assert np.all(np.isnan(cf.sample([40], np.arange(4))))


def test_cf_event_adds_threshold():
    cf = ComplementaryFilter(G2, CfParams(theta_on=0.2, theta_off=0.1))
    cf.update_frame(frame_of(100, 20_000))
    cf.update_events(make_events([20_000, 20_000], [1, 1], [0, 0], [1, 0]))
    assert cf.state.l[1] == pytest.approx(math.log(100) + 0.1)


def test_cf_ordering():
    cf = ComplementaryFilter(G2)
    cf.update_frame(frame_of(100, 20_000))
    cf.update_events(make_events([30_000], [0], [0], [1]))
    with pytest.raises(OrderingError):
        cf.update_events(make_events([25_000], [0], [0], [1]))
    with pytest.raises(OrderingError):
        cf.update_frame(frame_of(100, 25_000))


def test_aps_weight_ramp():
    lo, hi = 10.0, 200.0
    dn8 = np.array([0.0, 10.0, 100.0, 200.0, 209.5, 229.0, 255.0])
    w = aps_weight(dn8 * 1023 / 255, limits=(lo, hi), lam=0.1)
    assert w[1:4] == pytest.approx([1, 1, 1])
    # the margin is 10% of the 190 DN window: 0 DN sits 10 / 19 of the way down the ramp
    assert w[0] == pytest.approx(1 - 0.9 * 10 / 19)
    assert w[4] == pytest.approx(1 - 0.9 * 0.5)
    assert w[5] == pytest.approx(0.1) and w[6] == pytest.approx(0.1)


def test_cf_log_sample_weight_and_time():
    cf = ComplementaryFilter(G2)
    s = cf.log_sample(frame_of(1023, 40_000))
    assert isinstance(s, ApsLogSample) and s.t_us == 40_000
    assert np.allclose(s.weight, 0.1)
    assert np.allclose(s.log_sample, math.log(1023))


@pytest.mark.parametrize("mult", [0.1, 1.0, 10.0])
def test_cf_paths_match_closed_forms(mult):
    f = mult * 1.6
    ge = cf_event_path_gain(f, 1.6)
    gf = cf_frame_path_gain(f, 1.6)
    assert abs(db(ge) - db(highpass(f, 1.6))) < 1.0
    assert abs(db(gf) - db(lowpass(f, 1.6))) < 1.0
    if mult == 1.0:
        assert abs(db(ge) - db(gf)) < 1.0


# --- operation counts -----------------------------------------------------

def test_op_counts_within_budget():
    r = op_report()
    for k, ref in REFERENCE_OPS.items():
        assert r["measured"][k] <= SLACK * ref, (k, r["measured"][k])
    assert all(r["within_budget"].values())
