"""Numeric sine sweeps of the reconstruction filters.

A sinusoidally modulated flux drives a small DVS array; the events go
through the events-method highpass or the complementary filter, and the
gain is the ratio of the output fundamental to the input log-intensity
fundamental over whole periods after the transient. The CF frame path is
driven by log samples delivered at ``frame_rate_hz`` (zero-order hold), far
above the sweep frequencies so that sampling does not colour the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..recon.cf import ApsLogSample, CfParams, ComplementaryFilter
from ..recon.events import EventsFilter
from ..sensorsim.dvs import DvsPixelParams, DvsSensor
from ..sensorsim.geometry import SensorGeometry
from ..sensorsim.stimulus import SEG_SINE, SegmentTable

_GEOM = SensorGeometry(2, 2)
_IDX = np.arange(4)


@dataclass
class SineFlux:
    """Spatially uniform flux ``1 + depth * cos(2 pi f t)``, unpolarized."""

    freq_hz: float
    depth: float = 0.1

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.freq_hz * 1e-6

    def log_intensity(self, t_us):
        return np.log(1.0 + self.depth * np.cos(self.omega * np.asarray(t_us, float)))

    def state_arrays(self, x, y, t_us):
        f = 1.0 + self.depth * np.cos(self.omega * np.asarray(t_us, float))
        f = np.broadcast_to(f, np.broadcast(np.asarray(x), f).shape)
        return f, np.zeros_like(f), np.zeros_like(f)

    def aop_rate(self) -> float:
        return 0.0

    def segments(self, x, y, angle, er, t0, t1):
        n = len(np.asarray(x))
        params = np.zeros((n, 4))
        # behind any polarizer unpolarized light is halved
        params[:, 0] = 0.5
        params[:, 1] = 0.5 * self.depth
        params[:, 2] = self.omega
        return SegmentTable(np.arange(n, dtype=np.int64), np.full(n, SEG_SINE, np.int64),
                            np.full(n, float(t0)), np.full(n, float(t1)), params)


def _window(freq_hz: float, tau_s: float, periods: int, settle_tau: float):
    period_us = 1e6 / freq_hz
    start = math.ceil(settle_tau * tau_s * 1e6 / period_us) * period_us
    return start, start + periods * period_us, period_us


def _fundamental(t_us, v, freq_hz) -> complex:
    w = 2.0 * math.pi * freq_hz * 1e-6
    return complex(2.0 * np.mean(v * np.exp(-1j * w * np.asarray(t_us))))


def _grid(start, stop, period_us, per_period):
    n = int(round((stop - start) / period_us * per_period))
    return start + (np.arange(n) + 0.5) * (stop - start) / n


def _events(stim, theta, t1):
    params = DvsPixelParams.ideal(theta_on=theta, theta_off=theta, refractory_us=0)
    return DvsSensor(_GEOM, params).simulate(stim, math.inf, 0.0, t1)


def events_path_gain(freq_hz: float, f3db_hz: float = 0.5, theta: float = 0.002, depth: float = 0.1,
                     periods: int = 4, per_period: int = 256) -> complex:
    """Complex gain of the events-method highpass at ``freq_hz``."""
    stim = SineFlux(freq_hz, depth)
    tau = 1.0 / (2 * math.pi * f3db_hz)
    start, stop, per = _window(freq_hz, tau, periods, 8.0)
    ev = _events(stim, theta, stop + 1)
    grid = _grid(start, stop, per, per_period)
    filt = EventsFilter(_GEOM, f3db_hz, theta, theta, neighbor_radius=0)
    out = filt.run(ev, grid, _IDX).mean(axis=1)
    return _fundamental(grid, out, freq_hz) / _fundamental(grid, stim.log_intensity(grid), freq_hz)


def _cf(f3db_hz, theta=0.14):
    return ComplementaryFilter(_GEOM, CfParams(f3db_hz=f3db_hz, theta_on=theta, theta_off=theta, adaptive=False))


def _held(value, t_us):
    return ApsLogSample(int(t_us), np.full(4, float(value)), np.ones(4))


def cf_event_path_gain(freq_hz: float, f3db_hz: float = 1.6, theta: float = 0.002, depth: float = 0.1,
                       periods: int = 4, per_period: int = 256) -> complex:
    """CF gain from events alone (the frame input held at a constant zero log level)."""
    stim = SineFlux(freq_hz, depth)
    tau = 1.0 / (2 * math.pi * f3db_hz)
    start, stop, per = _window(freq_hz, tau, periods, 8.0)
    ev = _events(stim, theta, stop + 1)
    grid = _grid(start, stop, per, per_period)
    cf = _cf(f3db_hz, theta)
    cf.update_frame(_held(0.0, 0))
    out = cf.run(ev, [], grid, _IDX).mean(axis=1)
    return _fundamental(grid, out, freq_hz) / _fundamental(grid, stim.log_intensity(grid), freq_hz)


def cf_frame_path_gain(freq_hz: float, f3db_hz: float = 1.6, frame_rate_hz: float = 1000.0, depth: float = 0.1,
                       periods: int = 4, per_period: int = 256) -> complex:
    """CF gain from log samples alone (no events), samples held between updates."""
    stim = SineFlux(freq_hz, depth)
    tau = 1.0 / (2 * math.pi * f3db_hz)
    start, stop, per = _window(freq_hz, tau, periods, 8.0)
    dt = 1e6 / frame_rate_hz
    t_frames = np.arange(0.0, stop + dt, dt)
    levels = stim.log_intensity(t_frames)
    grid = _grid(start, stop, per, per_period)
    cf = _cf(f3db_hz)
    out = np.empty(len(grid))
    g = 0
    for k, (tf, lv) in enumerate(zip(t_frames, levels)):
        nxt = t_frames[k + 1] if k + 1 < len(t_frames) else math.inf
        cf.update_frame(_held(lv, tf))
        j = int(np.searchsorted(grid, nxt, side="left"))
        if j > g:
            out[g:j] = cf.sample(grid[g:j], _IDX).mean(axis=1)
            g = j
    return _fundamental(grid, out, freq_hz) / _fundamental(grid, stim.log_intensity(grid), freq_hz)


def highpass(freq_hz, f3db_hz):
    s = 1j * np.asarray(freq_hz, float) / f3db_hz
    return s / (1 + s)


def lowpass(freq_hz, f3db_hz):
    s = 1j * np.asarray(freq_hz, float) / f3db_hz
    return 1 / (1 + s)


def db(x):
    return 20.0 * np.log10(np.abs(x))


def crossing(freqs, values, level):
    """Log-interpolated frequency where ``values`` (monotone in freqs) crosses ``level``."""
    f = np.log(np.asarray(freqs, float))
    v = np.asarray(values, float) - level
    for i in range(len(v) - 1):
        if v[i] == 0:
            return float(np.exp(f[i]))
        if v[i] * v[i + 1] < 0:
            return float(np.exp(f[i] - v[i] * (f[i + 1] - f[i]) / (v[i + 1] - v[i])))
    return math.nan


@dataclass
class TransferReport:
    f3db_events_hz: float
    f3db_cf_hz: float
    freqs_events: np.ndarray
    events_gain: np.ndarray
    freqs_cf: np.ndarray
    cf_event_gain: np.ndarray
    cf_frame_gain: np.ndarray

    @property
    def events_minus3db_hz(self) -> float:
        return crossing(self.freqs_events, db(self.events_gain), -10 * math.log10(2))

    @property
    def cf_crossover_hz(self) -> float:
        return crossing(self.freqs_cf, db(self.cf_event_gain) - db(self.cf_frame_gain), 0.0)

    @property
    def events_max_dev_db(self) -> float:
        return float(np.max(np.abs(db(self.events_gain) - db(highpass(self.freqs_events, self.f3db_events_hz)))))

    @property
    def cf_max_dev_db(self) -> float:
        hp = np.abs(db(self.cf_event_gain) - db(highpass(self.freqs_cf, self.f3db_cf_hz)))
        lp = np.abs(db(self.cf_frame_gain) - db(lowpass(self.freqs_cf, self.f3db_cf_hz)))
        return float(max(hp.max(), lp.max()))


def transfer_sweep(f3db_events_hz: float = 0.5, f3db_cf_hz: float = 1.6, n_freqs: int = 9,
                   span=(0.1, 10.0)) -> TransferReport:
    """Gains of both filters at ``n_freqs`` log-spaced multiples of their corners."""
    mult = np.geomspace(span[0], span[1], n_freqs)
    fe = mult * f3db_events_hz
    fc = mult * f3db_cf_hz
    ge = np.array([events_path_gain(f, f3db_events_hz) for f in fe])
    gce = np.array([cf_event_path_gain(f, f3db_cf_hz) for f in fc])
    gcf = np.array([cf_frame_path_gain(f, f3db_cf_hz) for f in fc])
    return TransferReport(f3db_events_hz, f3db_cf_hz, fe, ge, fc, gce, gcf)


__all__ = ["SineFlux", "TransferReport", "cf_event_path_gain", "cf_frame_path_gain", "crossing", "db",
           "events_path_gain", "highpass", "lowpass", "transfer_sweep"]
