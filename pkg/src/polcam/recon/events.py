"""Events-only AoP reconstruction with a per-subpixel asynchronous IIR highpass.

Every subpixel keeps ``dl``, a reconstructed log-intensity change, and the
time of its last update. An event decays ``dl`` by ``exp(-dt / tau)`` and
adds the signed threshold; the same update is applied to same-angle
subpixels in neighbouring macropixels. AoP comes from the four ``dl``
values of a macropixel used in place of intensities, which is valid while
``|dl| << 1``. Below the filter corner the output leads the true AoP by
pi/4; this engine reports the raw value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import OrderingError, UndefinedAoPError
from ..sensorsim.geometry import SensorGeometry

# method tags shared with the polarization-event file format
METHOD_FRAMES = 0
METHOD_EVENTS = 1
METHOD_CF = 2
FLAG_UNPOLARIZED = 1
FLAG_SATURATED = 2

POLEVENT_DTYPE = np.dtype(
    [("t", "<u8"), ("X", "<u2"), ("Y", "<u2"), ("aop", "<f4"), ("dolp", "<f4"), ("method", "u1"),
     ("flags", "u1"), ("_reserved", "V2")]
)


def tau_us(f3db_hz: float) -> float:
    return 1e6 / (2.0 * math.pi * f3db_hz)


# -- scalar kernels (also run under the op-count harness via .py_func) ------


@njit(cache=True, inline="always")
def decay_add(dl, last, t, p, inv_tau):
    """One IIR step: decay to t, then add p."""
    alpha = np.exp((last - t) * inv_tau)
    return alpha * dl + p


@njit(cache=True, inline="always")
def decay_to(dl, last, t, inv_tau):
    return np.exp((last - t) * inv_tau) * dl


@njit(cache=True, inline="always")
def aop_from_dl(d0, d45, d90, d135):
    aop = 0.5 * np.arctan2(d45 - d135, d0 - d90)
    if aop < 0:
        aop = aop + np.pi
    return aop


# -- batch kernels ---------------------------------------------------------


@njit(cache=True, nogil=True)
def _sample_state(dl, last, inv_tau, idx, s, row):
    for j in range(idx.shape[0]):
        k = idx[j]
        row[j] = decay_to(dl[k], last[k], s, inv_tau)


@njit(cache=True, nogil=True)
def _events_batch(t, x, y, p, dl, last, width, height, inv_tau, th_on, th_off, radius,
                  sample_t, sample_idx, out, s_pos, pol_out, chan_flat):
    """Apply events in order; record samples strictly before each event.

    ``pol_out`` (empty when unused) receives one AoP per event for the event's
    macropixel. Returns (status, index, s_pos); status 1 flags an event older
    than a subpixel it touches, reported before any state is changed.
    """
    n = t.shape[0]
    ns = sample_t.shape[0]
    emit = pol_out.shape[0] > 0
    for k in range(n):
        tk = t[k]
        while s_pos < ns and sample_t[s_pos] < tk:
            _sample_state(dl, last, inv_tau, sample_idx, sample_t[s_pos], out[s_pos])
            s_pos += 1
        xk = x[k]
        yk = y[k]
        for dy in range(-radius, radius + 1):
            yy = yk + 2 * dy
            if yy < 0 or yy >= height:
                continue
            for dx in range(-radius, radius + 1):
                xx = xk + 2 * dx
                if xx < 0 or xx >= width:
                    continue
                if tk < last[yy * width + xx]:
                    return 1, k, s_pos
        pk = th_on if p[k] != 0 else -th_off
        for dy in range(-radius, radius + 1):
            yy = yk + 2 * dy
            if yy < 0 or yy >= height:
                continue
            for dx in range(-radius, radius + 1):
                xx = xk + 2 * dx
                if xx < 0 or xx >= width:
                    continue
                j = yy * width + xx
                dl[j] = decay_add(dl[j], last[j], tk, pk, inv_tau)
                last[j] = tk
        if emit:
            bx = xk - xk % 2
            by = yk - yk % 2
            j0 = (by + chan_flat[0, 1]) * width + bx + chan_flat[0, 0]
            j1 = (by + chan_flat[1, 1]) * width + bx + chan_flat[1, 0]
            j2 = (by + chan_flat[2, 1]) * width + bx + chan_flat[2, 0]
            j3 = (by + chan_flat[3, 1]) * width + bx + chan_flat[3, 0]
            d0 = decay_to(dl[j0], last[j0], tk, inv_tau)
            d1 = decay_to(dl[j1], last[j1], tk, inv_tau)
            d2 = decay_to(dl[j2], last[j2], tk, inv_tau)
            d3 = decay_to(dl[j3], last[j3], tk, inv_tau)
            if d0 == 0 and d1 == 0 and d2 == 0 and d3 == 0:
                pol_out[k] = np.nan
            else:
                pol_out[k] = aop_from_dl(d0, d1, d2, d3)
    return 0, n, s_pos


@dataclass
class EventsFilterState:
    """Per-subpixel filter state, flat row-major arrays."""

    dl: np.ndarray
    last_t_us: np.ndarray
    tau_s: float

    @classmethod
    def zeros(cls, geom: SensorGeometry, f3db_hz: float = 0.5, t_start_us: int = 0) -> "EventsFilterState":
        n = geom.width * geom.height
        return cls(np.zeros(n), np.full(n, t_start_us, np.int64), 1.0 / (2 * math.pi * f3db_hz))


class EventsFilter:
    """Asynchronous highpass over the DVS stream, with grid sampling and AoP output."""

    def __init__(self, geom: SensorGeometry, f3db_hz: float = 0.5, theta_on: float = 0.14,
                 theta_off: float = 0.14, neighbor_radius: int = 1, t_start_us: int = 0):
        self.geom = geom
        self.f3db_hz = f3db_hz
        self.theta_on = float(theta_on)
        self.theta_off = float(theta_off)
        self.radius = int(neighbor_radius)
        self.state = EventsFilterState.zeros(geom, f3db_hz, t_start_us)
        self.inv_tau = 1.0 / tau_us(f3db_hz)
        self._chan = np.ascontiguousarray(geom.channel_offsets())

    # state views
    @property
    def dl(self) -> np.ndarray:
        return self.state.dl.reshape(self.geom.height, self.geom.width)

    @property
    def last_t_us(self) -> np.ndarray:
        return self.state.last_t_us.reshape(self.geom.height, self.geom.width)

    def process(self, events, sample_times=None, sample_idx=None, polarization=False):
        """Feed an event array (EVENT_DTYPE). Returns (samples, aop_per_event).

        ``samples[i, j]`` is subpixel ``sample_idx[j]`` (flat index) decayed to
        ``sample_times[i]``, for the sample times that precede the last event
        of this batch; later ones are left for :meth:`flush`.
        """
        st = self.state
        t = np.ascontiguousarray(events["t"]).astype(np.int64)
        x = np.ascontiguousarray(events["x"]).astype(np.int64)
        y = np.ascontiguousarray(events["y"]).astype(np.int64)
        p = np.ascontiguousarray(events["p"]).astype(np.int64)
        if sample_times is None:
            sample_times = np.zeros(0)
            sample_idx = np.zeros(0, np.int64)
        sample_times = np.asarray(sample_times, dtype=np.float64)
        sample_idx = np.asarray(sample_idx, dtype=np.int64)
        out = np.full((len(sample_times), len(sample_idx)), np.nan)
        pol = np.empty(len(t) if polarization else 0)
        status, k, s_pos = _events_batch(t, x, y, p, st.dl, st.last_t_us, self.geom.width, self.geom.height,
                                         self.inv_tau, self.theta_on, self.theta_off, self.radius, sample_times,
                                         sample_idx, out, 0, pol, self._chan)
        if status:
            raise OrderingError(f"event {k} at t={t[k]} us is older than the state of a subpixel it updates")
        self._pending = (sample_times[s_pos:], sample_idx)
        return out[:s_pos], (pol if polarization else None)

    @property
    def pending_times(self) -> np.ndarray:
        """Sample times not yet produced by :meth:`process`."""
        return getattr(self, "_pending", (np.zeros(0),))[0]

    def flush(self):
        """Samples left over from the last :meth:`process` call (no more events before them)."""
        ts, idx = getattr(self, "_pending", (np.zeros(0), np.zeros(0, np.int64)))
        self._pending = (np.zeros(0), idx)
        return self.sample(ts, idx)

    def run(self, events, sample_times, sample_idx):
        a, _ = self.process(events, sample_times, sample_idx)
        b = self.flush()
        return np.concatenate([a, b]) if len(b) else a

    def sample(self, times, idx):
        times = np.asarray(times, float)
        idx = np.asarray(idx, np.int64)
        out = np.empty((len(times), len(idx)))
        for i, s in enumerate(times):
            _sample_state(self.state.dl, self.state.last_t_us, self.inv_tau, idx, s, out[i])
        return out

    def update(self, ev) -> None:
        """Single-event update (DvsEvent or one event record)."""
        from ..sensorsim.dvs import DvsEvent, make_events

        if isinstance(ev, DvsEvent):
            arr = make_events([ev.t_us], [ev.x], [ev.y], [ev.polarity])
        else:
            arr = np.atleast_1d(ev)
        self.process(arr)

    def macropixel_dl(self, t_us, X, Y) -> np.ndarray:
        """The four dl values (0, 45, 90, 135) of macropixel (X, Y) decayed to t_us."""
        idx = np.array([(2 * Y + dy) * self.geom.width + 2 * X + dx for dx, dy in self._chan])
        return self.sample([t_us], idx)[0]

    def aop(self, t_us, X, Y) -> float:
        d = self.macropixel_dl(t_us, X, Y)
        if not np.any(d):
            raise UndefinedAoPError(f"macropixel ({X}, {Y}) has no event history")
        return float(aop_from_dl(*d))

    def polarization_events(self, events) -> np.ndarray:
        """Process events and return one polarization record per event (POLEVENT_DTYPE)."""
        _, aop = self.process(events, polarization=True)
        return polevent_records(events, aop)


def polevent_records(events, aop) -> np.ndarray:
    """POLEVENT_DTYPE records from events and their per-event AoP (NaN = undefined)."""
    out = np.zeros(len(events), POLEVENT_DTYPE)
    out["t"] = events["t"]
    out["X"] = events["x"] // 2
    out["Y"] = events["y"] // 2
    out["aop"] = aop
    out["dolp"] = np.nan
    out["method"] = METHOD_EVENTS
    out["flags"] = np.where(np.isnan(aop), FLAG_UNPOLARIZED, 0)
    return out


def events_update(filt: EventsFilter, ev) -> EventsFilter:
    filt.update(ev)
    return filt


def events_aop(filt: EventsFilter, t_us, X, Y) -> float:
    return filt.aop(t_us, X, Y)


def dl_to_stokes(dl4: np.ndarray):
    """Stokes analogs from dl arrays with a trailing channel axis (0, 45, 90, 135)."""
    return dl4[..., 0] + dl4[..., 2], dl4[..., 0] - dl4[..., 2], dl4[..., 1] - dl4[..., 3]
