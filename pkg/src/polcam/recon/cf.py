"""Complementary filter fusing APS frames (low frequencies) with DVS events (high frequencies).

Per subpixel the state ``L`` relaxes toward the most recent APS log sample
``L_aps`` with time constant ``tau / w`` while events add their signed
thresholds:

    L(t) = L_aps + (L(t_last) - L_aps) * exp(-(t - t_last) * w / tau)

applied at every event (then ``+ p``) and at every frame (then ``L_aps``
and ``w`` take the new frame's values). This is the exact discrete form of
``dL/dt = -(w / tau) (L - L_aps) + events``, whose Laplace transfer splits
into a highpass on the event path and a lowpass on the frame path with the
same corner. ``w`` is the adaptive APS weight: 1 for well-exposed samples,
falling linearly to ``lam`` near under- and over-exposure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import DomainError, OrderingError
from ..sensorsim.aps import ApsFrame
from ..sensorsim.geometry import SensorGeometry
from .events import tau_us
from .frames import StokesGrid, channel_planes


@njit(cache=True, inline="always")
def cf_event_px(l, l_aps, last, t, rate, p):
    """Event update of one subpixel."""
    alpha = np.exp((last - t) * rate)
    return alpha * (l - l_aps) + l_aps + p


@njit(cache=True, inline="always")
def cf_decay_px(l, l_aps, last, t, rate):
    """Relax one subpixel toward its held APS sample (frame update and read-out)."""
    alpha = np.exp((last - t) * rate)
    return alpha * (l - l_aps) + l_aps


@dataclass
class ApsLogSample:
    """One frame converted to per-subpixel log samples and APS weights."""

    t_us: int
    log_sample: np.ndarray  # flat, ln(max(DN - dark, 1))
    weight: np.ndarray  # flat, adaptive APS weight


def aps_weight(dn, adc_bits: int = 10, limits=(10.0, 200.0), lam: float = 0.1, margin_frac: float = 0.1,
               limit_bits: int = 8):
    """APS weight per sample: 1 inside ``limits``, linear ramp to ``lam`` over the margin outside.

    ``limits`` are read on a ``limit_bits`` scale; ``dn`` is on the ADC scale.
    """
    v = np.asarray(dn, dtype=float) * ((1 << limit_bits) - 1) / ((1 << adc_bits) - 1)
    lo, hi = limits
    margin = margin_frac * (hi - lo)
    below = np.clip((lo - v) / margin, 0.0, 1.0)
    above = np.clip((v - hi) / margin, 0.0, 1.0)
    return 1.0 - (1.0 - lam) * np.maximum(below, above)


@njit(cache=True, nogil=True)
def _cf_sample(l, l_aps, last, rate, idx, s, row):
    for j in range(idx.shape[0]):
        k = idx[j]
        row[j] = cf_decay_px(l[k], l_aps[k], last[k], s, rate[k])


@njit(cache=True, nogil=True)
def _cf_events(t, x, y, p, l, l_aps, last, rate, width, th_on, th_off, sample_t, sample_idx, out, s_pos):
    n = t.shape[0]
    ns = sample_t.shape[0]
    for k in range(n):
        tk = t[k]
        while s_pos < ns and sample_t[s_pos] < tk:
            _cf_sample(l, l_aps, last, rate, sample_idx, sample_t[s_pos], out[s_pos])
            s_pos += 1
        j = y[k] * width + x[k]
        if tk < last[j]:
            return 1, k, s_pos
        pk = th_on if p[k] != 0 else -th_off
        l[j] = cf_event_px(l[j], l_aps[j], last[j], tk, rate[j], pk)
        last[j] = tk
    return 0, n, s_pos


@njit(cache=True, nogil=True)
def _cf_frame(l, l_aps, last, rate, t, new_log, new_rate):
    for j in range(l.shape[0]):
        if t < last[j]:
            return 1
        l[j] = cf_decay_px(l[j], l_aps[j], last[j], t, rate[j])
        last[j] = t
        l_aps[j] = new_log[j]
        rate[j] = new_rate[j]
    return 0


@dataclass
class CfParams:
    f3db_hz: float = 1.6
    theta_on: float = 0.14
    theta_off: float = 0.14
    lam: float = 0.1
    limits_dn: tuple = (10.0, 200.0)
    limit_bits: int = 8
    adaptive: bool = True


@dataclass
class CfState:
    l: np.ndarray
    l_aps: np.ndarray
    last_t_us: np.ndarray
    rate: np.ndarray  # w / tau per subpixel, 1/us
    initialized: bool = False
    dropped_events: int = 0
    extra: dict = field(default_factory=dict)


class ComplementaryFilter:
    """Frame + event fusion over the whole sensor."""

    def __init__(self, geom: SensorGeometry, params: CfParams | None = None, adc_bits: int = 10,
                 dark_offset_dn: float = 0.0):
        self.geom = geom
        self.params = params or CfParams()
        self.adc_bits = adc_bits
        self.dark_offset_dn = dark_offset_dn
        n = geom.width * geom.height
        self.state = CfState(np.zeros(n), np.zeros(n), np.zeros(n, np.int64), np.zeros(n))
        self.inv_tau = 1.0 / tau_us(self.params.f3db_hz)
        self._pending = (np.zeros(0), np.zeros(0, np.int64))

    def log_sample(self, frame: ApsFrame) -> ApsLogSample:
        dn = frame.samples.astype(np.float64).ravel() - self.dark_offset_dn
        logs = np.log(np.maximum(dn, 1.0))
        if self.params.adaptive:
            w = aps_weight(dn, self.adc_bits, self.params.limits_dn, self.params.lam, 0.1, self.params.limit_bits)
        else:
            w = np.ones_like(dn)
        return ApsLogSample(int(frame.t_end_us), logs, w)

    def update_frame(self, frame) -> None:
        """Apply a frame (or ApsLogSample); it takes effect at the end of its exposure."""
        s = frame if isinstance(frame, ApsLogSample) else self.log_sample(frame)
        st = self.state
        rate = s.weight * self.inv_tau
        if not st.initialized:
            st.l[:] = s.log_sample
            st.l_aps[:] = s.log_sample
            st.rate[:] = rate
            st.last_t_us[:] = s.t_us
            st.initialized = True
            return
        if _cf_frame(st.l, st.l_aps, st.last_t_us, st.rate, s.t_us, s.log_sample, rate):
            raise OrderingError(f"frame at t={s.t_us} us is older than the filter state")

    def update_events(self, events, sample_times=None, sample_idx=None):
        """Apply events in order; events before the first frame are dropped and counted."""
        st = self.state
        if sample_times is None:
            sample_times = np.zeros(0)
            sample_idx = np.zeros(0, np.int64)
        sample_times = np.asarray(sample_times, float)
        sample_idx = np.asarray(sample_idx, np.int64)
        out = np.full((len(sample_times), len(sample_idx)), np.nan)
        if not st.initialized:
            st.dropped_events += len(events)
            s_pos = int(np.searchsorted(sample_times, events["t"][-1], side="left")) if len(events) else 0
            self._pending = (sample_times[s_pos:], sample_idx)
            return out[:s_pos]
        status, k, s_pos = _cf_events(
            events["t"].astype(np.int64), events["x"].astype(np.int64), events["y"].astype(np.int64),
            events["p"].astype(np.int64), st.l, st.l_aps, st.last_t_us, st.rate, self.geom.width,
            float(self.params.theta_on), float(self.params.theta_off), sample_times, sample_idx, out, 0,
        )
        if status:
            raise OrderingError(f"event {k} is older than the state of its subpixel")
        self._pending = (sample_times[s_pos:], sample_idx)
        return out[:s_pos]

    def sample(self, times, idx):
        st = self.state
        idx = np.asarray(idx, np.int64)
        out = np.full((len(times), len(idx)), np.nan)
        if st.initialized:
            for i, s in enumerate(np.asarray(times, float)):
                _cf_sample(st.l, st.l_aps, st.last_t_us, st.rate, idx, s, out[i])
        return out

    def run(self, events, frames, sample_times, sample_idx):
        """Interleave events and frames in time order and sample ``L`` at the requested times.

        A frame applies at its exposure end; events at the same microsecond go first.
        A sample at time s sees every input with timestamp <= s.
        """
        sample_times = np.asarray(sample_times, float)
        sample_idx = np.asarray(sample_idx, np.int64)
        rows = []
        t_ev = events["t"].astype(np.int64)
        pos = 0
        s_done = 0
        for fr in sorted(frames, key=lambda f: f.t_end_us):
            te = int(fr.t_end_us)
            end = int(np.searchsorted(t_ev, te, side="right"))
            # samples strictly before the frame see only events up to it
            s_cut = int(np.searchsorted(sample_times, te, side="left"))
            seg = self.update_events(events[pos:end], sample_times[s_done:s_cut], sample_idx)
            rows.append(seg)
            rest = self._pending[0]
            if len(rest):
                rows.append(self.sample(rest, sample_idx))
            s_done = s_cut
            pos = end
            self.update_frame(fr)
        seg = self.update_events(events[pos:], sample_times[s_done:], sample_idx)
        rows.append(seg)
        rest = self._pending[0]
        if len(rest):
            rows.append(self.sample(rest, sample_idx))
        rows = [r for r in rows if len(r)]
        return np.concatenate(rows) if rows else np.zeros((0, len(sample_idx)))

    def reconstruct(self, t_us: float) -> StokesGrid:
        """Stokes on the macropixel grid from exp(L) at ``t_us``."""
        if not self.state.initialized:
            raise DomainError("complementary filter has not received a frame yet")
        g = self.geom
        l = self.sample([t_us], np.arange(g.width * g.height))[0].reshape(g.height, g.width)
        i = channel_planes(np.exp(l), g)
        return StokesGrid(t_us, i[..., 0] + i[..., 2], i[..., 0] - i[..., 2], i[..., 1] - i[..., 3], None, "cf")


def cf_update(cf: ComplementaryFilter, item) -> ComplementaryFilter:
    """Apply one input: an ApsFrame / ApsLogSample or an event array / DvsEvent."""
    from ..sensorsim.dvs import DvsEvent, make_events

    if isinstance(item, (ApsFrame, ApsLogSample)):
        cf.update_frame(item)
    elif isinstance(item, DvsEvent):
        cf.update_events(make_events([item.t_us], [item.x], [item.y], [item.polarity]))
    else:
        cf.update_events(np.atleast_1d(item))
    return cf


def cf_reconstruct(cf: ComplementaryFilter, t_us: float) -> StokesGrid:
    return cf.reconstruct(t_us)


def aps_log(dn, dark_offset_dn: float = 0.0):
    return np.log(np.maximum(np.asarray(dn, float) - dark_offset_dn, 1.0))


__all__ = ["ApsLogSample", "CfParams", "CfState", "ComplementaryFilter", "aps_log", "aps_weight", "cf_reconstruct",
           "cf_update", "cf_decay_px", "cf_event_px"]
