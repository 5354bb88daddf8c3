"""DVS event generation.

Per-pixel thresholds are realized once per sensor from the seed. Pixels are
processed in chunks (optionally on a thread pool; the kernel releases the
GIL) and the chunk outputs are merged with a stable sort on
``(t, y, x)``, so the stream does not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError, SimulationDomainError
from ._dvs_kernel import (
    SEG_CONST,
    SEG_LOGLIN,
    SEG_SINE,
    counting_argsort,
    generate_events,
    merge_sorted_keys,
    pack_events,
    radix_argsort_u64,
)
from .geometry import SensorGeometry
from .stimulus import SegmentTable

# in-memory event record; identical to the on-disk record layout
EVENT_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("_reserved", "V3")]
)
ON = 1
OFF = 0


@dataclass(frozen=True)
class DvsEvent:
    t_us: int
    x: int
    y: int
    polarity: int  # ON = 1, OFF = 0


def events_from_records(arr) -> list[DvsEvent]:
    return [DvsEvent(int(r["t"]), int(r["x"]), int(r["y"]), int(r["p"])) for r in arr]


def make_events(t, x, y, p) -> np.ndarray:
    """Build an event array from column data."""
    out = np.zeros(len(t), dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = x
    out["y"] = y
    out["p"] = p
    return out


@dataclass(frozen=True)
class DvsPixelParams:
    theta_on: float = 0.14
    theta_off: float = 0.14
    threshold_sigma: float = 0.035
    leak_rate_hz: float = 0.7
    refractory_us: float = 100.0
    photoreceptor_cutoff_hz: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.theta_on > 0 and self.theta_off > 0):
            raise ConfigError("DVS thresholds must be positive")
        if self.threshold_sigma < 0 or self.leak_rate_hz < 0 or self.refractory_us < 0:
            raise ConfigError("threshold_sigma, leak_rate_hz and refractory_us must be >= 0")
        if self.photoreceptor_cutoff_hz is not None and not self.photoreceptor_cutoff_hz > 0:
            raise ConfigError("photoreceptor_cutoff_hz must be positive when set")

    @classmethod
    def ideal(cls, **kw) -> "DvsPixelParams":
        """No mismatch and no leak; refractory stays at its default."""
        kw.setdefault("threshold_sigma", 0.0)
        kw.setdefault("leak_rate_hz", 0.0)
        return cls(**kw)


class DvsSensor:
    """A DVS array with its realized per-pixel thresholds."""

    def __init__(self, geom: SensorGeometry, params: DvsPixelParams):
        self.geom = geom
        self.params = params
        rng = np.random.default_rng(np.random.SeedSequence([params.rng_seed & (2**64 - 1), 0]))
        shape = (geom.height, geom.width)
        z_on = rng.standard_normal(shape)
        z_off = rng.standard_normal(shape)
        self.theta_on = params.theta_on * np.exp(params.threshold_sigma * z_on)
        self.theta_off = params.theta_off * np.exp(params.threshold_sigma * z_off)

    def simulate(self, stim, er: float, t0_us: float, t1_us: float, region=None, jobs: int = 1,
                 chunk_pixels: int = 8192, grid_us: float | None = None,
                 target_slab_events: int = 1_000_000) -> np.ndarray:
        if not t1_us > t0_us:
            raise ConfigError("simulate_dvs needs t1_us > t0_us")
        if t0_us < 0:
            raise SimulationDomainError("stimulus time must be >= 0")
        geom = self.geom
        if region is None:
            region = (0, 0, geom.width, geom.height)
        geom.check_region(region)
        x0, y0, x1, y1 = region
        yy, xx = np.mgrid[y0:y1, x0:x1]
        xs = xx.ravel()
        ys = yy.ravel()
        chunks = [self._prepare(stim, er, t0_us, t1_us, xs[i : i + chunk_pixels], ys[i : i + chunk_pixels], grid_us, i)
                  for i in range(0, len(xs), chunk_pixels)]
        sampled = any(c.refine is not None for c in chunks)
        pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 and len(chunks) > 1 else None
        out = []
        try:
            # slab edges sit on half-integers so rounded timestamps never straddle two slabs
            t_end = math.ceil(t1_us) - 0.5
            w0 = float(t0_us)
            slab = float(t_end - w0) if sampled else 2000.0
            while w0 < t_end:
                w1 = min(t_end, math.floor(w0 + slab) + 0.5) if not sampled else t_end
                if w1 <= w0:
                    w1 = min(t_end, w0 + 1.0)
                if pool is not None:
                    parts = list(pool.map(lambda c: c.run(w0, w1), chunks))
                else:
                    parts = [c.run(w0, w1) for c in chunks]
                t = np.concatenate([q[0] for q in parts])
                pix = np.concatenate([q[1] for q in parts])
                pol = np.concatenate([q[2] for q in parts])
                rec = np.zeros(len(t), EVENT_DTYPE)
                pack_events(t, pix, pol, xs, ys, rec.view(np.uint64).reshape(-1, 2))
                out.append(rec)
                rate = len(t) / (w1 - w0)
                slab = min(1e6, max(1000.0, target_slab_events / rate)) if rate > 0 else 1e6
                w0 = w1
        finally:
            if pool is not None:
                pool.shutdown()
        ev = np.concatenate(out) if out else np.zeros(0, EVENT_DTYPE)
        leak = merge_events([self._leak(t0_us, t1_us, region)], geom)
        if not len(leak):
            return ev
        order = merge_sorted_keys(event_keys(ev, geom), event_keys(leak, geom))
        return np.concatenate([ev, leak])[order]

    # -- internals ---------------------------------------------------------

    def _prepare(self, stim, er, t0, t1, xs, ys, grid_us, offset):
        angles = self.geom.angle_map()[ys, xs]
        p = self.params
        if hasattr(stim, "segments") and p.photoreceptor_cutoff_hz is None and grid_us is None:
            tab = stim.segments(xs, ys, angles, er, float(t0), float(t1))
            check_segments_positive(tab)
            refine = None
        else:
            tab, refine = sampled_segments(stim, xs, ys, angles, er, t0, t1, grid_us, p.photoreceptor_cutoff_hz)
        return _Chunk(tab, len(xs), self.theta_on[ys, xs], self.theta_off[ys, xs], float(p.refractory_us), refine,
                      offset)

    def _leak(self, t0, t1, region):
        p = self.params
        if p.leak_rate_hz <= 0:
            return np.zeros(0, EVENT_DTYPE)
        g = self.geom
        rng = np.random.default_rng(np.random.SeedSequence([p.rng_seed & (2**64 - 1), 1]))
        lam = p.leak_rate_hz * (t1 - t0) * 1e-6 * g.width * g.height
        n = rng.poisson(lam)
        t = np.floor(rng.uniform(t0, t1, n) + 0.5).astype(np.int64)
        pix = rng.integers(0, g.width * g.height, n)
        x = pix % g.width
        y = pix // g.width
        x0, y0, x1, y1 = region
        m = (x >= x0) & (x < x1) & (y >= y0) & (y < y1) & (t < t1)
        return make_events(t[m], x[m], y[m], np.full(m.sum(), ON))


class _Chunk:
    """Pixel chunk with its segments and carried detector state."""

    def __init__(self, tab: SegmentTable, n_pixels, th_on, th_off, refractory, refine, offset):
        self.kind = tab.kind
        self.ta = tab.t_start
        self.tb = tab.t_end
        self.params = np.ascontiguousarray(tab.params, dtype=np.float64)
        self.first = np.searchsorted(tab.pixel, np.arange(n_pixels + 1)).astype(np.int64)
        self.mem = np.full(n_pixels, np.nan)
        self.t_last = np.full(n_pixels, -1e300)
        self.th_on = np.ascontiguousarray(th_on, dtype=np.float64)
        self.th_off = np.ascontiguousarray(th_off, dtype=np.float64)
        self.refractory = refractory
        self.refine = refine
        self.offset = offset
        self.n_pixels = n_pixels
        self.cap = 1024

    def run(self, w0, w1):
        n_out, pix, cap = 0, 0, self.cap
        bufs = _buffers(cap)
        while True:
            n_out, pix = generate_events(self.first, self.kind, self.ta, self.tb, self.params, self.mem,
                                         self.t_last, self.th_on, self.th_off, self.refractory, w0, w1,
                                         *bufs, n_out, pix)
            if pix >= self.n_pixels:
                break
            cap *= 2
            bigger = _buffers(cap)
            for old, new in zip(bufs, bigger):
                new[:n_out] = old[:n_out]
            bufs = bigger
        self.cap = max(1024, int(1.25 * n_out))
        t, pix_ev, pol, cross = (b[:n_out] for b in bufs)
        if self.refine is not None:
            t = self.refine(t, pix_ev, pol, cross)
        return t, pix_ev + self.offset, pol


def _buffers(cap):
    return (np.empty(cap, np.float64), np.empty(cap, np.int64), np.empty(cap, np.int8), np.empty(cap, np.int8))


def simulate_dvs(stim, geom: SensorGeometry, params: DvsPixelParams, er: float, t0_us: float, t1_us: float,
                 region=None, jobs: int = 1, **kw) -> np.ndarray:
    """Event stream of ``stim`` seen by a DVS, as an ``EVENT_DTYPE`` array sorted by (t, y, x)."""
    return DvsSensor(geom, params).simulate(stim, er, t0_us, t1_us, region=region, jobs=jobs, **kw)


def stable_time_order(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if not len(t):
        return np.zeros(0, np.int64)
    lo = int(t.min())
    span = int(t.max()) - lo + 1
    if span <= max(1 << 22, 4 * len(t)):
        return counting_argsort(t, lo, span)
    return radix_argsort_u64((t - lo).astype(np.uint64))


def event_keys(ev, geom: SensorGeometry) -> np.ndarray:
    t = ev["t"].astype(np.uint64)
    return (t * np.uint64(geom.height) + ev["y"].astype(np.uint64)) * np.uint64(geom.width) + ev["x"].astype(np.uint64)


def merge_events(parts, geom: SensorGeometry) -> np.ndarray:
    """Deterministic merge: stable sort on (t, y, x) over the concatenated parts."""
    parts = [p for p in parts if len(p)]
    if not parts:
        return np.zeros(0, EVENT_DTYPE)
    ev = np.concatenate(parts)
    tmax = int(ev["t"].max())
    if (tmax + 1) * geom.height * geom.width < 2**63:
        order = radix_argsort_u64(event_keys(ev, geom))
    else:
        order = np.lexsort((ev["x"], ev["y"], ev["t"]))
    return ev[order]


def check_segments_positive(tab: SegmentTable) -> None:
    k = tab.kind
    p = tab.params
    bad = ((k == SEG_CONST) & ~(p[:, 0] > 0)) | ((k == SEG_SINE) & ~(p[:, 0] - np.abs(p[:, 1]) > 0))
    bad |= (k == SEG_LOGLIN) & ~np.isfinite(p[:, 0])
    if bad.any():
        raise SimulationDomainError(
            "stimulus flux reaches zero or below behind a micro-polarizer; log intensity undefined "
            "(use a finite extinction ratio or a partially polarized stimulus)"
        )


def _flux_fn(stim, xs, ys, angles, er) -> Callable:
    from ..polcore import malus_array

    def f(t):
        t = np.asarray(t, float)
        fl, dl, ao = stim.state_arrays(xs[:, None], ys[:, None], t[None, :] if t.ndim == 1 else t)
        return malus_array(fl, dl, ao, angles[:, None], er)

    return f


def sampled_segments(stim, xs, ys, angles, er, t0, t1, grid_us=None, cutoff_hz=None):
    """Piecewise-linear log intensity on a time grid, with optional photoreceptor lowpass.

    Used for stimuli without closed-form segments and whenever the lowpass
    is on. Without the lowpass, crossing times are refined afterwards by
    bisection on the true log intensity.
    """
    if grid_us is None:
        rate = stim.aop_rate() if hasattr(stim, "aop_rate") else 0.0
        grid_us = 100.0 if rate == 0 else min(100.0, 0.005 / rate)
    n = max(2, int(math.ceil((t1 - t0) / grid_us)) + 1)
    tg = np.linspace(float(t0), float(t1), n)
    flux = _flux_fn(stim, xs, ys, angles, er)
    f = flux(tg)
    if not np.all(f > 0):
        raise SimulationDomainError("stimulus flux is zero or negative; log intensity undefined")
    lg = np.log(f)
    if cutoff_hz is not None:
        lg = _lowpass_pwl(lg, tg, 1e6 / (2 * math.pi * cutoff_hz))
    npx = len(xs)
    m = n - 1
    pix = np.repeat(np.arange(npx), m)
    ta = np.tile(tg[:-1], npx)
    tb = np.tile(tg[1:], npx)
    l0 = lg[:, :-1].ravel()
    slope = ((lg[:, 1:] - lg[:, :-1]) / (tg[1:] - tg[:-1])).ravel()
    params = np.zeros((len(pix), 4))
    params[:, 0] = l0
    params[:, 1] = slope
    tab = SegmentTable(pix, np.full(len(pix), SEG_LOGLIN), ta, tb, params)
    if cutoff_hz is not None:
        return tab, None

    def refine(t, pix_ev, pol, cross):
        if not len(t):
            return t
        t = t.copy()
        sel = np.nonzero(cross == 1)[0]
        if not len(sel):
            return t
        cell = np.clip(np.searchsorted(tg, t[sel], side="right") - 1, 0, m - 1)
        lo = tg[cell].copy()
        hi = tg[cell + 1].copy()
        p_ = pix_ev[sel]
        # target level: the interpolant's value at the crossing equals the true level there
        lvl = lg[p_, cell] + (t[sel] - lo) * (lg[p_, cell + 1] - lg[p_, cell]) / (hi - lo)
        rising = lg[p_, cell + 1] >= lg[p_, cell]
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            fm = np.log(_point_flux(stim, xs[p_], ys[p_], angles[p_], er, mid))
            below = (fm < lvl) == rising
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        t[sel] = 0.5 * (lo + hi)
        # refined crossings must stay ordered per pixel
        order = np.lexsort((np.arange(len(t)), pix_ev))
        tt = t[order]
        pp = pix_ev[order]
        for i in range(1, len(tt)):
            if pp[i] == pp[i - 1] and tt[i] < tt[i - 1]:
                tt[i] = tt[i - 1]
        t[order] = tt
        return t

    return tab, refine


def _point_flux(stim, xs, ys, angles, er, t):
    from ..polcore import malus_array

    fl, dl, ao = stim.state_arrays(xs, ys, t)
    return malus_array(fl, dl, ao, angles, er)


def _lowpass_pwl(lg, tg, tau_us):
    """Exact first-order lowpass of a piecewise-linear input, state starting at the input."""
    y = np.empty_like(lg)
    y[:, 0] = lg[:, 0]
    for k in range(1, lg.shape[1]):
        h = tg[k] - tg[k - 1]
        b = (lg[:, k] - lg[:, k - 1]) / h
        e = math.exp(-h / tau_us)
        y[:, k] = lg[:, k] - b * tau_us + (y[:, k - 1] - lg[:, k - 1] + b * tau_us) * e
    return y


class FunctionStimulus:
    """Arbitrary stimulus given as a vectorized callable ``fn(x, y, t) -> (flux, dolp, aop)``."""

    def __init__(self, fn, aop_rate_rad_per_us: float = 0.0):
        self.fn = fn
        self._rate = aop_rate_rad_per_us

    def state_arrays(self, x, y, t_us):
        x, y, t = np.broadcast_arrays(np.asarray(x), np.asarray(y), np.asarray(t_us, dtype=float))
        return self.fn(x, y, t)

    def aop_rate(self):
        return self._rate
