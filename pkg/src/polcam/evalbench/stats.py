"""Event-rate and inter-event-interval statistics over a region of interest."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class EventStatistics:
    edges_us: np.ndarray  # log-spaced histogram edges, len(bins) + 1
    counts: np.ndarray
    mode_us: float  # NaN for an empty histogram
    mean_rate_hz_per_pixel: float
    rate_t_us: np.ndarray  # left edge of each rate bin
    rate_hz_per_pixel: np.ndarray
    n_intervals: int
    n_pixels: int

    def to_rows(self):
        """(lo_us, hi_us, count) histogram rows."""
        return [(float(a), float(b), int(c)) for a, b, c in zip(self.edges_us[:-1], self.edges_us[1:], self.counts)]


def _roi_mask(events, roi):
    if roi is None:
        return np.ones(len(events), bool)
    x0, y0, x1, y1 = roi
    x = events["x"]
    y = events["y"]
    return (x >= x0) & (x < x1) & (y >= y0) & (y < y1)


def interevent_intervals(events, width: int = 1 << 16) -> np.ndarray:
    """Time between consecutive events of the same pixel, pooled (us)."""
    if len(events) < 2:
        return np.zeros(0)
    key = events["y"].astype(np.int64) * width + events["x"].astype(np.int64)
    order = np.argsort(key, kind="stable")  # keeps time order within a pixel
    k = key[order]
    t = events["t"][order].astype(np.int64)
    same = k[1:] == k[:-1]
    return (t[1:] - t[:-1])[same].astype(float)


def histogram_mode(edges, counts) -> float:
    """Peak of a log-binned histogram, refined by a parabola through the top bin and its neighbours."""
    counts = np.asarray(counts, float)
    if counts.sum() == 0:
        return math.nan
    logc = 0.5 * (np.log(edges[:-1]) + np.log(edges[1:]))
    k = int(np.argmax(counts))
    if 0 < k < len(counts) - 1:
        a, b, c = counts[k - 1], counts[k], counts[k + 1]
        den = a - 2 * b + c
        off = 0.5 * (a - c) / den if den != 0 else 0.0
        step = logc[1] - logc[0]
        return float(math.exp(logc[k] + np.clip(off, -0.5, 0.5) * step))
    return float(math.exp(logc[k]))


def event_statistics(events, roi=None, bins: int = 50, lo_us: float = 10.0, hi_us: float = 1e7,
                     duration_us: float | None = None, rate_bin_us: float = 10_000.0,
                     n_pixels: int | None = None) -> EventStatistics:
    """Histogram of per-pixel inter-event intervals and per-pixel event rate inside ``roi``.

    ``roi`` is ``(x0, y0, x1, y1)`` with exclusive ends; ``None`` takes every
    event and then ``n_pixels`` (default: pixels that fired) normalizes the rate.
    """
    if bins < 1 or not 0 < lo_us < hi_us:
        raise ValueError("need bins >= 1 and 0 < lo_us < hi_us")
    edges = np.logspace(math.log10(lo_us), math.log10(hi_us), bins + 1)
    ev = events[_roi_mask(events, roi)]
    if n_pixels is None:
        if roi is not None:
            n_pixels = (roi[2] - roi[0]) * (roi[3] - roi[1])
        else:
            n_pixels = len(np.unique(ev["y"].astype(np.int64) * 65536 + ev["x"])) if len(ev) else 0
    if len(ev) == 0:
        return EventStatistics(edges, np.zeros(bins, np.int64), math.nan, 0.0, np.zeros(0), np.zeros(0), 0, n_pixels)
    t = ev["t"].astype(np.int64)
    if np.any(np.diff(t) < 0):
        from ..errors import OrderingError

        raise OrderingError("event stream is not sorted by time")
    iv = interevent_intervals(ev)
    counts, _ = np.histogram(iv, edges)
    t0 = int(t[0])
    span = float(duration_us) if duration_us is not None else float(max(t[-1] - t0, 1))
    rate = len(ev) / n_pixels / (span * 1e-6) if n_pixels else 0.0
    nb = max(1, int(math.ceil(span / rate_bin_us)))
    rc = np.bincount(np.minimum((t - t0) // int(rate_bin_us), nb - 1), minlength=nb)
    rt = t0 + np.arange(nb) * rate_bin_us
    rh = rc / max(n_pixels, 1) / (rate_bin_us * 1e-6)
    return EventStatistics(edges, counts, histogram_mode(edges, counts), float(rate), rt, rh, len(iv), n_pixels)


__all__ = ["EventStatistics", "event_statistics", "histogram_mode", "interevent_intervals"]
