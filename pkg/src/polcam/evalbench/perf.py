"""Single-threaded throughput of event generation and the events-method filter.

Both measurements run the compiled kernels once on a short span first so
that JIT compilation stays out of the timing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..recon.events import EventsFilter
from ..sensorsim.dvs import DvsPixelParams, DvsSensor
from ..sensorsim.geometry import SensorGeometry
from ..sensorsim.stimulus import RotatingPolarizer


@dataclass(frozen=True)
class Throughput:
    count: int
    seconds: float

    @property
    def per_second(self) -> float:
        return self.count / self.seconds


def _setup(rpm: float):
    g = SensorGeometry()
    stim = RotatingPolarizer(g.width, g.height, 1.0 / 3.0, rpm=rpm)
    return g, stim, DvsSensor(g, DvsPixelParams.ideal())


def event_generation(duration_s: float = 0.5, rpm: float = 1000.0, extinction_ratio: float = 40.0):
    """Events/s for the rotating disc on the full sensor. Returns (Throughput, events)."""
    g, stim, sensor = _setup(rpm)
    sensor.simulate(stim, extinction_ratio, 0.0, 2e4)
    t = time.perf_counter()
    ev = sensor.simulate(stim, extinction_ratio, 0.0, duration_s * 1e6, jobs=1)
    return Throughput(len(ev), time.perf_counter() - t), ev


def subpixel_updates(events, geom: SensorGeometry, radius: int) -> int:
    """IIR state updates the events filter performs: same-angle neighbours inside the sensor."""
    offs = 2 * np.arange(-radius, radius + 1)

    def inside(c, size):
        c = np.asarray(c, np.int64)[:, None] + offs[None, :]
        return ((c >= 0) & (c < size)).sum(axis=1)

    return int(np.sum(inside(events["x"], geom.width) * inside(events["y"], geom.height)))


def events_filter_rate(events, geom: SensorGeometry | None = None, radius: int = 1, f3db_hz: float = 0.5):
    """Subpixel updates/s of the events filter over ``events`` (no output sampling)."""
    geom = geom or SensorGeometry()
    EventsFilter(geom, f3db_hz, neighbor_radius=radius).process(events[:1000])
    filt = EventsFilter(geom, f3db_hz, neighbor_radius=radius)
    t = time.perf_counter()
    filt.process(events)
    return Throughput(subpixel_updates(events, geom, radius), time.perf_counter() - t)


__all__ = ["Throughput", "event_generation", "events_filter_rate", "subpixel_updates"]
