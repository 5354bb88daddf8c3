"""Closed-form polarization stimuli.

Every stimulus evaluates to a :class:`PolarizationState` field over
(x, y, t). Stimuli also describe, for a given subpixel, the flux behind its
micro-polarizer as a sequence of analytic segments; the DVS generator inverts
those segments exactly to find threshold-crossing times.

Segment kinds (per subpixel, closed interval ``[t_start, t_end]`` in us):

* ``SEG_CONST``  flux = p0
* ``SEG_LOGLIN`` log flux = p0 + p1 * (t - t_start)
* ``SEG_SINE``   flux = p0 + p1 * cos(p2 * t + p3), with p0 > |p1|
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DomainError
from ..polcore import PolarizationState, wrap_pi

SEG_CONST = 0
SEG_LOGLIN = 1
SEG_SINE = 2

TWO_PI = 2.0 * math.pi


def rpm_to_rad_per_us(rpm: float) -> float:
    return TWO_PI * rpm / 60.0 * 1e-6


def er_efficiency(extinction_ratio: float) -> float:
    """Modulation depth of a polarizer with the given extinction ratio."""
    if math.isinf(extinction_ratio):
        return 1.0
    return (extinction_ratio - 1.0) / (extinction_ratio + 1.0)


@dataclass
class SegmentTable:
    """Flat table of analytic flux segments, grouped by pixel and time-ordered."""

    pixel: np.ndarray  # index into the caller's pixel list
    kind: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    params: np.ndarray  # (n, 4)

    @classmethod
    def concat(cls, tables: Sequence["SegmentTable"]) -> "SegmentTable":
        tables = [t for t in tables if len(t.pixel)]
        if not tables:
            return cls.empty()
        tab = cls(
            np.concatenate([t.pixel for t in tables]),
            np.concatenate([t.kind for t in tables]),
            np.concatenate([t.t_start for t in tables]),
            np.concatenate([t.t_end for t in tables]),
            np.concatenate([t.params for t in tables]),
        )
        order = np.lexsort((tab.t_start, tab.pixel))
        return tab.take(order)

    @classmethod
    def empty(cls) -> "SegmentTable":
        z = np.zeros(0)
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), z, z, np.zeros((0, 4)))

    def take(self, idx) -> "SegmentTable":
        return SegmentTable(self.pixel[idx], self.kind[idx], self.t_start[idx], self.t_end[idx], self.params[idx])

    def __len__(self):
        return len(self.pixel)


def _sine_segments(pix, t0, t1, mean, amp, omega, phase):
    """One sine (or constant, where amp == 0) segment per pixel."""
    n = len(pix)
    params = np.zeros((n, 4))
    params[:, 0] = mean
    params[:, 1] = amp
    params[:, 2] = omega
    params[:, 3] = phase
    kind = np.where(np.abs(amp) > 0, SEG_SINE, SEG_CONST)
    return SegmentTable(
        np.asarray(pix, np.int64), kind.astype(np.int64), np.full(n, float(t0)), np.full(n, float(t1)), params
    )


def _disc_radius(width, height, disc_fraction):
    return math.sqrt(disc_fraction * width * height / math.pi)


@dataclass
class _DiscStimulus:
    frame_width: int = 346
    frame_height: int = 260
    disc_fraction: float = 1.0 / 3.0

    @property
    def center(self):
        return (self.frame_width - 1) / 2.0, (self.frame_height - 1) / 2.0

    @property
    def radius(self):
        return _disc_radius(self.frame_width, self.frame_height, self.disc_fraction)

    def inside(self, x, y):
        cx, cy = self.center
        return (np.asarray(x, float) - cx) ** 2 + (np.asarray(y, float) - cy) ** 2 <= self.radius**2


@dataclass
class RotatingPolarizer(_DiscStimulus):
    """Linear polarizer spinning at constant speed, centred disc on an unpolarized background."""

    rpm: float = 30.0
    base_flux: float = 1.0
    background_flux: float = 0.5
    dolp: float = 1.0
    phase: float = 0.0

    @property
    def omega(self) -> float:
        return rpm_to_rad_per_us(self.rpm)

    def aop_rate(self) -> float:
        """AoP rotation speed in rad/us."""
        return abs(self.omega)

    def state_arrays(self, x, y, t_us):
        t = np.asarray(t_us, dtype=float)
        inside = self.inside(x, y)
        flux = np.where(inside, self.base_flux, self.background_flux)
        dolp = np.where(inside, self.dolp, 0.0)
        aop = wrap_pi(np.broadcast_to(self.omega * t + self.phase, np.broadcast(inside, t).shape))
        return np.broadcast_arrays(flux * np.ones_like(t), dolp * np.ones_like(t), np.asarray(aop))

    def segments(self, x, y, angle, er, t0, t1):
        x = np.asarray(x)
        inside = self.inside(x, y)
        e = er_efficiency(er)
        flux = np.where(inside, self.base_flux, self.background_flux)
        amp = np.where(inside, 0.5 * self.base_flux * self.dolp * e, 0.0)
        phase = 2.0 * self.phase - 2.0 * np.asarray(angle)
        return _sine_segments(np.arange(len(x)), t0, t1, 0.5 * flux, amp, 2.0 * self.omega, phase)


@dataclass
class PolarizerPlusQwp(_DiscStimulus):
    """Rotating linear polarizer followed by a fixed quarter-wave plate at ``qwp_axis_angle``."""

    rpm: float = 30.0
    qwp_axis_angle: float = 0.0
    base_flux: float = 1.0
    background_flux: float = 0.5
    phase: float = 0.0

    @property
    def omega(self) -> float:
        return rpm_to_rad_per_us(self.rpm)

    def aop_rate(self) -> float:
        return 2.0 * abs(self.omega)

    def stokes_normalized(self, t_us):
        """(s1, s2) of the emerging light divided by s0."""
        theta = self.omega * np.asarray(t_us, dtype=float) + self.phase
        q = self.qwp_axis_angle
        c = np.cos(2.0 * (theta - q))
        return c * math.cos(2 * q), c * math.sin(2 * q)

    def state_arrays(self, x, y, t_us):
        t = np.asarray(t_us, dtype=float)
        inside = self.inside(x, y)
        theta = self.omega * t + self.phase
        c = np.cos(2.0 * (theta - self.qwp_axis_angle))
        dolp = np.where(inside, np.abs(c), 0.0)
        aop = wrap_pi(np.where(c >= 0, self.qwp_axis_angle, self.qwp_axis_angle + math.pi / 2))
        flux = np.where(inside, self.base_flux, self.background_flux)
        return np.broadcast_arrays(flux * np.ones_like(t), dolp, np.where(inside, aop, 0.0))

    def segments(self, x, y, angle, er, t0, t1):
        x = np.asarray(x)
        inside = self.inside(x, y)
        e = er_efficiency(er)
        q = self.qwp_axis_angle
        flux = np.where(inside, self.base_flux, self.background_flux)
        amp = np.where(inside, 0.5 * self.base_flux * e * np.cos(2.0 * (q - np.asarray(angle))), 0.0)
        # tiny residual amplitudes (e.g. cos(pi/2)) are numerically zero
        amp = np.where(np.abs(amp) < 1e-12 * np.maximum(flux, 1e-300), 0.0, amp)
        phase = 2.0 * self.phase - 2.0 * q
        return _sine_segments(np.arange(len(x)), t0, t1, 0.5 * flux, amp, 2.0 * self.omega, phase)


@dataclass
class HdrFan(_DiscStimulus):
    """Fan of polarizer sectors rotating under split illumination.

    Sector ``k`` has its transmission axis at ``k * sector_aop_step`` in the
    fan frame, so its lab-frame AoP also turns with the fan. The left half of
    the frame (x < width / 2) is lit with ``bright_flux``, the right half
    with ``dark_flux``.
    """

    rpm: float = 200.0
    sector_count: int = 6
    sector_aop_step: float = math.pi / 6
    bright_flux: float = 2000.0
    dark_flux: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.sector_count < 1:
            raise ConfigError("sector_count must be >= 1")

    @property
    def omega(self) -> float:
        return rpm_to_rad_per_us(self.rpm)

    @property
    def sector_width(self) -> float:
        return TWO_PI / self.sector_count

    def aop_rate(self) -> float:
        return abs(self.omega)

    def azimuth(self, x, y):
        cx, cy = self.center
        return np.arctan2(np.asarray(y, float) - cy, np.asarray(x, float) - cx)

    def illumination(self, x):
        return np.where(np.asarray(x) < self.frame_width / 2.0, self.bright_flux, self.dark_flux)

    def is_bright(self, x):
        return np.asarray(x) < self.frame_width / 2.0

    def fan_angle(self, t_us):
        return self.omega * np.asarray(t_us, dtype=float) + self.phase

    def sector_index(self, x, y, t_us):
        """Sector under (x, y) at t, -1 outside the fan disc."""
        rel = np.mod(self.azimuth(x, y) - self.fan_angle(t_us), TWO_PI)
        k = np.floor(rel / self.sector_width).astype(np.int64) % self.sector_count
        return np.where(self.inside(x, y), k, -1)

    def boundary_distance(self, x, y, t_us):
        """Angular distance (rad) from (x, y) to the nearest sector edge."""
        rel = np.mod(self.azimuth(x, y) - self.fan_angle(t_us), self.sector_width)
        return np.minimum(rel, self.sector_width - rel)

    def state_arrays(self, x, y, t_us):
        t = np.asarray(t_us, dtype=float)
        k = self.sector_index(x, y, t)
        flux = self.illumination(x) * np.ones_like(t)
        inside = k >= 0
        aop = wrap_pi(k * self.sector_aop_step + self.fan_angle(t))
        return np.broadcast_arrays(flux, np.where(inside, 1.0, 0.0), np.where(inside, aop, 0.0))

    def segments(self, x, y, angle, er, t0, t1):
        x = np.asarray(x)
        y = np.asarray(y)
        angle = np.asarray(angle, dtype=float)
        e = er_efficiency(er)
        flux = self.illumination(x)
        inside = self.inside(x, y)
        tables = []
        pix = np.arange(len(x))
        out = ~inside
        if out.any():
            tables.append(_sine_segments(pix[out], t0, t1, 0.5 * flux[out], np.zeros(out.sum()), 0.0, 0.0))
        if inside.any() and self.omega != 0:
            pi_in = pix[inside]
            psi = self.azimuth(x[inside], y[inside])
            w = self.sector_width
            # sector edges pass the pixel when psi - omega t - phase = n * w
            n_first = np.floor((psi - self.fan_angle(t0)) / w)
            n_last = np.floor((psi - self.fan_angle(t1)) / w)
            counts = (np.abs(n_first - n_last) + 1).astype(np.int64)
            rep = np.repeat(np.arange(len(pi_in)), counts)
            step = -1 if self.omega > 0 else 1
            offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            n = n_first[rep] + step * offs
            # segment s covers times where floor((psi - fan)/w) == n
            if self.omega > 0:
                ta = (psi[rep] - (n + 1) * w - self.phase) / self.omega
                tb = (psi[rep] - n * w - self.phase) / self.omega
            else:
                ta = (psi[rep] - n * w - self.phase) / self.omega
                tb = (psi[rep] - (n + 1) * w - self.phase) / self.omega
            ta = np.maximum(ta, t0)
            tb = np.minimum(tb, t1)
            keep = tb > ta
            rep, n, ta, tb = rep[keep], n[keep], ta[keep], tb[keep]
            k = np.mod(n, self.sector_count).astype(np.int64)
            f_in = flux[inside][rep]
            amp = 0.5 * f_in * e
            ph = 2.0 * (k * self.sector_aop_step + self.phase) - 2.0 * angle[inside][rep]
            params = np.stack([0.5 * f_in, amp, np.full(len(rep), 2.0 * self.omega), ph], axis=1)
            tables.append(SegmentTable(pi_in[rep], np.full(len(rep), SEG_SINE), ta, tb, params))
        elif inside.any():
            st = self.state_arrays(x[inside], y[inside], t0)
            tables.append(_static_segments(pix[inside], st, angle[inside], er, t0, t1))
        return SegmentTable.concat(tables)


def _static_segments(pix, state, angle, er, t0, t1):
    from ..polcore import malus_array

    flux, dolp, aop = state
    f = malus_array(flux, dolp, aop, angle, er)
    return _sine_segments(pix, t0, t1, f, np.zeros(len(pix)), 0.0, 0.0)


@dataclass
class Region:
    x0: int
    y0: int
    x1: int
    y1: int
    schedule: list = field(default_factory=list)  # [(t_start_us, PolarizationState), ...]

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)

    def state_index(self, t_us):
        starts = np.array([s[0] for s in self.schedule], dtype=float)
        return np.searchsorted(starts, np.asarray(t_us, float), side="right") - 1


@dataclass
class PiecewiseConstantField:
    """Rectangular regions with their own time schedule of polarization states.

    The first region containing a pixel wins; pixels outside every region,
    and times before a region's first schedule entry, see ``default``.
    """

    regions: list = field(default_factory=list)
    default: PolarizationState = field(default_factory=lambda: PolarizationState(1.0, 0.0, 0.0))

    def aop_rate(self) -> float:
        return 0.0

    def _lookup(self, x, y, t_us):
        x, y, t = np.broadcast_arrays(np.asarray(x), np.asarray(y), np.asarray(t_us, dtype=float))
        flux = np.full(x.shape, self.default.total_flux)
        dolp = np.full(x.shape, self.default.dolp)
        aop = np.full(x.shape, self.default.aop)
        taken = np.zeros(x.shape, bool)
        for reg in self.regions:
            m = reg.contains(x, y) & ~taken
            if not m.any() or not reg.schedule:
                continue
            idx = reg.state_index(t[m])
            tab = np.array([[s.total_flux, s.dolp, s.aop] for _, s in reg.schedule])
            valid = idx >= 0
            sub = np.where(m)
            vf = np.where(valid, tab[np.maximum(idx, 0), 0], self.default.total_flux)
            vd = np.where(valid, tab[np.maximum(idx, 0), 1], self.default.dolp)
            va = np.where(valid, tab[np.maximum(idx, 0), 2], self.default.aop)
            flux[sub], dolp[sub], aop[sub] = vf, vd, va
            taken |= m
        return flux, dolp, aop

    def state_arrays(self, x, y, t_us):
        return self._lookup(x, y, t_us)

    def segments(self, x, y, angle, er, t0, t1):
        from ..polcore import malus_array

        x = np.asarray(x)
        y = np.asarray(y)
        angle = np.asarray(angle, dtype=float)
        n = len(x)
        # every schedule start is a potential breakpoint for every pixel
        brk = sorted({float(t0)} | {float(s[0]) for r in self.regions for s in r.schedule if t0 < s[0] < t1})
        starts = np.array(brk)
        ends = np.append(starts[1:], float(t1))
        nb = len(starts)
        pix = np.repeat(np.arange(n), nb)
        ts = np.tile(starts, n)
        te = np.tile(ends, n)
        flux, dolp, aop = self._lookup(x[pix], y[pix], ts)
        f = malus_array(flux, dolp, aop, angle[pix], er)
        params = np.zeros((len(pix), 4))
        params[:, 0] = f
        return SegmentTable(pix.astype(np.int64), np.full(len(pix), SEG_CONST), ts, te, params)


def eval_stimulus(stim, x: int, y: int, t_us: float) -> PolarizationState:
    if t_us < 0:
        raise DomainError(f"stimulus time must be >= 0, got {t_us}")
    flux, dolp, aop = stim.state_arrays(np.array([x]), np.array([y]), np.array([float(t_us)]))
    return PolarizationState(float(flux[0]), float(min(1.0, max(0.0, dolp[0]))), float(aop[0]))


STIMULUS_KINDS = {
    "rotating": RotatingPolarizer,
    "qwp": PolarizerPlusQwp,
    "hdr_fan": HdrFan,
}
