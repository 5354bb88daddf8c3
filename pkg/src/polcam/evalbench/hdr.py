"""High-dynamic-range fan comparison: which sector AoPs each method can recover.

The fan spins under split illumination (bright left half, dark right half).
Every method is scored at the exposure midpoints of the frame stream, on
macropixels whose whole neighbourhood sits inside one sector and one
illumination half for the full exposure. Samples that are undefined,
saturated, or weakly polarized are masked; a (sector, half) cell is
recoverable when its masked fraction is at most ``max_masked_fraction`` and
the AoP MAE of the rest is below ``mae_limit_deg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError
from ..polcore import aop_error, dolp_array, wrap_pi
from ..recon.cf import CfParams, ComplementaryFilter
from ..recon.events import EventsFilter
from ..recon.frames import channel_planes, frames_reconstruct
from ..sensorsim.aps import ApsParams, simulate_aps
from ..sensorsim.dvs import DvsPixelParams, DvsSensor
from ..sensorsim.geometry import SensorGeometry
from ..sensorsim.stimulus import HdrFan

GROUPS = ("bright", "dark")


@dataclass
class HdrSpec:
    width: int = 96
    height: int = 72
    disc_fraction: float = 0.5
    rpm: float = 200.0
    ratio: float = 2000.0
    dark_flux: float = 1.0
    extinction_ratio: float = 40.0
    duration_s: float = 2.0
    discard_s: float = 1.0
    dvs: DvsPixelParams = field(default_factory=DvsPixelParams.ideal)
    aps: ApsParams = field(default_factory=ApsParams)
    # one frame stream per full-scale flux: exposed for the dark half, then for the bright half
    frames_full_scale: tuple | None = None
    events_f3db_hz: float = 0.5
    neighbor_radius: int = 1
    cf: CfParams = field(default_factory=CfParams)
    recon_thresholds: tuple | None = None  # None = dvs values
    dolp_mask: float = 0.1
    mae_limit_deg: float = 15.0
    max_masked_fraction: float = 0.5
    jobs: int = 1

    def __post_init__(self):
        if not self.ratio >= 1.0:
            raise ConfigError("bright/dark ratio must be >= 1")
        if self.discard_s >= self.duration_s:
            raise ConfigError("discard_s must be shorter than duration_s")

    @property
    def bright_flux(self) -> float:
        return self.dark_flux * self.ratio

    def full_scales(self) -> tuple:
        if self.frames_full_scale:
            return tuple(self.frames_full_scale)
        return (1.7 * self.dark_flux, 1.7 * self.bright_flux)

    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.width, self.height)

    def stimulus(self) -> HdrFan:
        return HdrFan(self.width, self.height, self.disc_fraction, rpm=self.rpm, bright_flux=self.bright_flux,
                      dark_flux=self.dark_flux)


@dataclass
class HdrCell:
    method: str  # "frames[i]" for frame setting i, "events", "cf"
    sector: int
    group: str
    aop_mae_deg: float
    masked_fraction: float
    n_samples: int
    recoverable: bool


@dataclass
class HdrReport:
    cells: list
    full_scales: tuple

    @property
    def methods(self):
        return sorted({c.method for c in self.cells})

    def cell(self, method, sector, group) -> HdrCell:
        for c in self.cells:
            if (c.method, c.sector, c.group) == (method, sector, group):
                return c
        raise KeyError((method, sector, group))

    def group_recoverable(self, method, group) -> bool:
        return all(c.recoverable for c in self.cells if c.method == method and c.group == group)

    def all_recoverable(self, method) -> bool:
        return all(self.group_recoverable(method, g) for g in GROUPS)

    def masked_fraction(self, method) -> float:
        cs = [c for c in self.cells if c.method == method]
        n = sum(c.n_samples for c in cs)
        return sum(c.masked_fraction * c.n_samples for c in cs) / n if n else math.nan

    def as_rows(self):
        return [(c.method, c.sector, c.group, c.aop_mae_deg, c.masked_fraction, c.n_samples, c.recoverable)
                for c in self.cells]


def _valid_samples(stim: HdrFan, geom: SensorGeometry, frames, radius: int, t_from: float):
    """Boolean (n_frames, H/2, W/2) mask of uniformly-covered macropixels, plus truth sector and half."""
    mh, mw = geom.macro_height, geom.macro_width
    span = 2 * radius
    offs = np.arange(-span, span + 2)
    X, Y = np.meshgrid(np.arange(mw), np.arange(mh))
    bx = (2 * X)[..., None, None] + offs[None, None, None, :]  # (mh, mw, 1, k)
    by = (2 * Y)[..., None, None] + offs[None, None, :, None]  # (mh, mw, k, 1)
    bx, by = np.broadcast_arrays(bx, by)
    inb = (bx >= 0) & (bx < geom.width) & (by >= 0) & (by < geom.height)
    cx = 2 * X + 0.5
    cy = 2 * Y + 0.5
    bright_c = stim.is_bright(cx)
    same_half = np.all(np.where(inb, stim.is_bright(bx) == bright_c[..., None, None], True), axis=(-2, -1))
    in_disc = np.all(np.where(inb, stim.inside(bx, by), True), axis=(-2, -1))
    valid, sector, t_mid = [], [], []
    for fr in frames:
        tm = 0.5 * (fr.t_start_us + fr.t_end_us)
        ks = [stim.sector_index(bx, by, t) for t in (fr.t_start_us, tm, fr.t_end_us)]
        k_c = stim.sector_index(cx, cy, tm)
        same = np.ones((mh, mw), bool)
        for k in ks:
            same &= np.all(np.where(inb, k == k_c[..., None, None], True), axis=(-2, -1))
        valid.append(same & same_half & in_disc & (k_c >= 0) & (tm >= t_from))
        sector.append(k_c)
        t_mid.append(tm)
    return np.array(valid), np.array(sector), bright_c, np.array(t_mid)


def _score(method, est_aop, masked, truth, valid, sector, bright, spec: HdrSpec, n_sectors: int):
    cells = []
    for g in GROUPS:
        half = bright if g == "bright" else ~bright
        for k in range(n_sectors):
            sel = valid & (sector == k) & half[None]
            n = int(sel.sum())
            if n == 0:
                cells.append(HdrCell(method, k, g, math.nan, 1.0, 0, False))
                continue
            m = masked[sel]
            mf = float(m.mean())
            keep = ~m
            if keep.any():
                err = aop_error(est_aop[sel][keep], truth[sel][keep])
                mae = float(np.degrees(np.mean(err)))
            else:
                mae = math.nan
            ok = bool(mf <= spec.max_masked_fraction and mae < spec.mae_limit_deg)
            cells.append(HdrCell(method, k, g, mae, mf, n, ok))
    return cells


def hdr_comparison(spec: HdrSpec | None = None) -> HdrReport:
    """Run the fan once and score frames (every full-scale setting), events and cf on it."""
    spec = spec or HdrSpec()
    g = spec.geometry()
    stim = spec.stimulus()
    t1 = spec.duration_s * 1e6
    events = DvsSensor(g, spec.dvs).simulate(stim, spec.extinction_ratio, 0.0, t1, jobs=spec.jobs)
    frame_sets = [simulate_aps(stim, g, replace(spec.aps, full_scale_flux=fs), spec.extinction_ratio, 0.0, t1)
                  for fs in spec.full_scales()]
    ref = frame_sets[0]
    valid, sector, bright, t_mid = _valid_samples(stim, g, ref, spec.neighbor_radius, spec.discard_s * 1e6)
    # truth AoP of the sector under each macropixel centre at each midpoint
    fan = stim.fan_angle(t_mid)[:, None, None]
    truth = wrap_pi(sector * stim.sector_aop_step + fan)
    cells = []
    for i, frames in enumerate(frame_sets):
        aop, mask = [], []
        for fr in frames:
            sg = frames_reconstruct(fr, g, spec.aps.dark_offset_dn)
            d = sg.dolp
            a = sg.aop
            mask.append(sg.saturated | ~np.isfinite(a) | ~(d >= spec.dolp_mask))
            aop.append(np.where(np.isfinite(a), a, 0.0))
        cells += _score(f"frames[{i}]", np.array(aop), np.array(mask), truth, valid, sector, bright, spec,
                        stim.sector_count)
    idx = np.arange(g.width * g.height)

    def planes(flat):
        return np.stack([channel_planes(row.reshape(g.height, g.width), g) for row in flat])

    th_on, th_off = spec.recon_thresholds or (spec.dvs.theta_on, spec.dvs.theta_off)
    filt = EventsFilter(g, spec.events_f3db_hz, th_on, th_off, spec.neighbor_radius)
    d = planes(filt.run(events, t_mid, idx))
    a = wrap_pi(0.5 * np.arctan2(d[..., 1] - d[..., 3], d[..., 0] - d[..., 2]))
    undefined = np.all(d == 0, axis=-1)
    cells += _score("events", a, undefined, truth, valid, sector, bright, spec, stim.sector_count)
    cfp = replace(spec.cf, theta_on=th_on, theta_off=th_off)
    cf = ComplementaryFilter(g, cfp, spec.aps.adc_bits, spec.aps.dark_offset_dn)
    inten = np.exp(planes(cf.run(events, ref, t_mid, idx)))
    s0 = inten[..., 0] + inten[..., 2]
    s1 = inten[..., 0] - inten[..., 2]
    s2 = inten[..., 1] - inten[..., 3]
    dl = dolp_array(s0, s1, s2)
    a = wrap_pi(0.5 * np.arctan2(s2, s1))
    cells += _score("cf", a, ~(dl >= spec.dolp_mask), truth, valid, sector, bright, spec, stim.sector_count)
    return HdrReport(cells, spec.full_scales())


__all__ = ["GROUPS", "HdrCell", "HdrReport", "HdrSpec", "hdr_comparison"]
