"""Accuracy-vs-rotation-speed sweeps over the three reconstruction methods."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import ConfigError
from ..polcore import dolp_array, roi_mean_aop_array, wrap_pi
from ..recon.cf import CfParams, ComplementaryFilter
from ..recon.events import EventsFilter, tau_us
from ..recon.frames import frames_reconstruct
from ..sensorsim.aps import ApsParams, simulate_aps
from ..sensorsim.dvs import DvsPixelParams, DvsSensor
from ..sensorsim.geometry import SensorGeometry
from ..sensorsim.stimulus import PolarizerPlusQwp, RotatingPolarizer
from .metrics import aop_mae_deg, dolp_mae

METHODS = ("frames", "events", "cf")
DEFAULT_RPMS = (30.0, 60.0, 100.0, 200.0, 500.0, 1000.0)


@dataclass
class SweepSpec:
    rpm_list: tuple = DEFAULT_RPMS
    stimulus: str = "rotating"  # "rotating" or "qwp"
    methods: tuple = METHODS
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    dvs: DvsPixelParams = field(default_factory=DvsPixelParams.ideal)
    aps: ApsParams = field(default_factory=lambda: ApsParams(full_scale_flux=1.7))
    extinction_ratio: float = 40.0
    roi_size: int = 12
    duration_s: float = 3.0
    grid_hz: float = 1000.0
    events_f3db_hz: float = 0.5
    neighbor_radius: int = 1
    cf: CfParams = field(default_factory=CfParams)
    base_flux: float = 1.0
    background_flux: float = 0.5
    qwp_axis_angle: float = 0.0
    dolp: float = 1.0
    discard_s: float | None = None  # default: two events-filter time constants
    align: bool = True
    recon_thresholds: tuple | None = None  # (on, off) assumed by the reconstructors; None = dvs values
    frames_readout: str = "hold"  # "hold": latest finished frame; "interp": midpoint interpolation
    jobs: int = 1

    def __post_init__(self):
        if not self.rpm_list or any(not r > 0 for r in self.rpm_list):
            raise ConfigError("rpm_list must be nonempty and positive")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        if self.stimulus not in ("rotating", "qwp"):
            raise ConfigError(f"sweep stimulus must be 'rotating' or 'qwp', got {self.stimulus!r}")
        if self.frames_readout not in ("hold", "interp"):
            raise ConfigError(f"frames_readout must be 'hold' or 'interp', got {self.frames_readout!r}")
        self.geometry.centered_roi(self.roi_size)

    @property
    def discard_us(self) -> float:
        if self.discard_s is not None:
            return self.discard_s * 1e6
        return 2.0 * tau_us(self.events_f3db_hz)

    def make_stimulus(self, rpm: float):
        g = self.geometry
        if self.stimulus == "rotating":
            return RotatingPolarizer(g.width, g.height, rpm=rpm, base_flux=self.base_flux,
                                     background_flux=self.background_flux, dolp=self.dolp)
        return PolarizerPlusQwp(g.width, g.height, rpm=rpm, qwp_axis_angle=self.qwp_axis_angle,
                                base_flux=self.base_flux, background_flux=self.background_flux)


@dataclass
class SweepRow:
    rpm: float
    method: str
    aop_mae_deg: float
    dolp_mae: float | None
    event_rate_hz_per_pixel: float
    wall_time_s: float
    aop_shift_deg: float
    n_samples: int


CSV_COLUMNS = ("rpm", "method", "aop_mae_deg", "dolp_mae", "event_rate_hz_per_pixel", "wall_time_s",
               "aop_shift_deg", "n_samples")


@dataclass
class SweepResult:
    rows: list
    spec: dict = field(default_factory=dict)

    def get(self, rpm, method) -> SweepRow:
        for r in self.rows:
            if r.rpm == rpm and r.method == method:
                return r
        raise KeyError((rpm, method))

    def series(self, method, attr="aop_mae_deg"):
        rows = sorted((r for r in self.rows if r.method == method), key=lambda r: r.rpm)
        return [r.rpm for r in rows], [getattr(r, attr) for r in rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=2, sort_keys=True, default=_json_default)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return str(v)


@dataclass
class PointTrace:
    """Time series of one sweep point: ground truth and each method's ROI estimate."""

    rpm: float
    t_us: np.ndarray
    truth_aop: np.ndarray
    truth_dolp: np.ndarray
    aop: dict
    dolp: dict
    event_rate_hz_per_pixel: float
    wall_time_s: dict
    n_events: int


def roi_index(geom: SensorGeometry, roi) -> np.ndarray:
    """Flat subpixel indices of the ROI macropixels, shape (n_macropixels, 4) in channel order."""
    x0, y0, x1, y1 = roi
    offs = geom.channel_offsets()
    out = []
    for my in range(y0 // 2, y1 // 2):
        for mx in range(x0 // 2, x1 // 2):
            out.append([(2 * my + dy) * geom.width + 2 * mx + dx for dx, dy in offs])
    return np.array(out, dtype=np.int64)


def expand_region(geom: SensorGeometry, roi, margin: int):
    x0, y0, x1, y1 = roi
    return (max(0, x0 - margin), max(0, y0 - margin), min(geom.width, x1 + margin), min(geom.height, y1 + margin))


def _truth(stim, geom, roi, t):
    x0, y0, x1, y1 = roi
    xs = np.arange(x0, x1)
    ys = np.arange(y0, y1)
    xx, yy = np.meshgrid(xs, ys)
    fl, dl, ao = stim.state_arrays(xx.ravel()[:, None], yy.ravel()[:, None], t[None, :])
    aop = roi_mean_aop_array(dl * np.cos(2 * ao), dl * np.sin(2 * ao), axis=0)
    return aop, np.mean(dl, axis=0)


def stokes_roi_summary(s0, s1, s2):
    """ROI AoP (circular mean) and DoLP (arithmetic mean) over the last axis."""
    aop = roi_mean_aop_array(s1, s2, axis=-1)
    d = dolp_array(s0, s1, s2)
    with np.errstate(invalid="ignore"):
        dolp = np.nanmean(np.where(np.isfinite(d), d, np.nan), axis=-1) if d.size else d
    return aop, dolp


def interpolate_polarization(t_src, aop, dolp, t_dst):
    """Linear interpolation of (DoLP cos 2 AoP, DoLP sin 2 AoP); NaN outside the source span."""
    q = dolp * np.cos(2 * aop)
    u = dolp * np.sin(2 * aop)
    ok = np.isfinite(q) & np.isfinite(u)
    if ok.sum() < 2:
        return np.full(len(t_dst), np.nan), np.full(len(t_dst), np.nan)
    ts = np.asarray(t_src)[ok]
    qi = np.interp(t_dst, ts, q[ok])
    ui = np.interp(t_dst, ts, u[ok])
    inside = (t_dst >= ts[0]) & (t_dst <= ts[-1])
    a = np.where(inside, wrap_pi(0.5 * np.arctan2(ui, qi)), np.nan)
    d = np.where(inside, np.hypot(qi, ui), np.nan)
    return a, d


def hold_polarization(t_ready, aop, dolp, t_dst):
    """Sample-and-hold: each grid time shows the newest frame finished at or before it."""
    k = np.searchsorted(np.asarray(t_ready, float), t_dst, side="right") - 1
    ok = k >= 0
    kk = np.where(ok, k, 0)
    return np.where(ok, aop[kk], np.nan), np.where(ok, dolp[kk], np.nan)


def frames_roi_series(frames, geom, roi, dark):
    """Per-frame ROI AoP/DoLP at exposure midpoints, plus a saturation flag."""
    x0, y0, x1, y1 = roi
    t, a, d, sat = [], [], [], []
    for fr in frames:
        sg = frames_reconstruct(fr, geom, dark)
        sl = (slice(y0 // 2, y1 // 2), slice(x0 // 2, x1 // 2))
        s0, s1, s2 = sg.s0[sl].ravel(), sg.s1[sl].ravel(), sg.s2[sl].ravel()
        aa, dd = stokes_roi_summary(s0, s1, s2)
        t.append(sg.t_us)
        a.append(aa)
        d.append(dd)
        sat.append(bool(sg.saturated[sl].any()))
    return np.array(t), np.array(a, float), np.array(d, float), np.array(sat)


def run_point(spec: SweepSpec, rpm: float, methods=None) -> PointTrace:
    """Simulate one rotation speed and reconstruct it with each requested method."""
    methods = tuple(methods or spec.methods)
    g = spec.geometry
    stim = spec.make_stimulus(rpm)
    roi = g.centered_roi(spec.roi_size)
    region = expand_region(g, roi, 2 * spec.neighbor_radius)
    t1 = spec.duration_s * 1e6
    wall = {}
    need_events = any(m in ("events", "cf") for m in methods)
    need_frames = any(m in ("frames", "cf") for m in methods)
    t_sim = time.perf_counter()
    events = DvsSensor(g, spec.dvs).simulate(stim, spec.extinction_ratio, 0.0, t1, region=region,
                                             jobs=spec.jobs) if need_events else None
    t_dvs = time.perf_counter() - t_sim
    t_sim = time.perf_counter()
    frames = simulate_aps(stim, g, spec.aps, spec.extinction_ratio, 0.0, t1, region=region) if need_frames else []
    t_aps = time.perf_counter() - t_sim
    grid = np.arange(math.ceil(spec.discard_us * spec.grid_hz / 1e6), math.floor(t1 * spec.grid_hz / 1e6) + 1)
    grid = grid * (1e6 / spec.grid_hz)
    truth_aop, truth_dolp = _truth(stim, g, roi, grid)
    idx = roi_index(g, roi)
    aop, dolp = {}, {}
    th_on, th_off = spec.recon_thresholds or (spec.dvs.theta_on, spec.dvs.theta_off)
    for m in methods:
        t0 = time.perf_counter()
        if m == "frames":
            ft, fa, fd, _ = frames_roi_series(frames, g, roi, spec.aps.dark_offset_dn)
            if spec.frames_readout == "interp":
                aop[m], dolp[m] = interpolate_polarization(ft, fa, fd, grid)
            else:
                t_ready = np.array([fr.t_end_us for fr in frames], float)
                aop[m], dolp[m] = hold_polarization(t_ready, fa, fd, grid)
            wall[m] = time.perf_counter() - t0 + t_aps
        elif m == "events":
            filt = EventsFilter(g, spec.events_f3db_hz, th_on, th_off, spec.neighbor_radius)
            d = filt.run(events, grid, idx.ravel()).reshape(len(grid), len(idx), 4)
            aop[m] = roi_mean_aop_array(d[..., 0] - d[..., 2], d[..., 1] - d[..., 3], axis=-1)
            dolp[m] = None
            wall[m] = time.perf_counter() - t0 + t_dvs
        else:
            cfp = replace(spec.cf, theta_on=th_on, theta_off=th_off)
            cf = ComplementaryFilter(g, cfp, spec.aps.adc_bits, spec.aps.dark_offset_dn)
            lv = cf.run(events, frames, grid, idx.ravel()).reshape(len(grid), len(idx), 4)
            i = np.exp(lv)
            aop[m], dolp[m] = stokes_roi_summary(i[..., 0] + i[..., 2], i[..., 0] - i[..., 2], i[..., 1] - i[..., 3])
            wall[m] = time.perf_counter() - t0 + t_dvs + t_aps
    n_roi = (roi[2] - roi[0]) * (roi[3] - roi[1])
    if events is not None:
        x0, y0, x1, y1 = roi
        m_roi = (events["x"] >= x0) & (events["x"] < x1) & (events["y"] >= y0) & (events["y"] < y1)
        rate = float(m_roi.sum()) / n_roi / spec.duration_s
        n_ev = len(events)
    else:
        rate, n_ev = math.nan, 0
    return PointTrace(rpm, grid, truth_aop, truth_dolp, aop, dolp, rate, wall, n_ev)


def score_point(spec: SweepSpec, tr: PointTrace) -> list:
    rows = []
    for m in tr.aop:
        mae, shift = aop_mae_deg(tr.aop[m], tr.truth_aop, align=spec.align)
        dm = dolp_mae(tr.dolp[m], tr.truth_dolp) if tr.dolp[m] is not None else None
        n = int(np.isfinite(tr.aop[m]).sum())
        rows.append(SweepRow(tr.rpm, m, mae, dm, tr.event_rate_hz_per_pixel, tr.wall_time_s[m], shift, n))
    return rows


def run_sweep(spec: SweepSpec) -> SweepResult:
    rows = []
    for rpm in spec.rpm_list:
        rows.extend(score_point(spec, run_point(spec, rpm)))
    return SweepResult(rows, {"stimulus": spec.stimulus, "rpm_list": list(spec.rpm_list)})


def dolp_error_growth(spec: SweepSpec, result: SweepResult | None = None) -> dict:
    """DoLP MAE growth relative to the lowest speed, per method (frames and cf)."""
    if spec.stimulus != "qwp":
        spec = replace(spec, stimulus="qwp")
    methods = tuple(m for m in spec.methods if m in ("frames", "cf")) or ("frames", "cf")
    if result is None:
        result = run_sweep(replace(spec, methods=methods))
    out = {}
    for m in methods:
        rpms, maes = result.series(m, "dolp_mae")
        base = maes[0]
        out[m] = {r: v - base for r, v in zip(rpms, maes)}
    return out
