"""Frame-based Stokes reconstruction, one sample per macropixel per frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..polcore import dolp_array
from ..sensorsim.aps import ApsFrame
from ..sensorsim.geometry import SensorGeometry


@dataclass
class StokesGrid:
    """Stokes components on the macropixel grid at one instant."""

    t_us: float
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    saturated: np.ndarray | None = None
    method: str = "frames"

    @property
    def dolp(self) -> np.ndarray:
        return dolp_array(self.s0, self.s1, self.s2)

    @property
    def aop(self) -> np.ndarray:
        from ..polcore import aop_array

        return aop_array(self.s1, self.s2)


def channel_planes(samples: np.ndarray, geom: SensorGeometry) -> np.ndarray:
    """Rearrange a (H, W) subpixel image into (H/2, W/2, 4) channel planes (0, 45, 90, 135)."""
    out = np.empty((geom.macro_height, geom.macro_width, 4), dtype=samples.dtype)
    for ch, (dx, dy) in enumerate(geom.channel_offsets()):
        out[..., ch] = samples[dy::2, dx::2]
    return out


@njit(cache=True)
def frames_stokes_px(i0, i45, i90, i135, dark2):
    """Per-macropixel frames kernel; the dark offset cancels in s1 and s2."""
    s0 = i0 + i90 - dark2
    s1 = i0 - i90
    s2 = i45 - i135
    dolp = np.sqrt(s1 * s1 + s2 * s2) / s0
    aop = 0.5 * np.arctan2(s2, s1)
    if aop < 0:
        aop = aop + np.pi
    return s0, s1, s2, dolp, aop


def frames_reconstruct(frame: ApsFrame, geom: SensorGeometry, dark_offset_dn: float | None = None) -> StokesGrid:
    """Stokes per macropixel, timestamped at the exposure midpoint.

    DN minus the dark offset is taken as linear flux. A macropixel is flagged
    saturated when any of its subpixels sits at the top ADC code.
    """
    dark = frame.dark_offset_dn if dark_offset_dn is None else dark_offset_dn
    planes = channel_planes(frame.samples, geom).astype(np.float64) - float(dark)
    s0 = planes[..., 0] + planes[..., 2]
    s1 = planes[..., 0] - planes[..., 2]
    s2 = planes[..., 1] - planes[..., 3]
    sat = channel_planes(frame.saturated, geom).any(axis=-1)
    return StokesGrid(frame.t_mid_us, s0, s1, s2, sat, "frames")
