"""Linear polarization algebra for a four-angle micro-polarizer sensor.

Scalar functions operate on :class:`PolarizationState` / :class:`StokesSample`
values and raise on degenerate input. The ``*_array`` variants are the
vectorized forms used by the simulator and the reconstruction engines; they
return NaN where the scalar form would raise.

Angles are radians throughout. AoP lives in ``[0, pi)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, UndefinedAoPError, UndefinedDoLPError

PI = math.pi


class FilterAngle(float, enum.Enum):
    """Transmission axis of one micro-polarizer."""

    DEG0 = 0.0
    DEG45 = PI / 4
    DEG90 = PI / 2
    DEG135 = 3 * PI / 4

    @classmethod
    def from_degrees(cls, deg: float) -> "FilterAngle":
        for a in cls:
            if abs(math.degrees(a.value) - deg) < 1e-9:
                return a
        raise DomainError(f"no micro-polarizer at {deg} degrees")

    @property
    def degrees(self) -> int:
        return int(round(math.degrees(self.value)))


# canonical channel order used by every array with a trailing axis of 4
CHANNEL_ANGLES = (FilterAngle.DEG0, FilterAngle.DEG45, FilterAngle.DEG90, FilterAngle.DEG135)


def wrap_pi(angle):
    """Reduce an angle (scalar or array) into ``[0, pi)``."""
    a = np.mod(angle, PI)
    # np.mod can return exactly pi for tiny negative inputs
    a = np.where(a >= PI, 0.0, a)
    if np.ndim(a) == 0:
        return float(a)
    return a


@dataclass(frozen=True)
class PolarizationState:
    """Incident light at one point and instant: total flux, DoLP and AoP."""

    total_flux: float
    dolp: float
    aop: float

    def __post_init__(self):
        if not math.isfinite(self.total_flux) or self.total_flux < 0:
            raise DomainError(f"total_flux must be finite and >= 0, got {self.total_flux}")
        if not (0.0 <= self.dolp <= 1.0):
            raise DomainError(f"dolp must lie in [0, 1], got {self.dolp}")
        object.__setattr__(self, "aop", wrap_pi(self.aop))


@dataclass(frozen=True)
class StokesSample:
    s0: float
    s1: float
    s2: float

    @property
    def linear_norm(self) -> float:
        return math.hypot(self.s1, self.s2)

    @property
    def is_physical(self) -> bool:
        return self.s0 >= 0 and self.linear_norm <= self.s0 * (1 + 1e-9)


def _check_er(extinction_ratio: float) -> None:
    if not extinction_ratio > 1:
        raise DomainError(f"extinction ratio must be > 1 (or inf), got {extinction_ratio}")


def malus_intensity(state: PolarizationState, angle: float, extinction_ratio: float = math.inf) -> float:
    """Flux transmitted by a linear polarizer at ``angle``.

    A finite extinction ratio ER mixes the ideal parallel and perpendicular
    transmissions as ``(ER * I_par + I_perp) / (ER + 1)``.
    """
    if not isinstance(state, PolarizationState):
        raise DomainError("malus_intensity expects a PolarizationState")
    _check_er(extinction_ratio)
    return float(malus_array(state.total_flux, state.dolp, state.aop, float(angle), extinction_ratio))


def malus_array(flux, dolp, aop, angle, extinction_ratio=math.inf):
    """Vectorized Malus's law for partially polarized light."""
    flux = np.asarray(flux, dtype=float)
    dolp = np.asarray(dolp, dtype=float)
    unpol = 0.5 * flux * (1.0 - dolp)
    c = np.cos(aop - angle)
    par = flux * dolp * c * c + unpol
    if math.isinf(extinction_ratio):
        return par
    perp = flux * dolp * (1.0 - c * c) + unpol
    return (extinction_ratio * par + perp) / (extinction_ratio + 1.0)


def stokes_from_intensities(i0: float, i45: float, i90: float, i135: float) -> StokesSample:
    return StokesSample(s0=i0 + i90, s1=i0 - i90, s2=i45 - i135)


def stokes_array(intensities):
    """Stokes components from an array with a trailing channel axis (0,45,90,135)."""
    i = np.asarray(intensities, dtype=float)
    return i[..., 0] + i[..., 2], i[..., 0] - i[..., 2], i[..., 1] - i[..., 3]


def dolp_of(s: StokesSample) -> float:
    if not s.s0 > 0:
        raise UndefinedDoLPError(f"DoLP undefined for s0={s.s0}")
    return min(1.0, max(0.0, s.linear_norm / s.s0))


def aop_of(s: StokesSample) -> float:
    if s.s1 == 0 and s.s2 == 0:
        raise UndefinedAoPError("AoP undefined for unpolarized light")
    return wrap_pi(0.5 * math.atan2(s.s2, s.s1))


def dolp_array(s0, s1, s2):
    s0 = np.asarray(s0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.hypot(s1, s2) / s0
    return np.where(s0 > 0, np.clip(d, 0.0, 1.0), np.nan)


def aop_array(s1, s2):
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    a = wrap_pi(0.5 * np.arctan2(s2, s1))
    return np.where((s1 == 0) & (s2 == 0), np.nan, a)


def aop_error(a, b):
    """Distance between two AoPs on the circle of circumference pi."""
    d = np.mod(np.abs(np.asarray(a, dtype=float) - b), PI)
    d = np.minimum(d, PI - d)
    if np.ndim(d) == 0:
        return float(d)
    return d


def roi_mean_aop(samples: Sequence[StokesSample] | Iterable[StokesSample]) -> float:
    """Circular mean of AoP in doubled-angle space, each sample weighted equally."""
    samples = list(samples)
    if not samples:
        raise DomainError("roi_mean_aop needs at least one sample")
    s1 = np.array([s.s1 for s in samples])
    s2 = np.array([s.s2 for s in samples])
    out = roi_mean_aop_array(s1, s2, axis=0)
    if np.isnan(out):
        raise UndefinedAoPError("all ROI samples are unpolarized")
    return float(out)


def roi_mean_aop_array(s1, s2, axis=-1):
    """Vectorized ROI circular mean; NaN where every sample is unpolarized."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    n = np.hypot(s1, s2)
    ok = n > 0
    safe = np.where(ok, n, 1.0)
    c = np.where(ok, s1 / safe, 0.0).sum(axis=axis)
    s = np.where(ok, s2 / safe, 0.0).sum(axis=axis)
    return aop_array(c, s)


def circular_mean_aop(angles, axis=None):
    """Doubled-angle circular mean of AoP values, ignoring NaNs."""
    a = np.asarray(angles, dtype=float)
    ok = ~np.isnan(a)
    c = np.where(ok, np.cos(2 * np.where(ok, a, 0)), 0).sum(axis=axis)
    s = np.where(ok, np.sin(2 * np.where(ok, a, 0)), 0).sum(axis=axis)
    return aop_array(c, s)
