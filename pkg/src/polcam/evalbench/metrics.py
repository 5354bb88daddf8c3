"""Error metrics on AoP / DoLP time series."""

from __future__ import annotations

import math

import numpy as np

from ..polcore import aop_error, wrap_pi


def phase_offset(est, truth) -> float:
    """Constant AoP offset that best aligns ``est`` to ``truth``.

    Maximizes the doubled-angle circular correlation sum cos(2 (est - d - truth)),
    whose maximizer is half the argument of the mean resultant of the differences.
    """
    est = np.asarray(est, float)
    truth = np.asarray(truth, float)
    ok = np.isfinite(est) & np.isfinite(truth)
    if not ok.any():
        return 0.0
    z = np.exp(2j * (est[ok] - truth[ok])).sum()
    if abs(z) == 0:
        return 0.0
    return 0.5 * math.atan2(z.imag, z.real)


def aop_mae_deg(est, truth, align: bool = True):
    """Mean circular AoP error in degrees over finite samples, and the offset removed (degrees)."""
    est = np.asarray(est, float)
    truth = np.asarray(truth, float)
    ok = np.isfinite(est) & np.isfinite(truth)
    if not ok.any():
        return math.nan, 0.0
    d = phase_offset(est, truth) if align else 0.0
    err = aop_error(wrap_pi(est[ok] - d), truth[ok])
    return float(np.degrees(np.mean(err))), float(np.degrees(d))


def dolp_mae(est, truth) -> float:
    est = np.asarray(est, float)
    truth = np.asarray(truth, float)
    ok = np.isfinite(est) & np.isfinite(truth)
    if not ok.any():
        return math.nan
    return float(np.mean(np.abs(est[ok] - truth[ok])))


def through_origin_r2(x, y) -> tuple[float, float]:
    """Least-squares slope of y = k x and its R^2 (centered total sum of squares)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    k = float(np.dot(x, y) / np.dot(x, x))
    ss_res = float(np.sum((y - k * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return k, (1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)
