"""CSV export of Stokes / AoP / DoLP sample streams and of raw events.

Columns, in order: ``t_us, X, Y, s0, s1, s2, dolp, aop_deg, method, flags``.
Angles are degrees in [0, 180). Undefined numbers are empty fields. ``flags``
is a ``|``-separated subset of ``unpolarized`` (AoP undefined) and
``saturated`` (a subpixel of the macropixel hit the top ADC code).
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping

import numpy as np

from ..recon.events import FLAG_SATURATED, FLAG_UNPOLARIZED, METHOD_CF, METHOD_EVENTS, METHOD_FRAMES

CSV_COLUMNS = ("t_us", "X", "Y", "s0", "s1", "s2", "dolp", "aop_deg", "method", "flags")
EVENT_CSV_COLUMNS = ("t_us", "x", "y", "polarity")
METHOD_NAMES = {METHOD_FRAMES: "frames", METHOD_EVENTS: "events", METHOD_CF: "cf"}


def _num(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _flags(unpolarized: bool, saturated: bool) -> str:
    names = []
    if unpolarized:
        names.append("unpolarized")
    if saturated:
        names.append("saturated")
    return "|".join(names)


def sample_row(sample: Mapping) -> list:
    """One CSV row from a mapping with t_us, X, Y and s0..s2 and/or dolp / aop (radians)."""
    s0 = sample.get("s0")
    s1 = sample.get("s1")
    s2 = sample.get("s2")
    dolp = sample.get("dolp")
    aop = sample.get("aop")
    if s0 is not None and s1 is not None and s2 is not None:
        s0, s1, s2 = float(s0), float(s1), float(s2)
        lin = math.hypot(s1, s2)
        if dolp is None:
            dolp = lin / s0 if s0 > 0 else None
        if aop is None:
            aop = 0.5 * math.atan2(s2, s1) if lin > 0 and s0 > 0 else None
    if aop is not None and not math.isfinite(float(aop)):
        aop = None
    aop_deg = None if aop is None else math.degrees(float(aop)) % 180.0
    method = sample.get("method", "")
    if isinstance(method, (int, np.integer)):
        method = METHOD_NAMES.get(int(method), str(method))
    unpol = bool(sample.get("unpolarized", False)) or aop is None
    return [str(int(sample["t_us"])), str(int(sample["X"])), str(int(sample["Y"])), _num(s0), _num(s1), _num(s2),
            _num(dolp), _num(aop_deg), method, _flags(unpol, bool(sample.get("saturated", False)))]


def grid_samples(grid, method: str | None = None, roi=None):
    """Mappings for every macropixel of a StokesGrid (optionally an X/Y box ``(X0, Y0, X1, Y1)``)."""
    h, w = grid.s0.shape
    X0, Y0, X1, Y1 = roi or (0, 0, w, h)
    sat = grid.saturated if grid.saturated is not None else np.zeros((h, w), bool)
    for Y in range(Y0, Y1):
        for X in range(X0, X1):
            yield {"t_us": grid.t_us, "X": X, "Y": Y, "s0": grid.s0[Y, X], "s1": grid.s1[Y, X],
                   "s2": grid.s2[Y, X], "method": method or grid.method, "saturated": bool(sat[Y, X])}


def polevent_samples(records):
    """Mappings for POLEVENT_DTYPE records (no Stokes columns)."""
    for r in records:
        f = int(r["flags"])
        aop = float(r["aop"])
        dolp = float(r["dolp"])
        yield {"t_us": int(r["t"]), "X": int(r["X"]), "Y": int(r["Y"]),
               "aop": aop if math.isfinite(aop) else None, "dolp": dolp if math.isfinite(dolp) else None,
               "method": int(r["method"]), "unpolarized": bool(f & FLAG_UNPOLARIZED),
               "saturated": bool(f & FLAG_SATURATED)}


def export_csv(samples: Iterable[Mapping], path) -> int:
    """Write samples to ``path`` (or an open text file); returns the number of data rows."""
    own = isinstance(path, (str, bytes)) or hasattr(path, "__fspath__")
    f = open(path, "w", newline="") if own else path
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        n = 0
        for s in samples:
            w.writerow(sample_row(s))
            n += 1
        return n
    finally:
        if own:
            f.close()


def export_events_csv(chunks, path) -> int:
    """Raw events (EVENT_DTYPE arrays, e.g. from iter_events) as ``t_us,x,y,polarity`` rows."""
    n = 0
    with open(path, "w", newline="") as f:
        f.write(",".join(EVENT_CSV_COLUMNS) + "\n")
        for ch in chunks:
            if len(ch) == 0:
                continue
            block = np.column_stack([ch["t"].astype(np.int64), ch["x"], ch["y"], ch["p"]])
            np.savetxt(f, block, fmt="%d", delimiter=",")
            n += len(ch)
    return n


def read_csv(path) -> list:
    """Rows of an exported sample CSV as dicts of strings (for inspection and tests)."""
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


__all__ = ["CSV_COLUMNS", "EVENT_CSV_COLUMNS", "export_csv", "export_events_csv", "grid_samples",
           "polevent_samples", "read_csv", "sample_row"]
