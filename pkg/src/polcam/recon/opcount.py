"""Arithmetic operation counting for the per-event / per-pixel kernels.

The scalar kernels are numba functions; their ``py_func`` is the same code
as plain Python. Running it on :class:`CountingFloat` values counts every
arithmetic operation, comparison and elementary function call that the
compiled inner loop performs for one update. numpy ufuncs such as
``np.exp`` dispatch to the matching method on object operands.
"""

from __future__ import annotations

import math
from collections import Counter


class OpCounter:
    def __init__(self):
        self.counts = Counter()

    @property
    def total(self) -> int:
        return sum(self.counts.values())


class CountingFloat:
    __slots__ = ("v", "c")

    def __init__(self, v, counter: OpCounter):
        self.v = float(v)
        self.c = counter

    def _wrap(self, v, op):
        self.c.counts[op] += 1
        return CountingFloat(v, self.c)

    @staticmethod
    def _val(o):
        return o.v if isinstance(o, CountingFloat) else float(o)

    def __add__(self, o):
        return self._wrap(self.v + self._val(o), "add")

    __radd__ = __add__

    def __sub__(self, o):
        return self._wrap(self.v - self._val(o), "sub")

    def __rsub__(self, o):
        return self._wrap(self._val(o) - self.v, "sub")

    def __mul__(self, o):
        return self._wrap(self.v * self._val(o), "mul")

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self._wrap(self.v / self._val(o), "div")

    def __rtruediv__(self, o):
        return self._wrap(self._val(o) / self.v, "div")

    def __neg__(self):
        return self._wrap(-self.v, "neg")

    def _cmp(self, o, f):
        self.c.counts["cmp"] += 1
        return f(self.v, self._val(o))

    def __lt__(self, o):
        return self._cmp(o, lambda a, b: a < b)

    def __le__(self, o):
        return self._cmp(o, lambda a, b: a <= b)

    def __gt__(self, o):
        return self._cmp(o, lambda a, b: a > b)

    def __ge__(self, o):
        return self._cmp(o, lambda a, b: a >= b)

    # numpy ufunc dispatch on object arrays / scalars
    def exp(self):
        return self._wrap(math.exp(self.v), "exp")

    def sqrt(self):
        return self._wrap(math.sqrt(self.v), "sqrt")

    def log(self):
        return self._wrap(math.log(self.v), "log")

    def arctan2(self, o):
        return self._wrap(math.atan2(self.v, self._val(o)), "atan2")

    def __float__(self):
        return self.v


def _count(fn, *args):
    ctr = OpCounter()
    wrapped = [CountingFloat(a, ctr) for a in args]
    fn(*wrapped)
    return ctr


def events_ops_per_event() -> dict:
    """Ops for one events-method polarization event.

    Own-subpixel update, decay of the other three macropixel subpixels to
    the event time, and the AoP. Neighbour fan-out repeats the own-subpixel
    update once per neighbour and is reported separately.
    """
    from .events import aop_from_dl, decay_add, decay_to

    upd = _count(decay_add.py_func, 0.3, 100.0, 250.0, 0.14, 1e-6)
    dec = _count(decay_to.py_func, 0.2, 90.0, 250.0, 1e-6)
    aop = _count(aop_from_dl.py_func, 0.1, -0.05, -0.02, 0.07)
    per_event = upd.total + 3 * dec.total + aop.total
    return {"per_event": per_event, "update": upd.total, "decay": dec.total, "aop": aop.total,
            "per_neighbor": upd.total}


def frames_ops_per_macropixel() -> dict:
    from .frames import frames_stokes_px

    c = _count(frames_stokes_px.py_func, 300.0, 100.0, 100.0, 200.0, 0.0)  # s2 < 0 takes the wrap branch
    return {"per_macropixel": c.total, "breakdown": dict(c.counts)}


def cf_ops_per_update() -> dict:
    from .cf import cf_decay_px, cf_event_px

    ev = _count(cf_event_px.py_func, 1.0, 0.9, 100.0, 250.0, 1e-6, 0.14)
    fr = _count(cf_decay_px.py_func, 1.0, 0.9, 100.0, 250.0, 1e-6)
    return {"event_update": ev.total, "frame_update": fr.total, "per_update": max(ev.total, fr.total)}


# reference per-update budgets and the allowed slack factor
REFERENCE_OPS = {"events": 12, "frames": 8, "cf": 14}
SLACK = 2.0


def op_report() -> dict:
    e = events_ops_per_event()
    f = frames_ops_per_macropixel()
    c = cf_ops_per_update()
    measured = {"events": e["per_event"], "frames": f["per_macropixel"], "cf": c["per_update"]}
    return {
        "measured": measured,
        "reference": dict(REFERENCE_OPS),
        "within_budget": {k: measured[k] <= SLACK * REFERENCE_OPS[k] for k in measured},
        "details": {"events": e, "frames": f, "cf": c},
    }


__all__ = ["CountingFloat", "OpCounter", "events_ops_per_event", "frames_ops_per_macropixel", "cf_ops_per_update",
           "op_report"]
