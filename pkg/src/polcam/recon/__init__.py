"""Reconstruction engines: frame Stokes, events-only highpass, and the frame/event complementary filter."""

from .cf import ApsLogSample, CfParams, CfState, ComplementaryFilter, aps_weight, cf_reconstruct, cf_update
from .events import (
    FLAG_SATURATED,
    FLAG_UNPOLARIZED,
    METHOD_CF,
    METHOD_EVENTS,
    METHOD_FRAMES,
    POLEVENT_DTYPE,
    EventsFilter,
    EventsFilterState,
    events_aop,
    events_update,
)
from .frames import StokesGrid, channel_planes, frames_reconstruct

__all__ = [
    "ApsLogSample", "CfParams", "CfState", "ComplementaryFilter", "aps_weight", "cf_reconstruct", "cf_update",
    "FLAG_SATURATED", "FLAG_UNPOLARIZED", "METHOD_CF", "METHOD_EVENTS", "METHOD_FRAMES", "POLEVENT_DTYPE",
    "EventsFilter", "EventsFilterState", "events_aop", "events_update", "StokesGrid", "channel_planes",
    "frames_reconstruct",
]
