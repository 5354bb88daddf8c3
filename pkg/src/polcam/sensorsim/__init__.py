"""Sensor simulation: stimuli, mosaic geometry, DVS events and APS frames."""

from .aps import ApsFrame, ApsParams, simulate_aps
from .dvs import EVENT_DTYPE, OFF, ON, DvsEvent, DvsPixelParams, DvsSensor, FunctionStimulus, make_events, simulate_dvs
from .geometry import MOSAICS, SensorGeometry
from .stimulus import (
    STIMULUS_KINDS,
    HdrFan,
    PiecewiseConstantField,
    PolarizerPlusQwp,
    Region,
    RotatingPolarizer,
    eval_stimulus,
)

__all__ = [
    "ApsFrame", "ApsParams", "simulate_aps", "EVENT_DTYPE", "ON", "OFF", "DvsEvent", "DvsPixelParams",
    "DvsSensor", "FunctionStimulus", "make_events", "simulate_dvs", "MOSAICS", "SensorGeometry",
    "STIMULUS_KINDS", "HdrFan", "PiecewiseConstantField", "PolarizerPlusQwp", "Region", "RotatingPolarizer",
    "eval_stimulus",
]
