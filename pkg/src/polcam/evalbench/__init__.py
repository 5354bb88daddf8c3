"""Evaluation harness: speed sweeps, DoLP error growth, HDR comparison, event statistics."""

from .hdr import HdrCell, HdrReport, HdrSpec, hdr_comparison
from .metrics import aop_mae_deg, dolp_mae, phase_offset, through_origin_r2
from .perf import Throughput, event_generation, events_filter_rate, subpixel_updates
from .stats import EventStatistics, event_statistics, histogram_mode, interevent_intervals
from .sweep import (CSV_COLUMNS, METHODS, PointTrace, SweepResult, SweepRow, SweepSpec, dolp_error_growth, run_point,
                    run_sweep, score_point)
from .transfer import TransferReport, cf_event_path_gain, cf_frame_path_gain, events_path_gain, transfer_sweep

__all__ = ["CSV_COLUMNS", "METHODS", "EventStatistics", "HdrCell", "HdrReport", "HdrSpec", "PointTrace",
           "SweepResult", "SweepRow", "SweepSpec", "Throughput", "TransferReport", "cf_event_path_gain", "cf_frame_path_gain",
           "events_path_gain", "transfer_sweep", "aop_mae_deg", "dolp_error_growth", "dolp_mae",
           "event_generation", "event_statistics", "events_filter_rate", "hdr_comparison", "histogram_mode", "interevent_intervals", "phase_offset",
           "run_point", "run_sweep", "score_point", "subpixel_updates", "through_origin_r2"]
