"""File formats, CSV export and run configuration."""

from .binary import (EVENT_MAGIC, FRAME_MAGIC, HEADER_SIZE, POL_MAGIC, EventFileHeader, EventReader, EventWriter,
                     FrameFileHeader, PolEventReader, PolEventWriter, iter_events, iter_frames, read_events,
                     read_frames, read_polevents, sniff, write_events, write_frames, write_polevents)
from .config import SCHEMA, RunConfig, describe_keys, keys_for
from .csvio import CSV_COLUMNS, export_csv, export_events_csv, grid_samples, polevent_samples, read_csv, sample_row

__all__ = ["CSV_COLUMNS", "EVENT_MAGIC", "FRAME_MAGIC", "HEADER_SIZE", "POL_MAGIC", "SCHEMA", "EventFileHeader",
           "EventReader", "EventWriter", "FrameFileHeader", "PolEventReader", "PolEventWriter", "RunConfig",
           "describe_keys", "export_csv", "export_events_csv", "grid_samples", "iter_events", "iter_frames",
           "keys_for", "polevent_samples", "read_csv", "read_events", "read_frames", "read_polevents", "sample_row",
           "sniff", "write_events", "write_frames", "write_polevents"]
