"""Little-endian binary containers for events, APS frames and polarization events.

Event file layout::

    header (22 bytes)  magic "PDEVT\\0\\0\\1" | width u16 | height u16 | mosaic u8 | flags u8 | count u64
    records (16 bytes) t_us u64 | x u16 | y u16 | polarity u8 | 3 reserved zero bytes

Polarization-event files share the header layout (magic "PDPOL\\0\\0\\1",
width/height are the subpixel sensor size) and store 24-byte POLEVENT_DTYPE
records. Frame files ("PDFRM\\0\\0\\1") carry a 26-byte header
(..., adc_bits in place of flags, frame count, dark offset u16, reserved
u16), then per frame t_start u64, t_end u64 and height*width u16 samples.

Writers patch the count on close. Readers stream in chunks and validate as
they go, so memory stays bounded by the chunk size.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import (BadMagicError, CorruptRecordError, CountMismatchError, FileFormatError, OutOfBoundsError,
                      TruncatedFileError, UnsortedEventsError)
from ..recon.events import POLEVENT_DTYPE
from ..sensorsim.aps import ApsFrame
from ..sensorsim.dvs import EVENT_DTYPE

EVENT_MAGIC = b"PDEVT\0\0\1"
FRAME_MAGIC = b"PDFRM\0\0\1"
POL_MAGIC = b"PDPOL\0\0\1"

_HEAD = struct.Struct("<8sHHBBQ")
_FRAME_HEAD = struct.Struct("<8sHHBBQHH")
_FRAME_REC = struct.Struct("<QQ")
HEADER_SIZE = _HEAD.size  # 22
FRAME_HEADER_SIZE = _FRAME_HEAD.size  # 26
EVENT_RECORD_SIZE = EVENT_DTYPE.itemsize  # 16
POL_RECORD_SIZE = POLEVENT_DTYPE.itemsize  # 24
_COUNT_OFFSET = 14
DEFAULT_CHUNK = 1 << 18

assert HEADER_SIZE == 22 and EVENT_RECORD_SIZE == 16 and FRAME_HEADER_SIZE == 26


@dataclass(frozen=True)
class EventFileHeader:
    width: int
    height: int
    mosaic_code: int = 0
    flags: int = 0
    event_count: int = 0

    def pack(self, magic: bytes = EVENT_MAGIC) -> bytes:
        return _HEAD.pack(magic, self.width, self.height, self.mosaic_code, self.flags, self.event_count)

    @classmethod
    def for_geometry(cls, geom, flags: int = 0) -> "EventFileHeader":
        return cls(geom.width, geom.height, geom.mosaic_code, flags)


@dataclass(frozen=True)
class FrameFileHeader:
    width: int
    height: int
    mosaic_code: int = 0
    adc_bits: int = 10
    frame_count: int = 0
    dark_offset_dn: int = 0

    @property
    def max_dn(self) -> int:
        return (1 << self.adc_bits) - 1

    def pack(self) -> bytes:
        return _FRAME_HEAD.pack(FRAME_MAGIC, self.width, self.height, self.mosaic_code, self.adc_bits,
                                self.frame_count, self.dark_offset_dn, 0)


# -- shared record-stream plumbing -----------------------------------------


def _check_magic(raw: bytes, magic: bytes, header_size: int, path) -> None:
    if raw[:8] != magic and not (len(raw) < 8 and magic.startswith(raw)):
        raise BadMagicError(f"{path}: not a {magic[:5].decode()} file (bad magic {raw[:8]!r})")
    if len(raw) < header_size:
        raise TruncatedFileError(f"{path}: header truncated at byte offset {len(raw)}", len(raw))


def _read_header(f, magic: bytes, path) -> EventFileHeader:
    raw = f.read(HEADER_SIZE)
    _check_magic(raw, magic, HEADER_SIZE, path)
    _, w, h, mosaic, flags, count = _HEAD.unpack(raw)
    return EventFileHeader(w, h, mosaic, flags, count)


def _body_records(path, f, header_size: int, rec_size: int, declared: int) -> int:
    size = os.fstat(f.fileno()).st_size
    body = size - header_size
    full, part = divmod(body, rec_size)
    if part:
        off = header_size + full * rec_size
        raise TruncatedFileError(f"{path}: truncated record at byte offset {off} ({part} of {rec_size} bytes)",
                                 off)
    if full != declared:
        raise CountMismatchError(f"{path}: header declares {declared} records, body holds {full}")
    return full


class _RecordWriter:
    magic: bytes
    dtype: np.dtype

    def __init__(self, path, header: EventFileHeader):
        self.path = path
        self.header = header
        self.count = 0
        self._last_t = -1
        self._f = open(path, "wb")
        self._f.write(header.pack(self.magic))

    def _check(self, rec) -> None:
        raise NotImplementedError

    def write(self, records) -> int:
        rec = np.ascontiguousarray(records, dtype=self.dtype)
        if len(rec) == 0:
            return 0
        t = rec["t"]
        if t[0] < self._last_t or np.any(t[1:] < t[:-1]):
            k = 0 if t[0] < self._last_t else int(np.argmax(t[1:] < t[:-1])) + 1
            raise UnsortedEventsError(f"record {self.count + k} is out of time order")
        self._check(rec)
        rec = rec.copy()
        rec["_reserved"] = b""
        self._f.write(rec.tobytes())
        self._last_t = int(t[-1])
        self.count += len(rec)
        return len(rec) * self.dtype.itemsize

    def close(self) -> int:
        if self._f.closed:
            return self.bytes_written
        self._f.seek(_COUNT_OFFSET)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()
        return self.bytes_written

    @property
    def bytes_written(self) -> int:
        return HEADER_SIZE + self.count * self.dtype.itemsize

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _RecordReader:
    magic: bytes
    dtype: np.dtype

    def __init__(self, path, chunk_records: int = DEFAULT_CHUNK):
        self.path = path
        self.chunk = int(chunk_records)
        with open(path, "rb") as f:
            self.header = _read_header(f, self.magic, path)
            self.count = _body_records(path, f, HEADER_SIZE, self.dtype.itemsize, self.header.event_count)

    def _check(self, rec, base: int) -> None:
        raise NotImplementedError

    @staticmethod
    def _reserved_nonzero(rec) -> np.ndarray:
        off = rec.dtype.fields["_reserved"][1]
        n = rec.dtype.fields["_reserved"][0].itemsize
        raw = rec.view(np.uint8).reshape(len(rec), rec.dtype.itemsize)[:, off : off + n]
        return raw.any(axis=1)

    def __iter__(self):
        last = -1
        done = 0
        with open(self.path, "rb") as f:
            f.seek(HEADER_SIZE)
            while done < self.count:
                n = min(self.chunk, self.count - done)
                buf = f.read(n * self.dtype.itemsize)
                if len(buf) < n * self.dtype.itemsize:  # file shrank under us
                    off = HEADER_SIZE + done * self.dtype.itemsize + len(buf)
                    raise TruncatedFileError(f"{self.path}: unexpected end of file at byte offset {off}", off)
                rec = np.frombuffer(buf, dtype=self.dtype)
                t = rec["t"]
                bad = np.flatnonzero(np.diff(t.astype(np.int64)) < 0)
                if (len(t) and int(t[0]) < last) or len(bad):
                    k = 0 if int(t[0]) < last else int(bad[0]) + 1
                    raise UnsortedEventsError(f"{self.path}: record {done + k} is out of time order")
                nz = self._reserved_nonzero(rec)
                if nz.any():
                    k = int(np.argmax(nz))
                    raise CorruptRecordError(f"{self.path}: record {done + k} has nonzero reserved bytes")
                self._check(rec, done)
                last = int(t[-1])
                done += n
                yield rec

    def read_all(self) -> np.ndarray:
        parts = list(self)
        return np.concatenate(parts) if parts else np.zeros(0, self.dtype)


# -- events ----------------------------------------------------------------


class EventWriter(_RecordWriter):
    """Streaming event-file writer; use as a context manager."""

    magic = EVENT_MAGIC
    dtype = EVENT_DTYPE

    def _check(self, rec) -> None:
        h = self.header
        bad = (rec["x"] >= h.width) | (rec["y"] >= h.height)
        if bad.any():
            k = int(np.argmax(bad))
            raise OutOfBoundsError(f"record {self.count + k} at ({rec['x'][k]}, {rec['y'][k]}) is outside "
                                   f"{h.width}x{h.height}")
        if np.any(rec["p"] > 1):
            raise CorruptRecordError("polarity must be 0 or 1")


class EventReader(_RecordReader):
    """Validating chunked reader; iterate for EVENT_DTYPE chunks."""

    magic = EVENT_MAGIC
    dtype = EVENT_DTYPE

    def _check(self, rec, base: int) -> None:
        h = self.header
        bad = (rec["x"] >= h.width) | (rec["y"] >= h.height)
        if bad.any():
            k = int(np.argmax(bad))
            raise OutOfBoundsError(f"{self.path}: record {base + k} at ({rec['x'][k]}, {rec['y'][k]}) is outside "
                                   f"{h.width}x{h.height}")
        if np.any(rec["p"] > 1):
            k = int(np.argmax(rec["p"] > 1))
            raise CorruptRecordError(f"{self.path}: record {base + k} has polarity {rec['p'][k]}")


def write_events(path, header: EventFileHeader, events) -> int:
    """Write a whole stream; returns the file size in bytes."""
    with EventWriter(path, header) as w:
        for start in range(0, len(events), DEFAULT_CHUNK):
            w.write(events[start : start + DEFAULT_CHUNK])
    return w.bytes_written


def read_events(path, chunk_records: int = DEFAULT_CHUNK):
    """(header, events) with full validation."""
    r = EventReader(path, chunk_records)
    return r.header, r.read_all()


def iter_events(path, chunk_records: int = DEFAULT_CHUNK):
    return iter(EventReader(path, chunk_records))


# -- polarization events ---------------------------------------------------


class PolEventWriter(_RecordWriter):
    magic = POL_MAGIC
    dtype = POLEVENT_DTYPE

    def _check(self, rec) -> None:
        h = self.header
        if np.any((rec["X"] >= h.width // 2) | (rec["Y"] >= h.height // 2)):
            raise OutOfBoundsError("polarization event outside the macropixel grid")


class PolEventReader(_RecordReader):
    magic = POL_MAGIC
    dtype = POLEVENT_DTYPE

    def _check(self, rec, base: int) -> None:
        h = self.header
        bad = (rec["X"] >= h.width // 2) | (rec["Y"] >= h.height // 2)
        if bad.any():
            raise OutOfBoundsError(f"{self.path}: record {base + int(np.argmax(bad))} is outside the macropixel grid")


def write_polevents(path, header: EventFileHeader, records) -> int:
    with PolEventWriter(path, header) as w:
        w.write(records)
    return w.bytes_written


def read_polevents(path):
    r = PolEventReader(path)
    return r.header, r.read_all()


# -- frames ----------------------------------------------------------------


def write_frames(path, header: FrameFileHeader, frames) -> int:
    """Write APS frames in time order; the frame count in ``header`` is ignored and recomputed."""
    frames = list(frames)
    n_px = header.width * header.height
    last = -1
    with open(path, "wb") as f:
        f.write(FrameFileHeader(header.width, header.height, header.mosaic_code, header.adc_bits, len(frames),
                                header.dark_offset_dn).pack())
        for i, fr in enumerate(frames):
            s = np.asarray(fr.samples)
            if s.shape != (header.height, header.width):
                raise OutOfBoundsError(f"frame {i} has shape {s.shape}, expected {(header.height, header.width)}")
            if int(fr.t_start_us) < last or fr.t_end_us < fr.t_start_us:
                raise UnsortedEventsError(f"frame {i} is out of time order")
            if s.size and int(s.max()) > header.max_dn:
                raise OutOfBoundsError(f"frame {i} holds DN above {header.max_dn}")
            last = int(fr.t_start_us)
            f.write(_FRAME_REC.pack(int(fr.t_start_us), int(fr.t_end_us)))
            f.write(s.astype("<u2").tobytes())
    return FRAME_HEADER_SIZE + len(frames) * (_FRAME_REC.size + 2 * n_px)


def iter_frames(path):
    """Yield ApsFrame objects one at a time after validating the file layout."""
    with open(path, "rb") as f:
        raw = f.read(FRAME_HEADER_SIZE)
        _check_magic(raw, FRAME_MAGIC, FRAME_HEADER_SIZE, path)
        _, w, h, mosaic, bits, count, dark, _ = _FRAME_HEAD.unpack(raw)
        header = FrameFileHeader(w, h, mosaic, bits, count, dark)
        rec = _FRAME_REC.size + 2 * w * h
        _body_records(path, f, FRAME_HEADER_SIZE, rec, count)
        yield header
        last = -1
        for i in range(count):
            ts, te = _FRAME_REC.unpack(f.read(_FRAME_REC.size))
            s = np.frombuffer(f.read(2 * w * h), "<u2").reshape(h, w).astype(np.uint16)
            if ts < last or te < ts:
                raise UnsortedEventsError(f"{path}: frame {i} is out of time order")
            if s.size and int(s.max()) > header.max_dn:
                raise OutOfBoundsError(f"{path}: frame {i} holds DN above {header.max_dn}")
            last = ts
            yield ApsFrame(ts, te, s, header.max_dn, dark)


def read_frames(path):
    it = iter_frames(path)
    header = next(it)
    return header, list(it)


def sniff(path) -> str:
    """'events', 'frames' or 'polevents' from the magic; raises BadMagicError otherwise."""
    with open(path, "rb") as f:
        m = f.read(8)
    for kind, magic in (("events", EVENT_MAGIC), ("frames", FRAME_MAGIC), ("polevents", POL_MAGIC)):
        if m == magic:
            return kind
    raise BadMagicError(f"{path}: unrecognized magic {m!r}")


__all__ = ["EVENT_MAGIC", "FRAME_MAGIC", "POL_MAGIC", "HEADER_SIZE", "FRAME_HEADER_SIZE", "EventFileHeader",
           "FrameFileHeader", "EventReader", "EventWriter", "FileFormatError", "PolEventReader", "PolEventWriter",
           "iter_events", "iter_frames", "read_events", "read_frames", "read_polevents", "sniff", "write_events",
           "write_frames", "write_polevents"]
