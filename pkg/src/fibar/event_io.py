"""Bit-exact event stream I/O: the EVF1 binary container and a CSV text form.

EVF1 layout (little-endian throughout):

    header, 16 bytes:
        magic    4 bytes  ASCII "EVF1"
        width    u16
        height   u16
        reserved 8 zero bytes
    records, 8 bytes each:
        dt  u32  microseconds since the previous record (first: since 0)
        xp  u16  bit 15 = polarity (1 -> +1, 0 -> -1), bits 0..14 = x
        y   u16

CSV rows are "t_us,x,y,p" with p in {0,1} (1 -> +1, 0 -> -1); an optional
header line "t_us,x,y,p" is tolerated on read and written by default.

Readers are single-pass block iterators so streams larger than memory work.
"""

from __future__ import annotations

import io
import os
from typing import IO, Iterable, Iterator

import numpy as np

from .core import Event, EventArray, SensorGeometry
from .errors import DataError, FormatError, OrderError, RangeError, TruncationError

MAGIC = b"EVF1"
HEADER_BYTES = 16
RECORD_BYTES = 8
CSV_HEADER = "t_us,x,y,p"
MAX_X = 0x7FFF  # x occupies 15 bits of the xp field

_RECORD_DTYPE = np.dtype([("dt", "<u4"), ("xp", "<u2"), ("y", "<u2")])


def _open(source, mode: str):
    if isinstance(source, (str, os.PathLike)):
        return open(source, mode), True
    return source, False


def read_header(fh: IO[bytes]) -> SensorGeometry:
    raw = fh.read(HEADER_BYTES)
    if len(raw) < HEADER_BYTES:
        raise TruncationError("incomplete header", len(raw))
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    width = int.from_bytes(raw[4:6], "little")
    height = int.from_bytes(raw[6:8], "little")
    if raw[8:16] != b"\x00" * 8:
        raise FormatError("reserved header bytes must be zero")
    return SensorGeometry(width, height)


def _decode_block(raw: bytes, geometry: SensorGeometry, t_base: int, rec_base: int, byte_base: int) -> EventArray:
    if len(raw) % RECORD_BYTES:
        raise TruncationError("stream ends mid-record", byte_base + len(raw) - len(raw) % RECORD_BYTES)
    rec = np.frombuffer(raw, dtype=_RECORD_DTYPE)
    x = (rec["xp"] & MAX_X).astype(np.uint16)
    y = rec["y"]
    bad = np.nonzero((x >= geometry.width) | (y >= geometry.height))[0]
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"record {rec_base + i}: pixel ({int(x[i])},{int(y[i])}) outside "
            f"{geometry.width}x{geometry.height}"
        )
    t = np.cumsum(rec["dt"], dtype=np.uint64)
    t += np.uint64(t_base)
    p = np.where(rec["xp"] >> 15, 1, -1).astype(np.int8)
    return EventArray(t, x, np.ascontiguousarray(y), p)


def read_blocks(source, block_events: int = 1 << 16) -> tuple[SensorGeometry, Iterator[EventArray]]:
    """Open an EVF1 stream and return its geometry plus a single-pass block iterator."""
    fh, owned = _open(source, "rb")
    geometry = read_header(fh)

    def blocks() -> Iterator[EventArray]:
        t_base = 0
        rec_base = 0
        byte_base = HEADER_BYTES
        try:
            while True:
                raw = fh.read(block_events * RECORD_BYTES)
                if not raw:
                    break
                block = _decode_block(raw, geometry, t_base, rec_base, byte_base)
                if len(block):
                    t_base = int(block.t[-1])
                rec_base += len(block)
                byte_base += len(raw)
                yield block
        finally:
            if owned:
                fh.close()

    return geometry, blocks()


def read_stream(source) -> tuple[SensorGeometry, EventArray]:
    """Read a whole EVF1 stream into memory."""
    geometry, blocks = read_blocks(source)
    return geometry, EventArray.concatenate(blocks)


def iter_events(source) -> tuple[SensorGeometry, Iterator[Event]]:
    """Event-at-a-time view of an EVF1 stream (convenience; block API is the hot path)."""
    geometry, blocks = read_blocks(source)

    def gen() -> Iterator[Event]:
        for block in blocks:
            yield from block

    return geometry, gen()


def _coerce_blocks(events) -> Iterable[EventArray]:
    if isinstance(events, EventArray):
        return [events]
    if hasattr(events, "__iter__"):
        events = iter(events)
        first = next(events, None)
        if first is None:
            return []
        if isinstance(first, EventArray):
            def chain():
                yield first
                yield from events
            return chain()
        def rows():
            yield first
            yield from events
        return [EventArray.from_events(rows())]
    raise TypeError(f"cannot write events of type {type(events)!r}")


def write_stream(geometry: SensorGeometry, events, sink) -> int:
    """Write events (EventArray, block iterator, or Event iterable) as EVF1.

    Events must be time-ordered with inter-event gaps below 2^32 microseconds.
    Returns the number of records written.
    """
    if geometry.width > MAX_X + 1:
        raise RangeError(f"width {geometry.width} exceeds the 15-bit x field")
    fh, owned = _open(sink, "wb")
    try:
        fh.write(MAGIC)
        fh.write(int(geometry.width).to_bytes(2, "little"))
        fh.write(int(geometry.height).to_bytes(2, "little"))
        fh.write(b"\x00" * 8)
        count = 0
        t_prev = np.uint64(0)
        for block in _coerce_blocks(events):
            if not len(block):
                continue
            t = block.t
            if t[0] < t_prev or np.any(t[1:] < t[:-1]):
                raise OrderError("event timestamps regress")
            dt = np.empty(len(t), dtype=np.uint64)
            dt[0] = t[0] - t_prev
            np.subtract(t[1:], t[:-1], out=dt[1:])
            if np.any(dt > 0xFFFFFFFF):
                raise RangeError("inter-event gap exceeds the 32-bit dt field")
            if np.any(block.x >= geometry.width) or np.any(block.y >= geometry.height):
                raise DataError("event outside declared geometry")
            rec = np.empty(len(t), dtype=_RECORD_DTYPE)
            rec["dt"] = dt
            rec["xp"] = block.x.astype(np.uint16) | (np.where(block.p > 0, 0x8000, 0).astype(np.uint16))
            rec["y"] = block.y
            fh.write(rec.tobytes())
            t_prev = t[-1]
            count += len(t)
        return count
    finally:
        if owned:
            fh.close()


def write_csv(geometry: SensorGeometry, events, sink, header: bool = True) -> int:
    """Write events as "t_us,x,y,p" text rows; p is 1 for +1 and 0 for -1."""
    fh, owned = _open(sink, "w")
    try:
        if header:
            fh.write(CSV_HEADER + "\n")
        count = 0
        for block in _coerce_blocks(events):
            if not len(block):
                continue
            if np.any(block.x >= geometry.width) or np.any(block.y >= geometry.height):
                raise DataError("event outside declared geometry")
            pbit = (block.p > 0).astype(np.uint8)
            fh.writelines(
                f"{int(t)},{int(x)},{int(y)},{int(pb)}\n"
                for t, x, y, pb in zip(block.t, block.x, block.y, pbit)
            )
            count += len(block)
        return count
    finally:
        if owned:
            fh.close()


def read_csv(source, geometry: SensorGeometry | None = None) -> EventArray:
    """Parse a CSV event stream; malformed rows raise with their line number.

    Bounds are checked only when a geometry is supplied (the text form does
    not carry one).
    """
    fh, owned = _open(source, "r")
    try:
        text = fh.read()
    finally:
        if owned:
            fh.close()
    lines = text.splitlines()
    start = 0
    if lines and lines[0].strip().lower().replace(" ", "") == CSV_HEADER:
        start = 1
    try:
        data = np.loadtxt(io.StringIO("\n".join(lines[start:])), dtype=np.int64, delimiter=",", ndmin=2)
    except ValueError:
        for i, line in enumerate(lines[start:], start=start + 1):
            if not line.strip():
                continue
            parts = line.split(",")
            ok = len(parts) == 4
            if ok:
                try:
                    vals = [int(s) for s in parts]
                    ok = vals[0] >= 0 and vals[1] >= 0 and vals[2] >= 0 and vals[3] in (0, 1)
                except ValueError:
                    ok = False
            if not ok:
                raise FormatError(f"malformed CSV event at line {i}: {line!r}") from None
        raise
    if data.size == 0:
        return EventArray.empty()
    t, x, y, pbit = data[:, 0], data[:, 1], data[:, 2], data[:, 3]
    bad = np.nonzero((pbit != 0) & (pbit != 1))[0]
    if bad.size:
        raise FormatError(f"malformed CSV event at line {start + 1 + int(bad[0])}: p must be 0 or 1")
    if np.any(t < 0) or np.any(x < 0) or np.any(y < 0):
        raise FormatError("negative field in CSV event stream")
    if geometry is not None:
        oob = np.nonzero((x >= geometry.width) | (y >= geometry.height))[0]
        if oob.size:
            raise DataError(f"record {int(oob[0])}: pixel outside {geometry.width}x{geometry.height}")
    p = np.where(pbit > 0, 1, -1).astype(np.int8)
    return EventArray(t.astype(np.uint64), x.astype(np.uint16), y.astype(np.uint16), p)
