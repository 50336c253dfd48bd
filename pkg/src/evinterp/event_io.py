"""Reading and writing event streams.

Binary layout (little endian): a 24 byte header ``b"EVT0"``, uint16 width,
uint16 height, float64 t_start, float64 t_end, followed by packed 13 byte
records (uint16 x, uint16 y, float64 t, int8 p). The CSV variant holds one
``x,y,t,p`` line per event after a ``#`` header line carrying the same fields.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .events import EventStream

MAGIC = b"EVT0"
HEADER = struct.Struct("<4sHHdd")
RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<f8"), ("p", "i1")])

assert HEADER.size == 24 and RECORD.itemsize == 13


class EventFileError(ValueError):
    pass


def write_events(path, stream: EventStream) -> None:
    if stream.reversed:
        raise ValueError("only forward streams are stored on disk")
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValueError("sensor too large for the uint16 coordinate fields")
    rec = np.empty(len(stream), dtype=RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, stream.width, stream.height, stream.t_start, stream.t_end))
        fh.write(rec.tobytes())


def read_events(path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise EventFileError(f"{path}: truncated header")
    magic, width, height, t_start, t_end = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EventFileError(f"{path}: bad magic {magic!r}")
    body = raw[HEADER.size:]
    if len(body) % RECORD.itemsize:
        raise EventFileError(f"{path}: trailing partial record")
    rec = np.frombuffer(body, dtype=RECORD)
    return EventStream(rec["x"].astype(np.int64), rec["y"].astype(np.int64),
                       rec["t"].astype(np.float64), rec["p"].astype(np.int8),
                       t_start, t_end, width, height)


def write_events_csv(path, stream: EventStream) -> None:
    if stream.reversed:
        raise ValueError("only forward streams are stored on disk")
    with open(path, "w") as fh:
        fh.write(f"# width={stream.width} height={stream.height} "
                 f"t_start={stream.t_start!r} t_end={stream.t_end!r}\n")
        for e in stream:
            fh.write(f"{e.x},{e.y},{e.t!r},{e.p}\n")


def read_events_csv(path) -> EventStream:
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise EventFileError(f"{path}: missing header line")
        meta = dict(kv.split("=", 1) for kv in head[1:].split())
        rows = [line.strip().split(",") for line in fh if line.strip()]
    try:
        width, height = int(meta["width"]), int(meta["height"])
        t_start, t_end = float(meta["t_start"]), float(meta["t_end"])
    except KeyError as exc:
        raise EventFileError(f"{path}: header lacks {exc}") from None
    if not rows:
        return EventStream.empty(t_start, t_end, width, height)
    cols = list(zip(*rows))
    return EventStream(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                       np.array(cols[2], dtype=np.float64), np.array(cols[3], dtype=np.int8),
                       t_start, t_end, width, height)
