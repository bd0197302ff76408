"""Time-tag records and the TTAG v1 binary container.

Layout (little-endian)::

    0..3    magic  b"TTAG"
    4..5    version (u16) = 1
    6..7    reserved, zero
    8..15   record_count (u64)
    16..31  reserved, zero
    then record_count records of 16 bytes:
            t_ps (u64), channel (u16), flags (u16), 4 reserved zero bytes

Timestamps are integer picoseconds since run start.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, NamedTuple, Union

import numpy as np

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct("<4sHHQ16x")
HEADER_SIZE = HEADER.size  # 32

RECORD_DTYPE = np.dtype(
    [("t_ps", "<u8"), ("channel", "<u2"), ("flags", "<u2"), ("reserved", "V4")]
)
RECORD_SIZE = RECORD_DTYPE.itemsize  # 16

FLAG_DARK = 0x1

PathOrFile = Union[str, os.PathLike, BinaryIO]


class TagFormatError(ValueError):
    """Base class for malformed TTAG data."""


class BadMagicError(TagFormatError):
    pass


class UnsupportedVersionError(TagFormatError):
    pass


class TruncatedRecordError(TagFormatError):
    pass


class TimeTag(NamedTuple):
    t_ps: int
    channel: int
    flags: int = 0


@dataclass(frozen=True, eq=False)
class TagStream:
    """An ordered, immutable sequence of time tags held as parallel arrays."""

    t_ps: np.ndarray
    channel: np.ndarray
    flags: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.t_ps, dtype=np.uint64)
        ch = np.ascontiguousarray(self.channel, dtype=np.uint16)
        fl = np.ascontiguousarray(self.flags, dtype=np.uint16)
        if not (t.ndim == ch.ndim == fl.ndim == 1 and len(t) == len(ch) == len(fl)):
            raise ValueError("t_ps, channel and flags must be 1-d arrays of equal length")
        for a in (t, ch, fl):
            a.setflags(write=False)
        object.__setattr__(self, "t_ps", t)
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "flags", fl)

    @classmethod
    def empty(cls) -> "TagStream":
        return cls(np.empty(0, np.uint64), np.empty(0, np.uint16), np.empty(0, np.uint16))

    @classmethod
    def from_times(cls, t_ps, channel: int = 0, flags=0) -> "TagStream":
        t = np.asarray(t_ps, dtype=np.uint64)
        return cls(t, np.full(len(t), channel, np.uint16), np.broadcast_to(np.uint16(flags), t.shape))

    @classmethod
    def from_tags(cls, tags) -> "TagStream":
        tags = list(tags)
        if not tags:
            return cls.empty()
        t, ch, fl = zip(*(TimeTag(*tag) for tag in tags))
        return cls(np.array(t, np.uint64), np.array(ch, np.uint16), np.array(fl, np.uint16))

    def __len__(self) -> int:
        return len(self.t_ps)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, ch, fl in zip(self.t_ps.tolist(), self.channel.tolist(), self.flags.tolist()):
            yield TimeTag(t, ch, fl)

    def __getitem__(self, i) -> TimeTag:
        return TimeTag(int(self.t_ps[i]), int(self.channel[i]), int(self.flags[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            np.array_equal(self.t_ps, other.t_ps)
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.flags, other.flags)
        )

    def __repr__(self) -> str:
        return f"TagStream(n={len(self)}, channels={sorted(set(self.channel.tolist()))})"

    def select(self, channel: int) -> "TagStream":
        m = self.channel == channel
        return TagStream(self.t_ps[m], self.channel[m], self.flags[m])

    def is_sorted(self) -> bool:
        """True if timestamps are non-decreasing within every channel."""
        for ch in np.unique(self.channel):
            t = self.t_ps[self.channel == ch]
            if len(t) > 1 and np.any(t[1:] < t[:-1]):
                return False
        return True

    def to_records(self) -> np.ndarray:
        rec = np.zeros(len(self), dtype=RECORD_DTYPE)
        rec["t_ps"] = self.t_ps
        rec["channel"] = self.channel
        rec["flags"] = self.flags
        return rec

    @classmethod
    def from_records(cls, rec: np.ndarray) -> "TagStream":
        return cls(rec["t_ps"], rec["channel"], rec["flags"])

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_ttag(self, buf)
        return buf.getvalue()


def _open(target: PathOrFile, mode: str):
    if hasattr(target, "read") or hasattr(target, "write"):
        return target, False
    return open(target, mode), True


def write_ttag(stream: TagStream, sink: PathOrFile, chunk_records: int = 1 << 20) -> int:
    """Write ``stream`` to a path or binary file object; returns bytes written."""
    fh, owned = _open(sink, "wb")
    try:
        fh.write(HEADER.pack(MAGIC, VERSION, 0, len(stream)))
        for start in range(0, len(stream), chunk_records):
            part = TagStream(
                stream.t_ps[start : start + chunk_records],
                stream.channel[start : start + chunk_records],
                stream.flags[start : start + chunk_records],
            )
            fh.write(part.to_records().tobytes())
    finally:
        if owned:
            fh.close()
    return HEADER_SIZE + RECORD_SIZE * len(stream)


def _read_header(fh) -> int:
    raw = fh.read(HEADER_SIZE)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncatedRecordError(f"header truncated at {len(raw)} bytes")
    _, version, _, count = HEADER.unpack(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported TTAG version {version}")
    return count


def iter_ttag(source: PathOrFile, chunk_records: int = 1 << 20) -> Iterator[TagStream]:
    """Yield the records of a TTAG file in chunks of at most ``chunk_records``."""
    fh, owned = _open(source, "rb")
    try:
        remaining = _read_header(fh)
        while remaining:
            n = min(remaining, chunk_records)
            raw = fh.read(n * RECORD_SIZE)
            if len(raw) != n * RECORD_SIZE:
                got = len(raw) // RECORD_SIZE
                raise TruncatedRecordError(
                    f"expected {remaining} more records, file ends after {got}"
                )
            yield TagStream.from_records(np.frombuffer(raw, dtype=RECORD_DTYPE))
            remaining -= n
    finally:
        if owned:
            fh.close()


def read_ttag(source: PathOrFile) -> TagStream:
    """Read a whole TTAG file.  Raises a :class:`TagFormatError` subclass on bad input."""
    chunks = list(iter_ttag(source))
    if not chunks:
        return TagStream.empty()
    if len(chunks) == 1:
        return chunks[0]
    return TagStream(
        np.concatenate([c.t_ps for c in chunks]),
        np.concatenate([c.channel for c in chunks]),
        np.concatenate([c.flags for c in chunks]),
    )


def merge_sorted(*streams: TagStream) -> TagStream:
    """Merge time-sorted streams into one ordered by ``(t_ps, channel)``.

    Ties on both keys keep argument order, then input order.
    """
    for s in streams:
        if len(s) > 1 and np.any(s.t_ps[1:] < s.t_ps[:-1]):
            raise ValueError("merge_sorted inputs must be sorted by t_ps")
    if not streams:
        return TagStream.empty()
    t = np.concatenate([s.t_ps for s in streams])
    ch = np.concatenate([s.channel for s in streams])
    fl = np.concatenate([s.flags for s in streams])
    order = np.lexsort((ch, t))  # lexsort is stable
    return TagStream(t[order], ch[order], fl[order])
