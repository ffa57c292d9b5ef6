"""Append-only segmented raw log.

Every ingested record is persisted byte-identical, in offset order, and is
visible to scans the moment ``ingest`` returns. Offsets are dense (0, 1, 2,
...), which makes them the coverage domain for everything built downstream:
intervals over offsets are exact, gap-free and immune to clock skew.

Segments hold a bounded run of records. Sealed segments are immutable; the
single unsealed tail accepts the writer plus readers up to the published
hi-watermark. On-disk layout (when a directory is configured) is one
``segment-<lo>-<hi>.log`` file per sealed segment -- length-prefixed records
followed by a JSON footer -- plus a ``log.manifest`` naming them.
"""

from __future__ import annotations

import json
import struct
import threading
import time
from array import array
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from .fields import probe_timestamp

_REC_HEADER = struct.Struct("<Iq")  # payload length, event_ts ms
_FOOTER_MAGIC = b"SEGF"


class StorageFullError(RuntimeError):
    """Raised to the ingest caller when the log cannot accept more records."""


@dataclass(frozen=True)
class RawEvent:
    offset: int
    ingest_ts: int
    event_ts: int
    payload: bytes


class _Segment:
    """One run of records. Mutable while it is the active tail, frozen after seal."""

    __slots__ = ("lo", "starts", "ts", "buf", "sealed", "min_ts", "max_ts", "ingest_ts")

    def __init__(self, lo: int):
        self.lo = lo
        self.starts = array("Q", [0])
        self.ts = array("q")
        self.ingest_ts = array("q")
        self.buf = bytearray()
        self.sealed = False
        self.min_ts: int | None = None
        self.max_ts: int | None = None

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def hi(self) -> int:
        return self.lo + len(self.ts)

    def append(self, payload: bytes, event_ts: int, ingest_ts: int) -> None:
        self.buf += payload
        self.starts.append(len(self.buf))
        self.ts.append(event_ts)
        self.ingest_ts.append(ingest_ts)
        if self.min_ts is None or event_ts < self.min_ts:
            self.min_ts = event_ts
        if self.max_ts is None or event_ts > self.max_ts:
            self.max_ts = event_ts

    def payload(self, i: int) -> bytes:
        return bytes(self.buf[self.starts[i] : self.starts[i + 1]])


@dataclass(frozen=True)
class SegmentInfo:
    lo: int
    hi: int
    sealed: bool
    min_event_ts: int | None
    max_event_ts: int | None
    location: str | None


@dataclass
class LogConfig:
    seal_record_count: int = 4096
    seal_seconds: float | None = 60.0
    timestamp_key: str = "created_at"
    disorder_bound_ms: int = 60_000
    max_records: int | None = None


class RawLog:
    """The raw copy of the stream plus subscription cursors for the DPR runtime.

    Single writer (ingest is serialized by an internal lock); any number of
    readers. Readers only look at offsets below the hi-watermark, so the
    active segment's append-only arrays are safe to read without the lock.
    """

    def __init__(self, directory: str | Path | None = None, config: LogConfig | None = None,
                 clock: Callable[[], float] = time.time):
        self.config = config or LogConfig()
        self.dir = Path(directory) if directory is not None else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()
        self._segments: list[_Segment] = [_Segment(0)]
        self._seg_los = array("Q", [0])
        self._watermark = 0  # next offset to assign; all offsets below are readable
        self._active_opened_at = clock()
        self._data_cond = threading.Condition()
        self._subs: dict[str, _Subscription] = {}

    # --- ingest path --------------------------------------------------------

    def ingest(self, payload: bytes) -> int:
        """Append one record and return its offset. Never blocks on consumers."""
        if isinstance(payload, str):
            payload = payload.encode()
        ingest_ts = int(self._clock() * 1000)
        event_ts = probe_timestamp(payload, self.config.timestamp_key)
        if event_ts is None:
            event_ts = ingest_ts
        with self._lock:
            if self.config.max_records is not None and self._watermark >= self.config.max_records:
                raise StorageFullError(f"log is at its configured cap of {self.config.max_records} records")
            offset = self._watermark
            tail = self._segments[-1]
            tail.append(payload, event_ts, ingest_ts)
            self._watermark = offset + 1
            if self._should_seal(tail):
                self._seal_locked()
        with self._data_cond:
            self._data_cond.notify_all()
        return offset

    def _should_seal(self, tail: _Segment) -> bool:
        if len(tail) >= self.config.seal_record_count:
            return True
        if self.config.seal_seconds is not None and len(tail) > 0:
            return (self._clock() - self._active_opened_at) >= self.config.seal_seconds
        return False

    def seal_active_segment(self) -> SegmentInfo | None:
        """Seal the tail and open a fresh one. No-op on an empty tail."""
        with self._lock:
            if len(self._segments[-1]) == 0:
                return None
            sealed = self._seal_locked()
        return self._info(sealed)

    def _seal_locked(self) -> _Segment:
        seg = self._segments[-1]
        seg.sealed = True
        if self.dir is not None:
            self._write_segment(seg)
        nxt = _Segment(seg.hi)
        self._segments.append(nxt)
        self._seg_los.append(nxt.lo)
        self._active_opened_at = self._clock()
        if self.dir is not None:
            self._write_manifest()
        return seg

    # --- reads ---------------------------------------------------------------

    @property
    def watermark(self) -> int:
        return self._watermark

    def __len__(self) -> int:
        return self._watermark

    def _seg_for(self, offset: int) -> _Segment:
        return self._segments[bisect_right(self._seg_los, offset) - 1]

    def event_ts(self, offset: int) -> int:
        seg = self._seg_for(offset)
        return seg.ts[offset - seg.lo]

    def get(self, offset: int) -> bytes:
        if not 0 <= offset < self._watermark:
            raise IndexError(offset)
        seg = self._seg_for(offset)
        return seg.payload(offset - seg.lo)

    def segment_lo(self, offset: int) -> int:
        return self._seg_for(offset).lo

    def segments(self) -> list[SegmentInfo]:
        return [self._info(s) for s in self._segments]

    def _info(self, seg: _Segment) -> SegmentInfo:
        location = None
        if self.dir is not None and seg.sealed:
            location = str(self.dir / f"segment-{seg.lo}-{seg.hi}.log")
        return SegmentInfo(seg.lo, seg.hi, seg.sealed, seg.min_ts, seg.max_ts, location)

    def iter_records(self, lo: int, hi: int) -> Iterator[tuple[int, int, bytes]]:
        """Yield ``(offset, event_ts, payload)`` for offsets in ``[lo, hi)``, in order."""
        lo = max(lo, 0)
        hi = min(hi, self._watermark)
        if hi <= lo:
            return
        si = bisect_right(self._seg_los, lo) - 1
        off = lo
        while off < hi:
            seg = self._segments[si]
            i = off - seg.lo
            end = min(hi - seg.lo, len(seg))
            starts, ts, buf = seg.starts, seg.ts, seg.buf
            while i < end:
                yield seg.lo + i, ts[i], bytes(buf[starts[i] : starts[i + 1]])
                i += 1
            off = seg.lo + end
            si += 1

    def scan(self, offset_range: tuple[int, int] | None = None,
             window: tuple[int, int] | None = None,
             residual: Callable[[RawEvent], bool] | None = None) -> Iterator[RawEvent]:
        """Stream events by offset interval or event-time window, in offset order.

        Event-time windows are exact: candidate segments are found through
        their sealed min/max bounds and then record-filtered, so disorder up
        to the configured bound never loses or duplicates records.
        """
        if offset_range is not None and window is not None:
            raise ValueError("pass either offset_range or window, not both")
        if window is not None:
            lo, hi = self.window_extent(window)
        elif offset_range is not None:
            lo, hi = offset_range
        else:
            lo, hi = 0, self._watermark
        for offset, ts, payload in self.iter_records(lo, hi):
            if window is not None and not (window[0] <= ts < window[1]):
                continue
            seg = self._seg_for(offset)
            ev = RawEvent(offset, seg.ingest_ts[offset - seg.lo], ts, payload)
            if residual is not None and not residual(ev):
                continue
            yield ev

    def window_extent(self, window: tuple[int, int]) -> tuple[int, int]:
        """Smallest offset interval containing every record whose event_ts is in the window."""
        w_lo, w_hi = window
        lo = hi = None
        watermark = self._watermark
        for seg in self._segments:
            n = min(len(seg), watermark - seg.lo)
            if n <= 0:
                continue
            if seg.min_ts is None or seg.max_ts is None:
                continue
            if seg.min_ts < w_hi and seg.max_ts >= w_lo:
                if lo is None:
                    lo = seg.lo
                hi = seg.lo + n
        if lo is None:
            return (0, 0)
        return (lo, min(hi, watermark))

    def latest_event_ts(self) -> int | None:
        if self._watermark == 0:
            return None
        return self.event_ts(self._watermark - 1)

    def time_bounds(self, lo: int, hi: int) -> tuple[int, int] | None:
        """Min/max event_ts over the records in ``[lo, hi)``, from segment stats where possible."""
        lo = max(lo, 0)
        hi = min(hi, self._watermark)
        if hi <= lo:
            return None
        mn: int | None = None
        mx: int | None = None
        si = bisect_right(self._seg_los, lo) - 1
        off = lo
        while off < hi:
            seg = self._segments[si]
            if seg.lo >= lo and min(seg.hi, self._watermark) <= hi and seg.sealed:
                s_mn, s_mx = seg.min_ts, seg.max_ts
            else:
                i0 = max(lo - seg.lo, 0)
                i1 = min(hi - seg.lo, len(seg))
                chunk = seg.ts[i0:i1]
                if not chunk:
                    break
                s_mn, s_mx = min(chunk), max(chunk)
            if s_mn is not None:
                mn = s_mn if mn is None else min(mn, s_mn)
                mx = s_mx if mx is None else max(mx, s_mx)
            off = min(seg.hi, hi)
            si += 1
            if si >= len(self._segments):
                break
        if mn is None or mx is None:
            return None
        return (mn, mx)

    # --- subscriptions --------------------------------------------------------
    #
    # Consumers pull at their own pace against a cursor; the log itself is the
    # buffer, so a lagging consumer never applies back-pressure to ingest.

    def subscribe(self, consumer_id: str, from_offset: int | None = None) -> "_Subscription":
        with self._lock:
            if consumer_id in self._subs:
                raise ValueError(f"consumer already subscribed: {consumer_id}")
            start = self._watermark if from_offset is None else from_offset
            sub = _Subscription(self, consumer_id, start)
            self._subs[consumer_id] = sub
            return sub

    def wait_for_data(self, after_offset: int, timeout: float | None = None) -> bool:
        with self._data_cond:
            if self._watermark > after_offset:
                return True
            self._data_cond.wait(timeout)
            return self._watermark > after_offset

    def notify(self) -> None:
        """Wake pollers blocked in ``wait_for_data`` (used by control-plane enqueues)."""
        with self._data_cond:
            self._data_cond.notify_all()

    # --- persistence -----------------------------------------------------------

    def _write_segment(self, seg: _Segment) -> None:
        path = self.dir / f"segment-{seg.lo}-{seg.hi}.log"
        with open(path, "wb") as fh:
            for i in range(len(seg)):
                p = seg.buf[seg.starts[i] : seg.starts[i + 1]]
                fh.write(_REC_HEADER.pack(len(p), seg.ts[i]))
                fh.write(p)
            footer = json.dumps({
                "lo": seg.lo, "hi": seg.hi, "count": len(seg),
                "min_event_ts": seg.min_ts, "max_event_ts": seg.max_ts,
            }).encode()
            fh.write(footer)
            fh.write(struct.pack("<I", len(footer)))
            fh.write(_FOOTER_MAGIC)

    def _write_manifest(self) -> None:
        manifest = {
            "segments": [
                {"lo": s.lo, "hi": s.hi, "file": f"segment-{s.lo}-{s.hi}.log"}
                for s in self._segments if s.sealed
            ],
        }
        tmp = self.dir / "log.manifest.tmp"
        tmp.write_text(json.dumps(manifest, indent=1))
        tmp.replace(self.dir / "log.manifest")

    def close(self) -> None:
        """Seal the tail (if non-empty) and flush the manifest."""
        if self.dir is None:
            return
        self.seal_active_segment()
        with self._lock:
            self._write_manifest()

    @classmethod
    def open(cls, directory: str | Path, config: LogConfig | None = None) -> "RawLog":
        """Reload a log previously written by ``close``."""
        directory = Path(directory)
        log = cls(directory=None, config=config)
        log.dir = directory
        manifest = json.loads((directory / "log.manifest").read_text())
        segments: list[_Segment] = []
        for entry in manifest["segments"]:
            seg = _Segment(entry["lo"])
            with open(directory / entry["file"], "rb") as fh:
                data = fh.read()
            if data[-4:] != _FOOTER_MAGIC:
                raise ValueError(f"corrupt segment file: {entry['file']}")
            pos = 0
            footer_len = struct.unpack("<I", data[-8:-4])[0]
            body_end = len(data) - 8 - footer_len
            now_ms = int(time.time() * 1000)
            while pos < body_end:
                length, ts = _REC_HEADER.unpack_from(data, pos)
                pos += _REC_HEADER.size
                seg.append(data[pos : pos + length], ts, now_ms)
                pos += length
            seg.sealed = True
            segments.append(seg)
        if segments:
            log._segments = segments
            tail = _Segment(segments[-1].hi)
            log._segments.append(tail)
            log._seg_los = array("Q", [s.lo for s in log._segments])
            log._watermark = segments[-1].hi
        return log


class _Subscription:
    """Pull-based delivery handle: every record from the start offset, in order, once."""

    def __init__(self, log: RawLog, consumer_id: str, start: int):
        self.log = log
        self.consumer_id = consumer_id
        self.start_offset = start
        self.cursor = start
        self.final_offset: int | None = None

    def poll(self, max_records: int = 1024) -> list[tuple[int, int, bytes]]:
        if self.final_offset is not None:
            return []
        hi = min(self.cursor + max_records, self.log.watermark)
        batch = list(self.log.iter_records(self.cursor, hi))
        self.cursor = hi if hi > self.cursor else self.cursor
        return batch

    def cancel(self) -> int:
        if self.final_offset is None:
            self.final_offset = self.cursor
            self.log._subs.pop(self.consumer_id, None)
        return self.final_offset
