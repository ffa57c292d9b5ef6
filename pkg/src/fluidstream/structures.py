"""Structures built by preprocessing routines, plus the coverage algebra.

Coverage is a normalized set of half-open offset intervals. All three
structure kinds keep offsets only and defer to the raw log for payloads,
which keeps them compact and makes "which records does this reflect"
an exact interval question.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator


Interval = tuple[int, int]


@dataclass(frozen=True)
class Coverage:
    """Sorted, disjoint, non-empty half-open offset intervals."""

    intervals: tuple[Interval, ...] = ()

    @classmethod
    def of(cls, *intervals: Interval) -> "Coverage":
        return cls(normalize(intervals))

    @property
    def empty(self) -> bool:
        return not self.intervals

    def total(self) -> int:
        return sum(hi - lo for lo, hi in self.intervals)

    def contains(self, lo: int, hi: int) -> bool:
        """True when [lo, hi) is fully inside one covered interval."""
        if hi <= lo:
            return True
        for a, b in self.intervals:
            if a <= lo and hi <= b:
                return True
        return False

    def contains_offset(self, offset: int) -> bool:
        return self.contains(offset, offset + 1)

    def intersect(self, other: "Coverage") -> "Coverage":
        out: list[Interval] = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo < hi:
                out.append((lo, hi))
            if a[i][1] <= b[j][1]:
                i += 1
            else:
                j += 1
        return Coverage(tuple(out))

    def union(self, other: "Coverage") -> "Coverage":
        return Coverage(normalize(self.intervals + other.intervals))

    def subtract(self, other: "Coverage") -> "Coverage":
        out: list[Interval] = []
        for lo, hi in self.intervals:
            pieces = [(lo, hi)]
            for b_lo, b_hi in other.intervals:
                nxt: list[Interval] = []
                for p_lo, p_hi in pieces:
                    if b_hi <= p_lo or b_lo >= p_hi:
                        nxt.append((p_lo, p_hi))
                        continue
                    if p_lo < b_lo:
                        nxt.append((p_lo, b_lo))
                    if b_hi < p_hi:
                        nxt.append((b_hi, p_hi))
                pieces = nxt
                if not pieces:
                    break
            out.extend(pieces)
        return Coverage(normalize(out))

    def clip(self, lo: int, hi: int) -> "Coverage":
        return self.intersect(Coverage.of((lo, hi)))

    def to_json(self) -> list[list[int]]:
        return [[lo, hi] for lo, hi in self.intervals]


def normalize(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    """Drop empties, sort, merge overlapping or touching intervals."""
    items = sorted((lo, hi) for lo, hi in intervals if hi > lo)
    out: list[Interval] = []
    for lo, hi in items:
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return tuple(out)


# --- structure kinds ---------------------------------------------------------

HASH_INDEX = "hash_index"
PREFILTERED_LOG = "prefiltered_log"
MATERIALIZED_AGGREGATE = "materialized_aggregate"

STRUCTURE_KINDS = (HASH_INDEX, PREFILTERED_LOG, MATERIALIZED_AGGREGATE)


def _scalar(value: Any) -> bool:
    return isinstance(value, (str, int, float, bool))


class HashIndex:
    """field value -> strictly increasing posting list of offsets."""

    kind = HASH_INDEX

    def __init__(self, field_path: str):
        self.field_path = field_path
        self.postings: dict[Any, list[int]] = {}

    @property
    def params(self) -> dict:
        return {"field": self.field_path}

    def add(self, offset: int, value: Any) -> bool:
        if not _scalar(value):
            return False
        self.postings.setdefault(value, []).append(offset)
        return True

    def probe(self, value: Any, clip: Coverage) -> list[int]:
        """Offsets posted for ``value`` inside ``clip``, ascending."""
        plist = self.postings.get(value)
        if not plist:
            return []
        out: list[int] = []
        for lo, hi in clip.intervals:
            i = bisect_left(plist, lo)
            j = bisect_left(plist, hi, i)
            out.extend(plist[i:j])
        return out

    def count_in(self, value: Any, lo: int, hi: int) -> int:
        plist = self.postings.get(value)
        if not plist:
            return 0
        i = bisect_left(plist, lo)
        return bisect_left(plist, hi, i) - i

    def dump(self) -> dict:
        return {
            "kind": self.kind,
            "field": self.field_path,
            "postings": {json.dumps(k): v for k, v in sorted(self.postings.items(), key=lambda kv: json.dumps(kv[0]))},
        }


@dataclass(frozen=True)
class Predicate:
    field: str
    op: str
    value: Any

    def to_json(self) -> dict:
        return {"field": self.field, "op": self.op, "value": self.value}

    @classmethod
    def eq(cls, field: str, value: Any) -> "Predicate":
        return cls(field, "==", value)


class PreFilteredLog:
    """Offsets (plus projected fields) of covered records matching one predicate."""

    kind = PREFILTERED_LOG

    def __init__(self, predicate: Predicate, projection: tuple[str, ...]):
        self.predicate = predicate
        self.projection = tuple(projection)
        self.offsets: list[int] = []
        self.event_ts: list[int] = []
        self.rows: list[dict] = []

    @property
    def params(self) -> dict:
        return {"predicate": self.predicate.to_json(), "fields": list(self.projection)}

    def add(self, offset: int, event_ts: int, row: dict) -> None:
        self.offsets.append(offset)
        self.event_ts.append(event_ts)
        self.rows.append(row)

    def count_in(self, lo: int, hi: int) -> int:
        i = bisect_left(self.offsets, lo)
        return bisect_left(self.offsets, hi, i) - i

    def iter_in(self, lo: int, hi: int) -> Iterator[tuple[int, int, dict]]:
        i = bisect_left(self.offsets, lo)
        j = bisect_left(self.offsets, hi, i)
        for k in range(i, j):
            yield self.offsets[k], self.event_ts[k], self.rows[k]

    def dump(self) -> dict:
        return {
            "kind": self.kind,
            "predicate": self.predicate.to_json(),
            "fields": list(self.projection),
            "rows": [
                {"offset": o, "event_ts": t, "values": {k: r.get(k) for k in sorted(r)}}
                for o, t, r in zip(self.offsets, self.event_ts, self.rows)
            ],
        }


class MaterializedAggregate:
    """Per-chunk group counts, keyed by the raw-log segment the records live in.

    Chunk-granular storage is what makes the aggregate stitchable: whole
    sealed chunks merge by key-wise addition, while partially covered chunks
    are left to other access paths.
    """

    kind = MATERIALIZED_AGGREGATE

    def __init__(self, group_by: str, prefilter: tuple[Predicate, ...] = ()):
        self.group_by = group_by
        self.prefilter = tuple(prefilter)
        self.chunks: dict[int, Counter] = {}

    @property
    def params(self) -> dict:
        return {
            "group_by": self.group_by,
            "prefilter": sorted((p.to_json() for p in self.prefilter), key=json.dumps),
        }

    def add(self, chunk_lo: int, key: Any) -> None:
        self.chunks.setdefault(chunk_lo, Counter())[key] += 1

    def chunk_counts(self, chunk_lo: int) -> Counter:
        return self.chunks.get(chunk_lo, Counter())

    def dump(self) -> dict:
        return {
            "kind": self.kind,
            "group_by": self.group_by,
            "prefilter": self.params["prefilter"],
            "chunks": {
                str(lo): {json.dumps(k): c for k, c in sorted(counts.items(), key=lambda kv: json.dumps(kv[0]))}
                for lo, counts in sorted(self.chunks.items())
            },
        }


Structure = HashIndex | PreFilteredLog | MaterializedAggregate


def merge_counts(parts: Iterable[Counter | dict]) -> Counter:
    """Key-wise sum of partial group counts. Commutative and associative."""
    total: Counter = Counter()
    for part in parts:
        total.update(part)
    return total


def content_digest(structure: Structure) -> str:
    """Stable digest of a structure's contents, for content-equality checks."""
    blob = json.dumps(structure.dump(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
