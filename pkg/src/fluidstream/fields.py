"""Field access helpers shared by the ingest path, operators and the query engine.

Records are single JSON documents. Field paths are dotted (``repo.id``,
``payload.action``) and resolve through nested objects only; list indexing
is deliberately unsupported.
"""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Any

_MISSING = object()


def get_path(doc: Any, path: str) -> Any:
    """Resolve a dotted path against a parsed JSON document.

    Returns ``MISSING`` when any step is absent or not an object. ``null``
    values are treated as present.
    """
    cur = doc
    for part in path.split("."):
        if not isinstance(cur, dict):
            return _MISSING
        if part not in cur:
            return _MISSING
        cur = cur[part]
    return cur


def is_missing(value: Any) -> bool:
    return value is _MISSING


MISSING = _MISSING

COMPARATORS = ("==", "!=", "<", "<=", ">", ">=")


def compare(value: Any, op: str, constant: Any) -> bool:
    """Evaluate ``value <op> constant``; ordered comparators require same-type operands."""
    if op == "==":
        return value == constant
    if op == "!=":
        return value != constant
    # Ordered comparisons on mixed types are undefined; treat as non-match.
    if isinstance(value, bool) or isinstance(constant, bool):
        return False
    if isinstance(value, (int, float)) and isinstance(constant, (int, float)):
        pass
    elif isinstance(value, str) and isinstance(constant, str):
        pass
    else:
        return False
    if op == "<":
        return value < constant
    if op == "<=":
        return value <= constant
    if op == ">":
        return value > constant
    if op == ">=":
        return value >= constant
    raise ValueError(f"unknown comparator: {op}")


def key_token(value: Any) -> tuple:
    """Total order over JSON scalar group keys, used for deterministic tie-breaks."""
    if value is None:
        return (0, "")
    if isinstance(value, bool):
        return (1, int(value))
    if isinstance(value, (int, float)):
        return (2, value)
    return (3, str(value))


# --- ingest-time timestamp probe -------------------------------------------
#
# Ingestion must not pay for a full JSON parse, so the event timestamp is
# pulled out with a substring probe for the configured key. Anything the
# probe cannot handle falls back to the ingest wall clock.

_DAY_CACHE: dict[bytes, int] = {}


def _day_epoch_ms(date_part: bytes) -> int | None:
    cached = _DAY_CACHE.get(date_part)
    if cached is not None:
        return cached
    try:
        y = int(date_part[0:4])
        m = int(date_part[5:7])
        d = int(date_part[8:10])
        epoch = int(datetime(y, m, d, tzinfo=timezone.utc).timestamp() * 1000)
    except (ValueError, IndexError):
        return None
    _DAY_CACHE[date_part] = epoch
    return epoch


def parse_iso_ms(text: str) -> int | None:
    """Parse an ISO-8601 UTC timestamp to epoch milliseconds.

    Fast path for the ``YYYY-MM-DDTHH:MM:SSZ`` shape GH-Archive uses;
    everything else goes through ``datetime.fromisoformat``.
    """
    raw = text.encode("ascii", "ignore")
    if len(raw) >= 19 and raw[10:11] in (b"T", b" "):
        day = _day_epoch_ms(raw[:10])
        if day is not None:
            try:
                hh = int(raw[11:13])
                mm = int(raw[14:16])
                ss = int(raw[17:19])
            except ValueError:
                hh = -1
            if 0 <= hh < 24 and 0 <= mm < 60 and 0 <= ss < 61:
                ms = 0
                if len(raw) > 19 and raw[19:20] == b".":
                    frac = raw[20:23].ljust(3, b"0")
                    try:
                        ms = int(frac)
                    except ValueError:
                        ms = 0
                tail = raw[19:]
                if tail in (b"", b"Z") or tail.startswith((b".", b"+00:00", b"Z")):
                    return day + ((hh * 60 + mm) * 60 + ss) * 1000 + ms
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def probe_timestamp(payload: bytes, key: str = "created_at") -> int | None:
    """Extract the event timestamp from a raw payload without parsing it.

    Searches for the first ``"<key>"`` occurrence and reads the quoted value
    after the colon. Returns ``None`` when the key is absent or the value is
    not a parsable timestamp.
    """
    needle = b'"' + key.encode() + b'"'
    at = payload.find(needle)
    if at < 0:
        return None
    pos = at + len(needle)
    n = len(payload)
    while pos < n and payload[pos] in b" \t:":
        pos += 1
    if pos >= n or payload[pos] != ord('"'):
        return None
    end = payload.find(b'"', pos + 1)
    if end < 0:
        return None
    try:
        value = payload[pos + 1 : end].decode("ascii")
    except UnicodeDecodeError:
        return None
    return parse_iso_ms(value)
