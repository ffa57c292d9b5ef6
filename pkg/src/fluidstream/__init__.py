"""Streaming ingestion with start/stop-anytime preprocessing routines,
partial-structure query planning, and adaptive routine selection."""

__version__ = "0.1.0"
