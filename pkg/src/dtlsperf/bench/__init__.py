"""Measurement harness: cycle clock, stage microbenchmarks, load generator, reports."""
from .clock import DEFAULT_NOMINAL_HZ, ClockSource, CycleClock, Stage, tsc_available

__all__ = ["DEFAULT_NOMINAL_HZ", "ClockSource", "CycleClock", "Stage", "tsc_available"]
