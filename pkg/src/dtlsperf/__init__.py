"""Instrumented DTLS-style secure UDP gateway and its CPU cycle cost model."""

__version__ = "0.1.0"
