"""Closed-form cost equations and throughput prediction.

Every function is pure: the result depends only on the parameters and the
arguments. Values are real-valued; the insertion sawtooth is not integral
by construction, so results are rounded to three decimals rather than
truncated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import CostModelParams, DomainError

SAWTOOTH_MIN_CONNECTIONS = 1000
ROUND_DIGITS = 3
DEFAULT_WIRE_BYTES = 576

COMPONENTS = ("tx", "rx", "hash", "mem", "dmaps", "lookup", "openssl_s", "openssl_r",
              "insert_worst")


def sawtooth_shape(c) -> float:
    """``(2**(floor(log2 c) + 1) - 8) / c - 1``: the occupancy-dependent term."""
    if c <= 0:
        raise DomainError("sawtooth is undefined for c <= 0")
    if float(c).is_integer():
        top = 1 << int(c).bit_length()
    else:
        top = 2 ** (math.floor(math.log2(c)) + 1)
    return (top - 8) / c - 1


def insert_per_conn(params: CostModelParams, c) -> float:
    """Average cycles per insert after ``c`` connections."""
    return params.table_insert_base + params.table_insert_saw * sawtooth_shape(c)


def eval_component(params: CostModelParams, which: str, arg, allow_small: bool = False) -> float:
    """Cycles spent by one cost component.

    ``arg`` is the packet count for tx/rx/hash/lookup, the connection count
    for mem/dmaps/openssl_s/insert_worst and the byte count for openssl_r.
    """
    if arg < 0:
        raise ValueError("component argument must be >= 0")
    p = params
    if which == "tx":
        v = p.tx_per_pkt * arg
    elif which == "rx":
        v = p.rx_per_pkt * arg
    elif which == "hash":
        v = p.hash_per_pkt * arg
    elif which == "lookup":
        v = p.table_lookup_per_pkt * arg
    elif which == "mem":
        v = p.mem_per_conn * arg + p.mem_fixed
    elif which == "dmaps":
        if arg < SAWTOOTH_MIN_CONNECTIONS and not allow_small:
            raise DomainError(f"insertion sawtooth only holds for c >= "
                              f"{SAWTOOTH_MIN_CONNECTIONS} (got {arg}); pass allow_small")
        v = 0.0 if arg == 0 else arg * insert_per_conn(p, arg)
    elif which == "insert_worst":
        v = p.insert_worst_per_conn * arg
    elif which == "openssl_s":
        v = p.hs_fixed + p.hs_per_conn * arg
    elif which == "openssl_r":
        v = p.crypto_per_byte * arg
    else:
        raise ValueError(f"unknown component {which!r}; expected one of {', '.join(COMPONENTS)}")
    return round(float(v), ROUND_DIGITS)


@dataclass
class PredictionInput:
    c: float = 0
    p: float = 0
    b: float | None = None
    cpu_hz: float = 3.2e9
    bandwidth_cap: float | None = None
    wire_bytes_per_pkt: int = DEFAULT_WIRE_BYTES
    conn_rate: float | None = None

    def __post_init__(self):
        for name in ("c", "p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.b is not None and self.b < 0:
            raise ValueError("b must be >= 0")

    def bytes_for(self, params: CostModelParams) -> float:
        return self.p * params.payload_bytes_per_pkt if self.b is None else self.b


def total_parts(params: CostModelParams, inp: PredictionInput) -> dict:
    """Per-component cycles whose sum is :func:`eval_total`.

    Insertion uses the worst-case per-connection bound so the total stays
    linear in ``c``; crypto bytes are charged once per pass.
    """
    b = inp.bytes_for(params)
    return {
        "tx": eval_component(params, "tx", inp.p),
        "rx": eval_component(params, "rx", inp.p),
        "hash": eval_component(params, "hash", inp.p),
        "lookup": eval_component(params, "lookup", inp.p),
        "mem": eval_component(params, "mem", inp.c),
        "insert_worst": eval_component(params, "insert_worst", inp.c),
        "openssl_s": eval_component(params, "openssl_s", inp.c),
        "openssl_r": eval_component(params, "openssl_r", b) * params.crypto_passes,
    }


def eval_total(params: CostModelParams, inp: PredictionInput | None = None, *,
               c=None, p=None, b=None) -> float:
    """Total cycles for ``c`` connections carrying ``p`` packets (``b`` payload bytes)."""
    if inp is None:
        inp = PredictionInput(c=c or 0, p=p or 0, b=b)
    return round(sum(total_parts(params, inp).values()), ROUND_DIGITS)


@dataclass(frozen=True)
class Throughput:
    pps: int
    bps: float
    cycles_per_packet: float
    capped: bool


def predict_throughput(params: CostModelParams, inp: PredictionInput) -> Throughput:
    """Steady-state packet rate a ``cpu_hz`` cycle budget sustains.

    With ``conn_rate`` (new connections per second) the per-connection
    cost is taken out of the budget first. A bandwidth cap bounds bits per
    second on the wire.
    """
    if inp.cpu_hz <= 0:
        raise ValueError("cpu_hz must be positive")
    per_pkt = params.per_packet
    budget = inp.cpu_hz
    if inp.conn_rate:
        budget = max(0.0, budget - inp.conn_rate * params.per_connection)
    pps = math.floor(budget / per_pkt)
    wire_bits = inp.wire_bytes_per_pkt * 8
    bps = pps * wire_bits
    capped = False
    if inp.bandwidth_cap is not None and bps > inp.bandwidth_cap:
        capped = True
        bps = float(inp.bandwidth_cap)
        pps = math.floor(bps / wire_bits)
    return Throughput(pps, float(bps), per_pkt, capped)


def smape(forecast, actual) -> float:
    """Symmetric mean absolute percentage error in percent, within [0, 200]."""
    f = np.asarray(forecast, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if f.shape != a.shape:
        raise ValueError(f"length mismatch: {f.size} forecasts vs {a.size} actuals")
    if f.size == 0:
        raise ValueError("smape needs at least one pair")
    denom = (np.abs(a) + np.abs(f)) / 2
    diff = np.abs(f - a)
    ratio = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    return float(100.0 * ratio.mean())
