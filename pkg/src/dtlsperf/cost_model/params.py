"""Cost coefficients, in CPU cycles, and their JSON form."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields


class DomainError(ValueError):
    """An equation was evaluated outside the range it was fitted for."""


@dataclass
class CostModelParams:
    tx_per_pkt: float = 66
    rx_per_pkt: float = 77
    hash_per_pkt: float = 62
    mem_per_conn: float = 354
    mem_fixed: float = 1477
    table_insert_base: float = 400
    table_insert_saw: float = 170
    table_lookup_per_pkt: float = 118
    hs_fixed: float = 5759960
    hs_per_conn: float = 2325634
    crypto_per_byte: float = 12
    payload_bytes_per_pkt: int = 500
    crypto_passes: int = 1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError(f"{f.name} must be a number, got {v!r}")
            if v < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.payload_bytes_per_pkt < 1:
            raise ValueError("payload_bytes_per_pkt must be >= 1")
        if self.crypto_passes < 1 or int(self.crypto_passes) != self.crypto_passes:
            raise ValueError("crypto_passes must be a positive integer")

    # Aggregates are properties so they can never go stale after an edit.

    @property
    def non_crypto_per_pkt(self) -> float:
        """IO, hashing and lookup per packet (323 with the defaults)."""
        return self.rx_per_pkt + self.tx_per_pkt + self.hash_per_pkt + self.table_lookup_per_pkt

    @property
    def crypto_per_pkt(self) -> float:
        return self.crypto_per_byte * self.payload_bytes_per_pkt * self.crypto_passes

    @property
    def per_packet(self) -> float:
        return self.non_crypto_per_pkt + self.crypto_per_pkt

    @property
    def insert_worst_per_conn(self) -> float:
        """Upper bound of the per-insert sawtooth, reached just after a resize."""
        return self.table_insert_base + self.table_insert_saw

    @property
    def per_connection(self) -> float:
        return self.hs_per_conn + self.mem_per_conn + self.insert_worst_per_conn

    @property
    def fixed(self) -> float:
        return self.hs_fixed + self.mem_fixed

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CostModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def replace(self, **changes) -> "CostModelParams":
        d = self.to_dict()
        d.update(changes)
        return type(self).from_dict(d)


def load_params(source) -> CostModelParams:
    """``"defaults"`` or a path to a JSON object with CostModelParams field names."""
    if source is None or source == "defaults":
        return CostModelParams()
    with open(source) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{source}: expected a JSON object")
    return CostModelParams.from_dict(data)


def save_params(params: CostModelParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2, sort_keys=False)
        fh.write("\n")
