"""Physical address <-> DRAM coordinate mapping (MOP-style interleaving).

Bit layout, low to high::

    cacheline offset | k-group column bits | bank | bankgroup | rank | channel
    | remaining column bits | row

With ``MOP_1CL`` consecutive cachelines land in consecutive banks at the same
row index; with ``MOP_kCL`` groups of k consecutive cachelines share a
(bank, row) and the next group moves to the next bank.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .dram import DeviceGeometry
from .errors import AddressRangeError, ConfigError

SCHEMES = {"MOP_1CL": 1, "MOP_2CL": 2, "MOP_4CL": 4, "MOP_8CL": 8, "MOP_64CL": 64}
CLI_NAMES = {"mop1": "MOP_1CL", "mop2": "MOP_2CL", "mop4": "MOP_4CL",
             "mop8": "MOP_8CL", "mop64": "MOP_64CL"}


class Coords(NamedTuple):
    channel: int
    rank: int
    bankgroup: int
    bank: int
    row: int
    column: int


def _log2(n: int) -> int:
    return n.bit_length() - 1


@dataclass(frozen=True)
class MappingScheme:
    scheme_kind: str = "MOP_1CL"
    geometry: DeviceGeometry = field(default_factory=DeviceGeometry)
    cacheline_bytes: int = 64

    def __post_init__(self):
        kind = CLI_NAMES.get(self.scheme_kind, self.scheme_kind)
        if kind not in SCHEMES:
            raise ConfigError(f"unknown mapping {self.scheme_kind!r}")
        object.__setattr__(self, "scheme_kind", kind)
        if SCHEMES[kind] > self.geometry.columns_per_row:
            raise ConfigError(f"{kind} groups exceed columns_per_row")
        g = self.geometry
        off = _log2(self.cacheline_bytes)
        kb = _log2(SCHEMES[kind])
        lay = {
            "offset": off,
            "kcol": kb,
            "bank": _log2(g.banks_per_bankgroup),
            "bankgroup": _log2(g.bankgroups_per_rank),
            "rank": _log2(g.ranks_per_channel),
            "channel": _log2(g.channels),
            "hicol": _log2(g.columns_per_row) - kb,
            "row": _log2(g.rows_per_bank),
        }
        object.__setattr__(self, "_widths", lay)
        # all bank-selecting fields are contiguous, so the flat bank id is one field
        bank_bits = lay["bank"] + lay["bankgroup"] + lay["rank"] + lay["channel"]
        object.__setattr__(self, "_bank_bits", bank_bits)
        object.__setattr__(self, "_total_bits", sum(lay.values()))

    @property
    def group_lines(self) -> int:
        return SCHEMES[self.scheme_kind]

    @property
    def capacity(self) -> int:
        return 1 << self._total_bits

    def decode(self, phys_addr: int) -> Coords:
        if not 0 <= phys_addr < self.capacity:
            raise AddressRangeError(f"address {phys_addr:#x} beyond capacity {self.capacity:#x}")
        w = self._widths
        a = phys_addr >> w["offset"]
        kcol = a & ((1 << w["kcol"]) - 1)
        a >>= w["kcol"]
        bank = a & ((1 << w["bank"]) - 1)
        a >>= w["bank"]
        bg = a & ((1 << w["bankgroup"]) - 1)
        a >>= w["bankgroup"]
        rank = a & ((1 << w["rank"]) - 1)
        a >>= w["rank"]
        ch = a & ((1 << w["channel"]) - 1)
        a >>= w["channel"]
        hicol = a & ((1 << w["hicol"]) - 1)
        row = a >> w["hicol"]
        return Coords(ch, rank, bg, bank, row, (hicol << w["kcol"]) | kcol)

    def encode(self, coords) -> int:
        ch, rank, bg, bank, row, col = coords
        g = self.geometry
        limits = (g.channels, g.ranks_per_channel, g.bankgroups_per_rank,
                  g.banks_per_bankgroup, g.rows_per_bank, g.columns_per_row)
        for name, v, lim in zip(Coords._fields, (ch, rank, bg, bank, row, col), limits):
            if not 0 <= v < lim:
                raise AddressRangeError(f"{name}={v} out of range [0, {lim})")
        w = self._widths
        kcol = col & ((1 << w["kcol"]) - 1)
        hicol = col >> w["kcol"]
        a = row
        a = (a << w["hicol"]) | hicol
        a = (a << w["channel"]) | ch
        a = (a << w["rank"]) | rank
        a = (a << w["bankgroup"]) | bg
        a = (a << w["bank"]) | bank
        a = (a << w["kcol"]) | kcol
        return a << w["offset"]

    def decode_flat(self, phys_addr: int) -> tuple[int, int, int]:
        """Fast path: ``(flat bank id, row, column)``."""
        if not 0 <= phys_addr < self.capacity:
            raise AddressRangeError(f"address {phys_addr:#x} beyond capacity {self.capacity:#x}")
        w = self._widths
        a = phys_addr >> w["offset"]
        kcol = a & ((1 << w["kcol"]) - 1)
        a >>= w["kcol"]
        flat = a & ((1 << self._bank_bits) - 1)
        a >>= self._bank_bits
        hicol = a & ((1 << w["hicol"]) - 1)
        return flat, a >> w["hicol"], (hicol << w["kcol"]) | kcol

    def encode_flat(self, bank: int, row: int, column: int = 0) -> int:
        ch, rank, bg, b = self.geometry.split_bank(bank)
        return self.encode((ch, rank, bg, b, row, column))


def decode(phys_addr: int, mapping: MappingScheme) -> Coords:
    return mapping.decode(phys_addr)


def encode(coords, mapping: MappingScheme) -> int:
    return mapping.encode(coords)
