"""ABACuS: one shared activation counter per row ID across sibling banks.

A Misra-Gries table whose entries are keyed by row ID only. Each entry holds
a row activation counter (RAC) that upper-bounds the activation count of the
row in every sibling bank, plus a sibling activation vector (SAV) recording
which banks have activated the row since the RAC last moved. The RAC only
advances when a bank whose SAV bit is already set activates the row again.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .dram import DeviceGeometry, TimingParams
from .errors import ConfigError
from .mitigation import MitigationAction, Mitigation, victims

TABLE_ENTRIES = {1000: 2720, 500: 5440, 250: 10880, 125: 21760}
# the timing the published entry counts were derived for
_PUBLISHED_TIMING = TimingParams()


def activations_per_window(timing: TimingParams) -> Fraction:
    """ACTs one bank can receive in tREFW outside periodic-refresh blackouts."""
    return Fraction(timing.tREFW * (timing.tREFI - timing.tRFC), timing.tREFI * timing.tRC)


def entries_for(threshold: int, timing: TimingParams) -> int:
    """ceil(N_ACT / threshold), rounded up to a multiple of 32."""
    n = math.ceil(activations_per_window(timing) / threshold)
    return max(32, 32 * math.ceil(n / 32))


def _uses_published_window(timing: TimingParams) -> bool:
    p = _PUBLISHED_TIMING
    return (timing.tREFW, timing.tREFI, timing.tRC) == (p.tREFW, p.tREFI, p.tRC)


@dataclass(frozen=True)
class AbacusConfig:
    nrh: int
    prt: int
    rct: int
    n_entries: int
    s_rac: int
    s_sav: int
    s_rid: int
    blast_radius: int = 1
    big_variant: bool = False
    rows_per_bank: int = 128 * 1024

    @property
    def storage_bits(self) -> int:
        if self.big_variant:
            # statically indexed: no row-ID field, no overflow bit, no spillover
            return self.n_entries * (self.s_rac - 1 + self.s_sav)
        return self.n_entries * (self.s_rid + self.s_rac + self.s_sav) + self.s_rac


def configure(nrh: int, timing: TimingParams = TimingParams(),
              geometry: DeviceGeometry = DeviceGeometry(), *, blast_radius: int = 1,
              big: bool = False, n_entries: Optional[int] = None,
              per_rank: bool = False) -> AbacusConfig:
    if nrh < 4:
        raise ConfigError(f"nrh must be >= 4, got {nrh}")
    if blast_radius < 1:
        raise ConfigError("blast_radius must be >= 1")
    prt = nrh // 2
    rct = prt - 2
    if big:
        entries = geometry.rows_per_bank
    elif n_entries is not None:
        if n_entries < 1:
            raise ConfigError("n_entries must be >= 1")
        entries = n_entries
    elif nrh in TABLE_ENTRIES and _uses_published_window(timing):
        entries = TABLE_ENTRIES[nrh]
    else:
        entries = entries_for(prt, timing)
    s_sav = geometry.banks_per_rank if per_rank else geometry.banks_per_channel
    return AbacusConfig(
        nrh=nrh, prt=prt, rct=rct, n_entries=entries,
        s_rac=math.ceil(math.log2(prt)) + 1,
        s_sav=s_sav,
        s_rid=math.ceil(math.log2(geometry.rows_per_bank)),
        blast_radius=blast_radius, big_variant=big,
        rows_per_bank=geometry.rows_per_bank,
    )


@dataclass
class AbacusEntry:
    row_id: Optional[int]
    rac: int
    sav: int
    overflow: int  # number of times the RAC wrapped at PRT

    def cumulative(self, prt: int) -> int:
        return self.overflow * prt + self.rac


# Sentinel refresh-cycle marker returned by the table functions; the
# mitigation wrapper turns it into concrete ranks.
SCOPE = ("scope",)


class AbacusTable:
    """Counter table plus spillover counter.

    Entries are stored column-wise. ``_bucket`` maps a RAC value to a lazy
    min-heap of entry indices, so the lowest-indexed replaceable entry (RAC
    equal to the spillover value, not overflowed) is found without a scan.
    """

    def __init__(self, cfg: AbacusConfig):
        self.cfg = cfg
        n = cfg.n_entries
        self.row_id: list = [None] * n
        self.rac = [0] * n
        self.sav = [0] * n
        self.overflow = [0] * n
        self.where: dict = {}
        self.spillover = 0
        self.last_reset_time = 0
        self._bucket = {0: list(range(n))}

    def __len__(self):
        return self.cfg.n_entries

    def entry(self, i: int) -> AbacusEntry:
        return AbacusEntry(self.row_id[i], self.rac[i], self.sav[i], self.overflow[i])

    def lookup(self, row: int) -> Optional[AbacusEntry]:
        i = self.where.get(row)
        return None if i is None else self.entry(i)

    def cumulative(self, row: int) -> Optional[int]:
        i = self.where.get(row)
        if i is None:
            return None
        return self.overflow[i] * self.cfg.prt + self.rac[i]

    def snapshot(self) -> tuple[dict, int]:
        """``({row: cumulative RAC}, spillover)`` for invariant checking."""
        prt = self.cfg.prt
        cum = {r: self.overflow[i] * prt + self.rac[i] for r, i in self.where.items()}
        return cum, self.spillover

    def _push(self, i: int) -> None:
        heapq.heappush(self._bucket.setdefault(self.rac[i], []), i)

    def _replaceable(self) -> Optional[int]:
        heap = self._bucket.get(self.spillover)
        if not heap:
            return None
        s = self.spillover
        while heap:
            i = heap[0]
            if self.rac[i] == s and not self.overflow[i]:
                return i
            heapq.heappop(heap)
        return None

    def reset(self, now: int) -> None:
        n = self.cfg.n_entries
        self.row_id = [None] * n
        self.rac = [0] * n
        self.sav = [0] * n
        self.overflow = [0] * n
        self.where = {}
        self.spillover = 0
        self._bucket = {0: list(range(n))}
        self.last_reset_time = now


def preventive_refresh_targets(row: int, blast_radius: int, geometry: DeviceGeometry,
                               banks=None) -> list[tuple[int, int]]:
    """Victims of ``row`` within ``blast_radius`` in every bank of the rank set."""
    if blast_radius < 1:
        raise ConfigError("blast_radius must be >= 1")
    if banks is None:
        banks = range(geometry.banks_per_channel)
    vs = victims(row, blast_radius, geometry.rows_per_bank)
    return [(b, v) for b in banks for v in vs]


def _refresh(cfg: AbacusConfig, row: int) -> MitigationAction:
    vs = victims(row, cfg.blast_radius, cfg.rows_per_bank)
    return MitigationAction(refreshes=[(b, v) for b in range(cfg.s_sav) for v in vs])


def on_activate(table: AbacusTable, cfg: AbacusConfig, bank: int, row: int, now: int):
    """Update the table for ACT(bank, row). Bank ids are table-local.

    Returns ``None``, a preventive-refresh action (table-local banks), or an
    action whose ``refresh_cycle`` is ``SCOPE``.
    """
    bit = 1 << bank
    i = table.where.get(row)
    if i is not None:
        if not table.sav[i] & bit:
            table.sav[i] |= bit
            return None
        table.rac[i] += 1
        table.sav[i] = bit
        if table.rac[i] >= cfg.prt:
            table.overflow[i] += 1
            table.rac[i] = 0
            return _refresh(cfg, row)
        if not table.overflow[i]:
            table._push(i)
        return None

    i = table._replaceable()
    if i is not None:
        old = table.row_id[i]
        if old is not None:
            del table.where[old]
        table.row_id[i] = row
        table.where[row] = i
        table.rac[i] = table.spillover + 1
        table.sav[i] = bit
        if table.rac[i] >= cfg.prt:  # only reachable with an undersized rct
            table.overflow[i] += 1
            table.rac[i] = 0
            return _refresh(cfg, row)
        table._push(i)
        return None

    table._bucket.pop(table.spillover, None)
    table.spillover += 1
    if table.spillover >= cfg.rct:
        table.reset(now)
        return MitigationAction(refresh_cycle=SCOPE)
    return None


def periodic_reset(table, now: int) -> None:
    table.reset(now)


class AbacusBigTable:
    """One statically indexed counter per row ID; no spillover counter."""

    def __init__(self, cfg: AbacusConfig):
        if not cfg.big_variant:
            raise ConfigError("AbacusBigTable needs a big_variant config")
        self.cfg = cfg
        self.entries: dict = {}  # row -> [rac, sav, overflow]; absent == all zero
        self.spillover = 0
        self.last_reset_time = 0

    def __len__(self):
        return self.cfg.n_entries

    def lookup(self, row: int) -> Optional[AbacusEntry]:
        e = self.entries.get(row)
        if e is None:
            return None
        return AbacusEntry(row, e[0], e[1], e[2])

    def cumulative(self, row: int) -> Optional[int]:
        e = self.entries.get(row)
        return None if e is None else e[2] * self.cfg.prt + e[0]

    def snapshot(self) -> tuple[dict, int]:
        prt = self.cfg.prt
        return {r: e[2] * prt + e[0] for r, e in self.entries.items()}, 0

    def reset(self, now: int) -> None:
        self.entries = {}
        self.last_reset_time = now


def on_activate_big(table: AbacusBigTable, cfg: AbacusConfig, bank: int, row: int, now: int):
    if not 0 <= row < cfg.n_entries:
        raise ConfigError(f"row {row} outside the statically indexed table")
    bit = 1 << bank
    e = table.entries.get(row)
    if e is None:
        # first touch since reset: same as mapping with a zero spillover value
        table.entries[row] = [1, bit, 0]
        return None
    if not e[1] & bit:
        e[1] |= bit
        return None
    e[0] += 1
    e[1] = bit
    if e[0] >= cfg.prt:
        e[2] += 1
        e[0] = 0
        return _refresh(cfg, row)
    return None


class AbacusMitigation(Mitigation):
    """Wraps one table per sibling scope (the channel, or each rank)."""

    def __init__(self, cfg: AbacusConfig, geometry: DeviceGeometry):
        self.cfg = cfg
        self.geometry = geometry
        self.name = "abacus-big" if cfg.big_variant else "abacus"
        self.scope_banks = cfg.s_sav
        if self.scope_banks not in (geometry.banks_per_rank, geometry.banks_per_channel):
            raise ConfigError("s_sav must equal banks per rank or per channel")
        n_scopes = geometry.total_banks // self.scope_banks
        cls = AbacusBigTable if cfg.big_variant else AbacusTable
        self.tables = [cls(cfg) for _ in range(n_scopes)]
        self._activate = on_activate_big if cfg.big_variant else on_activate
        self.preventive_bursts = 0
        self.refresh_cycles = 0

    def table_for(self, bank: int):
        return self.tables[bank // self.scope_banks]

    def ranks_of_scope(self, scope: int) -> tuple:
        per = self.scope_banks // self.geometry.banks_per_rank
        return tuple(range(scope * per, (scope + 1) * per))

    def on_activate(self, bank, row, now, cause):
        scope, local = divmod(bank, self.scope_banks)
        act = self._activate(self.tables[scope], self.cfg, local, row, now)
        if act is None:
            return None
        if act.refresh_cycle:
            self.refresh_cycles += 1
            return MitigationAction(refresh_cycle=self.ranks_of_scope(scope))
        self.preventive_bursts += 1
        base = scope * self.scope_banks
        act.refreshes = [(base + b, v) for b, v in act.refreshes]
        return act

    def periodic_reset(self, now):
        for t in self.tables:
            t.reset(now)

    def stats(self):
        return {
            "preventive_bursts": self.preventive_bursts,
            "refresh_cycles": self.refresh_cycles,
            "n_entries": self.cfg.n_entries,
            "storage_bits": self.cfg.storage_bits * len(self.tables),
        }
