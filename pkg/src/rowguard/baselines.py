"""Comparison mitigations: Graphene, Hydra, PARA and REGA."""
from __future__ import annotations

import heapq
import math
import random
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Optional

from .abacus import entries_for, _uses_published_window
from .dram import (DEMAND, PREVENTIVE_REFRESH, RD, WR, DeviceGeometry, TimingParams,
                   ns_to_ps)
from .errors import ConfigError
from .mitigation import Mitigation, MitigationAction, victims

TABLED_NRH = (1000, 500, 250, 125)

GRAPHENE_ENTRIES = {1000: 2720, 500: 5440, 250: 10880, 125: 21760}
GRAPHENE_THRESHOLD = {1000: 500, 500: 250, 250: 125, 125: 63}

HYDRA_GROUP_SIZE = 128
HYDRA_RCC_ENTRIES = 4096
HYDRA_GCT_THRESHOLD = {1000: 400, 500: 200, 250: 100, 125: 50}
HYDRA_TRACKING_THRESHOLD = {1000: 500, 500: 250, 250: 125, 125: 63}
HYDRA_ENTRY_BYTES = {1000: 2, 500: 1, 250: 1, 125: 1}

REGA_TRC_NS = {1000: 45.0, 500: 62.5, 250: 97.5, 125: 167.5}

PARA_PROBABILITY = {1000: 0.034, 500: 0.067, 250: 0.129, 125: 0.241}


# --- Graphene ---------------------------------------------------------------

@dataclass(frozen=True)
class GrapheneConfig:
    nrh: int
    n_entries: int
    threshold: int
    reset_window: int  # ps
    blast_radius: int = 1


def graphene_config(nrh: int, timing: TimingParams = TimingParams(), *,
                    blast_radius: int = 1, n_entries: Optional[int] = None,
                    threshold: Optional[int] = None) -> GrapheneConfig:
    if nrh < 2:
        raise ConfigError("nrh must be >= 2")
    thr = threshold or GRAPHENE_THRESHOLD.get(nrh, math.ceil(nrh / 2))
    if n_entries is None:
        if nrh in GRAPHENE_ENTRIES and _uses_published_window(timing):
            n_entries = GRAPHENE_ENTRIES[nrh]
        else:
            n_entries = entries_for(thr, timing)
    return GrapheneConfig(nrh, n_entries, thr, timing.tREFW, blast_radius)


class MisraGries:
    """Per-bank Misra-Gries counters with a spillover floor.

    Counters at or above ``threshold`` are pinned (the overflow bit) and are
    never replaced.
    """

    def __init__(self, n_entries: int, threshold: int):
        self.n = n_entries
        self.threshold = threshold
        self.row_id: list = [None] * n_entries
        self.count = [0] * n_entries
        self.where: dict = {}
        self.spillover = 0
        self._bucket = {0: list(range(n_entries))}

    def _replaceable(self) -> Optional[int]:
        heap = self._bucket.get(self.spillover)
        s = self.spillover
        while heap:
            i = heap[0]
            if self.count[i] == s and s < self.threshold:
                return i
            heapq.heappop(heap)
        return None

    def _push(self, i):
        if self.count[i] < self.threshold:
            heapq.heappush(self._bucket.setdefault(self.count[i], []), i)

    def increment(self, row: int) -> Optional[int]:
        """Count one ACT of ``row``; returns its counter, or None if untracked."""
        i = self.where.get(row)
        if i is None:
            i = self._replaceable()
            if i is None:
                self._bucket.pop(self.spillover, None)
                self.spillover += 1
                return None
            old = self.row_id[i]
            if old is not None:
                del self.where[old]
            self.row_id[i] = row
            self.where[row] = i
            self.count[i] = self.spillover + 1
        else:
            self.count[i] += 1
        self._push(i)
        return self.count[i]

    def estimate(self, row: int) -> int:
        i = self.where.get(row)
        return self.spillover if i is None else self.count[i]


class Graphene(Mitigation):
    name = "graphene"

    def __init__(self, cfg: GrapheneConfig, geometry: DeviceGeometry):
        self.cfg = cfg
        self.geometry = geometry
        self.tables: dict[int, MisraGries] = {}
        self.preventive_bursts = 0

    def table(self, bank: int) -> MisraGries:
        t = self.tables.get(bank)
        if t is None:
            t = self.tables[bank] = MisraGries(self.cfg.n_entries, self.cfg.threshold)
        return t

    def on_activate(self, bank, row, now, cause):
        c = self.table(bank).increment(row)
        if c is None or c % self.cfg.threshold:
            return None
        self.preventive_bursts += 1
        vs = victims(row, self.cfg.blast_radius, self.geometry.rows_per_bank)
        return MitigationAction(refreshes=[(bank, v) for v in vs])

    def periodic_reset(self, now):
        self.tables.clear()

    def stats(self):
        return {"preventive_bursts": self.preventive_bursts, "n_entries": self.cfg.n_entries,
                "threshold": self.cfg.threshold}


def graphene_on_activate(state: Graphene, bank: int, row: int, now: int = 0):
    return state.on_activate(bank, row, now, DEMAND)


# --- Hydra ------------------------------------------------------------------

@dataclass(frozen=True)
class HydraConfig:
    nrh: int
    group_size: int
    rcc_entries: int
    gct_threshold: int
    tracking_threshold: int
    entry_bytes: int
    reset_window: int
    blast_radius: int = 1


def hydra_config(nrh: int, timing: TimingParams = TimingParams(), *, blast_radius: int = 1,
                 **overrides) -> HydraConfig:
    if nrh < 4:
        raise ConfigError("nrh must be >= 4")
    track = HYDRA_TRACKING_THRESHOLD.get(nrh, math.ceil(nrh / 2))
    cfg = HydraConfig(
        nrh=nrh, group_size=HYDRA_GROUP_SIZE, rcc_entries=HYDRA_RCC_ENTRIES,
        gct_threshold=HYDRA_GCT_THRESHOLD.get(nrh, track * 4 // 5),
        tracking_threshold=track,
        entry_bytes=HYDRA_ENTRY_BYTES.get(nrh, 1 if track < 256 else 2),
        reset_window=timing.tREFW, blast_radius=blast_radius,
    )
    return replace(cfg, **overrides) if overrides else cfg


class _HydraRank:
    def __init__(self):
        self.gct: dict = {}           # (local bank, group) -> group count
        self.materialized: dict = {}  # (local bank, group) -> value rows inherited
        self.rct: dict = {}           # (local bank, row) -> counter held in DRAM
        self.rcc: OrderedDict = OrderedDict()  # LRU, most recent last


class Hydra(Mitigation):
    """Group counters in the controller, per-row counters in DRAM behind a cache.

    Per-row counters live in a reserved region at the top rows of every bank.
    Activations of that region (Hydra's own traffic) are counted in a small
    exact on-chip table so they never generate further counter traffic.
    """

    name = "hydra"

    def __init__(self, cfg: HydraConfig, geometry: DeviceGeometry, cacheline_bytes: int = 64):
        self.cfg = cfg
        self.geometry = geometry
        g = geometry
        if g.rows_per_bank % cfg.group_size:
            raise ConfigError("rows_per_bank must be a multiple of the Hydra group size")
        self.bpr = g.banks_per_rank
        self.groups_per_bank = g.rows_per_bank // cfg.group_size
        self.blocks_per_group = max(1, cfg.group_size * cfg.entry_bytes // cacheline_bytes)
        self.counters_per_block = cacheline_bytes // cfg.entry_bytes
        lines = self.bpr * self.groups_per_bank * self.blocks_per_group
        per_bank = -(-lines // self.bpr)
        self.reserved_rows = -(-per_bank // g.columns_per_row)
        self.reserved_start = g.rows_per_bank - self.reserved_rows
        if self.reserved_start <= 0:
            raise ConfigError("geometry too small for the Hydra row-count table")
        self.ranks = [_HydraRank() for _ in range(g.total_ranks)]
        self.meta: dict = {}
        self.fills = 0
        self.evictions = 0
        self.init_writes = 0
        self.preventive_bursts = 0

    def counter_location(self, bank: int, row: int) -> tuple[int, int, int]:
        """(flat bank, row, column) of the cache block holding a row's counter."""
        rank, local = divmod(bank, self.bpr)
        group, off = divmod(row, self.cfg.group_size)
        blk = off // self.counters_per_block
        i = (local * self.groups_per_bank + group) * self.blocks_per_group + blk
        j, b = divmod(i, self.bpr)
        r, col = divmod(j, self.geometry.columns_per_row)
        return rank * self.bpr + b, self.reserved_start + r, col

    def _refresh(self, bank, row):
        self.preventive_bursts += 1
        vs = victims(row, self.cfg.blast_radius, self.geometry.rows_per_bank)
        return [(bank, v) for v in vs]

    def on_activate(self, bank, row, now, cause):
        cfg = self.cfg
        if row >= self.reserved_start:
            v = self.meta.get((bank, row), 0) + 1
            if v >= cfg.tracking_threshold:
                self.meta[(bank, row)] = 0
                return MitigationAction(refreshes=self._refresh(bank, row))
            self.meta[(bank, row)] = v
            return None

        rank, local = divmod(bank, self.bpr)
        st = self.ranks[rank]
        gkey = (local, row // cfg.group_size)
        init = st.materialized.get(gkey)
        if init is None:
            c = st.gct.get(gkey, 0) + 1
            if c < cfg.gct_threshold:
                st.gct[gkey] = c
                return None
            st.gct.pop(gkey, None)
            st.materialized[gkey] = c
            # initialise the group's record in the row-count table
            base = gkey[1] * cfg.group_size
            traffic = []
            for blk in range(self.blocks_per_group):
                fb, fr, _ = self.counter_location(bank, base + blk * self.counters_per_block)
                traffic.append((fb, fr, WR))
            self.init_writes += len(traffic)
            return MitigationAction(traffic=traffic)

        key = (local, row)
        rcc = st.rcc
        traffic = []
        if key in rcc:
            rcc.move_to_end(key)
            v = rcc[key] + 1
        else:
            self.fills += 1
            v = st.rct.get(key, init) + 1
            fb, fr, _ = self.counter_location(bank, row)
            if len(rcc) >= cfg.rcc_entries:
                ek, ev = rcc.popitem(last=False)
                st.rct[ek] = ev
                self.evictions += 1
                eb, er, _ = self.counter_location(rank * self.bpr + ek[0], ek[1])
                traffic.append((eb, er, WR))
            traffic.append((fb, fr, RD))
        refreshes = []
        if v >= cfg.tracking_threshold:
            refreshes = self._refresh(bank, row)
            v = 0
        rcc[key] = v
        if not (traffic or refreshes):
            return None
        return MitigationAction(refreshes=refreshes, traffic=traffic)

    def row_estimate(self, bank: int, row: int) -> int:
        """Hydra's current activation estimate for (bank, row)."""
        if row >= self.reserved_start:
            return self.meta.get((bank, row), 0)
        rank, local = divmod(bank, self.bpr)
        st = self.ranks[rank]
        gkey = (local, row // self.cfg.group_size)
        if gkey not in st.materialized:
            return st.gct.get(gkey, 0)
        key = (local, row)
        if key in st.rcc:
            return st.rcc[key]
        return st.rct.get(key, st.materialized[gkey])

    def periodic_reset(self, now):
        self.ranks = [_HydraRank() for _ in self.ranks]
        self.meta.clear()

    def stats(self):
        return {"preventive_bursts": self.preventive_bursts, "rcc_fills": self.fills,
                "rcc_evictions": self.evictions, "rct_init_writes": self.init_writes,
                "reserved_rows_per_bank": self.reserved_rows}


def hydra_on_activate(state: Hydra, bank: int, row: int, now: int = 0):
    return state.on_activate(bank, row, now, DEMAND)


# --- PARA -------------------------------------------------------------------

def para_probability(nrh: int, failure_probability: float = 1e-15) -> float:
    if nrh in PARA_PROBABILITY:
        return PARA_PROBABILITY[nrh]
    return 1.0 - failure_probability ** (1.0 / nrh)


class Para(Mitigation):
    """Refresh the closed row's neighbours with probability ``p`` on every PRE.

    With ``recursive`` set, closures of PARA's own refresh activations flip
    the coin too, so rows hammered only by refreshes are covered as well.
    """

    name = "para"

    def __init__(self, p: float, geometry: DeviceGeometry, seed: int = 0, *,
                 blast_radius: int = 1, recursive: bool = True):
        if not 0.0 <= p < 1.0:
            raise ConfigError("PARA probability must be in [0, 1)")
        if recursive and 2 * blast_radius * p >= 1.0:
            raise ConfigError("recursive PARA needs 2 * blast_radius * p < 1 to terminate")
        self.p = p
        self.geometry = geometry
        self.seed = seed
        self.rng = random.Random(seed)
        self.blast_radius = blast_radius
        self.recursive = recursive
        self.triggers = 0

    def on_precharge(self, bank, row, now, cause):
        if cause != DEMAND and not (self.recursive and cause == PREVENTIVE_REFRESH):
            return None
        if self.rng.random() >= self.p:
            return None
        self.triggers += 1
        vs = victims(row, self.blast_radius, self.geometry.rows_per_bank)
        return MitigationAction(refreshes=[(bank, v) for v in vs])

    def stats(self):
        return {"preventive_bursts": self.triggers, "p": self.p, "seed": self.seed}


def para_on_precharge(state: Para, bank: int, row_closed: int, now: int = 0):
    return state.on_precharge(bank, row_closed, now, DEMAND)


# --- REGA -------------------------------------------------------------------

def rega_apply(nrh: int, timing: TimingParams = TimingParams()) -> TimingParams:
    if nrh not in REGA_TRC_NS:
        raise ConfigError(f"REGA has no published tRC for nrh={nrh}")
    return replace(timing, tRC=ns_to_ps(REGA_TRC_NS[nrh]))


class Rega(Mitigation):
    """Refreshes happen inside DRAM alongside each ACT; only tRC changes."""

    name = "rega"
    oracle_applicable = False

    def __init__(self, nrh: int, tRC_ns: Optional[float] = None):
        if tRC_ns is None:
            if nrh not in REGA_TRC_NS:
                raise ConfigError(f"REGA has no published tRC for nrh={nrh}")
            tRC_ns = REGA_TRC_NS[nrh]
        self.nrh = nrh
        self.tRC = ns_to_ps(tRC_ns)

    def adjust_timing(self, timing):
        return replace(timing, tRC=self.tRC)

    def stats(self):
        return {"effective_tRC_ns": self.tRC / 1000}
