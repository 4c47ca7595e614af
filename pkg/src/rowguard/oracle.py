"""Brute-force ground truth for read-disturbance exposure.

Every (bank, aggressor, victim) pair carries the number of aggressor ACTs
since the victim was last refreshed. Resets are lazy: each pair remembers the
event sequence number of its last increment and is treated as zero when the
victim has been refreshed since.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .dram import (ACT, ALL_ROWS, PRE, PREVENTIVE_REFRESH, REF, DeviceGeometry,
                   DramCommand, TimingParams, refresh_slice_of)
from .errors import StructuralError
from .mitigation import victims


@dataclass(frozen=True)
class Violation:
    time: int
    bank: int
    aggressor: int
    victim: int
    count: int


class OracleLedger:
    """Observes the command stream and keeps exact exposure counts.

    ``nrh`` (optional) enables on-line logging of the first crossing of each
    pair into ``violation_log``. ``scope_banks`` is the sibling scope used for
    the ABACuS invariant counts (``act_count``), which only reset at
    ``mark_epoch``.
    """

    def __init__(self, geometry: DeviceGeometry, timing: TimingParams, *,
                 blast_radius: int = 1, nrh: Optional[int] = None,
                 scope_banks: Optional[int] = None, keep_log: bool = False):
        self.geometry = geometry
        self.timing = timing
        self.blast_radius = blast_radius
        self.nrh = nrh
        self.scope_banks = scope_banks or geometry.banks_per_channel
        self.n_slices = timing.refs_per_window
        self.seq = 0
        self.last_time = 0
        # (bank, aggressor, victim) -> [count, seq of last increment]
        self.pairs: dict = {}
        # peak count any pair reached, with the time it first got there
        self.peaks: dict = {}
        self.explicit_refresh: dict = {}  # (bank, row) -> seq
        self.refresh_time: dict = {}      # (bank, row) -> ps, explicit refreshes only
        self.slice_seq = [dict() for _ in range(geometry.total_ranks)]
        self.cycle_seq = [0] * geometry.total_ranks
        n_scopes = max(1, geometry.total_banks // self.scope_banks)
        self.act_count = [dict() for _ in range(n_scopes)]  # (bank, row) -> count
        self.row_max = [dict() for _ in range(n_scopes)]    # row -> max over banks
        self.violation_log: list[Violation] = []
        self.log: Optional[list] = [] if keep_log else None
        self.n_acts = 0

    # -- refresh bookkeeping -------------------------------------------------

    def victim_refresh_seq(self, bank: int, row: int) -> int:
        rank = bank // self.geometry.banks_per_rank
        k = refresh_slice_of(row, self.geometry.rows_per_bank, self.n_slices)
        return max(self.explicit_refresh.get((bank, row), 0),
                   self.slice_seq[rank].get(k, 0), self.cycle_seq[rank])

    def mark_epoch(self, banks: Optional[Iterable[int]] = None) -> None:
        """Start a new ABACuS epoch (reset) for the scopes covering ``banks``."""
        if banks is None:
            scopes = range(len(self.act_count))
        else:
            scopes = sorted({b // self.scope_banks for b in banks})
        for s in scopes:
            self.act_count[s] = {}
            self.row_max[s] = {}

    # -- observation ---------------------------------------------------------

    def observe(self, cmd: DramCommand) -> None:
        t = cmd.issue_time
        if t < self.last_time:
            raise StructuralError(f"command at {t} ps after {self.last_time} ps")
        self.last_time = t
        self.seq += 1
        s = self.seq
        if self.log is not None:
            self.log.append(cmd)
        if cmd.kind == REF:
            if cmd.refresh_slice == ALL_ROWS:
                self.cycle_seq[cmd.rank] = s
            else:
                self.slice_seq[cmd.rank][cmd.refresh_slice] = s
            return
        if cmd.kind != ACT:
            return

        bank, row = cmd.bank, cmd.row
        self.n_acts += 1
        if cmd.cause == PREVENTIVE_REFRESH:
            self.explicit_refresh[(bank, row)] = s
            self.refresh_time[(bank, row)] = t

        pairs = self.pairs
        for v in victims(row, self.blast_radius, self.geometry.rows_per_bank):
            key = (bank, row, v)
            p = pairs.get(key)
            if p is None or p[1] < self.victim_refresh_seq(bank, v):
                p = pairs[key] = [0, s]
            p[0] += 1
            p[1] = s
            c = p[0]
            if c > self.peaks.get(key, (0, 0))[0]:
                self.peaks[key] = (c, t)
            if c == self.nrh:
                self.violation_log.append(Violation(t, bank, row, v, c))

        sc = bank // self.scope_banks
        ac = self.act_count[sc]
        n = ac.get((bank, row), 0) + 1
        ac[(bank, row)] = n
        rm = self.row_max[sc]
        if n > rm.get(row, 0):
            rm[row] = n

    def observe_all(self, cmds: Iterable[DramCommand]) -> None:
        for c in cmds:
            self.observe(c)

    # -- queries -------------------------------------------------------------

    def pair_count(self, bank: int, aggressor: int, victim: int) -> int:
        p = self.pairs.get((bank, aggressor, victim))
        if p is None or p[1] < self.victim_refresh_seq(bank, victim):
            return 0
        return p[0]

    def pair_counts(self) -> dict:
        """All currently non-zero pair counts."""
        out = {}
        for (b, a, v), p in self.pairs.items():
            if p[1] >= self.victim_refresh_seq(b, v):
                out[(b, a, v)] = p[0]
        return out

    def max_exposure(self) -> int:
        return max((c for c, _ in self.peaks.values()), default=0)


def check_security(ledger: OracleLedger, nrh) -> list[Violation]:
    """Pairs whose count reached ``nrh`` at any point of the run."""
    if nrh is None or (isinstance(nrh, float) and math.isinf(nrh)):
        return []
    if ledger.nrh == nrh:
        return list(ledger.violation_log)
    # peak times mark when the peak was reached, not the crossing itself
    out = [Violation(t, b, a, v, c) for (b, a, v), (c, t) in ledger.peaks.items() if c >= nrh]
    out.sort(key=lambda x: (x.time, x.bank, x.aggressor, x.victim))
    return out


def check_abacus_invariant(snapshot, ledger: OracleLedger, scope: int = 0) -> bool:
    """RAC(r) >= every sibling's true count, spillover >= every untracked row's.

    ``snapshot`` is ``({row: cumulative RAC}, spillover)`` as returned by
    ``AbacusTable.snapshot``; ``ledger`` counts since the same reset.
    """
    cum, spill = snapshot
    for row, m in ledger.row_max[scope].items():
        bound = cum.get(row)
        if bound is None:
            bound = spill
        if bound < m:
            return False
    return True


def naive_recount(log: Iterable[DramCommand], geometry: DeviceGeometry, timing: TimingParams,
                  blast_radius: int = 1) -> dict:
    """Replay a command log with eager zeroing; used to validate the ledger."""
    n = timing.refs_per_window
    R = geometry.rows_per_bank
    bpr = geometry.banks_per_rank
    counts: dict = {}
    for cmd in log:
        if cmd.kind == REF:
            if cmd.refresh_slice == ALL_ROWS:
                dead = [k for k in counts if k[0] // bpr == cmd.rank]
            else:
                dead = [k for k in counts if k[0] // bpr == cmd.rank
                        and refresh_slice_of(k[2], R, n) == cmd.refresh_slice]
            for k in dead:
                del counts[k]
        elif cmd.kind == ACT:
            if cmd.cause == PREVENTIVE_REFRESH:
                for k in [k for k in counts if k[0] == cmd.bank and k[2] == cmd.row]:
                    del counts[k]
            for v in victims(cmd.row, blast_radius, R):
                key = (cmd.bank, cmd.row, v)
                counts[key] = counts.get(key, 0) + 1
    return counts


def refresh_cycle_duration(timing: TimingParams) -> int:
    return timing.refs_per_window * timing.tRFC


class TimingChecker:
    """Streaming re-check of command legality, independent of the scheduler."""

    def __init__(self, timing: TimingParams, geometry: DeviceGeometry):
        self.timing = timing
        self.geometry = geometry
        self.errors: list[str] = []
        self.n = 0
        self.last_t = 0
        self.last_act_bank: dict = {}
        self.open_row: dict = {}
        self.rank_acts: dict = {}
        self.rank_busy: dict = {}

    def _err(self, msg):
        if len(self.errors) < 1000:
            self.errors.append(f"#{self.n}: {msg}")

    def feed(self, c: DramCommand) -> None:
        tm = self.timing
        t = c.issue_time
        self.n += 1
        if t < self.last_t:
            self._err(f"time goes backwards ({t} < {self.last_t})")
        self.last_t = t
        if c.kind == REF:
            dur = refresh_cycle_duration(tm) if c.refresh_slice == ALL_ROWS else tm.tRFC
            self.rank_busy[c.rank] = max(self.rank_busy.get(c.rank, 0), t + dur)
            for b in self.geometry.banks_of_rank(c.rank):
                if b in self.open_row:
                    self._err(f"REF with bank {b} open")
            return
        rank = c.bank // self.geometry.banks_per_rank
        if c.kind != PRE and t < self.rank_busy.get(rank, 0):
            self._err(f"{c.kind} to bank {c.bank} during refresh")
        if c.kind == ACT:
            if c.bank in self.open_row:
                self._err(f"ACT to bank {c.bank} with row {self.open_row[c.bank]} open")
            la = self.last_act_bank.get(c.bank)
            if la is not None and t - la < tm.tRC:
                self._err(f"tRC violated in bank {c.bank} ({t - la} ps)")
            acts = self.rank_acts.setdefault(rank, [])
            if acts and t - acts[-1] < tm.tRRD:
                self._err(f"tRRD violated in rank {rank}")
            if len(acts) >= 4 and t - acts[-4] < tm.tFAW:
                self._err(f"tFAW violated in rank {rank}")
            acts.append(t)
            if len(acts) > 4:
                del acts[0]
            self.last_act_bank[c.bank] = t
            self.open_row[c.bank] = c.row
        elif c.kind == PRE:
            self.open_row.pop(c.bank, None)
        elif self.open_row.get(c.bank) != c.row:
            self._err(f"{c.kind} to bank {c.bank} row {c.row} not open")


def verify_timing(log: Iterable[DramCommand], timing: TimingParams,
                  geometry: DeviceGeometry) -> list[str]:
    """Re-check a whole command log; returns human-readable errors."""
    chk = TimingChecker(timing, geometry)
    for c in log:
        chk.feed(c)
    return chk.errors


def dense_row_counts(rows, n_rows: int) -> np.ndarray:
    """Activation count per row ID from an iterable of row IDs (count-only mode)."""
    arr = rows if isinstance(rows, np.ndarray) else np.fromiter(rows, dtype=np.int64)
    return np.bincount(arr, minlength=n_rows)
