"""Request-level memory controller: FR-FCFS scheduling over the timing model.

Time advances event by event. Each bank with pending work has one entry in
a lazy heap keyed by a lower bound on the time its next command can issue;
on pop the bound is recomputed and the entry re-pushed if it moved.
Mitigation work (preventive refreshes, counter traffic) preempts demand
requests in the same bank.
"""
from __future__ import annotations

import heapq
from collections import deque
from typing import Callable, Iterable, Optional

import numpy as np

from .addrmap import MappingScheme
from .dram import (ACT, ALL_ROWS, CAUSES, DEMAND, MITIGATION_TRAFFIC, PERIODIC_REFRESH, PRE,
                   PREVENTIVE_REFRESH, RD, REF, WR, BankState, DeviceGeometry, DramCommand,
                   RankState, TimingParams, legality_check)
from .errors import AddressRangeError
from .mitigation import Mitigation, NoMitigation

# labeled proxy weights (pJ per command); not a calibrated power model
DEFAULT_ENERGY_WEIGHTS = {ACT: 1000.0, PRE: 500.0, RD: 250.0, WR: 270.0, REF: 30000.0}

class _Req:
    __slots__ = ("arrival", "op", "row", "col")

    def __init__(self, arrival, op, row, col):
        self.arrival = arrival
        self.op = op
        self.row = row
        self.col = col


class MemoryController:
    def __init__(self, geometry: DeviceGeometry, timing: TimingParams,
                 mapping: MappingScheme, mitigation: Optional[Mitigation] = None, *,
                 queue_cap: int = 64, column_cap: int = 16,
                 reset_window: Optional[int] = None,
                 sinks: Iterable[Callable] = (),
                 after_activate: Optional[Callable] = None,
                 on_epoch: Optional[Callable] = None,
                 energy_weights: Optional[dict] = None):
        self.geometry = geometry
        self.mitigation = mitigation or NoMitigation()
        self.timing = self.mitigation.adjust_timing(timing)
        self.mapping = mapping
        self.queue_cap = queue_cap
        self.column_cap = column_cap
        self.reset_window = reset_window or self.timing.tREFW
        self.sinks = list(sinks)
        self.after_activate = after_activate
        self.on_epoch = on_epoch
        self.energy_weights = dict(DEFAULT_ENERGY_WEIGHTS, **(energy_weights or {}))
        self.reserved_start = getattr(self.mitigation, "reserved_start", None)

        nb = geometry.total_banks
        bpr = geometry.banks_per_rank
        self.ranks = [RankState() for _ in range(geometry.total_ranks)]
        self.banks = [BankState(rank=b // bpr, act_history_rank=self.ranks[b // bpr])
                      for b in range(nb)]
        self.open_cause = [DEMAND] * nb
        self.demand = [deque() for _ in range(nb)]
        # preventive refreshes are served before counter traffic, which is
        # served before demand
        self.mref = [deque() for _ in range(nb)]
        self.mops = [deque() for _ in range(nb)]
        self.hits = [0] * nb
        self.version = [0] * nb
        self.heap: list = []
        self.now = 0
        self.ref_issued = 0

        # statistics
        self.cmd_counts = {k: 0 for k in (ACT, PRE, RD, WR, REF)}
        self.acts_by_cause = {c: 0 for c in CAUSES}
        self.preventive_refreshes = 0
        self.refresh_cycles = 0
        self.mitigation_traffic_cmds = 0
        self.requests_in = 0
        self.requests_done = 0
        self.latencies: list = []
        self.busy_preventive = [0] * nb
        self._union_start = None
        self._union_end = 0
        self.unavailable_time = 0
        self.last_time = 0

    # -- emission ------------------------------------------------------------

    def _emit(self, cmd: DramCommand) -> None:
        self.cmd_counts[cmd.kind] += 1
        self.last_time = cmd.issue_time
        for s in self.sinks:
            s(cmd)

    def _unavailable(self, start, end):
        if self._union_start is None:
            self._union_start, self._union_end = start, end
        elif start <= self._union_end:
            self._union_end = max(self._union_end, end)
        else:
            self.unavailable_time += self._union_end - self._union_start
            self._union_start, self._union_end = start, end

    def _push(self, b: int, t: int) -> None:
        self.version[b] += 1
        heapq.heappush(self.heap, (t, b, self.version[b]))

    # -- mitigation plumbing -------------------------------------------------

    def _apply(self, action, t: int) -> None:
        if action is None:
            return
        if action.refresh_cycle:
            self._refresh_cycle(action.refresh_cycle, t)
        touched = set()
        for b, r in action.refreshes:
            self.mref[b].append(r)
            touched.add(b)
        for b, r, op in action.traffic:
            self.mops[b].append((r, op))
            touched.add(b)
        for b in touched:
            self._push(b, t)

    def _close(self, b: int, t: int) -> None:
        st = self.banks[b]
        if st.open_row is None:
            return
        row = st.open_row
        cmd = DramCommand(PRE, st.rank, b, row, t, self.open_cause[b])
        st.record(cmd, self.timing)
        self._emit(cmd)
        self._apply(self.mitigation.on_precharge(b, row, t, self.open_cause[b]), t)

    def _refresh_cycle(self, ranks, t: int) -> None:
        dur = self.timing.refs_per_window * self.timing.tRFC
        banks = []
        for r in ranks:
            rb = list(self.geometry.banks_of_rank(r))
            banks.extend(rb)
            for b in rb:
                self._close(b, t)
            cmd = DramCommand(REF, r, None, None, t, PREVENTIVE_REFRESH, ALL_ROWS)
            for b in rb:
                self.banks[b].record(cmd, self.timing)
                self.mref[b].clear()  # everything is refreshed anyway
            self._emit(cmd)
        self.refresh_cycles += 1
        self._unavailable(t, t + dur)
        if self.on_epoch is not None:
            self.on_epoch(banks)

    def _periodic_refresh(self, t: int) -> None:
        n = self.timing.refs_per_window
        k = self.ref_issued % n
        self.ref_issued += 1
        for r in range(self.geometry.total_ranks):
            rb = self.geometry.banks_of_rank(r)
            for b in rb:
                self._close(b, t)
            cmd = DramCommand(REF, r, None, None, t, PERIODIC_REFRESH, k)
            for b in rb:
                self.banks[b].record(cmd, self.timing)
            self._emit(cmd)

    # -- scheduling ----------------------------------------------------------

    def _candidate(self, b: int):
        """(time, kind, row, cause, source) of the bank's next command."""
        st = self.banks[b]
        now = self.now
        if self.mref[b]:
            row = self.mref[b][0]
            t = legality_check(DramCommand(ACT, st.rank, b, row, now, PREVENTIVE_REFRESH),
                               st, self.timing)
            return t, ACT, row, PREVENTIVE_REFRESH, "m"
        if self.mops[b]:
            row, op = self.mops[b][0]
            if st.open_row == row:
                return max(now, st.busy_until), op, row, MITIGATION_TRAFFIC, "m"
            t = legality_check(DramCommand(ACT, st.rank, b, row, now, MITIGATION_TRAFFIC),
                               st, self.timing)
            return t, ACT, row, MITIGATION_TRAFFIC, "m"
        q = self.demand[b]
        if not q:
            return None
        pick = None
        if st.open_row is not None and self.hits[b] < self.column_cap:
            for i, r in enumerate(q):
                if r.row == st.open_row:
                    pick = i
                    break
        if pick is None:
            pick = 0
        req = q[pick]
        if req.row == st.open_row:
            return max(now, st.busy_until), req.op, req.row, DEMAND, pick
        t = legality_check(DramCommand(ACT, st.rank, b, req.row, now, DEMAND), st, self.timing)
        return t, ACT, req.row, DEMAND, pick

    def _issue(self, b: int, cand) -> None:
        t, kind, row, cause, src = cand
        st = self.banks[b]
        if kind == ACT:
            self._close(b, t)
            cmd = DramCommand(ACT, st.rank, b, row, t, cause)
            st.record(cmd, self.timing)
            self.open_cause[b] = cause
            self.hits[b] = 0
            self.acts_by_cause[cause] += 1
            self._emit(cmd)
            if cause != DEMAND:
                self.busy_preventive[b] += self.timing.tRC
                self._unavailable(t, t + self.timing.tRC)
            if cause == PREVENTIVE_REFRESH:
                self.preventive_refreshes += 1
                self.mref[b].popleft()
            elif cause == MITIGATION_TRAFFIC:
                self.mitigation_traffic_cmds += 1
            self._apply(self.mitigation.on_activate(b, row, t, cause), t)
            if self.after_activate is not None:
                self.after_activate(b, row, t, cause)
        else:
            cmd = DramCommand(kind, st.rank, b, row, t, cause)
            st.record(cmd, self.timing)
            self._emit(cmd)
            self.hits[b] += 1
            if src == "m":
                self.mops[b].popleft()
                self.mitigation_traffic_cmds += 1
                self.busy_preventive[b] += self.timing.burst
            else:
                req = self.demand[b][src]
                del self.demand[b][src]
                self.latencies.append(t + self.timing.burst - req.arrival)
                self.requests_done += 1
        if self.mref[b] or self.mops[b] or self.demand[b]:
            self._push(b, t)

    # -- main loop -----------------------------------------------------------

    def run(self, trace: Iterable, until: Optional[int] = None) -> None:
        """Replay ``trace`` (MemRequest-like tuples) to completion or ``until`` ps."""
        tick = self.timing.clock_period
        it = iter(trace)
        pending = next(it, None)
        next_arrival = pending.tick_delta * tick if pending is not None else None
        next_ref = self.timing.tREFI * (self.ref_issued + 1)
        next_reset = self.reset_window
        decode = self.mapping.decode_flat
        heap = self.heap
        outstanding = 0
        INF = float("inf")

        while True:
            can_arrive = pending is not None and outstanding < self.queue_cap
            ta = max(next_arrival, self.now) if can_arrive else INF
            # drop stale heap entries
            while heap and heap[0][2] != self.version[heap[0][1]]:
                heapq.heappop(heap)
            tc = heap[0][0] if heap else INF
            if ta == INF and tc == INF:
                break
            tev = min(ta, next_ref, next_reset)
            if until is not None and min(tev, tc) >= until:
                break
            if tc < tev:
                _, b, _ = heapq.heappop(heap)
                cand = self._candidate(b)
                if cand is None:
                    continue
                if cand[0] > tc:
                    self._push(b, cand[0])
                    continue
                self.now = cand[0]
                was = self.requests_done
                self._issue(b, cand)
                outstanding -= self.requests_done - was
                continue

            self.now = tev
            if tev == next_reset:
                self.mitigation.periodic_reset(tev)
                if self.on_epoch is not None:
                    self.on_epoch(None)
                next_reset += self.reset_window
            elif tev == next_ref:
                self._periodic_refresh(tev)
                next_ref += self.timing.tREFI
            else:
                b, row, col = decode(pending.phys_addr)
                if self.reserved_start is not None and row >= self.reserved_start:
                    raise AddressRangeError(
                        f"demand access to row {row} inside the mitigation's reserved rows")
                self.demand[b].append(_Req(ta, WR if pending.op == "W" else RD, row, col))
                self.requests_in += 1
                outstanding += 1
                self._push(b, ta)
                pending = next(it, None)
                if pending is not None:
                    next_arrival = ta + pending.tick_delta * tick
        if self._union_start is not None:
            self.unavailable_time += self._union_end - self._union_start
            self._union_start = None

    # -- results -------------------------------------------------------------

    @property
    def in_flight(self) -> int:
        return sum(len(q) for q in self.demand)

    def latency_summary(self) -> dict:
        if not self.latencies:
            return {"mean_ns": 0.0, "max_ns": 0.0, "p50_ns": 0.0, "p95_ns": 0.0, "p99_ns": 0.0}
        a = np.asarray(self.latencies, dtype=np.float64) / 1000.0
        p50, p95, p99 = np.percentile(a, [50, 95, 99])
        return {"mean_ns": float(a.mean()), "max_ns": float(a.max()),
                "p50_ns": float(p50), "p95_ns": float(p95), "p99_ns": float(p99)}

    def energy_proxy(self) -> float:
        return float(sum(self.energy_weights[k] * n for k, n in self.cmd_counts.items()))
