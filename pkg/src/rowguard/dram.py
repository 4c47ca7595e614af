"""DRAM topology, timing constants and command legality.

All times are integer picoseconds. Public constructors accept nanoseconds
(``TimingParams.from_ns``) and convert once.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator, Optional

from .errors import ConfigError, StructuralError

PS_PER_NS = 1000

ACT = "ACT"
PRE = "PRE"
RD = "RD"
WR = "WR"
REF = "REF"
COMMAND_KINDS = (ACT, PRE, RD, WR, REF)

DEMAND = "demand"
PERIODIC_REFRESH = "periodic_refresh"
PREVENTIVE_REFRESH = "preventive_refresh"
MITIGATION_TRAFFIC = "mitigation_traffic"
CAUSES = (DEMAND, PERIODIC_REFRESH, PREVENTIVE_REFRESH, MITIGATION_TRAFFIC)

# REF.refresh_slice value meaning "every row of the rank" (ABACuS refresh cycle).
ALL_ROWS = -1


def ns_to_ps(value) -> int:
    return int(round(float(value) * PS_PER_NS))


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class DeviceGeometry:
    channels: int = 1
    ranks_per_channel: int = 2
    bankgroups_per_rank: int = 4
    banks_per_bankgroup: int = 4
    rows_per_bank: int = 128 * 1024
    columns_per_row: int = 128  # cacheline-sized columns (8 KiB rows)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or not _is_pow2(v):
                raise ConfigError(f"{f.name} must be a power of two >= 1, got {v!r}")

    @property
    def banks_per_rank(self) -> int:
        return self.bankgroups_per_rank * self.banks_per_bankgroup

    @property
    def banks_per_channel(self) -> int:
        return self.ranks_per_channel * self.banks_per_rank

    @property
    def total_banks(self) -> int:
        return self.channels * self.banks_per_channel

    @property
    def total_ranks(self) -> int:
        return self.channels * self.ranks_per_channel

    def bank_index(self, channel: int, rank: int, bankgroup: int, bank: int) -> int:
        """Flat bank id; consecutive ids walk bank, then bankgroup, rank, channel."""
        return ((channel * self.ranks_per_channel + rank) * self.bankgroups_per_rank
                + bankgroup) * self.banks_per_bankgroup + bank

    def split_bank(self, g: int) -> tuple[int, int, int, int]:
        bank = g % self.banks_per_bankgroup
        g //= self.banks_per_bankgroup
        bg = g % self.bankgroups_per_rank
        g //= self.bankgroups_per_rank
        rank = g % self.ranks_per_channel
        return g // self.ranks_per_channel, rank, bg, bank

    def rank_of(self, g: int) -> int:
        """Flat rank id (channel-major) of flat bank ``g``."""
        return g // self.banks_per_rank

    def banks_of_rank(self, r: int) -> range:
        return range(r * self.banks_per_rank, (r + 1) * self.banks_per_rank)

    def capacity_bytes(self, cacheline_bytes: int = 64) -> int:
        return self.total_banks * self.rows_per_bank * self.columns_per_row * cacheline_bytes


@dataclass(frozen=True)
class TimingParams:
    """DDR4-style timing constants in picoseconds."""

    tRC: int = 45_000
    tRRD: int = 2_500
    tFAW: int = 21_000
    tREFI: int = 7_900_000
    tREFW: int = 64_000_000_000
    tRFC: int = 350_000
    clock_period: int = 625  # 1.6 GHz memory-controller clock

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int):
                raise ConfigError(f"{f.name} must be integer picoseconds, got {v!r}")
            if v < 0 or (v == 0 and f.name not in ("tRFC", "tRRD")):
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.tFAW < self.tRRD:
            raise ConfigError("tFAW must be >= tRRD")
        if self.tRC <= self.tRRD:
            raise ConfigError("tRC must be > tRRD")
        if self.tRFC >= self.tREFI:
            raise ConfigError("tRFC must be < tREFI")

    @classmethod
    def from_ns(cls, **kwargs) -> "TimingParams":
        return cls(**{k: ns_to_ps(v) for k, v in kwargs.items()})

    @property
    def refs_per_window(self) -> int:
        # 64ms / 7.9us is not integral; partial trailing interval is dropped.
        return max(1, self.tREFW // self.tREFI)

    @property
    def burst(self) -> int:
        return 4 * self.clock_period

    def scaled(self, tREFW_ps: int) -> "TimingParams":
        return replace(self, tREFW=int(tREFW_ps))

    def as_ns(self) -> dict:
        return {f.name: getattr(self, f.name) / PS_PER_NS for f in fields(self)}


@dataclass(slots=True)
class DramCommand:
    kind: str
    rank: int
    bank: Optional[int]
    row: Optional[int]
    issue_time: int
    cause: str = DEMAND
    refresh_slice: Optional[int] = None

    def __post_init__(self):
        if self.kind not in COMMAND_KINDS:
            raise StructuralError(f"unknown command kind {self.kind!r}")
        if self.cause not in CAUSES:
            raise StructuralError(f"unknown cause {self.cause!r}")


@dataclass
class RankState:
    """ACT history shared by every bank of a rank (tRRD / tFAW)."""

    recent_acts: deque = field(default_factory=lambda: deque(maxlen=4))

    @property
    def last_act(self) -> Optional[int]:
        return self.recent_acts[-1] if self.recent_acts else None


@dataclass
class BankState:
    rank: int = 0
    open_row: Optional[int] = None
    last_act_time: Optional[int] = None
    last_pre_time: Optional[int] = None
    busy_until: int = 0
    act_history_rank: RankState = field(default_factory=RankState)

    def record(self, cmd: DramCommand, timing: TimingParams) -> None:
        """Apply an already-legal command to the bank state."""
        t = cmd.issue_time
        if cmd.kind == ACT:
            self.open_row = cmd.row
            self.last_act_time = t
            self.act_history_rank.recent_acts.append(t)
        elif cmd.kind == PRE:
            self.open_row = None
            self.last_pre_time = t
        elif cmd.kind in (RD, WR):
            self.busy_until = max(self.busy_until, t + timing.burst)
        elif cmd.kind == REF:
            self.open_row = None
            dur = timing.tRFC
            if cmd.refresh_slice == ALL_ROWS:
                dur *= timing.refs_per_window
            self.busy_until = max(self.busy_until, t + dur)


def legality_check(cmd: DramCommand, state: BankState, timing: TimingParams,
                   geometry: Optional[DeviceGeometry] = None) -> int:
    """Earliest time >= ``cmd.issue_time`` at which ``cmd`` may issue."""
    if cmd.kind == ACT:
        if cmd.row is None or cmd.row < 0 or (
                geometry is not None and cmd.row >= geometry.rows_per_bank):
            raise StructuralError(f"ACT row {cmd.row!r} out of range")
    if geometry is not None and cmd.bank is not None and not 0 <= cmd.bank < geometry.total_banks:
        raise StructuralError(f"bank {cmd.bank} out of range")

    t = max(cmd.issue_time, state.busy_until)
    if cmd.kind != ACT:
        return t
    if state.last_act_time is not None:
        t = max(t, state.last_act_time + timing.tRC)
    acts = state.act_history_rank.recent_acts
    if acts:
        t = max(t, acts[-1] + timing.tRRD)
        if len(acts) == 4:
            t = max(t, acts[0] + timing.tFAW)
    return t


def max_acts_per_refresh_window(timing: TimingParams) -> int:
    return (timing.tREFW // timing.tFAW) * 4


def refresh_slice_of(row: int, rows_per_bank: int, refs_per_window: int) -> int:
    """Index of the periodic REF (within a window) that refreshes ``row``."""
    return row * refs_per_window // rows_per_bank


def slice_rows(k: int, rows_per_bank: int, refs_per_window: int) -> range:
    lo = -(-k * rows_per_bank // refs_per_window)
    hi = -(-(k + 1) * rows_per_bank // refs_per_window)
    return range(lo, hi)


class PeriodicRefresher:
    """Emits one REF per rank at every tREFI boundary.

    The k-th REF since time zero refreshes row slice ``k mod N`` where
    N = tREFW // tREFI, so each row is refreshed once every N REFs.
    """

    def __init__(self, timing: TimingParams, geometry: DeviceGeometry):
        self.timing = timing
        self.geometry = geometry
        self.issued = 0  # boundaries crossed so far

    @property
    def next_boundary(self) -> int:
        return (self.issued + 1) * self.timing.tREFI

    def tick(self, now: int) -> list[DramCommand]:
        out = []
        n = self.timing.refs_per_window
        while self.next_boundary <= now:
            t = self.next_boundary
            k = self.issued % n
            for r in range(self.geometry.total_ranks):
                out.append(DramCommand(REF, r, None, None, t, PERIODIC_REFRESH, k))
            self.issued += 1
        return out


def saturate_rank(timing: TimingParams, geometry: DeviceGeometry, window: int,
                  rows: Optional[Iterable[int]] = None) -> Iterator[tuple[int, int, int]]:
    """Greedy ACT generator for one rank, ignoring periodic refresh.

    Banks are visited round-robin and every ACT issues at the earliest time
    ``legality_check`` allows. Yields ``(time, bank, row)`` for each ACT
    issued strictly before ``window``.
    """
    rank = RankState()
    nb = geometry.banks_per_rank
    banks = [BankState(act_history_rank=rank) for _ in range(nb)]
    row_iter = iter(rows) if rows is not None else None
    i = 0
    now = 0
    while True:
        b = i % nb
        row = next(row_iter) if row_iter is not None else 0
        cmd = DramCommand(ACT, 0, b, row, now)
        t = legality_check(cmd, banks[b], timing)
        if t >= window:
            return
        cmd.issue_time = t
        banks[b].record(cmd, timing)
        now = t
        i += 1
        yield t, b, row


_GEOMETRY_KEYS = {f.name for f in fields(DeviceGeometry)}
_TIMING_KEYS = {f.name for f in fields(TimingParams)}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def build_geometry_timing(values: dict, geometry: Optional[DeviceGeometry] = None,
                          timing: Optional[TimingParams] = None):
    """Split a flat key/value mapping into geometry, timing and leftovers.

    Timing values are nanoseconds.
    """
    geometry = geometry or DeviceGeometry()
    timing = timing or TimingParams()
    g_kw, t_kw, rest = {}, {}, {}
    for k, v in values.items():
        if k in _GEOMETRY_KEYS:
            try:
                g_kw[k] = int(v)
            except ValueError:
                raise ConfigError(f"{k} must be an integer, got {v!r}") from None
        elif k in _TIMING_KEYS:
            try:
                t_kw[k] = ns_to_ps(v)
            except ValueError:
                raise ConfigError(f"{k} must be a number of ns, got {v!r}") from None
        else:
            rest[k] = v
    return replace(geometry, **g_kw), replace(timing, **t_kw), rest
