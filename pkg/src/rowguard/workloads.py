"""Trace files, synthetic generators and sibling-locality analysis."""
from __future__ import annotations

import io
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .addrmap import MappingScheme
from .errors import ConfigError, TraceParseError

FORMAT_VERSION = 1
HEADER_TAG = "rowguard-trace"
# generators stay below this many top rows per bank (Hydra keeps its counters there)
RESERVED_TOP_ROWS = 32

READ, WRITE = "R", "W"


class MemRequest(NamedTuple):
    tick_delta: int
    op: str
    phys_addr: int


@dataclass(frozen=True)
class TraceHeader:
    format_version: int = FORMAT_VERSION
    capacity: Optional[int] = None
    comment: str = ""

    def render(self) -> str:
        cap = f" capacity={self.capacity:#x}" if self.capacity is not None else ""
        com = f" {self.comment}" if self.comment else ""
        return f"# {HEADER_TAG} v{self.format_version}{cap}{com}"

    @classmethod
    def parse(cls, line: str) -> "TraceHeader":
        parts = line.lstrip("#").split()
        if len(parts) < 2 or parts[0] != HEADER_TAG or not parts[1].startswith("v"):
            raise TraceParseError(f"not a trace header: {line!r}")
        try:
            version = int(parts[1][1:])
        except ValueError:
            raise TraceParseError(f"bad version in header: {line!r}") from None
        if version != FORMAT_VERSION:
            raise TraceParseError(f"unsupported trace version {version}")
        cap = None
        rest = parts[2:]
        if rest and rest[0].startswith("capacity="):
            cap = int(rest.pop(0).split("=", 1)[1], 0)
        return cls(version, cap, " ".join(rest))


def _parse_line(line: str, n: int, path, capacity) -> MemRequest:
    parts = line.split()
    if len(parts) != 3:
        raise TraceParseError(f"expected '<ticks> <R|W> 0x<addr>', got {line!r}", n, path)
    ticks, op, addr = parts
    try:
        td = int(ticks)
    except ValueError:
        raise TraceParseError(f"bad tick delta {ticks!r}", n, path) from None
    if td < 0:
        raise TraceParseError("negative tick delta", n, path)
    if op not in (READ, WRITE):
        raise TraceParseError(f"bad op {op!r}", n, path)
    if not addr.lower().startswith("0x"):
        raise TraceParseError(f"address must be hex with 0x prefix, got {addr!r}", n, path)
    try:
        a = int(addr, 16)
    except ValueError:
        raise TraceParseError(f"bad address {addr!r}", n, path) from None
    if capacity is not None and a >= capacity:
        raise TraceParseError(f"address {addr} beyond capacity {capacity:#x}", n, path)
    return MemRequest(td, op, a)


def iter_trace_lines(lines: Iterable[str], path=None, capacity=None) -> Iterator[MemRequest]:
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith(HEADER_TAG):
                h = TraceHeader.parse(line)
                if capacity is None:
                    capacity = h.capacity
            continue
        yield _parse_line(line, n, path, capacity)


def parse_trace(path, capacity: Optional[int] = None) -> Iterator[MemRequest]:
    """Stream requests from a trace file."""
    with open(path) as f:
        yield from iter_trace_lines(f, str(path), capacity)


def read_header(path) -> Optional[TraceHeader]:
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#") and HEADER_TAG in line:
                return TraceHeader.parse(line)
            if not line.startswith("#"):
                return None
    return None


def write_trace(path_or_file, requests: Iterable[MemRequest],
                header: Optional[TraceHeader] = None) -> int:
    """Write requests in trace format; returns the number written."""
    own = not isinstance(path_or_file, io.TextIOBase)
    f = open(path_or_file, "w") if own else path_or_file
    try:
        f.write((header or TraceHeader()).render() + "\n")
        n = 0
        for r in requests:
            f.write(f"{r.tick_delta} {r.op} {r.phys_addr:#x}\n")
            n += 1
        return n
    finally:
        if own:
            f.close()


# --- generators -------------------------------------------------------------

PREFETCH_DEGREE = {"none": 0, "p1": 1, "p8": 8, "p32": 32}


def usable_rows(mapping: MappingScheme) -> int:
    r = mapping.geometry.rows_per_bank
    return r - RESERVED_TOP_ROWS if r > 2 * RESERVED_TOP_ROWS else r


def _default_base(mapping: MappingScheme) -> int:
    return usable_rows(mapping) // 4


def gen_manysided(mapping: MappingScheme, rows: int = 2, prefetch: str = "none",
                  length: int = 10_000, bank: int = 0, base_row: Optional[int] = None,
                  gap: int = 32) -> Iterator[MemRequest]:
    """Hammer ``rows`` aggressors (base, base+2, ...) sandwiching victims.

    ``length`` counts base accesses; each is followed by ``prefetch`` next-line
    reads issued back to back.
    """
    if rows < 1 or length < 0:
        raise ConfigError("rows and length must be positive")
    if prefetch not in PREFETCH_DEGREE:
        raise ConfigError(f"prefetch must be one of {sorted(PREFETCH_DEGREE)}")
    deg = PREFETCH_DEGREE[prefetch]
    base = _default_base(mapping) if base_row is None else base_row
    if base + 2 * (rows - 1) >= usable_rows(mapping):
        raise ConfigError("aggressor rows exceed the bank")
    addrs = [mapping.encode_flat(bank, base + 2 * i, 0) for i in range(rows)]
    cap = mapping.capacity
    line = mapping.cacheline_bytes
    for i in range(length):
        a = addrs[i % rows]
        yield MemRequest(gap, READ, a)
        for j in range(1, deg + 1):
            yield MemRequest(0, READ, (a + j * line) % cap)


def gen_doublesided(mapping: MappingScheme, prefetch: str = "none", length: int = 10_000,
                    **kw) -> Iterator[MemRequest]:
    return gen_manysided(mapping, 2, prefetch, length, **kw)


def gen_rowhammer_attack(mapping: MappingScheme, length: int = 10_000, rows: int = 32,
                         base_row: Optional[int] = None, gap: int = 32) -> Iterator[MemRequest]:
    """Cycle 32 rows over every bank, banks fastest; one request per ``gap`` ticks."""
    g = mapping.geometry
    base = _default_base(mapping) if base_row is None else base_row
    nb = g.total_banks
    row_ids = [base + 2 * i for i in range(rows)]
    if row_ids[-1] >= usable_rows(mapping):
        raise ConfigError("attack rows exceed the bank")
    for i in range(length):
        b = i % nb
        r = row_ids[(i // nb) % rows]
        yield MemRequest(gap, READ, mapping.encode_flat(b, r, 0))


def gen_roundrobin(mapping: MappingScheme, length: int = 10_000, banks: Optional[int] = None,
                   rows: int = 64, base_row: Optional[int] = None,
                   gap: int = 8) -> Iterator[MemRequest]:
    """Same row ID in banks 0..banks-1 in turn, then the next row ID."""
    g = mapping.geometry
    nb = g.total_banks if banks is None else banks
    if not 1 <= nb <= g.total_banks:
        raise ConfigError("banks out of range")
    base = _default_base(mapping) if base_row is None else base_row
    rows = min(rows, usable_rows(mapping) - base)
    for i in range(length):
        b = i % nb
        r = base + (i // nb) % rows
        yield MemRequest(gap, READ, mapping.encode_flat(b, r, 0))


def gen_gups(mapping: MappingScheme, length: int = 10_000, seed: int = 0,
             write_fraction: float = 0.5, gap: int = 4) -> Iterator[MemRequest]:
    """Independent uniform random read-modify-write style accesses."""
    rng = random.Random(seed)
    g = mapping.geometry
    nr = usable_rows(mapping)
    for _ in range(length):
        b = rng.randrange(g.total_banks)
        r = rng.randrange(nr)
        c = rng.randrange(g.columns_per_row)
        op = WRITE if rng.random() < write_fraction else READ
        yield MemRequest(gap, op, mapping.encode_flat(b, r, c))


def gups_row_sequence(n_rows: int, count: int, seed: int = 0) -> np.ndarray:
    """``count`` row IDs drawn randomly and evenly: shuffled full sweeps of all rows."""
    rng = np.random.default_rng(seed)
    sweeps = -(-count // n_rows)
    out = np.empty(sweeps * n_rows, dtype=np.int64)
    for s in range(sweeps):
        out[s * n_rows:(s + 1) * n_rows] = rng.permutation(n_rows)
    return out[:count]


def hydra_adversarial_shape(mapping: MappingScheme, rcc_entries: int, group_size: int,
                            rank: int = 0) -> tuple[list[int], list[int]]:
    """Banks of one rank and the aggressor rows (every other row) to sweep.

    The odd rows in between are the victims. Rows 0 mod 4 are swept before
    rows 2 mod 4, so the two refreshes a victim receives (one per neighbour)
    are half a sweep apart; the aggressor set is sized so that half a sweep
    already exceeds the cache.
    """
    g = mapping.geometry
    banks = list(g.banks_of_rank(rank))
    per_group = group_size // 2
    groups = -(-2 * (rcc_entries + 1) // (len(banks) * per_group))
    first = max(1, _default_base(mapping) // group_size)
    if (first + groups) * group_size > usable_rows(mapping):
        raise ConfigError("geometry too small for the Hydra adversarial pattern")
    lo, hi = first * group_size, (first + groups) * group_size
    rows = list(range(lo, hi, 4)) + list(range(lo + 2, hi, 4))
    return banks, rows


def gen_hydra_adversarial(mapping: MappingScheme, length: int = 100_000, *,
                          gct_threshold: int = 200, rcc_entries: int = 4096,
                          group_size: int = 128, rank: int = 0,
                          gap: int = 8) -> Iterator[MemRequest]:
    """Warm more row groups than the counter cache holds, then sweep them.

    Phase one pushes every chosen group past the group-count threshold; phase
    two activates the aggressor rows of those groups round-robin, so with LRU
    every activation misses the cache, and so does every victim refresh.
    """
    banks, rows = hydra_adversarial_shape(mapping, rcc_entries, group_size, rank)
    groups = sorted({r // group_size for r in rows})
    n = 0
    # phase 1: each (bank, group) gets gct_threshold ACTs on alternating rows
    for k in range(gct_threshold):
        for gi in groups:
            r = gi * group_size + (2 * k) % group_size
            for b in banks:
                if n >= length:
                    return
                yield MemRequest(gap, READ, mapping.encode_flat(b, r, 0))
                n += 1
    i = 0
    nb = len(banks)
    while n < length:
        r = rows[(i // nb) % len(rows)]
        yield MemRequest(gap, READ, mapping.encode_flat(banks[i % nb], r, 0))
        n += 1
        i += 1


def gen_abacus_adversarial(mapping: MappingScheme, length: int = 100_000, *,
                           n_entries: int = 5440, gap: int = 4) -> Iterator[MemRequest]:
    """Sweep more distinct row IDs than the table holds, rotating over banks."""
    g = mapping.geometry
    nr = usable_rows(mapping)
    span = min(nr, max(2 * n_entries, n_entries + 64))
    if span <= n_entries:
        raise ConfigError("bank has too few rows to outnumber the counter table")
    nb = g.total_banks
    for i in range(length):
        yield MemRequest(gap, READ, mapping.encode_flat(i % nb, i % span, 0))


GENERATORS = ("ds", "ms", "rh-attack", "hydra-adv", "abacus-adv", "gups", "roundrobin")


def parse_gen_spec(spec: str) -> tuple[str, dict]:
    """``name[:k=v,...]`` -> (name, params) with ints converted."""
    name, _, rest = spec.partition(":")
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    params = {}
    for item in filter(None, rest.split(",")):
        if "=" not in item:
            raise ConfigError(f"generator parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            params[k.strip()] = int(v, 0)
        except ValueError:
            try:
                params[k.strip()] = float(v)
            except ValueError:
                params[k.strip()] = v.strip()
    return name, params


def make_generator(name: str, mapping: MappingScheme, params: Optional[dict] = None, *,
                   seed: int = 0, hydra_cfg=None, abacus_entries: Optional[int] = None):
    """Build a shipped generator by name; ``params`` override defaults."""
    p = dict(params or {})
    if name == "ds":
        return gen_manysided(mapping, rows=2, **p)
    if name == "ms":
        p.setdefault("rows", 8)
        return gen_manysided(mapping, **p)
    if name == "rh-attack":
        return gen_rowhammer_attack(mapping, **p)
    if name == "roundrobin":
        return gen_roundrobin(mapping, **p)
    if name == "gups":
        p.setdefault("seed", seed)
        return gen_gups(mapping, **p)
    if name == "hydra-adv":
        if hydra_cfg is not None:
            p.setdefault("gct_threshold", hydra_cfg.gct_threshold)
            p.setdefault("rcc_entries", hydra_cfg.rcc_entries)
            p.setdefault("group_size", hydra_cfg.group_size)
        return gen_hydra_adversarial(mapping, **p)
    if name == "abacus-adv":
        if abacus_entries is not None:
            p.setdefault("n_entries", abacus_entries)
        return gen_abacus_adversarial(mapping, **p)
    raise ConfigError(f"unknown generator {name!r}")


# --- sibling locality -------------------------------------------------------

def activations_from_trace(trace: Iterable[MemRequest], mapping: MappingScheme):
    """(bank, row) ACT events implied by an open-row policy, in trace order."""
    open_row: dict = {}
    for req in trace:
        b, r, _ = mapping.decode_flat(req.phys_addr)
        if open_row.get(b) != r:
            open_row[b] = r
            yield b, r


def sibling_locality_metrics(trace: Iterable[MemRequest], mapping: MappingScheme,
                             geometry=None, nrh=(500, 250, 125)) -> dict:
    """Sibling-activation statistics of a trace.

    ``mean_siblings_before_repeat``: for every ACT, the number of other banks
    that activated the same row ID within the ACT's epoch (an epoch of a row
    ID ends when a bank activates it a second time), averaged over ACTs.

    ``at_threshold``: for each nrh, the other siblings' counts at the moment
    any sibling of a row ID first reaches nrh.
    """
    geometry = geometry or mapping.geometry
    if isinstance(nrh, int):
        nrh = (nrh,)
    nb = geometry.banks_per_channel
    epoch: dict = {}
    total = 0
    acts = 0
    counts: dict = {}
    fired = {t: set() for t in nrh}
    samples = {t: [] for t in nrh}
    for b, r in activations_from_trace(trace, mapping):
        acts += 1
        s = epoch.get(r)
        if s is None:
            epoch[r] = {b}
        elif b in s:
            total += len(s) * (len(s) - 1)
            epoch[r] = {b}
        else:
            s.add(b)
        key = (b // nb, r)
        c = counts.get(key)
        if c is None:
            c = counts[key] = [0] * nb
        lb = b % nb
        c[lb] += 1
        for t in nrh:
            if c[lb] == t and key not in fired[t]:
                fired[t].add(key)
                samples[t].append([c[i] for i in range(nb) if i != lb])
    for s in epoch.values():
        total += len(s) * (len(s) - 1)

    at = {}
    for t in nrh:
        arr = np.asarray(samples[t], dtype=np.int64).reshape(-1, nb - 1)
        at[str(t)] = {
            "events": int(arr.shape[0]),
            "mean_sibling_count": float(arr.mean()) if arr.size else 0.0,
            "max_sibling_count": int(arr.max()) if arr.size else 0,
            "fraction_siblings_zero": float((arr == 0).mean()) if arr.size else 0.0,
        }
    return {
        "acts": acts,
        "mean_siblings_before_repeat": total / acts if acts else 0.0,
        "at_threshold": at,
    }
