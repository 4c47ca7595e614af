"""Experiment driver: configure, simulate, check and report."""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import abacus, baselines
from .addrmap import MappingScheme
from .controller import MemoryController
from .dram import DeviceGeometry, TimingParams
from .errors import ConfigError, RowguardError
from .mitigation import NoMitigation
from .oracle import OracleLedger, TimingChecker, check_abacus_invariant, check_security
from .workloads import make_generator, parse_gen_spec, parse_trace

SCHEMA_VERSION = 1
MITIGATIONS = ("none", "abacus", "abacus-big", "graphene", "hydra", "para", "rega")
DEFAULT_WINDOW = 640_000_000  # 640 us in ps

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


@dataclass
class RunConfig:
    mitigation: str = "none"
    nrh: int = 1000
    gen: Optional[str] = None
    trace: Optional[str] = None
    geometry: DeviceGeometry = field(default_factory=DeviceGeometry)
    timing: TimingParams = field(default_factory=TimingParams)
    mapping: str = "MOP_1CL"
    blast_radius: int = 1
    seed: int = 0
    oracle: str = "on"
    window: Optional[int] = DEFAULT_WINDOW  # scaled tREFW in ps; None keeps timing.tREFW
    n_entries: Optional[int] = None
    para_recursive: bool = True
    until: Optional[int] = None
    keep_log: bool = False
    energy_weights: Optional[dict] = None

    @property
    def workload(self) -> str:
        if self.gen:
            return self.gen
        return Path(self.trace).name if self.trace else "empty"

    @property
    def label(self) -> str:
        return f"para@{self.seed}" if self.mitigation == "para" else self.mitigation

    def effective_timing(self) -> TimingParams:
        return self.timing if self.window is None else self.timing.scaled(self.window)

    def oracle_mode(self) -> tuple[str, int]:
        m = self.oracle
        if m in ("on", "off"):
            return m, 0
        if m.startswith("sampled:"):
            try:
                n = int(m.split(":", 1)[1])
            except ValueError:
                n = 0
            if n >= 1:
                return "sampled", n
        raise ConfigError(f"oracle mode must be on, off or sampled:N, got {m!r}")

    def validate(self) -> None:
        if self.mitigation not in MITIGATIONS:
            raise ConfigError(f"unknown mitigation {self.mitigation!r}")
        if self.nrh < 4:
            raise ConfigError("nrh must be >= 4")
        if self.blast_radius < 1:
            raise ConfigError("blast_radius must be >= 1")
        if self.mitigation == "rega" and self.blast_radius > 1:
            raise ConfigError("rega is only defined for blast radius 1")
        if self.gen and self.trace:
            raise ConfigError("give either a generator or a trace, not both")
        if self.window is not None and self.window < self.timing.tREFI:
            raise ConfigError("scaled window must be at least one tREFI")
        self.oracle_mode()


def hydra_for(cfg: RunConfig, timing: TimingParams):
    return baselines.hydra_config(cfg.nrh, timing, blast_radius=cfg.blast_radius)


def build_mitigation(cfg: RunConfig, timing: TimingParams):
    g = cfg.geometry
    m = cfg.mitigation
    if m == "none":
        return NoMitigation()
    if m in ("abacus", "abacus-big"):
        acfg = abacus.configure(cfg.nrh, timing, g, blast_radius=cfg.blast_radius,
                                big=(m == "abacus-big"), n_entries=cfg.n_entries)
        return abacus.AbacusMitigation(acfg, g)
    if m == "graphene":
        gcfg = baselines.graphene_config(cfg.nrh, timing, blast_radius=cfg.blast_radius,
                                         n_entries=cfg.n_entries)
        return baselines.Graphene(gcfg, g)
    if m == "hydra":
        return baselines.Hydra(hydra_for(cfg, timing), g)
    if m == "para":
        return baselines.Para(baselines.para_probability(cfg.nrh), g, cfg.seed,
                              blast_radius=cfg.blast_radius, recursive=cfg.para_recursive)
    if m == "rega":
        return baselines.Rega(cfg.nrh)
    raise ConfigError(f"unknown mitigation {m!r}")


def build_trace(cfg: RunConfig, mapping: MappingScheme, timing: TimingParams):
    if cfg.trace:
        return parse_trace(cfg.trace, capacity=mapping.capacity)
    if not cfg.gen:
        return iter(())
    name, params = parse_gen_spec(cfg.gen)
    # the trace depends only on the workload, never on the mitigation under test
    entries = abacus.configure(cfg.nrh, timing, cfg.geometry).n_entries
    return make_generator(name, mapping, params, seed=cfg.seed,
                          hydra_cfg=hydra_for(cfg, timing), abacus_entries=entries)


@dataclass
class SimStats:
    schema_version: int = SCHEMA_VERSION
    workload: str = ""
    mitigation: str = "none"
    nrh: int = 0
    seed: int = 0
    mapping: str = "MOP_1CL"
    window_ns: float = 0.0
    sim_time_ns: float = 0.0
    requests_in: int = 0
    requests_completed: int = 0
    requests_in_flight: int = 0
    total_acts: int = 0
    total_acts_by_cause: dict = field(default_factory=dict)
    command_counts: dict = field(default_factory=dict)
    preventive_refreshes: int = 0
    preventive_bursts: int = 0
    refresh_cycles: int = 0
    mitigation_traffic_cmds: int = 0
    hydra_rcc_evictions: int = 0
    hydra_rcc_fills: int = 0
    demand_latency: dict = field(default_factory=dict)
    bank_busy_preventive_ns: list = field(default_factory=list)
    unavailable_ns: float = 0.0
    energy_proxy_pj: float = 0.0
    oracle: dict = field(default_factory=dict)
    mitigation_stats: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)


FIELD_NAMES = [f.name for f in fields(SimStats)]


@dataclass
class RunResult:
    stats: SimStats
    log: Optional[list]
    violations: list
    timing_errors: list
    invariant_ok: Optional[bool]

    @property
    def exit_status(self) -> int:
        if self.stats.oracle.get("applicable") and self.violations:
            return EXIT_VIOLATION
        if self.invariant_ok is False or self.timing_errors:
            return EXIT_VIOLATION
        return EXIT_OK


def run(cfg: RunConfig) -> RunResult:
    cfg.validate()
    t0 = time.time()
    g = cfg.geometry
    timing = cfg.effective_timing()
    mapping = MappingScheme(cfg.mapping, g)
    mit = build_mitigation(cfg, timing)
    trace = build_trace(cfg, mapping, timing)
    mode, every = cfg.oracle_mode()

    checker = TimingChecker(mit.adjust_timing(timing), g)
    log = [] if cfg.keep_log else None
    sinks = [checker.feed]
    if log is not None:
        sinks.append(log.append)

    ledger = None
    is_abacus = isinstance(mit, abacus.AbacusMitigation)
    inv = {"ok": True, "checks": 0}
    after = on_epoch = None
    if mode != "off":
        ledger = OracleLedger(g, mit.adjust_timing(timing), blast_radius=cfg.blast_radius,
                              nrh=cfg.nrh,
                              scope_banks=mit.scope_banks if is_abacus else None)
        sinks.insert(0, ledger.observe)
        on_epoch = ledger.mark_epoch
        if is_abacus:
            if mode == "on":
                def after(bank, row, t, cause):
                    scope = bank // mit.scope_banks
                    table = mit.tables[scope]
                    c = table.cumulative(row)
                    bound = table.spillover if c is None else c
                    inv["checks"] += 1
                    if bound < ledger.row_max[scope].get(row, 0):
                        inv["ok"] = False
            else:
                counter = [0]

                def after(bank, row, t, cause):
                    counter[0] += 1
                    if counter[0] % every:
                        return
                    inv["checks"] += 1
                    for s, table in enumerate(mit.tables):
                        if not check_abacus_invariant(table.snapshot(), ledger, s):
                            inv["ok"] = False

    ctl = MemoryController(g, timing, mapping, mit, sinks=sinks, after_activate=after,
                           on_epoch=on_epoch, energy_weights=cfg.energy_weights)
    ctl.run(trace, until=cfg.until)

    violations = check_security(ledger, cfg.nrh) if ledger is not None else []
    ms = mit.stats()
    st = SimStats(
        workload=cfg.workload, mitigation=cfg.label, nrh=cfg.nrh, seed=cfg.seed,
        mapping=mapping.scheme_kind, window_ns=timing.tREFW / 1000,
        sim_time_ns=ctl.last_time / 1000,
        requests_in=ctl.requests_in, requests_completed=ctl.requests_done,
        requests_in_flight=ctl.in_flight,
        total_acts=ctl.cmd_counts["ACT"],
        total_acts_by_cause=dict(ctl.acts_by_cause),
        command_counts=dict(ctl.cmd_counts),
        preventive_refreshes=ctl.preventive_refreshes,
        preventive_bursts=ms.get("preventive_bursts", 0),
        refresh_cycles=ctl.refresh_cycles,
        mitigation_traffic_cmds=ctl.mitigation_traffic_cmds,
        hydra_rcc_evictions=ms.get("rcc_evictions", 0),
        hydra_rcc_fills=ms.get("rcc_fills", 0),
        demand_latency=ctl.latency_summary(),
        bank_busy_preventive_ns=[b / 1000 for b in ctl.busy_preventive],
        unavailable_ns=ctl.unavailable_time / 1000,
        energy_proxy_pj=ctl.energy_proxy(),
        oracle={
            "mode": cfg.oracle,
            "applicable": bool(ledger is not None and mit.oracle_applicable),
            "violations": len(violations),
            "max_exposure": ledger.max_exposure() if ledger is not None else 0,
            "invariant_checks": inv["checks"],
            "invariant_ok": inv["ok"] if (ledger is not None and is_abacus) else None,
            "timing_errors": len(checker.errors),
        },
        mitigation_stats=ms,
        wall_clock={"seconds": round(time.time() - t0, 3), "host": platform.node()},
    )
    return RunResult(st, log, violations, checker.errors,
                     inv["ok"] if (ledger is not None and is_abacus) else None)


# --- matrix -----------------------------------------------------------------

def _run_cell(cfg: RunConfig):
    try:
        r = run(cfg)
        return r.stats, r.exit_status, None
    except RowguardError as e:
        return None, EXIT_ERROR, f"{type(e).__name__}: {e}"
    except Exception as e:  # a failing cell must not stop the matrix
        return None, EXIT_ERROR, f"{type(e).__name__}: {e}"


@dataclass
class MatrixReport:
    cells: dict  # (workload, mitigation, nrh) -> SimStats or error string
    status: dict

    @property
    def exit_status(self) -> int:
        codes = set(self.status.values())
        if EXIT_VIOLATION in codes:
            return EXIT_VIOLATION
        if EXIT_ERROR in codes:
            return EXIT_ERROR
        return EXIT_OK

    def rows(self) -> list:
        out = []
        for key, v in self.cells.items():
            if isinstance(v, SimStats):
                out.append(v)
        return out


def run_matrix(configs, workers: int = 1) -> MatrixReport:
    configs = list(configs)
    if not configs:
        raise ConfigError("matrix needs at least one configuration")
    keys = [(c.workload, c.label, c.nrh) for c in configs]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate (workload, mitigation, nrh) cells in matrix")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, configs))
    else:
        results = [_run_cell(c) for c in configs]
    cells, status = {}, {}
    for k, (stats, code, err) in zip(keys, results):
        cells[k] = stats if stats is not None else err
        status[k] = code
    return MatrixReport(cells, status)


# --- reports ----------------------------------------------------------------

def stats_dict(s: SimStats, wall_clock: bool = True) -> dict:
    d = asdict(s)
    if not wall_clock:
        d.pop("wall_clock")
    return {k: d[k] for k in FIELD_NAMES if k in d}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = ";".join(repr(x) for x in v)
        else:
            out[key] = v
    return out


def emit_report(stats, path, fmt: Optional[str] = None, errors: Optional[dict] = None):
    """Write one or more SimStats as JSON (nested) or CSV (one row per run)."""
    items = [stats] if isinstance(stats, SimStats) else list(stats)
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower() or "json"
    if fmt not in ("json", "csv"):
        raise ConfigError(f"report format must be json or csv, got {fmt!r}")
    if not items:
        items = [SimStats()]
    if fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, "fields": FIELD_NAMES,
               "runs": [stats_dict(s) for s in items]}
        if errors:
            doc["errors"] = errors
        text = json.dumps(doc, indent=2) + "\n"
        with open(path, "w") as f:
            f.write(text)
        return path
    rows = [_flatten(stats_dict(s)) for s in items]
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def load_config_file(path) -> dict:
    from .dram import parse_config_text
    with open(path) as f:
        return parse_config_text(f.read())


def cpu_count() -> int:
    return os.cpu_count() or 1
