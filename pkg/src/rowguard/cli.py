"""rowguard-sim command line."""
from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace

from . import harness
from .addrmap import CLI_NAMES
from .dram import build_geometry_timing
from .errors import RowguardError
from .harness import EXIT_ERROR, RunConfig
from .workloads import make_generator, parse_gen_spec, parse_trace, sibling_locality_metrics
from .workloads import TraceHeader, write_trace
from .addrmap import MappingScheme

_UNITS = {"ps": 1, "ns": 1_000, "us": 1_000_000, "ms": 1_000_000_000, "s": 10 ** 12}


def parse_duration(text: str) -> int:
    """'640us', '6.4ms', '64000' (ns) -> picoseconds."""
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-z]*)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    unit = m.group(2) or "ns"
    if unit not in _UNITS:
        raise argparse.ArgumentTypeError(f"unknown unit {unit!r}")
    return int(round(float(m.group(1)) * _UNITS[unit]))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mapping", choices=sorted(CLI_NAMES), default="mop1")
    p.add_argument("--trace", help="trace file to replay")
    p.add_argument("--gen", help="generator: name[:k=v,...]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value file overriding geometry and timing (ns)")
    w = p.add_mutually_exclusive_group()
    w.add_argument("--full-window", action="store_true", help="use the full tREFW")
    w.add_argument("--scale-window", type=parse_duration, metavar="T",
                   help="scaled refresh window, e.g. 640us (default)")
    p.add_argument("--report", help="write a .json or .csv report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rowguard-sim",
                                 description="Trace-driven DRAM simulator with RowHammer mitigations")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configuration")
    _common(r)
    r.add_argument("--mitigation", choices=harness.MITIGATIONS, default="abacus")
    r.add_argument("--nrh", type=int, default=1000)
    r.add_argument("--blast-radius", type=int, default=1)
    r.add_argument("--n-entries", type=int)
    r.add_argument("--oracle", default="on", help="on, off or sampled:N")

    m = sub.add_parser("matrix", help="run workloads x mitigations x nrh")
    _common(m)
    m.add_argument("--mitigations", default="abacus,graphene,hydra,para,rega")
    m.add_argument("--nrh", default="1000,500,250,125")
    m.add_argument("--gens", action="append", default=[],
                   help="additional generator spec (repeatable)")
    m.add_argument("--blast-radius", type=int, default=1)
    m.add_argument("--oracle", default="on")
    m.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("analyze", help="trace analyses")
    _common(a)
    a.add_argument("--analyze", choices=["sibling-locality"], default="sibling-locality")
    a.add_argument("--nrh", default="500,250,125")

    g = sub.add_parser("gen", help="write a generated trace to a file")
    _common(g)
    g.add_argument("--nrh", type=int, default=1000)
    g.add_argument("-o", "--output", required=True)
    return ap


def _base_config(args) -> RunConfig:
    cfg = RunConfig(mapping=CLI_NAMES[args.mapping], gen=args.gen, trace=args.trace,
                    seed=args.seed)
    if args.config:
        values = harness.load_config_file(args.config)
        geom, timing, rest = build_geometry_timing(values)
        if rest:
            raise RowguardError(f"unknown config keys: {', '.join(sorted(rest))}")
        cfg = replace(cfg, geometry=geom, timing=timing)
    if args.full_window:
        cfg = replace(cfg, window=None)
    elif args.scale_window:
        cfg = replace(cfg, window=args.scale_window)
    return cfg


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _cmd_run(args) -> int:
    cfg = replace(_base_config(args), mitigation=args.mitigation, nrh=args.nrh,
                  blast_radius=args.blast_radius, n_entries=args.n_entries, oracle=args.oracle)
    res = harness.run(cfg)
    if args.report:
        harness.emit_report(res.stats, args.report)
    print(json.dumps(harness.stats_dict(res.stats, wall_clock=False), indent=2))
    for v in res.violations[:10]:
        print(f"violation: t={v.time}ps bank={v.bank} aggressor={v.aggressor} "
              f"victim={v.victim} count={v.count}", file=sys.stderr)
    return res.exit_status


def _cmd_matrix(args) -> int:
    base = _base_config(args)
    gens = ([args.gen] if args.gen else []) + list(args.gens)
    sources = [("gen", gsp) for gsp in gens] or [("trace", args.trace)]
    configs = []
    for kind, src in sources:
        for mit in [m.strip() for m in args.mitigations.split(",") if m.strip()]:
            for n in _ints(args.nrh):
                c = replace(base, mitigation=mit, nrh=n, blast_radius=args.blast_radius,
                            oracle=args.oracle)
                c = replace(c, gen=src, trace=None) if kind == "gen" else replace(c, trace=src)
                configs.append(c)
    rep = harness.run_matrix(configs, workers=args.workers)
    for (wl, mit, n), v in rep.cells.items():
        if isinstance(v, harness.SimStats):
            print(f"{wl}\t{mit}\t{n}\tacts={v.total_acts}\tpreventive={v.preventive_refreshes}"
                  f"\tcycles={v.refresh_cycles}\tviolations={v.oracle['violations']}")
        else:
            print(f"{wl}\t{mit}\t{n}\tFAILED: {v}")
    if args.report:
        errors = {"|".join(map(str, k)): v for k, v in rep.cells.items() if isinstance(v, str)}
        harness.emit_report(rep.rows(), args.report, errors=errors or None)
    return rep.exit_status


def _trace_from_args(args, mapping):
    if args.trace:
        return parse_trace(args.trace, capacity=mapping.capacity)
    if args.gen:
        name, params = parse_gen_spec(args.gen)
        return make_generator(name, mapping, params, seed=args.seed)
    raise RowguardError("need --trace or --gen")


def _cmd_analyze(args) -> int:
    cfg = _base_config(args)
    mapping = MappingScheme(cfg.mapping, cfg.geometry)
    rep = sibling_locality_metrics(_trace_from_args(args, mapping), mapping, cfg.geometry,
                                   tuple(_ints(args.nrh)))
    text = json.dumps(rep, indent=2)
    if args.report:
        with open(args.report, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def _cmd_gen(args) -> int:
    cfg = _base_config(args)
    cfg = replace(cfg, nrh=args.nrh)
    if not args.gen:
        raise RowguardError("gen needs --gen")
    mapping = MappingScheme(cfg.mapping, cfg.geometry)
    trace = harness.build_trace(cfg, mapping, cfg.effective_timing())
    n = write_trace(args.output, trace,
                    TraceHeader(capacity=mapping.capacity, comment=f"gen={args.gen}"))
    print(f"wrote {n} requests to {args.output}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"run": _cmd_run, "matrix": _cmd_matrix, "analyze": _cmd_analyze,
                "gen": _cmd_gen}[args.command](args)
    except (RowguardError, OSError) as e:
        print(f"rowguard-sim: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
