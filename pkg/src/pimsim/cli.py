"""``pimsim`` command line.

Every config key has a matching ``--section.key`` flag on ``run``; flags
beat ``--set`` overrides, which beat the config file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

from .config import (
    PROTOCOLS, ConfigError, SimConfig, apply_override, from_dict, load_config, shipped_configs,
)
from .engine import run as simulate
from .metrics import COMPARE_FIELDS, Metrics, compare, overhead_report, report
from .oracle import check_serializable
from .protocol.machine import SimulationError
from .signatures import measure_fp
from .workload import (
    TraceParseError, check_trace, load_workload, parse_trace, serialize_trace, write_binary,
)
from .workload.generators import GENERATORS

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SWEEP_ALIASES = {
    "signature_bits": "signature.bits",
    "address_capacity": "signature.capacity",
    "instruction_cap": "kernel.instruction_cap",
    "dbi_interval": "dbi.interval_cycles",
}
DEFAULT_MAX_RUNS = 256


class UsageError(Exception):
    pass


def _literal(text: str) -> Any:
    """TOML scalar if it parses as one, else the bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _split_kv(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise UsageError(f"expected KEY=VALUE, got {item!r}")
    return key.strip(), value.strip()


def _set(cfg: SimConfig, key: str, value: str) -> None:
    key = SWEEP_ALIASES.get(key, key)
    apply_override(cfg, key, _literal(value) if key.startswith("workload.") else value)


def _config_flags() -> list[tuple[str, str]]:
    """(flag, dotted key) for every typed config field."""
    out = []
    for sec in dataclasses.fields(SimConfig):
        if sec.name in ("protocol", "seed", "debug", "workload"):
            continue
        for f in dataclasses.fields(sec.default_factory()):
            out.append((f"--{sec.name}.{f.name}", f"{sec.name}.{f.name}"))
    return out


# run ------------------------------------------------------------------------

_workloads: dict[str, list] = {}


def _events(cfg: SimConfig) -> list:
    key = json.dumps([cfg.workload, cfg.seed], sort_keys=True, default=str)
    if key not in _workloads:
        _workloads.clear()
        _workloads[key] = load_workload(cfg.workload, cfg.seed)
    return _workloads[key]


def _one_run(job: tuple[dict, dict, bool]) -> tuple[dict | None, list[str]]:
    cfg_dict, params, check = job
    cfg = from_dict(cfg_dict).validate()
    try:
        result = simulate(cfg, _events(cfg))
    except (SimulationError, AssertionError) as exc:
        return None, [f"{cfg.protocol} {params or ''}: {exc}".rstrip()]
    problems = check_serializable(result) if check else []
    result.metrics.params = params
    return result.metrics.to_dict(), [f"{cfg.protocol}: {p}" for p in problems]


def _sweep_points(items: list[str]) -> list[dict[str, Any]]:
    axes = []
    for item in items:
        key, values = _split_kv(item)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise UsageError(f"sweep {key!r} has no values")
        axes.append([(key, v) for v in vals])
    return [dict(p) for p in itertools.product(*axes)]


def _workers(jobs: int) -> int:
    cap = os.environ.get("SIM_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"SIM_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(n, jobs))


def _run_name(m: Metrics) -> str:
    tail = "".join(f"_{k.replace('.', '-')}-{v}" for k, v in m.params.items())
    return f"{m.protocol}{tail}"


def _write_reports(runs: list[Metrics], fmt: str, out: str | None) -> None:
    baseline = {}
    for m in runs:
        if m.protocol == "cpu-only":
            baseline[tuple(m.params.items())] = m

    def render(ms: list[Metrics], f: str) -> str:
        groups: dict[tuple, list[Metrics]] = {}
        for m in ms:
            groups.setdefault(tuple(m.params.items()), []).append(m)
        if f == "json":
            body = []
            for k, g in groups.items():
                body.extend(json.loads(report(g, "json", baseline.get(k))))
            return json.dumps(body[0] if len(ms) == 1 else body, indent=2) + "\n"
        parts = [report(g, f, baseline.get(k)) for k, g in groups.items()]
        if f == "csv":  # one header
            return parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:])
        labels = [" ".join(f"{a}={b}" for a, b in k) for k in groups]
        return "\n".join(f"# {lab}\n{p}" if lab else p for lab, p in zip(labels, parts))

    if out is None:
        sys.stdout.write(render(runs, fmt))
        if len(runs) > 1 and fmt != "table":
            sys.stderr.write(render(runs, "table"))
        return
    path = Path(out)
    if path.is_dir() or out.endswith(("/", os.sep)):
        path.mkdir(parents=True, exist_ok=True)
        ext = {"json": "json", "csv": "csv", "table": "txt"}[fmt]
        for m in runs:
            (path / f"{_run_name(m)}.{ext}").write_text(render([m], fmt))
        if len(runs) > 1:
            (path / "comparison.txt").write_text(render(runs, "table"))
            (path / "comparison.csv").write_text(render(runs, "csv"))
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render(runs, fmt))


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
        for item in args.set or []:
            _set(cfg, *_split_kv(item))
        for key, value in vars(args).items():
            if key.startswith("cfg:"):
                _set(cfg, key[4:], value)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.debug:
            cfg.debug = True
        if args.trace:
            if not Path(args.trace).is_file():
                raise UsageError(f"no trace file {args.trace!r}")
            cfg.workload = {"trace": str(Path(args.trace).resolve())}
        if not cfg.workload:
            raise UsageError("no workload: pass --trace or a config with a [workload] table")
        protocols = args.protocol.split(",") if args.protocol else [cfg.protocol]
        for p in protocols:
            if p not in PROTOCOLS:
                raise UsageError(f"unknown protocol {p!r}; expected one of {', '.join(PROTOCOLS)}")
        points = _sweep_points(args.sweep or [])
        total = len(points) * len(protocols)
        if total > args.max_runs:
            raise UsageError(f"{total} runs exceed --max-runs {args.max_runs}")
        jobs = []
        for point in points:
            pcfg = from_dict(cfg.to_dict())
            for key, value in point.items():
                _set(pcfg, key, value)
            pcfg.validate()
            for p in protocols:
                pcfg.protocol = p
                jobs.append((pcfg.to_dict(), dict(point), args.check))
        # bad input surfaces here as a usage error, and forked workers inherit the events
        problems = check_trace(_events(cfg))
        if problems:
            raise UsageError("invalid trace: " + "; ".join(problems[:5]))
        workers = _workers(len(jobs))
    except (ConfigError, UsageError, ValueError, OSError) as exc:
        return _usage(exc)

    if workers == 1:
        results = [_one_run(j) for j in jobs]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(workers, mp_context=ctx) as pool:
            results = list(pool.map(_one_run, jobs))
    runs = [Metrics.from_dict(d) for d, _ in results if d is not None]
    failures = [p for _, probs in results for p in probs]
    if runs:
        _write_reports(runs, args.format, args.out)
    for p in failures:
        print(f"pimsim: validation failed: {p}", file=sys.stderr)
    return 1 if failures else 0


# gen ------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    try:
        spec: dict[str, Any] = {}
        seed = 1
        if args.config:
            cfg = load_config(args.config)
            if "trace" in cfg.workload:
                raise UsageError(f"{args.config} names a trace file, not a generator")
            spec.update(cfg.workload)
            seed = cfg.seed
        if args.generator:
            if args.generator not in GENERATORS:
                raise UsageError(f"unknown generator {args.generator!r}; "
                                 f"expected one of {', '.join(sorted(GENERATORS))}")
            if spec.get("generator", args.generator) != args.generator:
                spec = {}
            spec["generator"] = args.generator
        for item in args.param or []:
            key, value = _split_kv(item)
            spec[key] = _literal(value)
        if args.seed is not None:
            spec["seed"] = args.seed
        events = load_workload(spec, seed)
    except (ConfigError, UsageError, ValueError, TypeError) as exc:
        return _usage(exc)
    problems = check_trace(events)
    if problems:
        for p in problems:
            print(f"pimsim: generated trace invalid: {p}", file=sys.stderr)
        return 1
    if args.binary:
        if not args.output:
            return _usage(UsageError("--binary needs -o"))
        write_binary(events, args.output)
    else:
        header = " ".join(f"{k}={v}" for k, v in sorted({**spec, "seed": spec.get("seed", seed)}.items()))
        text = serialize_trace(events, header=header)
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
    return 0


# fp-sweep -------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(v, 0) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_fp_sweep(args: argparse.Namespace) -> int:
    cols = ["bits", "segments", "inserts", "queries", "membership", "analytic", "relative_error",
            "trials", "intersection"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    try:
        for bits in args.bits:
            for n in args.inserts:
                r = measure_fp(bits, args.segments, n, args.queries, args.trials, args.seed)
                rel = (r["membership"] - r["analytic"]) / r["analytic"] if r["analytic"] else 0.0
                w.writerow({"bits": bits, "segments": args.segments, "inserts": n,
                            "queries": args.queries, "membership": f"{r['membership']:.6g}",
                            "analytic": f"{r['analytic']:.6g}", "relative_error": f"{rel:.4f}",
                            "trials": args.trials, "intersection": f"{r['intersection']:.6g}"})
    except ValueError as exc:
        return _usage(exc)
    _emit(buf.getvalue(), args.out)
    return 0


# compare / validate-trace / overhead ------------------------------------------

def _load_reports(source: str) -> list[Metrics]:
    path = Path(source)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    out = []
    for f in files:
        data = json.loads(f.read_text())
        out.extend(Metrics.from_dict(d) for d in (data if isinstance(data, list) else [data]))
    if not out:
        raise UsageError(f"no reports in {source!r}")
    return out


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        rows = compare(_load_reports(args.left), _load_reports(args.right))
    except (UsageError, ValueError, KeyError, OSError) as exc:
        return _usage(exc)
    cols = ["protocol", "params", *COMPARE_FIELDS]
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    else:
        cells = [[r["protocol"], r["params"], *(f"{r[c]:.4f}" for c in COMPARE_FIELDS)] for r in rows]
        widths = [max(len(c), *(len(x[i]) for x in cells)) if cells else len(c)
                  for i, c in enumerate(cols)]
        lines = ["  ".join(c.ljust(n) for c, n in zip(cols, widths))]
        lines += ["  ".join(v.ljust(n) for v, n in zip(x, widths)) for x in cells]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


def cmd_validate_trace(args: argparse.Namespace) -> int:
    bad = 0
    for name in args.files:
        try:
            if not Path(name).is_file():
                raise OSError(f"no such file {name!r}")
            problems = check_trace(parse_trace(Path(name)))
        except (OSError, TraceParseError) as exc:
            problems = [str(exc)]
        if problems:
            bad += 1
            for p in problems:
                print(f"{name}: {p}")
        else:
            print(f"{name}: ok")
    return 1 if bad else 0


def cmd_overhead(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
    except ConfigError as exc:
        return _usage(exc)
    _emit(json.dumps(overhead_report(cfg), indent=2) + "\n", None)
    return 0


# plumbing ---------------------------------------------------------------------

def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _usage(exc: Exception) -> int:
    print(f"pimsim: error: {exc}", file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimsim", description="Processor/PIM coherence simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one or more protocols, optionally over a sweep")
    r.add_argument("--config", "-c", help=f"config file or shipped name ({', '.join(shipped_configs())})")
    r.add_argument("--trace", "-t", help="trace file; replaces the config's workload")
    r.add_argument("--protocol", "-p", help=f"comma list from {', '.join(PROTOCOLS)}")
    r.add_argument("--seed", type=int)
    r.add_argument("--debug", action="store_true", help="run internal validators, log signatures")
    r.add_argument("--check", action="store_true", help="replay each run against the serial oracle")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    r.add_argument("--sweep", action="append", metavar="KEY=V1,V2",
                   help=f"sweep axis; aliases: {', '.join(SWEEP_ALIASES)}")
    r.add_argument("--max-runs", type=int, default=DEFAULT_MAX_RUNS)
    r.add_argument("--format", "-f", choices=("json", "csv", "table"), default="json")
    r.add_argument("--out", "-o", help="report file, or a directory for one file per run")
    keys = r.add_argument_group("config keys")
    for flag, key in _config_flags():
        keys.add_argument(flag, dest=f"cfg:{key}", metavar="V", default=argparse.SUPPRESS)
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="write a synthetic trace")
    g.add_argument("--config", "-c", help="take generator parameters from this config")
    g.add_argument("--generator", "-g", help=", ".join(sorted(GENERATORS)))
    g.add_argument("--param", action="append", metavar="KEY=VALUE")
    g.add_argument("--seed", type=int)
    g.add_argument("--output", "-o")
    g.add_argument("--binary", action="store_true")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fp-sweep", help="measured vs analytic signature false positives (CSV)")
    f.add_argument("--bits", type=_int_list, default=[2048, 8192])
    f.add_argument("--segments", type=int, default=4)
    f.add_argument("--inserts", type=_int_list, default=[0, 50, 100, 150, 200, 250])
    f.add_argument("--queries", type=int, default=100_000)
    f.add_argument("--trials", type=int, default=200, help="signature pairs for the intersection rate")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", "-o")
    f.set_defaults(func=cmd_fp_sweep)

    c = sub.add_parser("compare", help="ratio table between two report sets (RIGHT / LEFT)")
    c.add_argument("left")
    c.add_argument("right")
    c.add_argument("--format", "-f", choices=("json", "csv", "table"), default="table")
    c.add_argument("--out", "-o")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate-trace", help="check trace files parse and are well formed")
    v.add_argument("files", nargs="+")
    v.set_defaults(func=cmd_validate_trace)

    o = sub.add_parser("overhead", help="storage overhead of the configured hardware")
    o.add_argument("--config", "-c")
    o.set_defaults(func=cmd_overhead)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:  # e.g. piped into head
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1


if __name__ == "__main__":
    sys.exit(main())
