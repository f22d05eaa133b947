"""Command-line entry point: sample / bench / experiment / analyze.

Exit codes: 0 on success, 1 when a run or analysis fails, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import microbench, report
from .orchestrator import load_plan, read_records, run_plan
from .postprocess import postprocess_log
from .samplelog import CsvSampleSink, sidecar_path_for, write_sidecar
from .sampler import SamplerConfig, SinkError, run_batched, run_naive, run_ring
from .sources import (
    DOMAIN_ORDER,
    MSR_WRAP_RANGE,
    SourceDescriptor,
    SourceError,
    open_source,
)

log = logging.getLogger(__name__)

__all__ = ["main", "parse_duration_ns", "parse_source_spec"]

_SAMPLERS = {"naive": run_naive, "batched": run_batched, "ring": run_ring}

_DURATION_SCALES = {"ms": 1e6, "s": 1e9, "m": 60e9}


def parse_duration_ns(text: str) -> int:
    """``100ms`` / ``5s`` / ``2m``; a bare number means seconds."""
    t = text.strip().lower()
    scale = 1e9
    for suffix in ("ms", "s", "m"):  # "ms" first: it ends with "s"
        if t.endswith(suffix):
            scale = _DURATION_SCALES[suffix]
            t = t[: -len(suffix)]
            break
    try:
        value = float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid duration {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("duration must be >= 0")
    return round(value * scale)


def _parse_watts(text: str) -> float:
    t = text.strip().lower()
    if t.endswith("w"):
        t = t[:-1]
    return float(t)


def parse_source_spec(spec: str, domains: tuple[str, ...] | None) -> SourceDescriptor:
    """Build a source descriptor from the CLI grammar.

    ``synthetic:10W`` (one power for every requested domain),
    ``synthetic:pkg=10W,dram=2.5W[,unit=1e-6][,range=N][,epoch=NS]``,
    ``powercap[:root_dir]``, ``msr[:cpu]``.
    """
    backend, _, rest = spec.partition(":")
    backend = backend.strip().lower()
    if backend == "powercap":
        kwargs: dict = {"backend": "powercap"}
        if rest:
            kwargs["powercap_root"] = rest
        if domains:
            kwargs["domains"] = domains
        return SourceDescriptor(**kwargs)
    if backend == "msr":
        kwargs = {"backend": "msr"}
        if rest:
            try:
                kwargs["msr_cpu"] = int(rest)
            except ValueError:
                raise argparse.ArgumentTypeError(f"msr cpu must be an integer, got {rest!r}") from None
        if domains:
            kwargs["domains"] = domains
        return SourceDescriptor(**kwargs)
    if backend == "synthetic":
        power: dict[str, float] = {}
        unit = 1e-6
        wrap_range = MSR_WRAP_RANGE
        epoch: int | None = None
        for part in filter(None, (p.strip() for p in rest.split(","))):
            key, eq, value = part.partition("=")
            if not eq:
                # bare power: applies to every requested domain
                watts = _parse_watts(part)
                for d in domains or ("pkg",):
                    power[d] = watts
            elif key in DOMAIN_ORDER:
                power[key] = _parse_watts(value)
            elif key == "unit":
                unit = float(value)
            elif key == "range":
                wrap_range = int(value)
            elif key == "epoch":
                epoch = int(value)
            else:
                raise argparse.ArgumentTypeError(f"unknown synthetic source field {key!r}")
        if not power:
            raise argparse.ArgumentTypeError(
                "synthetic source needs a power, e.g. synthetic:10W or synthetic:pkg=10W"
            )
        return SourceDescriptor(
            backend="synthetic",
            domains=domains or tuple(power),
            power_watts=power,
            unit_joules=unit,
            wrap_range_raw=wrap_range,
            start_epoch_ns=epoch,
        )
    raise argparse.ArgumentTypeError(
        f"unknown source {spec!r}; expected synthetic:..., powercap[:root] or msr[:cpu]"
    )


def _parse_domains(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    domains = tuple(d.strip() for d in text.split(",") if d.strip())
    for d in domains:
        if d not in DOMAIN_ORDER:
            raise argparse.ArgumentTypeError(
                f"unknown domain {d!r} (have: {', '.join(DOMAIN_ORDER)})"
            )
    return domains or None


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_sample(args: argparse.Namespace) -> int:
    domains = _parse_domains(args.domains)
    descriptor = parse_source_spec(args.source, domains)
    period_ns = args.period_ns if args.period_ns is not None else max(1, round(1e9 / args.hz))
    if args.duration is None and args.max_samples is None:
        return _fail("need --duration or --max-samples")
    config = SamplerConfig(
        period_ns=period_ns,
        duration_ns=args.duration,
        max_samples=args.max_samples,
        domains=domains,
        cache_capacity=args.cache_capacity,
        ring_capacity=args.ring_capacity,
        drain_period_ns=args.drain_period_ns,
    )
    out = Path(args.out)
    runner = _SAMPLERS[args.mode]
    try:
        with open_source(descriptor) as source:
            stats = runner(source, config, CsvSampleSink(out))
            write_sidecar(
                sidecar_path_for(out),
                sampler={"mode": args.mode, **config.to_dict()},
                source=source.describe(),
                stats=stats.to_dict(),
            )
    except SourceError as exc:
        return _fail(str(exc))
    except SinkError as exc:
        return _fail(f"sink failed: {exc}")
    print(json.dumps({"log": str(out), "sidecar": str(sidecar_path_for(out)), **stats.to_dict()}))
    return 0


def _ops_list(text: str) -> str:
    """Validate the ``--ops`` grammar at parse time so bad ops are usage errors."""
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        kind = token.partition(":")[0]
        if kind not in microbench.OP_KINDS:
            raise argparse.ArgumentTypeError(
                f"unknown op {kind!r} (have: {', '.join(microbench.OP_KINDS)})"
            )
    return text


def _bench_spec_from_token(token: str, args: argparse.Namespace) -> microbench.BenchSpec:
    kind, _, target = token.partition(":")
    return microbench.BenchSpec(
        kind,
        target or None,
        iterations=args.iterations,
        repetitions=args.repetitions,
        cooldown_s=args.cooldown_s,
    )


def _cmd_bench(args: argparse.Namespace) -> int:
    if args.ops:
        specs = [_bench_spec_from_token(t.strip(), args) for t in args.ops.split(",") if t.strip()]
    else:
        specs = microbench.default_suite(
            iterations=args.iterations,
            repetitions=args.repetitions,
            cooldown_s=args.cooldown_s,
        )
    suite = microbench.run_suite(specs, seed=args.seed, pin_cpu=args.pin_cpu)
    if not suite.summaries:
        for label, reason in suite.skipped.items():
            print(f"skipped {label}: {reason}", file=sys.stderr)
        return _fail("every op was skipped; nothing to report")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = microbench.write_timings_csv(out_dir / "microbench_timings.csv", suite)
    summary = microbench.write_summary_csv(out_dir / "microbench_summary.csv", suite)
    width = max(len(s.op_label) for s in suite.summaries)
    print(f"{'op':<{width}}  {'median_ms':>12}  {'per_op_ms':>12}  {'per_op_net_ms':>14}")
    for s in suite.summaries:
        print(
            f"{s.op_label:<{width}}  {s.stats.median:>12.4f}  "
            f"{s.per_op_ms:>12.6f}  {s.per_op_net_ms:>14.6f}"
        )
    print(f"baseline: {suite.baseline_label}")
    for label, reason in suite.skipped.items():
        print(f"skipped {label}: {reason}", file=sys.stderr)
    print(f"wrote {timings} and {summary}")
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    plan_path = Path(args.plan)
    if not plan_path.exists():
        return _fail(f"plan file not found: {plan_path}")
    try:
        plan = load_plan(plan_path)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(f"invalid plan {plan_path}: {exc}")
    try:
        records = run_plan(plan, args.results, out_dir=args.out_dir)
    except SourceError as exc:
        return _fail(str(exc))
    flagged = [r for r in records if not r.ok]
    print(f"{len(records)} runs recorded to {args.results}; {len(flagged)} flagged")
    for r in flagged:
        print(f"  {r.tool}/{r.benchmark} rep {r.repetition}: {r.error}", file=sys.stderr)
    return 1 if flagged else 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    if args.samples is not None:
        samples = Path(args.samples)
        if not samples.exists():
            return _fail(f"sample log not found: {samples}")
        out_dir = Path(args.out_dir) if args.out_dir else samples.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        out_intervals = out_dir / (samples.stem + ".intervals.csv")
        out_summary = out_dir / (samples.stem + ".summary.json")
        try:
            intervals, _summary = postprocess_log(
                samples,
                sidecar_path=args.sidecar,
                out_intervals=out_intervals,
                out_summary=out_summary,
            )
        except (ValueError, OSError) as exc:
            return _fail(f"cannot postprocess {samples}: {exc}")
        print(
            json.dumps(
                {
                    "intervals": str(out_intervals),
                    "summary": str(out_summary),
                    "n_intervals": len(intervals),
                }
            )
        )
        return 0

    results = Path(args.results)
    if not results.exists():
        return _fail(f"results file not found: {results}")
    try:
        records = read_records(results)
    except (ValueError, TypeError) as exc:
        return _fail(f"cannot parse {results}: {exc}")
    if not records:
        return _fail(f"no records in {results}")
    bundle = report.analyze_records(records, baseline=args.baseline)
    out_dir = Path(args.out_dir) if args.out_dir else results.parent / (results.stem + "_report")
    written = report.write_report(bundle, out_dir)
    for bench, bench_report in bundle.benchmarks.items():
        tools = ", ".join(next(iter(bench_report.metrics.values())).tools) if bench_report.metrics else "-"
        print(
            f"{bench}: {bench_report.n_records} records"
            f" ({bench_report.n_flagged} flagged), tools: {tools}"
        )
    print(f"wrote {len(written)} report files to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raplkit",
        description="High-frequency energy-counter sampling, microbenchmarks and overhead analysis.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("sample", help="run one sampler against a counter source")
    p.add_argument("--mode", choices=sorted(_SAMPLERS), required=True)
    p.add_argument(
        "--source",
        default="powercap",
        help="synthetic:10W | synthetic:pkg=10W,unit=1e-6 | powercap[:root] | msr[:cpu]",
    )
    p.add_argument("--domains", help="comma-separated subset of: " + ",".join(DOMAIN_ORDER))
    rate = p.add_mutually_exclusive_group()
    rate.add_argument("--hz", type=float, default=1000.0, help="sampling rate (default 1000)")
    rate.add_argument("--period-ns", type=int, help="explicit sampling period")
    p.add_argument("--duration", type=parse_duration_ns, help="e.g. 500ms, 5s, 2m; bare = seconds")
    p.add_argument("--max-samples", type=int, help="stop after this many samples")
    p.add_argument("--out", default="samples.csv", help="sample log path (default samples.csv)")
    p.add_argument("--cache-capacity", type=int, default=128, help="batched mode buffer size")
    p.add_argument("--ring-capacity", type=int, default=128, help="ring size (power of two)")
    p.add_argument(
        "--drain-period-ns", type=int, default=100_000_000, help="ring consumer cadence"
    )
    p.set_defaults(handler=_cmd_sample)

    p = sub.add_parser("bench", help="microbenchmark the sampling primitives")
    p.add_argument("--iterations", type=int, default=100_000, help="ops per timed batch")
    p.add_argument("--repetitions", type=int, default=15, help="batches per op")
    p.add_argument("--cooldown-s", type=float, default=30.0, help="sleep between batches")
    p.add_argument("--seed", type=int, default=0, help="batch interleaving seed")
    p.add_argument("--pin-cpu", type=int, help="pin the process to this CPU")
    p.add_argument(
        "--ops",
        type=_ops_list,
        help="comma-separated ops, e.g. noop,clock_read,msr_read:0x611,small_file_read:/proc/stat",
    )
    p.add_argument("--out-dir", default=".", help="where to write the CSV reports")
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("experiment", help="run a tools x benchmarks x repetitions plan")
    p.add_argument("--plan", required=True, help="plan config (JSON, or TOML with .toml suffix)")
    p.add_argument("--results", default="results.jsonl", help="JSON-lines output (appended)")
    p.add_argument("--out-dir", help="directory for per-run artifacts (default: alongside results)")
    p.set_defaults(handler=_cmd_experiment)

    p = sub.add_parser("analyze", help="analyze experiment results or a raw sample log")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--results", help="results JSON-lines file from `experiment`")
    what.add_argument("--samples", help="raw sample-log CSV from `sample`")
    p.add_argument("--baseline", default="none", help="baseline tool id (default: none)")
    p.add_argument("--sidecar", help="sidecar metadata path (default: <samples>.meta.json)")
    p.add_argument("--out-dir", help="report directory (default: <results stem>_report)")
    p.set_defaults(handler=_cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
