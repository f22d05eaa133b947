"""Full-factorial experiment runner: tools x benchmarks x repetitions.

Runs are strictly sequential (one measurement owns the machine at a time),
ordered by a seed-fixed permutation of the full factorial so every cell gets
identical repetition counts under any seed.  Each run brackets one workload
execution between two counter reads; records append to a JSON-lines file and
are flushed per run, so an interrupted session keeps every completed run.
"""
from __future__ import annotations

import json
import logging
import random
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .clocks import Clock, MonotonicClock
from .postprocess import wrap_delta
from .samplelog import CsvSampleSink, sidecar_path_for, write_sidecar
from .sampler import SamplerConfig, run_batched, run_naive, run_ring
from .sources import DomainId, Source, SourceDescriptor, open_source, raw_to_joules

log = logging.getLogger(__name__)

__all__ = [
    "ToolSpec",
    "BenchmarkSpec",
    "WarmupSpec",
    "PlanEntry",
    "RunPlan",
    "RunRecord",
    "ToolLaunchError",
    "build_plan",
    "load_plan",
    "execute_run",
    "run_plan",
    "read_records",
    "BUILTIN_SAMPLERS",
]

BUILTIN_SAMPLERS = {"naive": run_naive, "batched": run_batched, "ring": run_ring}
BASELINE_TOOL_ID = "none"


class ToolLaunchError(Exception):
    """An external measurement tool could not be started."""


@dataclass(frozen=True)
class ToolSpec:
    """A measurement tool under study.

    Exactly one of: the reserved id ``none`` (baseline, nothing runs),
    ``builtin`` (an in-process sampler: naive/batched/ring), or ``command``
    (an opaque external tool, launched and later TERM'd with a KILL fallback).
    ``{output}`` in the command expands to a per-run output path.
    """

    id: str
    builtin: str | None = None
    command: str | None = None
    hz: float = 1000.0
    term_grace_s: float = 2.0

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("tool id must be non-empty")
        if self.builtin is not None and self.builtin not in BUILTIN_SAMPLERS:
            raise ValueError(
                f"unknown builtin sampler {self.builtin!r} (have: {sorted(BUILTIN_SAMPLERS)})"
            )
        if self.builtin is not None and self.command is not None:
            raise ValueError(f"tool {self.id!r}: builtin and command are mutually exclusive")
        if self.id == BASELINE_TOOL_ID and (self.builtin or self.command):
            raise ValueError(f"tool id {BASELINE_TOOL_ID!r} is reserved for the no-tool baseline")
        if self.hz <= 0:
            raise ValueError("hz must be positive")

    def to_dict(self) -> dict:
        d: dict = {"id": self.id}
        if self.builtin is not None:
            d["builtin"] = self.builtin
            d["hz"] = self.hz
        if self.command is not None:
            d["command"] = self.command
            d["term_grace_s"] = self.term_grace_s
        return d


@dataclass(frozen=True)
class BenchmarkSpec:
    """A workload command, run to completion per repetition."""

    id: str
    command: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("benchmark id must be non-empty")
        if not self.command.strip():
            raise ValueError(f"benchmark {self.id!r}: command must be non-empty")

    def to_dict(self) -> dict:
        return {"id": self.id, "command": self.command}


@dataclass(frozen=True)
class WarmupSpec:
    """A timeboxed (tool, benchmark) run executed before the plan, unrecorded."""

    tool: str
    benchmark: str
    duration_s: float = 30.0


@dataclass(frozen=True)
class PlanEntry:
    tool: str
    benchmark: str
    repetition: int


@dataclass(frozen=True)
class RunPlan:
    tools: tuple[ToolSpec, ...]
    benchmarks: tuple[BenchmarkSpec, ...]
    repetitions: int
    seed: int
    source: SourceDescriptor
    cooldown_s: float = 0.0
    warmups: tuple[WarmupSpec, ...] = ()
    entries: tuple[PlanEntry, ...] = ()

    def tool(self, tool_id: str) -> ToolSpec:
        for t in self.tools:
            if t.id == tool_id:
                return t
        raise KeyError(tool_id)

    def benchmark(self, bench_id: str) -> BenchmarkSpec:
        for b in self.benchmarks:
            if b.id == bench_id:
                return b
        raise KeyError(bench_id)


def build_plan(
    tools: Sequence[ToolSpec],
    benchmarks: Sequence[BenchmarkSpec],
    repetitions: int,
    seed: int,
    source: SourceDescriptor,
    cooldown_s: float = 0.0,
    warmups: Sequence[WarmupSpec] = (),
) -> RunPlan:
    """Fix the full-factorial run order: a seeded permutation of every
    (tool, benchmark, repetition) cell.  Per-cell counts are identical under
    every seed by construction."""
    if not tools:
        raise ValueError("tools axis is empty")
    if not benchmarks:
        raise ValueError("benchmarks axis is empty")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    tool_ids = [t.id for t in tools]
    bench_ids = [b.id for b in benchmarks]
    if len(set(tool_ids)) != len(tool_ids):
        raise ValueError("duplicate tool ids")
    if len(set(bench_ids)) != len(bench_ids):
        raise ValueError("duplicate benchmark ids")
    for w in warmups:
        if w.tool not in tool_ids:
            raise ValueError(f"warmup references unknown tool {w.tool!r}")
        if w.benchmark not in bench_ids:
            raise ValueError(f"warmup references unknown benchmark {w.benchmark!r}")
    entries = [
        PlanEntry(tool=t, benchmark=b, repetition=r)
        for t in tool_ids
        for b in bench_ids
        for r in range(repetitions)
    ]
    random.Random(seed).shuffle(entries)
    return RunPlan(
        tools=tuple(tools),
        benchmarks=tuple(benchmarks),
        repetitions=repetitions,
        seed=seed,
        source=source,
        cooldown_s=cooldown_s,
        warmups=tuple(warmups),
        entries=tuple(entries),
    )


def load_plan(path: str | Path) -> RunPlan:
    """Read a plan config (JSON, or TOML for ``.toml`` paths) and build the plan."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py >= 3.11
        except ImportError:  # pragma: no cover - depends on interpreter
            import tomli as tomllib
        cfg = tomllib.loads(text)
    else:
        cfg = json.loads(text)
    tools = tuple(ToolSpec(**t) for t in cfg.get("tools", []))
    benchmarks = tuple(BenchmarkSpec(**b) for b in cfg.get("benchmarks", []))
    warmups = tuple(WarmupSpec(**w) for w in cfg.get("warmups", []))
    source = SourceDescriptor.from_dict(cfg["source"])
    return build_plan(
        tools=tools,
        benchmarks=benchmarks,
        repetitions=int(cfg.get("repetitions", 1)),
        seed=int(cfg.get("seed", 0)),
        source=source,
        cooldown_s=float(cfg.get("cooldown_s", 0.0)),
        warmups=warmups,
    )


@dataclass
class RunRecord:
    tool: str
    benchmark: str
    repetition: int
    wall_start: str  # ISO-8601, UTC
    wall_end: str
    t_start_ns: int  # monotonic
    t_end_ns: int
    duration_s: float
    raw_before: dict[DomainId, int]
    raw_after: dict[DomainId, int]
    wrap_range: dict[DomainId, int]
    joules_per_raw: dict[DomainId, float]
    energy_j: dict[DomainId, float]
    exit_status: int | None
    ok: bool
    error: str | None = None
    tool_log: str | None = None

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "benchmark": self.benchmark,
            "repetition": self.repetition,
            "wall_start": self.wall_start,
            "wall_end": self.wall_end,
            "t_start_ns": self.t_start_ns,
            "t_end_ns": self.t_end_ns,
            "duration_s": self.duration_s,
            "raw_before": self.raw_before,
            "raw_after": self.raw_after,
            "wrap_range": self.wrap_range,
            "joules_per_raw": self.joules_per_raw,
            "energy_j": self.energy_j,
            "exit_status": self.exit_status,
            "ok": self.ok,
            "error": self.error,
            "tool_log": self.tool_log,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


class _BuiltinToolHandle:
    """An in-process sampler running in a background thread for one run."""

    def __init__(self, tool: ToolSpec, descriptor: SourceDescriptor, log_path: Path):
        self.tool = tool
        self.log_path = log_path
        self.stop_event = threading.Event()
        self._config = SamplerConfig(
            period_ns=max(1, round(1e9 / tool.hz)),
            stop_event=self.stop_event,
        )
        self._source = open_source(descriptor)
        self._sink = CsvSampleSink(log_path)
        self.error: Exception | None = None
        self.stats = None

        def worker() -> None:
            try:
                self.stats = BUILTIN_SAMPLERS[tool.builtin](self._source, self._config, self._sink)
            except Exception as exc:  # noqa: BLE001 - surfaced on stop()
                self.error = exc

        self._thread = threading.Thread(target=worker, name=f"raplkit-tool-{tool.id}", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.stop_event.set()
        self._thread.join()
        try:
            if self.stats is not None:
                write_sidecar(
                    sidecar_path_for(self.log_path),
                    sampler=self._config.to_dict(),
                    source=self._source.describe(),
                    stats=self.stats.to_dict(),
                )
        finally:
            self._source.close()
        if self.error is not None:
            raise self.error


class _ExternalToolHandle:
    """An opaque external tool process."""

    def __init__(self, tool: ToolSpec, output_path: Path):
        self.tool = tool
        command = tool.command.format(output=str(output_path))
        try:
            self._proc = subprocess.Popen(shlex.split(command))
        except OSError as exc:
            raise ToolLaunchError(f"tool {tool.id!r}: {exc}") from exc

    def stop(self) -> None:
        self._proc.terminate()
        try:
            self._proc.wait(timeout=self.tool.term_grace_s)
        except subprocess.TimeoutExpired:
            log.warning("tool %s ignored TERM for %.1fs; killing", self.tool.id, self.tool.term_grace_s)
            self._proc.kill()
            self._proc.wait()


def _start_tool(tool: ToolSpec, descriptor: SourceDescriptor, out_dir: Path, run_id: str):
    if tool.id == BASELINE_TOOL_ID or (tool.builtin is None and tool.command is None):
        return None
    if tool.builtin is not None:
        return _BuiltinToolHandle(tool, descriptor, out_dir / f"{run_id}.samples.csv")
    return _ExternalToolHandle(tool, out_dir / f"{run_id}.tool.out")


def _read_counters(source: Source) -> tuple[dict, dict]:
    reading = source.read_raw()
    return dict(reading.values), dict(reading.wrap_range)


def execute_run(
    plan: RunPlan,
    entry: PlanEntry,
    source: Source,
    out_dir: Path,
    clock: Clock | None = None,
) -> RunRecord:
    """One run: start tool, bracket the workload with counter reads, stop tool.

    Workload failure (nonzero exit or unlaunchable command) flags the record
    and the plan continues; an unlaunchable *tool* flags the record and skips
    the workload (the cell would not measure what it claims).
    """
    clock = clock if clock is not None else MonotonicClock()
    tool = plan.tool(entry.tool)
    bench = plan.benchmark(entry.benchmark)
    run_id = f"{entry.tool}_{entry.benchmark}_r{entry.repetition:03d}"
    error: str | None = None
    exit_status: int | None = None
    handle = None
    tool_log: str | None = None
    wall_start = datetime.now(timezone.utc).isoformat(timespec="microseconds")
    try:
        handle = _start_tool(tool, plan.source, out_dir, run_id)
        if isinstance(handle, _BuiltinToolHandle):
            tool_log = str(handle.log_path)
    except ToolLaunchError as exc:
        error = str(exc)

    raw_before, wrap_ranges = _read_counters(source)
    t_start = clock.now_ns()
    if error is None:
        argv = shlex.split(bench.command)
        try:
            exit_status = subprocess.run(argv, check=False).returncode
        except OSError as exc:
            error = f"workload {bench.id!r} failed to launch: {exc}"
            exit_status = 127
        if exit_status not in (0, None) and error is None:
            error = f"workload {bench.id!r} exited with status {exit_status}"
    raw_after, _ = _read_counters(source)
    t_end = clock.now_ns()

    if handle is not None:
        try:
            handle.stop()
        except Exception as exc:  # noqa: BLE001 - tool failure flags the run
            error = error or f"tool {tool.id!r} failed: {exc}"

    units = {d: source.unit(d) for d in source.domains}
    energy = {
        d: raw_to_joules(wrap_delta(raw_before[d], raw_after[d], wrap_ranges[d]), units[d])
        for d in source.domains
    }
    return RunRecord(
        tool=entry.tool,
        benchmark=entry.benchmark,
        repetition=entry.repetition,
        wall_start=wall_start,
        wall_end=datetime.now(timezone.utc).isoformat(timespec="microseconds"),
        t_start_ns=t_start,
        t_end_ns=t_end,
        duration_s=(t_end - t_start) * 1e-9,
        raw_before=raw_before,
        raw_after=raw_after,
        wrap_range=wrap_ranges,
        joules_per_raw={d: units[d].joules_per_raw for d in source.domains},
        energy_j=energy,
        exit_status=exit_status,
        ok=error is None,
        error=error,
        tool_log=tool_log,
    )


def _run_warmup(plan: RunPlan, warmup: WarmupSpec, out_dir: Path) -> None:
    tool = plan.tool(warmup.tool)
    bench = plan.benchmark(warmup.benchmark)
    log.info("warmup: %s + %s for %.0fs", warmup.tool, warmup.benchmark, warmup.duration_s)
    handle = None
    try:
        handle = _start_tool(tool, plan.source, out_dir, f"warmup_{warmup.tool}_{warmup.benchmark}")
    except ToolLaunchError as exc:
        log.warning("warmup tool failed to start: %s", exc)
    proc = None
    try:
        proc = subprocess.Popen(shlex.split(bench.command))
        try:
            proc.wait(timeout=warmup.duration_s)
        except subprocess.TimeoutExpired:
            pass
    except OSError as exc:
        log.warning("warmup workload failed to start: %s", exc)
    finally:
        if proc is not None and proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        if handle is not None:
            try:
                handle.stop()
            except Exception as exc:  # noqa: BLE001 - warmups are best-effort
                log.warning("warmup tool stop failed: %s", exc)


def run_plan(
    plan: RunPlan,
    results_path: str | Path,
    out_dir: str | Path | None = None,
    clock: Clock | None = None,
) -> list[RunRecord]:
    """Execute the whole plan sequentially, appending one JSON line per run.

    The record stream is flushed after every run, so an interruption after k
    runs leaves exactly k parseable lines.  Returns all records (existing
    lines in ``results_path`` are left untouched; new ones are appended).
    """
    results_path = Path(results_path)
    out_dir = Path(out_dir) if out_dir is not None else results_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[RunRecord] = []
    with open_source(plan.source) as source, open(
        results_path, "a", encoding="utf-8", newline="\n"
    ) as results:
        for warmup in plan.warmups:
            _run_warmup(plan, warmup, out_dir)
        for i, entry in enumerate(plan.entries):
            record = execute_run(plan, entry, source, out_dir, clock=clock)
            results.write(json.dumps(record.to_dict()) + "\n")
            results.flush()
            records.append(record)
            if not record.ok:
                log.warning(
                    "run %s/%s rep %d flagged: %s",
                    record.tool, record.benchmark, record.repetition, record.error,
                )
            if plan.cooldown_s > 0 and i + 1 < len(plan.entries):
                time.sleep(plan.cooldown_s)
    return records


def read_records(path: str | Path) -> list[RunRecord]:
    """Parse a JSON-lines results file back into records."""
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(RunRecord.from_dict(json.loads(line)))
    return records
