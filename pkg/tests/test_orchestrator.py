"""Experiment runner: plan construction, run bracketing, and the crash-safe
JSON-lines record stream — all against the synthetic source."""
from __future__ import annotations

import json
from collections import Counter
from pathlib import Path

import pytest

import raplkit.orchestrator as orch
from raplkit.orchestrator import (
    BenchmarkSpec,
    PlanEntry,
    RunPlan,
    RunRecord,
    ToolSpec,
    WarmupSpec,
    build_plan,
    execute_run,
    load_plan,
    read_records,
    run_plan,
)
from raplkit.samplelog import read_sample_log, sidecar_path_for
from raplkit.sources import SourceDescriptor, open_source

SYNTH_10W = SourceDescriptor(
    backend="synthetic", domains=("pkg",), power_watts={"pkg": 10.0}
)


def tools(*ids):
    out = []
    for t in ids:
        if t == "none":
            out.append(ToolSpec(id="none"))
        elif t in ("naive", "batched", "ring"):
            out.append(ToolSpec(id=t, builtin=t, hz=100.0))
        else:
            out.append(ToolSpec(id=t, command=t))
    return out


def benches(*pairs):
    return [BenchmarkSpec(id=i, command=c) for i, c in pairs]


class TestToolSpec:
    def test_baseline_id_reserved(self):
        with pytest.raises(ValueError, match="reserved"):
            ToolSpec(id="none", builtin="batched")
        with pytest.raises(ValueError, match="reserved"):
            ToolSpec(id="none", command="sleep 1")

    def test_builtin_and_command_exclusive(self):
        with pytest.raises(ValueError, match="mutually exclusive"):
            ToolSpec(id="x", builtin="naive", command="foo")

    def test_unknown_builtin(self):
        with pytest.raises(ValueError, match="unknown builtin"):
            ToolSpec(id="x", builtin="turbo")

    def test_validation(self):
        with pytest.raises(ValueError):
            ToolSpec(id="")
        with pytest.raises(ValueError):
            ToolSpec(id="x", builtin="ring", hz=0)


class TestBuildPlan:
    def test_published_factorial_size(self):
        plan = build_plan(
            tools("none", "naive", "batched", "ring", "t5", "t6", "t7", "t8"),
            benches(*[(f"b{i}", "true") for i in range(6)]),
            repetitions=15,
            seed=0,
            source=SYNTH_10W,
        )
        assert len(plan.entries) == 720  # 8 tools x 6 benchmarks x 15 reps

    def test_single_cell(self):
        plan = build_plan(tools("none"), benches(("b", "true")), 1, 0, SYNTH_10W)
        assert plan.entries == (PlanEntry(tool="none", benchmark="b", repetition=0),)

    def test_same_seed_identical_order(self):
        args = (tools("none", "naive"), benches(("a", "true"), ("b", "true")), 5, 42, SYNTH_10W)
        assert build_plan(*args).entries == build_plan(*args).entries

    def test_per_cell_counts_invariant_across_seeds(self):
        for seed in (0, 7, 12345):
            plan = build_plan(
                tools("none", "naive"), benches(("a", "true"), ("b", "true")), 4, seed, SYNTH_10W
            )
            counts = Counter((e.tool, e.benchmark) for e in plan.entries)
            assert set(counts.values()) == {4}
            reps = Counter((e.tool, e.benchmark, e.repetition) for e in plan.entries)
            assert set(reps.values()) == {1}

    def test_empty_axes_rejected(self):
        with pytest.raises(ValueError, match="tools"):
            build_plan([], benches(("b", "true")), 1, 0, SYNTH_10W)
        with pytest.raises(ValueError, match="benchmarks"):
            build_plan(tools("none"), [], 1, 0, SYNTH_10W)
        with pytest.raises(ValueError, match="repetitions"):
            build_plan(tools("none"), benches(("b", "true")), 0, 0, SYNTH_10W)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate tool"):
            build_plan(
                [ToolSpec(id="x", builtin="naive"), ToolSpec(id="x", builtin="ring")],
                benches(("b", "true")), 1, 0, SYNTH_10W,
            )
        with pytest.raises(ValueError, match="duplicate benchmark"):
            build_plan(tools("none"), benches(("b", "true"), ("b", "false")), 1, 0, SYNTH_10W)

    def test_warmup_references_validated(self):
        with pytest.raises(ValueError, match="warmup"):
            build_plan(
                tools("none"), benches(("b", "true")), 1, 0, SYNTH_10W,
                warmups=[WarmupSpec(tool="ghost", benchmark="b")],
            )


class TestLoadPlan:
    def test_json_plan(self, tmp_path):
        cfg = {
            "repetitions": 2,
            "seed": 9,
            "cooldown_s": 0.0,
            "source": {"backend": "synthetic", "domains": ["pkg"], "power_watts": {"pkg": 10.0}},
            "tools": [{"id": "none"}, {"id": "batched", "builtin": "batched", "hz": 100.0}],
            "benchmarks": [{"id": "hello", "command": "true"}],
        }
        path = tmp_path / "plan.json"
        path.write_text(json.dumps(cfg))
        plan = load_plan(path)
        assert isinstance(plan, RunPlan)
        assert len(plan.entries) == 4
        assert plan.seed == 9
        assert plan.source.backend == "synthetic"
        assert plan.tool("batched").builtin == "batched"

    def test_toml_plan_matches_json_plan(self, tmp_path):
        toml_text = """
repetitions = 2
seed = 9
cooldown_s = 0.0

[source]
backend = "synthetic"
domains = ["pkg"]
[source.power_watts]
pkg = 10.0

[[tools]]
id = "none"

[[tools]]
id = "batched"
builtin = "batched"
hz = 100.0

[[benchmarks]]
id = "hello"
command = "true"
"""
        tpath = tmp_path / "plan.toml"
        tpath.write_text(toml_text)
        from_toml = load_plan(tpath)
        jpath = tmp_path / "plan.json"
        jpath.write_text(json.dumps({
            "repetitions": 2, "seed": 9, "cooldown_s": 0.0,
            "source": {"backend": "synthetic", "domains": ["pkg"], "power_watts": {"pkg": 10.0}},
            "tools": [{"id": "none"}, {"id": "batched", "builtin": "batched", "hz": 100.0}],
            "benchmarks": [{"id": "hello", "command": "true"}],
        }))
        from_json = load_plan(jpath)
        assert from_toml.entries == from_json.entries
        assert from_toml.source == from_json.source


def one_cell_plan(tool_spec, bench_cmd, bench_id="work"):
    return build_plan(
        [tool_spec] if tool_spec.id != "none" else [tool_spec],
        benches((bench_id, bench_cmd)),
        repetitions=1,
        seed=0,
        source=SYNTH_10W,
    )


class TestExecuteRun:
    def test_baseline_sleep_brackets_synthetic_energy(self, tmp_path):
        """`none` + `sleep 1` on a 10 W synthetic source: the bracketing reads
        must show about one second and about ten joules."""
        plan = one_cell_plan(ToolSpec(id="none"), "sleep 1")
        with open_source(SYNTH_10W) as source:
            rec = execute_run(plan, plan.entries[0], source, tmp_path)
        assert rec.ok and rec.exit_status == 0
        assert rec.t_end_ns > rec.t_start_ns
        assert rec.duration_s == pytest.approx(1.0, abs=0.1)
        assert rec.energy_j["pkg"] == pytest.approx(10.0, rel=0.02)
        # energy is power x duration within counter quantization
        assert rec.energy_j["pkg"] == pytest.approx(10.0 * rec.duration_s, rel=0.01)

    def test_nonzero_exit_flags_record_and_keeps_it(self, tmp_path):
        plan = one_cell_plan(ToolSpec(id="none"), "false")
        with open_source(SYNTH_10W) as source:
            rec = execute_run(plan, plan.entries[0], source, tmp_path)
        assert not rec.ok
        assert rec.exit_status == 1
        assert "status 1" in rec.error
        assert rec.energy_j["pkg"] >= 0.0

    def test_unlaunchable_workload_flags_record(self, tmp_path):
        plan = one_cell_plan(ToolSpec(id="none"), "/nonexistent/bin/work")
        with open_source(SYNTH_10W) as source:
            rec = execute_run(plan, plan.entries[0], source, tmp_path)
        assert not rec.ok
        assert rec.exit_status == 127
        assert "failed to launch" in rec.error

    def test_builtin_tool_writes_sample_log(self, tmp_path):
        tool = ToolSpec(id="batched", builtin="batched", hz=1000.0)
        plan = one_cell_plan(tool, "sleep 0.3")
        with open_source(SYNTH_10W) as source:
            rec = execute_run(plan, plan.entries[0], source, tmp_path)
        assert rec.ok
        log_path = Path(rec.tool_log)
        assert log_path.exists()
        samples = read_sample_log(log_path)
        assert len(samples) > 100  # ~300 ms at 1 kHz
        assert sidecar_path_for(log_path).exists()

    def test_unlaunchable_tool_skips_workload(self, tmp_path, monkeypatch):
        marker = tmp_path / "ran"
        tool = ToolSpec(id="ghost", command="/nonexistent/tool {output}")
        plan = build_plan(
            [tool], benches(("work", f"touch {marker}")), 1, 0, SYNTH_10W
        )
        with open_source(SYNTH_10W) as source:
            rec = execute_run(plan, plan.entries[0], source, tmp_path)
        assert not rec.ok
        assert "ghost" in rec.error
        assert rec.exit_status is None  # workload never ran
        assert not marker.exists()

    def test_external_tool_started_and_terminated(self, tmp_path):
        tool = ToolSpec(id="watcher", command="sleep 30", term_grace_s=2.0)
        plan = one_cell_plan(tool, "true")
        with open_source(SYNTH_10W) as source:
            rec = execute_run(plan, plan.entries[0], source, tmp_path)
        assert rec.ok  # tool was TERM'd after the workload; run is clean


class TestRunPlan:
    def test_records_in_plan_order_and_round_trip(self, tmp_path):
        plan = build_plan(tools("none"), benches(("quick", "true")), 4, 0, SYNTH_10W)
        results = tmp_path / "results.jsonl"
        records = run_plan(plan, results, out_dir=tmp_path)
        assert [(r.tool, r.benchmark, r.repetition) for r in records] == [
            (e.tool, e.benchmark, e.repetition) for e in plan.entries
        ]
        lines = results.read_text().strip().splitlines()
        assert len(lines) == 4
        loaded = read_records(results)
        assert [r.to_dict() for r in loaded] == [r.to_dict() for r in records]

    def test_cells_group_into_repetition_sized_sets(self, tmp_path):
        plan = build_plan(
            tools("none", "naive"), benches(("a", "true"), ("b", "true")), 3, 1, SYNTH_10W
        )
        records = run_plan(plan, tmp_path / "r.jsonl", out_dir=tmp_path)
        assert len(records) == 12
        groups = Counter((r.tool, r.benchmark) for r in records)
        assert set(groups.values()) == {3}

    def test_interruption_leaves_k_parseable_lines(self, tmp_path, monkeypatch):
        plan = build_plan(tools("none"), benches(("quick", "true")), 5, 0, SYNTH_10W)
        results = tmp_path / "results.jsonl"
        real_execute = orch.execute_run
        calls = {"n": 0}

        def dying_execute(*args, **kwargs):
            if calls["n"] >= 3:
                raise RuntimeError("simulated crash")
            calls["n"] += 1
            return real_execute(*args, **kwargs)

        monkeypatch.setattr(orch, "execute_run", dying_execute)
        with pytest.raises(RuntimeError, match="simulated crash"):
            run_plan(plan, results, out_dir=tmp_path)
        lines = results.read_text().strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            RunRecord.from_dict(json.loads(line))  # every line parses

    def test_failed_runs_are_recorded_not_dropped(self, tmp_path):
        plan = build_plan(
            tools("none"), benches(("good", "true"), ("bad", "false")), 2, 0, SYNTH_10W
        )
        records = run_plan(plan, tmp_path / "r.jsonl", out_dir=tmp_path)
        assert len(records) == len(plan.entries) == 4
        flagged = [r for r in records if not r.ok]
        assert len(flagged) == 2
        assert all(r.benchmark == "bad" for r in flagged)

    def test_warmups_run_but_are_not_recorded(self, tmp_path):
        marker = tmp_path / "warm_marker"
        plan = build_plan(
            tools("none"),
            benches(("toucher", f"touch {marker}")),
            1, 0, SYNTH_10W,
            warmups=[WarmupSpec(tool="none", benchmark="toucher", duration_s=5.0)],
        )
        results = tmp_path / "r.jsonl"
        records = run_plan(plan, results, out_dir=tmp_path)
        assert marker.exists()  # the warmup actually executed
        assert len(records) == 1  # but only the plan entry was recorded
        assert len(results.read_text().strip().splitlines()) == 1
