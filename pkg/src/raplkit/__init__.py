"""raplkit: high-frequency energy-counter sampling, microbenchmarks and
overhead analysis for Intel RAPL (powercap sysfs or raw MSR), with a
synthetic constant-power source so everything is testable without hardware.
"""
from .clocks import Clock, ManualClock, MonotonicClock
from .microbench import (
    BenchSpec,
    SuiteReport,
    default_suite,
    per_op,
    per_op_net,
    run_suite,
    time_batch,
)
from .orchestrator import (
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
from .postprocess import (
    EnergyInterval,
    EnergySummary,
    postprocess_log,
    summarize,
    to_intervals,
    wrap_delta,
)
from .report import ReportBundle, analyze_records, write_report
from .ring import SpscRing
from .samplelog import CountingSink, CsvSampleSink, MemorySink, Sample, SampleSink
from .sampler import SamplerConfig, SamplerStats, SinkError, run_batched, run_naive, run_ring
from .sources import (
    DOMAIN_ORDER,
    EnergyUnit,
    MissingBackendError,
    MsrSource,
    PermissionDeniedError,
    PowercapSource,
    RawReading,
    ReadFailedError,
    Source,
    SourceDescriptor,
    SourceError,
    SyntheticSource,
    UnsupportedDomainError,
    open_source,
    raw_to_joules,
)
from .stats import (
    DegenerateSampleError,
    DescriptiveStats,
    DunnResult,
    Group,
    OverheadRow,
    TestResult,
    classify_delta,
    cliffs_delta,
    describe,
    dunn_posthoc,
    kruskal_wallis,
    overhead,
    shapiro_wilk,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # clocks
    "Clock", "ManualClock", "MonotonicClock",
    # sources
    "DOMAIN_ORDER", "EnergyUnit", "RawReading", "SourceDescriptor", "Source",
    "SyntheticSource", "PowercapSource", "MsrSource", "open_source", "raw_to_joules",
    "SourceError", "MissingBackendError", "PermissionDeniedError",
    "ReadFailedError", "UnsupportedDomainError",
    # sample log
    "Sample", "SampleSink", "CsvSampleSink", "MemorySink", "CountingSink",
    # samplers
    "SamplerConfig", "SamplerStats", "SinkError",
    "run_naive", "run_batched", "run_ring", "SpscRing",
    # postprocess
    "wrap_delta", "to_intervals", "summarize", "postprocess_log",
    "EnergyInterval", "EnergySummary",
    # microbench
    "BenchSpec", "SuiteReport", "per_op", "per_op_net",
    "time_batch", "run_suite", "default_suite",
    # stats
    "Group", "DescriptiveStats", "TestResult", "DunnResult", "OverheadRow",
    "DegenerateSampleError", "describe", "shapiro_wilk", "kruskal_wallis",
    "dunn_posthoc", "cliffs_delta", "classify_delta", "overhead",
    # orchestrator
    "ToolSpec", "BenchmarkSpec", "WarmupSpec", "PlanEntry", "RunPlan", "RunRecord",
    "build_plan", "load_plan", "execute_run", "run_plan", "read_records",
    # report
    "ReportBundle", "analyze_records", "write_report",
]
