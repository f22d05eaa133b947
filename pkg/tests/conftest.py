"""Shared fixtures: deterministic clocks, fake counter backends, and the
acceptance-criteria summary (one PASS/FAIL line per criterion)."""
from __future__ import annotations

import struct
from pathlib import Path

import pytest

from raplkit.clocks import ManualClock
from raplkit.sources import (
    MSR_ENERGY_STATUS,
    MSR_UNIT_REGISTER,
    SourceDescriptor,
)

# ---------------------------------------------------------------------------
# Clocks / sources


@pytest.fixture
def manual_clock() -> ManualClock:
    return ManualClock()


@pytest.fixture
def synthetic_10w() -> SourceDescriptor:
    """10 W pkg-only synthetic source with 1 uJ units and an epoch at t=0."""
    return SourceDescriptor(
        backend="synthetic",
        domains=("pkg",),
        power_watts={"pkg": 10.0},
        start_epoch_ns=0,
    )


# ---------------------------------------------------------------------------
# Fake powercap sysfs tree


class PowercapTree:
    def __init__(self, root: Path):
        self.root = root
        self.zone = root / "intel-rapl:0"

    def write(self, domain: str, energy_uj: int) -> None:
        self.file_for(domain).write_text(f"{energy_uj}\n")

    def file_for(self, domain: str) -> Path:
        if domain == "pkg":
            return self.zone / "energy_uj"
        subname = {"pp0": "core", "pp1": "uncore", "dram": "dram"}[domain]
        for sub in sorted(self.zone.glob("intel-rapl:0:*")):
            if (sub / "name").read_text().strip() == subname:
                return sub / "energy_uj"
        raise FileNotFoundError(domain)


@pytest.fixture
def make_powercap_tree(tmp_path):
    """Build a fake `/sys/class/powercap` layout and return (root, tree)."""

    def build(
        energies: dict[str, int] | None = None,
        max_range: int = 262_143_328_850,
        subdomains: tuple[str, ...] = ("pp0", "pp1", "dram"),
    ) -> PowercapTree:
        energies = energies if energies is not None else {"pkg": 1_000_000}
        root = tmp_path / "powercap"
        zone = root / "intel-rapl:0"
        zone.mkdir(parents=True)
        (zone / "name").write_text("package-0\n")
        (zone / "max_energy_range_uj").write_text(f"{max_range}\n")
        (zone / "energy_uj").write_text(f"{energies.get('pkg', 0)}\n")
        names = {"pp0": "core", "pp1": "uncore", "dram": "dram"}
        for i, d in enumerate(subdomains):
            sub = zone / f"intel-rapl:0:{i}"
            sub.mkdir()
            (sub / "name").write_text(names[d] + "\n")
            (sub / "max_energy_range_uj").write_text(f"{max_range}\n")
            (sub / "energy_uj").write_text(f"{energies.get(d, 0)}\n")
        return PowercapTree(root)

    return build


# ---------------------------------------------------------------------------
# Fake MSR device file


class MsrFile:
    def __init__(self, path: Path, esu: int):
        self.path = path
        self.esu = esu

    @property
    def joules_per_raw(self) -> float:
        return 0.5**self.esu

    def write_counter(self, domain: str, raw: int) -> None:
        regs = dict(MSR_ENERGY_STATUS)
        data = bytearray(self.path.read_bytes())
        struct.pack_into("<Q", data, regs[domain], raw & 0xFFFFFFFFFFFFFFFF)
        self.path.write_bytes(bytes(data))


@pytest.fixture
def make_msr_file(tmp_path):
    """Create a fake MSR device image: 8-byte registers at their offsets."""

    def build(counters: dict[str, int] | None = None, esu: int = 14) -> MsrFile:
        counters = counters if counters is not None else {"pkg": 32768}
        path = tmp_path / "msr0"
        size = max(MSR_ENERGY_STATUS.values()) + 8
        data = bytearray(size)
        # unit register: ESU lives in bits 12:8
        struct.pack_into("<Q", data, MSR_UNIT_REGISTER, (esu & 0x1F) << 8)
        for domain, raw in counters.items():
            struct.pack_into("<Q", data, MSR_ENERGY_STATUS[domain], raw)
        path.write_bytes(bytes(data))
        return MsrFile(path, esu)

    return build


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion


def pytest_configure(config):
    config._acceptance_results = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            item.user_properties.append(("acceptance", marker.kwargs))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    criterion = marker.kwargs.get("criterion")
    title = marker.kwargs.get("title", "")
    results = item.config._acceptance_results
    entry = results.setdefault(criterion, {"title": title, "outcomes": []})
    if report.skipped:
        entry["outcomes"].append("SKIP")
    elif report.passed:
        entry["outcomes"].append("PASS")
    else:
        entry["outcomes"].append("FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", {})
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(results):
        entry = results[criterion]
        outcomes = entry["outcomes"]
        if "FAIL" in outcomes:
            status = "FAIL"
        elif all(o == "SKIP" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        counts = f"({outcomes.count('PASS')} passed, {outcomes.count('FAIL')} failed, {outcomes.count('SKIP')} skipped)"
        tr.write_line(f"criterion {criterion:>2}: {status}  {entry['title']} {counts}")
