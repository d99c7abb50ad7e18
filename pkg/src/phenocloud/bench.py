"""Concurrent-process benchmark harness and timing analyzer.

The harness starts P identical workload processes behind a launch barrier
and records per-process real/user/sys seconds (the measurement model of
GNU time: wall clock around the process, CPU split from the OS's
child-process resource accounting).  The analyzer side is pure arithmetic
over saved runs: slowest/fastest process, system-time percentage,
degradation against a baseline, and speedup curves.  Reference timing
tables for virtual and physical machines ship as JSON fixtures.
"""

from __future__ import annotations

import json
import multiprocessing
import resource
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources as importlib_resources

from phenocloud.errors import PhenocloudError


class BenchError(PhenocloudError):
    pass


@dataclass(frozen=True)
class TimingRecord:
    real_s: float
    user_s: float
    sys_s: float

    def __post_init__(self):
        if self.real_s <= 0:
            raise ValueError("real_s must be positive")
        if self.user_s < 0 or self.sys_s < 0:
            raise ValueError("CPU times must be non-negative")

    def to_dict(self):
        return {"real_s": self.real_s, "user_s": self.user_s, "sys_s": self.sys_s}


@dataclass(frozen=True)
class MachineLabel:
    size_class: str  # S | M | L | XL | R
    cores: int
    hyperthreading: bool
    ram_gb: float

    def to_dict(self):
        return {
            "size_class": self.size_class,
            "cores": self.cores,
            "hyperthreading": self.hyperthreading,
            "ram_gb": self.ram_gb,
        }


@dataclass
class BenchRun:
    machine: MachineLabel
    phase: str
    processes: int
    records: list
    label: str = ""
    failed: bool = False

    def to_dict(self):
        return {
            "label": self.label,
            "machine": self.machine.to_dict(),
            "phase": self.phase,
            "processes": self.processes,
            "failed": self.failed,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, raw):
        return cls(
            machine=MachineLabel(**raw["machine"]),
            phase=raw["phase"],
            processes=raw["processes"],
            records=[TimingRecord(**r) for r in raw["records"]],
            label=raw.get("label", ""),
            failed=raw.get("failed", False),
        )


# --- analyzer ----------------------------------------------------------------


def slowest(run: BenchRun) -> TimingRecord:
    """The record with maximal real time; what the user actually waits for."""
    if not run.records:
        raise BenchError("run has no records")
    return max(run.records, key=lambda r: r.real_s)


def fastest(run: BenchRun) -> TimingRecord:
    if not run.records:
        raise BenchError("run has no records")
    return min(run.records, key=lambda r: r.real_s)


def sys_pct(record: TimingRecord) -> float:
    """System time as a percentage of real time."""
    return 100.0 * record.sys_s / record.real_s


def degradation_pct(candidate: TimingRecord, baseline: TimingRecord) -> float:
    """Relative slowdown of candidate vs baseline; negative means faster."""
    return 100.0 * (candidate.real_s - baseline.real_s) / baseline.real_s


def speedup_curve(timings) -> list:
    """[(P, wall time)] -> [(P, t(1)/t(P))], sorted by P."""
    by_p = {}
    for p, t in timings:
        if t <= 0:
            raise BenchError("wall times must be positive")
        if p in by_p:
            raise BenchError(f"ambiguous baseline: duplicate entry for P={p}")
        by_p[p] = t
    if 1 not in by_p:
        raise BenchError("speedup needs a P=1 baseline")
    t1 = by_p[1]
    return [(p, t1 / by_p[p]) for p in sorted(by_p)]


# --- harness -----------------------------------------------------------------


@dataclass(frozen=True)
class Workload:
    """Either an external command or a built-in CPU burner."""

    command: tuple | None = None
    work_units: int = 0

    @classmethod
    def from_spec(cls, spec: str) -> "Workload":
        if spec == "builtin":
            return cls(work_units=10**7)
        if spec.startswith("cmd:"):
            return cls(command=tuple(spec[4:].split()))
        raise ValueError(f"unknown workload spec {spec!r}")


def _child(workload: Workload, barrier, queue, index):
    barrier.wait()
    start = time.perf_counter()
    if workload.command is not None:
        before = resource.getrusage(resource.RUSAGE_CHILDREN)
        proc = subprocess.run(list(workload.command), capture_output=True)
        after = resource.getrusage(resource.RUSAGE_CHILDREN)
        exit_status = proc.returncode
        user = after.ru_utime - before.ru_utime
        sys_ = after.ru_stime - before.ru_stime
    else:
        from phenocloud.scan import _burn

        before = resource.getrusage(resource.RUSAGE_SELF)
        _burn(workload.work_units)
        after = resource.getrusage(resource.RUSAGE_SELF)
        exit_status = 0
        user = after.ru_utime - before.ru_utime
        sys_ = after.ru_stime - before.ru_stime
    real = time.perf_counter() - start
    queue.put(
        {
            "index": index,
            "exit_status": exit_status,
            "real_s": max(real, 1e-9),
            "user_s": max(user, 0.0),
            "sys_s": max(sys_, 0.0),
        }
    )


def run_concurrent(
    workload: Workload,
    processes: int,
    machine: MachineLabel | None = None,
    phase: str = "workload",
) -> BenchRun:
    """Run P copies of the workload simultaneously and time each one.

    All P processes are spawned first and released together by a barrier,
    so the measured interval excludes staggered startup.
    """
    if processes < 1:
        raise BenchError("process count must be >= 1")
    if machine is None:
        machine = MachineLabel(
            size_class="R",
            cores=multiprocessing.cpu_count(),
            hyperthreading=False,
            ram_gb=0.0,
        )
    barrier = multiprocessing.Barrier(processes + 1)
    queue = multiprocessing.Queue()
    children = [
        multiprocessing.Process(target=_child, args=(workload, barrier, queue, i))
        for i in range(processes)
    ]
    for child in children:
        child.start()
    barrier.wait()
    results = [queue.get() for _ in range(processes)]
    for child in children:
        child.join()

    results.sort(key=lambda r: r["index"])
    records = [
        TimingRecord(real_s=r["real_s"], user_s=r["user_s"], sys_s=r["sys_s"])
        for r in results
    ]
    failed = any(r["exit_status"] != 0 for r in results)
    return BenchRun(
        machine=machine,
        phase=phase,
        processes=processes,
        records=records,
        failed=failed,
    )


# --- reference fixtures -------------------------------------------------------

FIXTURE_FILES = (
    "timings_vm_ht_single.json",
    "timings_vm_nht_single.json",
    "timings_physical_single.json",
    "timings_vm_ht_multi.json",
    "timings_physical_multi.json",
)


def load_fixture_runs(names=FIXTURE_FILES) -> list:
    """Load the shipped reference timing tables as BenchRun objects."""
    runs = []
    for name in names:
        text = (
            importlib_resources.files("phenocloud.fixtures").joinpath(name).read_text()
        )
        runs.extend(BenchRun.from_dict(raw) for raw in json.loads(text))
    return runs


def find_run(runs, label: str, phase: str) -> BenchRun:
    for run in runs:
        if run.label == label and run.phase == phase:
            return run
    raise BenchError(f"no run labelled {label!r} with phase {phase!r}")


@dataclass
class BenchReport:
    """Analysis of one run, optionally against a named baseline run."""

    run_label: str
    phase: str
    max_record: TimingRecord
    min_record: TimingRecord
    sys_pct_max: float
    baseline_label: str | None = None
    degradation_pct_vs_baseline: float | None = None
    speedup: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "run": self.run_label,
            "phase": self.phase,
            "max": self.max_record.to_dict(),
            "min": self.min_record.to_dict(),
            "sys_pct": round(self.sys_pct_max, 4),
        }
        if self.baseline_label is not None:
            out["baseline"] = self.baseline_label
            out["degradation_pct"] = round(self.degradation_pct_vs_baseline, 4)
        if self.speedup:
            out["speedup"] = [[p, round(s, 4)] for p, s in self.speedup]
        return out


def analyze(run: BenchRun, baseline: BenchRun | None = None) -> BenchReport:
    worst = slowest(run)
    report = BenchReport(
        run_label=run.label or f"{run.machine.size_class}({run.machine.cores})",
        phase=run.phase,
        max_record=worst,
        min_record=fastest(run),
        sys_pct_max=sys_pct(worst),
    )
    if baseline is not None:
        report.baseline_label = baseline.label
        report.degradation_pct_vs_baseline = degradation_pct(worst, slowest(baseline))
    return report
