"""Embarrassingly parallel 2D parameter scan.

The grid over (ma, tanb) is split statically into equal contiguous index
ranges, one per worker process.  Workers evaluate their share with the
configured kernel and write partial files; the coordinator concatenates
them in worker order, so the merged file is byte-identical for any worker
count.  There is no inter-worker communication and no dynamic scheduling:
per-point cost is near constant, so static shares need no balancing.
"""

from __future__ import annotations

import multiprocessing
import os
import subprocess
from dataclasses import dataclass

import numpy as np

from phenocloud.errors import PhenocloudError

STATUS_ALLOWED = "ALLOWED"
STATUS_EXC_LHC = "EXC_LHC"
STATUS_EXC_LEP = "EXC_LEP"

HEADER = "# MA TANB STATUS\n"


class ScanError(PhenocloudError):
    pass


@dataclass(frozen=True)
class ScanGrid:
    ma_min: float = 90.0
    ma_max: float = 500.0
    tb_min: float = 1.1
    tb_max: float = 60.0
    steps_per_axis: int = 120

    def __post_init__(self):
        if self.steps_per_axis < 1:
            raise ValueError("steps_per_axis must be >= 1")
        if not (self.ma_min < self.ma_max and self.tb_min < self.tb_max):
            raise ValueError("parameter ranges must be non-empty")

    @property
    def n_points(self):
        return self.steps_per_axis ** 2


def _axis(lo, hi, steps):
    if steps == 1:
        return [lo]
    return [lo + k * (hi - lo) / (steps - 1) for k in range(steps)]


def build_grid(grid: ScanGrid):
    """All (ma, tanb) points, linearized as index = i_ma * steps + i_tb."""
    ma_axis = _axis(grid.ma_min, grid.ma_max, grid.steps_per_axis)
    tb_axis = _axis(grid.tb_min, grid.tb_max, grid.steps_per_axis)
    return [(ma, tb) for ma in ma_axis for tb in tb_axis]


@dataclass(frozen=True)
class Partition:
    worker_index: int
    lo: int
    hi: int  # half-open

    @property
    def size(self):
        return self.hi - self.lo


def partition(n_points: int, workers: int):
    """Split [0, n_points) into `workers` contiguous near-equal ranges.

    The first n_points % workers ranges get the extra point.
    """
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    base, extra = divmod(n_points, workers)
    parts = []
    lo = 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        parts.append(Partition(worker_index=w, lo=lo, hi=lo + size))
        lo += size
    return parts


_BURN_CHUNK = 1 << 16
_burn_buffer = None


def _burn(work_units: int) -> float:
    """Spend work_units arithmetic operations; cost is uniform per call."""
    global _burn_buffer
    if _burn_buffer is None:
        _burn_buffer = np.sqrt(np.arange(1, _BURN_CHUNK + 1, dtype=np.float64))
    total = 0.0
    remaining = int(work_units)
    while remaining > 0:
        n = min(remaining, _BURN_CHUNK)
        total += float(np.sum(_burn_buffer[:n]))
        remaining -= n
    return total


def classify(ma: float, tanb: float) -> str:
    """Fixed stand-in exclusion rule for the real physics codes."""
    if tanb < 4 and ma < 200:
        return STATUS_EXC_LEP
    if tanb > 40:
        return STATUS_EXC_LHC
    return STATUS_ALLOWED


def builtin_kernel(ma: float, tanb: float, work_units: int = 0) -> str:
    if work_units < 0:
        raise ValueError("work_units must be >= 0")
    if work_units:
        _burn(work_units)
    return classify(ma, tanb)


def format_point(ma: float, tanb: float, status: str) -> str:
    return "%.6g %.6g %s\n" % (ma, tanb, status)


def _evaluate_builtin(points, work_units):
    return [format_point(ma, tb, builtin_kernel(ma, tb, work_units)) for ma, tb in points]


def _evaluate_command(points, command, timeout_per_point):
    stdin = "".join("%.6g %.6g\n" % (ma, tb) for ma, tb in points)
    timeout = timeout_per_point * len(points) if timeout_per_point else None
    proc = subprocess.run(
        command,
        input=stdin,
        capture_output=True,
        text=True,
        shell=isinstance(command, str),
        timeout=timeout,
    )
    if proc.returncode != 0:
        raise ScanError(f"kernel command failed with exit {proc.returncode}: {proc.stderr}")
    lines = proc.stdout.splitlines()
    if len(lines) != len(points):
        raise ScanError(
            f"kernel emitted {len(lines)} lines for {len(points)} points"
        )
    return [line.rstrip("\n") + "\n" for line in lines]


def _worker(grid_doc, part, kernel, work_units, command, timeout_per_point, out):
    grid = ScanGrid(**grid_doc)
    points = build_grid(grid)[part.lo:part.hi]
    if kernel == "builtin":
        lines = _evaluate_builtin(points, work_units)
    else:
        lines = _evaluate_command(points, command, timeout_per_point)
    part_path = f"{out}.part{part.worker_index}"
    with open(part_path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def run_scan(
    grid: ScanGrid,
    workers: int,
    out: str,
    kernel: str = "builtin",
    work_units: int = 0,
    command=None,
    timeout_per_point: float | None = None,
) -> str:
    """Evaluate the full grid with `workers` processes and merge the parts.

    On success the merged file is written to `out` and the partial files
    are removed; on any worker failure the parts are kept for diagnosis.
    """
    if kernel not in ("builtin", "command"):
        raise ValueError(f"unknown kernel {kernel!r}")
    if kernel == "command" and not command:
        raise ValueError("command kernel requires a command")
    parts = partition(grid.n_points, workers)
    grid_doc = {
        "ma_min": grid.ma_min,
        "ma_max": grid.ma_max,
        "tb_min": grid.tb_min,
        "tb_max": grid.tb_max,
        "steps_per_axis": grid.steps_per_axis,
    }

    procs = []
    for part in parts:
        p = multiprocessing.Process(
            target=_worker,
            args=(grid_doc, part, kernel, work_units, command, timeout_per_point, out),
        )
        p.start()
        procs.append(p)
    failed = []
    for part, p in zip(parts, procs):
        p.join()
        if p.exitcode != 0:
            failed.append(part.worker_index)
    if failed:
        raise ScanError(
            f"workers {failed} failed; partial files kept next to {out}"
        )

    with open(out, "w", encoding="utf-8") as merged:
        merged.write(HEADER)
        for part in parts:
            part_path = f"{out}.part{part.worker_index}"
            with open(part_path, encoding="utf-8") as fh:
                merged.write(fh.read())
    for part in parts:
        os.unlink(f"{out}.part{part.worker_index}")
    return out
