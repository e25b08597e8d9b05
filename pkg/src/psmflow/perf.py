"""Performance models, timing reports and the scaling harness."""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from dataclasses import dataclass, field

from .errors import ConfigError
from .partition import TIMING_KEYS


@dataclass(frozen=True)
class MachineModel:
    bandwidth_fast: float  # GB/s, accelerator-class memory
    bandwidth_slow: float  # GB/s, host-class memory
    bytes_per_cell_update: float = 304.0

    def __post_init__(self):
        if not (self.bandwidth_fast > 0 and self.bandwidth_slow > 0):
            raise ConfigError("bandwidths must be positive")


def roofline_tmin(model: MachineModel, cells: float) -> float:
    """Bandwidth-bound lower limit of one time step, in milliseconds."""
    return model.bytes_per_cell_update * cells / (model.bandwidth_fast * 1e9) * 1e3


def hybrid_speedup(frac_acc: float, bw_slow: float, bw_fast: float) -> float:
    """Amdahl estimate when a fraction ``frac_acc`` of the data traffic moves to the fast memory."""
    if not 0.0 <= frac_acc <= 1.0:
        raise ConfigError("frac_acc must lie in [0, 1]")
    if bw_slow <= 0 or bw_fast <= 0:
        raise ConfigError("bandwidths must be positive")
    return 1.0 / (1.0 + frac_acc * (bw_slow / bw_fast - 1.0))


def measured_speedup(mlups_base: float, mlups_accelerated: float) -> float:
    if mlups_base <= 0 or mlups_accelerated <= 0:
        raise ConfigError("throughputs must be positive")
    return mlups_accelerated / mlups_base


def mlups(cells: float, steps: int, seconds: float) -> float:
    if steps == 0:
        return 0.0
    if seconds <= 0:
        raise ConfigError("seconds must be positive")
    return cells * steps / seconds / 1e6


def parallel_efficiency(series) -> list:
    """Per-worker throughput relative to the first (baseline) entry."""
    series = list(series)
    if not series:
        raise ConfigError("efficiency series needs a baseline entry")
    base = series[0]
    if base <= 0:
        raise ConfigError("baseline throughput must be positive")
    return [v / base for v in series]


@dataclass
class TimingReport:
    """Per-step wall times in milliseconds keyed by module.

    ``other`` is the residual of the measured total after the named
    categories. Each phase ends with a barrier over all workers, so a
    category's time is the slowest worker's time for that phase.
    """

    times_ms: dict
    steps: int
    cells: int
    workers: int
    total_ms: float

    @classmethod
    def from_totals(cls, totals: dict, wall_s: float, steps: int, cells: int, workers: int) -> TimingReport:
        steps = max(steps, 1)
        named = {k: totals.get(k, 0.0) for k in TIMING_KEYS if k != "other"}
        other = max(0.0, wall_s - sum(named.values()))
        times = {k: v * 1e3 / steps for k, v in named.items()}
        times["other"] = other * 1e3 / steps
        return cls(times, steps, cells, workers, wall_s * 1e3 / steps)

    @property
    def mlups(self) -> float:
        return mlups(self.cells, 1, self.total_ms / 1e3) if self.total_ms > 0 else 0.0

    def to_table(self, sep: str = "\t") -> str:
        lines = [sep.join(("module", "ms_per_step", "share"))]
        for k in TIMING_KEYS:
            share = self.times_ms[k] / self.total_ms if self.total_ms > 0 else 0.0
            lines.append(sep.join((k, f"{self.times_ms[k]:.4f}", f"{share:.4f}")))
        lines.append(sep.join(("total", f"{self.total_ms:.4f}", "1.0000")))
        return "\n".join(lines)


def time_run(sim, steps: int) -> TimingReport:
    """Run ``steps`` steps of a :class:`~psmflow.partition.Simulation` and report timings."""
    sim.timers.reset()
    t0 = time.perf_counter()
    sim.run(steps)
    wall = time.perf_counter() - t0
    return TimingReport.from_totals(sim.timers.totals, wall, steps, sim.n_cells, len(sim.workers))


def git_revision(cwd=None) -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, cwd=cwd, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def scenario_hash(scenario: dict) -> str:
    blob = json.dumps(scenario, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ScalingRow:
    workers: int
    cells: int
    seconds: float
    steps: int
    repeats: list = field(default_factory=list)
    report: TimingReport | None = None

    @property
    def cells_per_worker(self) -> float:
        return self.cells / self.workers

    @property
    def mlups(self) -> float:
        return mlups(self.cells, self.steps, self.seconds)

    @property
    def mlups_per_worker(self) -> float:
        return self.mlups / self.workers


@dataclass
class ScalingReport:
    mode: str
    rows: list
    meta: dict

    @property
    def efficiency(self) -> list:
        return parallel_efficiency([r.mlups_per_worker for r in self.rows])

    def to_table(self, sep: str = "\t") -> str:
        head = ("workers", "cells", "cells_per_worker", "best_s", "MLUPs", "MLUPs_per_worker", "efficiency")
        lines = [sep.join(head)]
        for r, e in zip(self.rows, self.efficiency):
            lines.append(sep.join((
                str(r.workers), str(r.cells), f"{r.cells_per_worker:.0f}", f"{r.seconds:.6f}",
                f"{r.mlups:.4f}", f"{r.mlups_per_worker:.4f}", f"{e:.4f}",
            )))
        return "\n".join(lines)

    def meta_block(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in sorted(self.meta.items()))


def weak_blocks(workers: int) -> tuple:
    """Block grid for ``workers`` blocks, doubling x, y, z alternately."""
    if workers < 1 or workers & (workers - 1):
        raise ConfigError(f"weak scaling needs a power-of-two worker count, got {workers}")
    b = [1, 1, 1]
    axis = 0
    n = workers
    while n > 1:
        b[axis] *= 2
        axis = (axis + 1) % 3
        n //= 2
    return tuple(b)


def scaling_harness(factory, worker_counts, mode: str = "weak", steps: int = 5, repeats: int = 3,
                    warmup: int = 1, runner=None, scenario=None) -> ScalingReport:
    """Run ``factory(workers)`` at every worker count and keep the best of ``repeats`` runs.

    ``factory`` returns a :class:`~psmflow.partition.Simulation`. ``runner``
    (``runner(sim, steps) -> seconds``) can replace the wall-clock
    measurement, e.g. to inject synthetic timings.
    """
    if mode not in ("weak", "strong"):
        raise ConfigError(f"unknown scaling mode {mode!r}")
    if repeats < 3:
        raise ConfigError("at least three repetitions are required")
    counts = list(worker_counts)
    if not counts or counts[0] != 1:
        raise ConfigError("worker counts must start with the 1-worker baseline")
    rows = []
    for n in counts:
        sim = factory(n)
        try:
            if len(sim.workers) != n:
                raise ConfigError(f"scenario for {n} workers has {len(sim.workers)} blocks")
            for _ in range(warmup):
                if runner is None:
                    sim.run(1)
            times, reports = [], []
            for _ in range(repeats):
                if runner is None:
                    rep = time_run(sim, steps)
                    times.append(rep.total_ms * steps / 1e3)
                    reports.append(rep)
                else:
                    times.append(float(runner(sim, steps)))
                    reports.append(None)
            best = min(range(repeats), key=lambda i: times[i])
            rows.append(ScalingRow(n, sim.n_cells, times[best], steps, times, reports[best]))
        finally:
            sim.close()
    if mode == "weak":
        per = {r.cells_per_worker for r in rows}
        if len(per) != 1:
            raise ConfigError(f"weak scaling requires constant cells per worker, got {sorted(per)}")
    else:
        total = {r.cells for r in rows}
        if len(total) != 1:
            raise ConfigError(f"strong scaling requires a constant problem size, got {sorted(total)}")
    meta = {
        "mode": mode,
        "workers": ",".join(str(r.workers) for r in rows),
        "steps": steps,
        "repeats": repeats,
        "git_revision": git_revision(),
        "scenario_hash": scenario_hash(scenario) if scenario is not None else "none",
    }
    return ScalingReport(mode, rows, meta)
