import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from psmflow.errors import ConfigError
from psmflow.lbm import BoundarySpec, FluidParams
from psmflow.partition import TIMING_KEYS, Simulation
from psmflow.perf import (
    MachineModel,
    TimingReport,
    hybrid_speedup,
    measured_speedup,
    mlups,
    parallel_efficiency,
    roofline_tmin,
    scaling_harness,
    time_run,
    weak_blocks,
)

GPU_CPU = MachineModel(bandwidth_fast=1400.0, bandwidth_slow=100.0)


def test_roofline_reference_case():
    assert roofline_tmin(GPU_CPU, 500 * 200 * 800) == pytest.approx(17.371428571, rel=1e-9)


def test_hybrid_speedup_reference_case():
    assert hybrid_speedup(0.95, 70.0, 1400.0) == pytest.approx(1 / 0.0975, rel=1e-12)


def test_measured_speedup():
    assert measured_speedup(41.0, 377.0) == pytest.approx(9.195, abs=1e-3)


def test_roofline_linear():
    half = MachineModel(700.0, 100.0)
    assert roofline_tmin(half, 1e6) == 2 * roofline_tmin(GPU_CPU, 1e6)
    assert roofline_tmin(GPU_CPU, 0) == 0.0


@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4))
def test_hybrid_speedup_endpoints(bs, bf):
    assert hybrid_speedup(0.0, bs, bf) == 1.0
    assert hybrid_speedup(1.0, bs, bf) == pytest.approx(bf / bs, rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_hybrid_speedup_monotone(a, b):
    lo, hi = sorted((a, b))
    assert hybrid_speedup(lo, 100.0, 1400.0) <= hybrid_speedup(hi, 100.0, 1400.0) + 1e-12


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        hybrid_speedup(1.5, 100.0, 1400.0)
    with pytest.raises(ConfigError):
        MachineModel(0.0, 1.0)
    with pytest.raises(ConfigError):
        parallel_efficiency([])
    with pytest.raises(ConfigError):
        mlups(10, 1, 0.0)


def test_mlups_and_efficiency():
    assert mlups(1e6, 10, 2.0) == 5.0
    assert mlups(1e6, 0, 0.0) == 0.0
    eff = parallel_efficiency([10.0, 7.08, 5.34])
    assert eff == pytest.approx([1.0, 0.708, 0.534])


def test_timing_report_residual_other():
    totals = dict.fromkeys(TIMING_KEYS, 0.0)
    totals.update(PSM=1.0, mapping=0.5, other=99.0)
    rep = TimingReport.from_totals(totals, wall_s=2.0, steps=4, cells=1000, workers=2)
    assert rep.times_ms["PSM"] == 250.0
    assert rep.times_ms["other"] == pytest.approx(125.0)
    assert sum(rep.times_ms.values()) == pytest.approx(rep.total_ms)
    table = rep.to_table()
    assert [l.split("\t")[0] for l in table.splitlines()[1:-1]] == list(TIMING_KEYS)


def test_time_run_sums_to_total():
    sim = Simulation((16, 16, 16), (2, 1, 1), FluidParams(0.8), BoundarySpec.all("periodic"))
    rep = time_run(sim, 3)
    assert set(rep.times_ms) == set(TIMING_KEYS)
    assert sum(rep.times_ms.values()) == pytest.approx(rep.total_ms, rel=1e-9)
    assert rep.times_ms["PSM"] > 0


@pytest.mark.parametrize("n,expected", [(1, (1, 1, 1)), (2, (2, 1, 1)), (4, (2, 2, 1)), (8, (2, 2, 2)), (16, (4, 2, 2))])
def test_weak_blocks(n, expected):
    assert weak_blocks(n) == expected


def test_weak_blocks_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        weak_blocks(6)


def _fluid_factory(base=(8, 8, 8)):
    def make(n):
        b = weak_blocks(n)
        shape = tuple(s * k for s, k in zip(base, b))
        return Simulation(shape, b, FluidParams(0.8), BoundarySpec.all("periodic"))

    return make


def test_weak_scaling_with_injected_timer():
    # synthetic timings: the run time grows by 10 % per doubling
    def runner(sim, steps):
        return steps * 0.1 * 1.1 ** math.log2(len(sim.workers))

    rep = scaling_harness(_fluid_factory(), [1, 2, 4, 8], mode="weak", steps=2, runner=runner, scenario={"a": 1})
    assert [r.cells_per_worker for r in rep.rows] == [512] * 4
    assert rep.efficiency == pytest.approx([1.0, 1 / 1.1, 1 / 1.21, 1 / 1.331])
    assert rep.meta["scenario_hash"] != "none"
    assert len(rep.to_table().splitlines()) == 5


def test_best_of_repeats():
    calls = iter([3.0, 1.0, 2.0])

    def runner(sim, steps):
        return next(calls)

    rep = scaling_harness(_fluid_factory(), [1], steps=1, runner=runner)
    assert rep.rows[0].seconds == 1.0 and rep.rows[0].repeats == [3.0, 1.0, 2.0]


def test_harness_structural_checks():
    with pytest.raises(ConfigError):
        scaling_harness(_fluid_factory(), [2, 4], steps=1, runner=lambda s, n: 1.0)
    with pytest.raises(ConfigError):
        scaling_harness(_fluid_factory(), [1, 2], steps=1, repeats=2, runner=lambda s, n: 1.0)

    def strong(n):
        return Simulation((16, 16, 16), weak_blocks(n), FluidParams(0.8), BoundarySpec.all("periodic"))

    with pytest.raises(ConfigError, match="constant cells per worker"):
        scaling_harness(strong, [1, 2], mode="weak", steps=1, runner=lambda s, n: 1.0)
    rep = scaling_harness(strong, [1, 2], mode="strong", steps=1, runner=lambda s, n: 1.0)
    assert rep.efficiency == [1.0, 0.5]


def test_harness_real_timing():
    rep = scaling_harness(_fluid_factory(), [1, 2], steps=2)
    assert all(r.seconds > 0 and r.report is not None for r in rep.rows)
