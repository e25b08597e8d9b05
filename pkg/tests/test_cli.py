import subprocess
import sys

import pytest
import yaml

from psmflow.cli import main, weak_factory
from psmflow.config import preset


def test_perf_model_tmin(capsys):
    assert main(["perf-model", "--tmin", "--bytes", "304", "--cells", "8e7", "--bandwidth", "1400"]) == 0
    assert "T_min = 17.4 ms/time step" in capsys.readouterr().out


def test_perf_model_speedup(capsys):
    assert main(["perf-model", "--speedup", "--frac", "0.95", "--bw-slow", "70", "--bw-fast", "1400"]) == 0
    assert "S_hyb = 10.3" in capsys.readouterr().out


def test_perf_model_without_mode_is_config_error(capsys):
    assert main(["perf-model"]) == 2


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump({"kind": "poiseuille", "fluid": {"tau": 0.4}, "bogus": 1}))
    assert main(["run", str(p)]) == 2
    err = capsys.readouterr().err
    assert "bogus: unknown key" in err and "viscosity" in err


def test_missing_config_exit_code():
    assert main(["run", "/nonexistent/case.yaml"]) == 2


def test_run_writes_outputs(tmp_path, capsys):
    cfg = preset("poiseuille", domain=[2, 16, 2], run={"steps": 4, "cadence": 2, "output_dir": str(tmp_path / "o")})
    p = tmp_path / "c.yaml"
    cfg.dump(p)
    assert main(["run", str(p)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("module")
    assert len(list((tmp_path / "o").glob("grid_*.txt"))) == 3


def test_validate_cases(capsys):
    assert main(["validate", "mapping"]) == 0
    assert "passed\tTrue" in capsys.readouterr().out
    assert main(["validate", "dilute"]) == 0
    out = capsys.readouterr().out
    assert "galileo\t8.9" in out and "particles\t10" in out


def test_scale_strong(tmp_path, capsys):
    cfg = preset("poiseuille", domain=[16, 16, 16])
    p = tmp_path / "c.yaml"
    cfg.dump(p)
    assert main(["scale", str(p), "--mode", "strong", "--workers", "1,2", "--steps", "1"]) == 0
    out = capsys.readouterr().out
    assert "efficiency" in out and "git_revision=" in out


def test_scale_bad_workers(tmp_path):
    cfg = preset("poiseuille", domain=[16, 16, 16])
    p = tmp_path / "c.yaml"
    cfg.dump(p)
    assert main(["scale", str(p), "--workers", "1,x"]) == 2
    assert main(["scale", str(p), "--workers", "1,3", "--mode", "strong"]) == 2


def test_weak_factory_keeps_cells_per_worker():
    cfg = preset("dilute", blocks=[2, 2, 2])
    make = weak_factory(cfg, workers_threads=False)
    for n, shape in ((1, (63, 25, 100)), (2, (126, 25, 100)), (8, (126, 50, 200))):
        sim = make(n)
        assert sim.decomp.domain_shape == shape and len(sim.workers) == n
        sim.close()


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "psmflow.cli", "perf-model", "--measured", "41", "377"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "9.2" in r.stdout
