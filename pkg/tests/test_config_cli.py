import math
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snls_lab.cli import main
from snls_lab.config import SCHEMA, ConfigError, ExperimentConfig, parse_config


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg["grid.N"] == 256 and cfg.experiment == "mass-check"


def test_comments_and_whitespace():
    cfg = parse_config("# header\n  grid.L = 32   # box\n\nnoise.gamma=0.5\n")
    assert cfg["grid.L"] == 32.0 and cfg["noise.gamma"] == 0.5


@pytest.mark.parametrize("text, needle", [
    ("grid.N=100", "power of two"),
    ("noise.gamma=-1", "gamma >= 0"),
    ("grid.d=4", "d in {1, 2, 3}"),
    ("flow.dt=0.5", "dt <= 0.1"),
    ("bogus.key=1", "unknown key 'bogus.key'"),
    ("grid.N=abc", "grid.N"),
    ("grid.L=1\ngrid.L=2", "duplicate key 'grid.L'"),
    ("just text", "key=value"),
    ("experiment=fly", "one of"),
    ("flow.dt=0.003\nflow.horizon=1", "multiple of flow.dt"),
    ("burkholder.rho=inf", "rho < inf"),
])
def test_config_errors_name_key_and_rule(text, needle):
    with pytest.raises(ConfigError, match=needle.replace("{", r"\{").replace("}", r"\}")):
        parse_config(text)


def test_round_trip_defaults_and_overrides():
    cfg = parse_config("experiment=gamma-sweep\nensemble.rho=1.5,2,inf\nstrichartz.alpha=6\n"
                       "data.random=true\nsweep.gammas=2,0.5,0.1,0\n")
    assert parse_config(cfg.to_text()) == cfg
    assert cfg["ensemble.rho"] == (1.5, 2.0, math.inf)
    assert cfg["strichartz.beta"] is None


@settings(max_examples=40, deadline=None)
@given(L=st.floats(0.1, 1e4), gamma=st.floats(0, 10), width=st.floats(0.01, 10),
       paths=st.integers(1, 10000), seed=st.integers(0, 2**64 - 1),
       rhos=st.lists(st.floats(1, 100), min_size=1, max_size=4))
def test_round_trip_property(L, gamma, width, paths, seed, rhos):
    cfg = ExperimentConfig().replace(grid__L=L, noise__gamma=gamma, noise__width=width,
                                     ensemble__paths=paths, ensemble__seed=seed,
                                     ensemble__rho=tuple(rhos))
    assert parse_config(cfg.to_text()) == cfg


def test_schema_defaults_are_valid():
    ExperimentConfig().validate()
    assert set(ExperimentConfig().values) == set(SCHEMA)


# command line ------------------------------------------------------------------

SMALL_MASS = """experiment=mass-check
grid.L=32
grid.N=64
flow.dt=0.01
flow.horizon=1
flow.checkpoints=4
ensemble.paths=3
"""


def write(tmp_path, text, name="run.config"):
    p = tmp_path / name
    p.write_text(text)
    return p


def csv_bytes(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


def test_cli_mass_check_passes(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, SMALL_MASS)), "--out", str(out)]) == 0
    assert (out / "resolved.config").read_text() == parse_config(SMALL_MASS).to_text()
    summary = (out / "summary.txt").read_text()
    assert "PASS pathwise mass conservation" in summary
    assert summary.rstrip().endswith("RESULT PASS")
    assert {"ensemble.csv", "moments.csv"} <= set(csv_bytes(out))


def test_cli_worker_counts_identical(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL_MASS)
    assert main(["run", str(cfg), "--out", str(tmp_path / "w1"), "--workers", "1"]) == 0
    monkeypatch.setenv("SNLS_LAB_WORKERS", "8")
    assert main(["run", str(cfg), "--out", str(tmp_path / "w8")]) == 0
    assert csv_bytes(tmp_path / "w1") == csv_bytes(tmp_path / "w8")


def test_cli_interrupt_and_resume(tmp_path):
    cfg = write(tmp_path, SMALL_MASS)
    assert main(["run", str(cfg), "--out", str(tmp_path / "straight")]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "cut"), "--stop-at", "0.5"]) == 2
    assert "ABORT" in (tmp_path / "cut" / "summary.txt").read_text()
    assert main(["run", str(cfg), "--resume", str(tmp_path / "cut")]) == 0
    assert csv_bytes(tmp_path / "straight") == csv_bytes(tmp_path / "cut")


def test_cli_resume_at_zero_equals_fresh(tmp_path):
    cfg = write(tmp_path, SMALL_MASS)
    assert main(["run", str(cfg), "--out", str(tmp_path / "fresh")]) == 0
    (tmp_path / "empty" / "state").mkdir(parents=True)
    assert main(["run", str(cfg), "--resume", str(tmp_path / "empty")]) == 0
    assert csv_bytes(tmp_path / "fresh") == csv_bytes(tmp_path / "empty")


def test_cli_corrupted_state_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_MASS)
    assert main(["run", str(cfg), "--out", str(tmp_path / "cut"), "--stop-at", "0.5"]) == 2
    f = tmp_path / "cut" / "state" / "path_00001.trj"
    f.write_bytes(f.read_bytes()[:100])
    assert main(["run", str(cfg), "--resume", str(tmp_path / "cut")]) == 2
    assert "path_00001.trj" in (tmp_path / "cut" / "summary.txt").read_text()


def test_cli_abort_names_seed(tmp_path):
    cfg = write(tmp_path, SMALL_MASS + "data.l2=1e7\nensemble.seed=42\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "seed 42" in (tmp_path / "o" / "summary.txt").read_text()


def test_cli_bad_config_nonzero(tmp_path, capsys):
    assert main(["run", str(write(tmp_path, "grid.N=100\n"))]) == 2
    assert "power of two" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.config")]) == 2


def test_cli_dispersive_warns_on_small_box(tmp_path):
    cfg = write(tmp_path, "experiment=dispersive-check\ngrid.L=16\ngrid.N=64\ndispersive.times=1,2,4\n")
    code = main(["run", str(cfg), "--out", str(tmp_path / "o")])
    summary = (tmp_path / "o" / "summary.txt").read_text()
    assert "WARN boundary mass" in summary
    assert (tmp_path / "o" / "dispersive.csv").exists()
    assert (code == 0) == summary.rstrip().endswith("RESULT PASS")


@pytest.mark.parametrize("text", [
    "experiment=dissipation-check\nflow.dt=0.01\nflow.horizon=1\n",
    "experiment=dispersive-check\ngrid.L=256\ngrid.N=1024\n",
    "experiment=duhamel-check\nflow.dt=0.01\nflow.horizon=0.5\nensemble.paths=2\n",
    "experiment=burkholder-check\nburkholder.paths=256\nburkholder.steps=100\n",
    "experiment=gamma-sweep\ngrid.L=32\ngrid.N=64\nflow.dt=0.01\nflow.horizon=1\n"
    "sweep.gammas=2,0.1\nsweep.horizons=1\nensemble.paths=2\n",
    "experiment=scattering-study\ngrid.L=32\ngrid.N=64\nflow.dt=0.01\nflow.horizon=2\n"
    "flow.checkpoints=4\nscattering.early=1\nscattering.from=0.5\nensemble.paths=2\n",
])
def test_exit_code_matches_summary(tmp_path, text):
    code = main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")])
    summary = (tmp_path / "o" / "summary.txt").read_text()
    assert code in (0, 1)
    assert (code == 0) == ("FAIL" not in summary)
    assert (code == 0) == summary.rstrip().endswith("RESULT PASS")


def test_console_script_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "snls_lab.cli", "run",
                          str(write(tmp_path, SMALL_MASS)), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "RESULT PASS" in out.stdout
