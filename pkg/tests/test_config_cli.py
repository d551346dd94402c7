import json
from pathlib import Path

import numpy as np
import pytest

from abraham_qed.cli import main
from abraham_qed.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_QUANTUM = """\
[run]
name = small
seed = 3

[cutoff]
family = sharp
sigma = 0.5

[modes]
k = 0.48, 0, 0.64
lam = 2
weights = 10
alpha = 0.05j

[particles]
q0 = 0.0
p0 = 0.3

[flags]
collinear = true

[time]
dt = 1e-3
t_end = 0.1

[quantum]
hbar = 0.3
n_max = 3
g = 24
x_min = -4
x_max = 4
sample_dt = 0.05
"""

SMALL_CLASSICAL = """\
[cutoff]
family = gaussian

[grid]
n_radial = 3
n_theta = 2
n_phi = 4
k_max = 3.0

[particles]
q0 = 0, 0, 0
p0 = 0.4, 0.1, 0

[field]
profile = gaussian
amplitude = 0.1, 0.05j

[time]
dt = 1e-2
t_end = 0.2
stride = 5
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.N in (1, 2)


def test_desk_config_values():
    cfg = load_config(CONFIGS / "desk.ini")
    assert cfg.hbars == [0.4, 0.2, 0.1, 0.05]
    assert cfg.modes.M == 2 and list(cfg.modes.lam) == [1, 1]
    assert np.allclose(cfg.alpha_modes, [0.05, 0.05j])
    assert cfg.n_max == 8 and cfg.G == 128


@pytest.mark.parametrize(
    "text, line",
    [
        ("[run]\nname = a\n[bogus]\nx = 1\n", 3),
        ("[run]\nname = a\ncolour = red\n", 3),
        ("key = 1\n", 1),
        ("[run]\nname = a\nname = b\n", 3),
        (SMALL_QUANTUM.replace("n_max = 3", "n_max = 0"), SMALL_QUANTUM.splitlines().index("n_max = 3") + 1),
        (SMALL_QUANTUM.replace("sigma = 0.5", "sigma = 0.3"), 5),
    ],
)
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "x.ini")
    assert exc.value.line == line
    assert f"x.ini:{line}:" in str(exc.value)


def test_tensor_cap_and_packet_fit_rejected():
    big = SMALL_QUANTUM.replace("g = 24", "g = 4096").replace("n_max = 3", "n_max = 2000")
    with pytest.raises(ConfigError, match="cap"):
        parse_config(big)
    with pytest.raises(ConfigError):
        parse_config(SMALL_QUANTUM.replace("q0 = 0.0", "q0 = 3.9"))


def test_exit_code_config_error(tmp_path, capsys):
    p = write(tmp_path, "[run]\nname = a\nnonsense = 1\n")
    assert main(["check-cutoff", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert ":3:" in capsys.readouterr().err
    assert main(["check-cutoff", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2


def test_seed_must_be_u64(tmp_path):
    p = write(tmp_path, SMALL_CLASSICAL)
    with pytest.raises(SystemExit):
        main(["diagnostics", "--config", str(p), "--seed", "-1"])
    with pytest.raises(SystemExit):
        main(["diagnostics", "--config", str(p), "--seed", str(2**64)])


def test_check_cutoff_pass(tmp_path):
    p = write(tmp_path, SMALL_CLASSICAL)
    assert main(["check-cutoff", "--config", str(p), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "admissibility.json").read_text())
    assert rep["passed"] is True


def test_simulate_classical_reproducible(tmp_path):
    p = write(tmp_path, SMALL_CLASSICAL)
    for d in ("a", "b"):
        assert main(["simulate-classical", "--config", str(p), "--out", str(tmp_path / d), "--seed", "5"]) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    summ = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summ["energy_drift"] < 1e-6 and summ["seed"] == 5


def test_simulate_quantum_reproducible(tmp_path):
    p = write(tmp_path, SMALL_QUANTUM)
    for d in ("a", "b"):
        assert main(["simulate-quantum", "--config", str(p), "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "beta_hbar0.3.csv").read_bytes()
    assert a == (tmp_path / "b" / "beta_hbar0.3.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0].startswith("#")
    assert len([ln for ln in lines if not ln.startswith("#")]) == 1 + 3


def test_numerical_failure_exit_code(tmp_path):
    text = SMALL_QUANTUM.replace("alpha = 0.05j", "alpha = 0.5").replace("sample_dt", "leakage_bound = 1e-12\nsample_dt")
    p = write(tmp_path, text)
    assert main(["simulate-quantum", "--config", str(p), "--out", str(tmp_path)]) == 3
    info = json.loads((tmp_path / "failure.json").read_text())
    assert info["error"] == "LeakageError"


def test_diagnostics_pass(tmp_path):
    p = write(tmp_path, SMALL_QUANTUM)
    assert main(["diagnostics", "--config", str(p), "--out", str(tmp_path), "--seed", "11"]) == 0
    rows = json.loads((tmp_path / "diagnostics.json").read_text())
    assert rows and all(r["passed"] for r in rows)
