import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from bilateral.cli import ConfigError, cli, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TWO_STATE = str(CONFIGS / "two_state.cfg")
TRIVIAL = str(CONFIGS / "trivial.cfg")


def run(*args):
    return CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)


def write_cfg(tmp_path, text, name="plant.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = 'n = 2\nlambda.1 = "z^2+2"\nlambda.2 = "exp(-z)+0.5"\nA.1.2 = "1+z"\nA.2.1 = "0.5+z"\n'


@pytest.fixture(scope="module")
def trivial_gains(tmp_path_factory):
    out = tmp_path_factory.mktemp("trivial")
    res = run("design", TRIVIAL, "--nxi", 40, "--out", out)
    assert res.exit_code == 0, res.output
    return out


# -- config parsing


def test_config_round_trip():
    cfg = parse_config(Path(TWO_STATE))
    assert cfg.plant.n == 2
    assert cfg.get("y0") == 0.325 and cfg.get("mu") == 10 and cfg.get("nz") == 51
    assert cfg.get("mu", 3.0) == 3.0
    assert len(cfg.ic) == 2


@pytest.mark.parametrize("text", [
    'n = 2\nlambda.1 = "2"\n',
    'n = 1\nlambda.1 = "2"\nbogus = 1\n',
    'n = 1\nlambda.1 = 2 + z\n',
    'n = 1\nlambda.1 = "2"\nA.1.2 = "1"\n',
    'n = 2\nlambda.1 = "2"\nlambda.2 = "1"\nic.1 = "z"\n',
    'n = 1\nlambda.1 = "(2"\n',
    'lambda.1 = "2"\n',
    'n = 1\nlambda.1 = "2"\nnz = 5.5\n',
])
def test_bad_configs_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        parse_config(Path(write_cfg(tmp_path, text)))


def test_bad_config_exit_code(tmp_path):
    res = run("scan", write_cfg(tmp_path, 'n = 1\nlambda.1 = 2 + z\n'))
    assert res.exit_code == 2
    assert "error:" in res.output


def test_missing_config_exit_code(tmp_path):
    assert run("scan", tmp_path / "nope.cfg").exit_code == 2


def test_invalid_thread_cap_exit_code():
    env = {**os.environ, "BACKSTEP_THREADS": "many"}
    proc = subprocess.run([sys.executable, "-m", "bilateral.cli", "scan", TRIVIAL, "--out", os.devnull],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 2
    assert "BACKSTEP_THREADS" in proc.stderr


# -- scan


def test_scan_table_and_csv(tmp_path):
    res = run("scan", TWO_STATE, "--out", tmp_path)
    assert res.exit_code == 0
    lines = res.output.splitlines()
    assert lines[0].split() == ["#", "lo", "hi", "order"]
    assert len(lines) == 5 and "descending" in lines[1]
    rows = (tmp_path / "intervals.csv").read_text().splitlines()
    assert rows[0] == "lo,hi,descending" and len(rows) == 5
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "scan" and len(man["intervals"]) == 4


# -- design


def test_design_rejects_central_folding_point(tmp_path):
    res = run("design", TWO_STATE, "--y0", 0.5, "--out", tmp_path)
    assert res.exit_code == 3


def test_design_reports_non_convergence(tmp_path):
    res = run("design", TWO_STATE, "--max-iter", 1, "--nxi", 40, "--out", tmp_path)
    assert res.exit_code == 4
    assert "last delta" in res.output


def test_design_needs_folding_point(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert run("design", cfg, "--out", tmp_path / "o").exit_code == 2


def test_trivial_design_outputs(trivial_gains):
    man = json.loads((trivial_gains / "manifest.json").read_text())
    assert man["kernels"]["bs_iterations"] <= 1
    assert all(man["verdicts"].values())
    for group in ("backstepping", "decoupling"):
        for k, v in man["residuals"][group].items():
            if k != "lower_triangular":
                assert v < 1e-12
    rows = (trivial_gains / "gains.csv").read_text().splitlines()
    assert rows[0] == "z,R_1_1,R_1_2,R_2_1,R_2_2,R_3_1,R_3_2,R_4_1,R_4_2"
    data = np.loadtxt(trivial_gains / "gains.csv", delimiter=",", skiprows=1)
    assert np.all(data[:, 1:] == 0)


def test_manifest_records_artifact_hashes(trivial_gains):
    import hashlib
    man = json.loads((trivial_gains / "manifest.json").read_text())
    for name, digest in man["artifacts"].items():
        assert hashlib.sha256((trivial_gains / name).read_bytes()).hexdigest() == digest


def test_rerun_from_manifest_is_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "y0 = 0.325\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("design", cfg, "--nxi", 40, "--out", a).exit_code == 0
    assert run("design", cfg, "--from-manifest", a / "manifest.json", "--out", b).exit_code == 0
    for name in ("K.csv", "P.csv", "Q.csv", "gains.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["kernels"]["bs_iterations"] == mb["kernels"]["bs_iterations"]
    assert ma["kernels"]["dec_iterations"] == mb["kernels"]["dec_iterations"]
    assert ma["options"] == mb["options"]


def test_rerun_with_edited_config_rejected(tmp_path, trivial_gains):
    cfg = write_cfg(tmp_path, Path(TRIVIAL).read_text() + "tol = 1e-4\n")
    res = run("design", cfg, "--from-manifest", trivial_gains / "manifest.json", "--out", tmp_path / "o")
    assert res.exit_code == 2


# -- simulate and verify


def test_corrupted_bundle_rejected(tmp_path, trivial_gains):
    broken = tmp_path / "broken"
    broken.mkdir()
    for f in trivial_gains.iterdir():
        (broken / f.name).write_bytes(f.read_bytes())
    data = bytearray((broken / "design.npz").read_bytes())
    data[len(data) // 2] ^= 0xFF
    (broken / "design.npz").write_bytes(bytes(data))
    res = run("simulate", TRIVIAL, "--gains", broken, "--T", 0.01, "--dt", 1e-3, "--out", tmp_path / "s")
    assert res.exit_code == 2
    assert "checksum" in res.output


def test_gains_for_another_plant_rejected(tmp_path, trivial_gains):
    cfg = write_cfg(tmp_path, 'n = 2\nlambda.1 = "3"\nlambda.2 = "1"\ny0 = 0.4\nmu = 0\n')
    res = run("simulate", cfg, "--gains", trivial_gains, "--T", 0.01, "--dt", 1e-3, "--out", tmp_path / "s")
    assert res.exit_code == 2


def test_zero_initial_state_gives_zero_csv(tmp_path, trivial_gains):
    cfg = write_cfg(tmp_path, Path(TRIVIAL).read_text() + 'ic.1 = "0"\nic.2 = "0"\n')
    res = run("simulate", cfg, "--gains", trivial_gains, "--T", 0.02, "--dt", 1e-3, "--out", tmp_path / "s")
    assert res.exit_code == 0
    assert "zero initial state" in res.output
    data = np.loadtxt(tmp_path / "s" / "trajectory.csv", delimiter=",", skiprows=1)
    assert np.all(data[:, 2:] == 0)


def test_open_loop_reports_instability(tmp_path):
    res = run("simulate", TWO_STATE, "--open-loop", "--T", 0.5, "--dt", 1e-4, "--out", tmp_path)
    assert res.exit_code == 0
    assert "unstable (expected)" in res.output


def test_open_loop_rejects_gains(tmp_path, trivial_gains):
    res = run("simulate", TRIVIAL, "--open-loop", "--gains", trivial_gains, "--out", tmp_path)
    assert res.exit_code == 2


def test_closed_loop_needs_gains(tmp_path):
    assert run("simulate", TRIVIAL, "--out", tmp_path).exit_code == 2


def test_verify_trivial_design(tmp_path, trivial_gains):
    res = run("verify", TRIVIAL, "--gains", trivial_gains, "--T", 0.05, "--dt", 1e-4, "--out", tmp_path)
    assert res.exit_code == 0
    assert res.output.strip().endswith("pass")
    dev = np.loadtxt(tmp_path / "deviation.csv", delimiter=",", skiprows=1)
    assert np.max(dev[:, 1]) <= 1e-6
