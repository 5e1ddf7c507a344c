"""End-to-end checks of the experiment harness: config validation, exit
codes, byte-for-byte reproducibility, and thread invariance."""

import subprocess
import sys

import numpy as np
import pytest

from fbmflow import drift_registry
from fbmflow.cli import main


def _write(tmp_path, text, name="exp.cfg"):
    fp = tmp_path / name
    fp.write_text(text, encoding="utf-8")
    return str(fp)


FBM_GEN = """
[experiment]
kind = fbm-gen
seed = 5

[noise]
H = 0.25

[grid]
n_steps = 64

[fbm-gen]
n_paths = 2
"""


def _manifest_lines(outdir):
    return (outdir / "manifest.txt").read_text().splitlines()


# --- validation and exit codes ------------------------------------------------


def test_list_drifts_prints_the_registry(capsys):
    assert main(["list-drifts"]) == 0
    out = capsys.readouterr().out
    for name in drift_registry():
        assert any(ln.startswith(name) for ln in out.splitlines())
    assert "sections [drift.1]..[drift.k]" in out


def test_validate_accepts_a_good_config(tmp_path, capsys):
    cfg = _write(tmp_path, FBM_GEN.replace("seed = 5", "seed = 5\nout = x"))
    assert main(["validate", "--config", cfg]) == 0
    assert capsys.readouterr().out.strip() == "ok: fbm-gen config valid"


def test_validate_reports_every_error_with_the_constraint(tmp_path, capsys):
    text = """
[experiment]
kind = moment

[noise]
H = 0.7

[grid]
n_steps = 16

[moment]
p = 2
N = 5
dists = 0.1,0.01

[drift]
name = zero

[bogus]
key = 1
"""
    cfg = _write(tmp_path, text)
    assert main(["validate", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "(0, 1/2)" in err
    assert "[bogus] unknown section" in err
    assert "seed: required" in err
    assert "out: required" in err
    assert err.count("error: config:") >= 4


def test_unknown_kind_and_missing_file(tmp_path, capsys):
    cfg = _write(tmp_path, "[experiment]\nkind = banana\n")
    assert main(["validate", "--config", cfg]) == 2
    assert "must be one of" in capsys.readouterr().err
    assert main(["validate", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert "config file:" in capsys.readouterr().err


def test_unknown_drift_key_is_named(tmp_path, capsys):
    text = """
[experiment]
kind = ode-solve
seed = 1
out = {out}

[noise]
H = 0.25

[grid]
n_steps = 16

[ode-solve]
x0 = 0.0

[drift]
name = sign
frequency = 3
"""
    cfg = _write(tmp_path, text.format(out=tmp_path / "o"))
    assert main(["validate", "--config", cfg]) == 2
    assert "[drift] frequency: unknown key for drift 'sign'" \
        in capsys.readouterr().err


def test_cfl_cross_check_fires_at_config_time(tmp_path, capsys):
    text = """
[experiment]
kind = transport
seed = 1
out = {out}

[noise]
H = 0.25

[grid]
n_steps = 8

[transport]
nx = 2001
x_lo = -1.0
x_hi = 1.0

[drift]
name = sign
"""
    cfg = _write(tmp_path, text.format(out=tmp_path / "o"))
    assert main(["validate", "--config", cfg]) == 2
    assert "CFL number" in capsys.readouterr().err


def test_runtime_failure_exits_one(tmp_path, capsys):
    text = """
[experiment]
kind = ode-solve
seed = 1
out = {out}

[noise]
H = 0.25

[grid]
n_steps = 16

[ode-solve]
x0 = 0.0,0.0

[drift]
name = zero
dim = 1
"""
    cfg = _write(tmp_path, text.format(out=tmp_path / "o"))
    assert main(["run", "--config", cfg]) == 1
    assert "error: runtime: ValueError" in capsys.readouterr().err


def test_bad_thread_count_is_a_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, FBM_GEN)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out), "--threads", "0"]) == 2
    assert "--threads must be >= 1" in capsys.readouterr().err


def test_superposition_excludes_single_h(tmp_path, capsys):
    text = FBM_GEN.replace("H = 0.25", "H = 0.25\nhurst_seq = 0.4,0.2\nweights = 1,0.5")
    cfg = _write(tmp_path, text)
    assert main(["validate", "--config", cfg]) == 2
    assert "exactly one of H or hurst_seq+weights" in capsys.readouterr().err


# --- reproducibility ------------------------------------------------------------


def test_fbm_gen_reruns_byte_identically(tmp_path, capsys):
    cfg = _write(tmp_path, FBM_GEN)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == 0
    assert main(["run", "--config", cfg, "--out", str(b)]) == 0
    assert capsys.readouterr().out.count("ok: wrote") == 2
    for name in ("path_0000.csv", "path_0001.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    la, lb = _manifest_lines(a), _manifest_lines(b)
    diff = [(x, y) for x, y in zip(la, lb) if x != y]
    assert all(x.startswith("wall_time_s") for x, _ in diff)
    assert len(la) == len(lb)


def test_seed_override_changes_paths_and_manifest(tmp_path):
    cfg = _write(tmp_path, FBM_GEN)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a)]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--seed", "99"]) == 0
    assert (a / "path_0000.csv").read_bytes() != (b / "path_0000.csv").read_bytes()
    assert "seed = 99" in _manifest_lines(b)


def test_thread_count_never_changes_the_numbers(tmp_path):
    cfg = _write(tmp_path, FBM_GEN.replace("n_paths = 2", "n_paths = 4"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--threads", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    for i in range(4):
        name = f"path_{i:04d}.csv"
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert "threads = 3" in _manifest_lines(b)


# --- end-to-end experiments ------------------------------------------------------


def _summary_value(outdir, key):
    for line in (outdir / "summary.csv").read_text().splitlines():
        if line.startswith(f"{key},"):
            return line.split(",", 1)[1]
    raise KeyError(key)


def test_moment_run_with_frozen_drift_reports_exact_slope(tmp_path):
    text = """
[experiment]
kind = moment
seed = 3

[noise]
H = 0.25

[grid]
n_steps = 16

[moment]
p = 2
N = 5
dists = 0.1,0.01,0.001

[drift]
name = zero
"""
    cfg = _write(tmp_path, text)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert abs(float(_summary_value(out, "slope")) - 2.0) < 1e-12
    assert abs(float(_summary_value(out, "holder_slope")) - 2.0) < 1e-12
    assert (out / "records.csv").exists()


def test_shuffle_run_certifies_the_identity(tmp_path):
    text = """
[experiment]
kind = shuffle
seed = 12

[shuffle]
m = 2
n = 1
n_cases = 10
degree = 2
"""
    cfg = _write(tmp_path, text)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert _summary_value(out, "within_1e-12") == "True"
    assert float(_summary_value(out, "max_abs_err")) <= 1e-12
    body = (out / "records.csv").read_text().splitlines()
    assert sum(1 for ln in body if ln and ln[0].isdigit()) == 10


def test_module_execution_reaches_the_cli():
    proc = subprocess.run([sys.executable, "-m", "fbmflow", "list-drifts"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert "sign" in proc.stdout


def test_manifest_echo_suffices_to_re_run(tmp_path):
    cfg = _write(tmp_path, FBM_GEN)
    a = tmp_path / "a"
    assert main(["run", "--config", cfg, "--out", str(a)]) == 0
    lines = _manifest_lines(a)
    start = lines.index("[experiment]")
    echo = "\n".join(lines[start:]) + "\n"
    cfg2 = _write(tmp_path, echo, name="echo.cfg")
    b = tmp_path / "b"
    assert main(["run", "--config", cfg2, "--out", str(b), "--seed", "5"]) == 0
    assert (a / "path_0000.csv").read_bytes() == (b / "path_0000.csv").read_bytes()
