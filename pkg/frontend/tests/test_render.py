"""Rendering gates: every figure kind draws from its golden fixtures and
the PNG bytes do not move between runs.

The fixtures under tests/fixtures/ are unedited output directories from
real simulator runs, so these tests double as a contract check on the CSV
schemas the two packages share.
"""

import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from fbmplots.cli import main

FIXTURES = Path(__file__).parent / "fixtures"

CASES = {
    "paths": ["fbm/path_0000.csv", "fbm/path_0001.csv", "fbm/path_0002.csv"],
    "cov-error": [f"fbm/path_{i:04d}.csv" for i in range(8)],
    "moment-fit": ["mom/summary.csv"],
    "tail-fit": ["tail/records.csv"],
    "transport-snapshots": ["tpt/solution.csv", "tpt/reference.csv"],
    "test-integrals": ["cont/comparison.csv"],
}

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _inputs(kind):
    return ",".join(str(FIXTURES / rel) for rel in CASES[kind])


def _render(kind, out):
    code = main(["render", "--kind", kind, "--in", _inputs(kind), "--out", str(out)])
    assert code == 0
    return out.read_bytes()


@pytest.mark.parametrize("kind", sorted(CASES))
def test_every_kind_renders_byte_stable_from_its_fixture(kind, tmp_path):
    first = _render(kind, tmp_path / "first.png")
    second = _render(kind, tmp_path / "second.png")
    assert first.startswith(PNG_MAGIC)
    assert len(first) > 5000
    assert first == second
    print(f"PASS render {kind}: {len(first)} identical bytes twice")


def test_rendering_leaves_the_inputs_untouched(tmp_path):
    watched = [FIXTURES / rel for rel in CASES["transport-snapshots"]]
    watched.append(FIXTURES / "tpt" / "manifest.txt")
    before = [path.read_bytes() for path in watched]
    _render("transport-snapshots", tmp_path / "fig.png")
    assert [path.read_bytes() for path in watched] == before


def test_fresh_interpreters_agree_on_the_bytes(tmp_path):
    outs = [tmp_path / "a.png", tmp_path / "b.png"]
    for out in outs:
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "fbmplots",
                "render",
                "--kind",
                "paths",
                "--in",
                _inputs("paths"),
                "--out",
                str(out),
            ],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_missing_manifest_is_refused(tmp_path, capsys):
    orphan = tmp_path / "records.csv"
    shutil.copy(FIXTURES / "tail" / "records.csv", orphan)
    out = tmp_path / "fig.png"
    code = main(["render", "--kind", "tail-fit", "--in", str(orphan), "--out", str(out)])
    assert code == 2
    assert "manifest.txt" in capsys.readouterr().err
    assert not out.exists()


def test_schema_mismatch_names_the_missing_column(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    shutil.copy(FIXTURES / "cont" / "manifest.txt", run / "manifest.txt")
    text = (FIXTURES / "cont" / "comparison.csv").read_text()
    (run / "comparison.csv").write_text(text.replace("pushforward", "pushfwd", 1))
    code = main(
        [
            "render",
            "--kind",
            "test-integrals",
            "--in",
            str(run / "comparison.csv"),
            "--out",
            str(tmp_path / "fig.png"),
        ]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "pushforward" in err
    assert "comparison.csv" in err


def test_covariance_kind_rejects_mismatched_time_grids(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    shutil.copy(FIXTURES / "fbm" / "manifest.txt", run / "manifest.txt")
    shutil.copy(FIXTURES / "fbm" / "path_0000.csv", run / "path_0000.csv")
    lines = (FIXTURES / "fbm" / "path_0001.csv").read_text().splitlines()
    (run / "path_0001.csv").write_text("\n".join(lines[:-4]) + "\n")
    code = main(
        [
            "render",
            "--kind",
            "cov-error",
            "--in",
            f"{run / 'path_0000.csv'},{run / 'path_0001.csv'}",
            "--out",
            str(tmp_path / "fig.png"),
        ]
    )
    assert code == 2
    assert "time grid" in capsys.readouterr().err


def test_non_png_output_is_refused(tmp_path, capsys):
    code = main(
        [
            "render",
            "--kind",
            "moment-fit",
            "--in",
            _inputs("moment-fit"),
            "--out",
            str(tmp_path / "fig.svg"),
        ]
    )
    assert code == 2
    assert ".png" in capsys.readouterr().err


def test_unknown_kind_is_rejected_by_the_parser(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["render", "--kind", "pie", "--in", "x.csv", "--out", str(tmp_path / "f.png")])
    assert excinfo.value.code == 2
