import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from liouville_lab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_IO, EXIT_OK, main
from liouville_lab.config import LabConfig
from liouville_lab.pohozaev import manufactured_field
from liouville_lab.tables import write_rows

SMALL = {"singularity": {"alpha": 1e-6}, "mesh": {"n_r": 16, "n_t": 32}}


def _cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def _run(tmp_path, verb, data, *extra, out="out"):
    outdir = tmp_path / out
    code = main([verb, "--config", _cfg(tmp_path, data), "--out", str(outdir), *extra])
    return code, outdir


@pytest.mark.parametrize(
    "data",
    [
        {"singularity": {"alpha": 0.6}},
        {"potential": {"kind": "hoelder_bump", "hoelder_s": 0.4, "hoelder_A": 1.0, "bump_radius": 0.5}},
        {"continuation": {"mass_ceiling": 50.3}},
        {"mesh": {"unknown": 1}},
    ],
)
def test_invalid_config_exit_code(tmp_path, data):
    code, _ = _run(tmp_path, "solve", data)
    assert code == EXIT_CONFIG


def test_missing_config_is_io_failure(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_bad_threads(tmp_path):
    code, _ = _run(tmp_path, "solve", SMALL, "--threads", "0")
    assert code == EXIT_CONFIG


def test_solve_then_extract(tmp_path):
    code, out = _run(tmp_path, "solve", SMALL)
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["solutions"][0]["converged"] and summary["exit_code"] == 0
    side = json.loads((out / "solution_0000.json").read_text())
    assert set(side) >= {"lambda", "mass", "peak", "peak_location", "iters", "residual_norm"}
    with open(out / "solution_0000.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["idx", "x1", "x2", "u"]
    code, out2 = _run(tmp_path, "extract", SMALL, "--solution", str(out / "solution_0000.csv"), out="ex")
    assert code == EXIT_OK
    rep = json.loads((out2 / "extraction.json").read_text())
    assert rep["epsilon"] == 0.1 and rep["candidates"] == []  # the smooth solution has no blow-up


def test_extract_needs_solution_and_matching_mesh(tmp_path):
    code, _ = _run(tmp_path, "extract", SMALL)
    assert code == EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    write_rows(bad, ["idx", "x1", "x2", "u"], [[0, 0.0, 0.0, 1.0]])
    code, _ = _run(tmp_path, "extract", SMALL, "--solution", str(bad))
    assert code == EXIT_IO


def test_continue_writes_family(tmp_path):
    data = dict(SMALL, continuation={"mode": "mass", "targets": [1.0, 2.0, 4.0]})
    code, out = _run(tmp_path, "continue", data)
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert [round(r["mass"], 8) for r in summary["solutions"]] == [1.0, 2.0, 4.0]
    assert sorted(p.name for p in out.glob("solution_*.csv")) == [f"solution_{k:04d}.csv" for k in range(3)]


def test_continue_past_fold_in_lambda_fails(tmp_path):
    data = dict(SMALL, continuation={"mode": "lambda", "targets": [1.0, 2.5]})
    code, out = _run(tmp_path, "continue", data)
    assert code == EXIT_FAIL
    assert json.loads((out / "summary.json").read_text())["stop_reason"] == "fold"


def test_pohozaev_on_manufactured_family(tmp_path):
    data = {"mesh": {"n_r": 32, "n_t": 64, "domain": "half"}}
    cfg = LabConfig.from_dict(data)
    _, mesh = cfg.build_mesh()
    u, f = manufactured_field(mesh.nodes)
    fam = tmp_path / "fam"
    fam.mkdir()
    rows = [[i, *p, a, b] for i, (p, a, b) in enumerate(zip(mesh.nodes.tolist(), u, f))]
    write_rows(fam / "solution_0000.csv", ["idx", "x1", "x2", "u", "f"], rows)
    code, out = _run(tmp_path, "pohozaev", data, "--family", str(fam))
    assert code == EXIT_OK
    with open(out / "pohozaev.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 1 and float(table[0]["identity_gap"]) < 1e-2
    assert float(table[0]["lhs_interior"]) == pytest.approx(-np.pi, rel=2e-2)


def test_pohozaev_requires_half_domain(tmp_path):
    code, _ = _run(tmp_path, "pohozaev", SMALL, "--family", str(tmp_path))
    assert code == EXIT_CONFIG


def test_verify_is_deterministic_across_threads(tmp_path):
    outs = []
    for t in ("1", "4"):
        code, out = _run(tmp_path, "verify", SMALL, "--threads", t, "--seed", "7", out=f"v{t}")
        assert code == EXIT_OK
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()


def test_module_entry_point(tmp_path):
    cfg = _cfg(tmp_path, {"singularity": {"alpha": 0.9}})
    proc = subprocess.run([sys.executable, "-m", "liouville_lab", "verify", "--config", cfg], capture_output=True)
    assert proc.returncode == EXIT_CONFIG
    assert b"alpha" in proc.stderr
