import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from crmeuler.cli import main

MANIFESTS = Path(__file__).resolve().parent.parent / "manifests"
TORUS_JSON = {"kind": "torus", "L": 2 * math.pi}


def write(tmp_path, obj, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.name != "provenance.json"}


def test_zero_N_is_usage_error(tmp_path, capsys):
    m = write(tmp_path, {"experiment": "moments", "N": 0})
    assert main(["moments", m, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert "N must be ≥ minimum" in err["message"] and err["exit_code"] == 2


def test_unknown_field_rejected(tmp_path, capsys):
    m = write(tmp_path, {"experiment": "triads", "max_wavenumber": 2, "colour": "blue"})
    assert main(["triads", m, "--out", str(tmp_path / "o")]) == 2
    assert "unknown manifest fields" in json.loads(capsys.readouterr().err)["message"]


def test_missing_manifest_file(tmp_path):
    assert main(["triads", str(tmp_path / "nope.json")]) == 2


def test_triads_k3(tmp_path):
    out = tmp_path / "tri"
    m = write(tmp_path, {"experiment": "triads", "domain": TORUS_JSON, "max_wavenumber": 3})
    assert main(["triads", m, "--out", str(out)]) == 0
    rep = json.loads((out / "triads.json").read_text())
    assert rep["cyclic_max"] < 1e-10
    assert rep["convention"] == "ordered-offdiag-sym" and "manifest_sha256" in rep and "version" in rep
    with open(out / "triads_triads.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) >= {"h_kx", "h_phase", "C_closed", "C_quad", "abs_diff"}
    assert "e" in rows[0]["C_closed"]


def test_byte_identical_reruns(tmp_path):
    m = str(MANIFESTS / "invariance_test.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["invariance-test", m, "--out", str(a), "--workers", "1"]) == 0
    assert main(["invariance-test", m, "--out", str(b), "--workers", "2"]) == 0
    assert outputs(a) == outputs(b)
    prov = json.loads((b / "provenance.json").read_text())
    assert prov["workers"] == 2 and "started" in prov


def test_seed_override_changes_output(tmp_path):
    m = str(MANIFESTS / "sample.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sample", m, "--out", str(a)]) == 0
    assert main(["sample", m, "--out", str(b), "--seed", "99"]) == 0
    assert outputs(a) != outputs(b)
    assert json.loads((b / "sample.json").read_text())["seed"] == 99


def test_collapse_is_numerical_error(tmp_path, capsys):
    eps = 1e-3
    pos = (np.array([3.0, 3.0]) + eps * np.array([[-1.0, 0.0], [1.0, 0.0], [1.0, math.sqrt(2.0)]])).tolist()
    m = write(tmp_path, {"experiment": "vortex-sim", "t_final": -1000 * eps * eps,
                         "state": {"domain": TORUS_JSON, "positions": pos, "intensities": [2.0, 2.0, -1.0]}})
    assert main(["vortex-sim", m, "--out", str(tmp_path / "o")]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "CollapseDetected" and err["separation"] < 1e-8


def test_workers_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CRMEULER_WORKERS", "zero")
    assert main(["triads", str(MANIFESTS / "triads.json"), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("name", ["sample", "moments", "cf", "lemma41", "vortex_sim", "weak_residual",
                                  "skew_test", "flow_invariance", "hypothesis_test"])
def test_example_manifests(name, tmp_path):
    kind = json.loads((MANIFESTS / f"{name}.json").read_text())["experiment"]
    out = tmp_path / name
    assert main([kind, str(MANIFESTS / f"{name}.json"), "--out", str(out)]) == 0
    stem = kind.replace("-", "_")
    rep = json.loads((out / f"{stem}.json").read_text())
    assert rep["experiment"] == kind and rep["passed"]
