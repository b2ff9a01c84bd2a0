"""Runs every acceptance criterion at its stated tolerance.

The suite is run once (one worker) for criteria 1-12; criterion 13 repeats the
run with eight workers and compares every CSV/JSON output byte for byte.
Each test prints one PASS/FAIL line.
"""

import json
from pathlib import Path

import pytest

from crmeuler.acceptance import run_acceptance

MANIFEST = json.loads((Path(__file__).resolve().parent.parent / "manifests" / "accept.json").read_text())


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept_w1")
    results = run_acceptance(MANIFEST, out, workers=1, echo=None)
    return out, {r.number: r for r in results}


def _outputs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.name != "provenance.json"}


@pytest.mark.parametrize("number", range(1, 13))
def test_criterion(number, suite, capsys):
    _, results = suite
    r = results[number]
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.summary


def test_criterion_13_reproducible(suite, tmp_path_factory, capsys):
    out1, _ = suite
    out8 = tmp_path_factory.mktemp("accept_w8")
    run_acceptance(MANIFEST, out8, workers=8, echo=None)
    a, b = _outputs(out1), _outputs(out8)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 0
    line = (f"[{'PASS' if ok else 'FAIL'}] criterion 13 reproducibility: {len(a)} files compared "
            f"between 1 and 8 workers, {len(differing)} differ")
    with capsys.disabled():
        print("\n" + line)
    assert ok, differing
