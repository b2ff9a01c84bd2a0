"""Command-line front end: ``crmeuler <subcommand> manifest.json [--seed --workers --out]``.

Every run writes a JSON report and CSV data under ``--out``, prints a one-line
summary and exits with 0 (all verdicts pass), 1 (statistical failure),
2 (usage or configuration error) or 3 (numerical error).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from . import rng as rngmod
from .crm import (
    CRMTriple,
    basis_from_json,
    cf_levy_khintchine,
    default_basis,
    empirical_cf,
    hypothesis_tests,
    sample_batch,
    sample_crm,
    set_from_json,
    _batched_set_values,
)
from .errors import CRMError, NumericalError
from .geometry import FiniteRankKernel, HPhiKernel, domain_from_json, test_function_from_json
from .invariance import CylinderObservable, flow_invariance_test, mc_generator_means, mc_generator_mean, skew_symmetry_test
from .spectral import basis as mode_basis
from .spectral import lemma41_check, row_integral, triad_table
from .stochint import i1_batch, i2_finite_rank_batch, moment_oracle
from .vortex import VortexState, integrate, weak_residual

WORKERS_ENV = "CRMEULER_WORKERS"

KINDS = (
    "sample", "moments", "cf", "triads", "lemma41", "vortex-sim", "weak-residual",
    "invariance-test", "skew-test", "flow-invariance", "hypothesis-test", "accept",
)

COMMON = {"experiment", "seed", "out"}

# allowed manifest fields per experiment, beyond the common ones
FIELDS = {
    "sample": {"triple", "basis", "eps", "N"},
    "moments": {"triple", "basis", "eps", "N", "f", "h"},
    "cf": {"triple", "basis", "eps", "N", "set", "grid"},
    "triads": {"domain", "max_wavenumber", "method", "quadrature_order"},
    "lemma41": {"domain", "max_wavenumber", "functions", "points", "order"},
    "vortex-sim": {"state", "triple", "t_final", "tol", "output_times", "self_image"},
    "weak-residual": {"state", "t_final", "tol", "functions", "pairs"},
    "invariance-test": {"triple", "basis", "eps", "N", "observables", "antithetic", "rerun", "z_max"},
    "skew-test": {"triple", "basis", "eps", "N", "F", "G", "antithetic", "rerun", "z_max"},
    "flow-invariance": {"triple", "N", "observable", "t", "tol", "max_samples"},
    "hypothesis-test": {"triple", "basis", "eps", "N", "A", "B", "B_prime"},
    "accept": {"criteria", "only"},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Manifest parsing
# ---------------------------------------------------------------------------


def validate(manifest: dict, kind: str) -> dict:
    if not isinstance(manifest, dict):
        raise UsageError("manifest must be a JSON object")
    if manifest.get("experiment", kind) != kind:
        raise UsageError(f"manifest is for {manifest['experiment']!r}, not {kind!r}")
    unknown = set(manifest) - COMMON - FIELDS[kind]
    if unknown:
        raise UsageError(f"unknown manifest fields: {sorted(unknown)}")
    if "N" in manifest:
        N = manifest["N"]
        if not isinstance(N, int) or isinstance(N, bool) or N < 1:
            raise UsageError("N must be ≥ minimum (1)")
    return manifest


def _need(m, key):
    if key not in m:
        raise UsageError(f"missing manifest field {key!r}")
    return m[key]


def _triple(m):
    return CRMTriple.from_json(_need(m, "triple"))


def _basis(m, triple):
    if "basis" in m:
        return basis_from_json(m["basis"], triple.domain)
    return default_basis(triple, 4 if triple.q > 0 else 8)


def _kernel(d, domain):
    kind = d.get("kind")
    if kind == "finite_rank":
        return FiniteRankKernel(np.asarray(d["coeffs"], dtype=float), basis_from_json(d.get("basis", {}), domain))
    if kind == "h_phi":
        return HPhiKernel(test_function_from_json(d["phi"], domain))
    raise UsageError(f"unknown kernel kind {kind!r}")


def _state(d):
    dom = domain_from_json(d.get("domain", {"kind": "torus"}))
    return VortexState(np.asarray(d["positions"], dtype=float), np.asarray(d["intensities"], dtype=float), dom,
                       float(d.get("time", 0.0)))


# ---------------------------------------------------------------------------
# Experiments: each returns (report dict, {csv name: (columns, rows)}, passed, summary)
# ---------------------------------------------------------------------------


def run_sample(m, seed, workers):
    triple = _triple(m)
    basis = _basis(m, triple)
    rng = rngmod.stream(seed, 0)
    samples, rows = [], []
    for i in range(int(m.get("N", 1))):
        s = sample_crm(triple, basis, rng, m.get("eps"))
        samples.append(s.to_json())
        rows += [(i, x, y, g) for (x, y), g in zip(s.positions, s.marks)]
    return {"samples": samples}, {"atoms": (["sample_id", "x", "y", "gamma"], rows)}, True, \
        f"{len(samples)} samples, {len(rows)} atoms"


def _var_check(x, oracle, z_max=4.0):
    x = np.asarray(x, dtype=float)
    d2 = (x - x.mean()) ** 2
    var = float(d2.sum() / (len(x) - 1))
    se = float(np.std(d2, ddof=1) / math.sqrt(len(x)))
    ok = abs(var - oracle) <= z_max * se + 1e-12
    return {"mean": float(x.mean()), "variance": var, "oracle": oracle, "stderr": se, "passed": bool(ok)}


def run_moments(m, seed, workers):
    triple = _triple(m)
    basis = _basis(m, triple)
    dom = triple.domain
    f = test_function_from_json(_need(m, "f"), dom)
    h = _kernel(_need(m, "h"), dom)
    if not isinstance(h, FiniteRankKernel):
        raise UsageError("moments supports finite-rank kernels")
    eps = m.get("eps")
    p1, p2 = [], []
    for sid, size in rngmod.blocks(int(_need(m, "N"))):
        b = sample_batch(triple, basis, rngmod.stream(seed, sid), size, eps)
        p1.append(i1_batch(b, f))
        p2.append(i2_finite_rank_batch(b, h))
    p1, p2 = np.concatenate(p1), np.concatenate(p2)
    q = triple.q
    e = eps or 0.0
    checks = {}
    if q > 0:
        checks["gaussian1"] = _var_check(p1[:, 1], q * moment_oracle(triple, "I1W_var", f=f, eps=e))
        checks["gaussian2"] = _var_check(p2[:, 2], q * q * moment_oracle(triple, "I2W_var", h=h, eps=e))
    if not triple.nu.is_zero:
        checks["poisson1"] = _var_check(p1[:, 2], moment_oracle(triple, "I1P_var", f=f, eps=e))
        checks["poisson2"] = _var_check(p2[:, 4], moment_oracle(triple, "I2P_var", h=h, eps=e))
    if q > 0 and not triple.nu.is_zero:
        checks["mixed"] = _var_check(p2[:, 3], moment_oracle(triple, "mixed_var", h=h, eps=e))
    ok = all(c["passed"] for c in checks.values())
    rows = [(i, *a, a.sum(), *b, b.sum()) for i, (a, b) in enumerate(zip(p1, p2))]
    cols = ["sample_id", "i1_deterministic", "i1_gaussian", "i1_poisson", "i1_total",
            "i2_deterministic", "i2_cross", "i2_gaussian", "i2_mixed", "i2_poisson", "i2_total"]
    summ = ", ".join(f"{k} var {v['variance']:.4g} vs {v['oracle']:.4g}" for k, v in checks.items())
    return {"checks": checks, "N": len(p1)}, {"integrals": (cols, rows)}, ok, summ


def run_cf(m, seed, workers):
    triple = _triple(m)
    basis = basis_from_json(m["basis"], triple.domain) if "basis" in m else None
    if basis is None:
        from .crm import default_set_basis
        basis = default_set_basis(triple)
    A = set_from_json(_need(m, "set"))
    N = int(_need(m, "N"))
    grid = np.asarray(m.get("grid", np.linspace(-2.0, 2.0, 21).tolist()), dtype=float)
    (vals,) = _batched_set_values(triple, [A], N, seed, basis, m.get("eps"))
    emp = empirical_cf(vals, grid).value
    lk = np.array([cf_levy_khintchine(triple, A.measure, t) for t in grid])
    dist = float(np.max(np.abs(emp - lk)))
    band = 6.0 / math.sqrt(N)
    rows = [(t, a.real, a.imag, b.real, b.imag, abs(a - b)) for t, a, b in zip(grid, emp, lk)]
    return {"sup_distance": dist, "band": band, "N": N}, \
        {"cf": (["t", "emp_re", "emp_im", "lk_re", "lk_im", "abs_diff"], rows)}, dist < band, \
        f"sup |emp - LK| {dist:.3e} vs band {band:.3e}"


def run_triads(m, seed, workers):
    dom = domain_from_json(m.get("domain", {"kind": "torus"}))
    K = int(m.get("max_wavenumber", 3))
    closed = triad_table(dom, K, "closed_form")
    quad = triad_table(dom, K, "quadrature", int(m.get("quadrature_order", 64)))
    C, Q = closed.values, quad.values
    s1, s2 = closed.cyclic_sums()
    cyc = float(max(np.abs(s1).max(), np.abs(s2).max()))
    diff = float(np.abs(C - Q).max())
    rows = []
    for h, k, l in zip(*np.nonzero((np.abs(C) > 0) | (np.abs(Q) > 1e-10))):
        mh, mk, ml = closed.modes[h], closed.modes[k], closed.modes[l]
        rows.append((*mh.k, mh.phase, *mk.k, mk.phase, *ml.k, ml.phase, C[h, k, l], Q[h, k, l], abs(C[h, k, l] - Q[h, k, l])))
    cols = ["h_kx", "h_ky", "h_phase", "k_kx", "k_ky", "k_phase", "l_kx", "l_ky", "l_phase", "C_closed", "C_quad", "abs_diff"]
    ok = cyc < 1e-10 and diff < 1e-8
    return {"max_wavenumber": K, "modes": len(closed.modes), "cyclic_max": cyc, "closed_vs_quadrature": diff}, \
        {"triads": (cols, rows)}, ok, f"{len(closed.modes)} modes, cyclic {cyc:.2e}, closed vs quadrature {diff:.2e}"


def run_lemma41(m, seed, workers):
    dom = domain_from_json(m.get("domain", {"kind": "torus"}))
    if "functions" in m:
        funcs = [test_function_from_json(d, dom) for d in m["functions"]]
    else:
        funcs = mode_basis(dom, int(m.get("max_wavenumber", 2)))
    ys = dom.sample_uniform(rngmod.stream(seed, 0), int(m.get("points", 10)))
    order = m.get("order")
    rows = []
    for i, phi in enumerate(funcs):
        for y in ys:
            lem = lemma41_check(phi, y, order or 64) if hasattr(phi, "k") else float("nan")
            rows.append((i, y[0], y[1], lem, row_integral(phi, y, order)))
    lem_max = max((abs(r[3]) for r in rows if not math.isnan(r[3])), default=0.0)
    row_max = max(abs(r[4]) for r in rows)
    ok = lem_max < 1e-8 and row_max < 1e-8
    return {"eigen_max": lem_max, "row_integral_max": row_max, "functions": [f.to_json() for f in funcs]}, \
        {"residuals": (["function", "y1", "y2", "eigen_residual", "row_integral"], rows)}, ok, \
        f"eigen residual {lem_max:.2e}, row integrals {row_max:.2e}"


def _initial_state(m, seed):
    if "state" in m:
        return _state(m["state"])
    s = sample_crm(_triple(m), None, rngmod.stream(seed, 0))
    return VortexState(s.positions, s.marks, s.domain)


def _trajectory_rows(traj, times):
    return [(t, *traj.positions_at(t).ravel()) for t in times]


def run_vortex_sim(m, seed, workers):
    st = _initial_state(m, seed)
    T = float(_need(m, "t_final"))
    traj = integrate(st, T, float(m.get("tol", 1e-10)), self_image=bool(m.get("self_image", False)))
    times = m.get("output_times") or list(np.linspace(st.time, T, 11))
    n = len(st.intensities)
    cols = ["time"] + [c for i in range(n) for c in (f"x_{i}", f"y_{i}")]
    d = traj.diagnostics()
    return {"diagnostics": d, "n_vortices": n, "t_final": T}, {"trajectory": (cols, _trajectory_rows(traj, times))}, \
        True, f"{n} vortices to t={T}, energy drift {d['energy_relative_drift']:.2e}, min separation {d['min_separation']:.2e}"


def run_weak_residual(m, seed, workers):
    st = _state(_need(m, "state"))
    T = float(_need(m, "t_final"))
    traj = integrate(st, T, float(m.get("tol", 1e-10)))
    funcs = [test_function_from_json(d, st.domain) for d in _need(m, "functions")]
    pairs = m.get("pairs") or [[st.time, T]]
    rows = [(i, s, t, weak_residual(traj, phi, s, t)) for i, phi in enumerate(funcs) for s, t in pairs]
    worst = max(r[3] for r in rows)
    return {"max_residual": worst}, {"residuals": (["function", "s", "t", "residual"], rows)}, worst < 1e-6, \
        f"max weak residual {worst:.2e}"


def _block_rows(rep):
    rows, tot, n = [], 0j, 0
    for i, (size, re, im) in enumerate(rep.extra.get("block_means", [])):
        tot += complex(re, im) * size
        n += size
        rows.append((i, size, re, im, (tot / n).real, (tot / n).imag))
    return rows


BLOCK_COLS = ["block", "size", "block_mean_re", "block_mean_im", "running_mean_re", "running_mean_im"]


def _mc_kw(m, triple):
    return {"basis": _basis(m, triple), "eps": m.get("eps"), "antithetic": bool(m.get("antithetic", True)),
            "z_max": float(m.get("z_max", 4.0))}


def run_invariance(m, seed, workers):
    triple = _triple(m)
    obs = [CylinderObservable.from_json(o, triple.domain) for o in _need(m, "observables")]
    N = int(_need(m, "N"))
    kw = _mc_kw(m, triple)
    reps = mc_generator_means(triple, obs, N, seed, workers=workers, **kw)
    if m.get("rerun", True):
        reps = [r if r.passed else mc_generator_mean(triple, o, N, seed, workers=workers, **kw) for r, o in zip(reps, obs)]
    rows = [(oi, *r) for oi, rep in enumerate(reps) for r in _block_rows(rep)]
    ok = all(r.passed for r in reps)
    return {"reports": [r.to_json() for r in reps]}, {"blocks": (["observable"] + BLOCK_COLS, rows)}, ok, \
        f"{len(reps)} observables, max z {max(r.z_score for r in reps):.2f}"


def run_skew(m, seed, workers):
    triple = _triple(m)
    F = m.get("F")
    F = None if F is None else CylinderObservable.from_json(F, triple.domain)
    G = CylinderObservable.from_json(_need(m, "G"), triple.domain)
    kw = _mc_kw(m, triple)
    rep = skew_symmetry_test(F, G, triple, int(_need(m, "N")), seed, workers=workers, rerun=bool(m.get("rerun", True)), **kw)
    return {"report": rep.to_json()}, {"blocks": (BLOCK_COLS, _block_rows(rep))}, rep.passed, f"z {rep.z_score:.2f}"


def run_flow(m, seed, workers):
    triple = _triple(m)
    obs = CylinderObservable.from_json(_need(m, "observable"), triple.domain)
    rep = flow_invariance_test(triple, obs, float(m.get("t", 1.0)), int(_need(m, "N")), seed,
                               float(m.get("tol", 1e-8)), max_samples=m.get("max_samples"))
    d = rep.to_json()
    d.pop("elapsed")
    rows = [(g, b.real, b.imag, a.real, a.imag, abs(b - a)) for g, b, a in zip(rep.grid, rep.cf_before, rep.cf_after)]
    s = f"distance {rep.distance:.3e} vs band {rep.band:.3e}, {rep.N_used} samples, {rep.collapses} collapses"
    return {"report": d}, {"cf": (["t", "before_re", "before_im", "after_re", "after_im", "abs_diff"], rows)}, \
        rep.passed, s + (f"; {rep.note}" if rep.note else "")


def run_hypothesis(m, seed, workers):
    triple = _triple(m)
    basis = basis_from_json(m["basis"], triple.domain) if "basis" in m else None
    A, B = set_from_json(_need(m, "A")), set_from_json(_need(m, "B"))
    Bp = set_from_json(m["B_prime"]) if "B_prime" in m else None
    N = int(_need(m, "N"))
    if N < 1000:
        raise UsageError("N must be ≥ minimum (1000)")
    r = hypothesis_tests(triple, A, B, N, seed, B_prime=Bp, basis=basis, eps=m.get("eps"))
    d = dict(r.__dict__)
    return {"report": d}, {}, r.passed, \
        f"covariance {r.covariance:.3e} ± {r.covariance_stderr:.1e}, CF max z {r.factorization_max_ratio:.2f}, " \
        f"stationarity {r.stationarity_distance:.3e} vs {r.stationarity_band:.3e}"


RUNNERS = {
    "sample": run_sample, "moments": run_moments, "cf": run_cf, "triads": run_triads, "lemma41": run_lemma41,
    "vortex-sim": run_vortex_sim, "weak-residual": run_weak_residual, "invariance-test": run_invariance,
    "skew-test": run_skew, "flow-invariance": run_flow, "hypothesis-test": run_hypothesis,
}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def default_workers() -> int:
    v = os.environ.get(WORKERS_ENV)
    if v is None:
        return 1
    try:
        w = int(v)
    except ValueError as e:
        raise UsageError(f"{WORKERS_ENV} must be a positive integer") from e
    if w < 1:
        raise UsageError(f"{WORKERS_ENV} must be a positive integer")
    return w


def run(kind: str, manifest: dict, out_dir, seed=None, workers: int = 1, echo=print) -> int:
    """Run one experiment and write its artifacts; returns the exit code."""
    manifest = validate(manifest, kind)
    if seed is not None:
        manifest = {**manifest, "seed": int(seed)}
    seed = int(manifest.get("seed", 0))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    if kind == "accept":
        from .acceptance import run_acceptance

        results = run_acceptance(manifest, out, workers, echo=echo)
        return 0 if all(r.passed for r in results) else 1
    body, tables, passed, summary = RUNNERS[kind](manifest, seed, workers)
    stem = kind.replace("-", "_")
    report.write_json(out / f"{stem}.json", {**report.header(kind, manifest, seed), "passed": passed,
                                             "summary": summary, **body})
    for name, (cols, rows) in tables.items():
        report.write_csv(out / f"{stem}_{name}.csv", cols, rows)
    report.write_provenance(out, manifest, workers, started)
    if echo:
        echo(f"[{'PASS' if passed else 'FAIL'}] {kind}: {summary}")
    return 0 if passed else 1


def _error(code: int, kind: str, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("time", "pair", "separation"):
        if hasattr(exc, attr):
            err[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(report.jsonable(err), sort_keys=True, ensure_ascii=False) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crmeuler", description="Random-measure invariance experiments for 2D Euler.")
    sub = p.add_subparsers(dest="kind", required=True)
    for k in KINDS:
        s = sub.add_parser(k)
        s.add_argument("manifest", nargs="?" if k == "accept" else None, help="JSON experiment manifest")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    kind = args.kind
    try:
        if args.manifest:
            with open(args.manifest) as fh:
                manifest = json.load(fh)
        else:
            manifest = {}
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise UsageError("--workers must be positive")
        out = args.out or manifest.get("out") or f"{kind}_out"
        return run(kind, manifest, out, args.seed, workers)
    except (UsageError, json.JSONDecodeError, FileNotFoundError, KeyError) as e:
        return _error(2, kind, e)
    except NumericalError as e:
        return _error(3, kind, e)
    except (CRMError, ValueError, NotImplementedError) as e:
        return _error(2, kind, e)


if __name__ == "__main__":
    sys.exit(main())
