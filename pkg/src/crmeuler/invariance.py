"""Cylinder observables, the generator of the Euler flow and Monte Carlo tests.

For ``F(M) = f(I1_M(phi_1), ..., I1_M(phi_n))`` the generator is

    (A F)(M) = sum_k d_k f(v) I2_M(H_{phi_k}),   v_k = I1_M(phi_k),

and invariance of the law of M means E[A F] = 0 for every such F.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import rng as rngmod
from .crm import CRMSample, CRMTriple, default_basis, sample_batch, sample_crm
from .errors import CollapseDetected, NotPureAtomic
from .geometry import HPhiKernel, Torus, test_function_from_json
from .spectral import FourierBasis, triad_table
from .stats import MCReport
from .stochint import i1, i1_batch, i2, i2_hphi_batch, pair_index
from .vortex import flow_pushforward

# ---------------------------------------------------------------------------
# Outer functions with closed-form partials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpTrig:
    """f(v) = exp(i <t, v>)."""

    t: tuple

    kind = "exp_trig"

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return np.exp(1j * (v @ np.asarray(self.t, dtype=float)))

    def grad(self, v):
        """(..., n) array of partial derivatives."""
        t = np.asarray(self.t, dtype=float)
        return 1j * t * self(v)[..., None]

    def to_json(self):
        return {"kind": self.kind, "t": list(self.t)}


@dataclass(frozen=True)
class ProductCos:
    """f(v) = prod_k cos(t_k v_k)."""

    t: tuple

    kind = "product_cos"

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return np.prod(np.cos(np.asarray(self.t) * v), axis=-1).astype(complex)

    def grad(self, v):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(v, dtype=float)
        c = np.cos(t * v)
        s = np.sin(t * v)
        n = len(t)
        out = np.empty(v.shape, dtype=complex)
        for k in range(n):
            others = np.prod(np.delete(c, k, axis=-1), axis=-1) if n > 1 else 1.0
            out[..., k] = -t[k] * s[..., k] * others
        return out

    def to_json(self):
        return {"kind": self.kind, "t": list(self.t)}


def outer_from_json(d):
    t = tuple(float(x) for x in d["t"])
    if d["kind"] == "exp_trig":
        return ExpTrig(t)
    if d["kind"] == "product_cos":
        return ProductCos(t)
    raise ValueError(f"unknown outer function {d['kind']!r}")


@dataclass(frozen=True)
class CylinderObservable:
    phis: tuple
    f: ExpTrig | ProductCos

    def __post_init__(self):
        object.__setattr__(self, "phis", tuple(self.phis))
        if len(self.f.t) != len(self.phis):
            raise ValueError("one frequency per test function")

    @property
    def n(self):
        return len(self.phis)

    def to_json(self):
        return {"phis": [p.to_json() for p in self.phis], "f": self.f.to_json()}

    @classmethod
    def from_json(cls, d, domain=None):
        return cls(tuple(test_function_from_json(p, domain) for p in d["phis"]), outer_from_json(d["f"]))


CONSTANT_ONE = None  # F = 1 is represented by ``None`` in the skew test


# ---------------------------------------------------------------------------
# Per-sample evaluation
# ---------------------------------------------------------------------------


def observable_inputs(obs: CylinderObservable, sample: CRMSample):
    return np.array([i1(sample, phi).total for phi in obs.phis])


def eval_observable(obs: CylinderObservable, sample: CRMSample) -> complex:
    return complex(obs.f(observable_inputs(obs, sample)))


def generator_apply(obs: CylinderObservable, sample: CRMSample, row_integrals: str = "exact") -> complex:
    """(A F)(M) on one sample with analytic partials of f."""
    v = observable_inputs(obs, sample)
    d = obs.f.grad(v)
    i2s = np.array([i2(sample, HPhiKernel(phi), row_integrals).total for phi in obs.phis])
    return complex(np.dot(d, i2s))


# ---------------------------------------------------------------------------
# Batched Monte Carlo
# ---------------------------------------------------------------------------


def _distinct_phis(observables):
    phis = []
    for obs in observables:
        for p in obs.phis:
            if p not in phis:
                phis.append(p)
    return phis


def _batch_inputs(triple, basis, phis, rng, n, eps, antithetic, pairs_cache=None):
    """I1 and I2(H_phi) for a batch and, optionally, its antithetic partner."""
    b = sample_batch(triple, basis, rng, n, eps)
    p1 = np.stack([i1_batch(b, phi) for phi in phis], axis=1)  # (n, nphi, 3)
    p2 = i2_hphi_batch(b, phis)  # (n, nphi, 3): gaussian2, mixed, poisson2
    v = p1.sum(-1)
    I2 = p2.sum(-1)
    if not antithetic:
        return [(v, I2)]
    flip = triple.nu.symmetric
    # xi -> -xi (and gamma -> -gamma for symmetric nu): the drift part is unchanged
    v_a = p1[..., 0] - p1[..., 1] + (-1.0 if flip else 1.0) * p1[..., 2]
    I2_a = p2[..., 0] + (1.0 if flip else -1.0) * p2[..., 1] + p2[..., 2]
    return [(v, I2), (v_a, I2_a)]


def _generator_values(observables, phis, v, I2):
    out = []
    for obs in observables:
        idx = [phis.index(p) for p in obs.phis]
        vv = v[:, idx]
        out.append(np.sum(obs.f.grad(vv) * I2[:, idx], axis=-1))
    return out


def _generator_block(triple, basis, observables, seed, sid, size, eps, antithetic):
    phis = _distinct_phis(observables)
    rng = rngmod.stream(seed, sid)
    n_base = size // 2 if antithetic else size
    parts = _batch_inputs(triple, basis, phis, rng, n_base, eps, antithetic)
    vals = [_generator_values(observables, phis, v, I2) for v, I2 in parts]
    # per observable: pair means (antithetic) or plain values
    return [np.mean([vals[j][o] for j in range(len(vals))], axis=0) for o in range(len(observables))]


def _block_means(parts):
    """[size, re, im] of each block, for convergence tables."""
    return [[len(p), float(np.mean(p).real), float(np.mean(p).imag)] for p in parts]


def _check_N(N, minimum=2):
    if N < minimum:
        raise ValueError(f"N must be >= {minimum}")


def mc_generator_means(
    triple: CRMTriple,
    observables,
    N: int,
    seed: int = 0,
    basis=None,
    eps: float | None = None,
    antithetic: bool = True,
    workers: int = 1,
    z_max: float = 4.0,
    stream_offset: int = 0,
):
    """MCReports of E[A F] for several observables on common samples.

    N counts evaluations; with antithetic sampling they come in N/2 pairs and
    the standard error is computed from the pair means.
    """
    _check_N(N)
    basis = basis if basis is not None else default_basis(triple, 4)
    blocks = rngmod.blocks(N)
    tasks = [
        (triple, basis, tuple(observables), seed, stream_offset + sid, size, eps, antithetic)
        for sid, size in blocks
    ]
    res = rngmod.map_blocks(_generator_block, tasks, workers)
    reports = []
    for o in range(len(observables)):
        vals = np.concatenate([r[o] for r in res])
        reports.append(
            MCReport.from_values(vals, z_max=z_max, seed=seed, workers=workers, n_samples=N,
                                 antithetic=antithetic, pairs=len(vals) if antithetic else 0,
                                 block_means=_block_means([r[o] for r in res]))
        )
    return reports


def mc_generator_mean(triple, obs, N, seed=0, rerun=True, **kw) -> MCReport:
    """Monte Carlo E[A F]; a failing run is repeated once at 4N on fresh streams."""
    rep = mc_generator_means(triple, [obs], N, seed, **kw)[0]
    if rep.passed or not rerun:
        return rep
    kw = dict(kw)
    kw["stream_offset"] = rngmod.RERUN_OFFSET
    rep2 = mc_generator_means(triple, [obs], 4 * N, seed, **kw)[0]
    rep2.reruns = 1
    rep2.extra["first_run"] = rep.to_json()
    return rep2


# ---------------------------------------------------------------------------
# Skew symmetry
# ---------------------------------------------------------------------------


def _skew_block(triple, basis, F, G, seed, sid, size, eps, antithetic):
    obs = [o for o in (F, G) if o is not None]
    phis = _distinct_phis(obs)
    rng = rngmod.stream(seed, sid)
    n_base = size // 2 if antithetic else size
    parts = _batch_inputs(triple, basis, phis, rng, n_base, eps, antithetic)
    vals = []
    for v, I2 in parts:
        def value(o):
            if o is None:
                return np.ones(len(v), dtype=complex)
            idx = [phis.index(p) for p in o.phis]
            return o.f(v[:, idx])

        def gen(o):
            if o is None:
                return np.zeros(len(v), dtype=complex)
            return _generator_values([o], phis, v, I2)[0]

        vals.append(value(F) * gen(G) + value(G) * gen(F))
    return np.mean(vals, axis=0)


def skew_symmetry_test(F, G, triple: CRMTriple, N: int, seed: int = 0, basis=None, eps=None,
                       antithetic=True, workers=1, z_max=4.0, rerun=True) -> MCReport:
    """E[F A G + G A F] on common random numbers; ``None`` stands for F = 1."""
    _check_N(N)
    basis = basis if basis is not None else default_basis(triple, 4)

    def run(n, offset):
        tasks = [(triple, basis, F, G, seed, offset + sid, size, eps, antithetic) for sid, size in rngmod.blocks(n)]
        parts = rngmod.map_blocks(_skew_block, tasks, workers)
        return MCReport.from_values(np.concatenate(parts), z_max=z_max, seed=seed, workers=workers, n_samples=n,
                                    block_means=_block_means(parts))

    rep = run(N, 0)
    if rep.passed or not rerun:
        return rep
    rep2 = run(4 * N, rngmod.RERUN_OFFSET)
    rep2.reruns = 1
    rep2.extra["first_run"] = rep.to_json()
    return rep2


# ---------------------------------------------------------------------------
# Flow invariance
# ---------------------------------------------------------------------------


@dataclass
class FlowInvarianceReport:
    distance: float
    band: float
    N_requested: int
    N_used: int
    collapses: int
    collapse_fraction: float
    verdict: str
    cf_before: list = field(default_factory=list)
    cf_after: list = field(default_factory=list)
    grid: list = field(default_factory=list)
    elapsed: float = 0.0
    note: str = ""

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_json(self):
        d = dict(self.__dict__)
        d["cf_before"] = [[c.real, c.imag] for c in self.cf_before]
        d["cf_after"] = [[c.real, c.imag] for c in self.cf_after]
        return d


FLOW_GRID = tuple(np.linspace(-2.0, 2.0, 9))


def _scalar_statistic(obs, v):
    """<t, v> for the observable's frequency vector."""
    return v @ np.asarray(obs.f.t, dtype=float)


def flow_invariance_test(
    triple: CRMTriple,
    obs: CylinderObservable,
    t: float,
    N: int,
    seed: int = 0,
    tol: float = 1e-8,
    time_budget: float | None = None,
    grid=FLOW_GRID,
    max_samples: int | None = None,
) -> FlowInvarianceReport:
    """Compare the law of <t, (I1(phi_k))_k> before and after the vortex flow.

    The statistic is the sup over the frequency grid of the difference of the
    two empirical characteristic functions, against the band 6/sqrt(N).
    ``max_samples`` caps the work deterministically and ``time_budget``
    (seconds) stops the run early; either way the verdict is fail unless all
    N samples were processed.
    """
    limit = N if max_samples is None else min(N, int(max_samples))
    if triple.q != 0 or triple.a != triple.nu.m1() or not triple.nu.is_finite:
        raise NotPureAtomic("flow invariance needs q = 0, a = m1 and a finite jump law")
    start = time.perf_counter()
    before, after = [], []
    collapses = 0
    done = 0
    for sid, size in rngmod.blocks(N):
        rng = rngmod.stream(seed, sid)
        for _ in range(size):
            s = sample_crm(triple, None, rng)
            v0 = observable_inputs(obs, s)
            try:
                s1 = flow_pushforward(s, t, tol)
            except CollapseDetected:
                collapses += 1
                done += 1
                if done >= limit:
                    break
                continue
            before.append(_scalar_statistic(obs, v0))
            after.append(_scalar_statistic(obs, observable_inputs(obs, s1)))
            done += 1
            if done >= limit or (time_budget is not None and time.perf_counter() - start > time_budget):
                break
        if done >= limit or (time_budget is not None and time.perf_counter() - start > time_budget):
            break
    b, a = np.array(before), np.array(after)
    g = np.asarray(grid, dtype=float)
    cf_b = np.exp(1j * np.multiply.outer(g, b)).mean(axis=-1) if len(b) else np.ones(len(g))
    cf_a = np.exp(1j * np.multiply.outer(g, a)).mean(axis=-1) if len(a) else np.ones(len(g))
    dist = float(np.max(np.abs(cf_b - cf_a)))
    band = 6.0 / math.sqrt(N)
    frac = collapses / done if done else 0.0
    complete = done >= N
    ok = complete and dist < band and frac < 1e-3
    if complete:
        note = ""
    elif done >= limit:
        note = f"sample cap reached after {done} of {N} samples"
    else:
        note = f"time budget exhausted after {done} of {N} samples"
    return FlowInvarianceReport(
        dist, band, N, len(b), collapses, frac, "pass" if ok else "fail",
        list(cf_b), list(cf_a), list(g), time.perf_counter() - start, note,
    )


# ---------------------------------------------------------------------------
# Per-sample algebraic cancellations
# ---------------------------------------------------------------------------


def triple_contraction(C, xi):
    """sum_{h,k,l} xi_l xi_k xi_h C[h, k, l]."""
    return float(np.einsum("hkl,h,k,l->", C, xi, xi, xi))


def mixed_contraction(C, xi, p):
    """sum_{h,k,l} C[h,k,l] (xi_l xi_k p_h + xi_l p_k xi_h + p_l xi_k xi_h)."""
    return float(
        np.einsum("hkl,h,k,l->", C, p, xi, xi)
        + np.einsum("hkl,h,k,l->", C, xi, p, xi)
        + np.einsum("hkl,h,k,l->", C, xi, xi, p)
    )


def cancellation_check(triple: CRMTriple, n_samples: int = 100, max_wavenumber: int = 2, seed: int = 0):
    """Largest |sum xi xi xi C| and |sum sym(xi xi p) C| over sampled coefficients."""
    dom = triple.domain
    table = triad_table(dom, max_wavenumber)
    C = table.values
    modes = table.modes
    fb = FourierBasis(dom, max_wavenumber, include_constant=False)
    rng = rngmod.stream(seed, 0)
    worst3, worst_mixed = 0.0, 0.0
    for _ in range(n_samples):
        s = sample_crm(triple, fb, rng)
        xi = np.asarray(s.gaussian_coeffs) if len(s.gaussian_coeffs) else rng.standard_normal(len(modes))
        p = np.array([np.dot(s.marks, m.eval(s.positions)) for m in modes]) if s.n_atoms else np.zeros(len(modes))
        worst3 = max(worst3, abs(triple_contraction(C, xi)))
        worst_mixed = max(worst_mixed, abs(mixed_contraction(C, xi, p)))
    return worst3, worst_mixed


# ---------------------------------------------------------------------------
# Seed-to-seed calibration
# ---------------------------------------------------------------------------


def z_score_ks(z_scores):
    """Kolmogorov-Smirnov p-value of signed z-scores against N(0, 1)."""
    return float(sps.kstest(np.asarray(z_scores, dtype=float), "norm").pvalue)


def a_reduction_gap(sample: CRMSample, phi) -> float:
    """|I2_M(H_phi) with the sample's drift - the same with a = 0|, row integrals numeric."""
    with_a = i2(sample, HPhiKernel(phi), "numeric").total
    tr = sample.triple
    zero = CRMTriple(0.0, tr.q, tr.nu, tr.domain)
    without = i2(sample.replace(triple=zero), HPhiKernel(phi), "numeric").total
    return abs(with_a - without)
