"""Single and double stochastic integrals on fixed samples.

Convention for the double integral (tag ``ordered-offdiag-sym``): atoms enter
through the ordered off-diagonal sum ``sum_{i != j}``, the Gaussian part
through the second Wiener chaos ``sum_jk h_jk (xi_j xi_k - delta_jk)``.  With
``X = M - a dx`` and ``g(y) = int h(x, y) dx``,

    I2_M(h) = a^2 int int h + 2 a I1_X(g) + I2_X(h),
    I2_X(h) = q I2_W(h) + 2 sqrt(q) I1_W (x) I1_P~(h) + I2_P~(h),

where ``P~`` is the compensated Poisson part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .crm import CRMSample, CRMTriple, EmptyBasis, SampleBatch
from .errors import DomainMismatch, NonSymmetricKernel, RankTooHigh
from .geometry import (
    ExplicitKernel,
    FiniteRankKernel,
    HPhiKernel,
    Torus,
    TorusMode,
    UnitDisk,
    kernel_unchecked,
    quadrature,
)
from .spectral import FourierBasis, h_phi_expansion, row_integral

CONVENTION = "ordered-offdiag-sym"


# ---------------------------------------------------------------------------
# Result container
# ---------------------------------------------------------------------------


@dataclass
class IntegralDecomposition:
    order: int
    deterministic: float = 0.0
    gaussian1: float = 0.0
    poisson1: float = 0.0
    deterministic2: float = 0.0
    cross1: float = 0.0
    gaussian2: float = 0.0
    mixed: float = 0.0
    poisson2: float = 0.0
    truncation_error: float = 0.0

    @property
    def parts(self) -> dict:
        if self.order == 1:
            names = ("deterministic", "gaussian1", "poisson1")
        else:
            names = ("deterministic2", "cross1", "gaussian2", "mixed", "poisson2")
        return {n: getattr(self, n) for n in names}

    @property
    def total(self) -> float:
        return float(math.fsum(self.parts.values()))

    def to_json(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


# ---------------------------------------------------------------------------
# Deterministic integrals
# ---------------------------------------------------------------------------


def _values(f, x):
    return f.eval(x) if hasattr(f, "eval") else f(x)


def integrate(domain, f, order: int = 64, tol: float = 1e-9) -> float:
    """int_D f dx, doubling the order until two refinements agree to ``tol``."""
    nodes, w = quadrature(domain, order)
    val = float(np.dot(_values(f, nodes), w))
    for _ in range(3):
        order *= 2
        nodes, w = quadrature(domain, order)
        new = float(np.dot(_values(f, nodes), w))
        if abs(new - val) < tol:
            return new
        val = new
    return val


@lru_cache(maxsize=512)
def _integral_cached(f) -> float:
    if isinstance(f, TorusMode):
        return 0.0
    return integrate(f.domain, f)


def _function_integral(f, domain) -> float:
    if not hasattr(f, "domain"):
        return integrate(domain, f)
    try:
        return _integral_cached(f)
    except TypeError:
        return integrate(domain, f)


def _check_domain(obj, domain):
    d = getattr(obj, "domain", None)
    if d is not None and d != domain:
        raise DomainMismatch(f"{type(obj).__name__} lives on {d}, sample on {domain}")


# ---------------------------------------------------------------------------
# Single integrals
# ---------------------------------------------------------------------------


def _gauss_coeffs(basis, f):
    if basis.size == 0:
        return np.zeros(0)
    return _gauss_coeffs_cached(basis, f) if _hashable(f) else basis.coefficients(f)


def _hashable(f):
    try:
        hash(f)
        return True
    except TypeError:
        return False


@lru_cache(maxsize=512)
def _gauss_coeffs_cached(basis, f):
    c = basis.coefficients(f)
    c.setflags(write=False)
    return c


def i1(sample: CRMSample, f) -> IntegralDecomposition:
    """I1_M(f) = drift int f + sqrt(q) sum_j f_j xi_j + sum_i gamma_i f(x_i)."""
    _check_domain(f, sample.domain)
    det = sample.drift * _function_integral(f, sample.domain) if sample.drift else 0.0
    g1 = 0.0
    if sample.q > 0 and sample.m_W:
        g1 = math.sqrt(sample.q) * float(np.dot(_gauss_coeffs(sample.basis, f), sample.gaussian_coeffs))
    p1 = float(np.dot(sample.marks, _values(f, sample.positions))) if sample.n_atoms else 0.0
    return IntegralDecomposition(1, deterministic=det, gaussian1=g1, poisson1=p1)


# ---------------------------------------------------------------------------
# Kernel data: everything a double integral needs from h
# ---------------------------------------------------------------------------


def as_kernel(h, domain):
    """Validate a kernel argument; raw callables and matrices are checked for symmetry."""
    if isinstance(h, (HPhiKernel, ExplicitKernel, FiniteRankKernel)):
        return h
    if isinstance(h, np.ndarray):
        raise NonSymmetricKernel("a bare coefficient matrix needs a basis; use FiniteRankKernel")
    if callable(h):
        rng = np.random.default_rng(12345)
        x = domain.sample_uniform(rng, 64)
        y = domain.sample_uniform(rng, 64)
        a, b = np.asarray(h(x, y)), np.asarray(h(y, x))
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise NonSymmetricKernel("kernel is not symmetric on sampled pairs")
        return ExplicitKernel(h, domain)
    raise TypeError(f"not a kernel: {h!r}")


def check_finite_rank(h: FiniteRankKernel, m_W: int):
    A = np.asarray(h.coeffs)
    if A.shape[0] != A.shape[1]:
        raise NonSymmetricKernel("coefficient matrix must be square")
    if h.rank > m_W:
        raise RankTooHigh(f"kernel rank {h.rank} exceeds Gaussian truncation {m_W}")


class KernelData:
    """Basis block, row functions and row integrals of a kernel h.

    ``gram``: (m, m) coefficients of h on e_j (x) e_k;
    ``rows(x)``: (n, m) values of y -> <h(x, .), e_j>;
    ``g(y)``: int h(x, y) dx; ``g_coeffs``: basis coefficients of g;
    ``total``: int int h; ``tail_sq``: squared norm outside the block.
    """

    def __init__(self, h, basis, domain, row_integrals="numeric"):
        if row_integrals == "exact" and not isinstance(domain, Torus):
            # the row integrals of the symmetric H_phi do not vanish on the disk
            row_integrals = "numeric"
        self.h = h
        self.basis = basis
        self.domain = domain
        self.row_integrals = row_integrals
        m = basis.size
        self.tail_sq = 0.0
        if isinstance(h, HPhiKernel):
            self._init_hphi(m)
        elif isinstance(h, FiniteRankKernel):
            self._init_finite_rank(m)
        else:
            self._init_explicit(m)

    # H_phi -------------------------------------------------------------
    def _init_hphi(self, m):
        phi = self.h.phi
        self._exp = None
        if m:
            if not (isinstance(phi, TorusMode) and isinstance(self.basis, FourierBasis)):
                raise NotImplementedError("Gaussian H_phi integrals need a torus mode and a Fourier basis")
            self._exp = h_phi_expansion(self.basis, phi)
            self.gram = self._exp.gram
            self.tail_sq = self._exp.tail_sq
        else:
            self.gram = np.zeros((0, 0))
        self._total = None

    # finite rank -------------------------------------------------------
    def _init_finite_rank(self, m):
        h = self.h
        check_finite_rank(h, m if m else h.rank)
        c = h.coeffs
        kb = h.basis
        r = h.rank
        ints = kb.integrals()[:r]
        self._fr_int = ints
        self._total = float(ints @ c @ ints)
        if m == 0:
            self.gram = np.zeros((0, 0))
            self._overlap = np.zeros((r, 0))
            return
        if kb == self.basis:
            S = np.eye(r, m)
        else:
            nodes, w = quadrature(self.domain, 64)
            S = (kb.evaluate(nodes)[:, :r] * w[:, None]).T @ self.basis.evaluate(nodes)
        self._overlap = S
        self.gram = S.T @ c @ S

    # explicit ----------------------------------------------------------
    def _init_explicit(self, m):
        order = 64 if isinstance(self.domain, Torus) else 48
        nodes, w = quadrature(self.domain, order)
        self._nodes, self._w = nodes, w
        H = self.h(nodes[:, None, :], nodes[None, :, :])
        self._H = H
        self._total = float(w @ H @ w)
        if m:
            E = self.basis.evaluate(nodes) * w[:, None]
            self.gram = E.T @ H @ E
            full = float(w @ (H * H) @ w)
            self.tail_sq = max(full - float(np.sum(self.gram**2)), 0.0)
        else:
            self.gram = np.zeros((0, 0))

    # shared ------------------------------------------------------------
    def rows(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        m = self.basis.size
        if m == 0 or len(x) == 0:
            return np.zeros((len(x), m))
        h = self.h
        if isinstance(h, HPhiKernel):
            return self._exp.row_functions(x)
        if isinstance(h, FiniteRankKernel):
            return h.basis.evaluate(x)[:, : h.rank] @ h.coeffs @ self._overlap
        E = self.basis.evaluate(self._nodes) * self._w[:, None]
        return h(x[:, None, :], self._nodes[None, :, :]) @ E

    def g(self, y):
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        h = self.h
        if len(y) == 0:
            return np.zeros(0)
        if isinstance(h, HPhiKernel):
            if self.row_integrals == "exact":
                return np.zeros(len(y))
            return np.array([row_integral(h.phi, p) for p in y])
        if isinstance(h, FiniteRankKernel):
            return h.basis.evaluate(y)[:, : h.rank] @ (h.coeffs @ self._fr_int)
        return self._w @ h(self._nodes[:, None, :], y[None, :, :])

    @property
    def g_coeffs(self):
        m = self.basis.size
        if m == 0:
            return np.zeros(0)
        h = self.h
        if isinstance(h, HPhiKernel):
            # the expansion has no constant component: g vanishes identically
            return np.zeros(m)
        if isinstance(h, FiniteRankKernel):
            return (h.coeffs @ self._fr_int) @ self._overlap
        E = self.basis.evaluate(self._nodes) * self._w[:, None]
        return (self._w @ self._H) @ E

    @property
    def total(self):
        if self._total is None:
            if self.row_integrals == "exact":
                self._total = 0.0
            else:
                self._total = _hphi_total(self.h.phi)
        return self._total

    def pair_values(self, x, y):
        return self.h(x, y)


@lru_cache(maxsize=64)
def _hphi_total(phi, n=12):
    """int int H_phi by a coarse outer rule over numerically computed row integrals."""
    domain = phi.domain
    nodes, w = quadrature(domain, n)
    if isinstance(domain, UnitDisk):
        keep = np.linalg.norm(nodes, axis=-1) < 0.999
        nodes, w = nodes[keep], w[keep]
    return float(sum(wi * row_integral(phi, p) for p, wi in zip(nodes, w)))


_KD_CACHE: dict = {}


def kernel_data(h, basis, domain, row_integrals="numeric") -> KernelData:
    h = as_kernel(h, domain)
    key = (h, basis, domain, row_integrals)
    kd = _KD_CACHE.get(key)
    # identity check guards against a recycled id() of an unhashable-by-value kernel
    if kd is None or kd.h is not h:
        kd = KernelData(h, basis, domain, row_integrals)
        if len(_KD_CACHE) > 128:
            _KD_CACHE.clear()
        _KD_CACHE[key] = kd
    return kd


# ---------------------------------------------------------------------------
# Double integrals
# ---------------------------------------------------------------------------


def _offdiag_atom_sum(h, pos, marks):
    n = len(marks)
    if n < 2:
        return 0.0
    i, j = np.triu_indices(n, 1)
    vals = h(pos[i], pos[j])
    return 2.0 * float(np.dot(marks[i] * marks[j], vals))


def i2(sample: CRMSample, h, row_integrals: str = "numeric") -> IntegralDecomposition:
    """Double integral I2_M(h) under the ordered off-diagonal convention.

    ``row_integrals="exact"`` uses g = 0 for H_phi kernels instead of computing
    the row integrals numerically (they vanish identically).
    """
    _check_domain(h, sample.domain)
    kd = kernel_data(h, sample.basis, sample.domain, row_integrals)
    if isinstance(kd.h, FiniteRankKernel):
        check_finite_rank(kd.h, sample.m_W if sample.q > 0 else kd.h.rank)
    a, q, m1 = sample.a, sample.q, sample.m1
    sq = math.sqrt(q)
    xi, pos, marks = sample.gaussian_coeffs, sample.positions, sample.marks
    has_gauss = q > 0 and sample.m_W > 0
    need_g = (a != 0 or m1 != 0) and sample.n_atoms > 0
    g_atoms = kd.g(pos) if need_g else np.zeros(len(marks))
    total_h = kd.total if (a != 0 or m1 != 0) else 0.0
    g_hat = kd.g_coeffs if has_gauss and (a != 0 or m1 != 0) else None

    # I1_X(g) pieces
    i1w_g = float(np.dot(g_hat, xi)) if g_hat is not None else 0.0
    i1p_g = float(np.dot(marks, g_atoms)) - m1 * total_h

    det2 = a * a * total_h
    cross1 = 2.0 * a * (sq * i1w_g + i1p_g) if a != 0 else 0.0
    gauss2 = 0.0
    mixed = 0.0
    if has_gauss:
        G = kd.gram
        gauss2 = q * float(xi @ G @ xi - np.trace(G))
        if sample.n_atoms:
            mixed = 2.0 * sq * float(marks @ (kd.rows(pos) @ xi))
        if m1 != 0:
            mixed -= 2.0 * sq * m1 * i1w_g
    poisson2 = _offdiag_atom_sum(kd.h, pos, marks)
    if m1 != 0:
        poisson2 += -2.0 * m1 * float(np.dot(marks, g_atoms)) + m1 * m1 * total_h
    return IntegralDecomposition(
        2,
        deterministic2=det2,
        cross1=cross1,
        gaussian2=gauss2,
        mixed=mixed,
        poisson2=poisson2,
        truncation_error=math.sqrt(kd.tail_sq) if has_gauss else 0.0,
    )


def compensator_terms(sample: CRMSample, h) -> dict:
    """The two compensator contributions of the Poisson double integral, separately."""
    kd = kernel_data(h, sample.basis, sample.domain, "numeric")
    m1 = sample.m1
    g_atoms = kd.g(sample.positions)
    return {
        "linear": -2.0 * m1 * float(np.dot(sample.marks, g_atoms)),
        "constant": m1 * m1 * kd.total,
        "max_row_integral": float(np.max(np.abs(g_atoms))) if len(g_atoms) else 0.0,
    }


def diagonal_integral(h, domain, order: int = 64) -> float:
    """int_D h(x, x) dx by the tensor rule."""
    h = as_kernel(h, domain)
    nodes, w = quadrature(domain, order)
    return float(np.dot(h.diagonal(nodes), w))


def pairing_tensor(sample: CRMSample, h, row_integrals: str = "numeric") -> float:
    """<h, M (x) M> with M expanded as a full square, diagonal included.

    The truncated Gaussian part pairs through ``xi^T h_hat xi`` without the
    chaos correction, atoms through ``sum_{i,j}`` including i = j.
    """
    _check_domain(h, sample.domain)
    kd = kernel_data(h, sample.basis, sample.domain, row_integrals)
    d = sample.drift
    sq = math.sqrt(sample.q)
    xi, pos, marks = sample.gaussian_coeffs, sample.positions, sample.marks
    has_gauss = sample.q > 0 and sample.m_W > 0
    # <h, L (x) L>, <h, L (x) W>, <h, L (x) P> with L = drift dx
    out = 0.0
    if d != 0:
        out += d * d * kd.total
        if has_gauss:
            out += 2.0 * d * sq * float(np.dot(kd.g_coeffs, xi))
        if sample.n_atoms:
            out += 2.0 * d * float(np.dot(marks, kd.g(pos)))
    if has_gauss:
        out += sample.q * float(xi @ kd.gram @ xi)
        if sample.n_atoms:
            out += 2.0 * sq * float(marks @ (kd.rows(pos) @ xi))
    if sample.n_atoms:
        out += _offdiag_atom_sum(kd.h, pos, marks)
        out += float(np.dot(marks * marks, kd.h.diagonal(pos)))
    return out


def relation_residual(sample: CRMSample, h) -> float:
    """|<h, M (x) M> - I2 - q int h(x,x) dx - sum gamma_i^2 h(x_i, x_i)|."""
    kd = kernel_data(h, sample.basis, sample.domain)
    diag_q = sample.q * diagonal_integral(kd.h, sample.domain) if sample.q > 0 and sample.m_W else 0.0
    atoms_diag = float(np.dot(sample.marks**2, kd.h.diagonal(sample.positions))) if sample.n_atoms else 0.0
    return abs(pairing_tensor(sample, h) - i2(sample, h).total - diag_q - atoms_diag)


def grid_pairing_oracle(sample: CRMSample, h, n: int = 16) -> float:
    """<h, M (x) M> assembled from the values of M on an n x n grid of cells."""
    from .crm import Rect, measure_of

    dom = sample.domain
    if not isinstance(dom, Torus):
        raise NotImplementedError("grid oracle is implemented on the torus")
    hc = dom.L / n
    cells = [Rect(i * hc, j * hc, (i + 1) * hc, (j + 1) * hc) for i in range(n) for j in range(n)]
    vals = np.array([measure_of(sample, c) for c in cells])
    centres = np.array([((i + 0.5) * hc, (j + 0.5) * hc) for i in range(n) for j in range(n)])
    h = as_kernel(h, dom)
    H = h(centres[:, None, :], centres[None, :, :])
    return float(vals @ H @ vals)


# ---------------------------------------------------------------------------
# Moment oracles
# ---------------------------------------------------------------------------


def l2_norm_sq(f, domain) -> float:
    if isinstance(f, TorusMode):
        return f.amplitude**2
    return integrate(domain, lambda x: _values(f, x) ** 2)


def kernel_l2_norm_sq(h, domain) -> float:
    """||h||^2 in L^2(D x D)."""
    h = as_kernel(h, domain)
    if isinstance(h, FiniteRankKernel):
        S = _gram_of(h.basis, h.rank)
        c = h.coeffs
        return float(np.trace(c @ S @ c @ S))
    if isinstance(h, HPhiKernel) and isinstance(h.phi, TorusMode):
        m = max(abs(h.phi.k[0]), abs(h.phi.k[1]))
        fb = FourierBasis(domain, 2 * m + 1)
        e = h_phi_expansion(fb, h.phi)
        return float(np.sum(e.gram**2) + e.tail_sq)
    nodes, w = quadrature(domain, 64 if isinstance(domain, Torus) else 48)
    H = h(nodes[:, None, :], nodes[None, :, :])
    return float(w @ (H * H) @ w)


def _gram_of(basis, r):
    if isinstance(basis, FourierBasis):
        return np.eye(r)
    nodes, w = quadrature(basis.domain, 64)
    E = basis.evaluate(nodes)[:, :r]
    return (E * w[:, None]).T @ E


def moment_oracle(triple: CRMTriple, target: str, f=None, h=None, eps: float = 0.0) -> float:
    """Closed-form first and second moments of the stochastic integrals.

    targets: ``means``, ``I1W_var``, ``I1P_var``, ``I2W_var``, ``I2P_var``,
    ``mixed_var``.
    """
    dom = triple.domain
    m2 = triple.nu.m2(eps) if not triple.nu.is_zero else 0.0
    if target == "means":
        return 0.0
    if target == "I1W_var":
        return l2_norm_sq(f, dom)
    if target == "I1P_var":
        return m2 * l2_norm_sq(f, dom)
    if target == "I2W_var":
        return 2.0 * kernel_l2_norm_sq(h, dom)
    if target == "I2P_var":
        return 2.0 * m2 * m2 * kernel_l2_norm_sq(h, dom)
    if target == "mixed_var":
        return 4.0 * triple.q * m2 * kernel_l2_norm_sq(h, dom)
    raise ValueError(f"unknown moment target {target!r}")


# ---------------------------------------------------------------------------
# Batched evaluation (Monte Carlo)
# ---------------------------------------------------------------------------


def _flat_atoms(batch: SampleBatch):
    mask = batch.mask
    return batch.positions[mask], batch.marks[mask], np.nonzero(mask)[0]


@lru_cache(maxsize=512)
def _triu(n):
    i, j = np.triu_indices(n, 1)
    return i, j


def pair_index(counts):
    """Flat indices (i, j, sample) of all within-sample pairs i < j."""
    offs = np.concatenate([[0], np.cumsum(counts)[:-1]])
    I, J, S = [], [], []
    for s, (n, o) in enumerate(zip(counts, offs)):
        if n < 2:
            continue
        i, j = _triu(int(n))
        I.append(i + o)
        J.append(j + o)
        S.append(np.full(len(i), s))
    if not I:
        z = np.zeros(0, dtype=int)
        return z, z, z
    return np.concatenate(I), np.concatenate(J), np.concatenate(S)


def i1_batch(batch: SampleBatch, f) -> np.ndarray:
    """I1 totals for every sample of a batch; also returns the parts as columns."""
    dom = batch.triple.domain
    _check_domain(f, dom)
    N = len(batch)
    det = batch.drift * _function_integral(f, dom) if batch.drift else 0.0
    g1 = np.zeros(N)
    if batch.triple.q > 0 and batch.basis.size:
        g1 = math.sqrt(batch.triple.q) * (batch.xi @ _gauss_coeffs(batch.basis, f))
    pos, marks, sid = _flat_atoms(batch)
    p1 = np.bincount(sid, weights=marks * _values(f, pos), minlength=N) if len(marks) else np.zeros(N)
    return np.stack([np.full(N, det), g1, p1], axis=-1)


def i2_hphi_batch(batch: SampleBatch, phis, pairs=None) -> np.ndarray:
    """I2_M(H_phi) for every sample and every phi: (N, len(phis), 3) parts.

    The parts are (gaussian2, mixed, poisson2).  Deterministic, cross and
    compensator terms of H_phi vanish identically and are omitted; the
    single-sample ``i2`` computes them numerically.  The Biot-Savart kernel on
    atom pairs is evaluated once and shared by all phis.
    """
    N = len(batch)
    dom = batch.triple.domain
    q = batch.triple.q
    if not isinstance(dom, Torus) and (batch.triple.a != 0 or batch.m1 != 0):
        raise NotImplementedError("batched H_phi integrals with drift are implemented on the torus")
    out = np.zeros((N, len(phis), 3))
    pos, marks, sid = _flat_atoms(batch)
    has_gauss = q > 0 and batch.basis.size > 0
    if has_gauss:
        sq = math.sqrt(q)
        exps = [kernel_data(HPhiKernel(phi), batch.basis, dom, "exact")._exp for phi in phis]
        # union of partner modes; mixed = 2 sqrt(q) sum_i gamma_i <H(x_i, .), W> = 2 sqrt(q) P @ rows @ xi
        keys: dict = {}
        for e in exps:
            for md in e.partner_modes:
                keys.setdefault((md.k, md.phase), md)
        modes = list(keys.values())
        P = np.zeros((N, len(modes)))
        if len(marks) and modes:
            wv = sorted({md.k for md in modes})
            col = {k: c for c, k in enumerate(wv)}
            kap = (2 * math.pi / dom.L) * np.array(wv, dtype=float)
            ex = np.exp(1j * (pos @ kap.T)) * (marks * (math.sqrt(2.0) / dom.L))[:, None]
            Pc = np.zeros((N, len(wv)), dtype=complex)
            np.add.at(Pc, sid, ex)
            for c, md in enumerate(modes):
                z = Pc[:, col[md.k]]
                P[:, c] = z.imag if md.phase == "sin" else z.real
        index = {k: i for i, k in enumerate(keys)}
        for p, (phi, e) in enumerate(zip(phis, exps)):
            G = e.gram
            out[:, p, 0] = q * (np.einsum("nj,jk,nk->n", batch.xi, G, batch.xi) - np.trace(G))
            if e.partner_modes and len(marks):
                cols = [index[(md.k, md.phase)] for md in e.partner_modes]
                Pe = P[:, cols]
                out[:, p, 1] = 2.0 * sq * np.einsum("nj,nj->n", np.asarray(e.rows.T.dot(Pe.T).T), batch.xi)
    if len(marks) > 1:
        I, J, S = pairs if pairs is not None else pair_index(batch.counts)
        if len(I):
            K = kernel_unchecked(dom, pos[I], pos[J])
            near = dom.separation(pos[I], pos[J]) < 1e-8
            w = marks[I] * marks[J]
            for p, phi in enumerate(phis):
                gr = phi.grad(pos)
                hv = 0.5 * np.einsum("ad,ad->a", gr[I] - gr[J], K)
                hv = np.where(near, 0.0, hv)
                out[:, p, 2] = 2.0 * np.bincount(S, weights=w * hv, minlength=N)
    return out


def i2_finite_rank_batch(batch: SampleBatch, h: FiniteRankKernel) -> np.ndarray:
    """(N, 5) parts (det2, cross1, gaussian2, mixed, poisson2) for a finite-rank kernel."""
    N = len(batch)
    tr = batch.triple
    dom = tr.domain
    kd = kernel_data(h, batch.basis, dom)
    a, q, m1 = tr.a, tr.q, batch.m1
    sq = math.sqrt(q)
    pos, marks, sid = _flat_atoms(batch)
    c = h.coeffs
    E = h.basis.evaluate(pos)[:, : h.rank] if len(marks) else np.zeros((0, h.rank))
    # S_n = sum_i gamma_i e(x_i) per sample
    Sv = np.zeros((N, h.rank))
    np.add.at(Sv, sid, marks[:, None] * E)
    diag = np.bincount(sid, weights=marks**2 * np.einsum("aj,jk,ak->a", E, c, E), minlength=N) if len(marks) else 0.0
    poisson2 = np.einsum("nj,jk,nk->n", Sv, c, Sv) - diag
    g_atoms = np.bincount(sid, weights=marks * kd.g(pos), minlength=N) if len(marks) else np.zeros(N)
    total = kd.total
    if m1 != 0:
        poisson2 = poisson2 - 2.0 * m1 * g_atoms + m1 * m1 * total
    gauss2 = np.zeros(N)
    mixed = np.zeros(N)
    i1w_g = np.zeros(N)
    if q > 0 and batch.basis.size:
        if h.rank > batch.basis.size:
            raise RankTooHigh(f"kernel rank {h.rank} exceeds Gaussian truncation {batch.basis.size}")
        G = kd.gram
        gauss2 = q * (np.einsum("nj,jk,nk->n", batch.xi, G, batch.xi) - np.trace(G))
        i1w_g = batch.xi @ kd.g_coeffs
        if len(marks):
            mixed = 2.0 * sq * (np.einsum("nj,jk,nk->n", Sv, c @ kd._overlap, batch.xi))
        mixed = mixed - 2.0 * sq * m1 * i1w_g
    det2 = np.full(N, a * a * total)
    cross1 = 2.0 * a * (sq * i1w_g + g_atoms - m1 * total)
    return np.stack([det2, cross1, gauss2, mixed, poisson2], axis=-1)
