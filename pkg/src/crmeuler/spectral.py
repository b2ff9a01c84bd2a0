"""Laplace eigenbasis on the torus, projections and triad coefficients.

Triad coefficients are

    C[h, k, l] = int int H_{phi_l}(x, y) phi_k(x) phi_h(y) dx dy

for L^2-normalised real modes.  Integrating by parts reduces them to a single
integral of three trigonometric factors,

    C[h, k, l] = 1/2 (1/lam_k - 1/lam_h) int phi_h grad(phi_l) . grad_perp(phi_k) dx,

which is evaluated exactly by enumerating the resonant sign patterns
``s_h h + s_l l + s_k k = 0`` in integer arithmetic.  ``triad_quadrature`` is
the independent check: a tensor rule for the double integral.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .geometry import (
    TWO_PI,
    Torus,
    TorusMode,
    h_kernel,
    integrate_singular,
    kernel_unchecked,
    quadrature,
    singular_nodes,
)

EigenMode = TorusMode


def _representative(k):
    """Canonical member of the pair {k, -k}."""
    kx, ky = k
    if kx > 0 or (kx == 0 and ky > 0):
        return (kx, ky), 1
    return (-kx, -ky), -1


def basis(domain: Torus, max_wavenumber: int, norm: str = "inf") -> list[TorusMode]:
    """All cos/sin modes with ``0 < |k| <= max_wavenumber``, lexicographic in k.

    ``norm`` picks the wavevector norm used for the cut-off (``"inf"`` or ``"l2"``).
    """
    if max_wavenumber < 1:
        raise ValueError("max_wavenumber must be >= 1")
    K = int(max_wavenumber)
    out = []
    for kx in range(0, K + 1):
        for ky in range(-K, K + 1):
            if (kx, ky) == (0, 0) or _representative((kx, ky))[1] < 0:
                continue
            if norm == "l2" and kx * kx + ky * ky > K * K:
                continue
            for phase in ("cos", "sin"):
                out.append(TorusMode((kx, ky), phase, domain))
    return out


@dataclass(frozen=True)
class FourierBasis:
    """Orthonormal basis used to represent the Gaussian part of a sample.

    Index 0 is the constant ``1/L`` when ``include_constant``; the remaining
    functions are ``basis(domain, max_wavenumber)`` in order.
    """

    domain: Torus = field(default_factory=Torus)
    max_wavenumber: int = 8
    include_constant: bool = True

    kind = "fourier"

    @cached_property
    def modes(self) -> list[TorusMode]:
        return basis(self.domain, self.max_wavenumber)

    @cached_property
    def offset(self) -> int:
        return 1 if self.include_constant else 0

    @property
    def size(self) -> int:
        return self.offset + len(self.modes)

    @cached_property
    def _arrays(self):
        ks = np.array([m.k for m in self.modes], dtype=float)
        kappa = TWO_PI / self.domain.L * ks
        is_sin = np.array([m.phase == "sin" for m in self.modes])
        return kappa, is_sin

    @cached_property
    def index(self) -> dict:
        return {(m.k, m.phase): i + self.offset for i, m in enumerate(self.modes)}

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        kappa, is_sin = self._arrays
        th = x @ kappa.T
        vals = np.where(is_sin, np.sin(th), np.cos(th)) * (math.sqrt(2.0) / self.domain.L)
        if self.include_constant:
            const = np.full(x.shape[:-1] + (1,), 1.0 / self.domain.L)
            vals = np.concatenate([const, vals], axis=-1)
        return vals

    def integrals(self):
        """int_D e_j dx for every basis function."""
        out = np.zeros(self.size)
        if self.include_constant:
            out[0] = self.domain.L
        return out

    def coefficients(self, f):
        """Basis coefficients of a test function (exact for torus modes)."""
        if isinstance(f, TorusMode):
            out = np.zeros(self.size)
            key, sign = _representative(f.k)
            i = self.index.get((key, f.phase))
            if i is not None:
                s = sign if f.phase == "sin" else 1
                out[i] = s * f.amplitude
            return out
        return project_onto(self, f)

    def to_json(self):
        return {
            "kind": "fourier",
            "max_wavenumber": self.max_wavenumber,
            "include_constant": self.include_constant,
        }


def project_onto(fb: FourierBasis, f, order: int = 64):
    nodes, w = quadrature(fb.domain, order)
    vals = f.eval(nodes) if hasattr(f, "eval") else f(nodes)
    return fb.evaluate(nodes).T @ (vals * w)


@dataclass(frozen=True)
class Projection:
    coeffs: np.ndarray
    norm_sq: float
    tail_norm: float


def project(f, m: int, domain: Torus | None = None, order: int = 64) -> Projection:
    """Coefficients of ``f`` on the first ``m`` basis modes, with the tail norm."""
    domain = domain or getattr(f, "domain", None) or Torus()
    modes = _modes_covering(domain, m)[:m]
    nodes, w = quadrature(domain, order)
    vals = f.eval(nodes) if hasattr(f, "eval") else f(nodes)
    E = np.stack([md.eval(nodes) for md in modes], axis=-1) if modes else np.zeros((len(w), 0))
    coeffs = E.T @ (vals * w)
    norm_sq = float(np.dot(vals * vals, w))
    tail_sq = max(norm_sq - float(np.dot(coeffs, coeffs)), 0.0)
    return Projection(coeffs, norm_sq, math.sqrt(tail_sq))


def _modes_covering(domain, m):
    K = 1
    while 2 * ((2 * K + 1) ** 2 - 1) // 2 < m:
        K += 1
    return basis(domain, K)


# ---------------------------------------------------------------------------
# Closed-form triads
# ---------------------------------------------------------------------------

# exp-coefficients {sign: c} of the trig factors, f(t) = sum_s c_s e^{i s t}
_TRIG = {
    "cos": {1: 0.5, -1: 0.5},
    "sin": {1: -0.5j, -1: 0.5j},
    "-sin": {1: 0.5j, -1: -0.5j},
}
_DERIV = {"cos": "-sin", "sin": "cos"}


def _triple_trig_integral(ka, fa, kb, fb, kc, fc, L):
    """int_{T^2} fa(ka.x) fb(kb.x) fc(kc.x) dx, with integer wavevectors."""
    total = 0.0 + 0.0j
    for (sa, ca), (sb, cb), (sc, cc) in itertools.product(
        _TRIG[fa].items(), _TRIG[fb].items(), _TRIG[fc].items()
    ):
        if (
            sa * ka[0] + sb * kb[0] + sc * kc[0] == 0
            and sa * ka[1] + sb * kb[1] + sc * kc[1] == 0
        ):
            total += ca * cb * cc
    return total.real * L * L


def resonant(h: TorusMode, k: TorusMode, l: TorusMode) -> bool:
    for sk, sl in itertools.product((1, -1), repeat=2):
        if all(h.k[i] + sk * k.k[i] + sl * l.k[i] == 0 for i in range(2)):
            return True
    return False


def jacobian_integral(h: TorusMode, l: TorusMode, k: TorusMode) -> float:
    """int phi_h grad(phi_l) . grad_perp(phi_k) dx, exactly."""
    L = h.domain.L
    kl, kk = l.kappa, k.kappa
    cross = -kl[0] * kk[1] + kl[1] * kk[0]
    if cross == 0.0:
        return 0.0
    amp = h.norm_const * l.norm_const * k.norm_const * cross
    return amp * _triple_trig_integral(h.k, h.phase, l.k, _DERIV[l.phase], k.k, _DERIV[k.phase], L)


def triad_closed_form(h: TorusMode, k: TorusMode, l: TorusMode) -> float:
    if h.eigenvalue == k.eigenvalue or not resonant(h, k, l):
        return 0.0
    return 0.5 * (1.0 / k.eigenvalue - 1.0 / h.eigenvalue) * jacobian_integral(h, l, k)


# ---------------------------------------------------------------------------
# Quadrature triads
# ---------------------------------------------------------------------------


class _TriadQuadrature:
    """Tensor quadrature of the triad double integral.

    With ``x = y + z`` and translation invariance of K, the y-integral is a
    trigonometric polynomial handled exactly by an ``n_y``-point trapezoid
    rule; the z-integral carries the 1/|z| singularity and uses the
    singularity-adapted rule around z = 0.
    """

    def __init__(self, domain: Torus, order: int = 64, n_y: int = 32):
        self.domain = domain
        self.z, self.wz = singular_nodes(domain, np.zeros(2), order)
        self.Kz = kernel_unchecked(domain, self.z, np.zeros(2))
        t = np.arange(n_y) * domain.L / n_y
        Y1, Y2 = np.meshgrid(t, t, indexing="ij")
        self.y = np.stack([Y1.ravel(), Y2.ravel()], axis=-1)
        self.wy = (domain.L / n_y) ** 2

    def _a_matrix(self, l: TorusMode):
        # A(z, y) = 1/2 (grad phi_l(y + z) - grad phi_l(y)) . K(z), separated in z, y
        kap = l.kappa
        c = l.norm_const
        thy = self.y @ kap
        thz = self.z @ kap
        kdot = self.Kz @ kap  # (nz,)
        # grad phi_l(x) = c kappa d(theta), d = -sin or cos
        if l.phase == "cos":
            dy = -np.sin(thy)
            dyz_c, dyz_s = -np.sin(thy), -np.cos(thy)  # -sin(a+b) = -sin a cos b - cos a sin b
        else:
            dy = np.cos(thy)
            dyz_c, dyz_s = np.cos(thy), -np.sin(thy)  # cos(a+b) = cos a cos b - sin a sin b
        A = np.outer(kdot * np.cos(thz), dyz_c) + np.outer(kdot * np.sin(thz), dyz_s)
        A -= np.outer(kdot, dy)
        return 0.5 * c * A  # (nz, ny)

    def matrix(self, l: TorusMode, modes: list[TorusMode]):
        """C[h, k, l] for all h, k in ``modes`` at fixed l."""
        A = self._a_matrix(l) * self.wz[:, None]
        kap = np.array([m.kappa for m in modes])
        cst = np.array([m.norm_const for m in modes])
        is_sin = np.array([m.phase == "sin" for m in modes])
        thz = self.z @ kap.T
        Rc = A.T @ np.cos(thz)  # (ny, nmodes)
        Rs = A.T @ np.sin(thz)
        thy = self.y @ kap.T
        cy, sy = np.cos(thy), np.sin(thy)
        # phi_k(y + z): cos(a+b) = ca cb - sa sb ; sin(a+b) = sa cb + ca sb
        V = np.where(is_sin, sy * Rc + cy * Rs, cy * Rc - sy * Rs) * cst
        Phi_h = np.where(is_sin, sy, cy) * cst
        return self.wy * (Phi_h.T @ V)  # [h, k]


@lru_cache(maxsize=4)
def _triad_quadrature_engine(domain, order):
    return _TriadQuadrature(domain, order)


def triad_quadrature(h: TorusMode, k: TorusMode, l: TorusMode, order: int = 64) -> float:
    eng = _triad_quadrature_engine(h.domain, order)
    return float(eng.matrix(l, [h, k])[0, 1])


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TriadTable:
    """Dense C[h, k, l] over ``modes`` (index order of the basis)."""

    modes: list
    values: np.ndarray
    method: str
    max_wavenumber: int

    def __getitem__(self, idx):
        return self.values[idx]

    def cyclic_sums(self):
        C = self.values
        s1 = C + np.transpose(C, (2, 0, 1)) + np.transpose(C, (1, 2, 0))
        s2 = np.transpose(C, (0, 2, 1)) + np.transpose(C, (1, 0, 2)) + np.transpose(C, (2, 1, 0))
        return s1, s2


def triad_table(domain: Torus, max_wavenumber: int, method: str = "closed_form", order: int = 64):
    modes = basis(domain, max_wavenumber)
    n = len(modes)
    C = np.zeros((n, n, n))
    if method == "closed_form":
        for a, b, c in itertools.product(range(n), repeat=3):
            C[a, b, c] = triad_closed_form(modes[a], modes[b], modes[c])
    elif method == "quadrature":
        eng = _triad_quadrature_engine(domain, order)
        for c in range(n):
            C[:, :, c] = eng.matrix(modes[c], modes)
    else:
        raise ValueError(f"unknown method {method!r}")
    return TriadTable(modes, C, method, max_wavenumber)


def lemma41_check(k: TorusMode, y, order: int = 64) -> float:
    """Residual of int phi_k(x) H_{phi_k}(x, y) dx (zero in exact arithmetic)."""
    y = np.asarray(y, dtype=float)
    return integrate_singular(k.domain, lambda x: k.eval(x) * h_kernel(k, x, y), y, order)


def row_integral(phi, y, order: int | None = None) -> float:
    """int_D H_phi(x, y) dx by singularity-adapted quadrature."""
    domain = phi.domain
    if order is None:
        order = 64 if isinstance(domain, Torus) else 256
    y = np.asarray(y, dtype=float)
    return integrate_singular(domain, lambda x: h_kernel(phi, x, y), y, order)


# ---------------------------------------------------------------------------
# H_phi in a Fourier basis
# ---------------------------------------------------------------------------


def _partner_wavevectors(h, l):
    out = set()
    for s in (1, -1):
        kv = (h[0] + s * l[0], h[1] + s * l[1])
        if kv != (0, 0):
            out.add(_representative(kv)[0])
    return out


@dataclass(frozen=True, eq=False)
class HPhiExpansion:
    """Exact expansion of H_phi for a torus mode phi.

    ``gram[i, j]`` are the coefficients on ``e_i (x) e_j`` restricted to the
    Gaussian basis; ``rows`` maps basis index i to the full (untruncated)
    function ``x -> int H_phi(x, y) e_i(y) dy`` as a sparse combination of
    ``partner_modes``.  ``tail_sq`` is the squared L^2(D^2) norm discarded by
    the restriction to the basis.
    """

    gram: np.ndarray
    partner_modes: list
    rows: sp.csr_matrix  # (n_partner, basis.size)
    tail_sq: float

    def row_functions(self, x):
        """(n_points, basis.size) array of int H(x, y) e_j(y) dy."""
        x = np.asarray(x, dtype=float)
        if not self.partner_modes:
            return np.zeros(x.shape[:-1] + (self.rows.shape[1],))
        kap = np.array([m.kappa for m in self.partner_modes])
        is_sin = np.array([m.phase == "sin" for m in self.partner_modes])
        th = x @ kap.T
        vals = np.where(is_sin, np.sin(th), np.cos(th)) * (math.sqrt(2.0) / self.partner_modes[0].domain.L)
        return np.asarray(self.rows.T.dot(vals.T).T)


def h_phi_expansion(fb: FourierBasis, phi: TorusMode) -> HPhiExpansion:
    return _h_phi_expansion_cached(fb, phi.k, phi.phase, phi.amplitude)


@lru_cache(maxsize=256)
def _h_phi_expansion_cached(fb, k, phase, amplitude):
    domain = fb.domain
    l = TorusMode(k, phase, domain)
    gram = np.zeros((fb.size, fb.size))
    partners: dict = {}
    entries = []
    tail_sq = 0.0
    for i, hm in enumerate(fb.modes):
        hi = i + fb.offset
        for kv in _partner_wavevectors(hm.k, l.k):
            for ph in ("cos", "sin"):
                km = TorusMode(kv, ph, domain)
                c = triad_closed_form(hm, km, l)
                if c == 0.0:
                    continue
                c *= amplitude
                j = fb.index.get((kv, ph))
                if j is not None:
                    gram[hi, j] = c
                else:
                    tail_sq += 2.0 * c * c  # both (h, k) and (k, h) fall outside
                key = (kv, ph)
                if key not in partners:
                    partners[key] = len(partners)
                entries.append((partners[key], hi, c))
    gram = 0.5 * (gram + gram.T)
    pm = [TorusMode(kv, ph, domain) for (kv, ph) in partners]
    if entries:
        r, c_, v = zip(*entries)
        rows = sp.csr_matrix((v, (r, c_)), shape=(len(pm), fb.size))
    else:
        rows = sp.csr_matrix((0, fb.size))
    return HPhiExpansion(gram, pm, rows, tail_sq)
