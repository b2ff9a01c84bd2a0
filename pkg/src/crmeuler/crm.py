"""Completely random measures M ~ [a, q, nu] and their samples.

A sample is a finite object: Gaussian coefficients on an orthonormal basis,
a list of atoms ``(x_i, gamma_i)`` and a constant drift density.  The drift
always carries the compensator, ``drift = a - m1(nu_eps)``, so that

    M(A) = drift |A| + sqrt(q) W(A) + sum_{x_i in A} gamma_i

has mean ``a |A|`` whatever the first moment of the jump law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from . import rng as rngmod
from .errors import EmptyInput, InvalidTruncation, OverlappingSets
from .geometry import Domain, Torus, UnitDisk, domain_from_json
from .spectral import FourierBasis
from .stats import MCReport

# ---------------------------------------------------------------------------
# Jump laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpLaw:
    """Levy measure nu on R, given by a piecewise-constant density or a power law.

    ``pieces`` is a tuple of ``(lo, hi, density)`` intervals (finite laws).
    ``power`` is ``(c, alpha, R)`` for the symmetric infinite-activity density
    ``c |g|^(-1-alpha)`` on ``0 < |g| <= R`` with ``0 < alpha < 1``.
    """

    kind: str = "zero"
    pieces: tuple = ()
    power: tuple | None = None
    params: tuple = ()

    # constructors -----------------------------------------------------
    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def two_band(cls, c=1.0, inner=1.0, outer=2.0):
        if not 0 < inner < outer:
            raise ValueError("need 0 < inner < outer")
        d = c / (2.0 * (outer - inner))
        return cls("two_band", ((-outer, -inner, d), (inner, outer, d)), params=(c, inner, outer))

    @classmethod
    def uniform_signed(cls, c=1.0, half_width=1.0):
        return cls(
            "uniform_signed",
            ((-half_width, 0.0, c / (2 * half_width)), (0.0, half_width, c / (2 * half_width))),
            params=(c, half_width),
        )

    @classmethod
    def table(cls, edges, densities):
        edges = [float(e) for e in edges]
        if len(edges) != len(densities) + 1 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("table needs increasing edges and one density per bin")
        if any(d < 0 for d in densities):
            raise ValueError("densities must be non-negative")
        pieces = tuple((a, b, float(d)) for a, b, d in zip(edges, edges[1:], densities) if d > 0)
        return cls("table", pieces, params=(tuple(edges), tuple(float(d) for d in densities)))

    @classmethod
    def power_law(cls, c=1.0, alpha=0.5, R=1.0):
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1) for an integrable first moment")
        return cls("power_law", power=(float(c), float(alpha), float(R)), params=(c, alpha, R))

    # properties -------------------------------------------------------
    @property
    def is_finite(self) -> bool:
        return self.power is None

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    @property
    def symmetric(self) -> bool:
        if self.power is not None:
            return True
        a = sorted(self.pieces)
        b = sorted((-hi, -lo, d) for lo, hi, d in self.pieces)
        return np.allclose(np.array(a), np.array(b)) if a else True

    def density(self, g):
        g = np.asarray(g, dtype=float)
        out = np.zeros_like(g)
        for lo, hi, d in self.pieces:
            out += np.where((g >= lo) & (g < hi), d, 0.0)
        if self.power is not None:
            c, al, R = self.power
            ag = np.abs(g)
            with np.errstate(divide="ignore"):
                out += np.where((ag > 0) & (ag <= R), c * ag ** (-1 - al), 0.0)
        return out

    def _power_moment(self, p, eps):
        # int_{eps <= |g| <= R} |g|^p nu(dg), both signs
        c, al, R = self.power
        e = p - al
        if e == 0:
            return 2 * c * math.log(R / eps)
        return 2 * c * (R**e - eps**e) / e

    def _clip(self, eps):
        out = []
        for lo, hi, d in self.pieces:
            for a, b in ((lo, min(hi, -eps)), (max(lo, eps), hi)):
                if b > a:
                    out.append((a, b, d))
        return out

    def moment(self, p: int, eps: float = 0.0) -> float:
        """int g^p nu_eps(dg), nu restricted to |g| >= eps."""
        pieces = self._clip(eps) if eps > 0 else self.pieces
        tot = sum(d * (b ** (p + 1) - a ** (p + 1)) / (p + 1) for a, b, d in pieces)
        if self.power is not None and p % 2 == 0:
            if p == 0 and eps <= 0:
                return math.inf
            tot += self._power_moment(p, eps) if p > 0 else self._power_moment(0, eps)
        return float(tot)

    def total_mass(self, eps: float = 0.0) -> float:
        return self.moment(0, eps)

    def m1(self, eps: float = 0.0) -> float:
        return self.moment(1, eps)

    def m2(self, eps: float = 0.0) -> float:
        return self.moment(2, eps)

    def abs_moment(self, eps: float = 0.0) -> float:
        pieces = self._clip(eps) if eps > 0 else self.pieces
        tot = 0.0
        for a, b, d in pieces:
            tot += d * (np.sign(b) * b * b - np.sign(a) * a * a) / 2
        if self.power is not None:
            c, al, R = self.power
            tot += 2 * c * (R ** (1 - al) - eps ** (1 - al)) / (1 - al)
        return float(tot)

    def truncation_error(self, eps: float) -> float:
        """L^1 mass discarded by the small-jump cut-off, int_{|g|<eps} |g| dnu."""
        return self.abs_moment(0.0) - self.abs_moment(eps)

    def sample_marks(self, rng, n: int, eps: float = 0.0):
        """i.i.d. marks from nu_eps normalised to a probability law."""
        if n == 0:
            return np.zeros(0)
        pieces = self._clip(eps) if eps > 0 else list(self.pieces)
        masses = [d * (b - a) for a, b, d in pieces]
        pmass = 0.0
        if self.power is not None:
            pmass = self._power_moment(0, eps)
        weights = np.array(masses + [pmass])
        weights = weights / weights.sum()
        which = rng.choice(len(weights), size=n, p=weights)
        u = rng.random(n)
        out = np.empty(n)
        for i, (a, b, _) in enumerate(pieces):
            sel = which == i
            out[sel] = a + (b - a) * u[sel]
        if self.power is not None:
            sel = which == len(pieces)
            c, al, R = self.power
            # |g| with density prop. to g^(-1-alpha) on [eps, R]
            lo, hi = eps ** (-al), R ** (-al)
            mag = (lo + (hi - lo) * u[sel]) ** (-1.0 / al)
            sign = np.where(rng.random(int(sel.sum())) < 0.5, -1.0, 1.0)
            out[sel] = sign * mag
        return out

    def cf_integral(self, t: float) -> complex:
        """int (e^{itg} - 1 - itg) nu(dg) by adaptive quadrature."""
        def re(g):
            return (math.cos(t * g) - 1.0) * float(self.density(g))

        def im(g):
            return (math.sin(t * g) - t * g) * float(self.density(g))

        total = 0.0 + 0.0j
        for a, b, _ in self.pieces:
            total += integrate.quad(re, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
            total += 1j * integrate.quad(im, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        if self.power is not None:
            c, al, R = self.power
            # symmetric: imaginary part cancels; real part 2 int_0^R (cos tg - 1) c g^{-1-a}
            f = lambda g: 2 * c * (math.cos(t * g) - 1.0) * g ** (-1 - al)  # noqa: E731
            total += integrate.quad(f, 0.0, R, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
        return complex(total)

    def to_json(self):
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "two_band":
            c, i, o = self.params
            return {"kind": "two_band", "c": c, "inner": i, "outer": o}
        if self.kind == "uniform_signed":
            c, w = self.params
            return {"kind": "uniform_signed", "c": c, "half_width": w}
        if self.kind == "table":
            e, d = self.params
            return {"kind": "table", "edges": list(e), "densities": list(d)}
        c, al, R = self.params
        return {"kind": "power_law", "c": c, "alpha": al, "R": R}

    @classmethod
    def from_json(cls, d):
        kind = d.get("kind", "zero")
        if kind == "zero":
            return cls.zero()
        if kind == "two_band":
            return cls.two_band(float(d.get("c", 1.0)), float(d.get("inner", 1.0)), float(d.get("outer", 2.0)))
        if kind == "uniform_signed":
            return cls.uniform_signed(float(d.get("c", 1.0)), float(d.get("half_width", 1.0)))
        if kind == "table":
            return cls.table(d["edges"], d["densities"])
        if kind == "power_law":
            return cls.power_law(float(d.get("c", 1.0)), float(d.get("alpha", 0.5)), float(d.get("R", 1.0)))
        raise ValueError(f"unknown jump law kind {kind!r}")


# ---------------------------------------------------------------------------
# Triples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CRMTriple:
    a: float = 0.0
    q: float = 0.0
    nu: JumpLaw = field(default_factory=JumpLaw.zero)
    domain: Domain = field(default_factory=Torus)

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("q must be non-negative")

    def __str__(self):
        return f"[{self.a:g},{self.q:g},{self.nu.kind}]"

    def to_json(self):
        return {"a": self.a, "q": self.q, "nu": self.nu.to_json(), "domain": self.domain.to_json()}

    @classmethod
    def from_json(cls, d):
        return cls(
            float(d.get("a", 0.0)),
            float(d.get("q", 0.0)),
            JumpLaw.from_json(d.get("nu", {"kind": "zero"})),
            domain_from_json(d.get("domain", {"kind": "torus"})),
        )


# ---------------------------------------------------------------------------
# Sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[x0, x1) x [y0, y1)`` (torus coordinates)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def measure(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x):
        x = np.asarray(x)
        return (x[..., 0] >= self.x0) & (x[..., 0] < self.x1) & (x[..., 1] >= self.y0) & (x[..., 1] < self.y1)

    def overlap(self, other):
        if not isinstance(other, Rect):
            raise TypeError("overlap only between rectangles")
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0.0) * max(h, 0.0)


@dataclass(frozen=True)
class AnnularSector:
    """``{r0 <= |x| < r1, th0 <= arg x < th1}`` inside the unit disk."""

    r0: float
    r1: float
    th0: float
    th1: float

    @property
    def measure(self):
        return 0.5 * (self.r1**2 - self.r0**2) * (self.th1 - self.th0)

    def contains(self, x):
        x = np.asarray(x)
        r = np.hypot(x[..., 0], x[..., 1])
        th = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * math.pi)
        return (r >= self.r0) & (r < self.r1) & (th >= self.th0) & (th < self.th1)

    def overlap(self, other):
        if not isinstance(other, AnnularSector):
            raise TypeError("overlap only between sectors")
        dr = max(min(self.r1, other.r1) - max(self.r0, other.r0), 0.0)
        dth = max(min(self.th1, other.th1) - max(self.th0, other.th0), 0.0)
        if dr == 0 or dth == 0:
            return 0.0
        r0, r1 = max(self.r0, other.r0), min(self.r1, other.r1)
        return 0.5 * (r1**2 - r0**2) * dth


def set_from_json(d):
    if d.get("kind", "rect") == "rect":
        return Rect(*map(float, (d["x0"], d["y0"], d["x1"], d["y1"])))
    return AnnularSector(*map(float, (d["r0"], d["r1"], d["th0"], d["th1"])))


# ---------------------------------------------------------------------------
# Gaussian bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellBasis:
    """Normalised cell indicators ``1_c / sqrt|c|`` on an ``n x n`` torus grid.

    White noise on this basis is exact for sets made of whole cells.
    """

    domain: Torus = field(default_factory=Torus)
    n: int = 8

    kind = "cells"

    @property
    def size(self):
        return self.n * self.n

    @property
    def h(self):
        return self.domain.L / self.n

    def evaluate(self, x):
        x = self.domain.wrap(np.asarray(x, dtype=float))
        i = np.minimum((x[..., 0] / self.h).astype(int), self.n - 1)
        j = np.minimum((x[..., 1] / self.h).astype(int), self.n - 1)
        out = np.zeros(x.shape[:-1] + (self.size,))
        np.put_along_axis(out, (i * self.n + j)[..., None], 1.0 / self.h, axis=-1)
        return out

    def integrals(self):
        return np.full(self.size, self.h)

    def set_coefficients(self, A: Rect):
        e = np.arange(self.n) * self.h
        wx = np.clip(np.minimum(e + self.h, A.x1) - np.maximum(e, A.x0), 0, None)
        wy = np.clip(np.minimum(e + self.h, A.y1) - np.maximum(e, A.y0), 0, None)
        return np.outer(wx, wy).ravel() / self.h

    def coefficients(self, f, nodes_per_cell: int = 4):
        xg, wg = np.polynomial.legendre.leggauss(nodes_per_cell)
        s = 0.5 * (xg + 1) * self.h
        w = 0.5 * wg * self.h
        e = np.arange(self.n) * self.h
        X = (e[:, None] + s[None, :]).ravel()
        P = np.stack(np.meshgrid(X, X, indexing="ij"), axis=-1).reshape(-1, 2)
        W = np.outer(np.tile(w, self.n), np.tile(w, self.n)).ravel()
        vals = (f.eval(P) if hasattr(f, "eval") else f(P)) * W
        vals = vals.reshape(self.n, nodes_per_cell, self.n, nodes_per_cell).sum(axis=(1, 3))
        return vals.ravel() / self.h

    def to_json(self):
        return {"kind": "cells", "n": self.n}


@dataclass(frozen=True)
class GridBasis:
    """Normalised indicators of the cells of a rectangular (non-uniform) torus grid.

    ``xedges`` and ``yedges`` are increasing breakpoints from 0 to L; white noise
    is exact for any set made of whole cells.
    """

    xedges: tuple
    yedges: tuple
    domain: Torus = field(default_factory=Torus)

    kind = "grid"

    def __post_init__(self):
        for e in (self.xedges, self.yedges):
            e = np.asarray(e, dtype=float)
            if e[0] != 0.0 or abs(e[-1] - self.domain.L) > 1e-12 or np.any(np.diff(e) <= 0):
                raise ValueError("grid edges must increase from 0 to L")
        object.__setattr__(self, "xedges", tuple(float(v) for v in self.xedges))
        object.__setattr__(self, "yedges", tuple(float(v) for v in self.yedges))

    @property
    def size(self):
        return (len(self.xedges) - 1) * (len(self.yedges) - 1)

    def _areas(self):
        return np.outer(np.diff(self.xedges), np.diff(self.yedges)).ravel()

    def evaluate(self, x):
        x = self.domain.wrap(np.asarray(x, dtype=float))
        nx, ny = len(self.xedges) - 1, len(self.yedges) - 1
        i = np.clip(np.searchsorted(self.xedges, x[..., 0], side="right") - 1, 0, nx - 1)
        j = np.clip(np.searchsorted(self.yedges, x[..., 1], side="right") - 1, 0, ny - 1)
        out = np.zeros(x.shape[:-1] + (self.size,))
        k = i * ny + j
        np.put_along_axis(out, k[..., None], (1.0 / np.sqrt(self._areas()))[k][..., None], axis=-1)
        return out

    def integrals(self):
        return np.sqrt(self._areas())

    def set_coefficients(self, A: Rect):
        ex, ey = np.asarray(self.xedges), np.asarray(self.yedges)
        wx = np.clip(np.minimum(ex[1:], A.x1) - np.maximum(ex[:-1], A.x0), 0, None)
        wy = np.clip(np.minimum(ey[1:], A.y1) - np.maximum(ey[:-1], A.y0), 0, None)
        return np.outer(wx, wy).ravel() / np.sqrt(self._areas())

    def coefficients(self, f, nodes_per_cell: int = 4):
        xg, wg = np.polynomial.legendre.leggauss(nodes_per_cell)

        def axis(edges):
            e = np.asarray(edges)
            lo, w = e[:-1, None], np.diff(e)[:, None]
            return (lo + 0.5 * (xg + 1) * w).ravel(), (0.5 * wg * w).ravel()

        X, WX = axis(self.xedges)
        Y, WY = axis(self.yedges)
        P = np.stack(np.meshgrid(X, Y, indexing="ij"), axis=-1).reshape(-1, 2)
        vals = (f.eval(P) if hasattr(f, "eval") else f(P)) * np.outer(WX, WY).ravel()
        nx, ny = len(self.xedges) - 1, len(self.yedges) - 1
        vals = vals.reshape(nx, nodes_per_cell, ny, nodes_per_cell).sum(axis=(1, 3))
        return vals.ravel() / np.sqrt(self._areas())

    def to_json(self):
        return {"kind": "grid", "xedges": list(self.xedges), "yedges": list(self.yedges)}


def grid_for_sets(domain: Torus, sets) -> GridBasis:
    """The coarsest grid in which every rectangle of ``sets`` is a union of cells."""
    xs = {0.0, domain.L}
    ys = {0.0, domain.L}
    for A in sets:
        xs |= {min(max(A.x0, 0.0), domain.L), min(max(A.x1, 0.0), domain.L)}
        ys |= {min(max(A.y0, 0.0), domain.L), min(max(A.y1, 0.0), domain.L)}
    return GridBasis(tuple(sorted(xs)), tuple(sorted(ys)), domain)


@dataclass(frozen=True)
class EmptyBasis:
    domain: Domain = field(default_factory=Torus)
    kind = "empty"
    size = 0

    def evaluate(self, x):
        return np.zeros(np.asarray(x).shape[:-1] + (0,))

    def integrals(self):
        return np.zeros(0)

    def coefficients(self, f):
        return np.zeros(0)

    def set_coefficients(self, A):
        return np.zeros(0)

    def to_json(self):
        return {"kind": "empty"}


def _fourier_set_coefficients(fb: FourierBasis, A: Rect):
    """<1_A, e_j> in closed form for an axis-aligned rectangle."""
    out = np.zeros(fb.size)
    if fb.include_constant:
        out[0] = A.measure / fb.domain.L

    def seg(k, a, b):
        if k == 0:
            return b - a
        return (np.exp(1j * k * b) - np.exp(1j * k * a)) / (1j * k)

    for i, m in enumerate(fb.modes):
        k1, k2 = m.kappa
        v = seg(k1, A.x0, A.x1) * seg(k2, A.y0, A.y1)
        out[i + fb.offset] = m.norm_const * (v.imag if m.phase == "sin" else v.real)
    return out


FourierBasis.set_coefficients = _fourier_set_coefficients


def basis_from_json(d, domain):
    kind = d.get("kind", "fourier")
    if kind == "fourier":
        return FourierBasis(domain, int(d.get("max_wavenumber", 8)), bool(d.get("include_constant", True)))
    if kind == "cells":
        return CellBasis(domain, int(d.get("n", 8)))
    if kind == "grid":
        return GridBasis(tuple(d["xedges"]), tuple(d["yedges"]), domain)
    return EmptyBasis(domain)


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CRMSample:
    """One realisation of M ~ [a, q, nu] as coefficients + atoms + drift."""

    triple: CRMTriple
    basis: object
    gaussian_coeffs: np.ndarray
    positions: np.ndarray
    marks: np.ndarray
    eps: float = 0.0
    m1: float = 0.0

    @property
    def domain(self):
        return self.triple.domain

    @property
    def a(self):
        return self.triple.a

    @property
    def q(self):
        return self.triple.q

    @property
    def drift(self) -> float:
        return self.triple.a - self.m1

    @property
    def m_W(self) -> int:
        return len(self.gaussian_coeffs)

    @property
    def n_atoms(self) -> int:
        return len(self.marks)

    @property
    def atoms(self):
        return list(zip(map(tuple, self.positions), self.marks))

    def replace(self, **kw):
        d = dict(
            triple=self.triple,
            basis=self.basis,
            gaussian_coeffs=self.gaussian_coeffs,
            positions=self.positions,
            marks=self.marks,
            eps=self.eps,
            m1=self.m1,
        )
        d.update(kw)
        return CRMSample(**d)

    def to_json(self):
        return {
            "triple": self.triple.to_json(),
            "basis": self.basis.to_json(),
            "gaussian_coeffs": [float(v) for v in self.gaussian_coeffs],
            "eps": self.eps,
            "m1": self.m1,
            "drift": self.drift,
        }

    def atoms_csv(self):
        lines = ["x,y,gamma"]
        for (x, y), g in zip(self.positions, self.marks):
            lines.append(f"{x:.17e},{y:.17e},{g:.17e}")
        return "\n".join(lines) + "\n"


def atom_source(triple: CRMTriple, eps: float | None):
    nu = triple.nu
    if nu.is_zero:
        return 0.0, 0.0
    if not nu.is_finite:
        if eps is None or eps <= 0:
            raise InvalidTruncation("infinite-activity jump law needs a cut-off eps > 0")
        return nu.total_mass(eps), nu.m1(eps)
    e = eps or 0.0
    return nu.total_mass(e), nu.m1(e)


def default_basis(triple: CRMTriple, max_wavenumber: int = 8):
    if triple.q == 0:
        return EmptyBasis(triple.domain)
    if isinstance(triple.domain, Torus):
        return FourierBasis(triple.domain, max_wavenumber)
    raise NotImplementedError("a Gaussian part on the disk needs an explicit basis")


def sample_crm(triple: CRMTriple, basis=None, rng=None, eps: float | None = None) -> CRMSample:
    """Draw one sample.

    ``basis`` carries the Gaussian truncation (its size is m_W); with q = 0 the
    Gaussian part is omitted.  Atoms: a Poisson(|D| nu_eps(R)) number of
    uniform positions with i.i.d. marks from the normalised nu_eps.
    """
    rng = rng if rng is not None else rngmod.stream(0)
    if basis is None:
        basis = default_basis(triple)
    if triple.q == 0:
        basis = EmptyBasis(triple.domain)
    mass, m1 = atom_source(triple, eps)
    xi = rng.standard_normal(basis.size)
    n = rng.poisson(mass * triple.domain.area) if mass > 0 else 0
    pos = triple.domain.sample_uniform(rng, n)
    marks = triple.nu.sample_marks(rng, n, eps or 0.0) if n else np.zeros(0)
    return CRMSample(triple, basis, xi, pos, marks, float(eps or 0.0), m1)


@dataclass(eq=False)
class SampleBatch:
    """N samples stored as arrays; atoms padded to a common count with zero marks."""

    triple: CRMTriple
    basis: object
    xi: np.ndarray  # (N, m)
    positions: np.ndarray  # (N, nmax, 2)
    marks: np.ndarray  # (N, nmax)
    counts: np.ndarray  # (N,)
    eps: float = 0.0
    m1: float = 0.0

    def __len__(self):
        return self.xi.shape[0]

    @property
    def drift(self):
        return self.triple.a - self.m1

    @property
    def mask(self):
        return np.arange(self.marks.shape[1])[None, :] < self.counts[:, None]

    def antithetic(self, flip_marks: bool):
        return SampleBatch(
            self.triple,
            self.basis,
            -self.xi,
            self.positions,
            -self.marks if flip_marks else self.marks,
            self.counts,
            self.eps,
            self.m1,
        )

    def sample(self, i) -> CRMSample:
        n = self.counts[i]
        return CRMSample(
            self.triple,
            self.basis,
            self.xi[i],
            self.positions[i, :n],
            self.marks[i, :n],
            self.eps,
            self.m1,
        )


def sample_batch(triple: CRMTriple, basis, rng, n: int, eps: float | None = None) -> SampleBatch:
    if triple.q == 0:
        basis = EmptyBasis(triple.domain)
    mass, m1 = atom_source(triple, eps)
    xi = rng.standard_normal((n, basis.size))
    counts = rng.poisson(mass * triple.domain.area, size=n) if mass > 0 else np.zeros(n, dtype=int)
    nmax = int(counts.max()) if n else 0
    total = int(counts.sum())
    pos_flat = triple.domain.sample_uniform(rng, total)
    marks_flat = triple.nu.sample_marks(rng, total, eps or 0.0) if total else np.zeros(0)
    pos = np.zeros((n, nmax, 2))
    marks = np.zeros((n, nmax))
    mask = np.arange(nmax)[None, :] < counts[:, None]
    pos[mask] = pos_flat
    marks[mask] = marks_flat
    # padding slots get distinct dummy positions so kernels stay finite
    if nmax:
        dummy = np.linspace(0.05, 0.95, nmax)
        filler = np.stack([dummy, dummy[::-1] * 0.5 + 0.1], axis=-1)
        if isinstance(triple.domain, Torus):
            filler = filler * triple.domain.L
        else:
            filler = (filler - 0.5) * 0.5
        pos = np.where(mask[..., None], pos, filler[None, :, :])
    return SampleBatch(triple, basis, xi, pos, marks, counts, float(eps or 0.0), m1)


# ---------------------------------------------------------------------------
# Set evaluations
# ---------------------------------------------------------------------------


def measure_of(sample: CRMSample | SampleBatch, A) -> np.ndarray | float:
    """M(A) for a sample or a batch (vectorised over the batch)."""
    gauss_c = sample.basis.set_coefficients(A) if sample.basis.size else np.zeros(0)
    sq = math.sqrt(sample.triple.q)
    if isinstance(sample, SampleBatch):
        inside = A.contains(sample.positions) & sample.mask
        return sample.drift * A.measure + sq * (sample.xi @ gauss_c) + np.sum(sample.marks * inside, axis=1)
    inside = A.contains(sample.positions) if sample.n_atoms else np.zeros(0, bool)
    return float(
        sample.drift * A.measure
        + sq * np.dot(sample.gaussian_coeffs, gauss_c)
        + np.sum(sample.marks[inside])
    )


# ---------------------------------------------------------------------------
# Characteristic functions
# ---------------------------------------------------------------------------


def cf_levy_khintchine(triple: CRMTriple, set_measure: float, t: float) -> complex:
    if not 0 < set_measure <= triple.domain.area * (1 + 1e-12):
        raise ValueError("set measure must lie in (0, |D|]")
    expo = 1j * t * triple.a * set_measure - 0.5 * t * t * triple.q * set_measure
    if not triple.nu.is_zero:
        expo += set_measure * triple.nu.cf_integral(t)
    return complex(np.exp(expo))


@dataclass(frozen=True)
class EmpiricalCF:
    value: complex | np.ndarray
    stderr: float


def empirical_cf(values, t) -> EmpiricalCF:
    """(1/N) sum exp(i t v_j), with the per-component error bound 1/sqrt(N)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInput("empirical_cf needs at least one value")
    t_arr = np.asarray(t, dtype=float)
    val = np.exp(1j * np.multiply.outer(t_arr, v)).mean(axis=-1)
    if t_arr.ndim == 0:
        val = complex(val)
    return EmpiricalCF(val, 1.0 / math.sqrt(v.size))


# ---------------------------------------------------------------------------
# Hypothesis tests (independence and stationarity of set values)
# ---------------------------------------------------------------------------


def _batched_set_values(triple, sets, N, seed, basis, eps):
    out = [[] for _ in sets]
    for sid, size in rngmod.blocks(N):
        b = sample_batch(triple, basis, rngmod.stream(seed, sid), size, eps)
        for i, A in enumerate(sets):
            out[i].append(measure_of(b, A))
    return [np.concatenate(o) for o in out]


@dataclass
class HypothesisReport:
    covariance: float
    covariance_stderr: float
    factorization_max_ratio: float
    factorization_max_error: float
    stationarity_distance: float
    stationarity_band: float
    N: int
    verdict: str
    reports: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == "pass"


def default_set_basis(triple, n=8):
    if triple.q == 0:
        return EmptyBasis(triple.domain)
    if isinstance(triple.domain, Torus):
        return CellBasis(triple.domain, n)
    raise NotImplementedError("Gaussian set values on the disk are not supported")


def hypothesis_tests(
    triple: CRMTriple,
    A,
    B,
    N: int,
    seed: int = 0,
    B_prime=None,
    basis=None,
    eps: float | None = None,
    z_max: float = 4.0,
    grid=(-1.0, -0.5, 0.0, 0.5, 1.0),
):
    """Independence of M(A), M(B) for disjoint A, B and equality in law of
    M(A), M(B') for |A| = |B'|.

    Independence: empirical covariance within ``z_max`` standard errors, and
    the CF factorisation error ``|phi_AB(s,t) - phi_A(s) phi_B(t)|`` on the
    5 x 5 grid within ``z_max`` delta-method standard errors.
    Stationarity: sup over the t-grid of ``|phi_A - phi_B'|`` below 6/sqrt(N).
    """
    if N < 1000:
        raise ValueError("N must be >= 1000")
    if A.overlap(B) > 0:
        raise OverlappingSets("A and B overlap in a set of positive measure")
    Bp = B_prime if B_prime is not None else B
    if abs(Bp.measure - A.measure) > 1e-12 * A.measure:
        raise ValueError("stationarity check needs |A| = |B'|")
    basis = basis if basis is not None else default_set_basis(triple)
    X, Y, Z = _batched_set_values(triple, [A, B, Bp], N, seed, basis, eps)

    cov_terms = (X - X.mean()) * (Y - Y.mean())
    cov = float(cov_terms.sum() / (N - 1))
    cov_se = float(np.std(cov_terms, ddof=1) / math.sqrt(N))

    worst_ratio = 0.0
    worst_err = 0.0
    for s in grid:
        ex = np.exp(1j * s * X)
        for t in grid:
            ey = np.exp(1j * t * Y)
            phi_a, phi_b = ex.mean(), ey.mean()
            joint = (ex * ey).mean()
            err = abs(joint - phi_a * phi_b)
            infl = ex * ey - phi_b * ex - phi_a * ey
            infl = infl - infl.mean()
            se = math.sqrt(float(np.mean(np.abs(infl) ** 2)) / N)
            worst_err = max(worst_err, err)
            if se > 0:
                worst_ratio = max(worst_ratio, err / se)
            elif err > 1e-14:
                worst_ratio = math.inf

    tgrid = np.linspace(-2.0, 2.0, 21)
    dist = float(np.max(np.abs(empirical_cf(X, tgrid).value - empirical_cf(Z, tgrid).value)))
    band = 6.0 / math.sqrt(N)
    ok = abs(cov) <= z_max * cov_se + 1e-15 and worst_ratio <= z_max and dist < band
    return HypothesisReport(
        covariance=cov,
        covariance_stderr=cov_se,
        factorization_max_ratio=worst_ratio,
        factorization_max_error=worst_err,
        stationarity_distance=dist,
        stationarity_band=band,
        N=N,
        verdict="pass" if ok else "fail",
        reports={"covariance": MCReport.from_values(cov_terms, z_max=z_max, seed=seed).to_json()},
    )


def set_covariance(triple, A, B, N, seed=0, basis=None, eps=None):
    """Empirical covariance of M(A), M(B) and its standard error."""
    basis = basis if basis is not None else default_set_basis(triple)
    X, Y = _batched_set_values(triple, [A, B], N, seed, basis, eps)
    terms = (X - X.mean()) * (Y - Y.mean())
    return float(terms.sum() / (N - 1)), float(np.std(terms, ddof=1) / math.sqrt(N))
