"""Domains, Green functions, Biot-Savart kernels, test functions and quadrature.

Two domains are supported: the flat square torus of side ``L`` and the unit
disk with Dirichlet boundary conditions.  Points are arrays whose last axis
has length 2; every kernel routine broadcasts over leading axes.

Sign conventions: ``G = (-Delta)^{-1}`` (mean-zero on the torus),
``K(x, y) = grad_perp_x G(x, y)`` with ``grad_perp = (-d_2, d_1)``, and

    H_phi(x, y) = 1/2 (grad phi(x) - grad phi(y)) . K(x, y),   H_phi(x, x) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy.special import exp1

from .errors import CoincidentPoints, NonSymmetricKernel, OutsideDomain

TWO_PI = 2.0 * math.pi

COINCIDENCE_TOL = 1e-14
DIAGONAL_CUTOFF = 1e-8

# theta_1 nome for the square lattice (tau = i)
_NOME = math.exp(-math.pi)
_THETA_TERMS = 5
_THETA_N = np.arange(_THETA_TERMS)
_THETA_COEF = 2.0 * (-1.0) ** _THETA_N * _NOME ** ((_THETA_N + 0.5) ** 2)
_THETA_FREQ = 2 * _THETA_N + 1


def _perp(v):
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Torus:
    """Flat square torus ``[0, L)^2``.

    ``method`` selects the Green-function evaluator: ``"theta"`` uses the
    Jacobi theta-function closed form (machine precision, a handful of terms),
    ``"ewald"`` the Ewald split.  Both agree to ``ewald_tolerance``.
    """

    L: float = TWO_PI
    ewald_tolerance: float = 1e-12
    method: str = "theta"

    kind = "torus"

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("torus side length must be positive")
        if self.method not in ("theta", "ewald"):
            raise ValueError(f"unknown Green-function method {self.method!r}")

    @property
    def area(self) -> float:
        return self.L * self.L

    def reduce(self, z):
        """Minimal-image representative of a displacement, in [-L/2, L/2)^2."""
        z = np.asarray(z, dtype=float)
        return z - self.L * np.floor(z / self.L + 0.5)

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        return x - self.L * np.floor(x / self.L)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)

    def separation(self, x, y):
        return np.linalg.norm(self.reduce(np.asarray(x) - np.asarray(y)), axis=-1)

    def sample_uniform(self, rng, n):
        return rng.random((n, 2)) * self.L

    # -- Ewald parameters: real-space and spectral cut-offs sized from the tolerance
    @cached_property
    def _ewald(self):
        alpha = math.pi / self.L**2
        tol = max(self.ewald_tolerance, 1e-16)
        # real space: E1(alpha (n - 1/2)^2 L^2) < tol  ->  pi (n - 1/2)^2 > -log(tol)
        n_real = int(math.ceil(math.sqrt(-math.log(tol) / math.pi) + 0.5)) + 1
        # spectral: exp(-pi m^2) < tol
        n_spec = int(math.ceil(math.sqrt(-math.log(tol) / math.pi))) + 1
        ii = np.arange(-n_real, n_real + 1)
        shifts = self.L * np.array([(i, j) for i in ii for j in ii], dtype=float)
        mm = np.arange(-n_spec, n_spec + 1)
        ms = np.array([(i, j) for i in mm for j in mm if (i, j) != (0, 0)], dtype=float)
        kappa = TWO_PI / self.L * ms
        k2 = np.sum(kappa**2, axis=1)
        damp = np.exp(-k2 / (4 * alpha)) / k2 / self.L**2
        return alpha, shifts, kappa, damp

    def _green_ewald(self, z):
        alpha, shifts, kappa, damp = self._ewald
        z = self.reduce(z)
        r = z[..., None, :] + shifts
        rho2 = np.sum(r**2, axis=-1)
        real = exp1(alpha * rho2).sum(axis=-1) / (4 * math.pi)
        spec = np.cos(z @ kappa.T) @ damp
        return real + spec - 1.0 / (4 * alpha * self.L**2)

    def _grad_green_ewald(self, z):
        alpha, shifts, kappa, damp = self._ewald
        z = self.reduce(z)
        r = z[..., None, :] + shifts
        rho2 = np.sum(r**2, axis=-1)
        real = -(np.exp(-alpha * rho2) / rho2)[..., None] * r
        real = real.sum(axis=-2) / TWO_PI
        spec = -(np.sin(z @ kappa.T) * damp) @ kappa
        return real + spec

    def _theta_parts(self, z):
        # sin((2n+1)u) and cos((2n+1)u) by powers of w = exp(iu): one complex exp
        u = math.pi / self.L * (z[..., 0] + 1j * z[..., 1])
        w = np.exp(1j * u)
        winv = 1.0 / w
        w2, winv2 = w * w, winv * winv
        p, m = w, winv
        th = np.zeros_like(u)
        dth = np.zeros_like(u)
        for c, f in zip(_THETA_COEF, _THETA_FREQ):
            th += c * (p - m)
            dth += (c * f) * (p + m)
            p = p * w2
            m = m * winv2
        return th / 2j, dth / 2

    @cached_property
    def _theta_offset(self):
        probe = np.array([0.31, 0.17]) * self.L
        th, _ = self._theta_parts(probe)
        raw = -np.log(np.abs(th)) / TWO_PI + probe[1] ** 2 / (2 * self.L**2)
        return float(self._green_ewald(probe) - raw)

    def _green_theta(self, z):
        z = self.reduce(z)
        th, _ = self._theta_parts(z)
        return -np.log(np.abs(th)) / TWO_PI + z[..., 1] ** 2 / (2 * self.L**2) + self._theta_offset

    def _grad_green_theta(self, z):
        z = self.reduce(z)
        th, dth = self._theta_parts(z)
        ratio = dth / th
        g1 = -ratio.real / (2 * self.L)
        g2 = ratio.imag / (2 * self.L) + z[..., 1] / self.L**2
        return np.stack([g1, g2], axis=-1)

    def green(self, x, y):
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.method == "ewald":
            return self._green_ewald(z)
        return self._green_theta(z)

    def grad_green(self, x, y):
        """Gradient of G in its first argument."""
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.method == "ewald":
            return self._grad_green_ewald(z)
        return self._grad_green_theta(z)

    def to_json(self):
        return {"kind": "torus", "L": self.L}


@dataclass(frozen=True)
class UnitDisk:
    """Open unit disk with Dirichlet Green function (method of images)."""

    ewald_tolerance: float = 1e-12

    kind = "disk"
    radius = 1.0

    @property
    def area(self) -> float:
        return math.pi

    def reduce(self, z):
        return np.asarray(z, dtype=float)

    def wrap(self, x):
        return np.asarray(x, dtype=float)

    def contains(self, x):
        return np.sum(np.asarray(x, dtype=float) ** 2, axis=-1) < 1.0

    def separation(self, x, y):
        return np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1)

    def sample_uniform(self, rng, n):
        r = np.sqrt(rng.random(n))
        th = TWO_PI * rng.random(n)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    @staticmethod
    def _image_denominator(x, y):
        # |y|^2 |x - y/|y|^2|^2, finite as y -> 0
        return (
            np.sum(x * x, axis=-1) * np.sum(y * y, axis=-1)
            - 2 * np.sum(x * y, axis=-1)
            + 1.0
        )

    def green(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d2 = np.sum((x - y) ** 2, axis=-1)
        return (np.log(self._image_denominator(x, y)) - np.log(d2)) / (4 * math.pi)

    def grad_green(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = x - y
        d2 = np.sum(r * r, axis=-1)[..., None]
        den = self._image_denominator(x, y)[..., None]
        yy = np.sum(y * y, axis=-1)[..., None]
        return ((yy * x - y) / den - r / d2) / TWO_PI

    def regular_part(self, x, y):
        """Smooth image part of G, the term removed by the singular log."""
        return np.log(self._image_denominator(np.asarray(x), np.asarray(y))) / (4 * math.pi)

    def self_velocity(self, x):
        """grad_perp of the image part evaluated on the diagonal."""
        x = np.asarray(x, dtype=float)
        xx = np.sum(x * x, axis=-1)[..., None]
        grad = -x / (TWO_PI * (1.0 - xx))
        return _perp(grad)

    def to_json(self):
        return {"kind": "disk"}


Domain = Torus | UnitDisk


def domain_from_json(d: dict) -> Domain:
    kind = d.get("kind")
    if kind == "torus":
        return Torus(L=float(d.get("L", TWO_PI)))
    if kind == "disk":
        return UnitDisk()
    raise ValueError(f"unknown domain kind {kind!r}")


def _check_points(domain, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(domain, UnitDisk):
        for p in (x, y):
            if np.any(np.sum(p * p, axis=-1) > 1.0 + 1e-14):
                raise OutsideDomain("point outside the closed unit disk")
    if np.any(domain.separation(x, y) < COINCIDENCE_TOL):
        raise CoincidentPoints("Green function is singular at coincident points")
    return x, y


def green(domain: Domain, x, y):
    """Green function of ``-Delta`` (Dirichlet on the disk, mean-zero on the torus)."""
    x, y = _check_points(domain, x, y)
    return domain.green(x, y)


def biot_savart(domain: Domain, x, y):
    """K(x, y) = grad_perp_x G(x, y)."""
    x, y = _check_points(domain, x, y)
    return _perp(domain.grad_green(x, y))


def kernel_unchecked(domain: Domain, x, y):
    """Biot-Savart kernel without argument validation (hot loops)."""
    return _perp(domain.grad_green(x, y))


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


def _grid(domain, n=128):
    if isinstance(domain, Torus):
        t = (np.arange(n) + 0.5) * domain.L / n
        X, Y = np.meshgrid(t, t, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)
    t = np.linspace(-1 + 1.0 / n, 1 - 1.0 / n, n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    return pts[np.sum(pts**2, axis=-1) < 1.0]


class _C2Norm:
    @cached_property
    def c2_norm(self) -> float:
        """Grid surrogate of the C^2 norm: max of |phi|, |d phi|, |d^2 phi|."""
        pts = _grid(self.domain)
        return float(
            max(
                np.max(np.abs(self.eval(pts))),
                np.max(np.abs(self.grad(pts))),
                np.max(np.abs(self.hessian(pts))),
            )
        )


@dataclass(frozen=True)
class TorusMode(_C2Norm):
    """L^2-normalised Laplace eigenfunction ``sqrt(2)/L cos|sin(kappa . x)``.

    ``kappa = 2 pi k / L``; the eigenvalue is ``|kappa|^2``.
    """

    k: tuple[int, int]
    phase: str = "cos"
    domain: Torus = field(default_factory=Torus)
    amplitude: float = 1.0

    kind = "torus_mode"

    def __post_init__(self):
        k = (int(self.k[0]), int(self.k[1]))
        object.__setattr__(self, "k", k)
        if k == (0, 0):
            raise ValueError("torus modes must have k != (0, 0)")
        if self.phase not in ("cos", "sin"):
            raise ValueError("phase must be 'cos' or 'sin'")
        if not isinstance(self.domain, Torus):
            raise ValueError("TorusMode lives on a Torus")

    @property
    def kappa(self):
        return TWO_PI / self.domain.L * np.array(self.k, dtype=float)

    @property
    def eigenvalue(self) -> float:
        return float(np.sum(self.kappa**2))

    @property
    def norm_const(self) -> float:
        return self.amplitude * math.sqrt(2.0) / self.domain.L

    def _theta(self, x):
        return np.asarray(x, dtype=float) @ self.kappa

    def eval(self, x):
        th = self._theta(x)
        f = np.cos(th) if self.phase == "cos" else np.sin(th)
        return self.norm_const * f

    def grad(self, x):
        th = self._theta(x)
        d = -np.sin(th) if self.phase == "cos" else np.cos(th)
        return self.norm_const * d[..., None] * self.kappa

    def hessian(self, x):
        kk = np.outer(self.kappa, self.kappa)
        return -self.eval(x)[..., None, None] * kk

    def laplacian(self, x):
        return -self.eigenvalue * self.eval(x)

    def scaled(self, factor):
        return TorusMode(self.k, self.phase, self.domain, self.amplitude * factor)

    def to_json(self):
        d = {"kind": "torus_mode", "k": list(self.k), "phase": self.phase}
        if self.amplitude != 1.0:
            d["amplitude"] = self.amplitude
        return d


@dataclass(frozen=True)
class DiskBump(_C2Norm):
    """Compactly supported bump ``A exp(1 - 1/(1 - |x-c|^2/r^2))`` inside the disk."""

    center: tuple[float, float]
    radius: float
    amplitude: float = 1.0
    domain: UnitDisk = field(default_factory=UnitDisk)

    kind = "disk_bump"

    def __post_init__(self):
        c = (float(self.center[0]), float(self.center[1]))
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError("bump radius must be positive")
        if math.hypot(*c) + self.radius >= 1.0:
            raise ValueError("bump support must lie strictly inside the unit disk")

    def _s(self, x):
        d = np.asarray(x, dtype=float) - np.array(self.center)
        return d, np.sum(d * d, axis=-1) / self.radius**2

    def eval(self, x):
        _, s = self._s(x)
        inside = s < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - si))
        return out

    def grad(self, x):
        d, s = self._s(x)
        phi = self.eval(x)
        inside = s < 1.0
        fac = np.zeros_like(s)
        fac[inside] = -phi[inside] / (1.0 - s[inside]) ** 2 * 2.0 / self.radius**2
        return fac[..., None] * d

    def hessian(self, x):
        d, s = self._s(x)
        phi = self.eval(x)
        inside = s < 1.0
        g1 = np.zeros_like(s)
        g2 = np.zeros_like(s)
        si = s[inside]
        g1[inside] = -phi[inside] / (1.0 - si) ** 2
        g2[inside] = phi[inside] * (2.0 * si - 1.0) / (1.0 - si) ** 4
        ds = 2.0 * d / self.radius**2
        eye = np.eye(2)
        return g2[..., None, None] * ds[..., :, None] * ds[..., None, :] + (
            2.0 * g1 / self.radius**2
        )[..., None, None] * eye

    def scaled(self, factor):
        return DiskBump(self.center, self.radius, self.amplitude * factor, self.domain)

    def to_json(self):
        return {
            "kind": "disk_bump",
            "center": list(self.center),
            "radius": self.radius,
            "amplitude": self.amplitude,
        }


TestFunction = TorusMode | DiskBump


def test_function_from_json(d: dict, domain: Domain | None = None) -> TestFunction:
    kind = d.get("kind")
    if kind == "torus_mode":
        dom = domain if isinstance(domain, Torus) else Torus()
        return TorusMode(tuple(d["k"]), d.get("phase", "cos"), dom, float(d.get("amplitude", 1.0)))
    if kind == "disk_bump":
        return DiskBump(
            tuple(d["center"]), float(d["radius"]), float(d.get("amplitude", 1.0))
        )
    raise ValueError(f"unknown test function kind {kind!r}")


# ---------------------------------------------------------------------------
# Symmetrised kernel
# ---------------------------------------------------------------------------


def h_kernel(phi: TestFunction, x, y):
    """H_phi(x, y) = 1/2 (grad phi(x) . K(x, y) + grad phi(y) . K(y, x)).

    Where K is antisymmetric (torus) this is 1/2 (grad phi(x) - grad phi(y)) . K(x, y).
    On the disk the image part of K is not antisymmetric and only this form is
    symmetric and consistent with the point-vortex system.  Exactly 0 within
    ``DIAGONAL_CUTOFF`` of the diagonal.
    """
    domain = phi.domain
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    near = domain.separation(x, y) < DIAGONAL_CUTOFF
    # displace coincident pairs to a harmless point; their value is overwritten
    safe_y = np.where(near[..., None], x + 0.5 * _probe_shift(domain, x), y)
    k_xy = kernel_unchecked(domain, x, safe_y)
    if isinstance(domain, Torus):
        out = 0.5 * np.sum((phi.grad(x) - phi.grad(safe_y)) * k_xy, axis=-1)
    else:
        k_yx = kernel_unchecked(domain, safe_y, x)
        out = 0.5 * (np.sum(phi.grad(x) * k_xy, axis=-1) + np.sum(phi.grad(safe_y) * k_yx, axis=-1))
    return np.where(near, 0.0, out)


def h_kernel_printed(phi: TestFunction, x, y):
    """1/2 (grad phi(x) - grad phi(y)) . K(x, y) on every domain (not symmetric on the disk)."""
    domain = phi.domain
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    near = domain.separation(x, y) < DIAGONAL_CUTOFF
    safe_y = np.where(near[..., None], x + 0.5 * _probe_shift(domain, x), y)
    out = 0.5 * np.sum((phi.grad(x) - phi.grad(safe_y)) * kernel_unchecked(domain, x, safe_y), axis=-1)
    return np.where(near, 0.0, out)


def _probe_shift(domain, x):
    # a point well away from x and still inside the domain
    if isinstance(domain, Torus):
        return np.ones_like(x)
    return -np.sign(x) * 0.5 - (x == 0) * 0.5


@dataclass(frozen=True)
class HPhiKernel:
    phi: TestFunction
    tag = "h_phi"

    @property
    def domain(self):
        return self.phi.domain

    def __call__(self, x, y):
        return h_kernel(self.phi, x, y)

    def diagonal(self, x):
        return np.zeros(np.asarray(x).shape[:-1])


@dataclass(frozen=True)
class ExplicitKernel:
    """User kernel; symmetrised on evaluation, diagonal given by ``func(x, x)``."""

    func: Callable
    domain: Domain = field(default_factory=Torus)
    tag = "explicit"

    def __call__(self, x, y):
        return 0.5 * (self.func(x, y) + self.func(y, x))

    def diagonal(self, x):
        return self.func(x, x)


@dataclass(frozen=True, eq=False)
class FiniteRankKernel:
    """h(x, y) = sum_jk A_jk e_j(x) e_k(y) over the leading functions of a basis."""

    coeffs: np.ndarray
    basis: object  # spectral.FourierBasis; typed loosely to avoid an import cycle
    tag = "finite_rank"

    def __post_init__(self):
        A = np.asarray(self.coeffs, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
            raise NonSymmetricKernel("finite-rank coefficient matrix must be square and symmetric")
        object.__setattr__(self, "coeffs", 0.5 * (A + A.T))

    @property
    def domain(self):
        return self.basis.domain

    @property
    def rank(self):
        return self.coeffs.shape[0]

    def __call__(self, x, y):
        ex = self.basis.evaluate(x)[..., : self.rank]
        ey = self.basis.evaluate(y)[..., : self.rank]
        return np.einsum("...j,jk,...k->...", ex, self.coeffs, ey)

    def diagonal(self, x):
        return self(x, x)


Kernel2 = HPhiKernel | ExplicitKernel | FiniteRankKernel


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def quadrature(domain: Domain, order: int):
    """Nodes ``(n, 2)`` and weights ``(n,)`` integrating smooth functions on D."""
    if order < 2:
        raise ValueError("quadrature order must be >= 2")
    return _quadrature_cached(domain, int(order))


@lru_cache(maxsize=64)
def _quadrature_cached(domain, order):
    if isinstance(domain, Torus):
        t = np.arange(order) * domain.L / order
        X, Y = np.meshgrid(t, t, indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)
        weights = np.full(order * order, (domain.L / order) ** 2)
    else:
        xg, wg = np.polynomial.legendre.leggauss(order)
        r = 0.5 * (xg + 1.0)
        wr = 0.5 * wg * r
        n_th = 2 * order
        th = np.arange(n_th) * TWO_PI / n_th
        R, T = np.meshgrid(r, th, indexing="ij")
        nodes = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=-1)
        weights = (wr[:, None] * np.full(n_th, TWO_PI / n_th)).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@lru_cache(maxsize=32)
def _polar_rule(n_r, n_th):
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    s = 0.5 * (xg + 1.0)
    ws = 0.5 * wg
    th = np.arange(n_th) * TWO_PI / n_th
    dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    return s, ws, dirs


def singular_nodes(domain: Domain, y, order: int = 64):
    """Quadrature nodes/weights for integrals in x with a 1/|x-y| singularity at y.

    A smooth partition of unity around ``y`` sends the singular part to a
    polar rule centred on ``y`` (where the Jacobian absorbs the singularity)
    and leaves a smooth remainder to the ordinary tensor rule.
    """
    y = np.asarray(y, dtype=float)
    s, ws, dirs = _polar_rule(order // 2, order)
    if isinstance(domain, Torus):
        rho = 0.45 * domain.L
        z = domain.reduce(quadrature(domain, order)[0])
        w_out = quadrature(domain, order)[1] * (1.0 - _cutoff(np.linalg.norm(z, axis=-1), rho))
        x_out = y + z
    else:
        dist = 1.0 - math.hypot(*y)
        if dist <= 0:
            raise OutsideDomain("singular point must lie inside the disk")
        rho = min(0.5, 0.9 * dist)
        nodes, weights = quadrature(domain, order)
        w_out = weights * (1.0 - _cutoff(np.linalg.norm(nodes - y, axis=-1), rho))
        x_out = nodes
    r = rho * s
    w_r = rho * ws * r * _cutoff(r, rho) * (TWO_PI / len(dirs))
    x_in = y + (r[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    w_in = np.repeat(w_r, len(dirs))
    keep = w_out != 0.0
    return np.concatenate([x_in, x_out[keep]]), np.concatenate([w_in, w_out[keep]])


def _cutoff(r, rho):
    return 1.0 - _smooth_step(r / rho)


def integrate_singular(domain: Domain, func, y, order: int = 64, tol: float | None = None):
    """Integral of ``func(x)`` over D for an integrand singular at ``y``.

    With ``tol`` the order is doubled until two successive values agree.
    """
    x, w = singular_nodes(domain, y, order)
    val = float(np.dot(func(x), w))
    if tol is None:
        return val
    for _ in range(4):
        order *= 2
        x, w = singular_nodes(domain, y, order)
        new = float(np.dot(func(x), w))
        if abs(new - val) < tol:
            return new
        val = new
    return val
