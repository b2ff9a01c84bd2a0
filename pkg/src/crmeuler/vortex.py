"""Point-vortex dynamics, flow pushforward and the weak-form residual.

Vortex i moves with ``sum_{j != i} gamma_j K(x_i, x_j)``.  On the disk the
boundary self-interaction ``gamma_i grad_perp(1/2 g(x, x))`` is off by default
and switched on by ``self_image=True``.  Torus positions are kept unwrapped
and reduced only inside kernel evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as spi

from .crm import CRMSample
from .errors import CoincidentPoints, CollapseDetected, NearCollapse, NotPureAtomic, OutOfRange, OutsideDomain
from .geometry import Torus, UnitDisk, h_kernel, kernel_unchecked

COLLAPSE_THRESHOLD = 1e-8


@dataclass(frozen=True, eq=False)
class VortexState:
    positions: np.ndarray
    intensities: np.ndarray
    domain: object = field(default_factory=Torus)
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        gam = np.array(self.intensities, dtype=float).reshape(-1)
        if len(pos) != len(gam):
            raise ValueError("one intensity per vortex")
        if np.any(gam == 0):
            raise ValueError("intensities must be non-zero")
        if isinstance(self.domain, UnitDisk) and np.any(np.sum(pos * pos, axis=-1) >= 1.0):
            raise OutsideDomain("vortex outside the open unit disk")
        pos.setflags(write=False)
        gam.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", gam)

    @property
    def n(self):
        return len(self.intensities)

    def with_positions(self, pos, time):
        return VortexState(pos, self.intensities, self.domain, time)


def min_separation(domain, pos):
    """Smallest pairwise distance and the pair attaining it."""
    pos = np.asarray(pos).reshape(-1, 2)
    if len(pos) < 2:
        return math.inf, (-1, -1)
    i, j = np.triu_indices(len(pos), 1)
    d = domain.separation(pos[i], pos[j])
    k = int(np.argmin(d))
    return float(d[k]), (int(i[k]), int(j[k]))


def velocities(domain, pos, gam, self_image=False, threshold=COLLAPSE_THRESHOLD):
    pos = np.asarray(pos).reshape(-1, 2)
    n = len(pos)
    u = np.zeros((n, 2))
    if n >= 2:
        sep, pair = min_separation(domain, pos)
        if sep < threshold:
            raise NearCollapse(pair, sep)
        i, j = np.triu_indices(n, 1)
        K = kernel_unchecked(domain, pos[i], pos[j])
        # the torus kernel is antisymmetric; the disk image part is not
        K_back = -K if isinstance(domain, Torus) else kernel_unchecked(domain, pos[j], pos[i])
        np.add.at(u, i, gam[j, None] * K)
        np.add.at(u, j, gam[i, None] * K_back)
    if self_image and isinstance(domain, UnitDisk):
        u += gam[:, None] * domain.self_velocity(pos)
    return u


def rhs(state: VortexState, self_image: bool = False, threshold: float = COLLAPSE_THRESHOLD):
    """Velocity of every vortex; NearCollapse below the separation threshold."""
    return velocities(state.domain, state.positions, state.intensities, self_image, threshold)


def hamiltonian(state: VortexState, self_image: bool = False) -> float:
    """Interaction energy sum_{i<j} gamma_i gamma_j G(x_i, x_j)."""
    pos, gam, dom = state.positions, state.intensities, state.domain
    out = 0.0
    if state.n >= 2:
        i, j = np.triu_indices(state.n, 1)
        if np.min(dom.separation(pos[i], pos[j])) < 1e-14:
            raise CoincidentPoints("two vortices coincide")
        out = float(np.dot(gam[i] * gam[j], dom.green(pos[i], pos[j])))
    if self_image and isinstance(dom, UnitDisk):
        out += 0.5 * float(np.dot(gam * gam, dom.regular_part(pos, pos)))
    return out


def linear_impulse(state: VortexState):
    return state.intensities @ state.positions


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (n_times, n, 2)
    intensities: np.ndarray
    domain: object
    dense: object
    t0: float
    t1: float
    n_steps: int
    rejected_steps: int
    nfev: int
    min_separation: float
    self_image: bool = False

    def positions_at(self, t):
        lo, hi = min(self.t0, self.t1), max(self.t0, self.t1)
        t = np.asarray(t, dtype=float)
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise OutOfRange(f"time outside [{lo}, {hi}]")
        if self.dense is None:
            return np.broadcast_to(self.positions[0], t.shape + self.positions[0].shape).copy()
        y = self.dense(t)
        n = len(self.intensities)
        return np.moveaxis(y, 0, -1).reshape(t.shape + (n, 2))

    def state_at(self, t) -> VortexState:
        return VortexState(self.positions_at(float(t)), self.intensities, self.domain, float(t))

    @property
    def final(self) -> VortexState:
        return VortexState(self.positions[-1], self.intensities, self.domain, float(self.times[-1]))

    def diagnostics(self):
        h = [hamiltonian(VortexState(p, self.intensities, self.domain), self.self_image) for p in self.positions]
        h0 = h[0]
        drift = max(abs(v - h0) for v in h) / abs(h0) if h0 != 0 else max(abs(v) for v in h)
        return {
            "energy_relative_drift": drift,
            "min_separation": self.min_separation,
            "steps": self.n_steps,
            "rejected_steps": self.rejected_steps,
            "nfev": self.nfev,
        }


def integrate(
    state: VortexState,
    t_final: float,
    tol: float = 1e-10,
    t_eval=None,
    self_image: bool = False,
    threshold: float = COLLAPSE_THRESHOLD,
    method: str = "RK45",
) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration from ``state.time`` to ``t_final``.

    ``tol`` is used as both relative and absolute per-step tolerance.  The
    run stops with CollapseDetected when two vortices come closer than
    ``threshold``.
    """
    dom, gam, n = state.domain, state.intensities, state.n
    t0 = float(state.time)
    t_final = float(t_final)
    y0 = state.positions.ravel().copy()
    if n < 2 and not (self_image and isinstance(dom, UnitDisk)) or t_final == t0:
        times = np.array([t0, t_final]) if t_final != t0 else np.array([t0])
        pos = np.repeat(state.positions[None], len(times), axis=0)
        sep = min_separation(dom, state.positions)[0]
        return Trajectory(times, pos, gam, dom, None, t0, t_final, 0, 0, 0, sep, self_image)

    def f(t, y):
        try:
            return velocities(dom, y.reshape(n, 2), gam, self_image, threshold).ravel()
        except NearCollapse as e:
            raise CollapseDetected(t, e.pair, e.separation) from None

    def collapse(t, y):
        return min_separation(dom, y.reshape(n, 2))[0] - threshold

    collapse.terminal = True
    collapse.direction = -1

    sol = spi.solve_ivp(
        f, (t0, t_final), y0, method=method, rtol=tol, atol=tol,
        dense_output=True, events=collapse, t_eval=None,
    )
    if sol.status == 1 or (sol.t_events and len(sol.t_events[0])):
        te = float(sol.t_events[0][0])
        ye = sol.y_events[0][0].reshape(n, 2)
        sep, pair = min_separation(dom, ye)
        raise CollapseDetected(te, pair, sep)
    if sol.status != 0:
        raise RuntimeError(sol.message)
    seps = [min_separation(dom, y.reshape(n, 2))[0] for y in sol.y.T]
    accepted = len(sol.t) - 1
    stages = 6 if method == "RK45" else 12
    attempts = max((sol.nfev - 2) // stages, accepted)
    if t_eval is not None:
        times = np.asarray(t_eval, dtype=float)
        pos = np.moveaxis(sol.sol(times), 0, -1).reshape(len(times), n, 2)
    else:
        times = sol.t
        pos = sol.y.T.reshape(len(times), n, 2)
    return Trajectory(
        times, pos, gam, dom, sol.sol, t0, t_final, accepted, attempts - accepted,
        int(sol.nfev), float(min(seps)), self_image,
    )


def flow_pushforward(sample: CRMSample, t: float, tol: float = 1e-10, self_image: bool = False) -> CRMSample:
    """Transport the atoms of a pure-atom sample along the point-vortex flow."""
    if (sample.q > 0 and sample.m_W > 0) or sample.drift != 0:
        raise NotPureAtomic("flow pushforward needs q = 0 and zero drift")
    if t == 0 or sample.n_atoms < 2:
        return sample
    traj = integrate(VortexState(sample.positions, sample.marks, sample.domain), t, tol, self_image=self_image)
    pos = traj.positions[-1]
    if isinstance(sample.domain, Torus):
        pos = sample.domain.wrap(pos)
    return sample.replace(positions=pos)


def interaction_sum(domain, phi, pos, gam) -> float:
    """sum_{i != j} gamma_i gamma_j H_phi(x_i, x_j)."""
    n = len(gam)
    if n < 2:
        return 0.0
    i, j = np.triu_indices(n, 1)
    return 2.0 * float(np.dot(gam[i] * gam[j], h_kernel(phi, pos[i], pos[j])))


def weak_residual(traj: Trajectory, phi, s: float, t: float, tol: float = 1e-13) -> float:
    """|I1(phi)(t) - I1(phi)(s) - int_s^t I2(H_phi)(r) dr| along a trajectory."""
    lo, hi = min(traj.t0, traj.t1), max(traj.t0, traj.t1)
    for v in (s, t):
        if v < lo - 1e-12 or v > hi + 1e-12:
            raise OutOfRange(f"time {v} outside [{lo}, {hi}]")
    if s == t:
        return 0.0
    gam = traj.intensities
    ps, pt = traj.positions_at(s), traj.positions_at(t)
    lhs = float(np.dot(gam, phi.eval(pt) - phi.eval(ps)))
    if len(gam) < 2:
        return abs(lhs)

    def integrand(r):
        return interaction_sum(traj.domain, phi, traj.positions_at(r), gam)

    rhs_val, _ = spi.quad(integrand, s, t, epsabs=tol, epsrel=tol, limit=1000)
    return abs(lhs - rhs_val)


def flow_jacobian_det(state: VortexState, t: float, tol: float = 1e-12, h: float = 1e-5,
                      self_image: bool = False) -> float:
    """det of the flow-map Jacobian by fourth-order central differences."""
    y0 = state.positions.ravel()
    dim = len(y0)
    J = np.zeros((dim, dim))
    weights = ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))
    for c in range(dim):
        col = np.zeros(dim)
        for k, w in weights:
            y = y0.copy()
            y[c] += k * h
            s = state.with_positions(y.reshape(-1, 2), state.time)
            col += w * integrate(s, state.time + t, tol, self_image=self_image).positions[-1].ravel()
        J[:, c] = col / h
    return float(np.linalg.det(J))
