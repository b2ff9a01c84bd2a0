import math

import numpy as np
import pytest

from crmeuler import rng as rngmod
from crmeuler.crm import CRMTriple, JumpLaw, sample_crm
from crmeuler.errors import CoincidentPoints, CollapseDetected, NearCollapse, NotPureAtomic, OutOfRange
from crmeuler.geometry import DiskBump, Torus, TorusMode, UnitDisk, biot_savart
from crmeuler.vortex import (
    VortexState,
    flow_jacobian_det,
    flow_pushforward,
    hamiltonian,
    integrate,
    linear_impulse,
    rhs,
    weak_residual,
)

TORUS = Torus()
DISK = UnitDisk()


def test_single_vortex_is_still():
    st = VortexState([[1.0, 2.0]], [1.3], TORUS)
    assert np.all(rhs(st) == 0.0)
    assert hamiltonian(st) == 0.0


def test_equal_pair_on_torus():
    st = VortexState([[2.0, 3.0], [2.5, 3.0]], [1.0, 1.0], TORUS)
    u = rhs(st)
    assert np.allclose(u[0], -u[1], atol=1e-14)
    assert abs(u[0, 0]) < 1e-14 and abs(u[0, 1]) > 0


def test_mirror_pair_on_disk():
    x1, x2 = np.array([0.3, 0.2]), np.array([0.3, -0.2])
    st = VortexState([x1, x2], [1.0, -1.0], DISK)
    u = rhs(st)
    assert u[0, 0] == pytest.approx(u[1, 0], abs=1e-14)
    assert u[0, 1] == pytest.approx(-u[1, 1], abs=1e-14)
    assert np.allclose(u[0], -1.0 * biot_savart(DISK, x1, x2), atol=1e-14)
    # direct image-charge formula: G = -(log|x - y| - log|x - y*| - log|y|) / 2 pi, K = grad_perp G
    def K(x, y):
        ys = y / np.dot(y, y)
        d1, d2 = x - y, x - ys
        g = -(d1 / np.dot(d1, d1) - d2 / np.dot(d2, d2)) / (2 * math.pi)
        return np.array([-g[1], g[0]])
    assert np.allclose(u[1], K(x2, x1), atol=1e-14)


def test_near_collapse_and_coincident():
    with pytest.raises(NearCollapse):
        rhs(VortexState([[1.0, 1.0], [1.0, 1.0 + 1e-9]], [1.0, 1.0], TORUS))
    with pytest.raises(CoincidentPoints):
        hamiltonian(VortexState([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], TORUS))


@pytest.mark.parametrize("domain", [TORUS, DISK], ids=["torus", "disk"])
def test_conservation_and_reversal(domain):
    pos = np.array([[0.3, 0.1], [-0.25, 0.3], [0.05, -0.4], [-0.3, -0.2]])
    if domain is TORUS:
        pos = (pos + 0.5) * 2 * np.pi
    st = VortexState(pos, [1.2, 1.7, 1.4, 1.1], domain)
    tol = 1e-10
    tr = integrate(st, 2.0, tol)
    assert tr.diagnostics()["energy_relative_drift"] < 1e-6
    back = integrate(tr.final, 0.0, tol)
    assert np.max(np.abs(back.positions[-1] - st.positions)) < 100 * tol
    if domain is TORUS:
        assert np.allclose(linear_impulse(tr.final), linear_impulse(st), atol=1e-8)


def test_collapse_detected():
    eps = 1e-3
    base = np.array([3.0, 3.0])
    pos = base + eps * np.array([[-1.0, 0.0], [1.0, 0.0], [1.0, math.sqrt(2.0)]])
    st = VortexState(pos, [2.0, 2.0, -1.0], TORUS)
    with pytest.raises(CollapseDetected) as e:
        integrate(st, -1000 * eps * eps, 1e-10)
    assert e.value.separation < 1e-8


def test_jacobian_determinant_is_one():
    r = np.random.default_rng(5)
    st = VortexState(TORUS.sample_uniform(r, 3), 1.0 + r.random(3), TORUS)
    assert abs(flow_jacobian_det(st, 1.0) - 1.0) < 1e-4


def test_pushforward_identity_and_errors():
    tr = CRMTriple(0.0, 0.0, JumpLaw.two_band(0.1), TORUS)
    s = sample_crm(tr, None, rngmod.stream(3))
    assert flow_pushforward(s, 0.0) is s
    empty = s.replace(positions=np.zeros((0, 2)), marks=np.zeros(0))
    assert flow_pushforward(empty, 1.0).n_atoms == 0
    moved = flow_pushforward(s, 0.5)
    assert np.all(TORUS.contains(moved.positions))
    g = sample_crm(CRMTriple(0.0, 1.0, JumpLaw.two_band(0.1), TORUS), None, rngmod.stream(3))
    with pytest.raises(NotPureAtomic):
        flow_pushforward(g, 1.0)


@pytest.mark.parametrize("phi", [TorusMode((1, 0)), TorusMode((2, 1), "sin")], ids=["cos10", "sin21"])
def test_weak_residual_torus(phi):
    r = np.random.default_rng(2)
    st = VortexState(TORUS.sample_uniform(r, 4), 1.0 + r.random(4), TORUS)
    tr = integrate(st, 2.0, 1e-11)
    assert weak_residual(tr, phi, 0.3, 0.3) == 0.0
    assert weak_residual(tr, phi, 0.0, 2.0) < 1e-6
    with pytest.raises(OutOfRange):
        weak_residual(tr, phi, 0.0, 3.0)


def test_weak_residual_disk():
    st = VortexState([[0.2, 0.1], [-0.3, 0.2], [0.0, -0.35]], [1.0, 1.4, 0.7], DISK)
    tr = integrate(st, 2.0, 1e-11)
    assert weak_residual(tr, DiskBump((0.0, 0.0), 0.6), 0.0, 2.0) < 1e-6
