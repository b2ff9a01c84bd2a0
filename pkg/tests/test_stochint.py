import math

import numpy as np
import pytest

from crmeuler import rng as rngmod
from crmeuler.crm import CRMSample, CRMTriple, EmptyBasis, JumpLaw, sample_batch, sample_crm
from crmeuler.errors import DomainMismatch, NonSymmetricKernel, RankTooHigh
from crmeuler.geometry import DiskBump, FiniteRankKernel, HPhiKernel, Torus, TorusMode, UnitDisk
from crmeuler.spectral import FourierBasis
from crmeuler.stochint import (
    CONVENTION,
    check_finite_rank,
    grid_pairing_oracle,
    i1,
    i1_batch,
    i2,
    i2_finite_rank_batch,
    i2_hphi_batch,
    moment_oracle,
    pairing_tensor,
    relation_residual,
)

TORUS = Torus()
NU = JumpLaw.two_band(1.0, 1.0, 2.0)
FB = FourierBasis(TORUS, 4)


def atoms(positions, marks, domain=TORUS):
    triple = CRMTriple(0.0, 0.0, NU, domain)
    return CRMSample(triple, EmptyBasis(domain), np.zeros(0), np.asarray(positions, float), np.asarray(marks, float))


def rank_one(fb=FB, key=((1, 0), "cos")):
    i = fb.index[key]
    A = np.zeros((i + 1, i + 1))
    A[i, i] = 1.0
    return FiniteRankKernel(A, fb)


def test_convention_tag():
    assert CONVENTION == "ordered-offdiag-sym"


def test_null_sample_integrals():
    s = atoms(np.zeros((0, 2)), [])
    assert i1(s, TorusMode((1, 0))).total == 0.0
    assert i2(s, rank_one()).total == 0.0


def test_single_atom_i1():
    x0 = np.array([[0.7, 1.9]])
    f = lambda x: np.full(len(x), 0.5)  # noqa: E731
    s = atoms(x0, [2.0])
    assert i1(s, f).poisson1 == pytest.approx(1.0)
    assert i2(s, rank_one()).total == 0.0


def test_two_atoms_i2():
    x = np.array([[0.3, 1.0], [2.5, 4.0]])
    g = np.array([1.5, -0.8])
    h = rank_one()
    phi = TorusMode((1, 0))
    expected = 2 * g[0] * g[1] * phi.eval(x[0]) * phi.eval(x[1])
    assert i2(atoms(x, g), h).total == pytest.approx(expected, abs=1e-12)


def test_pairing_tensor_includes_diagonal():
    x = np.array([[0.3, 1.0], [2.5, 4.0], [5.0, 0.2]])
    g = np.array([1.5, -0.8, 2.0])
    h = rank_one()
    s = atoms(x, g)
    diag = sum(gi * gi * float(h.diagonal(xi)) for gi, xi in zip(g, x))
    assert pairing_tensor(s, h) == pytest.approx(i2(s, h).total + diag, abs=1e-12)


def test_domain_mismatch_and_kernel_checks():
    s = atoms(np.zeros((0, 2)), [])
    with pytest.raises(DomainMismatch):
        i1(s, DiskBump((0.0, 0.0), 0.5))
    with pytest.raises(NonSymmetricKernel):
        i2(s, lambda x, y: x[..., 0] - y[..., 1])
    with pytest.raises(NonSymmetricKernel):
        FiniteRankKernel(np.array([[0.0, 1.0], [0.0, 0.0]]), FourierBasis(TORUS, 1))
    with pytest.raises(RankTooHigh):
        check_finite_rank(FiniteRankKernel(np.eye(FB.size), FB), 4)


@pytest.mark.parametrize("triple", [
    CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS),
    CRMTriple(0.0, 0.0, NU, TORUS),
    CRMTriple(0.5, 0.3, NU, TORUS),
], ids=str)
def test_relation_holds_per_sample(triple):
    r = rngmod.stream(9)
    hs = [rank_one(), HPhiKernel(TorusMode((1, 1)))]
    for _ in range(5):
        s = sample_crm(triple, FB, r)
        for h in hs:
            assert relation_residual(s, h) < 1e-8


def test_batch_matches_single_sample():
    triple = CRMTriple(0.5, 0.3, NU, TORUS)
    b = sample_batch(triple, FB, rngmod.stream(11), 6)
    f = TorusMode((1, 1), "sin")
    h = rank_one()
    phi = TorusMode((1, 0))
    I1 = i1_batch(b, f)
    I2 = i2_finite_rank_batch(b, h)
    IH = i2_hphi_batch(b, [phi])
    for k in range(6):
        s = b.sample(k)
        assert I1[k].sum() == pytest.approx(i1(s, f).total, abs=1e-10)
        assert I2[k].sum() == pytest.approx(i2(s, h).total, abs=1e-10)
        assert IH[k, 0].sum() == pytest.approx(i2(s, HPhiKernel(phi), "exact").total, abs=1e-8)


def test_gaussian_rank_one_is_xi_squared_minus_one():
    triple = CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS)
    s = sample_crm(triple, FB, rngmod.stream(12))
    xi = s.gaussian_coeffs[FB.index[((1, 0), "cos")]]
    assert i2(s, rank_one()).total == pytest.approx(xi * xi - 1.0, abs=1e-12)


def test_grid_oracle_converges():
    triple = CRMTriple(0.0, 0.0, NU, TORUS)
    s = sample_crm(triple, None, rngmod.stream(13))
    h = rank_one()
    exact = pairing_tensor(s, h)
    e8 = abs(grid_pairing_oracle(s, h, 8) - exact)
    e32 = abs(grid_pairing_oracle(s, h, 32) - exact)
    assert e32 < e8


def test_moment_oracle_values():
    f = TorusMode((1, 0))
    tr = CRMTriple(0.0, 1.0, NU, TORUS)
    assert moment_oracle(tr, "means", f=f) == 0.0
    assert moment_oracle(tr, "I1W_var", f=f) == pytest.approx(1.0)
    assert moment_oracle(tr, "I1P_var", f=f) == pytest.approx(7.0 / 3.0)
    assert moment_oracle(tr, "I2W_var", h=rank_one()) == pytest.approx(2.0)


@pytest.mark.parametrize("part,col,target", [("W", 1, "I1W_var"), ("P", 2, "I1P_var")])
def test_i1_variance(part, col, target):
    triple = CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS) if part == "W" else CRMTriple(0.0, 0.0, NU, TORUS)
    f = TorusMode((1, 0))
    v = np.concatenate([i1_batch(sample_batch(triple, FB, rngmod.stream(14, s), n), f)[:, col]
                        for s, n in rngmod.blocks(100_000)])
    d2 = (v - v.mean()) ** 2
    se = d2.std(ddof=1) / math.sqrt(len(v))
    assert abs(d2.mean() - moment_oracle(triple, target, f=f)) < 4 * se


def test_i2_gaussian_variance():
    triple = CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS)
    v = np.concatenate([i2_finite_rank_batch(sample_batch(triple, FB, rngmod.stream(15, s), n), rank_one()).sum(-1)
                        for s, n in rngmod.blocks(100_000)])
    d2 = (v - v.mean()) ** 2
    se = d2.std(ddof=1) / math.sqrt(len(v))
    assert abs(d2.mean() - 2.0) < 4 * se


def test_mixed_part_variance():
    triple = CRMTriple(0.0, 0.5, NU, TORUS)
    h = rank_one()
    v = np.concatenate([i2_finite_rank_batch(sample_batch(triple, FB, rngmod.stream(16, s), n), h)[:, 3]
                        for s, n in rngmod.blocks(40_000)])
    d2 = (v - v.mean()) ** 2
    se = d2.std(ddof=1) / math.sqrt(len(v))
    assert abs(d2.mean() - moment_oracle(triple, "mixed_var", h=h)) < 4 * se


def test_disk_atoms_i2_hphi():
    disk = UnitDisk()
    x = np.array([[0.1, 0.2], [-0.3, 0.1]])
    g = np.array([1.0, 2.0])
    phi = DiskBump((0.0, 0.0), 0.6)
    s = atoms(x, g, disk)
    from crmeuler.geometry import h_kernel

    assert i2(s, HPhiKernel(phi)).poisson2 == pytest.approx(2 * g[0] * g[1] * h_kernel(phi, x[0], x[1]), abs=1e-12)


def test_hphi_compensator_terms_vanish_on_torus():
    from crmeuler.stochint import compensator_terms

    s = sample_crm(CRMTriple(0.5, 0.0, JumpLaw.uniform_signed(1.0, 2.0), TORUS), None, rngmod.stream(17))
    terms = compensator_terms(s, HPhiKernel(TorusMode((2, 1), "sin")))
    assert abs(terms["linear"]) < 1e-8 and abs(terms["constant"]) < 1e-8


def test_indicator_kernel_gives_product():
    # the ordered off-diagonal convention gives M(A)M(B) for sym(1_A x 1_B), as the pairing relation
    # requires; the factor two of the defining formula appears for 1_A x 1_B + 1_B x 1_A
    from crmeuler.crm import Rect, measure_of

    A, B = Rect(0.0, 0.0, 2.0, 1.5), Rect(3.0, 2.0, 5.0, 4.0)

    def h(x, y):
        ia = lambda z: A.contains(z).astype(float)  # noqa: E731
        ib = lambda z: B.contains(z).astype(float)  # noqa: E731
        return 0.5 * (ia(x) * ib(y) + ib(x) * ia(y))

    s = sample_crm(CRMTriple(0.0, 0.0, NU, TORUS), None, rngmod.stream(18))
    prod = measure_of(s, A) * measure_of(s, B)
    assert i2(s, h).total == pytest.approx(prod, abs=1e-10)
    assert pairing_tensor(s, h) == pytest.approx(prod, abs=1e-10)
    assert i2(s, lambda x, y: 2 * h(x, y)).total == pytest.approx(2 * prod, abs=1e-10)
