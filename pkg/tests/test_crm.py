import math

import numpy as np
import pytest
from scipy import integrate

from crmeuler import rng as rngmod
from crmeuler.crm import (
    CellBasis,
    CRMTriple,
    JumpLaw,
    Rect,
    cf_levy_khintchine,
    empirical_cf,
    hypothesis_tests,
    measure_of,
    sample_batch,
    sample_crm,
    set_covariance,
    grid_for_sets,
)
from crmeuler.errors import EmptyInput, InvalidTruncation, OverlappingSets
from crmeuler.geometry import Torus, TorusMode
from crmeuler.stochint import i1

TORUS = Torus()
H = TORUS.L / 8
NU = JumpLaw.two_band(1.0, 1.0, 2.0)


def test_jump_law_moments():
    assert NU.m1() == pytest.approx(0.0, abs=1e-15)
    assert NU.m2() == pytest.approx(7.0 / 3.0, rel=1e-12)
    assert NU.total_mass() == pytest.approx(1.0)
    assert NU.symmetric


def test_power_law_truncation():
    nu = JumpLaw.power_law(1.0, 0.5, 1.0)
    assert not nu.is_finite
    with pytest.raises(InvalidTruncation):
        sample_crm(CRMTriple(0.0, 0.0, nu, TORUS), None, rngmod.stream(0))
    s = sample_crm(CRMTriple(0.0, 0.0, nu, TORUS), None, rngmod.stream(0), eps=0.1)
    assert np.all(np.abs(s.marks) >= 0.1)


def test_null_triple_sample():
    s = sample_crm(CRMTriple(0.0, 0.0, JumpLaw.zero(), TORUS), None, rngmod.stream(1))
    assert s.n_atoms == 0 and len(s.gaussian_coeffs) == 0 and s.drift == 0.0
    assert i1(s, TorusMode((1, 0))).total == 0.0


def test_lebesgue_triple_gives_integral():
    s = sample_crm(CRMTriple(1.0, 0.0, JumpLaw.zero(), TORUS), None, rngmod.stream(2))
    f = lambda x: 1.0 + 0.5 * np.cos(x[:, 0])  # noqa: E731
    assert i1(s, f).total == pytest.approx(TORUS.area, rel=1e-10)


def test_poisson_atom_count():
    triple = CRMTriple(0.0, 0.0, JumpLaw.two_band(3.0), TORUS)
    b = sample_batch(triple, None, rngmod.stream(3), 10_000)
    mean = b.counts.mean()
    se = b.counts.std(ddof=1) / math.sqrt(len(b.counts))
    assert abs(mean - 3 * TORUS.area) < 4 * se


def test_sampling_is_reproducible():
    triple = CRMTriple(0.5, 0.3, NU, TORUS)
    a = sample_crm(triple, None, rngmod.stream(7, 3))
    b = sample_crm(triple, None, rngmod.stream(7, 3))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.gaussian_coeffs, b.gaussian_coeffs)


def test_cf_at_zero_and_gaussian():
    assert cf_levy_khintchine(CRMTriple(0.5, 0.3, NU, TORUS), 2.0, 0.0) == 1.0
    for t in (0.5, 1.3):
        assert cf_levy_khintchine(CRMTriple(0.0, 0.7, JumpLaw.zero(), TORUS), 1.5, t) == pytest.approx(
            math.exp(-t * t * 0.7 * 1.5 / 2))


def test_cf_two_band_matches_direct_quadrature():
    t = 1.0
    re = integrate.quad(lambda g: (math.cos(t * g) - 1) * 0.5, 1, 2)[0] * 2
    expected = math.exp(re)
    assert cf_levy_khintchine(CRMTriple(0.0, 0.0, NU, TORUS), 1.0, t) == pytest.approx(expected, abs=1e-12)


def test_empirical_cf_trivial():
    assert empirical_cf([0.0, 0.0], 1.0).value == 1.0
    assert empirical_cf([math.pi, -math.pi], 1.0).value == pytest.approx(-1.0)
    with pytest.raises(EmptyInput):
        empirical_cf([], 1.0)


def test_empirical_cf_gaussian_unit_set():
    triple = CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS)
    A = Rect(0.0, 0.0, 1.0, 1.0)
    N = 100_000
    grid = grid_for_sets(TORUS, [A])
    vals = np.concatenate([measure_of(sample_batch(triple, grid, rngmod.stream(4, s), n), A)
                           for s, n in rngmod.blocks(N)])
    assert abs(empirical_cf(vals, 2.0).value - math.exp(-2.0)) < 6 / math.sqrt(N)


def test_measure_additive_on_cells():
    triple = CRMTriple(0.5, 0.3, NU, TORUS)
    s = sample_crm(triple, CellBasis(TORUS, 8), rngmod.stream(5))
    A, B = Rect(0, 0, H, 2 * H), Rect(H, 0, 3 * H, 2 * H)
    U = Rect(0, 0, 3 * H, 2 * H)
    assert measure_of(s, A) + measure_of(s, B) == pytest.approx(measure_of(s, U), abs=1e-12)


def test_covariance_disjoint_and_same_set():
    triple = CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS)
    A, B = Rect(0, 0, 2 * H, 2 * H), Rect(4 * H, 4 * H, 6 * H, 6 * H)
    cov, se = set_covariance(triple, A, B, 20_000, seed=1, basis=CellBasis(TORUS, 8))
    assert abs(cov) <= 4 * se
    cov, se = set_covariance(triple, A, A, 20_000, seed=1, basis=CellBasis(TORUS, 8))
    assert abs(cov - A.measure) <= 4 * se


def test_hypothesis_tests_pass_and_reject_overlap():
    triple = CRMTriple(0.5, 0.3, NU, TORUS)
    A, B = Rect(0, 0, 2 * H, 2 * H), Rect(4 * H, 4 * H, 6 * H, 6 * H)
    r = hypothesis_tests(triple, A, B, 20_000, seed=3, basis=CellBasis(TORUS, 8))
    assert r.passed
    with pytest.raises(OverlappingSets):
        hypothesis_tests(triple, A, Rect(H, H, 3 * H, 3 * H), 20_000, basis=CellBasis(TORUS, 8))


def test_triple_json_roundtrip():
    t = CRMTriple(0.5, 0.3, NU, TORUS)
    assert CRMTriple.from_json(t.to_json()).to_json() == t.to_json()
    assert str(t).startswith("[0.5,0.3")


def test_grid_basis_exact_for_aligned_set():
    A = Rect(0.0, 0.0, 1.0, 1.0)
    g = grid_for_sets(TORUS, [A])
    assert np.allclose(g.set_coefficients(A), [1.0, 0.0, 0.0, 0.0])
    assert np.sum(g.integrals() ** 2) == pytest.approx(TORUS.area)
