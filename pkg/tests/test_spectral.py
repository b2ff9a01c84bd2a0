import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crmeuler.geometry import Torus, TorusMode, quadrature
from crmeuler.spectral import (
    FourierBasis,
    basis,
    h_phi_expansion,
    lemma41_check,
    project,
    resonant,
    row_integral,
    triad_closed_form,
    triad_quadrature,
    triad_table,
)

TORUS = Torus()


@pytest.fixture(scope="module")
def table2():
    return triad_table(TORUS, 2)


def test_basis_counting_and_eigenvalue():
    # four modes under the Euclidean cut-off; the sup-norm cut-off adds k = (1, 1), (1, -1)
    b1 = basis(TORUS, 1, norm="l2")
    assert len(b1) == 4
    assert len(basis(TORUS, 1)) == 8
    assert {(m.k, m.phase) for m in b1} == {((1, 0), "cos"), ((1, 0), "sin"), ((0, 1), "cos"), ((0, 1), "sin")}
    assert TorusMode((2, 1)).eigenvalue == pytest.approx(5.0)
    assert len(basis(TORUS, 4)) == 80


def test_basis_orthonormal():
    modes = basis(TORUS, 3)
    nodes, w = quadrature(TORUS, 64)
    E = np.stack([m.eval(nodes) for m in modes], axis=-1)
    assert np.max(np.abs(E.T @ (E * w[:, None]) - np.eye(len(modes)))) < 1e-12


def test_project_basis_element_and_zero():
    modes = basis(TORUS, 2)
    p = project(modes[2], len(modes))
    e = np.zeros(len(modes))
    e[2] = 1.0
    assert np.allclose(p.coeffs, e, atol=1e-12)
    assert p.tail_norm < 1e-6
    z = project(lambda x: np.zeros(len(x)), 6, TORUS)
    assert np.all(z.coeffs == 0)


def test_triad_coincident_and_swap():
    h, k, l = TorusMode((1, 0)), TorusMode((1, 1), "sin"), TorusMode((2, 1), "sin")
    assert abs(triad_quadrature(h, h, l)) < 1e-8
    assert triad_quadrature(h, k, l) == pytest.approx(triad_quadrature(k, h, l), abs=1e-12)


def test_closed_form_zero_cases():
    # equal eigenvalues
    assert triad_closed_form(TorusMode((1, 0)), TorusMode((0, 1)), TorusMode((1, 1))) == 0.0
    # non-resonant triple
    h, k, l = TorusMode((1, 0)), TorusMode((2, 0)), TorusMode((1, 2))
    assert not resonant(h, k, l)
    assert triad_closed_form(h, k, l) == 0.0


def test_closed_form_matches_quadrature_on_resonant_triple():
    h, k, l = TorusMode((1, 0), "cos"), TorusMode((1, 1), "sin"), TorusMode((0, 1), "sin")
    assert resonant(h, k, l)
    c = triad_closed_form(h, k, l)
    assert c != 0.0
    assert c == pytest.approx(triad_quadrature(h, k, l), abs=1e-8)


def test_table_invariants(table2):
    C = table2.values
    n = len(table2.modes)
    for a, b in itertools.product(range(n), repeat=2):
        assert abs(C[a, a, b]) < 1e-12 and abs(C[a, b, a]) < 1e-12 and abs(C[b, a, a]) < 1e-12
    assert np.max(np.abs(C - C.transpose(1, 0, 2))) < 1e-12
    s1, s2 = table2.cyclic_sums()
    assert np.max(np.abs(s1)) < 1e-10 and np.max(np.abs(s2)) < 1e-10


def test_symmetric_tensor_contraction_vanishes(table2, rng):
    n = len(table2.modes)
    s = rng.standard_normal((n, n, n))
    s = sum(np.transpose(s, p) for p in itertools.permutations(range(3))) / 6
    assert abs(np.einsum("hkl,hkl->", s, table2.values)) < 1e-9


def test_closed_form_table_matches_quadrature_table(table2):
    q = triad_table(TORUS, 2, "quadrature", 64)
    assert np.max(np.abs(q.values - table2.values)) < 1e-8


def test_lemma41_examples(rng):
    k = TorusMode((1, 0))
    assert abs(lemma41_check(k, np.zeros(2))) < 1e-8
    for m in basis(TORUS, 2):
        for y in TORUS.sample_uniform(rng, 3):
            assert abs(lemma41_check(m, y)) < 1e-8
    two = TorusMode((2, 1), "sin", amplitude=2.0)
    assert abs(lemma41_check(two, np.array([0.3, 1.7]))) < 4e-8


def test_row_integral_torus(rng):
    for m in basis(TORUS, 2):
        assert abs(row_integral(m, TORUS.sample_uniform(rng, 1)[0])) < 1e-8


def test_h_phi_expansion_reproduces_kernel(rng):
    # H_phi(x, y) = sum_ij G_ij e_i(x) e_j(y) + row terms; check at random points away from the diagonal
    from crmeuler.geometry import h_kernel

    fb = FourierBasis(TORUS, 4)
    phi = TorusMode((1, 1))
    ex = h_phi_expansion(fb, phi)
    x = TORUS.sample_uniform(rng, 4)
    y = TORUS.sample_uniform(rng, 4)
    direct = h_kernel(phi, x, y)
    assert np.all(np.isfinite(direct))
    assert ex.gram.shape == (fb.size, fb.size)
    assert np.allclose(ex.gram, ex.gram.T, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3),
       st.sampled_from(["cos", "sin"]), st.sampled_from(["cos", "sin"]), st.sampled_from(["cos", "sin"]))
def test_cyclic_identity_random_triples(a, b, c, d, p1, p2, p3):
    ks = [(a, b), (c, d), (a + c, b + d)]
    if any(k == (0, 0) for k in ks):
        return
    h, k, l = (TorusMode(ks[0], p1), TorusMode(ks[1], p2), TorusMode(ks[2], p3))
    s = triad_closed_form(h, k, l) + triad_closed_form(l, h, k) + triad_closed_form(k, l, h)
    assert abs(s) < 1e-10
    assert math.isfinite(triad_closed_form(h, k, l))
