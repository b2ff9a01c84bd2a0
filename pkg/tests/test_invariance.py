import numpy as np
import pytest

from crmeuler import rng as rngmod
from crmeuler.crm import CRMSample, CRMTriple, EmptyBasis, JumpLaw, sample_crm
from crmeuler.errors import DomainMismatch, NotPureAtomic
from crmeuler.geometry import DiskBump, Torus, TorusMode
from crmeuler.invariance import (
    CylinderObservable,
    ExpTrig,
    ProductCos,
    a_reduction_gap,
    cancellation_check,
    eval_observable,
    flow_invariance_test,
    generator_apply,
    mc_generator_mean,
    mc_generator_means,
    skew_symmetry_test,
    z_score_ks,
)
from crmeuler.spectral import FourierBasis

TORUS = Torus()
NU = JumpLaw.two_band(1.0, 1.0, 2.0)
FB = FourierBasis(TORUS, 4)
GAUSS = CRMTriple(0.0, 1.0, JumpLaw.zero(), TORUS)
FULL = CRMTriple(0.5, 0.3, NU, TORUS)

F = CylinderObservable((TorusMode((1, 0)), TorusMode((0, 1), "sin")), ExpTrig((0.6, -0.5)))
G = CylinderObservable((TorusMode((1, 1), "sin"),), ExpTrig((0.8,)))


def test_exptrig_zero_frequency_is_one():
    obs = CylinderObservable((TorusMode((1, 0)),), ExpTrig((0.0,)))
    s = sample_crm(FULL, FB, rngmod.stream(1))
    assert eval_observable(obs, s) == 1.0


def test_null_sample_observable_is_one():
    null = CRMTriple(0.0, 0.0, JumpLaw.zero(), TORUS)
    s = sample_crm(null, None, rngmod.stream(2))
    assert eval_observable(F, s) == 1.0


def test_single_atom_generator_vanishes():
    tr = CRMTriple(0.0, 0.0, NU, TORUS)
    s = CRMSample(tr, EmptyBasis(TORUS), np.zeros(0), np.array([[1.0, 2.0]]), np.array([1.5]))
    assert generator_apply(F, s) == 0.0


def test_domain_mismatch():
    obs = CylinderObservable((DiskBump((0.0, 0.0), 0.5),), ExpTrig((1.0,)))
    s = sample_crm(FULL, FB, rngmod.stream(3))
    with pytest.raises(DomainMismatch):
        eval_observable(obs, s)


def test_outer_function_gradients():
    v = np.array([[0.3, -0.7]])
    for f in (ExpTrig((0.6, -0.5)), ProductCos((0.8, 0.6))):
        h = 1e-6
        num = np.array([(f(v + [[h, 0]]) - f(v - [[h, 0]])) / (2 * h), (f(v + [[0, h]]) - f(v - [[0, h]])) / (2 * h)]).T
        assert np.allclose(f.grad(v), num, atol=1e-8)


@pytest.mark.parametrize("triple", [GAUSS, CRMTriple(0.0, 0.0, NU, TORUS), FULL], ids=str)
def test_generator_mean_zero(triple):
    reps = mc_generator_means(triple, [F, G], 20_000, seed=4, basis=FB)
    for r in reps:
        assert r.passed, r


def test_generator_rerun_records_first_run():
    rep = mc_generator_mean(FULL, F, 4_000, seed=5, basis=FB, z_max=0.0)
    assert rep.reruns == 1 and "first_run" in rep.extra


def test_reproducible_across_workers():
    a = mc_generator_means(FULL, [F], 6_000, seed=6, basis=FB, workers=1)[0]
    b = mc_generator_means(FULL, [F], 6_000, seed=6, basis=FB, workers=2)[0]
    assert a.to_json() == b.to_json()


def test_skew_symmetry_distinct_exptrig():
    assert skew_symmetry_test(F, G, GAUSS, 100_000, seed=7, basis=FB).passed


def test_skew_with_constant():
    assert skew_symmetry_test(None, G, FULL, 20_000, seed=8, basis=FB).passed


def test_flow_invariance_t_zero_and_errors():
    tr = CRMTriple(0.0, 0.0, JumpLaw.two_band(0.05), TORUS)
    rep = flow_invariance_test(tr, F, 0.0, 200, seed=9)
    assert rep.distance == 0.0 and rep.passed
    with pytest.raises(NotPureAtomic):
        flow_invariance_test(GAUSS, F, 1.0, 10)


def test_flow_invariance_sample_cap():
    tr = CRMTriple(0.0, 0.0, JumpLaw.two_band(0.05), TORUS)
    rep = flow_invariance_test(tr, F, 0.5, 100, seed=10, max_samples=5)
    assert rep.N_used + rep.collapses == 5 and not rep.passed
    assert "cap" in rep.note


def test_cancellations():
    w3, wm = cancellation_check(FULL, 20, 2, seed=11)
    assert w3 < 1e-9 and wm < 1e-9


def test_a_reduction_torus():
    s = sample_crm(FULL, FB, rngmod.stream(12))
    assert a_reduction_gap(s, TorusMode((1, 0))) < 1e-10


def test_ks_of_normal_scores():
    z = np.random.default_rng(0).standard_normal(60)
    assert z_score_ks(z) > 0.01
