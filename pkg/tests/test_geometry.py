import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crmeuler.errors import CoincidentPoints, OutsideDomain
from crmeuler.geometry import (
    DiskBump,
    Torus,
    TorusMode,
    UnitDisk,
    biot_savart,
    domain_from_json,
    green,
    h_kernel,
    h_kernel_printed,
    integrate_singular,
    quadrature,
    test_function_from_json as function_from_json,
)

TORUS = Torus()
DISK = UnitDisk()


def fourier_green(z, kmax=64):
    """Square-truncated lattice sum for the zero-mean torus Green function (L = 2 pi)."""
    k = np.arange(-kmax, kmax + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    k2 = K1**2 + K2**2
    mask = k2 > 0
    return float(np.sum(np.cos(K1[mask] * z[0] + K2[mask] * z[1]) / k2[mask]) / (2 * math.pi) ** 2)


def test_disk_green_vanishes_on_boundary():
    for th in np.linspace(0, 2 * np.pi, 7):
        y = np.array([math.cos(th), math.sin(th)])
        assert abs(green(DISK, (0.5, 0.0), y)) < 1e-14


def test_disk_green_symmetric(rng):
    x = DISK.sample_uniform(rng, 100)
    y = DISK.sample_uniform(rng, 100)
    assert np.max(np.abs(green(DISK, x, y) - green(DISK, y, x))) < 1e-12


def test_torus_green_matches_lattice_sum():
    z = np.array([np.pi, np.pi])
    g = green(TORUS, (0.0, 0.0), z)
    # the truncation error of the sum is O(1/kmax^2): 3e-6 at 64, 7.7e-7 at 128
    assert abs(g - fourier_green(z)) < 5e-6
    assert abs(g - fourier_green(z, 128)) < 1e-6


def test_torus_green_theta_matches_ewald(rng):
    ew = Torus(method="ewald")
    x = TORUS.sample_uniform(rng, 50)
    y = TORUS.sample_uniform(rng, 50)
    assert np.max(np.abs(green(TORUS, x, y) - green(ew, x, y))) < 1e-12
    assert np.max(np.abs(biot_savart(TORUS, x, y) - biot_savart(ew, x, y))) < 1e-11


def test_coincident_and_outside_raise():
    with pytest.raises(CoincidentPoints):
        green(TORUS, (1.0, 1.0), (1.0, 1.0))
    with pytest.raises(CoincidentPoints):
        biot_savart(DISK, (0.1, 0.1), (0.1, 0.1))
    with pytest.raises(OutsideDomain):
        green(DISK, (1.5, 0.0), (0.0, 0.0))


@pytest.mark.parametrize("domain", [TORUS, DISK], ids=["torus", "disk"])
def test_biot_savart_divergence_free(domain, rng):
    h = 1e-5
    pts = domain.sample_uniform(rng, 200) * (0.8 if domain is DISK else 1.0)
    x, y = pts[:100], pts[100:]
    far = domain.separation(x, y) > 0.3
    x, y = x[far], y[far]
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    div = (biot_savart(domain, x + ex, y)[:, 0] - biot_savart(domain, x - ex, y)[:, 0]
           + biot_savart(domain, x + ey, y)[:, 1] - biot_savart(domain, x - ey, y)[:, 1]) / (2 * h)
    assert np.max(np.abs(div)) < 1e-6


def test_biot_savart_is_perp_gradient_of_green():
    x, y, h = np.array([0.3, -0.2]), np.array([-0.1, 0.4]), 1e-6
    gx = (green(DISK, x + [h, 0], y) - green(DISK, x - [h, 0], y)) / (2 * h)
    gy = (green(DISK, x + [0, h], y) - green(DISK, x - [0, h], y)) / (2 * h)
    K = biot_savart(DISK, x, y)
    assert np.allclose(K, [-gy, gx], atol=1e-8)


def test_h_kernel_diagonal_is_zero():
    phi = TorusMode((1, 0))
    assert h_kernel(phi, (0.4, 1.1), (0.4, 1.1)) == 0.0


@pytest.mark.parametrize("phi", [TorusMode((1, 0)), TorusMode((2, 1), "sin"), DiskBump((0.2, 0.0), 0.5)],
                         ids=["cos10", "sin21", "bump"])
def test_h_kernel_symmetric(phi, rng):
    dom = phi.domain
    x = dom.sample_uniform(rng, 100)
    y = dom.sample_uniform(rng, 100)
    assert np.max(np.abs(h_kernel(phi, x, y) - h_kernel(phi, y, x))) < 1e-12


def test_h_kernel_torus_equals_difference_form(rng):
    phi = TorusMode((1, 2), "sin")
    x = TORUS.sample_uniform(rng, 50)
    y = TORUS.sample_uniform(rng, 50)
    assert np.max(np.abs(h_kernel(phi, x, y) - h_kernel_printed(phi, x, y))) < 1e-13


def test_h_kernel_bounded_by_c2_norm(rng):
    # |H_phi| <= C ||phi||_C2 uniformly; the constant from |K| ~ 1/(2 pi r) and |grad phi(x) - grad phi(y)| <= ||phi||_C2 r
    phi = TorusMode((2, 1))
    x = TORUS.sample_uniform(rng, 2000)
    y = x + 1e-4 * rng.standard_normal((2000, 2))
    assert np.max(np.abs(h_kernel(phi, x, y))) <= phi.c2_norm / (2 * math.pi) * 1.01 + 1e-6


def test_quadrature_torus_orthogonality():
    nodes, w = quadrature(TORUS, 64)
    for k in [(1, 0), (3, -2), (7, 5)]:
        assert abs(np.dot(np.cos(nodes @ np.array(k, dtype=float)), w)) < 1e-12
    assert abs(w.sum() - TORUS.area) < 1e-12


def test_quadrature_disk_radial():
    nodes, w = quadrature(DISK, 64)
    assert abs(np.dot(1 - np.sum(nodes**2, axis=1), w) - math.pi / 2) < 1e-12


def test_integrate_singular_log():
    # int_disk log|x| dx = -pi/2
    val = integrate_singular(DISK, lambda x: np.log(np.hypot(x[:, 0], x[:, 1])), np.zeros(2), 64)
    assert abs(val + math.pi / 2) < 1e-6


def test_test_function_json_roundtrip():
    for d in ({"kind": "torus_mode", "k": [1, 0], "phase": "cos"},
              {"kind": "disk_bump", "center": [0.2, 0.0], "radius": 0.5, "amplitude": 1.0}):
        f = function_from_json(d)
        assert function_from_json(f.to_json()) == f
    assert domain_from_json(TORUS.to_json()) == TORUS


def test_bump_support_inside_disk():
    with pytest.raises(ValueError):
        DiskBump((0.8, 0.0), 0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 6.2), st.floats(0.05, 6.2), st.floats(0.05, 6.2), st.floats(0.05, 6.2))
def test_torus_kernel_antisymmetric_and_periodic(x1, x2, y1, y2):
    x, y = np.array([x1, x2]), np.array([y1, y2])
    if TORUS.separation(x, y) < 1e-3:
        return
    K = biot_savart(TORUS, x, y)
    assert np.allclose(K, -biot_savart(TORUS, y, x), atol=1e-12)
    assert np.allclose(K, biot_savart(TORUS, x + [2 * np.pi, 0], y), atol=1e-10)
