import math
import warnings

import numpy as np
import pytest

from capflow import cap
from capflow import quermass as qm
from capflow.grid import HemisphereGrid
from capflow.surface import GraphState, reconstruct

PI = math.pi


def cap_sample(theta, r, n_beta=128, mode="axisym", n_xi=32):
    g = HemisphereGrid(mode, n_beta=n_beta, n_xi=n_xi if mode == "full2d" else 0)
    st = cap.cap_graph(cap.CapParams(theta, r, 2), g)
    return reconstruct(st, g, theta), g


def even_perturbed_sample(theta, g, amp, r=1.0, modes=((2, 1.0), (4, 0.3))):
    u = cap.cap_profile(g.beta, theta, r)
    for m, w in modes:
        u = u + amp * w * np.cos(m * g.beta)
    if g.mode == "full2d":
        u = np.repeat(u[:, None], g.n_xi, axis=1)
    return reconstruct(GraphState(u=u), g, theta)


# ---------------------------------------------------------------------------
# enclosed volume
# ---------------------------------------------------------------------------

def test_flat_ball_volume():
    s, _ = cap_sample(PI / 2, math.inf, n_beta=128)
    assert abs(qm.enclosed_volume(s) - 2 * PI / 3) < 2e-4


def test_cap_lens_volume():
    s, _ = cap_sample(PI / 2, 1.0, n_beta=128)
    exact = PI * (8 - 5 * math.sqrt(2)) / 6
    assert abs(qm.enclosed_volume(s) - exact) < 2e-4


def test_support_sign_sanity():
    # <x, nu> <= -cos theta nodewise on convex capillary samples
    for theta in (PI / 2, PI / 3):
        s, _ = cap_sample(theta, 1.0)
        assert np.all(s.x_dot_nu <= -math.cos(theta) + 1e-10)


# ---------------------------------------------------------------------------
# boundary region
# ---------------------------------------------------------------------------

def test_boundary_region_flat_ball():
    for theta in (PI / 2, PI / 3):
        s, _ = cap_sample(theta, math.inf)
        reg = qm.boundary_region(s)
        assert abs(reg.length - 2 * PI * math.sin(theta)) < 1e-6
        assert abs(reg.area - 2 * PI * (1 - math.cos(theta))) < 1e-6
    s, _ = cap_sample(PI / 2, math.inf)
    assert abs(qm.boundary_region(s).area - 2 * PI) < 1e-6


def test_gauss_bonnet_full2d_matches_closed_form():
    # 2 pi - closed-curve integral of kappa_g equals the latitude-cap area
    for theta, r in ((PI / 2, 1.0), (PI / 3, 1.5)):
        errs = []
        for (nb, nx) in ((48, 32), (96, 64)):
            s, _ = cap_sample(theta, r, n_beta=nb, mode="full2d", n_xi=nx)
            reg = qm.boundary_region(s)
            c = cap.cap_center(cap.CapParams(theta, r, 2))
            zb = (1 + r * math.cos(theta)) / c
            errs.append(abs(reg.area - 2 * PI * (1 - zb)))
        assert errs[1] < errs[0] / 3.0


def test_latitude_boundary_quermass_closed_forms():
    phi = 0.7
    W = qm.latitude_boundary_quermass(phi, 2)
    assert abs(W[0] - 2 * PI * (1 - math.cos(phi))) < 1e-12
    assert abs(W[1] - PI * math.sin(phi)) < 1e-12
    # W_2 of any geodesic disk on S^2 is pi
    assert abs(W[2] - PI) < 1e-12


def test_nonconvex_boundary_warning():
    g = HemisphereGrid("full2d", n_beta=48, n_xi=32)
    base = cap.cap_profile(g.beta, PI / 2, 1.0)
    u = base[:, None] + 0.25 * np.cos(3 * g.xi)[None, :] * (g.beta / (PI / 2))[:, None] ** 4
    u[0, :] = u[0, :].mean()
    s = reconstruct(GraphState(u=u), g, PI / 2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        qm.boundary_region(s)
    assert any(issubclass(w.category, qm.NonConvexBoundaryWarning) for w in caught)


# ---------------------------------------------------------------------------
# quermass assembly
# ---------------------------------------------------------------------------

def test_k0_is_enclosed_volume():
    s, _ = cap_sample(PI / 3, 1.0)
    assert qm.quermass_theta(s, 0) == qm.enclosed_volume(s, qm.boundary_region(s))


def test_flat_ball_W1_free_boundary():
    s, _ = cap_sample(PI / 2, math.inf)
    assert abs(qm.quermass_theta(s, 1) - PI / 3) < 2e-4  # O(h^2) at n_beta = 128


def test_cap_ground_truth_orders():
    # quermass_theta on cap grids reproduces cap_quermass at order >= 1.9
    for theta in (PI / 2, PI / 3):
        for r in (0.5, 1.0, 2.0):
            errs = []
            for nb in (64, 128, 256):
                s, _ = cap_sample(theta, r, n_beta=nb)
                region = qm.boundary_region(s)
                params = cap.CapParams(theta, r, 2)
                errs.append(max(abs(qm.quermass_theta(s, k, region=region)
                                    - cap.cap_quermass(params, k))
                                for k in range(3)))
            orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
            assert min(orders) >= 1.9, (theta, r, errs, orders)


def test_variational_consistency_selects_one_convention():
    for theta in (PI / 2, PI / 3):
        mism_plus = cap.variational_mismatch(theta, 2, "plus")
        mism_minus = cap.variational_mismatch(theta, 2, "minus")
        assert mism_plus < 0.01
        assert mism_minus > 0.01


def test_free_boundary_assembly_agrees_after_resolution():
    # theta = pi/2: general and free-boundary assemblies agree under "plus"
    rng = np.random.default_rng(3)
    g = HemisphereGrid("axisym", n_beta=96)
    for _ in range(20):
        amp = float(rng.uniform(0.0, 0.08))
        r = float(rng.uniform(0.7, 2.0))
        s = even_perturbed_sample(PI / 2, g, amp, r=r)
        for k in range(3):
            a = qm.quermass_theta(s, k, "plus")
            b = qm.quermass_theta_free(s, k, "plus")
            assert abs(a - b) < 1e-12


def test_free_boundary_assembly_requires_half_pi():
    s, _ = cap_sample(PI / 3, 1.0)
    with pytest.raises(ValueError):
        qm.quermass_theta_free(s, 1)


# ---------------------------------------------------------------------------
# Minkowski residuals
# ---------------------------------------------------------------------------

def test_minkowski_residual_refines_on_caps():
    s_h, _ = cap_sample(PI / 3, 1.0, n_beta=128)
    s_h2, _ = cap_sample(PI / 3, 1.0, n_beta=256)
    r1 = abs(qm.minkowski_residual(s_h, 1))
    r2 = abs(qm.minkowski_residual(s_h2, 1))
    assert 3.0 < r1 / r2 < 5.2


def test_minkowski_residual_flat_ball():
    s, _ = cap_sample(PI / 3, math.inf, n_beta=128)
    for k in (1, 2):
        assert abs(qm.minkowski_residual(s, k)) < 1e-5  # O(h^2), tiny constant


def test_minkowski_residual_random_convex():
    from capflow.verify import random_convex_state
    g = HemisphereGrid("axisym", n_beta=256)
    for theta in (PI / 2, PI / 3):
        rng = np.random.default_rng(11)
        for _ in range(3):
            _, s = random_convex_state(theta, g, rng)
            assert s.kappa.min() > 0
            for k in (1, 2):
                assert abs(qm.minkowski_residual(s, k)) <= 5e-3


def test_quermass_vector_roundtrip_dict():
    s, _ = cap_sample(PI / 3, 1.0)
    vec = qm.quermass_vector(s)
    d = vec.to_dict()
    assert len(d["W"]) == 3 and d["n"] == 2
