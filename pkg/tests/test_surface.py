import math

import numpy as np
import pytest

from capflow import cap, geometry
from capflow.errors import DegenerateMetric
from capflow.grid import HemisphereGrid, d1_profile
from capflow.surface import (GraphState, boundary_frame, boundary_relation_residuals,
                             normalized_mean_curvatures, reconstruct)

PI = math.pi


def cap_sample(theta, r, n_beta=128, mode="axisym", n_xi=32, n=2):
    g = HemisphereGrid(mode, n=n, n_beta=n_beta, n_xi=n_xi if mode == "full2d" else 0)
    st = cap.cap_graph(cap.CapParams(theta, r, n), g)
    return reconstruct(st, g, theta), g


def perturbed_state(theta, g, amp=0.08, r=1.0):
    u = cap.cap_profile(g.beta, theta, r) + amp * np.cos(2 * g.beta)
    if g.mode == "full2d":
        u = np.repeat(u[:, None], g.n_xi, axis=1)
    return GraphState(u=u)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

def test_cap_curvatures_axisym():
    s, _ = cap_sample(PI / 2, 1.0)
    assert np.abs(s.kappa - 1.0).max() < 5e-4


def test_flat_ball_curvatures_vanish():
    s, _ = cap_sample(PI / 3, math.inf)
    assert np.abs(s.kappa).max() < 5e-4


def test_unit_normals_and_orientation():
    for theta, r in ((PI / 2, 1.0), (PI / 3, 0.5), (PI / 3, math.inf)):
        s, _ = cap_sample(theta, r)
        assert np.abs(np.linalg.norm(s.nu, axis=1) - 1.0).max() < 1e-10
        assert s.Xe_nu.min() > 0.0


def test_xe_nu_identity_nodewise():
    # <X_e, nu> = e^w rho / v to rounding, also on non-cap states
    g = HemisphereGrid("axisym", n_beta=96)
    st = perturbed_state(PI / 3, g)
    s = reconstruct(st, g, PI / 3)
    ub = d1_profile(st.u, g.h_beta, "even")
    rho = np.exp(st.u)
    expected = geometry.conformal_factor(rho, g.beta) * rho / np.sqrt(1 + ub ** 2)
    assert np.abs(s.Xe_nu - expected).max() < 1e-10


def test_area_weights_reproduce_cap_area():
    for theta, r in ((PI / 2, 1.0), (PI / 3, 2.0)):
        errs = []
        for nb in (64, 128):
            s, _ = cap_sample(theta, r, n_beta=nb)
            exact = cap.cap_ingredients(theta, r, 2)["area"]
            errs.append(abs(s.integrate(1.0) - exact))
        assert errs[1] < errs[0] / 3.0  # ~O(h^2)


def test_refinement_orders_nu_dA_kappa():
    theta, r = PI / 3, 1.0
    errs = {"kappa": [], "area": [], "nu": []}
    for nb in (64, 128, 256):
        s, g = cap_sample(theta, r, n_beta=nb)
        errs["kappa"].append(np.abs(s.kappa - 1.0 / r).max())
        errs["area"].append(abs(s.integrate(1.0) - cap.cap_ingredients(theta, r, 2)["area"]))
        # exact normal of the cap sphere: (x - c e)/r
        c = cap.cap_center(cap.CapParams(theta, r, 2))
        nu_exact = s.x.copy()
        nu_exact[:, -1] -= c
        nu_exact /= r
        errs["nu"].append(np.abs(s.nu - nu_exact).max())
    for key, vals in errs.items():
        orders = [math.log2(vals[i] / vals[i + 1]) for i in range(2)]
        assert min(orders) >= 1.9, (key, vals, orders)


def test_newton_maclaurin_on_convex_samples():
    g = HemisphereGrid("axisym", n_beta=96)
    for theta in (PI / 2, PI / 3):
        s = reconstruct(perturbed_state(theta, g, amp=0.05), g, theta)
        assert s.kappa.min() > 0
        Hk = s.Hk
        for k in range(1, s.n):
            assert np.all(Hk[:, k + 1] <= Hk[:, k] * Hk[:, 1] + 1e-13)


def test_higher_dimension_axisym():
    # n = 3 caps: umbilic with kappa = 1/r, H_k = r^{-k}
    s, _ = cap_sample(PI / 3, 1.5, n_beta=96, n=3)
    assert np.abs(s.kappa - 1.0 / 1.5).max() < 1e-3
    assert np.abs(s.Hk[:, 3] - 1.5 ** -3).max() < 3e-3


def test_elementary_symmetric_normalization():
    kappa = np.array([[1.0, 2.0, 3.0]])
    Hk = normalized_mean_curvatures(kappa)
    np.testing.assert_allclose(Hk[0], [1.0, 2.0, 11.0 / 3.0, 6.0], atol=1e-14)


def test_degenerate_metric_raises():
    g = HemisphereGrid("axisym", n_beta=64)
    # rho = e^40 collapses the whole image surface onto the singular point e
    u = np.full(g.n_beta, 40.0)
    with pytest.raises(DegenerateMetric):
        reconstruct(GraphState(u=u), g, PI / 2)


def test_full2d_matches_axisym_on_caps():
    theta, r = PI / 3, 1.0
    s2, g2 = cap_sample(theta, r, n_beta=64, mode="full2d", n_xi=32)
    assert np.abs(s2.kappa - 1.0).max() < 2e-2
    assert s2.Xe_nu.min() > 0
    assert np.abs(np.linalg.norm(s2.nu, axis=1) - 1.0).max() < 1e-10
    exact = cap.cap_ingredients(theta, r, 2)["area"]
    assert abs(s2.integrate(1.0) - exact) < 8e-3


def test_full2d_nonaxisymmetric_state():
    g = HemisphereGrid("full2d", n_beta=48, n_xi=32)
    base = cap.cap_profile(g.beta, PI / 2, 1.0)
    u = base[:, None] + 0.03 * np.cos(2 * g.beta)[:, None] * np.cos(2 * g.xi)[None, :]
    u[0, :] = u[0, :].mean()
    s = reconstruct(GraphState(u=u), g, PI / 2)
    assert s.Xe_nu.min() > 0
    assert np.isfinite(s.kappa).all()
    # Euler-formula pole fit gives finite symmetric curvatures
    assert np.abs(s.kappa[:g.n_xi] - s.kappa[:g.n_xi].mean(axis=0)).max() < 1e-10


# ---------------------------------------------------------------------------
# boundary frame
# ---------------------------------------------------------------------------

def test_boundary_frame_cap_hhat():
    # hhat = ((1/r) + cos)/sin, from relation (2) and from the latitude circle
    for theta, r in ((PI / 3, 0.8), (PI / 2, 1.0), (PI / 4, 2.0)):
        s, _ = cap_sample(theta, r, n_beta=192)
        fr = boundary_frame(s)
        expected = (1.0 / r + math.cos(theta)) / math.sin(theta)
        assert abs(fr.hhat[0, 0, 0] - expected) < 2e-3
        # independent geodesic-curvature oracle of the boundary circle in S^n
        c = cap.cap_center(cap.CapParams(theta, r, 2))
        phib = math.atan2(r * math.sin(theta), 1 + r * math.cos(theta))
        assert abs(fr.hhat[0, 0, 0] - 1.0 / math.tan(phib)) < 2e-3


def test_boundary_relations_cap():
    for theta in (PI / 3, PI / 2):
        s, _ = cap_sample(theta, 1.0, n_beta=128)
        res = boundary_relation_residuals(s)
        for key in ("angle", "frame_N", "principal_direction", "h_vs_hhat", "htilde_vs_h"):
            assert res[key] < 5e-4, (key, res)


def test_theta_half_pi_reduces_h_to_hhat():
    s, _ = cap_sample(PI / 2, 1.3, n_beta=128)
    fr = boundary_frame(s)
    kpar_eq = s.shape[s.equator_idx[0], 1, 1]
    assert abs(kpar_eq - fr.hhat[0, 0, 0]) < 1e-3


def test_principal_direction_residual_refines_full2d():
    # |h(mu, e_alpha)| <= C h^2 along the equator (full2d; axisym is exact)
    vals = []
    for (nb, nx) in ((32, 16), (64, 32), (128, 64)):
        g = HemisphereGrid("full2d", n_beta=nb, n_xi=nx)
        base = cap.cap_profile(g.beta, PI / 3, 1.0)
        u = base[:, None] + 0.02 * np.cos(2 * g.beta)[:, None] * np.cos(2 * g.xi)[None, :]
        u[0, :] = u[0, :].mean()
        s = reconstruct(GraphState(u=u), g, PI / 3)
        vals.append(np.abs(boundary_frame(s).h_mu_alpha).max())
    assert vals[2] < vals[0]


def test_codazzi_relation_order():
    errs = []
    for nb in (64, 128, 256):
        s, _ = cap_sample(PI / 3, 1.0, n_beta=nb)
        errs.append(boundary_relation_residuals(s)["codazzi"])
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 0.9, (errs, orders)
