import math

import numpy as np
import pytest

from capflow import cap, geometry
from capflow.errors import InfiniteRadius, OutOfRange
from capflow.grid import HemisphereGrid

PI = math.pi


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def lens_volume_oracle(theta, r):
    """Two-ball lens volume: unit-sphere cap above the cut plane plus the cap
    of the r-sphere below it (plane at the boundary-circle height)."""
    c = math.sqrt(r * r + 2 * r * math.cos(theta) + 1)
    zb = (1 + r * math.cos(theta)) / c
    h1 = 1.0 - zb
    h2 = r - (c - zb)
    return math.pi * (h1 * h1 * (3 - h1) + h2 * h2 * (3 * r - h2)) / 3.0


def test_lens_oracle_monte_carlo():
    # 10^7-sample Monte Carlo confirmation of the lens-volume oracle
    theta, r = PI / 2, 1.0
    c = math.sqrt(2.0)
    rng = np.random.default_rng(42)
    n = 10_000_000
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    inside_unit = np.sum(pts * pts, axis=1) <= 1.0
    d2 = pts.copy()
    d2[:, 2] -= c
    inside_cap = np.sum(d2 * d2, axis=1) <= r * r
    vol = 8.0 * np.mean(inside_unit & inside_cap)
    exact = lens_volume_oracle(theta, r)
    assert abs(vol - exact) < 3e-3
    # frozen reference value of the oracle itself
    assert abs(exact - math.pi * (8 - 5 * math.sqrt(2)) / 6) < 1e-14


def test_cap_center_values():
    assert abs(cap.cap_center(cap.CapParams(PI / 2, 1.0, 2)) - math.sqrt(2)) < 1e-14
    # r -> 0 limit
    assert abs(cap.cap_center(cap.CapParams(PI / 3, 1e-12, 2)) - 1.0) < 1e-11
    # orthogonal intersection: offset^2 = 1 + r^2
    for r in (0.3, 1.0, 4.0):
        c = cap.cap_center(cap.CapParams(PI / 2, r, 2))
        assert abs(c * c - (1 + r * r)) < 1e-12


def test_cap_center_infinite_radius():
    with pytest.raises(InfiniteRadius):
        cap.cap_center(cap.CapParams(PI / 3, math.inf, 2))


def test_cap_params_validation():
    with pytest.raises(ValueError):
        cap.CapParams(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        cap.CapParams(PI / 3, -1.0, 2)
    with pytest.raises(ValueError):
        cap.CapParams(PI / 3, 1.0, 1)


# ---------------------------------------------------------------------------
# graph profiles
# ---------------------------------------------------------------------------

def test_flat_ball_free_boundary_graph_is_zero():
    g = HemisphereGrid("axisym", n_beta=64)
    st = cap.cap_graph(cap.CapParams(PI / 2, math.inf, 2), g)
    assert np.abs(st.u).max() == 0.0


def test_free_boundary_caps_have_constant_graph():
    # map exact cap points through the Moebius transform: rho is constant
    theta, r = PI / 2, 1.3
    c = math.sqrt(r * r + 2 * r * math.cos(theta) + 1)
    alpha_max = math.atan2(math.sin(theta), r + math.cos(theta))
    al = np.linspace(0, alpha_max, 1000)
    pts = np.zeros((al.size, 3))
    pts[:, 0] = r * np.sin(al)
    pts[:, 2] = c - r * np.cos(al)
    p = geometry.to_halfspace(pts)
    assert p.rho.max() - p.rho.min() < 1e-10
    g = HemisphereGrid("axisym", n_beta=64)
    st = cap.cap_graph(cap.CapParams(theta, r, 2), g)
    assert np.abs(st.u - np.log(p.rho[0])).max() < 1e-12


def test_cap_profile_matches_mapped_points():
    theta, r = PI / 3, 0.8
    c = math.sqrt(r * r + 2 * r * math.cos(theta) + 1)
    alpha_max = math.atan2(math.sin(theta), r + math.cos(theta))
    al = np.linspace(0, alpha_max, 500)
    pts = np.zeros((al.size, 3))
    pts[:, 0] = r * np.sin(al)
    pts[:, 2] = c - r * np.cos(al)
    p = geometry.to_halfspace(pts)
    assert np.abs(np.log(p.rho) - cap.cap_profile(p.beta, theta, r)).max() < 1e-12


@pytest.mark.parametrize("theta", [PI / 3, PI / 2])
@pytest.mark.parametrize("r", [0.5, 2.0, math.inf])
def test_cap_profile_boundary_slope(theta, r):
    # analytic boundary slope satisfies the oblique condition exactly
    up = cap.cap_profile_slope(0.5 * PI, theta, r)
    assert abs(up + math.cos(theta) * math.sqrt(1 + up * up)) < 1e-8


# ---------------------------------------------------------------------------
# quermassintegral profile functions
# ---------------------------------------------------------------------------

def test_flat_ball_values_free_boundary():
    p = cap.CapParams(PI / 2, math.inf, 2)
    assert abs(cap.cap_quermass(p, 0) - 2 * PI / 3) < 1e-12
    assert abs(cap.cap_quermass(p, 1) - PI / 3) < 1e-12


def test_lens_volume_against_oracle():
    for theta in (PI / 2, PI / 3, PI / 4):
        for r in (0.5, 1.0, 2.0):
            got = cap.cap_quermass(cap.CapParams(theta, r, 2), 0)
            assert abs(got - lens_volume_oracle(theta, r)) < 1e-12


def test_lens_value_frozen():
    got = cap.cap_quermass(cap.CapParams(PI / 2, 1.0, 2), 0)
    assert abs(got - 0.4863877563210856) < 1e-12


def test_general_n_volume_matches_lens_for_n2():
    # the divergence-theorem quadrature path agrees with the closed form
    theta, r = PI / 3, 1.2
    ing = cap.cap_ingredients(theta, r, 2)
    from scipy.integrate import quad
    from capflow.surface import sphere_area
    c = math.sqrt(r * r + 2 * r * math.cos(theta) + 1)
    amax = math.atan2(math.sin(theta), r + math.cos(theta))
    flux = sphere_area(1) * r ** 2 * quad(
        lambda t: (r - c * math.cos(t)) * math.sin(t), 0, amax)[0]
    phib = math.atan2(r * math.sin(theta), 1 + r * math.cos(theta))
    vol = (2 * PI * (1 - math.cos(phib)) + flux) / 3.0
    assert abs(vol - ing["volume"]) < 1e-10


def test_profile_monotone_in_r():
    rng = np.random.default_rng(0)
    for theta in (PI / 2, PI / 3):
        radii = np.sort(rng.uniform(0.05, 50.0, 51))
        for k in range(3):
            vals = [cap.cap_quermass(cap.CapParams(theta, float(r), 2), k)
                    for r in radii]
            assert np.all(np.diff(vals) > 0.0)


def test_radius_inverse_of_lens():
    value = math.pi * (8 - 5 * math.sqrt(2)) / 6
    r = cap.cap_radius_from_quermass(PI / 2, 2, 0, value)
    assert abs(r - 1.0) < 1e-7


def test_radius_inverse_round_trip():
    rng = np.random.default_rng(1)
    theta = PI / 3
    flat = cap.cap_quermass(cap.CapParams(theta, math.inf, 2), 1)
    for v in rng.uniform(0.02, 0.98, 100) * flat:
        r = cap.cap_radius_from_quermass(theta, 2, 1, float(v))
        back = cap.cap_quermass(cap.CapParams(theta, r, 2), 1)
        assert abs(back - v) < 1e-8 * abs(v)


def test_radius_inverse_near_flat_limit_diverges():
    flat = cap.cap_quermass(cap.CapParams(PI / 2, math.inf, 2), 0)
    r = cap.cap_radius_from_quermass(PI / 2, 2, 0, flat * (1 - 1e-9))
    assert r > 1e3


def test_radius_inverse_out_of_range():
    flat = cap.cap_quermass(cap.CapParams(PI / 2, math.inf, 2), 0)
    with pytest.raises(OutOfRange):
        cap.cap_radius_from_quermass(PI / 2, 2, 0, flat * 1.01)
    with pytest.raises(OutOfRange):
        cap.cap_radius_from_quermass(PI / 2, 2, 0, -0.1)


def test_af_equality_on_cap_family():
    # f_k(r) - f_k(f_0^{-1}(f_0(r))) = 0 within 1e-9
    for theta in (PI / 2, PI / 3):
        for r in (0.4, 1.0, 3.0):
            f0 = cap.cap_quermass(cap.CapParams(theta, r, 2), 0)
            rr = cap.cap_radius_from_quermass(theta, 2, 0, f0)
            for k in (1, 2):
                a = cap.cap_quermass(cap.CapParams(theta, r, 2), k)
                b = cap.cap_quermass(cap.CapParams(theta, rr, 2), k)
                assert abs(a - b) < 1e-9


def test_sign_convention_resolution():
    for theta in (PI / 2, PI / 3):
        conv, report = cap.resolve_sign_convention(theta, 2)
        assert conv == "plus"
        assert report["plus"] < 0.01
        assert report["minus"] > 0.01


def test_general_n_profiles_monotone():
    # the quadrature path for n = 3
    radii = (0.3, 0.8, 1.5, 4.0)
    for k in range(4):
        vals = [cap.cap_quermass(cap.CapParams(PI / 3, r, 3), k) for r in radii]
        assert np.all(np.diff(vals) > 0)


def test_shell_constants_values():
    d = cap.shell_constants(1.0, 1.0, PI / 2)
    assert abs(d["delta1"] - (1 - 1 / math.sqrt(2))) < 1e-14
    assert abs(d["delta2"] - 0.5 * (1 - 1 / math.sqrt(2))) < 1e-14
    assert abs(d["delta4"] - 1 / math.sqrt(2)) < 1e-14
    assert d["delta0"] > 0


def test_bracket_radii_of_cap_is_tight():
    g = HemisphereGrid("axisym", n_beta=96)
    theta, r = PI / 3, 1.4
    u = cap.cap_profile(g.beta, theta, r)
    R1, R2 = cap.bracket_radii(u, g, theta)
    assert abs(R1 - r) < 1e-6
    assert abs(R2 - r) < 1e-6
    # perturbed caps bracket strictly
    u2 = u + 0.05 * np.cos(2 * g.beta)
    R1, R2 = cap.bracket_radii(u2, g, theta)
    assert R1 < r < R2
