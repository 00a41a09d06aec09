"""The exact spherical-cap family and the flat ball: geometry and profiles.

Caps of radius r about the axis direction meet the unit sphere at the
contact angle theta; their centers sit at distance c = sqrt(r^2 + 2r cos
theta + 1) along the axis.  Under the ball-to-half-space map every cap
becomes a sphere crossing the vertical axis at

    rho_1 = (1 + (c - r)) / (1 - (c - r)),    rho_2 = -(1 + c + r)/(c + r - 1),

so its radial graph is  u(beta) = log(s0 cos beta + sqrt(R^2 - s0^2 sin^2
beta))  with s0 = (rho_1 + rho_2)/2 and R = (rho_1 - rho_2)/2.  The flat
ball is the r -> infinity member with s0 = cos(theta)/(1 - cos(theta)) and
R = 1/(1 - cos(theta)).  The identity s0 = R cos(theta) encodes the contact
angle and makes every profile satisfy the oblique boundary condition
exactly.

The quermassintegral profile functions f_k(r) are computed from exact cap
geometry (closed forms for n = 2, adaptive quadrature otherwise) through the
shared assembly in ``quermass``; a memoized monotone-interpolation table
accelerates their inverses.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from . import quermass as qm
from .errors import InfiniteRadius, OutOfRange, QuadratureFailure
from .grid import HemisphereGrid
from .surface import GraphState, sphere_area

_QUAD_TOL = 1e-12


@dataclass(frozen=True)
class CapParams:
    """Cap family member: contact angle theta, radius r (math.inf = flat ball)."""

    theta: float
    r: float
    n: int = 2

    def __post_init__(self):
        if not 0.0 < self.theta <= 0.5 * math.pi + 1e-15:
            raise ValueError("contact angle must lie in (0, pi/2]")
        if not (self.r > 0.0 or math.isinf(self.r)):
            raise ValueError("cap radius must be positive or infinite")
        if self.n < 2:
            raise ValueError("hypersurface dimension must be >= 2")


def cap_center(params: CapParams) -> float:
    """Center offset sqrt(r^2 + 2 r cos(theta) + 1) of the cap sphere."""
    if math.isinf(params.r):
        raise InfiniteRadius("flat ball has no finite center offset")
    r, th = params.r, params.theta
    return math.sqrt(r * r + 2.0 * r * math.cos(th) + 1.0)


def halfspace_sphere(theta, r):
    """(s0, R): center and radius of the image sphere of the cap in half-space."""
    ct = math.cos(theta)
    if math.isinf(r):
        if abs(ct) < 1e-15:
            return 0.0, 1.0
        return ct / (1.0 - ct), 1.0 / (1.0 - ct)
    c = math.sqrt(r * r + 2.0 * r * ct + 1.0)
    d = (2.0 * r * ct + 1.0) / (c + r)           # c - r without cancellation
    rho1 = (1.0 + d) / (1.0 - d)
    rho2 = -(1.0 + c + r) / (c + r - 1.0)
    return 0.5 * (rho1 + rho2), 0.5 * (rho1 - rho2)


def cap_profile(beta, theta, r):
    """u = log rho of the cap's radial graph at latitudes beta."""
    s0, R = halfspace_sphere(theta, r)
    beta = np.asarray(beta, dtype=float)
    W = np.sqrt(R * R - (s0 * np.sin(beta)) ** 2)
    return np.log(s0 * np.cos(beta) + W)


def cap_profile_slope(beta, theta, r):
    """Analytic d u / d beta of the cap profile."""
    s0, R = halfspace_sphere(theta, r)
    beta = np.asarray(beta, dtype=float)
    W = np.sqrt(R * R - (s0 * np.sin(beta)) ** 2)
    rho = s0 * np.cos(beta) + W
    return (-s0 * np.sin(beta) - s0 ** 2 * np.sin(beta) * np.cos(beta) / W) / rho


def cap_graph(params: CapParams, grid: HemisphereGrid) -> GraphState:
    """Radial-graph state of the cap (or flat ball) on the given grid."""
    u = cap_profile(grid.beta, params.theta, params.r)
    if grid.mode == "full2d":
        u = np.broadcast_to(u[:, None], grid.shape).copy()
    return GraphState(u=u, t=0.0)


# ----------------------------------------------------------------------------
# exact quermassintegral ingredients
# ----------------------------------------------------------------------------

def _sin_power_integral(x, n):
    """int_0^x sin^(n-1) t dt, closed for n = 2."""
    if n == 2:
        return 1.0 - math.cos(x)
    val, err = quad(lambda t: math.sin(t) ** (n - 1), 0.0, x,
                    epsabs=_QUAD_TOL, epsrel=_QUAD_TOL)
    if err > 1e-9 * max(abs(val), 1e-12):
        raise QuadratureFailure(f"sin-power integral error estimate {err}")
    return val


def cap_ingredients(theta, r, n):
    """Exact surface/boundary functionals of the cap: a dict with

    area, volume, int_H (array over k of int H_k dA), phi_b, WS.
    """
    ct, st = math.cos(theta), math.sin(theta)
    omega = sphere_area(n - 1)
    if math.isinf(r):
        vn = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
        area = vn * st ** n
        val, err = quad(lambda t: (1.0 - t * t) ** (n / 2.0), ct, 1.0,
                        epsabs=_QUAD_TOL, epsrel=_QUAD_TOL)
        if err > 1e-9 * max(abs(val), 1e-12):
            raise QuadratureFailure(f"flat-ball volume error estimate {err}")
        volume = vn * val
        int_H = np.zeros(n + 1)
        int_H[0] = area
        phi_b = theta
    else:
        c = math.sqrt(r * r + 2.0 * r * ct + 1.0)
        alpha_max = math.atan2(st, r + ct)
        phi_b = math.atan2(r * st, 1.0 + r * ct)
        if n == 2:
            # 1 - cos(alpha_max) without cancellation at large r
            area = omega * r ** 2 * st * st / (c * (c + r + ct))
        else:
            area = omega * r ** n * _sin_power_integral(alpha_max, n)
        if n == 2:
            # two-ball lens: unit-sphere cap above the plane plus cap of the
            # r-sphere below it, both with stable heights
            h1 = r * r * st * st / (c * (c + 1.0 + r * ct))
            h2 = r * st * st / (c * (c + r + ct))
            volume = math.pi * (h1 * h1 * (3.0 - h1) + h2 * h2 * (3.0 * r - h2)) / 3.0
        else:
            val, err = quad(lambda t: (r - c * math.cos(t)) * math.sin(t) ** (n - 1),
                            0.0, alpha_max, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL)
            if err > 1e-9 * max(abs(val) + 1e-9, 1e-12):
                raise QuadratureFailure(f"cap volume flux error estimate {err}")
            flux = omega * r ** n * val
            bdry = omega * _sin_power_integral(phi_b, n)
            volume = (bdry + flux) / (n + 1.0)
        int_H = np.array([area / r ** k for k in range(n + 1)])
    WS = qm.latitude_boundary_quermass(phi_b, n)
    return {"area": area, "volume": volume, "int_H": int_H, "phi_b": phi_b, "WS": WS}


def cap_quermass(params: CapParams, k, convention=qm.DEFAULT_SIGN_CONVENTION) -> float:
    """f_k(r) = W_{k,theta} of the exact cap, relative accuracy ~1e-9 or better."""
    n = params.n
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    ing = cap_ingredients(params.theta, params.r, n)
    int_H_prev = ing["int_H"][k - 1] if k >= 1 else 0.0
    return qm.assemble_theta(k, n, params.theta, int_H_prev, ing["volume"],
                             ing["WS"], convention)


# ----------------------------------------------------------------------------
# profile table and inverses
# ----------------------------------------------------------------------------

@dataclass
class CapProfileTable:
    """Memoized f_0..f_n samples over a log radius grid, with interpolants."""

    theta: float
    n: int
    convention: str
    radii: np.ndarray
    values: np.ndarray  # (len(radii), n+1)
    flat: np.ndarray    # f_k at r = infinity

    @classmethod
    def build(cls, theta, n, convention=qm.DEFAULT_SIGN_CONVENTION,
              r_lo=0.02, r_hi=300.0, count=120):
        radii = np.geomspace(r_lo, r_hi, count)
        values = np.empty((count, n + 1))
        for i, r in enumerate(radii):
            p = CapParams(theta=theta, r=float(r), n=n)
            for k in range(n + 1):
                values[i, k] = cap_quermass(p, k, convention)
        flat = np.array([cap_quermass(CapParams(theta, math.inf, n), k, convention)
                         for k in range(n + 1)])
        if np.any(np.diff(values, axis=0) <= 0.0):
            raise ValueError("cap profile functions must increase strictly in r")
        return cls(theta=theta, n=n, convention=convention, radii=radii,
                   values=values, flat=flat)

    def radius_guess(self, k, value):
        """Monotone interpolation guess for f_k^{-1}(value)."""
        from scipy.interpolate import PchipInterpolator
        col = self.values[:, k]
        interp = PchipInterpolator(col, self.radii)
        v = np.clip(value, col[0], col[-1])
        return float(interp(v))


_TABLES: dict = {}


def cap_profile_table(theta, n, convention=qm.DEFAULT_SIGN_CONVENTION) -> CapProfileTable:
    key = (round(float(theta), 14), n, convention)
    tab = _TABLES.get(key)
    if tab is None:
        tab = CapProfileTable.build(theta, n, convention)
        _TABLES[key] = tab
    return tab


def cap_radius_from_quermass(theta, n, k, value,
                             convention=qm.DEFAULT_SIGN_CONVENTION) -> float:
    """Invert f_k: the radius whose cap has W_{k,theta} = value.

    Raises OutOfRange when value is outside (0, f_k(infinity)).
    """
    flat = cap_quermass(CapParams(theta, math.inf, n), k, convention)
    if value <= 0.0 or value >= flat * (1.0 + 1e-9):
        raise OutOfRange(f"value {value} outside attainable range (0, {flat})")
    if value >= flat:
        return 1e12  # within rounding of the flat-ball limit
    tab = cap_profile_table(theta, n, convention)

    def fk(r):
        return cap_quermass(CapParams(theta, r, n), k, convention) - value

    lo = hi = tab.radius_guess(k, value)
    flo = fk(lo)
    it = 0
    while flo > 0.0:
        lo *= 0.5
        flo = fk(lo)
        it += 1
        if it > 120:
            raise OutOfRange("bracketing failed from below")
    fhi = fk(hi)
    while fhi < 0.0:
        hi *= 2.0
        if hi > 1e12:
            return 1e12  # indistinguishable from the flat-ball limit
        fhi = fk(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    root = brentq(fk, lo, hi, rtol=8.9e-16, maxiter=200)
    return float(root)


# ----------------------------------------------------------------------------
# variational consistency on the exact family (the sign-resolution test)
# ----------------------------------------------------------------------------

def _family_speed_integral(theta, r, n, m=4001):
    """int <d_r x, nu> dA over the cap, via the half-space graph speed."""
    beta = np.linspace(0.0, 0.5 * math.pi, m)
    dr = 1e-6 * (1.0 + r)
    du_dr = (cap_profile(beta, theta, r + dr) - cap_profile(beta, theta, r - dr)) / (2.0 * dr)
    u = cap_profile(beta, theta, r)
    ub = cap_profile_slope(beta, theta, r)
    rho = np.exp(u)
    ew = 2.0 / (rho ** 2 + 2.0 * rho * np.cos(beta) + 1.0)
    v = np.sqrt(1.0 + ub ** 2)
    f_r = -du_dr * rho * ew / v
    # surface measure through the graph parametrization
    q = rho ** 2 + 2.0 * rho * np.cos(beta) + 1.0
    a = 2.0 * rho * np.sin(beta) / q
    b = 1.0 - 2.0 * (rho * np.cos(beta) + 1.0) / q
    ap = np.gradient(a, beta, edge_order=2)
    bp = np.gradient(b, beta, edge_order=2)
    speed = np.hypot(ap, bp)
    w = sphere_area(n - 1) * a ** (n - 1) * speed
    return float(np.trapezoid(f_r * w, beta))


def variational_mismatch(theta, n, convention, radii=(0.5, 1.0, 2.0)) -> float:
    """Max relative mismatch of dW_k/dr against the first-variation formula.

    The variational formula says dW_k/dr = (n+1-k)/(n+1) * int H_k f dA with
    f the normal speed of the family; on caps H_k = r^{-k}, so the right side
    is proportional to the k = 0 flux.  A wrong boundary-constant sign in the
    assembly breaks this for k >= 2.
    """
    worst = 0.0
    for r in radii:
        flux = _family_speed_integral(theta, r, n)
        dr = 1e-5 * (1.0 + r)
        for k in range(n + 1):
            wp = cap_quermass(CapParams(theta, r + dr, n), k, convention)
            wm = cap_quermass(CapParams(theta, r - dr, n), k, convention)
            lhs = (wp - wm) / (2.0 * dr)
            rhs = (n + 1.0 - k) / (n + 1.0) * r ** (-k) * flux
            worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-12))
    return worst


def bracket_radii(u, grid, theta):
    """Cap-shell bracket of a graph state: (R1, R2) with

        u_cap(R2) <= u <= u_cap(R1)   pointwise.

    R1 is the largest inscribed and R2 the smallest circumscribed cap radius
    (in the enclosed-domain sense); the cap family foliates, so the pointwise
    profiles are strictly decreasing in r and bisection applies.  Raises
    ShellViolation when the state is not bracketed by finite caps.
    """
    from .errors import ShellViolation
    beta = grid.beta
    uu = np.asarray(u, dtype=float)
    if uu.ndim == 2:
        umin = uu.min(axis=1)
        umax = uu.max(axis=1)
    else:
        umin = umax = uu

    def gap_min(r):
        return float((cap_profile(beta, theta, r) - umax).min())

    def gap_max(r):
        return float((cap_profile(beta, theta, r) - umin).max())

    lo, hi = 1e-3, 1e8
    if gap_min(lo) < 0.0 or gap_max(hi) > 0.0:
        raise ShellViolation("state is not bracketed by the cap family")
    if gap_min(hi) >= 0.0:
        R1 = hi
    else:
        R1 = brentq(gap_min, lo, hi, rtol=1e-12)
    if gap_max(lo) <= 0.0:
        R2 = lo
    else:
        R2 = brentq(gap_max, lo, hi, rtol=1e-12)
    return float(R1), float(R2)


def shell_constants(R1, R2, theta):
    """Explicit positivity constants of the cap-shell estimates.

    delta1 = delta3 = 1 - (1 + R1 cos)/sqrt(R1^2 + 2 R1 cos + 1),
    delta2 = delta1/2, delta4 = R1 sin/sqrt(...), and
    delta0 = sin^2/(sqrt(R2^2 + 2 R2 cos + 1) + R2 + cos).
    """
    ct, st = math.cos(theta), math.sin(theta)
    c1 = math.sqrt(R1 * R1 + 2.0 * R1 * ct + 1.0)
    c2 = math.sqrt(R2 * R2 + 2.0 * R2 * ct + 1.0)
    delta1 = 1.0 - (1.0 + R1 * ct) / c1
    return {
        "delta0": st * st / (c2 + R2 + ct),
        "delta1": delta1,
        "delta2": 0.5 * delta1,
        "delta3": delta1,
        "delta4": R1 * st / c1,
    }


def resolve_sign_convention(theta, n, radii=(0.5, 1.0, 2.0)):
    """Select the boundary-constant sign by the cap-family variational test.

    Returns (convention, report) where report maps each candidate to its
    worst relative mismatch.  Exactly one candidate must pass at 1%.
    """
    report = {conv: variational_mismatch(theta, n, conv, radii)
              for conv in ("plus", "minus")}
    passing = [conv for conv, mis in report.items() if mis < 0.01]
    if len(passing) != 1:
        raise ValueError(f"sign resolution inconclusive: {report}")
    return passing[0], report
