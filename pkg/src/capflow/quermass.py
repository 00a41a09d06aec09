"""Quermassintegrals and integral-geometric functionals of capillary surfaces.

The capillary quermassintegrals combine a curvature integral over the surface
with boundary terms built from the spherical quermassintegrals of the region
the boundary curve encloses on the unit sphere:

    W_0 = |enclosed domain|
    W_1 = (|Sigma| - cos(theta) W_0^S) / (n+1)
    W_{k+1} = (int H_k dA - cos sin^k W_k^S - [sign] * trailing sum) / (n+1)

As typeset in the source material, the trailing boundary constant of the
general assembly evaluated at theta = pi/2 carries the opposite sign from
the free-boundary special form.  Both assemblies implement a ``convention``
switch; the variational consistency test on the exact cap family (see
``cap.resolve_sign_convention``) selects "plus" (the literal general
assembly), which is the package default.  Under that convention the two
assemblies agree at theta = pi/2.
"""
import warnings
from dataclasses import dataclass
from math import comb, cos, pi, sin

import numpy as np
from scipy.integrate import quad

from .surface import SurfaceSample, sphere_area

#: trailing-sum sign selected by the cap-family variational test
DEFAULT_SIGN_CONVENTION = "plus"

_SIGNS = {"plus": 1.0, "minus": -1.0}


class NonConvexBoundaryWarning(UserWarning):
    """Geodesic curvature of the boundary curve changes sign (diagnostic only)."""


def latitude_boundary_quermass(phi, n):
    """Spherical quermassintegrals W_0..W_n of a geodesic ball of radius phi in S^n.

    The boundary circle has all principal curvatures cot(phi) in S^n, so the
    recursion closes with H_k = cot(phi)^k.
    """
    omega = sphere_area(n - 1)
    length = omega * np.sin(phi) ** (n - 1)
    if n == 2:
        area = 2.0 * pi * (1.0 - np.cos(phi))
    else:
        area, err = quad(lambda t: np.sin(t) ** (n - 1), 0.0, phi, epsabs=1e-13, epsrel=1e-13)
        area *= omega
    W = np.zeros(n + 1)
    W[0] = area
    W[1] = length / n
    cot = np.cos(phi) / np.sin(phi)
    for k in range(1, n):
        W[k + 1] = (length * cot ** k) / n + k / (n - k + 1.0) * W[k - 1]
    return W


@dataclass
class BoundaryRegion:
    """Boundary curve data: lengths, enclosed spherical area, W_k^{S^n}."""

    area: float          # |region enclosed on S^n|
    length: float        # |boundary curve|
    WS: np.ndarray       # spherical quermassintegrals W_0..W_n
    kappa_g: np.ndarray  # geodesic curvature samples along the curve


def boundary_region(sample: SurfaceSample) -> BoundaryRegion:
    """Boundary-region functionals of a reconstructed sample.

    axisym: the boundary is a latitude circle and closed forms apply.
    full2d: arc-length summation, spherical Gauss-Bonnet for the area, and
    the recursion for higher spherical quermassintegrals.
    Emits NonConvexBoundaryWarning when the geodesic curvature changes sign.
    """
    n = sample.n
    idx = sample.equator_idx
    if sample.grid.mode == "axisym":
        xhat = sample.x[idx[0]]
        xhat = xhat / np.linalg.norm(xhat)
        phi = float(np.arccos(np.clip(xhat[-1], -1.0, 1.0)))
        WS = latitude_boundary_quermass(phi, n)
        omega = sphere_area(n - 1)
        length = omega * sin(phi) ** (n - 1)
        area = WS[0]
        kg = np.array([cos(phi) / sin(phi)])
    else:
        grid = sample.grid
        nx = grid.n_xi
        hxi = grid.h_xi
        gamma = sample.x[idx]
        gp = (np.roll(gamma, -1, axis=0) - np.roll(gamma, 1, axis=0)) / (2.0 * hxi)
        gpp = (np.roll(gamma, -1, axis=0) - 2.0 * gamma + np.roll(gamma, 1, axis=0)) / hxi ** 2
        sp = np.linalg.norm(gp, axis=-1)
        length = float(np.sum(sp) * hxi)
        xhat = gamma / np.linalg.norm(gamma, axis=-1)[:, None]
        tau = gp / sp[:, None]
        nv = np.cross(xhat, tau)
        sign = -np.sign(np.sum(nv * np.array([0.0, 0.0, 1.0]), -1))
        nu_bar = nv * sign[:, None]
        kg = -np.sum(gpp * nu_bar, -1) / sp ** 2
        circ = float(np.sum(kg * sp) * hxi)
        area = 2.0 * pi - circ                       # spherical Gauss-Bonnet
        WS = np.zeros(n + 1)
        WS[0] = area
        WS[1] = length / n
        for k in range(1, n):
            intHk = float(np.sum(kg ** k * sp) * hxi)
            WS[k + 1] = intHk / n + k / (n - k + 1.0) * WS[k - 1]
    if kg.min() < 0.0 < kg.max():
        warnings.warn("boundary geodesic curvature changes sign",
                      NonConvexBoundaryWarning, stacklevel=2)
    return BoundaryRegion(area=float(area), length=float(length), WS=WS, kappa_g=kg)


def enclosed_volume(sample: SurfaceSample, region: BoundaryRegion | None = None) -> float:
    """Enclosed volume W_0 by the divergence theorem.

    (n+1) W_0 = |boundary region on S^n| + int <x, nu> dA  (nu outward).
    """
    if region is None:
        region = boundary_region(sample)
    n = sample.n
    return (region.area + sample.integrate(sample.x_dot_nu)) / (n + 1.0)


def assemble_theta(k, n, theta, int_H_prev, volume, WS, convention=DEFAULT_SIGN_CONVENTION):
    """General-theta quermassintegral assembly from precomputed ingredients.

    int_H_prev = integral of H_{k-1} over the surface (ignored for k = 0),
    volume = enclosed volume, WS = spherical boundary quermassintegrals.
    """
    s = _SIGNS[convention]
    if k == 0:
        return volume
    if k == 1:
        return (int_H_prev - cos(theta) * WS[0]) / (n + 1.0)
    K = k - 1
    trail = 0.0
    for ell in range(K):
        coeff = ((-1.0) ** (K + ell) / (n - ell)) * comb(K, ell) \
            * ((n - K) * cos(theta) ** 2 + K - ell) \
            * sin(theta) ** ell * cos(theta) ** (K - 1 - ell)
        trail += coeff * WS[ell]
    return (int_H_prev - cos(theta) * sin(theta) ** K * WS[K] - s * trail) / (n + 1.0)


def assemble_theta_free(k, n, int_H_prev, volume, WS, convention=DEFAULT_SIGN_CONVENTION):
    """Free-boundary (theta = pi/2) assembly with the resolved constant sign.

    Under the "plus" convention the k/(n-k+1) boundary constant enters with
    a plus sign, which is what the general assembly reduces to at pi/2.
    """
    s = _SIGNS[convention]
    if k == 0:
        return volume
    if k == 1:
        return int_H_prev / (n + 1.0)
    K = k - 1
    return (int_H_prev + s * K / (n - K + 1.0) * WS[K - 1]) / (n + 1.0)


def quermass_theta(sample: SurfaceSample, k, convention=DEFAULT_SIGN_CONVENTION,
                   region: BoundaryRegion | None = None) -> float:
    """W_{k,theta} of a reconstructed sample, 0 <= k <= n."""
    n = sample.n
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    if region is None:
        region = boundary_region(sample)
    if k == 0:
        return enclosed_volume(sample, region)
    int_H_prev = sample.integrate(sample.Hk[:, k - 1])
    return assemble_theta(k, n, sample.theta, int_H_prev,
                          enclosed_volume(sample, region), region.WS, convention)


def quermass_theta_free(sample: SurfaceSample, k, convention=DEFAULT_SIGN_CONVENTION,
                        region: BoundaryRegion | None = None) -> float:
    """The theta = pi/2 special assembly (cross-check against quermass_theta)."""
    if abs(sample.theta - 0.5 * pi) > 1e-12:
        raise ValueError("free-boundary assembly requires theta = pi/2")
    n = sample.n
    if region is None:
        region = boundary_region(sample)
    if k == 0:
        return enclosed_volume(sample, region)
    int_H_prev = sample.integrate(sample.Hk[:, k - 1])
    return assemble_theta_free(k, n, int_H_prev,
                               enclosed_volume(sample, region), region.WS, convention)


@dataclass
class QuermassVector:
    """All W_{k,theta} plus the auxiliary boundary functionals."""

    W: np.ndarray
    area: float
    boundary_length: float
    boundary_area: float
    WS: np.ndarray
    theta: float
    n: int

    def to_dict(self):
        return {
            "theta": self.theta,
            "n": self.n,
            "W": [float(w) for w in self.W],
            "area": self.area,
            "boundary_length": self.boundary_length,
            "boundary_area": self.boundary_area,
            "WS": [float(w) for w in self.WS],
        }


def quermass_vector(sample: SurfaceSample, convention=DEFAULT_SIGN_CONVENTION) -> QuermassVector:
    region = boundary_region(sample)
    n = sample.n
    W = np.array([quermass_theta(sample, k, convention, region) for k in range(n + 1)])
    return QuermassVector(W=W, area=sample.integrate(1.0),
                          boundary_length=region.length, boundary_area=region.area,
                          WS=region.WS, theta=sample.theta, n=n)


def minkowski_residual(sample: SurfaceSample, k) -> float:
    """LHS - RHS of the Minkowski identity

        int H_{k-1} <x + cos(theta) nu, e> dA = int H_k <X_e, nu> dA,

    which vanishes in the continuum for every capillary hypersurface.
    """
    n = sample.n
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    lhs_field = sample.Hk[:, k - 1] * (sample.x_dot_e + cos(sample.theta) * sample.nu_dot_e)
    rhs_field = sample.Hk[:, k] * sample.Xe_nu
    return sample.integrate(lhs_field) - sample.integrate(rhs_field)
