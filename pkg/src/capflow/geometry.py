"""Coordinate systems and the conformal machinery of the ball / half-space picture.

The unit ball is mapped to the closed upper half-space by the Moebius
transformation

    phi(x', x_{n+1}) = (2 x' + (1 - |x|^2) e) / (|x'|^2 + (x_{n+1} - 1)^2),

with e the (n+1)-th coordinate axis.  phi is an inversion about e composed
with a reflection; its inverse is phi^{-1}(y) = I_e(y', -y_{n+1}) where I_e
is the inversion of radius sqrt(2) centered at e.  The map is conformal with
length scale factor  e^w = 2 / (rho^2 + 2 rho cos(beta) + 1)  in half-space
polar coordinates (rho, beta), equal to (|x'|^2 + (x_{n+1}-1)^2)/2 on the
ball side.

All functions are pure and vectorized over leading axes; the axis direction
is always the last coordinate axis.  Inputs with an arbitrary reference
direction are rotated onto the axis first (see ``rotation_to_axis``).
"""
from dataclasses import dataclass

import numpy as np

from .errors import SingularPoint

#: tolerance for exact algebraic identities in double precision
TOL_GEOM = 1e-12


@dataclass(frozen=True)
class HalfSpacePolar:
    """Polar coordinates in the upper half-space: y = rho * (sin(beta) xi, cos(beta)).

    ``xi`` holds unit vectors on the (n-1)-sphere; on the vertical axis
    (beta = 0) the azimuth is undefined and the first coordinate direction
    is stored.
    """

    rho: np.ndarray
    beta: np.ndarray
    xi: np.ndarray


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def axis_vector(dim):
    """Unit vector along the last coordinate axis of R^dim."""
    e = np.zeros(dim)
    e[-1] = 1.0
    return e


def rotation_to_axis(e):
    """Rotation matrix R with R @ e = e_last, for ingesting arbitrary directions.

    Uses the rank-2 Householder-free rotation in the plane spanned by e and
    the axis; identity when e is already (anti)parallel to the axis (for
    -e_last a 180-degree rotation in the (x_1, x_last) plane is returned).
    """
    e = np.asarray(e, dtype=float)
    norm = np.linalg.norm(e)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"direction must be a unit vector, got |e| = {norm}")
    e = e / norm
    dim = e.size
    a = axis_vector(dim)
    c = float(e @ a)
    if c > 1.0 - 1e-14:
        return np.eye(dim)
    if c < -1.0 + 1e-14:
        R = np.eye(dim)
        R[0, 0] = -1.0
        R[-1, -1] = -1.0
        return R
    # rotate in span{e, a}: maps e -> a, fixes the orthogonal complement
    u = e - c * a
    u /= np.linalg.norm(u)
    s = float(e @ u)
    R = np.eye(dim) + (c - 1.0) * (np.outer(a, a) + np.outer(u, u)) \
        + s * (np.outer(a, u) - np.outer(u, a))
    return R


def xe_field(x, e=None):
    """Conformal Killing field X_e = <x,e> x - (|x|^2 + 1)/2 * e.

    ``x`` may be a single point or an array of points (last axis = coords).
    ``e`` defaults to the last coordinate axis.
    """
    x = np.asarray(x, dtype=float)
    if e is None:
        e = axis_vector(x.shape[-1])
    e = np.asarray(e, dtype=float)
    xe = _dot(x, e)
    return xe[..., None] * x - 0.5 * (_dot(x, x) + 1.0)[..., None] * e


def to_halfspace(x):
    """Map ball points to half-space polar coordinates (rho, beta, xi).

    Raises SingularPoint when any input lies within TOL_GEOM of the
    singular point e (the pole of the inversion).
    """
    x = np.asarray(x, dtype=float)
    xp = x[..., :-1]
    xz = x[..., -1]
    den = np.sum(xp ** 2, axis=-1) + (xz - 1.0) ** 2
    if np.any(den < TOL_GEOM ** 2):
        raise SingularPoint("to_halfspace evaluated at the singular point e")
    yp = 2.0 * xp / den[..., None]
    yz = (1.0 - np.sum(x ** 2, axis=-1)) / den
    r_plane = np.linalg.norm(yp, axis=-1)
    rho = np.hypot(r_plane, yz)
    beta = np.arctan2(r_plane, yz)
    with np.errstate(invalid="ignore", divide="ignore"):
        xi = np.where(r_plane[..., None] > 0.0, yp / np.where(r_plane == 0.0, 1.0, r_plane)[..., None], 0.0)
    if np.ndim(r_plane) == 0:
        if r_plane == 0.0:
            xi = np.zeros(xp.shape[-1])
            xi[0] = 1.0
    else:
        on_axis = r_plane == 0.0
        xi[on_axis, 0] = 1.0
    return HalfSpacePolar(rho=rho, beta=beta, xi=xi)


def to_ball(p):
    """Inverse map: half-space polar coordinates back to ball points.

    phi^{-1}(y) = e + 2 ((y', -y_{n+1}) - e) / |(y', -y_{n+1}) - e|^2.
    Points on the half-space boundary (beta = pi/2) land on the unit sphere.
    """
    rho = np.asarray(p.rho, dtype=float)
    beta = np.asarray(p.beta, dtype=float)
    xi = np.asarray(p.xi, dtype=float)
    q = rho ** 2 + 2.0 * rho * np.cos(beta) + 1.0
    a = 2.0 * rho * np.sin(beta) / q
    b = 1.0 - 2.0 * (rho * np.cos(beta) + 1.0) / q
    return np.concatenate([a[..., None] * xi, b[..., None]], axis=-1)


def conformal_factor(rho, beta):
    """Conformal length scale e^w = 2 / (rho^2 + 2 rho cos(beta) + 1); positive."""
    rho = np.asarray(rho, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return 2.0 / (rho ** 2 + 2.0 * rho * np.cos(beta) + 1.0)


def conformal_factor_ball(x):
    """The same scale factor expressed in ball coordinates: (|x'|^2 + (x_last - 1)^2)/2."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (np.sum(x[..., :-1] ** 2, axis=-1) + (x[..., -1] - 1.0) ** 2)
