"""Discretization of the closed upper hemisphere and the finite-difference stencils.

Two grid modes:

* ``axisym``  -- 1-D latitude grid beta in [0, pi/2], rotationally symmetric
  states, any hypersurface dimension n >= 2.  This is the production mode;
  the latitude derivatives use 4th-order interior stencils, parity at the
  pole, and boundary closures at the equator that are constrained by the
  known oblique derivative there (Hermite-type stencils).  The constrained
  closures keep the semi-discrete operator spectrum in the stable half-plane,
  which plain one-sided closures do not.
* ``full2d``  -- tensor grid (beta, xi) on the hemisphere, n = 2 only, with a
  periodic azimuth and a polar-cap finite-volume cell at the pole.

The pole (beta = 0) and the equator (beta = pi/2) are always grid lines.
"""
import math
from dataclasses import dataclass, field

import numpy as np


def fd_weights(offsets, order, h=1.0):
    """Finite-difference weights for the given derivative order at offset 0.

    Solves the Vandermonde moment system; exact for polynomials of degree
    len(offsets) - 1.
    """
    offs = np.asarray(offsets, dtype=float)
    m = offs.size
    A = np.vander(offs, increasing=True).T
    b = np.zeros(m)
    b[order] = math.factorial(order)
    return np.linalg.solve(A, b) / h ** order


def hermite_weights(value_offsets, deriv_offsets, order, at, h=1.0):
    """Stencil weights using function values and known first derivatives.

    Returns (w_values, w_derivs) with

        f^(order)(at*h) ~ sum_j w_values[j] f(o_j h) + sum_k w_derivs[k] f'(d_k h).

    Used for the equator closures where the oblique boundary condition
    supplies f' at the boundary exactly.
    """
    vo = np.asarray(value_offsets, dtype=float)
    do = np.asarray(deriv_offsets, dtype=float)
    m = vo.size + do.size
    A = np.zeros((m, m))
    for k in range(m):
        A[k, :vo.size] = (vo * h) ** k
        if k >= 1:
            A[k, vo.size:] = k * (do * h) ** (k - 1)
    b = np.zeros(m)
    s0 = at * h
    for k in range(order, m):
        b[k] = math.factorial(k) / math.factorial(k - order) * s0 ** (k - order)
    w = np.linalg.solve(A, b)
    return w[:vo.size], w[vo.size:]


@dataclass(frozen=True)
class EquatorClosure:
    """Equator stencil weights on offsets [0, -1, -2, -3, -4] plus the BC slope g."""

    w2_b: np.ndarray      # u'' at the boundary node
    wg2_b: float
    w2_bm1: np.ndarray    # u'' at the node below
    wg2_bm1: float
    w1_bm1: np.ndarray    # u' at the node below
    wg1_bm1: float


def _make_closure(h):
    vo = [0, -1, -2, -3, -4]
    w2b, wg2b = hermite_weights(vo, [0], 2, 0, h)
    w2m, wg2m = hermite_weights(vo, [0], 2, -1, h)
    w1m, wg1m = hermite_weights(vo, [0], 1, -1, h)
    return EquatorClosure(w2b, float(wg2b[0]), w2m, float(wg2m[0]), w1m, float(wg1m[0]))


@dataclass(frozen=True)
class HemisphereGrid:
    """Grid over the closed upper hemisphere.

    mode    : 'axisym' or 'full2d'
    n       : hypersurface dimension (full2d requires n == 2)
    n_beta  : latitude nodes on [0, pi/2], pole and equator included
    n_xi    : azimuth nodes (full2d only), periodic, must be a multiple of 4
    """

    mode: str
    n: int = 2
    n_beta: int = 64
    n_xi: int = 0
    beta: np.ndarray = field(init=False, repr=False, compare=False)
    xi: np.ndarray = field(init=False, repr=False, compare=False)
    h_beta: float = field(init=False, compare=False)
    h_xi: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("axisym", "full2d"):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.n < 2:
            raise ValueError("hypersurface dimension n must be >= 2")
        if self.n_beta < 16:
            raise ValueError("n_beta must be >= 16")
        if self.mode == "full2d":
            if self.n != 2:
                raise ValueError("full2d grids require n == 2")
            if self.n_xi < 8 or self.n_xi % 4 != 0:
                raise ValueError("n_xi must be >= 8 and a multiple of 4")
        beta = np.linspace(0.0, 0.5 * np.pi, self.n_beta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "h_beta", float(beta[1] - beta[0]))
        if self.mode == "full2d":
            object.__setattr__(self, "h_xi", 2.0 * np.pi / self.n_xi)
            object.__setattr__(self, "xi", np.arange(self.n_xi) * self.h_xi)
        else:
            object.__setattr__(self, "h_xi", 0.0)
            object.__setattr__(self, "xi", np.zeros(0))

    @property
    def shape(self):
        return (self.n_beta,) if self.mode == "axisym" else (self.n_beta, self.n_xi)

    @property
    def n_nodes(self):
        return self.n_beta if self.mode == "axisym" else self.n_beta * self.n_xi

    def closure(self):
        """Equator Hermite closure weights for this spacing (cached)."""
        cl = _CLOSURE_CACHE.get(self.h_beta)
        if cl is None:
            cl = _make_closure(self.h_beta)
            _CLOSURE_CACHE[self.h_beta] = cl
        return cl

    def trapezoid_weights(self):
        """Latitude trapezoid weights (half weight at pole and equator)."""
        w = np.full(self.n_beta, self.h_beta)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


_CLOSURE_CACHE = {}


# ----------------------------------------------------------------------------
# latitude differentiation for axisymmetric, pole-even profiles
# ----------------------------------------------------------------------------

def d1_even(f, h):
    """4th-order d/dbeta of a profile that is even across the pole.

    One-sided 3rd-order at the equator (no boundary-condition knowledge).
    """
    g = np.empty_like(f)
    g[2:-2] = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * h)
    g[0] = 0.0
    g[1] = (-f[3] + 8.0 * f[2] - 8.0 * f[0] + f[1]) / (12.0 * h)
    g[-2] = (f[-5] - 6.0 * f[-4] + 18.0 * f[-3] - 10.0 * f[-2] - 3.0 * f[-1]) / (-12.0 * h)
    g[-1] = (11.0 * f[-1] - 18.0 * f[-2] + 9.0 * f[-3] - 2.0 * f[-4]) / (6.0 * h)
    return g


def d2_even(f, h):
    """4th-order d2/dbeta2 of a pole-even profile; one-sided at the equator."""
    g = np.empty_like(f)
    h2 = h * h
    g[2:-2] = (-f[4:] + 16.0 * f[3:-1] - 30.0 * f[2:-2] + 16.0 * f[1:-3] - f[:-4]) / (12.0 * h2)
    g[0] = (-2.0 * f[2] + 32.0 * f[1] - 30.0 * f[0]) / (12.0 * h2)
    g[1] = (-f[3] + 16.0 * f[2] - 31.0 * f[1] + 16.0 * f[0]) / (12.0 * h2)
    g[-2] = np.dot(fd_weights([-4, -3, -2, -1, 0, 1], 2, h), f[-6:])
    g[-1] = np.dot(fd_weights([-5, -4, -3, -2, -1, 0], 2, h), f[-6:])
    return g


# ----------------------------------------------------------------------------
# 2nd-order profile differentiation (surface reconstruction stencils):
# central in the interior, one-sided 3rd-order at the equator, parity at the pole
# ----------------------------------------------------------------------------

def d1_profile(f, h, parity):
    g = np.empty_like(f)
    g[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    g[-1] = (11.0 * f[-1] - 18.0 * f[-2] + 9.0 * f[-3] - 2.0 * f[-4]) / (6.0 * h)
    g[0] = 0.0 if parity == "even" else f[1] / h
    return g


def d2_profile(f, h, parity):
    g = np.empty_like(f)
    h2 = h * h
    g[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    g[-1] = np.dot(fd_weights([-5, -4, -3, -2, -1, 0], 2, h), f[-6:])
    g[0] = 2.0 * (f[1] - f[0]) / h2 if parity == "even" else 0.0
    return g
