"""Reconstruction of the embedded hypersurface from the radial-graph field u.

A state is the scalar field u = log(rho) on a HemisphereGrid; the surface in
the ball is x = phi^{-1}(e^u z).  Curvature data are obtained by
differentiating the reconstructed embedding (2nd-order central stencils,
one-sided 3rd-order at the equator, parity at the pole), then diagonalizing
the second fundamental form in an orthonormal tangent frame.  The normal is
oriented outward from the enclosed domain, which makes <X_e, nu> positive on
star-shaped states and principal curvatures +1/r on spherical caps.
"""
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import DegenerateMetric
from .grid import HemisphereGrid, d1_profile, d2_profile, fd_weights

#: guard on the induced metric determinant (coordinate-degenerate pole excluded)
METRIC_GUARD = 1e-14


def sphere_area(m):
    """Surface measure of the unit m-sphere S^m."""
    from math import gamma, pi
    return 2.0 * pi ** ((m + 1) / 2.0) / gamma((m + 1) / 2.0)


@dataclass
class GraphState:
    """The flowing unknown: u = log rho on the grid, plus flow time."""

    u: np.ndarray
    t: float = 0.0

    def copy(self):
        return GraphState(u=self.u.copy(), t=self.t)


def elementary_symmetric(kappa):
    """Elementary symmetric polynomials e_0..e_n of the rows of kappa (N, n)."""
    N, n = kappa.shape
    e = np.zeros((N, n + 1))
    e[:, 0] = 1.0
    for j in range(n):
        kj = kappa[:, j][:, None]
        e[:, 1:j + 2] = e[:, 1:j + 2] + kj * e[:, 0:j + 1]
    return e


def normalized_mean_curvatures(kappa):
    """H_k = e_k / C(n,k), returned as (N, n+1) with H_0 = 1."""
    from math import comb
    n = kappa.shape[1]
    e = elementary_symmetric(kappa)
    binom = np.array([comb(n, k) for k in range(n + 1)], dtype=float)
    return e / binom


@dataclass
class SurfaceSample:
    """Per-node geometric data of a reconstructed surface.

    Arrays are flattened over grid nodes (axisym: n_beta nodes; full2d:
    n_beta*n_xi, beta-major).  dA already includes the quadrature weights, so
    integrals are plain weighted sums.
    """

    grid: HemisphereGrid
    theta: float
    x: np.ndarray            # (N, n+1) positions in the ball
    nu: np.ndarray           # (N, n+1) outward unit normals
    dA: np.ndarray           # (N,) area weights
    shape: np.ndarray        # (N, n, n) second fundamental form, orthonormal frame
    kappa: np.ndarray        # (N, n) principal curvatures, ascending
    Hk: np.ndarray           # (N, n+1) normalized mean curvatures, Hk[:,0] = 1
    Xe_nu: np.ndarray        # (N,) <X_e, nu>
    equator_idx: np.ndarray  # node indices on the boundary circle

    @property
    def n(self):
        return self.grid.n

    @property
    def x_dot_nu(self):
        return np.sum(self.x * self.nu, axis=-1)

    @property
    def x_dot_e(self):
        return self.x[:, -1]

    @property
    def nu_dot_e(self):
        return self.nu[:, -1]

    @property
    def H(self):
        """Mean curvature H = n * H_1."""
        return self.grid.n * self.Hk[:, 1]

    def integrate(self, f):
        return float(np.sum(np.asarray(f) * self.dA))


def ball_profile(u, beta):
    """Axisymmetric ball embedding profile: x = (a(beta) xi, b(beta))."""
    rho = np.exp(u)
    q = rho ** 2 + 2.0 * rho * np.cos(beta) + 1.0
    a = 2.0 * rho * np.sin(beta) / q
    b = 1.0 - 2.0 * (rho * np.cos(beta) + 1.0) / q
    return a, b


def _pullback_normal_profile(u, ub, beta):
    """Outward ball normal of the graph, pulled back from the half-space picture.

    The half-space graph normal is nu_tilde = (z - grad u)/v; the conformal
    differential of the inverse map sends it (up to the orientation flip) to
    the ball normal, so the identity <X_e, nu> = e^w rho/v holds nodewise to
    rounding.  Returns the (radial, vertical) profile components (na, nb).
    """
    rho = np.exp(u)
    v = np.sqrt(1.0 + ub ** 2)
    sb, cb = np.sin(beta), np.cos(beta)
    # half-space point (y_r, y_z) and normal components in the profile plane
    yr, yz = rho * sb, rho * cb
    nt_r = (sb - ub * cb) / v
    nt_z = (cb + ub * sb) / v
    # differential of phi^{-1} = I_e o R at y: w -> (2/|m|^2)(Rw - 2 <Rw, m> m / |m|^2)
    mr, mz = yr, -yz - 1.0
    m2 = mr ** 2 + mz ** 2
    wr, wz = nt_r, -nt_z
    dot = (wr * mr + wz * mz) / m2
    na = -(wr - 2.0 * dot * mr)
    nb = -(wz - 2.0 * dot * mz)
    norm = np.hypot(na, nb)
    return na / norm, nb / norm


def _reconstruct_axisym(state, grid, theta):
    n = grid.n
    beta, h = grid.beta, grid.h_beta
    u = np.asarray(state.u, dtype=float)
    if u.shape != (grid.n_beta,):
        raise ValueError("state/grid shape mismatch")
    a, b = ball_profile(u, beta)
    ap = d1_profile(a, h, "odd")
    bp = d1_profile(b, h, "even")
    app = d2_profile(a, h, "odd")
    bpp = d2_profile(b, h, "even")
    speed2 = ap ** 2 + bp ** 2
    if speed2.min() < METRIC_GUARD or np.any(a[1:] <= 0.0):
        raise DegenerateMetric("profile speed or radius collapsed")
    speed = np.sqrt(speed2)
    ub = d1_profile(u, h, "even")
    na, nb = _pullback_normal_profile(u, ub, beta)
    kmer = -(app * na + bpp * nb) / speed2
    kpar = np.empty_like(kmer)
    kpar[1:] = na[1:] / a[1:]
    kpar[0] = kmer[0]  # umbilic on the axis of symmetry

    kappa = np.empty((grid.n_beta, n))
    kappa[:, 0] = kmer
    kappa[:, 1:] = kpar[:, None]
    kappa.sort(axis=1)
    Hk = normalized_mean_curvatures(kappa)
    shape = np.zeros((grid.n_beta, n, n))
    shape[:, 0, 0] = kmer
    for j in range(1, n):
        shape[:, j, j] = kpar

    dA = sphere_area(n - 1) * a ** (n - 1) * speed * grid.trapezoid_weights()

    x = np.zeros((grid.n_beta, n + 1))
    x[:, 0] = a
    x[:, -1] = b
    nu = np.zeros((grid.n_beta, n + 1))
    nu[:, 0] = na
    nu[:, -1] = nb
    # <X_e, nu> in profile variables
    Xe_nu = b * (a * na + b * nb) - 0.5 * (a ** 2 + b ** 2 + 1.0) * nb
    return SurfaceSample(grid=grid, theta=theta, x=x, nu=nu, dA=dA, shape=shape,
                         kappa=kappa, Hk=Hk, Xe_nu=Xe_nu,
                         equator_idx=np.array([grid.n_beta - 1]))


def _beta_derivative(X, h, pole_flip):
    """2nd-order d/dbeta of node fields X (n_beta, n_xi, ...) through the pole.

    ``pole_flip`` gives the azimuth permutation mapping xi -> xi + pi.
    """
    out = np.empty_like(X)
    out[1:-1] = (X[2:] - X[:-2]) / (2.0 * h)
    out[0] = (X[1] - X[1][pole_flip]) / (2.0 * h)
    out[-1] = (11.0 * X[-1] - 18.0 * X[-2] + 9.0 * X[-3] - 2.0 * X[-4]) / (6.0 * h)
    return out


def _beta_second(X, h, pole_flip):
    out = np.empty_like(X)
    h2 = h * h
    out[1:-1] = (X[2:] - 2.0 * X[1:-1] + X[:-2]) / h2
    out[0] = (X[1] - 2.0 * X[0] + X[1][pole_flip]) / h2
    w = fd_weights([-5, -4, -3, -2, -1, 0], 2, h)
    out[-1] = np.tensordot(w, X[-6:], axes=(0, 0))
    return out


def _xi_derivative(X, hxi):
    return (np.roll(X, -1, axis=1) - np.roll(X, 1, axis=1)) / (2.0 * hxi)


def _reconstruct_full2d(state, grid, theta):
    nb, nx = grid.n_beta, grid.n_xi
    h, hxi = grid.h_beta, grid.h_xi
    u = np.asarray(state.u, dtype=float)
    if u.shape != (nb, nx):
        raise ValueError("state/grid shape mismatch")
    beta = grid.beta[:, None]
    xi = grid.xi[None, :]
    rho = np.exp(u)
    # half-space points, then the inversion back to the ball
    sb, cb = np.sin(beta), np.cos(beta)
    q = rho ** 2 + 2.0 * rho * cb + 1.0
    a = 2.0 * rho * sb / q
    b = 1.0 - 2.0 * (rho * cb + 1.0) / q
    X = np.empty((nb, nx, 3))
    X[..., 0] = a * np.cos(xi)
    X[..., 1] = a * np.sin(xi)
    X[..., 2] = b

    flip = np.roll(np.arange(nx), nx // 2)
    Xb = _beta_derivative(X, h, flip)
    Xbb = _beta_second(X, h, flip)
    Xx = _xi_derivative(X, hxi)
    Xxx = (np.roll(X, -1, axis=1) - 2.0 * X + np.roll(X, 1, axis=1)) / hxi ** 2
    Xbx = _xi_derivative(Xb, hxi)

    g11 = np.sum(Xb * Xb, -1)
    g12 = np.sum(Xb * Xx, -1)
    g22 = np.sum(Xx * Xx, -1)
    detg = g11 * g22 - g12 ** 2
    if np.any(detg[1:] < METRIC_GUARD):
        raise DegenerateMetric("induced metric determinant below guard")

    # normal by conformal pullback of the half-space graph normal
    ub = _beta_derivative(u, h, flip)
    ux = _xi_derivative(u, hxi)
    tb = np.empty_like(X)   # unit beta-tangent of the sphere
    tb[..., 0] = cb * np.cos(xi)
    tb[..., 1] = cb * np.sin(xi)
    tb[..., 2] = -sb
    tx = np.empty_like(X)   # unit azimuth tangent
    tx[..., 0] = -np.sin(xi)
    tx[..., 1] = np.cos(xi)
    tx[..., 2] = 0.0
    z = np.empty_like(X)
    z[..., 0] = sb * np.cos(xi)
    z[..., 1] = sb * np.sin(xi)
    z[..., 2] = cb
    gradu = ub[..., None] * tb
    gradu[1:] += (ux[1:] / sb[1:])[..., None] * tx[1:]
    # pole gradient from through-pole differences along two meridian pairs
    gx = (u[1] - u[1][flip]) / (2.0 * h)
    gp = np.zeros((nx, 3))
    gp[:, 0] = gx * np.cos(grid.xi)
    gp[:, 1] = gx * np.sin(grid.xi)
    gradu[0] = 2.0 * gp.mean(axis=0)  # directional-derivative average halves G
    v = np.sqrt(1.0 + np.sum(gradu * gradu, -1))
    nut = (z - gradu) / v[..., None]
    # d(phi^{-1}) at y = rho z: reflect the vertical component, invert about e
    y = rho[..., None] * z
    m = y.copy()
    m[..., 2] = -m[..., 2]
    m[..., 2] -= 1.0
    m2 = np.sum(m * m, -1)
    w = nut.copy()
    w[..., 2] = -w[..., 2]
    dot = np.sum(w * m, -1) / m2
    nu = -(w - 2.0 * dot[..., None] * m)
    nu /= np.linalg.norm(nu, axis=-1)[..., None]

    h11 = -np.sum(Xbb * nu, -1)
    h12 = -np.sum(Xbx * nu, -1)
    h22 = -np.sum(Xxx * nu, -1)

    # orthonormal frame E1 = Xb/|Xb|, E2 = Gram-Schmidt of Xx
    al = 1.0 / np.sqrt(g11)
    mu12 = g12 / g11
    gam = 1.0 / np.sqrt(np.maximum(g22 - g12 ** 2 / g11, METRIC_GUARD))
    s11 = al ** 2 * h11
    s12 = al * gam * (h12 - mu12 * h11)
    s22 = gam ** 2 * (h22 - 2.0 * mu12 * h12 + mu12 ** 2 * h11)

    # pole row: Euler-formula fit of the normal curvatures over azimuths
    kn = h11[0] / g11[0]
    m0 = kn.mean()
    c2 = 2.0 * (kn * np.cos(2.0 * grid.xi)).mean()
    s2 = 2.0 * (kn * np.sin(2.0 * grid.xi)).mean()
    amp = np.hypot(c2, s2)
    s11[0] = m0 + amp
    s22[0] = m0 - amp
    s12[0] = 0.0

    half = 0.5 * (s11 + s22)
    disc = np.sqrt(np.maximum(0.25 * (s11 - s22) ** 2 + s12 ** 2, 0.0))
    k1 = half - disc
    k2 = half + disc

    wb = grid.trapezoid_weights()
    dA = np.sqrt(np.maximum(detg, 0.0)) * wb[:, None] * hxi

    Xe_nu = geometry._dot(geometry.xe_field(X), nu)

    N = nb * nx
    kappa = np.stack([k1.reshape(N), k2.reshape(N)], axis=1)
    shape = np.zeros((N, 2, 2))
    shape[:, 0, 0] = s11.reshape(N)
    shape[:, 0, 1] = shape[:, 1, 0] = s12.reshape(N)
    shape[:, 1, 1] = s22.reshape(N)
    return SurfaceSample(
        grid=grid, theta=theta,
        x=X.reshape(N, 3), nu=nu.reshape(N, 3), dA=dA.reshape(N),
        shape=shape, kappa=kappa, Hk=normalized_mean_curvatures(kappa),
        Xe_nu=Xe_nu.reshape(N),
        equator_idx=np.arange((nb - 1) * nx, nb * nx))


def reconstruct(state, grid, theta):
    """Reconstruct the embedded surface and its curvature data from u.

    Raises DegenerateMetric when the induced metric collapses below the
    guard anywhere off the coordinate pole.
    """
    if grid.mode == "axisym":
        return _reconstruct_axisym(state, grid, theta)
    return _reconstruct_full2d(state, grid, theta)


# ----------------------------------------------------------------------------
# boundary frame
# ----------------------------------------------------------------------------

@dataclass
class BoundaryFrame:
    """Frame and second fundamental forms along the boundary circle.

    mu      : outward conormal of the boundary in the surface
    nu_bar  : outward normal of the boundary curve inside the sphere S^n
    N_bar   : sphere position (x restricted to the boundary)
    h_mumu  : h(mu, mu)
    hhat    : 2nd fundamental form of the boundary in S^n  ((M, n-1, n-1))
    htilde  : 2nd fundamental form of the boundary in Sigma
    h_mu_alpha : mixed components h(mu, e_alpha)  (principal-direction check)
    grad_mu_h  : derivative of the tangential h along mu (axisym only, else None)
    """

    mu: np.ndarray
    nu_bar: np.ndarray
    N_bar: np.ndarray
    h_mumu: np.ndarray
    hhat: np.ndarray
    htilde: np.ndarray
    h_mu_alpha: np.ndarray
    grad_mu_h: np.ndarray | None = None


def _boundary_frame_axisym(sample):
    grid = sample.grid
    n = grid.n
    h = grid.h_beta
    i = grid.n_beta - 1
    # profile data at the equator
    a = sample.x[:, 0]
    b = sample.x[:, -1]
    ap = d1_profile(a, h, "odd")
    bp = d1_profile(b, h, "even")
    speed = np.sqrt(ap ** 2 + bp ** 2)
    mu = np.zeros(n + 1)
    mu[0] = ap[i] / speed[i]
    mu[-1] = bp[i] / speed[i]
    xhat = sample.x[i] / np.linalg.norm(sample.x[i])
    N_bar = xhat
    bN = xhat[-1]
    sin_phib = np.sqrt(max(1.0 - bN ** 2, 0.0))
    e = geometry.axis_vector(n + 1)
    nu_bar = (bN * xhat - e) / sin_phib
    # latitude circle: hhat = cot(phi_b) I, htilde from the circle curvature vector
    hhat_val = bN / sin_phib
    htilde_val = mu[0] / a[i]
    kmer = sample.shape[i, 0, 0]
    kpar = sample.shape[i, 1, 1]
    eye = np.eye(n - 1)
    # d/ds of the parallel curvature along the meridian, one-sided at the equator
    kpar_field = np.array([sample.shape[j, 1, 1] for j in range(grid.n_beta)])
    dk = (11.0 * kpar_field[-1] - 18.0 * kpar_field[-2]
          + 9.0 * kpar_field[-3] - 2.0 * kpar_field[-4]) / (6.0 * h)
    grad_mu_h = (dk / speed[i]) * eye
    return BoundaryFrame(
        mu=mu[None, :], nu_bar=nu_bar[None, :], N_bar=N_bar[None, :],
        h_mumu=np.array([kmer]),
        hhat=hhat_val * eye[None, :, :],
        htilde=htilde_val * eye[None, :, :],
        h_mu_alpha=np.zeros((1, n - 1)),
        grad_mu_h=grad_mu_h[None, :, :])


def _boundary_frame_full2d(sample):
    grid = sample.grid
    nb, nx = grid.n_beta, grid.n_xi
    h, hxi = grid.h_beta, grid.h_xi
    X = sample.x.reshape(nb, nx, 3)
    nu = sample.nu.reshape(nb, nx, 3)
    gamma = X[-1]                      # boundary curve
    gp = _xi_derivative(gamma[None, :, :], hxi)[0]
    gpp = (np.roll(gamma, -1, axis=0) - 2.0 * gamma + np.roll(gamma, 1, axis=0)) / hxi ** 2
    sp2 = np.sum(gp * gp, -1)
    tau = gp / np.sqrt(sp2)[:, None]
    flip = np.roll(np.arange(nx), nx // 2)
    Xb = _beta_derivative(X, h, flip)[-1]
    mu = Xb - np.sum(Xb * tau, -1)[:, None] * tau
    mu /= np.linalg.norm(mu, axis=-1)[:, None]
    xhat = gamma / np.linalg.norm(gamma, axis=-1)[:, None]
    nv = np.cross(xhat, tau)
    sign = -np.sign(np.sum(nv * np.array([0.0, 0.0, 1.0]), -1))
    nu_bar = nv * sign[:, None]
    hhat = (-np.sum(gpp * nu_bar, -1) / sp2)[:, None, None]
    htilde = (-np.sum(gpp * mu, -1) / sp2)[:, None, None]
    # surface h in the (mu, tau) frame at the boundary
    Xbb = _beta_second(X, h, flip)[-1]
    Xx = _xi_derivative(X, hxi)[-1]
    Xbx = _xi_derivative(_beta_derivative(X, h, flip), hxi)[-1]
    nub = nu[-1]
    h11 = -np.sum(Xbb * nub, -1)
    h12 = -np.sum(Xbx * nub, -1)
    h22 = -np.sum(gpp * nub, -1)
    # coordinates of mu, tau in the (Xb, Xx) basis: tau = Xx/|Xx|,
    # mu = (Xb - (Xb.tau) tau)/|..| -> mu = c1 Xb + c2 Xx
    normXx = np.sqrt(np.sum(Xx * Xx, -1))
    dotbt = np.sum(Xb * tau, -1)
    denom = np.linalg.norm(Xb - dotbt[:, None] * tau, axis=-1)
    c1 = 1.0 / denom
    c2 = -dotbt / (normXx * denom)
    h_mumu = c1 ** 2 * h11 + 2.0 * c1 * c2 * h12 + c2 ** 2 * h22
    h_mutau = (c1 * h12 + c2 * h22) / normXx
    return BoundaryFrame(
        mu=mu, nu_bar=nu_bar, N_bar=xhat,
        h_mumu=h_mumu, hhat=hhat, htilde=htilde,
        h_mu_alpha=h_mutau[:, None], grad_mu_h=None)


def boundary_frame(sample):
    """Boundary frame (mu, nu_bar, N_bar) and the three second fundamental forms."""
    if sample.grid.mode == "axisym":
        return _boundary_frame_axisym(sample)
    return _boundary_frame_full2d(sample)


def boundary_relation_residuals(sample, frame=None):
    """Residuals of the capillary boundary relations, as max-abs numbers.

    Returns a dict with keys 'angle', 'frame_N', 'principal_direction',
    'h_vs_hhat', 'htilde_vs_h', 'codazzi' (codazzi only in axisym mode).
    """
    th = sample.theta
    if frame is None:
        frame = boundary_frame(sample)
    idx = sample.equator_idx
    nu = sample.nu[idx]
    res = {}
    res["angle"] = float(np.abs(np.sum(frame.N_bar * nu, -1) + np.cos(th)).max())
    recon_N = np.sin(th) * frame.mu - np.cos(th) * nu
    res["frame_N"] = float(np.linalg.norm(recon_N - frame.N_bar, axis=-1).max())
    res["principal_direction"] = float(np.abs(frame.h_mu_alpha).max())
    n = sample.n
    eye = np.eye(n - 1)
    if sample.grid.mode == "axisym":
        h_tang = sample.shape[idx[0], 1, 1] * eye[None]
    else:
        # h(tau, tau) directly from the boundary curve
        grid = sample.grid
        nb, nx = grid.n_beta, grid.n_xi
        X = sample.x.reshape(nb, nx, 3)
        gamma = X[-1]
        gpp = (np.roll(gamma, -1, axis=0) - 2.0 * gamma + np.roll(gamma, 1, axis=0)) / grid.h_xi ** 2
        gp = _xi_derivative(gamma[None, :, :], grid.h_xi)[0]
        sp2 = np.sum(gp * gp, -1)
        h_tt = -np.sum(gpp * sample.nu[idx], -1) / sp2
        h_tang = h_tt[:, None, None] * eye[None]
    res["h_vs_hhat"] = float(np.abs(h_tang - (np.sin(th) * frame.hhat - np.cos(th) * eye[None])).max())
    res["htilde_vs_h"] = float(np.abs(frame.htilde -
                                      (h_tang / np.tan(th) + eye[None] / np.sin(th))).max())
    if frame.grad_mu_h is not None:
        expect = frame.htilde * (frame.h_mumu[:, None, None] * eye[None] - h_tang)
        res["codazzi"] = float(np.abs(frame.grad_mu_h - expect).max())
    return res
