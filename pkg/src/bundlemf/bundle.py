"""Line-bundle layer over the torus grid.

Sections are represented through the global unit frame as scalar fields; the
connection is a 1-form w with covariant derivative (du + u w).  The bundle
Laplacian reduces to the Schrodinger operator Delta_g + V with potential
V = |w|^2_g + d* w, which is what every solver in this module exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    OneForm,
    ScalarField,
    TorusGrid,
    codifferential,
    curl,
    drop_nyquist,
    exterior_derivative,
    flat_laplacian_raw,
    l2_inner,
    oneform_norm_field,
    solve_flat_poisson_raw,
)


class EigensolveError(RuntimeError):
    """Inverse iteration failed to settle within the iteration budget."""


@dataclass(frozen=True)
class Connection:
    """Connection form w together with the cached potential V = |w|^2_g + d* w."""

    omega: OneForm
    potential: ScalarField

    @property
    def n(self) -> int:
        return self.omega.n


def make_connection(omega: OneForm, grid: TorusGrid) -> Connection:
    pot = oneform_norm_field(omega, grid) + codifferential(omega, grid)
    return Connection(omega=omega, potential=pot)


@dataclass(frozen=True)
class KernelBasis:
    """Covariantly-constant sections: dimension 0 or 1, never more.

    When the connection form is exact, w = df, the kernel is spanned by
    tau1 ~ e^{-f} normalized to unit L2 norm; f carries the zero-mean gauge.
    """

    dim: int
    tau1: ScalarField | None = None
    f: ScalarField | None = None


def kernel_basis(conn: Connection, grid: TorusGrid) -> KernelBasis:
    """Classify the kernel structurally from the holonomy of the connection.

    The kernel is one-dimensional exactly when w is exact: both the scalar
    curl and the two cycle periods must vanish (up to a spectral-noise
    threshold).  Any nonzero period gives holonomy != 1 and forbids a global
    periodic solution of du + u w = 0.
    """
    w = conn.omega
    sup = max(np.max(np.abs(w.c1)), np.max(np.abs(w.c2)))
    eps = 1e-8 * (1.0 + sup)
    curl_inf = float(np.max(np.abs(curl(w, grid).values)))
    period1 = float(np.mean(w.c1))
    period2 = float(np.mean(w.c2))
    if curl_inf > eps or abs(period1) > eps or abs(period2) > eps:
        return KernelBasis(dim=0)
    # primitive of w by least squares in Fourier space, zero-mean gauge
    c1h = np.fft.rfft2(w.c1)
    c2h = np.fft.rfft2(w.c2)
    num = -1j * (grid.kx * c1h + grid.ky * c2h)
    ok = grid.k2 > 0.0
    fh = np.zeros_like(num)
    fh[ok] = num[ok] / grid.k2[ok]
    f = ScalarField(np.fft.irfft2(fh, s=w.c1.shape))
    tau = np.exp(-f.values)
    tau /= np.sqrt(np.sum(tau**2 * grid.area_element))
    return KernelBasis(dim=1, tau1=ScalarField(tau), f=f)


def project_H1(u: ScalarField, kb: KernelBasis, grid: TorusGrid) -> ScalarField:
    """L2-orthogonal projection onto the complement of the kernel."""
    if kb.dim == 0:
        return u
    coef = l2_inner(u, kb.tau1, grid)
    return ScalarField(u.values - coef * kb.tau1.values)


def bundle_energy(u: ScalarField, conn: Connection, grid: TorusGrid) -> float:
    """Covariant Dirichlet energy  int |du + u w|^2_g dv_g  >= 0."""
    du = exterior_derivative(u, grid)
    d1 = du.c1 + u.values * conn.omega.c1
    d2 = du.c2 + u.values * conn.omega.c2
    return float(np.sum(d1 * d1 + d2 * d2) * grid.h**2)


def bundle_laplacian(u: ScalarField, conn: Connection, grid: TorusGrid) -> ScalarField:
    """Delta_g u + V u, the frame-coefficient form of the bundle Laplacian."""
    from .geometry import laplacian

    return laplacian(u, grid) + ScalarField(conn.potential.values * u.values)


# ---------------------------------------------------------------------------
# linear solves with the bundle Laplacian
# ---------------------------------------------------------------------------

def _symmetrized_apply(u: np.ndarray, conn: Connection, grid: TorusGrid) -> np.ndarray:
    """e^{2v} (Delta_g + V) u = Delta_flat^+ u + e^{2v} V u, flat-self-adjoint."""
    return flat_laplacian_raw(u, grid) + (grid.exp2v * conn.potential.values) * u


def solve_bundle_poisson(rhs: ScalarField, conn: Connection, grid: TorusGrid,
                         kb: KernelBasis, tol: float = 1e-13,
                         max_iter: int = 4000) -> ScalarField:
    """Solve (Delta_g + V) u = rhs on the complement of the kernel.

    The caller must supply a right-hand side orthogonal to tau1 in L2(dv_g)
    when the kernel is one-dimensional.  The system is symmetrized with the
    flat measure and solved by conjugate gradients preconditioned with the
    exact inverse of (Delta_flat + 1); a potential-free connection on any
    conformal factor short-circuits to a direct spectral solve.
    """
    b = grid.exp2v * rhs.values

    if np.max(np.abs(conn.potential.values)) == 0.0:
        b = b - b.mean()
        return ScalarField(solve_flat_poisson_raw(b, grid))

    if kb.dim == 1:
        t = kb.tau1.values.copy()
        t /= np.linalg.norm(t)
    else:
        t = None

    # see geometry.drop_nyquist: the spectral symbol carries no stiffness on
    # the Nyquist modes, so a partly negative potential would be indefinite
    # there; the solve stays in the filtered subspace
    def deflate(z):
        z = drop_nyquist(z, grid)
        if t is not None:
            z = z - np.vdot(t, z).real * t
        return z

    def precond(z):
        return np.fft.irfft2(np.fft.rfft2(z) / (grid.k2 + 1.0), s=z.shape)

    b = deflate(b)
    x = np.zeros_like(b)
    r = b.copy()
    z = deflate(precond(r))
    p = z.copy()
    rz = np.vdot(r, z).real
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return ScalarField(x)
    for _ in range(max_iter):
        Ap = deflate(_symmetrized_apply(p, conn, grid))
        alpha = rz / np.vdot(p, Ap).real
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            break
        z = deflate(precond(r))
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    return ScalarField(x)


def poincare_constant(conn: Connection, grid: TorusGrid,
                      kb: KernelBasis | None = None, seed: int = 0,
                      tol: float = 1e-12, max_iter: int = 500) -> float:
    """1 / lambda_min of the bundle Laplacian on the discrete complement of
    the kernel, by inverse iteration with tau1 deflated."""
    if kb is None:
        kb = kernel_basis(conn, grid)
    lam, _ = smallest_eigenvalue(conn, grid, kb, seed=seed, tol=tol, max_iter=max_iter)
    if lam <= 0.0:
        raise EigensolveError(f"nonpositive smallest eigenvalue {lam}")
    return 1.0 / lam


def smallest_eigenvalue(conn: Connection, grid: TorusGrid, kb: KernelBasis,
                        seed: int = 0, tol: float = 1e-12,
                        max_iter: int = 500) -> tuple[float, ScalarField]:
    """Smallest eigenvalue of Delta_g + V restricted to the kernel complement."""
    from .geometry import drop_nyquist

    rng = np.random.default_rng(seed)
    x = ScalarField(drop_nyquist(rng.standard_normal((grid.n, grid.n)), grid))
    x = project_H1(x, kb, grid)
    x = ScalarField(x.values / np.sqrt(l2_inner(x, x, grid)))
    lam_prev = np.inf
    for _ in range(max_iter):
        y = solve_bundle_poisson(x, conn, grid, kb)
        y = project_H1(ScalarField(drop_nyquist(y.values, grid)), kb, grid)
        ny = np.sqrt(l2_inner(y, y, grid))
        if ny == 0.0:
            raise EigensolveError("inverse iteration produced the zero vector")
        x = ScalarField(y.values / ny)
        lam = bundle_energy(x, conn, grid) / l2_inner(x, x, grid)
        if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            return lam, x
        lam_prev = lam
    raise EigensolveError(f"eigensolve did not converge in {max_iter} iterations")


def dense_bundle_matrix(conn: Connection, grid: TorusGrid) -> np.ndarray:
    """Dense matrix of the bundle Laplacian in the L2(dv_g) inner product.

    Intended for small grids only (n <= 32); used as an independent oracle
    for the kernel dichotomy and the Poincare eigensolve.
    """
    n = grid.n
    N = n * n
    # matrix of the operator in nodal coordinates, then symmetrize with the
    # quadrature weights: A_sym = W^{1/2} A W^{-1/2} with W = area weights
    cols = []
    eye = np.eye(N)
    for j in range(N):
        e = ScalarField(eye[:, j].reshape(n, n))
        cols.append(bundle_laplacian(e, conn, grid).values.ravel())
    A = np.array(cols).T
    w = np.sqrt(grid.area_element.ravel())
    return A * (w[:, None] / w[None, :])
