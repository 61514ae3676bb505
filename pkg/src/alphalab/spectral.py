"""Laplace-Beltrami spectra, the rough Laplacian, and the Helmholtz split.

Sphere spectra are analytic (k(k+m-1) with standard multiplicities), with
one honest discrete Galerkin cross-check on S^2.  Torus operators are
assembled on the periodic grid with exact Fourier differentiation, so the
flat spectrum is exact and warped metrics converge spectrally.  The sign
convention is the positive (geometer's) Laplacian throughout, matching the
rough Laplacian -Tr grad^2 on vector fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import fields as fl
from . import geometry as geo
from ._harmonics import harmonic_basis, harmonic_dimension, monomial_exponents
from .errors import PreconditionError, SolverError


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    method: str                 # analytic | discrete
    resolution: int | None
    cross_check_gap: float | None = None


# ---------------------------------------------------------------------------
# torus operator plumbing


def _grid_shape(backend: geo.ManifoldBackend) -> tuple:
    return backend.grid_shape()


def _apply_laplacian(backend: geo.ManifoldBackend, kappa_flat: np.ndarray) -> np.ndarray:
    """Positive Laplace-Beltrami on grid scalars: (1/W) K kappa, batched.

    kappa_flat may be (N,) or (N, B); the operator is self-adjoint in the
    weight inner product and annihilates constants.
    """
    shape = _grid_shape(backend)
    n = backend.n_per_axis
    m = backend.m
    w = backend.weights
    ginv = backend.inv_metric_nodes
    batch = kappa_flat.reshape(shape + (-1,))
    out = np.zeros_like(batch)
    for b in range(m):
        db = geo.spectral_grid_derivative(batch, b, n)
        for a in range(m):
            flux = (w * ginv[:, a, b])[:, None] * db.reshape(-1, batch.shape[-1])
            out -= geo.spectral_grid_derivative(flux.reshape(shape + (-1,)), a, n)
    res = out.reshape(-1, batch.shape[-1]) / w[:, None]
    return res.reshape(kappa_flat.shape)


def _weighted_divergence(backend: geo.ManifoldBackend, vec_flat: np.ndarray) -> np.ndarray:
    """Adjoint-consistent divergence: -G* v = (1/W) sum_k D_k(W v^k)."""
    shape = _grid_shape(backend)
    n = backend.n_per_axis
    w = backend.weights
    out = np.zeros(backend.n_nodes)
    for k in range(backend.m):
        flux = w * vec_flat[:, k]
        out += geo.spectral_grid_derivative(flux.reshape(shape), k, n).reshape(-1)
    return out / w


def _chart_gradient(backend: geo.ManifoldBackend, kappa_flat: np.ndarray) -> np.ndarray:
    """Contravariant chart gradient g^{ab} D_b kappa, (N, m)."""
    shape = _grid_shape(backend)
    n = backend.n_per_axis
    partial = np.stack(
        [geo.spectral_grid_derivative(kappa_flat.reshape(shape), b, n).reshape(-1)
         for b in range(backend.m)], axis=1)
    return np.einsum("nab,nb->na", backend.inv_metric_nodes, partial)


def poisson_solve(backend: geo.ManifoldBackend, rhs: np.ndarray,
                  tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """CG solve of the positive discrete Laplacian, mean-zero gauge.

    The right-hand side must be weight-orthogonal to constants; the
    returned potential has zero weighted mean.
    """
    if backend.kind != "torus":
        raise PreconditionError("the CG Poisson path is for torus backends")
    w = backend.weights
    vol = float(np.sum(w))

    def wdot(a, b):
        return float(np.dot(w * a, b))

    def demean(u):
        return u - wdot(u, np.ones_like(u)) / vol

    rhs = demean(rhs)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = wdot(r, r)
    rhs_norm = np.sqrt(max(rr, 1e-300))
    max_iter = max_iter or 20 * backend.n_nodes
    for _ in range(max_iter):
        if np.sqrt(rr) <= tol * rhs_norm:
            return demean(x)
        ap = _apply_laplacian(backend, p)
        denom = wdot(p, ap)
        if denom <= 0:
            raise SolverError(f"CG broke down: p^T A p = {denom:.3e}")
        alpha = rr / denom
        x += alpha * p
        r -= alpha * ap
        rr_new = wdot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise SolverError(
        f"CG failed to converge; residual {np.sqrt(rr) / rhs_norm:.3e}")


# ---------------------------------------------------------------------------
# function spectrum


def _sphere_analytic_spectrum(m: int, count: int) -> np.ndarray:
    vals = []
    k = 0
    while len(vals) < count:
        vals.extend([float(k * (k + m - 1))] * harmonic_dimension(m + 1, k))
        k += 1
    return np.array(vals[:count])


def _sphere_discrete_check(backend: geo.ManifoldBackend, count: int) -> np.ndarray:
    """Galerkin solve in a raw polynomial space on the quadrature grid."""
    d = backend.ambient_dim
    exps = np.vstack([monomial_exponents(d, k) for k in range(0, 4)])
    pts = backend.nodes
    vals = np.ones((pts.shape[0], exps.shape[0]))
    grads = np.zeros((pts.shape[0], exps.shape[0], d))
    for col, e in enumerate(exps):
        v = np.ones(pts.shape[0])
        for a in range(d):
            if e[a]:
                v = v * pts[:, a] ** e[a]
        vals[:, col] = v
        for a in range(d):
            if e[a]:
                g = e[a] * np.ones(pts.shape[0])
                for b in range(d):
                    pw = e[b] - (1 if b == a else 0)
                    if pw:
                        g = g * pts[:, b] ** pw
                grads[:, col, a] = g
    rad = np.einsum("npa,na->np", grads, pts)
    grads = grads - rad[:, :, None] * pts[:, None, :]
    w = backend.weights
    mass = np.einsum("n,np,nq->pq", w, vals, vals)
    stiff = np.einsum("n,npa,nqa->pq", w, grads, grads)
    mv, mw = np.linalg.eigh(mass)
    keep = mv > 1e-9 * mv[-1]
    t = mw[:, keep] / np.sqrt(mv[keep])[None, :]
    evals = np.linalg.eigvalsh(t.T @ stiff @ t)
    return np.sort(evals)[:count]


def _torus_discrete_spectrum(backend: geo.ManifoldBackend, count: int) -> np.ndarray:
    n_nodes = backend.n_nodes
    if n_nodes > 4096:
        raise PreconditionError(
            "dense torus spectrum capped at 4096 nodes; lower the resolution")
    ident = np.eye(n_nodes)
    k_over_w = _apply_laplacian(backend, ident)
    kmat = backend.weights[:, None] * k_over_w
    kmat = 0.5 * (kmat + kmat.T)
    evals = np.sort(scipy.linalg.eigh(kmat, np.diag(backend.weights),
                                      eigvals_only=True))
    # Fourier differentiation annihilates the per-axis Nyquist mode on even
    # grids, so the operator kernel has 2^m known spurious dimensions beyond
    # the constants; drop them from the report.
    spurious = (2 ** backend.m - 1) if backend.n_per_axis % 2 == 0 else 0
    if spurious:
        zeros = np.flatnonzero(np.abs(evals) < 1e-8)
        if zeros.size < spurious + 1:
            raise SolverError("expected Nyquist kernel modes are missing")
        evals = np.delete(evals, zeros[1:spurious + 1])
    evals = np.where(np.abs(evals) < 1e-8, 0.0, evals)
    return evals[:count]


def function_spectrum(backend: geo.ManifoldBackend, count: int = 12,
                      cross_check: bool | None = None) -> SpectrumReport:
    """Lowest Laplace-Beltrami eigenvalues on functions.

    Spheres are analytic by catalog; S^2 additionally cross-checks the
    analytic values against a discrete Galerkin solve.  Tori assemble the
    periodic operator and solve the generalized symmetric eigenproblem.
    """
    if backend.kind == "sphere":
        vals = _sphere_analytic_spectrum(backend.m, count)
        gap = None
        if cross_check or (cross_check is None and backend.m == 2):
            k = min(count, 9)
            disc = _sphere_discrete_check(backend, k)
            gap = float(np.max(np.abs(disc - vals[:k]) / (1.0 + vals[:k])))
            if gap > 1e-3:
                raise SolverError(f"sphere spectrum cross-check gap {gap:.3e}")
        return SpectrumReport(vals, "analytic", None, gap)
    vals = _torus_discrete_spectrum(backend, count)
    return SpectrumReport(vals, "discrete", backend.n_per_axis, None)


def mu1(backend: geo.ManifoldBackend) -> float:
    """Smallest positive eigenvalue of the Laplacian on functions."""
    if backend.kind == "sphere":
        return float(backend.m)
    rep = function_spectrum(backend, count=min(backend.n_nodes, 8))
    positive = rep.eigenvalues[rep.eigenvalues > 1e-8]
    if positive.size == 0:
        raise SolverError("no positive eigenvalue found in the requested window")
    return float(positive[0])


# ---------------------------------------------------------------------------
# rough Laplacian on vector fields


def ricci_apply_all(backend: geo.ManifoldBackend, values: np.ndarray) -> np.ndarray:
    """Ricci operator applied to frame/chart vector values at every node."""
    if backend.kind == "sphere":
        return (backend.m - 1.0) * values
    riem = geo.riemann_points(backend, backend.nodes)
    ric = np.einsum("nacab->ncb", riem)
    mixed = np.einsum("nka,nab->nkb", backend.inv_metric_nodes, ric)
    return np.einsum("nkb,nb->nk", mixed, values)


def rough_laplacian_all(fieldsec: fl.TangentSection) -> np.ndarray:
    """Positive rough Laplacian -Tr_g grad^2 of a vector field on M."""
    backend = fieldsec.base_map.source
    if fieldsec.base_map.kind != "identity":
        raise PreconditionError("the rough Laplacian acts on vector fields on M")
    if backend.kind == "sphere":
        x = backend.nodes
        v = fieldsec.values
        acc = np.zeros_like(v)
        for i in range(backend.m):
            u = backend.frames[:, :, i]
            vdd = geo.circle_second_derivative(fieldsec.fn, x, u)
            acc += geo.tangent_project(x, vdd)
        # second covariant derivative along a great circle picks up (u.v) u;
        # summed over the frame that term is just v itself
        return -(acc + v)

    m = backend.m

    def t_tensor(x):
        x = np.atleast_2d(x)
        if fieldsec.chart_dfn is not None:
            dv = fieldsec.chart_dfn(x)          # (K, rep, m)
        else:
            dv = np.stack([geo.chart_offset_derivative(fieldsec.fn, x, a)
                           for a in range(m)], axis=2)
        gam = geo.christoffel_points(backend, x)
        vv = fieldsec.fn(x)
        corr = np.einsum("nkjl,nl->nkj", gam, vv)
        return dv + corr                         # T^k_j = nabla_j v^k

    t0 = t_tensor(backend.nodes)
    dt = np.stack([geo.chart_offset_derivative(t_tensor, backend.nodes, a, h=geo.H_OUTER)
                   for a in range(m)], axis=1)   # (N, i, k, j)
    gam = geo.christoffel_points(backend, backend.nodes)
    full = (dt
            + np.einsum("nkia,naj->nikj", gam, t0)
            - np.einsum("naij,nka->nikj", gam, t0))
    ginv = backend.inv_metric_nodes
    return -np.einsum("nij,nikj->nk", ginv, full)


def rough_laplacian(fieldsec: fl.TangentSection, node: int) -> np.ndarray:
    return rough_laplacian_all(fieldsec)[node]


# ---------------------------------------------------------------------------
# Helmholtz / Hodge-type splitting


@dataclass
class HelmholtzSplit:
    divergence_free: np.ndarray    # (N, rep)
    gradient: np.ndarray           # (N, rep)
    potential: np.ndarray          # (N,)
    orthogonality: float           # | int g(parts) | / ||v||^2
    reconstruction_error: float


def helmholtz_split(fieldsec: fl.TangentSection, degree_max: int = 8,
                    tol: float = 1e-10) -> HelmholtzSplit:
    """Split a vector field into a divergence-free part and a gradient.

    Spheres project the divergence onto spherical harmonics and invert the
    eigenvalues; tori solve the discrete Poisson problem by CG.  The parts
    are L2-orthogonal by construction of the adjoint system.
    """
    backend = fieldsec.base_map.source
    v = fieldsec.values
    if backend.kind == "sphere":
        div = fl.divergence_all(fieldsec)
        kappa = np.zeros(backend.n_nodes)
        grad = np.zeros_like(v)
        w = backend.weights
        for k in range(1, degree_max + 1):
            hb = harmonic_basis(backend.ambient_dim, k)
            yv = hb.values(backend.nodes)
            coeff = yv.T @ (w * div)
            if np.max(np.abs(coeff)) < 1e-14:
                continue
            ck = -coeff / hb.eigenvalue()
            kappa += yv @ ck
            grad += np.einsum("npd,p->nd", hb.sphere_gradients(backend.nodes), ck)
    else:
        # normal equations G*G kappa = G*v with G* = -(1/W) sum_k D_k(W .)
        kappa = poisson_solve(backend, -_weighted_divergence(backend, v), tol=tol)
        grad = _chart_gradient(backend, kappa)
        w = backend.weights

    df = v - grad
    if backend.kind == "sphere":
        ip = float(np.dot(w, np.einsum("nc,nc->n", df, grad)))
        nrm = float(np.dot(w, np.einsum("nc,nc->n", v, v)))
    else:
        g = backend.metric_nodes
        ip = float(np.dot(w, np.einsum("na,nab,nb->n", df, g, grad)))
        nrm = float(np.dot(w, np.einsum("na,nab,nb->n", v, g, v)))
    recon = float(np.max(np.abs(df + grad - v)))
    return HelmholtzSplit(divergence_free=df, gradient=grad, potential=kappa,
                          orthogonality=abs(ip) / max(nrm, 1e-300),
                          reconstruction_error=recon)
