"""Compact manifolds realized as node/weight/evaluator bundles.

Two backends: the round sphere S^m embedded in (m+1)-space, and the flat or
catalog-perturbed torus T^m on a periodic chart grid.  Sphere differential
geometry uses the ambient-projection formalism (derivatives along great
circles, P = I - x x^T), so no chart atlas is ever needed; torus geometry
lives in the periodic chart where central finite differences are benign.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from .errors import (
    IntegrationError,
    MetricError,
    PreconditionError,
    UnknownCatalogError,
    UnsupportedDimensionError,
)

SPHERE_DIM_CAP = 16

# Finite-difference steps.  H1: first derivatives along great circles /
# chart offsets (truncation ~1e-12 * |f^(5)|).  H2: second derivatives
# (larger step keeps the 1/h^2 roundoff amplification at bay).  H_METRIC:
# 4th-order central differences of catalog metrics; H_OUTER: the nested
# step used when differentiating Christoffel symbols.
H1 = 1e-3
H2 = 1e-2
H_METRIC = 1e-3
H_OUTER = 3e-3

_D1_OFFSETS = (-2.0, -1.0, 1.0, 2.0)
_D1_WEIGHTS = (1.0, -8.0, 8.0, -1.0)  # divide by 12 h
_D2_OFFSETS = (-2.0, -1.0, 0.0, 1.0, 2.0)
_D2_WEIGHTS = (-1.0, 16.0, -30.0, 16.0, -1.0)  # divide by 12 h^2


def sphere_volume(m: int) -> float:
    """Closed-form volume of the unit round sphere S^m."""
    return 2.0 * pi ** ((m + 1) / 2.0) / gamma((m + 1) / 2.0)


@dataclass
class ManifoldBackend:
    """A compact manifold as quadrature nodes plus metric/curvature evaluators.

    Immutable after construction; every evaluator is a pure function of the
    stored arrays, so backends are safe to share across threads.
    """

    kind: str                 # "sphere" | "torus"
    m: int
    nodes: np.ndarray         # sphere: (N, m+1) unit ambient; torus: (N, m) in [0,1)^m
    weights: np.ndarray       # (N,) positive quadrature weights
    metric_id: str | None = None
    params: dict = field(default_factory=dict)
    frames: np.ndarray | None = None       # sphere: (N, m+1, m) orthonormal tangent
    metric_fn: object | None = None        # torus: X (K,m) -> (K,m,m)
    n_per_axis: int | None = None
    seed: int | None = None
    is_monte_carlo: bool = False
    metric_nodes: np.ndarray | None = None
    inv_metric_nodes: np.ndarray | None = None
    sqrt_det_nodes: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.nodes.shape[1]

    def grid_shape(self) -> tuple:
        if self.kind != "torus":
            raise PreconditionError("grid shape only defined for torus backends")
        return (self.n_per_axis,) * self.m


def sphere_frames(points: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frames at unit points, (K, d, d-1).

    Householder construction: deterministic, vectorized, no polar
    singularities.  Frames are per-point (not smooth in x), which is fine
    for every pointwise, frame-independent quantity computed here.
    """
    pts = np.atleast_2d(points)
    k, d = pts.shape
    s = np.where(pts[:, 0] < 0.0, -1.0, 1.0)
    v = pts.copy()
    v[:, 0] += s
    vv = np.einsum("ki,ki->k", v, v)
    h = np.eye(d)[None, :, :] - 2.0 * v[:, :, None] * v[:, None, :] / vv[:, None, None]
    frames = h[:, :, 1:]
    if points.ndim == 1:
        return frames[0]
    return frames


def circle_point(x: np.ndarray, u: np.ndarray, t: float) -> np.ndarray:
    """Point at arc length t along the great circle through x with velocity u."""
    return np.cos(t) * x + np.sin(t) * u


def circle_derivative(fn, x: np.ndarray, u: np.ndarray, h: float = H1) -> np.ndarray:
    """d/dt fn(circle(t)) at t=0, 4th-order central stencil."""
    acc = None
    for c, off in zip(_D1_WEIGHTS, _D1_OFFSETS):
        val = c * np.asarray(fn(circle_point(x, u, off * h)))
        acc = val if acc is None else acc + val
    return acc / (12.0 * h)


def circle_second_derivative(fn, x: np.ndarray, u: np.ndarray, h: float = H2) -> np.ndarray:
    """d^2/dt^2 fn(circle(t)) at t=0, 4th-order central stencil."""
    acc = None
    for c, off in zip(_D2_WEIGHTS, _D2_OFFSETS):
        val = c * np.asarray(fn(circle_point(x, u, off * h)))
        acc = val if acc is None else acc + val
    return acc / (12.0 * h * h)


def tangent_project(points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Project ambient vectors onto the sphere tangent spaces at points."""
    rad = np.einsum("...i,...i->...", points, vectors)
    return vectors - rad[..., None] * points


def sphere_scalar_gradient(fn, points: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Intrinsic gradient of a scalar evaluator at unit points, ambient components."""
    grad = np.zeros_like(points)
    for i in range(frames.shape[2]):
        u = frames[:, :, i]
        grad += circle_derivative(fn, points, u)[:, None] * u
    return grad


def sphere_laplacian(fn, points: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Component-wise Laplace-Beltrami of an evaluator via geodesic second derivatives."""
    acc = None
    for i in range(frames.shape[2]):
        u = frames[:, :, i]
        val = circle_second_derivative(fn, points, u)
        acc = val if acc is None else acc + val
    return acc


def chart_offset_derivative(fn, x: np.ndarray, axis: int, h: float = H1) -> np.ndarray:
    """d/dx_axis fn(x) on a periodic chart, 4th-order central stencil."""
    acc = None
    for c, off in zip(_D1_WEIGHTS, _D1_OFFSETS):
        xs = x.copy()
        xs[..., axis] += off * h
        val = c * np.asarray(fn(xs))
        acc = val if acc is None else acc + val
    return acc / (12.0 * h)


def chart_offset_second_derivative(fn, x: np.ndarray, axis_i: int, axis_j: int,
                                   h: float = H2) -> np.ndarray:
    """Mixed second partial of fn on a periodic chart."""
    if axis_i == axis_j:
        acc = None
        for c, off in zip(_D2_WEIGHTS, _D2_OFFSETS):
            xs = x.copy()
            xs[..., axis_i] += off * h
            val = c * np.asarray(fn(xs))
            acc = val if acc is None else acc + val
        return acc / (12.0 * h * h)

    def dfi(xs):
        return chart_offset_derivative(fn, xs, axis_i, h=h)

    return chart_offset_derivative(dfi, x, axis_j, h=h)


def grid_derivative(values: np.ndarray, axis: int, n: int) -> np.ndarray:
    """4th-order periodic FD along a grid axis of spacing 1/n."""
    h = 1.0 / n
    return (-np.roll(values, -2, axis=axis) + 8.0 * np.roll(values, -1, axis=axis)
            - 8.0 * np.roll(values, 1, axis=axis) + np.roll(values, 2, axis=axis)) / (12.0 * h)


def grid_second_derivative(values: np.ndarray, axis: int, n: int) -> np.ndarray:
    """4th-order periodic FD second derivative along a grid axis of spacing 1/n."""
    h = 1.0 / n
    return (-np.roll(values, -2, axis=axis) + 16.0 * np.roll(values, -1, axis=axis)
            - 30.0 * values
            + 16.0 * np.roll(values, 1, axis=axis) - np.roll(values, 2, axis=axis)) / (12.0 * h * h)


def grid_nyquist_filter(values: np.ndarray, axis: int, n: int) -> np.ndarray:
    """Zero the per-axis Nyquist mode (even n): the null mode of periodic FD.

    Central differences are blind to the checkerboard mode, so nonlinear
    updates can silently accumulate it; filtering keeps grid states inside
    the subspace the discrete energy actually sees.
    """
    if n % 2 != 0:
        return values
    coeff = np.fft.fft(values, axis=axis)
    idx = [slice(None)] * values.ndim
    idx[axis] = n // 2
    coeff[tuple(idx)] = 0.0
    return np.real(np.fft.ifft(coeff, axis=axis))


def spectral_grid_derivative(values: np.ndarray, axis: int, n: int) -> np.ndarray:
    """Exact Fourier differentiation along a periodic grid axis (period 1)."""
    freq = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        freq = freq.copy()
        freq[n // 2] = 0.0  # derivative of the Nyquist mode is conventionally zero
    shape = [1] * values.ndim
    shape[axis] = n
    symbol = (2.0j * pi * freq).reshape(shape)
    return np.real(np.fft.ifft(symbol * np.fft.fft(values, axis=axis), axis=axis))


# ---------------------------------------------------------------------------
# metric catalog


def _metric_flat(m: int):
    def fn(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(m), (x.shape[0], m, m)).copy()
    return fn


def _metric_warp1(m: int, eps: float):
    def fn(x):
        x = np.atleast_2d(x)
        g = np.broadcast_to(np.eye(m), (x.shape[0], m, m)).copy()
        g[:, 0, 0] = 1.0 + eps * np.sin(2.0 * pi * x[:, 0])
        return g
    return fn


def torus_metric_fn(m: int, metric_id: str, params: dict | None):
    params = dict(params or {})
    if metric_id == "flat":
        return _metric_flat(m)
    if metric_id == "warp1":
        eps = float(params.get("eps", 0.0))
        if abs(eps) >= 1.0:
            raise MetricError(f"warp1 metric with eps={eps} is not positive definite")
        return _metric_warp1(m, eps)
    raise UnknownCatalogError(f"unknown torus metric_id {metric_id!r}")


# ---------------------------------------------------------------------------
# builders


def build_sphere(m: int, resolution: int, seed: int = 0) -> ManifoldBackend:
    """Round unit sphere S^m with quadrature nodes and weights.

    m = 1, 2, 3 use product rules (uniform angle, Gauss-Legendre in polar
    cosines, Gauss-Chebyshev-II for the sin^2 factor on S^3) whose weight
    sums equal the closed-form volume to machine precision.  m >= 4 uses
    seeded Monte Carlo nodes with equal weights Vol/N, N = resolution^3.
    """
    if m < 1:
        raise UnsupportedDimensionError(f"sphere dimension must be >= 1, got {m}")
    if m > SPHERE_DIM_CAP:
        raise UnsupportedDimensionError(
            f"sphere dimension {m} exceeds the supported cap {SPHERE_DIM_CAP}")
    if resolution < 4:
        raise PreconditionError("sphere resolution must be at least 4")

    if m == 1:
        theta = 2.0 * pi * np.arange(resolution) / resolution
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        weights = np.full(resolution, 2.0 * pi / resolution)
        mc = False
    elif m == 2:
        z, wz = np.polynomial.legendre.leggauss(resolution)
        nphi = 2 * resolution
        phi = 2.0 * pi * np.arange(nphi) / nphi
        zz, pp = np.meshgrid(z, phi, indexing="ij")
        wzz, _ = np.meshgrid(wz, phi, indexing="ij")
        r = np.sqrt(np.clip(1.0 - zz**2, 0.0, None))
        nodes = np.stack([r * np.cos(pp), r * np.sin(pp), zz], axis=-1).reshape(-1, 3)
        weights = (wzz * (2.0 * pi / nphi)).reshape(-1)
        mc = False
    elif m == 3:
        k = np.arange(1, resolution + 1)
        u = np.cos(k * pi / (resolution + 1))
        wu = (pi / (resolution + 1)) * np.sin(k * pi / (resolution + 1)) ** 2
        v, wv = np.polynomial.legendre.leggauss(resolution)
        nphi = 2 * resolution
        phi = 2.0 * pi * np.arange(nphi) / nphi
        uu, vv, pp = np.meshgrid(u, v, phi, indexing="ij")
        wuu, wvv, _ = np.meshgrid(wu, wv, phi, indexing="ij")
        s1 = np.sqrt(np.clip(1.0 - uu**2, 0.0, None))
        s2 = np.sqrt(np.clip(1.0 - vv**2, 0.0, None))
        nodes = np.stack(
            [uu, s1 * vv, s1 * s2 * np.cos(pp), s1 * s2 * np.sin(pp)], axis=-1
        ).reshape(-1, 4)
        weights = (wuu * wvv * (2.0 * pi / nphi)).reshape(-1)
        mc = False
    else:
        rng = np.random.default_rng(seed)
        n = resolution**3
        raw = rng.standard_normal((n, m + 1))
        nodes = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        weights = np.full(n, sphere_volume(m) / n)
        mc = True

    norms = np.linalg.norm(nodes, axis=1)
    nodes = nodes / norms[:, None]
    return ManifoldBackend(
        kind="sphere", m=m, nodes=nodes, weights=weights, seed=seed,
        frames=sphere_frames(nodes), is_monte_carlo=mc,
    )


def build_torus(m: int, n_per_axis: int, metric_id: str = "flat",
                params: dict | None = None) -> ManifoldBackend:
    """Periodic chart torus T^m = [0,1)^m with a catalog metric."""
    fn = torus_metric_fn(m, metric_id, params)
    return build_torus_from_callable(m, n_per_axis, fn, metric_id=metric_id,
                                     params=dict(params or {}))


def build_torus_from_callable(m: int, n_per_axis: int, metric_fn,
                              metric_id: str = "custom",
                              params: dict | None = None) -> ManifoldBackend:
    """Torus backend over an arbitrary smooth periodic metric callable."""
    if m < 1:
        raise UnsupportedDimensionError(f"torus dimension must be >= 1, got {m}")
    if n_per_axis < 4:
        raise PreconditionError("torus grid needs at least 4 nodes per axis")
    axes = [np.arange(n_per_axis) / n_per_axis for _ in range(m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([c.reshape(-1) for c in mesh], axis=1)
    g = metric_fn(nodes)
    eigs = np.linalg.eigvalsh(g)
    if np.min(eigs) <= 0.0:
        raise MetricError("metric matrix is not positive definite on the grid")
    det = np.linalg.det(g)
    sqrt_det = np.sqrt(det)
    weights = sqrt_det / n_per_axis**m
    return ManifoldBackend(
        kind="torus", m=m, nodes=nodes, weights=weights, metric_id=metric_id,
        params=dict(params or {}), metric_fn=metric_fn, n_per_axis=n_per_axis,
        metric_nodes=g, inv_metric_nodes=np.linalg.inv(g), sqrt_det_nodes=sqrt_det,
    )


# ---------------------------------------------------------------------------
# metric evaluators


def metric_at(backend: ManifoldBackend, node: int) -> np.ndarray:
    """Metric matrix in the working frame (orthonormal for spheres)."""
    if backend.kind == "sphere":
        return np.eye(backend.m)
    return backend.metric_nodes[node].copy()


def inverse_metric_at(backend: ManifoldBackend, node: int) -> np.ndarray:
    if backend.kind == "sphere":
        return np.eye(backend.m)
    return backend.inv_metric_nodes[node].copy()


def volume_density_at(backend: ManifoldBackend, node: int) -> float:
    if backend.kind == "sphere":
        return 1.0
    return float(backend.sqrt_det_nodes[node])


def metric_points(backend: ManifoldBackend, x: np.ndarray) -> np.ndarray:
    """Metric at arbitrary chart points (torus only)."""
    if backend.kind != "torus":
        raise PreconditionError("metric_points is chart-based (torus backends)")
    return backend.metric_fn(x)


# ---------------------------------------------------------------------------
# Christoffel symbols and curvature


def christoffel_points(backend: ManifoldBackend, x: np.ndarray,
                       h: float = H_METRIC) -> np.ndarray:
    """Gamma^k_ij at chart points, (K, m, m, m), from 4th-order FD of the metric."""
    if backend.kind != "torus":
        raise PreconditionError(
            "christoffel symbols are chart quantities; sphere backends use "
            "the ambient-projection covariant derivative")
    x = np.atleast_2d(x)
    m = backend.m
    g = backend.metric_fn(x)
    ginv = np.linalg.inv(g)
    dg = np.empty((x.shape[0], m, m, m))  # dg[:, l, i, j] = d_l g_ij
    for axis in range(m):
        dg[:, axis] = chart_offset_derivative(backend.metric_fn, x, axis, h=h)
    # sym[:, i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    sym = dg + dg.transpose(0, 2, 1, 3) - dg.transpose(0, 2, 3, 1)
    return 0.5 * np.einsum("xkl,xijl->xkij", ginv, sym)


def christoffel_at(backend: ManifoldBackend, node: int) -> np.ndarray:
    return christoffel_points(backend, backend.nodes[node:node + 1])[0]


def riemann_points(backend: ManifoldBackend, x: np.ndarray) -> np.ndarray:
    """R^l_{c a b} at chart points (R(d_a, d_b) d_c = R^l_{cab} d_l), torus only."""
    x = np.atleast_2d(x)
    m = backend.m

    def gamma(xs):
        return christoffel_points(backend, xs)

    dgam = np.empty((x.shape[0], m, m, m, m))  # [:, a, k, i, j] = d_a Gamma^k_ij
    for axis in range(m):
        dgam[:, axis] = chart_offset_derivative(gamma, x, axis, h=H_OUTER)
    g0 = gamma(x)
    quad = np.einsum("xlam,xmbc->xlcab", g0, g0)
    riem = (dgam.transpose(0, 2, 4, 1, 3) - dgam.transpose(0, 2, 4, 3, 1)
            + quad - quad.transpose(0, 1, 2, 4, 3))
    # index layout: [:, l, c, a, b]
    return riem


def riemann_apply(backend: ManifoldBackend, node: int, xv: np.ndarray,
                  yv: np.ndarray, zv: np.ndarray) -> np.ndarray:
    """Curvature action R(X, Y)Z at a node.

    Sphere backends use the constant-curvature closed form on ambient
    tangent vectors; torus backends contract the FD Riemann tensor on
    chart components.
    """
    if backend.kind == "sphere":
        return np.dot(yv, zv) * xv - np.dot(xv, zv) * yv
    riem = riemann_points(backend, backend.nodes[node:node + 1])[0]
    return np.einsum("lcab,a,b,c->l", riem, xv, yv, zv)


def ricci_at(backend: ManifoldBackend, node: int) -> np.ndarray:
    """Ricci tensor at a node: frame components (sphere) or chart components (torus)."""
    if backend.kind == "sphere":
        return (backend.m - 1.0) * np.eye(backend.m)
    riem = riemann_points(backend, backend.nodes[node:node + 1])[0]
    return np.einsum("acab->cb", riem)


@dataclass
class CurvatureData:
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray


def curvature_data_at(backend: ManifoldBackend, node: int) -> CurvatureData:
    if backend.kind == "sphere":
        m = backend.m
        frames = backend.frames[node]
        eye = np.eye(m)
        riem = (np.einsum("ac,lb->lcab", eye, eye) - np.einsum("bc,la->lcab", eye, eye))
        return CurvatureData(christoffel=np.zeros((m, m, m)), riemann=riem,
                             ricci=(m - 1.0) * eye)
    return CurvatureData(
        christoffel=christoffel_at(backend, node),
        riemann=riemann_points(backend, backend.nodes[node:node + 1])[0],
        ricci=ricci_at(backend, node),
    )


# ---------------------------------------------------------------------------
# embedding data (sphere in ambient space)


@dataclass
class EmbeddingData:
    second_fundamental: np.ndarray   # B(v, v), ambient components
    shape_operator: np.ndarray       # A^x in the tangent frame (unit outward normal)
    f_max: float                     # max |B(u,u)|^2 over unit u
    theta: float                     # sum_a |B(v, v_a)|^2


def embedding_data_at(backend: ManifoldBackend, node: int, v: np.ndarray) -> EmbeddingData:
    """Second-fundamental-form package of the standard embedding.

    For S^m in R^{m+1}: B(X,Y) = -<X,Y> x with x the outward unit normal,
    so the shape operator is -I, f = 1 and theta(v) = |v|^2.  Flat tori are
    totally geodesic in their chart product, so everything is zero.
    """
    m = backend.m
    if backend.kind == "torus":
        return EmbeddingData(np.zeros(m), np.zeros((m, m)), 0.0, 0.0)
    x = backend.nodes[node]
    vsq = float(np.dot(v, v))
    return EmbeddingData(
        second_fundamental=-vsq * x,
        shape_operator=-np.eye(m),
        f_max=1.0,
        theta=vsq,
    )


# ---------------------------------------------------------------------------
# integration


def integrate(backend: ManifoldBackend, values: np.ndarray) -> float:
    """Quadrature of a per-node scalar field; deterministic summation order."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != backend.n_nodes:
        raise PreconditionError("field length does not match node count")
    if np.any(np.isnan(values)):
        raise IntegrationError("NaN encountered in integrand")
    return float(np.dot(backend.weights, values))


def integrate_mc_error(backend: ManifoldBackend, values: np.ndarray) -> tuple:
    """(estimate, standard error) for Monte Carlo backends."""
    if not backend.is_monte_carlo:
        raise PreconditionError("standard error is only reported for Monte Carlo nodes")
    est = integrate(backend, values)
    vol = float(np.sum(backend.weights))
    stderr = vol * float(np.std(values)) / np.sqrt(backend.n_nodes)
    return est, stderr
