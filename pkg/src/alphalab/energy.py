"""Perturbed Dirichlet energy, tension fields, and conformal deformation.

The energy density is (1 + |dpsi|^2)^alpha with alpha > 1; its critical
points have vanishing alpha-tension.  The conformal deformation factor
relates alpha-harmonicity to plain harmonicity of a rescaled source metric,
and the audit here evaluates both sides of that equivalence numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fields as fl
from . import geometry as geo
from .errors import AlphaRangeError, DegenerateMapError, PreconditionError, UnsupportedDimensionError

DEGENERACY_TOL = 1e-8
_D1_WEIGHTS = ((-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0))


def _check_alpha(alpha: float):
    if not alpha > 1.0:
        raise AlphaRangeError(f"alpha must exceed one, got {alpha}")


@dataclass
class EnergyReport:
    value: float
    density: np.ndarray
    alpha: float


@dataclass
class TensionReport:
    tension: np.ndarray        # (N, rep) tau(psi)
    alpha_tension: np.ndarray  # (N, rep) tau_alpha(psi)
    l2_norm: float
    sup_norm: float
    alpha_l2_norm: float
    alpha_sup_norm: float

    @property
    def is_alpha_harmonic(self) -> bool:
        return self.alpha_sup_norm <= 1e-6


def energy_density(mp: fl.MapField, alpha: float) -> np.ndarray:
    _check_alpha(alpha)
    return (1.0 + fl.hs_norm_sq_all(mp)) ** alpha


def alpha_energy(mp: fl.MapField, alpha: float) -> EnergyReport:
    dens = energy_density(mp, alpha)
    return EnergyReport(value=geo.integrate(mp.source, dens), density=dens, alpha=alpha)


# ---------------------------------------------------------------------------
# tension


def _chart_hessian(mp: fl.MapField) -> np.ndarray:
    """Plain second chart partials of the map values, (N, rep, ms, ms)."""
    src = mp.source
    m = src.m
    if mp.kind == "discrete":
        n = src.n_per_axis
        rep = mp.values.shape[1]
        grid = mp.values.reshape(src.grid_shape() + (rep,))
        hess = np.empty((src.n_nodes, rep, m, m))
        for i in range(m):
            hess[:, :, i, i] = geo.grid_second_derivative(grid, i, n).reshape(-1, rep)
            for j in range(i + 1, m):
                mixed = geo.grid_derivative(geo.grid_derivative(grid, i, n), j, n)
                hess[:, :, i, j] = hess[:, :, j, i] = mixed.reshape(-1, rep)
        return hess
    if mp.chart_hess is not None:
        return mp.chart_hess(src.nodes)
    rep = mp.rep_dim
    hess = np.empty((src.n_nodes, rep, m, m))
    for i in range(m):
        for j in range(i, m):
            d2 = geo.chart_offset_second_derivative(mp.chart_fn, src.nodes, i, j)
            hess[:, :, i, j] = hess[:, :, j, i] = d2
    return hess


def _raw_partial_stack(mp: fl.MapField) -> np.ndarray:
    """Unprojected chart partials d_l psi^k of a torus-source map, (N, l, k)."""
    src = mp.source
    if mp.kind == "discrete":
        stack = fl._discrete_displacement_stack(mp)
        if mp.target.kind == "torus":
            stack = stack + np.broadcast_to(mp.base_matrix.T[None, :, :], stack.shape)
        return stack
    if mp.chart_jac is not None:
        return np.transpose(mp.chart_jac(src.nodes), (0, 2, 1))
    return np.stack([geo.chart_offset_derivative(mp.chart_fn, src.nodes, a)
                     for a in range(src.m)], axis=1)


def tension_all(mp: fl.MapField) -> np.ndarray:
    """tau(psi) = Tr_g grad(d psi) at every node, target components.

    Embedded sphere targets take the tangential projection of the
    component-wise Laplace-Beltrami of the ambient coordinates.
    """
    src = mp.source
    if src.kind == "sphere":
        psi = mp.node_values()
        lap = geo.sphere_laplacian(mp.ambient_fn, src.nodes, src.frames)
        return geo.tangent_project(psi, lap) if mp.target.kind == "sphere" else lap

    gam = geo.christoffel_points(src, src.nodes)   # (N, l, i, j)
    ginv = src.inv_metric_nodes
    dpsi = _raw_partial_stack(mp)                  # (N, l, k) = d_l psi^k
    hess = _chart_hessian(mp)                      # (N, k, i, j)
    flat_part = (np.einsum("nij,nkij->nk", ginv, hess)
                 - np.einsum("nij,nlij,nlk->nk", ginv, gam, dpsi))
    if mp.target.kind == "sphere":
        psi = mp.node_values()
        return geo.tangent_project(psi, flat_part)
    gam_t = geo.christoffel_points(mp.target, mp.node_values())
    corr = np.einsum("nij,nkab,nia,njb->nk", ginv, gam_t, dpsi, dpsi)
    return flat_part + corr


def tension(mp: fl.MapField, node: int) -> np.ndarray:
    return tension_all(mp)[node]


def _scalar_factor_gradient_pushforward(mp: fl.MapField, scalar_fn) -> np.ndarray:
    """d psi (grad s) at every node for a scalar evaluator s on the source."""
    src = mp.source
    dpsi = fl.differential_stack(mp)
    if src.kind == "sphere":
        comps = np.stack(
            [geo.circle_derivative(scalar_fn, src.nodes, src.frames[:, :, i])
             for i in range(src.m)], axis=1)
        return np.einsum("ni,nic->nc", comps, dpsi)
    if mp.kind == "discrete":
        n = src.n_per_axis
        s_nodes = np.asarray(scalar_fn(src.nodes))
        grid = s_nodes.reshape(src.grid_shape())
        partial = np.stack(
            [geo.grid_derivative(grid, a, n).reshape(-1) for a in range(src.m)],
            axis=1)
    else:
        partial = np.stack(
            [geo.chart_offset_derivative(scalar_fn, src.nodes, a)
             for a in range(src.m)], axis=1)
    grad = np.einsum("nij,nj->ni", src.inv_metric_nodes, partial)
    return np.einsum("ni,nic->nc", grad, dpsi)


def alpha_tension_all(mp: fl.MapField, alpha: float) -> np.ndarray:
    """tau_alpha = 2a(1+|dpsi|^2)^(a-1) tau + dpsi(grad 2a(1+|dpsi|^2)^(a-1))."""
    _check_alpha(alpha)
    hs = fl.hs_norm_sq_all(mp)
    scal = 2.0 * alpha * (1.0 + hs) ** (alpha - 1.0)
    tau = tension_all(mp)

    if mp.kind == "discrete":
        hs_fn = lambda x: fl.hs_norm_sq_all(mp)
    else:
        hs_fn = lambda x: fl.hs_at_points(mp, x)

    def s_fn(x):
        return 2.0 * alpha * (1.0 + np.asarray(hs_fn(x))) ** (alpha - 1.0)

    push = _scalar_factor_gradient_pushforward(mp, s_fn)
    out = scal[:, None] * tau + push
    if mp.target.kind == "sphere":
        out = geo.tangent_project(mp.node_values(), out)
    return out


def alpha_tension(mp: fl.MapField, alpha: float, node: int) -> np.ndarray:
    return alpha_tension_all(mp, alpha)[node]


def tension_report(mp: fl.MapField, alpha: float) -> TensionReport:
    tau = tension_all(mp)
    tau_a = alpha_tension_all(mp, alpha)
    w = mp.source.weights

    def l2(v):
        return float(np.sqrt(np.dot(w, np.einsum("nc,nc->n", v, v))))

    def sup(v):
        return float(np.max(np.sqrt(np.einsum("nc,nc->n", v, v))))

    return TensionReport(tau, tau_a, l2(tau), sup(tau), l2(tau_a), sup(tau_a))


# ---------------------------------------------------------------------------
# conformal deformation


def _check_dimension(mp: fl.MapField, alpha: float):
    _check_alpha(alpha)
    if mp.source.m <= 2:
        raise UnsupportedDimensionError(
            "conformal deformation needs source dimension m > 2")


def _check_nondegenerate(mp: fl.MapField):
    sv = fl.smallest_singular_values(mp)
    if float(np.min(sv)) <= DEGENERACY_TOL:
        raise DegenerateMapError(
            f"map differential is degenerate (min singular value {np.min(sv):.3e})")


def conformal_factor_all(mp: fl.MapField, alpha: float) -> np.ndarray:
    """mu = (2a)^(1/(m-2)) (1+|dpsi|^2)^((a-1)/(m-2)) at every node."""
    _check_dimension(mp, alpha)
    m = mp.source.m
    hs = fl.hs_norm_sq_all(mp)
    return (2.0 * alpha) ** (1.0 / (m - 2)) * (1.0 + hs) ** ((alpha - 1.0) / (m - 2))


def conformal_factor(mp: fl.MapField, alpha: float, node: int) -> float:
    return float(conformal_factor_all(mp, alpha)[node])


def _conformal_source_twin(mp: fl.MapField, alpha: float) -> fl.MapField:
    """The same map viewed from the conformally rescaled source metric."""
    m = mp.source.m

    def mu_fn(x):
        hs = fl.hs_at_points(mp, x)
        return (2.0 * alpha) ** (1.0 / (m - 2)) * (1.0 + hs) ** ((alpha - 1.0) / (m - 2))

    base_metric = mp.source.metric_fn

    def gbar(x):
        mu = np.asarray(mu_fn(x))
        return mu[:, None, None] ** 2 * base_metric(x)

    rescaled = geo.build_torus_from_callable(
        mp.source.m, mp.source.n_per_axis, gbar,
        metric_id=f"conformal({mp.source.metric_id})", params=dict(mp.source.params))
    return fl.MapField(rescaled, mp.target, mp.kind, dict(mp.params),
                       values=mp.values, base_matrix=mp.base_matrix,
                       chart_fn=mp.chart_fn, chart_jac=mp.chart_jac,
                       chart_hess=mp.chart_hess)


def deformed_tension_all(mp: fl.MapField, alpha: float) -> np.ndarray:
    """Tension of psi with respect to the conformally related source metric.

    Torus sources rebuild the rescaled metric as its own backend and take
    the plain tension there, so the conformal-equivalence audit compares
    two genuinely independent computations.  Sphere sources (where every
    catalog map has constant |dpsi|^2) use the deformation formula.
    """
    _check_dimension(mp, alpha)
    _check_nondegenerate(mp)
    if mp.source.kind == "torus":
        twin = _conformal_source_twin(mp, alpha)
        return tension_all(twin)

    m = mp.source.m
    mu = conformal_factor_all(mp, alpha)
    tau = tension_all(mp)

    def mu_pow_fn(y):
        hs = fl.hs_at_points(mp, y)
        mu_y = (2.0 * alpha) ** (1.0 / (m - 2)) * (1.0 + hs) ** ((alpha - 1.0) / (m - 2))
        return mu_y ** (m - 2)

    push = _scalar_factor_gradient_pushforward(mp, mu_pow_fn)
    out = (mu ** (m - 2))[:, None] * tau + push
    if mp.target.kind == "sphere":
        out = geo.tangent_project(mp.node_values(), out)
    return out / (mu ** m)[:, None]


def deformed_tension(mp: fl.MapField, alpha: float, node: int) -> np.ndarray:
    return deformed_tension_all(mp, alpha)[node]


@dataclass
class ConformalAuditReport:
    residual_sup: float
    mu: np.ndarray
    lhs: np.ndarray   # mu^m tau_bar
    rhs: np.ndarray   # tau_alpha


def audit_conformal_equivalence(mp: fl.MapField, alpha: float) -> ConformalAuditReport:
    """sup-node | mu^m tau_bar - tau_alpha |, the content of the deformation identity."""
    mu = conformal_factor_all(mp, alpha)
    tau_bar = deformed_tension_all(mp, alpha)
    lhs = (mu ** mp.source.m)[:, None] * tau_bar
    rhs = alpha_tension_all(mp, alpha)
    res = float(np.max(np.sqrt(np.einsum("nc,nc->n", lhs - rhs, lhs - rhs))))
    return ConformalAuditReport(residual_sup=res, mu=mu, lhs=lhs, rhs=rhs)


# ---------------------------------------------------------------------------
# first variation


def pair_with_target_metric(mp: fl.MapField, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise h(a, b) in the target metric along the map."""
    if mp.target.kind == "sphere":
        return np.einsum("nc,nc->n", a, b)
    h = mp.target.metric_fn(mp.node_values())
    return np.einsum("na,nab,nb->n", a, h, b)


def first_variation_pairing(mp: fl.MapField, alpha: float,
                            section: fl.TangentSection,
                            step: float = 1e-3) -> tuple:
    """(FD derivative of E_alpha along the retracted ray, -int h(tau_alpha, v))."""
    _check_alpha(alpha)
    lhs = 0.0
    for off, wgt in _D1_WEIGHTS:
        pert = fl.perturbed_map(mp, section, off * step)
        lhs += wgt * alpha_energy(pert, alpha).value
    lhs /= 12.0 * step

    tau_a = alpha_tension_all(mp, alpha)
    rhs = -geo.integrate(mp.source, pair_with_target_metric(mp, tau_a, section.values))
    return float(lhs), float(rhs)
