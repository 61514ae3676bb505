"""Maps between backends, variation sections, and vector-field calculus.

A MapField is either an analytic catalog entry (identity, constant,
equator_inclusion, torus_linear, torus_wiggle) or a discrete node-value
array; a TangentSection is a section of the pullback bundle (or a vector
field on M when its base map is the identity).  Sphere-source derivatives
ride great circles; torus-source derivatives live in the periodic chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from ._harmonics import harmonic_basis
from .errors import PreconditionError, UnknownCatalogError

TANGENCY_TOL = 1e-10
CLASSIFY_TOL = 1e-8

MAP_KINDS = ("identity", "constant", "equator_inclusion", "torus_linear",
             "torus_wiggle", "discrete")


@dataclass
class MapField:
    """A map psi: M -> N between two backends.

    Representation: sphere-source maps carry an ambient evaluator on unit
    points; torus-source maps carry chart evaluators (values, Jacobian,
    Hessian for analytic kinds).  Torus-target values are stored unwrapped
    as base_matrix @ x plus a periodic displacement, so degree data stays
    explicit and finite differences never see mod-1 jumps.
    """

    source: geo.ManifoldBackend
    target: geo.ManifoldBackend
    kind: str
    params: dict = field(default_factory=dict)
    values: np.ndarray | None = None        # discrete node values (displacement / ambient)
    base_matrix: np.ndarray | None = None   # torus->torus linear part
    ambient_fn: object | None = None        # sphere source: Y (K,ds) -> (K,dt)
    chart_fn: object | None = None          # torus source: X (K,ms) -> (K,rep)
    chart_jac: object | None = None         # analytic d(psi), (K,rep,ms)
    chart_hess: object | None = None        # analytic d2(psi), (K,rep,ms,ms)

    @property
    def n_nodes(self) -> int:
        return self.source.n_nodes

    @property
    def rep_dim(self) -> int:
        """Per-node component count of target values."""
        if self.target.kind == "sphere":
            return self.target.ambient_dim
        return self.target.m

    def node_values(self) -> np.ndarray:
        """Map values at the source nodes, (N, rep)."""
        if self.kind == "discrete":
            if self.target.kind == "torus":
                return self.source.nodes @ self.base_matrix.T + self.values
            return self.values
        if self.source.kind == "sphere":
            return self.ambient_fn(self.source.nodes)
        return self.chart_fn(self.source.nodes)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.kind == "discrete":
            raise PreconditionError("discrete maps are defined at grid nodes only")
        if self.source.kind == "sphere":
            return self.ambient_fn(points)
        return self.chart_fn(points)


def _require(cond: bool, msg: str):
    if not cond:
        raise PreconditionError(msg)


def make_map(kind: str, source: geo.ManifoldBackend, target: geo.ManifoldBackend,
             **params) -> MapField:
    """Build a catalog map between two backends."""
    if kind == "identity":
        _require(source.kind == target.kind and source.m == target.m,
                 "identity map needs same-kind, same-dimension backends")
        if source.kind == "sphere":
            return MapField(source, target, kind, params,
                            ambient_fn=lambda y: np.atleast_2d(y).copy())
        m = source.m
        eye = np.eye(m)
        return MapField(
            source, target, kind, params, base_matrix=eye,
            chart_fn=lambda x: np.atleast_2d(x).copy(),
            chart_jac=lambda x: np.broadcast_to(eye, (np.atleast_2d(x).shape[0], m, m)).copy(),
            chart_hess=lambda x: np.zeros((np.atleast_2d(x).shape[0], m, m, m)),
        )

    if kind == "constant":
        point = np.asarray(params["point"], dtype=float)
        _require(point.shape[0] == (target.ambient_dim if target.kind == "sphere"
                                    else target.m),
                 "constant map point has wrong dimension")
        if target.kind == "sphere":
            point = point / np.linalg.norm(point)
        rep = point.shape[0]

        def const_eval(x):
            x = np.atleast_2d(x)
            return np.broadcast_to(point, (x.shape[0], rep)).copy()

        if source.kind == "sphere":
            return MapField(source, target, kind, {"point": point}, ambient_fn=const_eval)
        m = source.m
        return MapField(
            source, target, kind, {"point": point},
            base_matrix=np.zeros((rep, m)) if target.kind == "torus" else None,
            chart_fn=const_eval,
            chart_jac=lambda x: np.zeros((np.atleast_2d(x).shape[0], rep, m)),
            chart_hess=lambda x: np.zeros((np.atleast_2d(x).shape[0], rep, m, m)),
        )

    if kind == "equator_inclusion":
        _require(target.kind == "sphere", "equator inclusion needs a sphere target")
        dt = target.ambient_dim
        if source.kind == "sphere":
            _require(target.m == source.m + 1,
                     "equator inclusion embeds S^m into S^(m+1)")

            def incl(y):
                y = np.atleast_2d(y)
                out = np.zeros((y.shape[0], dt))
                out[:, :y.shape[1]] = y
                return out

            return MapField(source, target, kind, params, ambient_fn=incl)
        _require(source.m == 1, "chart equator inclusion takes the circle T^1")

        def wrap(x):
            x = np.atleast_2d(x)
            ang = 2.0 * np.pi * x[:, 0]
            out = np.zeros((x.shape[0], dt))
            out[:, 0] = np.cos(ang)
            out[:, 1] = np.sin(ang)
            return out

        def wrap_jac(x):
            x = np.atleast_2d(x)
            ang = 2.0 * np.pi * x[:, 0]
            out = np.zeros((x.shape[0], dt, 1))
            out[:, 0, 0] = -2.0 * np.pi * np.sin(ang)
            out[:, 1, 0] = 2.0 * np.pi * np.cos(ang)
            return out

        def wrap_hess(x):
            x = np.atleast_2d(x)
            ang = 2.0 * np.pi * x[:, 0]
            out = np.zeros((x.shape[0], dt, 1, 1))
            out[:, 0, 0, 0] = -(2.0 * np.pi) ** 2 * np.cos(ang)
            out[:, 1, 0, 0] = -(2.0 * np.pi) ** 2 * np.sin(ang)
            return out

        return MapField(source, target, kind, params, chart_fn=wrap,
                        chart_jac=wrap_jac, chart_hess=wrap_hess)

    if kind == "torus_linear":
        _require(source.kind == "torus" and target.kind == "torus",
                 "torus_linear maps tori to tori")
        mat = np.asarray(params["matrix"], dtype=float)
        _require(mat.shape == (target.m, source.m), "matrix shape mismatch")
        ms = source.m

        return MapField(
            source, target, kind, {"matrix": mat}, base_matrix=mat,
            chart_fn=lambda x: np.atleast_2d(x) @ mat.T,
            chart_jac=lambda x: np.broadcast_to(mat, (np.atleast_2d(x).shape[0],) + mat.shape).copy(),
            chart_hess=lambda x: np.zeros((np.atleast_2d(x).shape[0], mat.shape[0], ms, ms)),
        )

    if kind == "torus_wiggle":
        _require(source.kind == "torus" and target.kind == "torus"
                 and source.m == target.m, "torus_wiggle is a same-torus map")
        amp = float(params.get("amplitude", 0.1))
        freq = int(params.get("frequency", 1))
        m = source.m
        eye = np.eye(m)
        w = 2.0 * np.pi * freq

        def wig(x):
            x = np.atleast_2d(x)
            out = x.copy()
            out[:, 0] = out[:, 0] + amp * np.sin(w * x[:, 0])
            return out

        def wig_jac(x):
            x = np.atleast_2d(x)
            out = np.broadcast_to(eye, (x.shape[0], m, m)).copy()
            out[:, 0, 0] += amp * w * np.cos(w * x[:, 0])
            return out

        def wig_hess(x):
            x = np.atleast_2d(x)
            out = np.zeros((x.shape[0], m, m, m))
            out[:, 0, 0, 0] = -amp * w * w * np.sin(w * x[:, 0])
            return out

        return MapField(source, target, kind, {"amplitude": amp, "frequency": freq},
                        base_matrix=eye, chart_fn=wig, chart_jac=wig_jac,
                        chart_hess=wig_hess)

    raise UnknownCatalogError(f"unknown map kind {kind!r}")


def identity_map(backend: geo.ManifoldBackend) -> MapField:
    return make_map("identity", backend, backend)


def discretize(mp: MapField) -> MapField:
    """Sample an analytic torus-source map onto its grid as a discrete map."""
    _require(mp.source.kind == "torus",
             "discrete maps are supported with torus sources only")
    vals = mp.node_values()
    if mp.target.kind == "torus":
        base = mp.base_matrix if mp.base_matrix is not None else np.zeros(
            (mp.target.m, mp.source.m))
        disp = vals - mp.source.nodes @ base.T
        return MapField(mp.source, mp.target, "discrete",
                        {"origin": mp.kind}, values=disp, base_matrix=base)
    return MapField(mp.source, mp.target, "discrete", {"origin": mp.kind},
                    values=vals / np.linalg.norm(vals, axis=1, keepdims=True))


def discrete_from_values(source, target, values, base_matrix=None,
                         params: dict | None = None) -> MapField:
    _require(source.kind == "torus",
             "discrete maps are supported with torus sources only")
    if target.kind == "torus":
        base = base_matrix if base_matrix is not None else np.zeros((target.m, source.m))
        return MapField(source, target, "discrete", dict(params or {}),
                        values=np.array(values, dtype=float), base_matrix=np.asarray(base, dtype=float))
    vals = np.array(values, dtype=float)
    return MapField(source, target, "discrete", dict(params or {}), values=vals)


# ---------------------------------------------------------------------------
# differentials


def _grid_shaped(mp: MapField, flat: np.ndarray) -> np.ndarray:
    shape = mp.source.grid_shape() + flat.shape[1:]
    return flat.reshape(shape)


def _grid_flat(mp: MapField, grid: np.ndarray) -> np.ndarray:
    return grid.reshape((mp.source.n_nodes,) + grid.shape[mp.source.m:])


def _discrete_displacement_stack(mp: MapField) -> np.ndarray:
    """Grid-FD derivatives of the stored node values, (N, ms, rep)."""
    n = mp.source.n_per_axis
    vals = _grid_shaped(mp, mp.values)
    cols = []
    for axis in range(mp.source.m):
        cols.append(_grid_flat(mp, geo.grid_derivative(vals, axis, n)))
    return np.stack(cols, axis=1)


def differential_stack(mp: MapField) -> np.ndarray:
    """d(psi) at every node: (N, ms, rep) columns along the working frame.

    Sphere sources: columns are d(psi)(u_i) for the orthonormal tangent
    frame u_i, ambient target components.  Torus sources: columns are
    d(psi)(d/dx^i) in chart components.
    """
    src = mp.source
    if mp.kind == "discrete":
        dstack = _discrete_displacement_stack(mp)
        if mp.target.kind == "torus":
            return dstack + np.broadcast_to(
                mp.base_matrix.T[None, :, :], dstack.shape).copy()
        vals = mp.values
        rad = np.einsum("nic,nc->ni", dstack, vals)
        return dstack - rad[:, :, None] * vals[:, None, :]
    if src.kind == "torus":
        jac = mp.chart_jac
        if jac is not None:
            return np.transpose(jac(src.nodes), (0, 2, 1))
        cols = []
        for axis in range(src.m):
            cols.append(geo.chart_offset_derivative(mp.chart_fn, src.nodes, axis))
        stack = np.stack(cols, axis=1)
        if mp.target.kind == "sphere":
            vals = mp.node_values()
            rad = np.einsum("nic,nc->ni", stack, vals)
            stack = stack - rad[:, :, None] * vals[:, None, :]
        return stack
    # sphere source
    if mp.kind == "identity":
        return np.transpose(src.frames, (0, 2, 1))
    if mp.kind == "constant":
        return np.zeros((src.n_nodes, src.m, mp.rep_dim))
    if mp.kind == "equator_inclusion":
        out = np.zeros((src.n_nodes, src.m, mp.rep_dim))
        out[:, :, :src.ambient_dim] = np.transpose(src.frames, (0, 2, 1))
        return out
    return differential_stack_at_points(mp, src.nodes, src.frames)


def differential_stack_at_points(mp: MapField, points: np.ndarray,
                                 frames: np.ndarray) -> np.ndarray:
    """Generic sphere-source differential via great-circle FD, any unit points."""
    vals = mp.ambient_fn(points)
    cols = []
    for i in range(frames.shape[2]):
        d = geo.circle_derivative(mp.ambient_fn, points, frames[:, :, i])
        rad = np.einsum("nc,nc->n", d, vals)
        cols.append(d - rad[:, None] * vals)
    return np.stack(cols, axis=1)


def _target_metric_at_values(mp: MapField, vals: np.ndarray) -> np.ndarray:
    return mp.target.metric_fn(vals)


def hs_norm_sq_all(mp: MapField) -> np.ndarray:
    """Hilbert-Schmidt norm squared of the differential at every node."""
    stack = differential_stack(mp)
    if mp.target.kind == "sphere":
        pair = np.einsum("nic,njc->nij", stack, stack)
    else:
        h = _target_metric_at_values(mp, mp.node_values())
        pair = np.einsum("nia,nab,njb->nij", stack, h, stack)
    if mp.source.kind == "sphere":
        return np.einsum("nii->n", pair)
    return np.einsum("nij,nij->n", mp.source.inv_metric_nodes, pair)


def hs_norm_sq(mp: MapField, node: int) -> float:
    return float(hs_norm_sq_all(mp)[node])


def hs_at_points(mp: MapField, points: np.ndarray) -> np.ndarray:
    """|d psi|^2 at arbitrary source points (analytic maps)."""
    if mp.source.kind == "sphere":
        frames = geo.sphere_frames(points)
        stack = differential_stack_at_points(mp, points, frames)
        return np.einsum("nic,nic->n", stack, stack)
    jac = mp.chart_jac
    x = np.atleast_2d(points)
    if jac is not None:
        stack = np.transpose(jac(x), (0, 2, 1))
    else:
        stack = np.stack([geo.chart_offset_derivative(mp.chart_fn, x, a)
                          for a in range(mp.source.m)], axis=1)
    ginv = np.linalg.inv(mp.source.metric_fn(x))
    if mp.target.kind == "sphere":
        pair = np.einsum("nic,njc->nij", stack, stack)
    else:
        h = mp.target.metric_fn(mp.chart_fn(x))
        pair = np.einsum("nia,nab,njb->nij", stack, h, stack)
    return np.einsum("nij,nij->n", ginv, pair)


def differential_at(mp: MapField, node: int) -> np.ndarray:
    """d(psi) at one node as a (rep, ms) matrix acting on frame components."""
    return differential_stack(mp)[node].T


def smallest_singular_values(mp: MapField) -> np.ndarray:
    """Per-node smallest singular value of d(psi) (degeneracy probe)."""
    stack = differential_stack(mp)
    return np.linalg.svd(stack, compute_uv=False)[:, -1]


# ---------------------------------------------------------------------------
# tangent sections


@dataclass
class TangentSection:
    """Section of psi^{-1}TN (or a vector field on M over the identity)."""

    base_map: MapField
    fn: object | None = None          # source points -> (K, rep) vectors
    values: np.ndarray | None = None  # cached node values (N, rep)
    chart_dfn: object | None = None   # analytic chart derivative (K, rep, ms)
    conformal_potential_fn: object | None = None
    label: str = ""

    def __post_init__(self):
        if self.values is None:
            src = self.base_map.source
            self.values = np.asarray(self.fn(src.nodes), dtype=float)

    @property
    def backend(self) -> geo.ManifoldBackend:
        return self.base_map.source

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.fn is None:
            raise PreconditionError("discrete section has node values only")
        return self.fn(points)

    def scaled(self, c: float) -> "TangentSection":
        fn = None if self.fn is None else (lambda y, f=self.fn, c=c: c * f(y))
        dfn = None if self.chart_dfn is None else (
            lambda y, f=self.chart_dfn, c=c: c * f(y))
        return TangentSection(self.base_map, fn=fn, values=c * self.values,
                              chart_dfn=dfn, label=self.label)


def section_from_callable(mp: MapField, fn, chart_dfn=None, label: str = "",
                          conformal_potential_fn=None) -> TangentSection:
    return TangentSection(mp, fn=fn, chart_dfn=chart_dfn, label=label,
                          conformal_potential_fn=conformal_potential_fn)


def section_from_values(mp: MapField, values, label: str = "") -> TangentSection:
    return TangentSection(mp, values=np.asarray(values, dtype=float), label=label)


def combine_sections(sections, coeffs, label: str = "") -> TangentSection:
    """Linear combination of analytic sections over a common base map."""
    coeffs = np.asarray(coeffs, dtype=float)
    base = sections[0].base_map
    fns = [s.fn for s in sections]
    if any(f is None for f in fns):
        vals = sum(c * s.values for c, s in zip(coeffs, sections))
        return TangentSection(base, values=vals, label=label)

    def combo(y, fns=fns, coeffs=coeffs):
        acc = None
        for c, f in zip(coeffs, fns):
            v = c * np.asarray(f(y))
            acc = v if acc is None else acc + v
        return acc

    dfns = [s.chart_dfn for s in sections]
    dcombo = None
    if all(d is not None for d in dfns):
        def dcombo(y, dfns=dfns, coeffs=coeffs):
            acc = None
            for c, f in zip(coeffs, dfns):
                v = c * np.asarray(f(y))
                acc = v if acc is None else acc + v
            return acc

    return TangentSection(base, fn=combo, chart_dfn=dcombo, label=label)


def tangency_residual(section: TangentSection) -> float:
    """Max |<v, normal>| over nodes for embedded sphere targets."""
    mp = section.base_map
    if mp.target.kind != "sphere":
        return 0.0
    vals = mp.node_values()
    return float(np.max(np.abs(np.einsum("nc,nc->n", section.values, vals))))


# catalog vector fields on M -------------------------------------------------


def rotation_field(backend: geo.ManifoldBackend, a: int = 0, b: int = 1,
                   matrix=None) -> TangentSection:
    """Killing rotation generator on a sphere: x -> A x with A skew."""
    d = backend.ambient_dim
    if matrix is None:
        mat = np.zeros((d, d))
        mat[a, b] = -1.0
        mat[b, a] = 1.0
    else:
        mat = np.asarray(matrix, dtype=float)
        if np.max(np.abs(mat + mat.T)) > 1e-14:
            raise PreconditionError("rotation generator must be skew-symmetric")
    return section_from_callable(
        identity_map(backend), lambda y: np.atleast_2d(y) @ mat.T,
        label=f"rotation[{a},{b}]" if matrix is None else "rotation",
    )


def conformal_field(backend: geo.ManifoldBackend, a=0) -> TangentSection:
    """Conformal gradient field grad<a, x> on S^m, potential -<a, x>."""
    d = backend.ambient_dim
    if np.isscalar(a):
        avec = np.zeros(d)
        avec[int(a)] = 1.0
    else:
        avec = np.asarray(a, dtype=float)

    def fn(y):
        y = np.atleast_2d(y)
        return avec[None, :] - (y @ avec)[:, None] * y

    return section_from_callable(
        identity_map(backend), fn, label=f"conformal[{a}]",
        conformal_potential_fn=lambda y: -(np.atleast_2d(y) @ avec),
    )


def ambient_frame_field(mp: MapField, axis: int) -> TangentSection:
    """Projected ambient coordinate frame omega_A^T along a sphere-target map."""
    _require(mp.target.kind == "sphere",
             "ambient frames need an embedded sphere target")
    d = mp.rep_dim
    e = np.zeros(d)
    e[axis] = 1.0

    if mp.kind == "discrete":
        vals = mp.node_values()
        proj = e[None, :] - vals[:, axis:axis + 1] * vals
        return section_from_values(mp, proj, label=f"frame[{axis}]")

    def fn(points):
        psi = mp.evaluate(points)
        return e[None, :] - psi[:, axis:axis + 1] * psi

    return section_from_callable(mp, fn, label=f"frame[{axis}]")


def constant_normal_section(mp: MapField, vec) -> TangentSection:
    """Constant ambient vector as a section along a sphere-target map.

    Useful for totally geodesic inclusions where the vector is tangent to
    the target along the whole image (e.g. the pole direction over an
    equator); tangency is asserted at the nodes.
    """
    _require(mp.target.kind == "sphere", "needs an embedded sphere target")
    v = np.asarray(vec, dtype=float)

    def fn(points):
        pts = np.atleast_2d(points)
        return np.broadcast_to(v, (pts.shape[0], v.shape[0])).copy()

    sec = section_from_callable(mp, fn, label="constant_normal")
    if tangency_residual(sec) > TANGENCY_TOL:
        raise PreconditionError("constant vector is not tangent along the map image")
    return sec


def harmonic_gradient_field(backend: geo.ManifoldBackend, degree: int,
                            index: int) -> TangentSection:
    """grad of the index-th orthonormal degree-k spherical harmonic."""
    hb = harmonic_basis(backend.ambient_dim, degree)

    def fn(y):
        return hb.sphere_gradients(np.atleast_2d(y))[:, index, :]

    return section_from_callable(identity_map(backend), fn,
                                 label=f"grad_Y[{degree},{index}]")


def fourier_field(backend: geo.ManifoldBackend, kvec, parity: str,
                  direction: int) -> TangentSection:
    """cos/sin(2 pi k.x) times a coordinate direction on a torus."""
    kv = np.asarray(kvec, dtype=float)
    m = backend.m
    e = np.zeros(m)
    e[direction] = 1.0
    w = 2.0 * np.pi

    if parity == "cos":
        amp, damp = np.cos, lambda t: -np.sin(t)
    elif parity == "sin":
        amp, damp = np.sin, np.cos
    else:
        raise UnknownCatalogError(f"unknown parity {parity!r}")

    def fn(x):
        x = np.atleast_2d(x)
        return amp(w * (x @ kv))[:, None] * e[None, :]

    def dfn(x):
        x = np.atleast_2d(x)
        scal = damp(w * (x @ kv)) * w
        return scal[:, None, None] * e[None, :, None] * kv[None, None, :]

    return section_from_callable(identity_map(backend), fn, chart_dfn=dfn,
                                 label=f"fourier[{parity},{tuple(int(k) for k in kv)},{direction}]")


def constant_field(backend: geo.ManifoldBackend, vec) -> TangentSection:
    v = np.asarray(vec, dtype=float)

    def fn(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(v, (x.shape[0], v.shape[0])).copy()

    def dfn(x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], v.shape[0], backend.m))

    return section_from_callable(identity_map(backend), fn, chart_dfn=dfn,
                                 label="constant")


def perturbed_map(mp: MapField, section: TangentSection, t: float) -> MapField:
    """Retraction of psi + t v: normalization for sphere targets, additive in chart."""
    if mp.kind == "discrete":
        if mp.target.kind == "sphere":
            vals = mp.values + t * section.values
            vals = vals / np.linalg.norm(vals, axis=1, keepdims=True)
            return MapField(mp.source, mp.target, "discrete", {"origin": "perturbed"},
                            values=vals)
        return MapField(mp.source, mp.target, "discrete", {"origin": "perturbed"},
                        values=mp.values + t * section.values,
                        base_matrix=mp.base_matrix)

    _require(section.fn is not None, "perturbing an analytic map needs an analytic section")
    if mp.target.kind == "sphere":
        base_eval = mp.ambient_fn if mp.source.kind == "sphere" else mp.chart_fn

        def ev(points, base=base_eval, vf=section.fn, t=t):
            raw = base(points) + t * vf(points)
            return raw / np.linalg.norm(raw, axis=1, keepdims=True)

        if mp.source.kind == "sphere":
            return MapField(mp.source, mp.target, mp.kind + "+perturbation",
                            ambient_fn=ev)
        return MapField(mp.source, mp.target, mp.kind + "+perturbation", chart_fn=ev)

    def ev(points, base=mp.chart_fn, vf=section.fn, t=t):
        return base(points) + t * vf(points)

    return MapField(mp.source, mp.target, mp.kind + "+perturbation", chart_fn=ev,
                    base_matrix=mp.base_matrix)


# ---------------------------------------------------------------------------
# covariant derivatives


def _section_chart_partials(mp: MapField, section: TangentSection) -> np.ndarray:
    """Plain chart partials of a torus-source section, (N, ms, rep)."""
    src = mp.source
    if section.chart_dfn is not None:
        return np.transpose(section.chart_dfn(src.nodes), (0, 2, 1))
    if section.fn is not None:
        return np.stack(
            [geo.chart_offset_derivative(section.fn, src.nodes, a)
             for a in range(src.m)], axis=1)
    n = src.n_per_axis
    grid = section.values.reshape(src.grid_shape() + section.values.shape[1:])
    return np.stack(
        [geo.grid_derivative(grid, a, n).reshape(section.values.shape)
         for a in range(src.m)], axis=1)


def section_derivative_stack(mp: MapField, section: TangentSection) -> np.ndarray:
    """Pullback covariant derivative of a section along every frame direction.

    Returns (N, ms, rep): sphere sources differentiate along great circles
    and project to the target tangent space; torus sources add the target
    Christoffel correction (or ambient projection for sphere targets).
    """
    src = mp.source
    if src.kind == "sphere":
        psi = mp.node_values()
        cols = []
        for i in range(src.m):
            d = geo.circle_derivative(section.fn, src.nodes, src.frames[:, :, i])
            rad = np.einsum("nc,nc->n", d, psi)
            cols.append(d - rad[:, None] * psi)
        return np.stack(cols, axis=1)

    partials = _section_chart_partials(mp, section)
    if mp.target.kind == "sphere":
        psi = mp.node_values()
        rad = np.einsum("nic,nc->ni", partials, psi)
        return partials - rad[:, :, None] * psi[:, None, :]
    vals = mp.node_values()
    gam = geo.christoffel_points(mp.target, vals)
    dpsi = differential_stack(mp)
    corr = np.einsum("nkab,nia,nb->nik", gam, dpsi, section.values)
    return partials + corr


def pullback_covariant_derivative(mp: MapField, section: TangentSection,
                                  direction: int, node: int | None = None):
    """nabla_{e_i} of a section; all nodes (default) or a single node."""
    stack = section_derivative_stack(mp, section)
    if node is None:
        return stack[:, direction, :]
    return stack[node, direction, :]


# ---------------------------------------------------------------------------
# Lie derivative, divergence, classification (vector fields on M)


def _field_on_m(fieldsec: TangentSection) -> geo.ManifoldBackend:
    mp = fieldsec.base_map
    _require(mp.kind == "identity", "vector-field calculus needs a field on M")
    return mp.source


def covariant_frame_derivatives(fieldsec: TangentSection) -> np.ndarray:
    """nabla_i X^j in the working frame, (N, m, m): row i = direction."""
    backend = _field_on_m(fieldsec)
    if backend.kind == "sphere":
        cols = []
        for i in range(backend.m):
            d = geo.circle_derivative(fieldsec.fn, backend.nodes,
                                      backend.frames[:, :, i])
            cols.append(np.einsum("nc,ncj->nj", d, backend.frames))
        return np.stack(cols, axis=1)
    partials = _section_chart_partials(fieldsec.base_map, fieldsec)
    gam = geo.christoffel_points(backend, backend.nodes)
    corr = np.einsum("nkil,nl->nik", gam, fieldsec.values)
    return partials + corr


def lie_derivative_all(fieldsec: TangentSection) -> np.ndarray:
    """(L_X g)(e_i, e_j) at every node, (N, m, m)."""
    backend = _field_on_m(fieldsec)
    nab = covariant_frame_derivatives(fieldsec)
    if backend.kind == "sphere":
        return nab + np.transpose(nab, (0, 2, 1))
    g = backend.metric_nodes
    low = np.einsum("nik,nkj->nij", nab, g)
    return low + np.transpose(low, (0, 2, 1))


def lie_derivative(fieldsec: TangentSection, node: int) -> np.ndarray:
    return lie_derivative_all(fieldsec)[node]


def divergence_all(fieldsec: TangentSection) -> np.ndarray:
    nab = covariant_frame_derivatives(fieldsec)
    return np.einsum("nii->n", nab)


def divergence(fieldsec: TangentSection, node: int) -> float:
    return float(divergence_all(fieldsec)[node])


def lie_norm_sq_all(fieldsec: TangentSection) -> np.ndarray:
    """|L_X g|^2 at every node (full tensor norm)."""
    backend = _field_on_m(fieldsec)
    lie = lie_derivative_all(fieldsec)
    if backend.kind == "sphere":
        return np.einsum("nij,nij->n", lie, lie)
    ginv = backend.inv_metric_nodes
    up = np.einsum("nia,nab,nbj->nij", ginv, lie, ginv)
    return np.einsum("nij,nij->n", up, lie)


@dataclass
class FieldClassification:
    kind: str                     # killing | conformal | generic
    potential: np.ndarray         # per-node lambda (div X / m)
    killing_residual: float
    conformal_residual: float


def classify_field(fieldsec: TangentSection,
                   tol: float = CLASSIFY_TOL) -> FieldClassification:
    """Killing / conformal / generic classification via L_X g = 2 lambda g."""
    backend = _field_on_m(fieldsec)
    lie = lie_derivative_all(fieldsec)
    div = divergence_all(fieldsec)
    lam = div / backend.m
    if backend.kind == "sphere":
        g = np.broadcast_to(np.eye(backend.m), lie.shape)
    else:
        g = backend.metric_nodes
    killing_res = float(np.max(np.abs(lie)))
    conf_res = float(np.max(np.abs(lie - 2.0 * lam[:, None, None] * g)))
    if killing_res <= tol:
        kind = "killing"
    elif conf_res <= tol:
        kind = "conformal"
    else:
        kind = "generic"
    return FieldClassification(kind, lam, killing_res, conf_res)


# ---------------------------------------------------------------------------
# non-existence audit (divergence identity for conformal fields)


@dataclass
class NonexistenceAudit:
    div_direct: np.ndarray
    div_closed: np.ndarray
    residual_sup: float
    integral: float


def _omega_sharp_evaluator(mp: MapField, target_field: TangentSection, alpha: float):
    """Analytic evaluator of the 1-form dual field on M."""
    if mp.source.kind == "sphere":
        def w(points):
            points = np.atleast_2d(points)
            frames = geo.sphere_frames(points)
            stack = differential_stack_at_points(mp, points, frames)
            psi = mp.ambient_fn(points)
            xv = target_field.fn(psi)
            hs = np.einsum("nic,nic->n", stack, stack)
            scal = (1.0 + hs) ** alpha
            comp = np.einsum("nc,nic->ni", xv, stack)
            return scal[:, None] * np.einsum("ni,ndi->nd", comp, frames)
        return w

    def w(points):
        points = np.atleast_2d(points)
        jac = mp.chart_jac(points)    # (K, rep, ms)
        stack = np.transpose(jac, (0, 2, 1))
        psi = mp.chart_fn(points)
        xv = target_field.fn(psi)
        ginv = np.linalg.inv(mp.source.metric_fn(points))
        if mp.target.kind == "sphere":
            h_pair = np.einsum("nc,nic->ni", xv, stack)
            hs = np.einsum("nij,nia,nja->n", ginv,  stack, stack)
        else:
            h = mp.target.metric_fn(psi)
            h_pair = np.einsum("na,nab,nib->ni", xv, h, stack)
            hs = np.einsum("nij,nia,nab,njb->n", ginv, stack, h, stack)
        scal = (1.0 + hs) ** alpha
        return scal[:, None] * np.einsum("nij,nj->ni", ginv, h_pair)
    return w


def divergence_of_evaluator(backend: geo.ManifoldBackend, fn) -> np.ndarray:
    """div of an analytic vector-field evaluator at the backend nodes."""
    if backend.kind == "sphere":
        out = np.zeros(backend.n_nodes)
        for i in range(backend.m):
            u = backend.frames[:, :, i]
            d = geo.circle_derivative(fn, backend.nodes, u)
            out += np.einsum("nc,nc->n", d, u)
        return out
    partials = np.stack(
        [geo.chart_offset_derivative(fn, backend.nodes, a)
         for a in range(backend.m)], axis=1)
    gam = geo.christoffel_points(backend, backend.nodes)
    vals = fn(backend.nodes)
    return np.einsum("nii->n", partials) + np.einsum("niil,nl->n", gam, vals)


def nonexistence_audit(mp: MapField, target_field: TangentSection, alpha: float,
                       harmonic_tol: float = 1e-6) -> NonexistenceAudit:
    """Audit the divergence identity behind the conformal non-existence theorem.

    Computes div of omega(Y) = h(X o psi, (1+|dpsi|^2)^alpha dpsi(Y)) directly
    and compares with the closed form lambda(psi(x)) |dpsi|^2 (1+|dpsi|^2)^alpha.
    The integral of the direct divergence is returned (it must vanish on a
    closed manifold).
    """
    from . import energy as _energy  # local import to avoid a module cycle

    tau_a = _energy.alpha_tension_all(mp, alpha)
    sup = float(np.max(np.abs(tau_a))) if tau_a.size else 0.0
    if sup > harmonic_tol:
        raise PreconditionError(
            f"map is not alpha-harmonic: sup |tau_alpha| = {sup:.3e}")

    cls = classify_field(target_field)
    if cls.kind == "generic":
        raise PreconditionError("target field does not classify as conformal")

    w = _omega_sharp_evaluator(mp, target_field, alpha)
    div_direct = divergence_of_evaluator(mp.source, w)

    psi = mp.node_values()
    if target_field.conformal_potential_fn is not None:
        lam = np.asarray(target_field.conformal_potential_fn(psi)).reshape(-1)
    elif cls.kind == "killing":
        lam = np.zeros(mp.n_nodes)
    else:
        raise PreconditionError(
            "conformal field needs an analytic potential for the closed form")
    hs = hs_norm_sq_all(mp)
    div_closed = lam * hs * (1.0 + hs) ** alpha

    return NonexistenceAudit(
        div_direct=div_direct,
        div_closed=div_closed,
        residual_sup=float(np.max(np.abs(div_direct - div_closed))),
        integral=geo.integrate(mp.source, div_direct),
    )
