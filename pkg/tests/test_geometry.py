import numpy as np
import pytest
from scipy.integrate import quad

from alphalab import geometry as geo
from alphalab.errors import (
    IntegrationError,
    MetricError,
    PreconditionError,
    UnknownCatalogError,
    UnsupportedDimensionError,
)


class TestSphereQuadrature:
    def test_circle_weight_sum(self, s1):
        assert s1.weights.sum() == pytest.approx(2 * np.pi, abs=1e-12)

    def test_s2_weight_sum(self, s2_fine):
        assert abs(s2_fine.weights.sum() - 4 * np.pi) < 1e-10

    def test_s3_weight_sum(self):
        b = geo.build_sphere(3, 32)
        assert abs(b.weights.sum() - 2 * np.pi**2) < 1e-8

    def test_nodes_unit_norm(self, s2, s3):
        for b in (s2, s3):
            assert np.max(np.abs(np.linalg.norm(b.nodes, axis=1) - 1)) < 1e-12

    def test_weights_positive(self, s2, s3, t2_warp):
        for b in (s2, s3, t2_warp):
            assert np.all(b.weights > 0)

    def test_frames_orthonormal_tangent(self, s3):
        f = s3.frames
        gram = np.einsum("nij,nik->njk", f, f)
        assert np.max(np.abs(gram - np.eye(3))) < 1e-12
        assert np.max(np.abs(np.einsum("nij,ni->nj", f, s3.nodes))) < 1e-12

    def test_dimension_cap(self):
        with pytest.raises(UnsupportedDimensionError):
            geo.build_sphere(geo.SPHERE_DIM_CAP + 1, 8)
        with pytest.raises(UnsupportedDimensionError):
            geo.build_sphere(0, 8)

    def test_monte_carlo_backend(self):
        b = geo.build_sphere(4, 12, seed=7)
        vol = geo.sphere_volume(4)
        assert b.is_monte_carlo
        assert b.weights.sum() == pytest.approx(vol)
        # moment int x0^2 = Vol/(m+1), within a few standard errors
        est, err = geo.integrate_mc_error(b, b.nodes[:, 0] ** 2)
        assert abs(est - vol / 5) < 5 * err

    def test_monte_carlo_seeded(self):
        a = geo.build_sphere(4, 8, seed=3)
        b = geo.build_sphere(4, 8, seed=3)
        assert np.array_equal(a.nodes, b.nodes)


class TestTorusQuadrature:
    def test_flat_weight_sum(self, t2, t3):
        assert t2.weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert t3.weights.sum() == pytest.approx(1.0, abs=1e-14)

    def test_warp_weight_sum_vs_quadrature_oracle(self, t2_warp):
        oracle = quad(lambda x: np.sqrt(1 + 0.1 * np.sin(2 * np.pi * x)), 0, 1,
                      epsabs=1e-13)[0]
        assert t2_warp.weights.sum() == pytest.approx(oracle, abs=1e-10)

    def test_unknown_metric(self):
        with pytest.raises(UnknownCatalogError):
            geo.build_torus(2, 8, "nope")

    def test_metric_not_positive_definite(self):
        with pytest.raises(MetricError):
            geo.build_torus(2, 8, "warp1", {"eps": -1.0})


class TestMetricEvaluators:
    def test_sphere_metric_is_identity_frame(self, s2):
        assert np.array_equal(geo.metric_at(s2, 5), np.eye(2))
        assert geo.volume_density_at(s2, 5) == 1.0

    def test_warp_metric_values(self, t2_warp):
        node = int(np.argmin(np.abs(t2_warp.nodes[:, 0] - 0.25)
                             + np.abs(t2_warp.nodes[:, 1])))
        g = geo.metric_at(t2_warp, node)
        assert g[0, 0] == pytest.approx(1.1, abs=1e-12)
        assert g[1, 1] == pytest.approx(1.0, abs=1e-12)

    def test_flat_metric(self, t2):
        assert np.array_equal(geo.metric_at(t2, 3), np.eye(2))
        assert np.max(np.abs(geo.inverse_metric_at(t2, 3) - np.eye(2))) < 1e-14

    def test_metric_spd_on_grid(self, t2_warp):
        eigs = np.linalg.eigvalsh(t2_warp.metric_nodes)
        assert eigs.min() > 0


class TestChristoffel:
    def test_flat_torus_zero(self, t2):
        assert np.max(np.abs(geo.christoffel_at(t2, 5))) == 0.0

    def test_warp_gamma_vs_symbolic_oracle(self, t2_warp):
        import sympy as sy
        x, eps = sy.symbols("x eps")
        g11 = 1 + eps * sy.sin(2 * sy.pi * x)
        gamma = sy.simplify(sy.diff(g11, x) / (2 * g11))
        oracle = sy.lambdify((x, eps), gamma)
        node0 = int(np.argmin(np.abs(t2_warp.nodes[:, 0])
                              + np.abs(t2_warp.nodes[:, 1])))
        got = geo.christoffel_at(t2_warp, node0)[0, 0, 0]
        assert got == pytest.approx(float(oracle(0.0, 0.1)), abs=1e-6)
        assert got == pytest.approx(0.1 * np.pi, abs=1e-6)
        quarter = int(np.argmin(np.abs(t2_warp.nodes[:, 0] - 0.25)
                                + np.abs(t2_warp.nodes[:, 1])))
        assert abs(geo.christoffel_at(t2_warp, quarter)[0, 0, 0]) < 1e-8

    def test_christoffel_symmetric(self, t2_warp):
        gam = geo.christoffel_at(t2_warp, 7)
        assert np.max(np.abs(gam - np.transpose(gam, (0, 2, 1)))) < 1e-12

    def test_sphere_rejects_christoffel(self, s2):
        with pytest.raises(PreconditionError):
            geo.christoffel_at(s2, 0)


class TestCurvature:
    def test_sphere_ricci_constant_curvature(self, s3):
        # Ric(u, u) = (m-1)|u|^2 in the orthonormal frame
        ric = geo.ricci_at(s3, 11)
        assert np.max(np.abs(ric - 2.0 * np.eye(3))) < 1e-12

    def test_flat_torus_curvature_zero(self, t2):
        assert np.max(np.abs(geo.ricci_at(t2, 4))) == 0.0
        out = geo.riemann_apply(t2, 4, np.array([1.0, 0]), np.array([0, 1.0]),
                                np.array([0, 1.0]))
        assert np.max(np.abs(out)) == 0.0

    def test_warp_torus_is_flat(self, t2_warp):
        # the warp is a coordinate reparametrization: curvature vanishes
        assert np.max(np.abs(geo.ricci_at(t2_warp, 9))) < 1e-8

    def test_sphere_sectional_curvature_one(self, s2):
        x = s2.frames[0, :, 0]
        y = s2.frames[0, :, 1]
        out = geo.riemann_apply(s2, 0, x, y, y)
        assert np.max(np.abs(out - x)) < 1e-14

    def test_riemann_antisymmetric_first_slots(self, t2_warp):
        riem = geo.riemann_points(t2_warp, t2_warp.nodes[:4])
        assert np.max(np.abs(riem + np.transpose(riem, (0, 1, 2, 4, 3)))) < 1e-8


class TestEmbedding:
    def test_duality_at_random_nodes(self, s2):
        # <B(X,Y), V> = <A^V X, Y> for random tangents and normals
        rng = np.random.default_rng(0)
        nodes = rng.integers(0, s2.n_nodes, size=100)
        for node in nodes:
            frame = s2.frames[node]
            xv = frame @ rng.standard_normal(2)
            yv = frame @ rng.standard_normal(2)
            c = rng.standard_normal()
            x = s2.nodes[node]
            bxy = -np.dot(xv, yv) * x
            lhs = np.dot(bxy, c * x)
            data = geo.embedding_data_at(s2, int(node), xv)
            xf = frame.T @ xv
            yf = frame.T @ yv
            rhs = c * float(xf @ data.shape_operator @ yf)
            assert abs(lhs - rhs) < 1e-12

    def test_unit_vector_values(self, s2):
        v = s2.frames[3, :, 0]
        data = geo.embedding_data_at(s2, 3, v)
        assert np.dot(data.second_fundamental, data.second_fundamental) == \
            pytest.approx(1.0, abs=1e-12)
        assert data.f_max == 1.0
        assert data.theta == pytest.approx(1.0, abs=1e-12)

    def test_torus_embedding_trivial(self, t2):
        data = geo.embedding_data_at(t2, 0, np.array([1.0, 0.0]))
        assert np.all(data.second_fundamental == 0)
        assert data.theta == 0.0


class TestIntegration:
    def test_constant_on_s2(self, s2):
        assert geo.integrate(s2, np.ones(s2.n_nodes)) == pytest.approx(4 * np.pi)

    def test_z_squared_moment(self, s2):
        # closed-form moment: int x_A^2 = Vol/(m+1)
        expect = 4 * np.pi / 3
        assert abs(geo.integrate(s2, s2.nodes[:, 2] ** 2) - expect) < 1e-10

    def test_odd_mode_on_flat_torus(self, t2):
        field = np.sin(2 * np.pi * t2.nodes[:, 0])
        assert abs(geo.integrate(t2, field)) < 1e-12

    def test_nan_propagates(self, t2):
        field = np.ones(t2.n_nodes)
        field[3] = np.nan
        with pytest.raises(IntegrationError):
            geo.integrate(t2, field)

    def test_quadrature_convergence_sphere(self):
        # doubling resolution reduces the error at least 4x until the floor
        exact = 2 * np.pi * (np.e - 1 / np.e)
        errors = []
        for res in (6, 12, 24):
            b = geo.build_sphere(2, res)
            errors.append(abs(geo.integrate(b, np.exp(b.nodes[:, 2])) - exact))
        for coarse, fine in zip(errors, errors[1:]):
            assert fine < coarse / 4 or fine < 1e-10

    def test_quadrature_convergence_torus(self):
        exact = quad(lambda x: np.exp(np.sin(2 * np.pi * x)), 0, 1,
                     epsabs=1e-14)[0]
        errors = []
        for n in (4, 8, 16):
            b = geo.build_torus(1, n)
            errors.append(abs(geo.integrate(b, np.exp(np.sin(2 * np.pi * b.nodes[:, 0])))
                              - exact))
        for coarse, fine in zip(errors, errors[1:]):
            assert fine < coarse / 4 or fine < 1e-10


class TestGreatCircleEngine:
    def test_first_derivative(self, s2):
        # d/dt <a, gamma(t)> = <a, u> at t = 0
        a = np.array([0.3, -0.2, 0.9])
        got = geo.circle_derivative(lambda y: y @ a, s2.nodes, s2.frames[:, :, 0])
        assert np.max(np.abs(got - s2.frames[:, :, 0] @ a)) < 1e-11

    def test_second_derivative(self, s2):
        # d2/dt2 <a, gamma(t)> = -<a, x>
        a = np.array([0.3, -0.2, 0.9])
        got = geo.circle_second_derivative(lambda y: y @ a, s2.nodes,
                                           s2.frames[:, :, 1])
        assert np.max(np.abs(got + s2.nodes @ a)) < 1e-9

    def test_laplacian_eigenfunction(self, s2):
        # degree-1 harmonics: Laplace-Beltrami eigenvalue m
        a = np.array([1.0, 2.0, -1.0])
        lap = geo.sphere_laplacian(lambda y: y @ a, s2.nodes, s2.frames)
        assert np.max(np.abs(lap + 2.0 * (s2.nodes @ a))) < 1e-8
