"""Discrete calculus: gradients, divergence, traces, and quadrature."""

import numpy as np
import pytest

from kwcdyn.errors import InvalidParameterError, ShapeError
from kwcdyn.mesh import MeshSpec, build_mesh


class TestConstruction:
    def test_interval_layout(self):
        m = build_mesh(MeshSpec("interval", 4, 1, 1.0, 1.0))
        assert m.n_nodes == 4
        assert np.allclose(m.coords[:, 0], [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
        assert list(m.boundary_idx) == [0, 3]
        assert np.allclose(m.node_vol, [1 / 6, 1 / 3, 1 / 3, 1 / 6])
        assert m.surf_w.size == 0

    def test_strip_layout(self):
        m = build_mesh(MeshSpec("periodic_strip", 4, 3, 1.0, 1.0))
        assert m.n_nodes == 12
        assert m.boundary_idx.size == 8
        # periodic in x: 4 horizontal edges per row, 4 vertical per column gap
        assert m.edge_w.size == 4 * 3 + 4 * 2
        assert m.node_vol.sum() == pytest.approx(1.0)
        assert m.node_area.sum() == pytest.approx(2.0)

    def test_rejects_degenerate_specs(self):
        with pytest.raises(InvalidParameterError):
            MeshSpec("interval", 1, 1, 1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            MeshSpec("periodic_strip", 4, 1, 1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            MeshSpec("triangle", 4, 4, 1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            MeshSpec("interval", 4, 1, -1.0, 1.0)

    def test_weights_positive(self, interval_mesh, strip_mesh):
        for m in (interval_mesh, strip_mesh):
            assert np.all(m.node_vol > 0)
            assert np.all(m.edge_w > 0)
            assert np.all(m.edge_h > 0)
            assert np.all(m.node_area[m.boundary_idx] > 0)


class TestGradient:
    def test_constant_has_zero_gradient(self, interval_mesh, strip_mesh):
        for m in (interval_mesh, strip_mesh):
            g = m.apply_gradient(np.full(m.n_nodes, 3.7))
            assert np.max(np.abs(g)) == 0.0

    def test_linear_slope_on_interval(self, interval_mesh):
        u = 2.0 * interval_mesh.coords[:, 0] + 1.0
        g = interval_mesh.apply_gradient(u)
        assert np.allclose(g, 2.0)

    def test_vertical_ramp_on_strip(self, strip_mesh):
        u = strip_mesh.coords[:, 1].copy()
        g = strip_mesh.apply_gradient(u)
        # slope 1 on every vertical edge, 0 on every horizontal edge
        assert set(np.round(g, 12)) <= {0.0, 1.0}
        assert np.isclose(np.abs(g).max(), 1.0)

    def test_shape_guard(self, strip_mesh):
        with pytest.raises(ShapeError):
            strip_mesh.apply_gradient(np.zeros(strip_mesh.n_nodes + 1))


class TestSurfaceOperators:
    def test_surface_gradient_of_constant_rows(self, strip_mesh):
        u = np.ones(strip_mesh.n_nodes)
        gs = strip_mesh.apply_surface_gradient(u[strip_mesh.boundary_idx])
        assert np.max(np.abs(gs)) == 0.0

    def test_surface_gradient_sees_tangential_variation(self, strip_mesh):
        u = np.sin(2 * np.pi * strip_mesh.coords[:, 0])
        gs = strip_mesh.apply_surface_gradient(u[strip_mesh.boundary_idx])
        assert np.max(np.abs(gs)) > 0.1

    def test_interval_surface_operators_are_null(self, interval_mesh):
        gs = interval_mesh.apply_surface_gradient(np.array([1.0, -2.0]))
        assert gs.size == 0


class TestTrace:
    def test_constant_trace(self, strip_mesh):
        u = np.full(strip_mesh.n_nodes, 2.5)
        assert np.allclose(strip_mesh.trace_interior(u), 2.5)

    def test_interval_trace_is_nearest_interior_value(self):
        m = build_mesh(MeshSpec("interval", 4, 1, 1.0, 1.0))
        tr = m.trace_interior(np.array([0.0, 1.0, 2.0, 3.0]))
        assert np.allclose(tr, [1.0, 2.0])

    def test_strip_trace_reads_adjacent_row(self):
        m = build_mesh(MeshSpec("periodic_strip", 4, 5, 1.0, 1.0))
        tr = m.trace_interior(m.coords[:, 1])
        assert set(np.round(tr, 12)) == {0.25, 0.75}


class TestSummationByParts:
    @pytest.mark.parametrize("geometry", ["interval", "periodic_strip"])
    def test_divergence_is_negative_adjoint(self, geometry, rng):
        spec = (
            MeshSpec("interval", 13, 1, 2.0, 1.0)
            if geometry == "interval"
            else MeshSpec("periodic_strip", 7, 6, 2.0, 1.5)
        )
        m = build_mesh(spec)
        for _ in range(25):
            u = rng.normal(size=m.n_nodes)
            p = rng.normal(size=m.edge_w.size)
            lhs = float(np.dot(m.edge_w, m.apply_gradient(u) * p))
            rhs = -float(np.dot(m.node_vol, u * m.divergence(p)))
            scale = max(1.0, abs(lhs))
            assert abs(lhs - rhs) <= 1e-12 * scale


class TestQuadrature:
    def test_bulk_constants_exact(self, interval_mesh, strip_mesh):
        assert interval_mesh.integrate_bulk(np.ones(interval_mesh.n_nodes)) == pytest.approx(
            1.0, abs=1e-14
        )
        assert strip_mesh.integrate_bulk(np.ones(strip_mesh.n_nodes)) == pytest.approx(
            1.0, abs=1e-14
        )

    def test_bulk_linears_exact(self, interval_mesh, strip_mesh):
        x = interval_mesh.coords[:, 0]
        assert interval_mesh.integrate_bulk(x) == pytest.approx(0.5, abs=1e-14)
        y = strip_mesh.coords[:, 1]
        assert strip_mesh.integrate_bulk(y) == pytest.approx(0.5, abs=1e-14)

    def test_surface_constant_exact(self, interval_mesh, strip_mesh):
        nb = interval_mesh.boundary_idx.size
        assert interval_mesh.integrate_surface(np.ones(nb)) == pytest.approx(2.0)
        nb = strip_mesh.boundary_idx.size
        assert strip_mesh.integrate_surface(np.ones(nb)) == pytest.approx(2.0)


class TestDump:
    def test_field_csv_round_trips(self, strip_mesh, tmp_path):
        u = np.arange(strip_mesh.n_nodes, dtype=float)
        path = tmp_path / "field.csv"
        strip_mesh.dump_field(path, u)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (strip_mesh.n_nodes, 3)
        assert np.allclose(data[:, 2], u)
        assert np.allclose(data[:, :2], strip_mesh.coords)
