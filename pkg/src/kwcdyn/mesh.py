"""Structured spatial discretization of the bulk domain and its boundary.

Two geometries:

* ``interval``: nx nodes on [0, lx]; the boundary is the two endpoints and
  all surface differential operators are null there.
* ``periodic_strip``: nx * ny nodes, periodic in x (no duplicated seam
  column), y in [0, ly]; the boundary is the two rows y=0 and y=ly, each a
  periodic circle, so the surface gradient is an ordinary periodic
  difference operator.

Bulk fields are node arrays; the surface unknowns are *identified with the
boundary rows* of the bulk array.  Gradients are forward differences on
directed edges, integrated with trapezoidal weights that make the constant
function integrate exactly and make the divergence below an exact negative
adjoint of the gradient (the boundary flux is absorbed into the adjoint, so
the summation-by-parts identity holds with zero explicit flux).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, ShapeError

GEOMETRIES = ("interval", "periodic_strip")


@dataclass(frozen=True)
class MeshSpec:
    geometry: str
    nx: int
    ny: int = 1
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise InvalidParameterError(f"unknown geometry {self.geometry!r}")
        if self.nx < 2:
            raise InvalidParameterError("nx must be at least 2")
        if self.geometry == "periodic_strip" and self.ny < 3:
            raise InvalidParameterError("periodic_strip needs ny >= 3")
        if self.lx <= 0.0 or self.ly <= 0.0:
            raise InvalidParameterError("physical extents must be positive")

    def as_dict(self):
        return {
            "geometry": self.geometry,
            "nx": self.nx,
            "ny": self.ny,
            "lx": self.lx,
            "ly": self.ly,
        }

    @staticmethod
    def from_dict(d) -> "MeshSpec":
        return MeshSpec(
            geometry=d["geometry"],
            nx=int(d["nx"]),
            ny=int(d.get("ny", 1)),
            lx=float(d.get("lx", 1.0)),
            ly=float(d.get("ly", 1.0)),
        )


class Mesh:
    """Immutable after construction; operator applications are pure."""

    def __init__(self, spec: MeshSpec):
        self.spec = spec
        if spec.geometry == "interval":
            self._build_interval(spec)
        else:
            self._build_strip(spec)
        self._finalize()

    # -- construction ------------------------------------------------------

    def _build_interval(self, spec):
        nx = spec.nx
        h = spec.lx / (nx - 1)
        self.n_nodes = nx
        x = np.arange(nx) * h
        self.coords = np.column_stack([x, np.zeros(nx)])
        vol = np.full(nx, h)
        vol[0] = vol[-1] = 0.5 * h
        self.node_vol = vol
        area = np.zeros(nx)
        area[0] = area[-1] = 1.0  # counting measure on the two endpoints
        self.node_area = area
        self.boundary_idx = np.array([0, nx - 1])
        self.boundary_components = [np.array([0]), np.array([nx - 1])]
        self.interior_adjacent = np.array([1, nx - 2])
        self.edge_src = np.arange(nx - 1)
        self.edge_dst = np.arange(1, nx)
        self.edge_w = np.full(nx - 1, h)
        self.edge_h = np.full(nx - 1, h)
        self.edge_axis = np.zeros(nx - 1, dtype=int)
        self.surf_src = np.zeros(0, dtype=int)
        self.surf_dst = np.zeros(0, dtype=int)
        self.surf_w = np.zeros(0)
        self.surf_h = np.zeros(0)
        # boundary node -> (edge, outward sign of the edge direction)
        self.boundary_flux_edge = np.array([0, nx - 2])
        self.boundary_flux_sign = np.array([-1.0, 1.0])

    def _build_strip(self, spec):
        nx, ny = spec.nx, spec.ny
        hx = spec.lx / nx
        hy = spec.ly / (ny - 1)
        n = nx * ny
        self.n_nodes = n

        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
        ii, jj = ii.ravel(), jj.ravel()  # node id = j*nx + i
        self.coords = np.column_stack([ii * hx, jj * hy])

        vol = np.full(n, hx * hy)
        vol[jj == 0] *= 0.5
        vol[jj == ny - 1] *= 0.5
        self.node_vol = vol
        area = np.zeros(n)
        area[jj == 0] = hx
        area[jj == ny - 1] = hx
        self.node_area = area

        bottom = np.arange(nx)
        top = (ny - 1) * nx + np.arange(nx)
        self.boundary_idx = np.concatenate([bottom, top])
        self.boundary_components = [bottom, top]
        self.interior_adjacent = np.concatenate([bottom + nx, top - nx])

        # x-edges: periodic along each row; weight follows the row's y-width
        xs = (jj * nx + ii).astype(int)
        xd = (jj * nx + (ii + 1) % nx).astype(int)
        xw = np.full(n, hx * hy)
        xw[jj == 0] *= 0.5
        xw[jj == ny - 1] *= 0.5
        # y-edges: between consecutive rows
        yj = jj[jj < ny - 1]
        yi = ii[jj < ny - 1]
        ys = (yj * nx + yi).astype(int)
        yd = ((yj + 1) * nx + yi).astype(int)
        yw = np.full(ys.size, hx * hy)

        self.edge_src = np.concatenate([xs, ys])
        self.edge_dst = np.concatenate([xd, yd])
        self.edge_w = np.concatenate([xw, yw])
        self.edge_h = np.concatenate([np.full(xs.size, hx), np.full(ys.size, hy)])
        self.edge_axis = np.concatenate(
            [np.zeros(xs.size, dtype=int), np.ones(ys.size, dtype=int)]
        )

        # surface edges: periodic differences along each boundary circle
        ssrc, sdst = [], []
        for comp in self.boundary_components:
            ssrc.append(comp)
            sdst.append(np.roll(comp, -1))
        self.surf_src = np.concatenate(ssrc)
        self.surf_dst = np.concatenate(sdst)
        self.surf_w = np.full(self.surf_src.size, hx)
        self.surf_h = np.full(self.surf_src.size, hx)

        # boundary flux: the y-edge attached to each boundary node, signed by
        # the outward normal.  y-edges start at index nx*ny in the edge list.
        yoff = n
        bottom_edges = yoff + np.arange(nx)  # (i,0)->(i,1)
        top_edges = yoff + (ny - 2) * nx + np.arange(nx)  # (i,ny-2)->(i,ny-1)
        self.boundary_flux_edge = np.concatenate([bottom_edges, top_edges])
        self.boundary_flux_sign = np.concatenate([-np.ones(nx), np.ones(nx)])

    def _finalize(self):
        n, ne = self.n_nodes, self.edge_src.size
        rows = np.concatenate([np.arange(ne), np.arange(ne)])
        cols = np.concatenate([self.edge_dst, self.edge_src])
        vals = np.concatenate([1.0 / self.edge_h, -1.0 / self.edge_h])
        self.D = sp.csr_matrix((vals, (rows, cols)), shape=(ne, n))

        # scatter half an edge weight to each endpoint (bulk quadrature split)
        rows = np.concatenate([self.edge_src, self.edge_dst])
        cols = np.concatenate([np.arange(ne), np.arange(ne)])
        vals = np.concatenate([0.5 * self.edge_w, 0.5 * self.edge_w])
        self.edge_to_node = sp.csr_matrix((vals, (rows, cols)), shape=(n, ne))
        self.node_edge_weight = np.asarray(self.edge_to_node.sum(axis=1)).ravel()

        ns = self.surf_src.size
        if ns:
            rows = np.concatenate([np.arange(ns), np.arange(ns)])
            cols = np.concatenate([self.surf_dst, self.surf_src])
            vals = np.concatenate([1.0 / self.surf_h, -1.0 / self.surf_h])
            self.Ds = sp.csr_matrix((vals, (rows, cols)), shape=(ns, n))
        else:
            self.Ds = sp.csr_matrix((0, n))

        self.mass = self.node_vol + self.node_area

    # -- operators ---------------------------------------------------------

    def _check_bulk(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise ShapeError(
                f"expected bulk field of shape ({self.n_nodes},), got {u.shape}"
            )
        return u

    def apply_gradient(self, u):
        """Forward difference along each directed edge."""
        return self.D @ self._check_bulk(u)

    def apply_surface_gradient(self, u):
        """Periodic difference along each boundary circle.

        Accepts a full bulk field or a surface field ordered like
        ``boundary_idx``.  Zero map for the interval geometry.
        """
        u = np.asarray(u, dtype=float)
        if u.shape == (self.boundary_idx.size,):
            full = np.zeros(self.n_nodes)
            full[self.boundary_idx] = u
            u = full
        elif u.shape != (self.n_nodes,):
            raise ShapeError(
                f"expected field of shape ({self.n_nodes},) or "
                f"({self.boundary_idx.size},), got {u.shape}"
            )
        return self.Ds @ u

    def divergence(self, p):
        """Negative adjoint of the gradient under the quadrature pairings."""
        p = np.asarray(p, dtype=float)
        if p.shape != (self.edge_src.size,):
            raise ShapeError(
                f"expected edge field of shape ({self.edge_src.size},), got {p.shape}"
            )
        return -(self.D.T @ (self.edge_w * p)) / self.node_vol

    def trace_interior(self, u):
        """One-sided interior limit: value at the node adjacent to each
        boundary node, ordered like ``boundary_idx``."""
        return self._check_bulk(u)[self.interior_adjacent]

    def boundary_values(self, u):
        return self._check_bulk(u)[self.boundary_idx]

    def edge_average(self, beta):
        """Arithmetic mean of a node field over each edge's endpoints."""
        beta = self._check_bulk(beta)
        return 0.5 * (beta[self.edge_src] + beta[self.edge_dst])

    def integrate_bulk(self, f):
        return float(np.dot(self.node_vol, self._check_bulk(f)))

    def integrate_surface(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape == (self.n_nodes,):
            f = f[self.boundary_idx]
        elif f.shape != (self.boundary_idx.size,):
            raise ShapeError("surface integrand has wrong shape")
        return float(np.dot(self.node_area[self.boundary_idx], f))

    # -- I/O ---------------------------------------------------------------

    def dump_field(self, path, u):
        """Row-major CSV snapshot, header ``x,y,value`` (y omitted on the
        interval)."""
        u = self._check_bulk(u)
        with open(path, "w", encoding="utf-8") as fh:
            if self.spec.geometry == "interval":
                fh.write("x,value\n")
                for x, v in zip(self.coords[:, 0], u):
                    fh.write(f"{float(x)!r},{float(v)!r}\n")
            else:
                fh.write("x,y,value\n")
                for (x, y), v in zip(self.coords, u):
                    fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")


def build_mesh(spec: MeshSpec) -> Mesh:
    return Mesh(spec)
