"""Discrete energy functionals.

All functionals are sums over mesh edges and nodes with the quadrature
weights fixed by the mesh, and they are *the* functionals the time stepper
minimizes: the dissipation audit compares the very same numbers, so the
per-step energy inequality holds up to solver tolerance, not up to a
discretization mismatch.

Two evaluation modes exist for the orientation-angle energy: the relaxed
one (smooth ``f_delta`` edge terms plus a quadratic penalty) and the
singular one (weighted total variation plus a boundary-mismatch term that
measures the jump between the interior trace and the boundary row).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, ShapeError
from .mesh import Mesh
from .model import ModelParams, f_delta_scalar

ENERGY_CSV_HEADER = "step,t,total,eta_bulk,eta_surf,potential,weighted_len,theta_surf,mode"


@dataclass
class FieldPair:
    """One bulk field whose boundary rows carry the surface unknown.

    ``surface`` stays ``None`` while the transmission identification holds
    (always, for delta > 0); a detached surface array is only meaningful for
    singular-mode evaluation where the trace may differ from the surface
    value.
    """

    bulk: np.ndarray
    surface: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bulk = np.asarray(self.bulk, dtype=float)
        if self.surface is not None:
            self.surface = np.asarray(self.surface, dtype=float)

    def check(self, mesh: Mesh) -> "FieldPair":
        if self.bulk.shape != (mesh.n_nodes,):
            raise ShapeError(
                f"bulk field shape {self.bulk.shape} does not match mesh "
                f"({mesh.n_nodes},)"
            )
        if self.surface is not None and self.surface.shape != (mesh.boundary_idx.size,):
            raise ShapeError("detached surface field has wrong shape")
        if not np.all(np.isfinite(self.bulk)):
            raise InvalidParameterError("bulk field has non-finite entries")
        return self

    def surface_values(self, mesh: Mesh) -> np.ndarray:
        if self.surface is not None:
            return self.surface
        return self.bulk[mesh.boundary_idx]

    def copy(self) -> "FieldPair":
        return FieldPair(
            self.bulk.copy(), None if self.surface is None else self.surface.copy()
        )


@dataclass
class EnergyBreakdown:
    eta_bulk_dirichlet: float
    eta_surface_dirichlet: float
    potential_g: float
    weighted_length: float
    theta_surface_dirichlet: float
    mode: str

    @property
    def total(self) -> float:
        return (
            self.eta_bulk_dirichlet
            + self.eta_surface_dirichlet
            + self.potential_g
            + self.weighted_length
            + self.theta_surface_dirichlet
        )

    def csv_row(self, step: int, t: float) -> str:
        return (
            f"{step},{t!r},{self.total!r},{self.eta_bulk_dirichlet!r},"
            f"{self.eta_surface_dirichlet!r},{self.potential_g!r},"
            f"{self.weighted_length!r},{self.theta_surface_dirichlet!r},{self.mode}"
        )


def _check_beta(beta, mesh, positive):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (mesh.n_nodes,):
        raise ShapeError("weight field does not match mesh")
    if positive and np.any(beta <= 0.0):
        raise InvalidParameterError("weight field must be strictly positive")
    if not positive and np.any(beta < 0.0):
        raise InvalidParameterError("weight field must be nonnegative")
    return beta


def eval_phi_delta(mesh: Mesh, delta: float, beta, theta: FieldPair, kappa_gamma: float):
    """Relaxed angle energy:

        sum_e w_e [ beta_e f_delta(grad_e) + (delta^2/2) grad_e^2 ]
        + (kappa_gamma^2/2) sum_s w_s (surf grad)^2
    """
    if delta <= 0.0:
        raise InvalidParameterError("eval_phi_delta requires delta > 0")
    beta = _check_beta(beta, mesh, positive=True)
    theta.check(mesh)
    g = mesh.apply_gradient(theta.bulk)
    be = mesh.edge_average(beta)
    bulk = float(
        np.dot(mesh.edge_w, be * f_delta_scalar(delta, g) + 0.5 * delta * delta * g * g)
    )
    gs = mesh.apply_surface_gradient(theta.surface_values(mesh))
    surf = 0.5 * kappa_gamma**2 * float(np.dot(mesh.surf_w, gs * gs))
    return bulk + surf


def eval_weighted_tv(mesh: Mesh, beta, u, gamma, trace=None):
    """Weighted total variation with a boundary mismatch penalty:

        sum_e w_e beta_e |grad_e u| + sum_b area_b beta_b |tr(u)_b - gamma_b|

    ``trace`` defaults to the boundary rows of ``u`` itself; the free-energy
    evaluation passes the interior trace instead so the mismatch term sees
    the discrete jump.
    """
    beta = _check_beta(beta, mesh, positive=False)
    u = np.asarray(u, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (mesh.boundary_idx.size,):
        raise ShapeError("gamma must be a surface field")
    g = mesh.apply_gradient(u)
    be = mesh.edge_average(beta)
    bulk = float(np.dot(mesh.edge_w, be * np.abs(g)))
    tr = mesh.boundary_values(u) if trace is None else np.asarray(trace, dtype=float)
    bw = mesh.node_area[mesh.boundary_idx] * beta[mesh.boundary_idx]
    mismatch = float(np.dot(bw, np.abs(tr - gamma)))
    return bulk + mismatch


def fdelta_node_coefficients(mesh: Mesh, delta: float, theta_bulk) -> np.ndarray:
    """Per-node weights c with sum_i c_i a_i = sum_e w_e mean(a)_e f_delta(grad_e)
    for any node field a.  This is the coupling through which the relaxed
    edge-length term enters the order-parameter step, kept identical to the
    energy evaluation so the dissipation telescopes exactly."""
    g = mesh.apply_gradient(theta_bulk)
    return mesh.edge_to_node @ f_delta_scalar(delta, g)


def eval_free_energy(
    mesh: Mesh, params: ModelParams, eta: FieldPair, theta: FieldPair, mode: str = "relaxed"
) -> EnergyBreakdown:
    """Full free energy of a state, componentwise.

    relaxed:  Dirichlet terms + potentials + eval_phi_delta split into its
              edge-length part and the surface Dirichlet part.
    singular: the edge-length part is replaced by the weighted TV with the
              interior-trace jump as boundary mismatch.
    """
    if mode not in ("relaxed", "singular"):
        raise InvalidParameterError(f"unknown energy mode {mode!r}")
    eta.check(mesh)
    theta.check(mesh)

    ge = mesh.apply_gradient(eta.bulk)
    eta_bulk = 0.5 * params.kappa**2 * float(np.dot(mesh.edge_w, ge * ge))
    gse = mesh.apply_surface_gradient(eta.surface_values(mesh))
    eta_surf = 0.5 * params.epsilon**2 * float(np.dot(mesh.surf_w, gse * gse))

    potential = float(
        np.dot(mesh.node_vol, params.g_hat(eta.bulk))
        + np.dot(
            mesh.node_area[mesh.boundary_idx],
            params.g_gamma_hat(eta.surface_values(mesh)),
        )
    )

    alpha = params.alpha(eta.bulk)
    theta_surf_vals = theta.surface_values(mesh)
    gst = mesh.apply_surface_gradient(theta_surf_vals)
    theta_surf = 0.5 * params.kappa_gamma**2 * float(np.dot(mesh.surf_w, gst * gst))

    if mode == "relaxed":
        if params.delta <= 0.0:
            raise InvalidParameterError("relaxed mode requires delta > 0")
        gt = mesh.apply_gradient(theta.bulk)
        ae = mesh.edge_average(alpha)
        weighted = float(
            np.dot(
                mesh.edge_w,
                ae * f_delta_scalar(params.delta, gt)
                + 0.5 * params.delta**2 * gt * gt,
            )
        )
    else:
        weighted = eval_weighted_tv(
            mesh,
            alpha,
            theta.bulk,
            theta_surf_vals,
            trace=mesh.trace_interior(theta.bulk),
        )

    return EnergyBreakdown(
        eta_bulk_dirichlet=eta_bulk,
        eta_surface_dirichlet=eta_surf,
        potential_g=potential,
        weighted_length=weighted,
        theta_surface_dirichlet=theta_surf,
        mode=mode,
    )
