"""Implicit time stepper: two convex minimizations per step.

Each step first updates the orientation angle theta by minimizing

    (1/2 tau) || A0(eta_prev)^(1/2) (theta - theta_prev) ||_H^2
        + Phi_delta(alpha(eta_prev); theta)

and then updates the order parameter eta by minimizing

    (1/2 tau) || eta - eta_prev ||_H^2 + Dirichlet(eta) + potentials(eta)
        + sum_i c_i alpha(eta_i),   c = f_delta edge-length weights of theta

where both objectives are built from exactly the functionals the energy
module evaluates.  Summing the two minimizer inequalities telescopes into
the per-step dissipation inequality, so the audit measures solver slack
only, never a discretization mismatch.

The theta objective is smooth and strictly convex (the edge terms carry a
delta^2 quadratic); it is solved by a lagged-diffusivity fixed point.  Each
inner system is the exact minimizer of a quadratic majorizer touching the
objective at the current iterate (concavity of sqrt in its argument), so
the objective decreases monotonically.  The eta objective is smooth and
strictly convex for tau < tau_star; it is solved by damped Newton.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import ENERGY_CSV_HEADER, EnergyBreakdown, FieldPair, eval_free_energy, fdelta_node_coefficients
from .errors import (
    ConvergenceError,
    InvalidInitialDataError,
    InvalidParameterError,
    StepSizeError,
)
from .mesh import Mesh, build_mesh
from .model import ModelParams


@dataclass
class SolverOptions:
    tol_inner: float = 1e-10
    max_outer: int = 200
    cg_tol: float = 1e-12
    cg_max_iter: int = 10000
    linear_solver: str = "auto"  # auto | direct | cg
    direct_threshold: int = 4096
    newton_max_halvings: int = 60
    anderson_depth: int = 5


@dataclass
class SolveStats:
    outer_iterations: int = 0
    inner_linear_iterations: int = 0
    final_residual_inf_norm: float = 0.0
    objective_decrease: float = 0.0
    wall_time: float = 0.0


@dataclass
class State:
    eta: FieldPair
    theta: FieldPair
    step_index: int = 0
    time: float = 0.0

    def copy(self) -> "State":
        return State(self.eta.copy(), self.theta.copy(), self.step_index, self.time)


@dataclass
class Trajectory:
    """States 0..n with per-step solver statistics and energy breakdowns.

    ``stats[i]`` is the (theta, eta) pair of SolveStats for the step
    producing state i+1; ``energies[i]`` is the relaxed-mode breakdown of
    state i, so ``energies`` has one more entry than ``stats``.
    """

    params: ModelParams
    states: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    energies: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def save(self, path):
        eta = np.stack([s.eta.bulk for s in self.states])
        theta = np.stack([s.theta.bulk for s in self.states])
        np.savez_compressed(
            path,
            eta=eta,
            theta=theta,
            times=np.array([s.time for s in self.states]),
            params_json=np.array(json.dumps(self.params.as_dict())),
        )

    @staticmethod
    def load(path) -> "Trajectory":
        with np.load(path, allow_pickle=False) as data:
            params = ModelParams.from_dict(json.loads(str(data["params_json"])))
            eta, theta, times = data["eta"], data["theta"], data["times"]
        states = [
            State(FieldPair(e.copy()), FieldPair(t.copy()), i, float(tt))
            for i, (e, t, tt) in enumerate(zip(eta, theta, times))
        ]
        return Trajectory(params=params, states=states)

    def recompute_energies(self, mesh: Mesh):
        self.energies = [
            eval_free_energy(mesh, self.params, s.eta, s.theta, mode="relaxed")
            for s in self.states
        ]

    def export_energy_csv(self, path, mesh: Mesh):
        """One row per state with the energy breakdown, the two dissipation
        terms of the step that produced the state, the dissipation-inequality
        slack, and the inner-iteration counts."""
        if len(self.energies) != len(self.states):
            self.recompute_energies(mesh)
        tau = self.params.tau
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                ENERGY_CSV_HEADER
                + ",diss_eta,diss_theta,slack,theta_outer_iters,eta_outer_iters\n"
            )
            for i, (s, e) in enumerate(zip(self.states, self.energies)):
                if i == 0:
                    extra = ",0.0,0.0,0.0,0,0"
                else:
                    prev = self.states[i - 1]
                    de = prev.eta.bulk - s.eta.bulk
                    dt = prev.theta.bulk - s.theta.bulk
                    ma = time_weight_mass(mesh, self.params, prev.eta.bulk)
                    diss_eta = float(np.dot(mesh.mass, de * de)) / (2.0 * tau)
                    diss_theta = float(np.dot(ma, dt * dt)) / (2.0 * tau)
                    slack = self.energies[i - 1].total - (
                        diss_eta + diss_theta + e.total
                    )
                    if i - 1 < len(self.stats):
                        ts, es = self.stats[i - 1]
                        iters = f",{ts.outer_iterations},{es.outer_iterations}"
                    else:
                        iters = ",0,0"
                    extra = f",{diss_eta!r},{diss_theta!r},{slack!r}" + iters
                fh.write(e.csv_row(s.step_index, s.time) + extra + "\n")


def time_weight_mass(mesh: Mesh, params: ModelParams, eta_bulk) -> np.ndarray:
    """Node weights of the weighted H inner product governing the theta
    step: alpha0(eta) on the bulk measure plus alpha_gamma0(eta) on the
    surface measure (zero off the boundary rows)."""
    ma = params.alpha0(eta_bulk) * mesh.node_vol
    b = mesh.boundary_idx
    ma[b] += params.alpha_gamma0(eta_bulk[b]) * mesh.node_area[b]
    return ma


# -- linear solves -----------------------------------------------------------


def _solve_spd(A: sp.csr_matrix, b: np.ndarray, x0, opts: SolverOptions):
    """Solve the SPD system, returning (x, linear iteration count)."""
    n = b.size
    mode = opts.linear_solver
    if mode == "auto":
        mode = "direct" if n <= opts.direct_threshold else "cg"
    if mode == "direct":
        return spla.splu(A.tocsc()).solve(b), 1
    count = [0]

    def cb(_):
        count[0] += 1

    M = sp.diags(1.0 / A.diagonal())
    try:
        x, info = spla.cg(
            A, b, x0=x0, rtol=opts.cg_tol, atol=0.0, maxiter=opts.cg_max_iter, M=M, callback=cb
        )
    except TypeError:
        x, info = spla.cg(
            A, b, x0=x0, tol=opts.cg_tol, atol=0.0, maxiter=opts.cg_max_iter, M=M, callback=cb
        )
    if info != 0:
        raise ConvergenceError(f"conjugate gradients failed (info={info})", best=x)
    return x, count[0]


# -- theta step --------------------------------------------------------------


def theta_objective(mesh: Mesh, params: ModelParams, eta_prev, theta_prev, theta):
    """Value of the theta-step objective at a bulk field ``theta``."""
    from .energy import eval_phi_delta

    d = np.asarray(theta, dtype=float) - np.asarray(theta_prev, dtype=float)
    ma = time_weight_mass(mesh, params, np.asarray(eta_prev, dtype=float))
    quad = float(np.dot(ma, d * d)) / (2.0 * params.tau)
    return quad + eval_phi_delta(
        mesh, params.delta, params.alpha(np.asarray(eta_prev, dtype=float)),
        FieldPair(np.asarray(theta, dtype=float)), params.kappa_gamma,
    )


def theta_objective_grad(mesh: Mesh, params: ModelParams, eta_prev, theta_prev, theta):
    """Gradient of the theta-step objective with respect to ``theta``."""
    eta_prev = np.asarray(eta_prev, dtype=float)
    theta = np.asarray(theta, dtype=float)
    theta_prev = np.asarray(theta_prev, dtype=float)
    ma = time_weight_mass(mesh, params, eta_prev)
    g = mesh.apply_gradient(theta)
    be = mesh.edge_average(params.alpha(eta_prev))
    d2 = params.delta * params.delta
    edge_force = mesh.edge_w * (be * g / np.sqrt(d2 + g * g) + d2 * g)
    grad = ma * (theta - theta_prev) / params.tau + mesh.D.T @ edge_force
    gs = mesh.apply_surface_gradient(theta)
    grad += params.kappa_gamma**2 * (mesh.Ds.T @ (mesh.surf_w * gs))
    return grad


def theta_step(
    mesh: Mesh,
    params: ModelParams,
    eta_prev: FieldPair,
    theta_prev: FieldPair,
    opts: Optional[SolverOptions] = None,
    initial_guess=None,
):
    """Minimize the theta objective by the lagged-diffusivity fixed point
    with safeguarded Anderson mixing.

    Each outer iteration solves the SPD system whose solution minimizes the
    quadratic majorizer of the objective at the current iterate; that plain
    step never increases the objective.  The pure fixed point contracts
    only linearly, with a rate that degrades as delta shrinks, so the
    iterates are extrapolated from the last few residuals (Anderson depth
    opts.anderson_depth); the extrapolated point is accepted only when it
    shrinks the gradient norm below the plain step's, otherwise the plain
    step is kept.  The loop stops when the
    infinity norm of the true gradient falls below tol_inner (relative to
    its value at the starting point, floored at 1)."""
    opts = opts or SolverOptions()
    eta_prev.check(mesh)
    theta_prev.check(mesh)
    ep = eta_prev.bulk
    tp = theta_prev.bulk
    t0 = time.perf_counter()

    ma = time_weight_mass(mesh, params, ep)
    beta_e = mesh.edge_average(params.alpha(ep))
    d2 = params.delta * params.delta
    inv_tau = 1.0 / params.tau
    Ma = sp.diags(ma * inv_tau)
    Ls = (mesh.Ds.T @ sp.diags(mesh.surf_w) @ mesh.Ds) * params.kappa_gamma**2
    rhs = ma * tp * inv_tau

    theta = tp.copy() if initial_guess is None else np.asarray(initial_guess, dtype=float).copy()
    grad = theta_objective_grad(mesh, params, ep, tp, theta)
    scale = max(1.0, float(np.max(np.abs(grad))))
    obj0 = theta_objective(mesh, params, ep, tp, theta)

    stats = SolveStats()
    best, best_res = theta.copy(), float(np.max(np.abs(grad)))
    hist_f, hist_gx = [], []
    for _ in range(opts.max_outer):
        res = float(np.max(np.abs(grad)))
        if res < best_res:
            best, best_res = theta.copy(), res
        if res <= opts.tol_inner * scale:
            stats.final_residual_inf_norm = res
            stats.objective_decrease = obj0 - theta_objective(mesh, params, ep, tp, theta)
            stats.wall_time = time.perf_counter() - t0
            return FieldPair(theta), stats

        g = mesh.apply_gradient(theta)
        q = mesh.edge_w * (beta_e / np.sqrt(d2 + g * g) + d2)
        A = (Ma + mesh.D.T @ sp.diags(q) @ mesh.D + Ls).tocsr()
        gx, it = _solve_spd(A, rhs, theta, opts)

        hist_f.append(gx - theta)
        hist_gx.append(gx)
        if len(hist_f) > opts.anderson_depth + 1:
            hist_f.pop(0)
            hist_gx.pop(0)
        theta = gx
        grad = theta_objective_grad(mesh, params, ep, tp, theta)
        if len(hist_f) >= 2:
            dF = np.column_stack([hist_f[j] - hist_f[j - 1] for j in range(1, len(hist_f))])
            dG = np.column_stack([hist_gx[j] - hist_gx[j - 1] for j in range(1, len(hist_gx))])
            gamma = np.linalg.lstsq(dF, hist_f[-1], rcond=None)[0]
            cand = gx - dG @ gamma
            if np.all(np.isfinite(cand)):
                cand_grad = theta_objective_grad(mesh, params, ep, tp, cand)
                if np.max(np.abs(cand_grad)) <= np.max(np.abs(grad)):
                    theta, grad = cand, cand_grad
        stats.outer_iterations += 1
        stats.inner_linear_iterations += it

    raise ConvergenceError(
        f"theta step did not reach tolerance in {opts.max_outer} iterations "
        f"(residual {best_res:.3e})",
        best=FieldPair(best),
        residual=best_res,
    )


# -- eta step ----------------------------------------------------------------


def eta_objective(mesh: Mesh, params: ModelParams, eta_prev, theta_new, eta):
    """Value of the eta-step objective at a bulk field ``eta``."""
    eta = np.asarray(eta, dtype=float)
    eta_prev = np.asarray(eta_prev, dtype=float)
    d = eta - eta_prev
    quad = float(np.dot(mesh.mass, d * d)) / (2.0 * params.tau)
    ge = mesh.apply_gradient(eta)
    dir_bulk = 0.5 * params.kappa**2 * float(np.dot(mesh.edge_w, ge * ge))
    gs = mesh.apply_surface_gradient(eta)
    dir_surf = 0.5 * params.epsilon**2 * float(np.dot(mesh.surf_w, gs * gs))
    b = mesh.boundary_idx
    pot = float(np.dot(mesh.node_vol, params.g_hat(eta)))
    pot += float(np.dot(mesh.node_area[b], params.g_gamma_hat(eta[b])))
    c = fdelta_node_coefficients(mesh, params.delta, np.asarray(theta_new, dtype=float))
    return quad + dir_bulk + dir_surf + pot + float(np.dot(c, params.alpha(eta)))


def eta_objective_grad(mesh: Mesh, params: ModelParams, eta_prev, theta_new, eta):
    """Gradient of the eta-step objective with respect to ``eta``."""
    eta = np.asarray(eta, dtype=float)
    eta_prev = np.asarray(eta_prev, dtype=float)
    grad = mesh.mass * (eta - eta_prev) / params.tau
    grad += params.kappa**2 * (mesh.D.T @ (mesh.edge_w * mesh.apply_gradient(eta)))
    grad += params.epsilon**2 * (
        mesh.Ds.T @ (mesh.surf_w * mesh.apply_surface_gradient(eta))
    )
    grad += mesh.node_vol * params.g(eta)
    b = mesh.boundary_idx
    gb = np.zeros_like(eta)
    gb[b] = mesh.node_area[b] * params.g_gamma(eta[b])
    grad += gb
    c = fdelta_node_coefficients(mesh, params.delta, np.asarray(theta_new, dtype=float))
    grad += c * params.dalpha(eta)
    return grad


def eta_step(
    mesh: Mesh,
    params: ModelParams,
    eta_prev: FieldPair,
    theta_new: FieldPair,
    opts: Optional[SolverOptions] = None,
    initial_guess=None,
):
    """Minimize the eta objective by damped Newton with step halving.

    Refuses to run for tau >= tau_star: below that bound the Hessian is
    uniformly positive definite (the 1/tau mass term dominates the most
    negative reaction slope), which is what makes the objective strictly
    convex and the minimizer unique."""
    opts = opts or SolverOptions()
    ts = params.tau_star()
    if params.tau >= ts:
        raise StepSizeError(
            f"tau = {params.tau} is not below the admissible bound {ts}"
        )
    eta_prev.check(mesh)
    theta_new.check(mesh)
    ep = eta_prev.bulk
    t0 = time.perf_counter()

    c = fdelta_node_coefficients(mesh, params.delta, theta_new.bulk)
    inv_tau = 1.0 / params.tau
    L = params.kappa**2 * (mesh.D.T @ sp.diags(mesh.edge_w) @ mesh.D)
    Ls = params.epsilon**2 * (mesh.Ds.T @ sp.diags(mesh.surf_w) @ mesh.Ds)
    b = mesh.boundary_idx

    eta = ep.copy() if initial_guess is None else np.asarray(initial_guess, dtype=float).copy()
    grad = eta_objective_grad(mesh, params, ep, theta_new.bulk, eta)
    scale = max(1.0, float(np.max(np.abs(grad))))
    obj = eta_objective(mesh, params, ep, theta_new.bulk, eta)
    obj0 = obj

    stats = SolveStats()
    best, best_res = eta.copy(), float(np.max(np.abs(grad)))
    for _ in range(opts.max_outer):
        res = float(np.max(np.abs(grad)))
        if res < best_res:
            best, best_res = eta.copy(), res
        if res <= opts.tol_inner * scale:
            stats.final_residual_inf_norm = res
            stats.objective_decrease = obj0 - obj
            stats.wall_time = time.perf_counter() - t0
            return FieldPair(eta), stats

        dpot = mesh.node_vol * params.g_spec.d1(eta)
        dpot[b] += mesh.node_area[b] * params.g_gamma_spec.d1(eta[b])
        H = (
            sp.diags(mesh.mass * inv_tau + dpot + c * params.ddalpha(eta)) + L + Ls
        ).tocsr()
        step, it = _solve_spd(H, -grad, None, opts)
        stats.inner_linear_iterations += it
        t = 1.0
        for _ in range(opts.newton_max_halvings):
            trial = eta + t * step
            trial_obj = eta_objective(mesh, params, ep, theta_new.bulk, trial)
            if trial_obj <= obj:
                break
            t *= 0.5
        eta = eta + t * step
        obj = eta_objective(mesh, params, ep, theta_new.bulk, eta)
        grad = eta_objective_grad(mesh, params, ep, theta_new.bulk, eta)
        stats.outer_iterations += 1

    raise ConvergenceError(
        f"eta step did not reach tolerance in {opts.max_outer} iterations "
        f"(residual {best_res:.3e})",
        best=FieldPair(best),
        residual=best_res,
    )


# -- trajectory driver -------------------------------------------------------


def check_initial_bounds(initial: State, params: ModelParams):
    """Exact pointwise admissibility of the initial data; no tolerance."""
    e, t = initial.eta.bulk, initial.theta.bulk
    if np.any(e < 0.0) or np.any(e > 1.0):
        raise InvalidInitialDataError(
            f"initial order parameter leaves [0, 1]: range "
            f"[{e.min()}, {e.max()}]"
        )
    if np.any(t < params.r0) or np.any(t > params.r1):
        raise InvalidInitialDataError(
            f"initial angle leaves [{params.r0}, {params.r1}]: range "
            f"[{t.min()}, {t.max()}]"
        )


def run_scheme(
    mesh: Mesh,
    params: ModelParams,
    initial: State,
    n_steps: int,
    opts: Optional[SolverOptions] = None,
) -> Trajectory:
    """March n_steps from the initial state, theta update before eta update
    within each step, recording the relaxed energy breakdown of every state."""
    if n_steps < 1:
        raise InvalidParameterError("n_steps must be positive")
    opts = opts or SolverOptions()
    ts = params.tau_star()
    if params.tau >= ts:
        raise StepSizeError(
            f"tau = {params.tau} is not below the admissible bound {ts}"
        )
    initial.eta.check(mesh)
    initial.theta.check(mesh)
    check_initial_bounds(initial, params)

    traj = Trajectory(params=params)
    state = initial.copy()
    traj.states.append(state)
    traj.energies.append(
        eval_free_energy(mesh, params, state.eta, state.theta, mode="relaxed")
    )
    for i in range(1, n_steps + 1):
        try:
            theta_new, tstats = theta_step(mesh, params, state.eta, state.theta, opts)
            eta_new, estats = eta_step(mesh, params, state.eta, theta_new, opts)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"step {i} failed: {err}",
                best=err.best,
                residual=err.residual,
                partial_trajectory=traj,
            ) from err
        state = State(eta_new, theta_new, i, i * params.tau)
        traj.states.append(state)
        traj.stats.append((tstats, estats))
        traj.energies.append(
            eval_free_energy(mesh, params, state.eta, state.theta, mode="relaxed")
        )
    return traj


def interpolate_trajectory(traj: Trajectory, t: float, kind: str = "linear") -> State:
    """Piecewise-constant (forward/backward) or piecewise-linear evaluation
    in time; all three kinds agree at the step knots."""
    if kind not in ("forward", "backward", "linear"):
        raise InvalidParameterError(f"unknown interpolation kind {kind!r}")
    tau = traj.params.tau
    n = traj.n_steps
    if t < -1e-12 * max(tau, 1.0) or t > n * tau + 1e-12 * max(tau, 1.0):
        raise InvalidParameterError(f"time {t} outside [0, {n * tau}]")
    k = int(round(t / tau))
    if 0 <= k <= n and abs(t - k * tau) <= 1e-12 * max(tau, 1.0):
        return traj.states[k].copy()
    i = int(np.ceil(t / tau))  # t strictly inside (t_{i-1}, t_i)
    lo, hi = traj.states[i - 1], traj.states[i]
    if kind == "forward":
        return hi.copy()
    if kind == "backward":
        return lo.copy()
    w = (t - (i - 1) * tau) / tau
    eta = (1.0 - w) * lo.eta.bulk + w * hi.eta.bulk
    theta = (1.0 - w) * lo.theta.bulk + w * hi.theta.bulk
    out = State(FieldPair(eta), FieldPair(theta), i, t)
    return out


def ground_state(mesh: Mesh, params: ModelParams) -> State:
    """eta identically 1, theta identically r0: stationary for the default
    reaction terms (g(1) = 0) and any constant-angle data."""
    n = mesh.n_nodes
    return State(FieldPair(np.ones(n)), FieldPair(np.full(n, params.r0)))
