"""Executable audits of the solver's structural guarantees.

Every audit recomputes its quantities from saved states with the energy
module, independently of anything the stepper recorded, so a bug in the
bookkeeping cannot hide a violated inequality.  The brute-force oracle at
the bottom shares no code with the production solvers beyond the model
functions: it assembles dense objectives directly from the mesh arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .energy import FieldPair, eval_free_energy
from .errors import InvalidPairingError, InvalidParameterError, OracleError
from .mesh import Mesh
from .model import ModelParams, grad_f_delta_scalar
from .scheme import (
    SolverOptions,
    State,
    Trajectory,
    eta_step,
    run_scheme,
    theta_step,
    time_weight_mass,
)


# -- dissipation and bounds --------------------------------------------------


@dataclass
class AuditRow:
    """One step of the energy inequality: lhs = dissipation + new energy,
    rhs = old energy, slack = rhs - lhs (>= -tolerance on a passing run)."""

    step: int
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def audit_dissipation(traj: Trajectory, mesh: Mesh, params: ModelParams):
    """Recompute both sides of the per-step energy inequality for every
    step of the trajectory."""
    rows = []
    energies = [
        eval_free_energy(mesh, params, s.eta, s.theta, mode="relaxed").total
        for s in traj.states
    ]
    inv_2tau = 0.5 / params.tau
    for i in range(1, len(traj.states)):
        prev, cur = traj.states[i - 1], traj.states[i]
        de = cur.eta.bulk - prev.eta.bulk
        dt = cur.theta.bulk - prev.theta.bulk
        ma = time_weight_mass(mesh, params, prev.eta.bulk)
        lhs = (
            inv_2tau * float(np.dot(mesh.mass, de * de))
            + inv_2tau * float(np.dot(ma, dt * dt))
            + energies[i]
        )
        rows.append(AuditRow(step=cur.step_index, lhs=lhs, rhs=energies[i - 1]))
    return rows


@dataclass
class BoundsReport:
    eta_low: float  # max excursion below 0 (>= 0)
    eta_high: float  # max excursion above 1
    theta_low: float
    theta_high: float

    @property
    def max_excursion(self) -> float:
        return max(self.eta_low, self.eta_high, self.theta_low, self.theta_high)

    def passed(self, tol: float = 1e-9) -> bool:
        return self.max_excursion <= tol


def audit_bounds(traj: Trajectory, r0: float, r1: float) -> BoundsReport:
    eta = np.stack([s.eta.bulk for s in traj.states])
    theta = np.stack([s.theta.bulk for s in traj.states])
    return BoundsReport(
        eta_low=max(0.0, float(-eta.min())),
        eta_high=max(0.0, float(eta.max() - 1.0)),
        theta_low=max(0.0, float(r0 - theta.min())),
        theta_high=max(0.0, float(theta.max() - r1)),
    )


# -- comparison / contraction ------------------------------------------------


def positive_part_norm(weights, v) -> float:
    """Weighted L2 norm of the positive part of a node field."""
    p = np.maximum(np.asarray(v, dtype=float), 0.0)
    return float(np.sqrt(np.dot(weights, p * p)))


@dataclass
class ComparisonReport:
    """Positive-part difference norms of two coupled runs.

    eta_pos_norms: || [eta1_i - eta2_i]^+ ||  in the plain bulk+surface norm;
    theta_pos_norms: the same for theta, weighted by the time-weight mass.
    Contraction means both sequences are nonincreasing in i.
    """

    eta_pos_norms: list
    theta_pos_norms: list

    def nonincreasing(self, tol: float = 1e-10) -> bool:
        for seq in (self.eta_pos_norms, self.theta_pos_norms):
            for a, b in zip(seq, seq[1:]):
                if b > a + tol:
                    return False
        return True


def comparison_experiment(
    mesh: Mesh,
    params: ModelParams,
    initial1: State,
    initial2: State,
    n_steps: int,
    opts: Optional[SolverOptions] = None,
) -> ComparisonReport:
    """Coupled order-comparison runs.

    A reference trajectory is advanced from initial1.  The eta comparison
    evolves both eta fields against the reference theta sequence (the two
    steps share their angle data); the theta comparison evolves both theta
    fields against the reference eta sequence (shared time-weight and
    mobility coefficients).  This is exactly the coupling under which the
    single-step contraction estimates apply, so the positive-part norms
    must be nonincreasing.
    """
    opts = opts or SolverOptions()
    if initial1.eta.bulk.shape != initial2.eta.bulk.shape:
        raise InvalidPairingError("comparison runs live on different meshes")
    for st in (initial1, initial2):
        st.eta.check(mesh)
        st.theta.check(mesh)

    ref = run_scheme(mesh, params, initial1, n_steps, opts)

    ma0 = time_weight_mass(mesh, params, ref.states[0].eta.bulk)
    eta_norms = [positive_part_norm(mesh.mass, initial1.eta.bulk - initial2.eta.bulk)]
    theta_norms = [
        positive_part_norm(ma0, initial1.theta.bulk - initial2.theta.bulk)
    ]

    e1, e2 = initial1.eta.copy(), initial2.eta.copy()
    t1, t2 = initial1.theta.copy(), initial2.theta.copy()
    for i in range(1, n_steps + 1):
        eta_ref_prev = ref.states[i - 1].eta
        theta_ref = ref.states[i].theta
        # shared angle data for the order-parameter comparison
        e1, _ = eta_step(mesh, params, e1, theta_ref, opts)
        e2, _ = eta_step(mesh, params, e2, theta_ref, opts)
        eta_norms.append(positive_part_norm(mesh.mass, e1.bulk - e2.bulk))
        # shared order-parameter data for the angle comparison
        t1, _ = theta_step(mesh, params, eta_ref_prev, t1, opts)
        t2, _ = theta_step(mesh, params, eta_ref_prev, t2, opts)
        ma = time_weight_mass(mesh, params, eta_ref_prev.bulk)
        theta_norms.append(positive_part_norm(ma, t1.bulk - t2.bulk))

    return ComparisonReport(eta_pos_norms=eta_norms, theta_pos_norms=theta_norms)


# -- subdifferential certificate ---------------------------------------------


@dataclass
class B2Row:
    node: int
    jump: float  # boundary value minus one-sided interior value
    flux: float  # outward normal component of omega_star at the node
    label: str  # "jump" | "continuous" | "indeterminate"


@dataclass
class Certificate:
    """Discrete realization of the bounded vector field certifying the
    singular diffusion operator at a converged angle field.

    omega_star lives on edges and has norm strictly below 1; b1_residual is
    the per-node gap between |grad theta| and its pairing with omega_star,
    which the regularization bounds by delta; the b2 rows classify each
    boundary node by the transmission trichotomy (a saturated outward flux
    where the boundary layer jumps, an unsaturated flux where the trace is
    continuous)."""

    omega_star: np.ndarray
    boundary_flux: np.ndarray
    b1_residual: np.ndarray
    b2_rows: list
    max_norm_omega: float
    delta: float

    def to_csv(self, path, mesh: Mesh):
        axis = mesh.edge_axis
        ox = np.where(axis == 0, self.omega_star, 0.0)
        oy = np.where(axis == 1, self.omega_star, 0.0)
        mid = 0.5 * (mesh.coords[mesh.edge_src] + mesh.coords[mesh.edge_dst])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,y,omega_x,omega_y\n")
            for (x, y), a, b in zip(mid, ox, oy):
                fh.write(f"{float(x)!r},{float(y)!r},{float(a)!r},{float(b)!r}\n")


def compute_certificate(mesh: Mesh, params: ModelParams, state: State) -> Certificate:
    g = mesh.apply_gradient(state.theta.bulk)
    omega = np.asarray(grad_f_delta_scalar(params.delta, g))
    # per-edge pairing gap, averaged to nodes with the quadrature weights
    edge_gap = np.abs(g) - omega * g
    b1 = (mesh.edge_to_node @ (mesh.edge_w * edge_gap)) / mesh.node_edge_weight

    flux = mesh.boundary_flux_sign * omega[mesh.boundary_flux_edge]
    hn = mesh.edge_h[mesh.boundary_flux_edge]
    jump = state.theta.surface_values(mesh) - mesh.trace_interior(state.theta.bulk)

    rows = []
    for k, node in enumerate(mesh.boundary_idx):
        j, f = float(jump[k]), float(flux[k])
        if abs(j) > 10.0 * params.delta * hn[k]:
            label = "jump"
        elif abs(f) <= 0.9:
            label = "continuous"
        else:
            label = "indeterminate"
        rows.append(B2Row(node=int(node), jump=j, flux=f, label=label))

    return Certificate(
        omega_star=omega,
        boundary_flux=flux,
        b1_residual=b1,
        b2_rows=rows,
        max_norm_omega=float(np.max(np.abs(omega))) if omega.size else 0.0,
        delta=params.delta,
    )


# -- regularization continuation ---------------------------------------------


@dataclass
class ContinuationRow:
    delta: float
    relaxed_total: Optional[float]
    singular_total: Optional[float]
    max_boundary_jump: Optional[float]
    error: Optional[str] = None


@dataclass
class ContinuationTable:
    rows: list = field(default_factory=list)
    # bulk+surface L2 distance between final theta fields of consecutive rows
    theta_distances: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                "delta,relaxed_total,singular_total,max_boundary_jump,"
                "theta_distance_to_previous,error\n"
            )
            for i, r in enumerate(self.rows):
                dist = "" if i == 0 else repr(self.theta_distances[i - 1])
                vals = [
                    repr(r.delta),
                    "" if r.relaxed_total is None else repr(r.relaxed_total),
                    "" if r.singular_total is None else repr(r.singular_total),
                    ""
                    if r.max_boundary_jump is None
                    else repr(r.max_boundary_jump),
                    dist,
                    r.error or "",
                ]
                fh.write(",".join(vals) + "\n")


def delta_continuation(
    mesh: Mesh,
    params: ModelParams,
    deltas,
    initial: State,
    n_steps: int,
    opts: Optional[SolverOptions] = None,
    workers: int = 1,
) -> ContinuationTable:
    """Re-run the same experiment over a decreasing regularization ladder
    and tabulate how the final states approach the singular limit.  Errors
    in one run are recorded in its row and the sweep continues.  The runs
    are independent and may be fanned out to a thread pool."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0.0 for d in deltas):
        raise InvalidParameterError("all regularization parameters must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise InvalidParameterError("regularization ladder must be strictly decreasing")

    def one(d):
        try:
            return run_scheme(
                mesh, params.replace(delta=d), initial.copy(), n_steps, opts
            ), None
        except Exception as err:  # noqa: BLE001 - the sweep must survive one bad rung
            return None, str(err)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, deltas))
    else:
        results = [one(d) for d in deltas]

    table = ContinuationTable()
    prev_theta = None
    for d, (traj, error) in zip(deltas, results):
        p = params.replace(delta=d)
        if traj is None:
            table.rows.append(ContinuationRow(d, None, None, None, error=error))
            if prev_theta is not None:
                table.theta_distances.append(float("nan"))
            prev_theta = None
            continue
        final = traj.states[-1]
        relaxed = eval_free_energy(mesh, p, final.eta, final.theta, mode="relaxed")
        singular = eval_free_energy(mesh, p, final.eta, final.theta, mode="singular")
        jump = np.abs(
            final.theta.surface_values(mesh) - mesh.trace_interior(final.theta.bulk)
        )
        table.rows.append(
            ContinuationRow(
                d,
                relaxed.total,
                singular.total,
                float(jump.max()) if jump.size else 0.0,
            )
        )
        if prev_theta is not None:
            diff = final.theta.bulk - prev_theta
            table.theta_distances.append(
                float(np.sqrt(np.dot(mesh.mass, diff * diff)))
            )
        prev_theta = final.theta.bulk
    return table


# -- dense reference minimizer -----------------------------------------------


def _oracle_newton(obj, grad, hess, x0, tol=1e-12, max_iter=200):
    """Newton with objective backtracking to gradient infinity norm below
    tol (relative to the starting gradient, floored at 1).  Rough random
    data can pin the gradient at a rounding floor slightly above tol; a
    stagnating iterate is accepted if that floor is still below 1e-10."""
    x = np.asarray(x0, dtype=float).copy()
    scale = max(1.0, float(np.max(np.abs(grad(x)))))
    best_res = np.inf
    stalled = 0
    for _ in range(max_iter):
        g = grad(x)
        res = float(np.max(np.abs(g)))
        if res <= tol * scale:
            return x
        if res >= best_res:
            stalled += 1
            if stalled >= 3 and best_res <= 1e-10 * scale:
                return x
        else:
            best_res, stalled = res, 0
        step = np.linalg.solve(hess(x), -g)
        # exact line search: bisection on the directional derivative, which
        # starts negative (the Hessian is positive definite)
        lo, hi = 0.0, 1.0
        while float(np.dot(grad(x + hi * step), step)) < 0.0 and hi < 1e6:
            lo, hi = hi, 2.0 * hi
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            if float(np.dot(grad(x + mid * step), step)) < 0.0:
                lo = mid
            else:
                hi = mid
        x = x + 0.5 * (lo + hi) * step
    res = float(np.max(np.abs(grad(x))))
    if res <= max(tol, 1e-10) * scale:
        return x
    raise OracleError(f"dense reference minimizer stalled at residual {res:.3e}")


def oracle_step(
    mesh: Mesh,
    params: ModelParams,
    which: str,
    eta_prev: FieldPair,
    theta_field: FieldPair,
) -> FieldPair:
    """Dense Newton minimization of one step objective, assembled from
    scratch out of the raw mesh arrays.  ``theta_field`` is the previous
    angle for the theta step and the freshly updated angle for the eta
    step.  Only meshes small enough for dense linear algebra are accepted.
    """
    n = mesh.n_nodes
    if n > 64:
        raise InvalidParameterError("dense reference minimizer limited to 64 nodes")
    if which not in ("theta", "eta"):
        raise InvalidParameterError(f"unknown step selector {which!r}")

    es, ed = mesh.edge_src, mesh.edge_dst
    eh, ew = mesh.edge_h, mesh.edge_w
    ss, sd = mesh.surf_src, mesh.surf_dst
    sh, sw = mesh.surf_h, mesh.surf_w
    vol, area, bidx = mesh.node_vol, mesh.node_area, mesh.boundary_idx
    tau, delta = params.tau, params.delta
    d2 = delta * delta
    ep = eta_prev.bulk

    if which == "theta":
        tp = theta_field.bulk
        ma = params.alpha0(ep) * vol
        ma_b = ma.copy()
        ma_b[bidx] += params.alpha_gamma0(ep[bidx]) * area[bidx]
        beta = params.alpha(ep)
        be = 0.5 * (beta[es] + beta[ed])
        kg2 = params.kappa_gamma**2

        def obj(th):
            g = (th[ed] - th[es]) / eh
            val = 0.5 / tau * np.dot(ma_b, (th - tp) ** 2)
            val += np.dot(ew, be * (np.sqrt(d2 + g * g) - delta) + 0.5 * d2 * g * g)
            gs = (th[sd] - th[ss]) / sh if ss.size else np.zeros(0)
            val += 0.5 * kg2 * np.dot(sw, gs * gs)
            return float(val)

        def grad(th):
            g = (th[ed] - th[es]) / eh
            force = ew * (be * g / np.sqrt(d2 + g * g) + d2 * g)
            out = ma_b * (th - tp) / tau
            np.add.at(out, ed, force / eh)
            np.add.at(out, es, -force / eh)
            if ss.size:
                gs = (th[sd] - th[ss]) / sh
                sf = kg2 * sw * gs
                np.add.at(out, sd, sf / sh)
                np.add.at(out, ss, -sf / sh)
            return out

        def hess(th):
            g = (th[ed] - th[es]) / eh
            H = np.diag(ma_b / tau)
            wpr = ew * (be * d2 / (d2 + g * g) ** 1.5 + d2) / (eh * eh)
            for e in range(es.size):
                i, j, c = es[e], ed[e], wpr[e]
                H[i, i] += c
                H[j, j] += c
                H[i, j] -= c
                H[j, i] -= c
            for e in range(ss.size):
                i, j, c = ss[e], sd[e], kg2 * sw[e] / (sh[e] * sh[e])
                H[i, i] += c
                H[j, j] += c
                H[i, j] -= c
                H[j, i] -= c
            return H

        return FieldPair(_oracle_newton(obj, grad, hess, tp))

    tn = theta_field.bulk
    gth = (tn[ed] - tn[es]) / eh
    fdelta_e = np.sqrt(d2 + gth * gth) - delta
    mass = vol + area
    k2 = params.kappa**2
    e2 = params.epsilon**2

    def obj(e):
        g = (e[ed] - e[es]) / eh
        val = 0.5 / tau * np.dot(mass, (e - ep) ** 2)
        val += 0.5 * k2 * np.dot(ew, g * g)
        gs = (e[sd] - e[ss]) / sh if ss.size else np.zeros(0)
        val += 0.5 * e2 * np.dot(sw, gs * gs)
        val += np.dot(vol, params.g_hat(e)) + np.dot(
            area[bidx], params.g_gamma_hat(e[bidx])
        )
        ae = 0.5 * (params.alpha(e)[es] + params.alpha(e)[ed])
        val += np.dot(ew, ae * fdelta_e)
        return float(val)

    def grad(e):
        g = (e[ed] - e[es]) / eh
        out = mass * (e - ep) / tau
        force = k2 * ew * g
        np.add.at(out, ed, force / eh)
        np.add.at(out, es, -force / eh)
        if ss.size:
            gs = (e[sd] - e[ss]) / sh
            sf = e2 * sw * gs
            np.add.at(out, sd, sf / sh)
            np.add.at(out, ss, -sf / sh)
        out += vol * params.g(e)
        out[bidx] += area[bidx] * params.g_gamma(e[bidx])
        da = params.dalpha(e)
        np.add.at(out, es, 0.5 * ew * fdelta_e * da[es])
        np.add.at(out, ed, 0.5 * ew * fdelta_e * da[ed])
        return out

    def hess(e):
        H = np.diag(mass / tau + vol * params.g_spec.d1(e))
        H[bidx, bidx] += area[bidx] * params.g_gamma_spec.d1(e[bidx])
        dda = params.ddalpha(e)
        cc = np.zeros(n)
        np.add.at(cc, es, 0.5 * ew * fdelta_e)
        np.add.at(cc, ed, 0.5 * ew * fdelta_e)
        H += np.diag(cc * dda)
        for eix in range(es.size):
            i, j, c = es[eix], ed[eix], k2 * ew[eix] / (eh[eix] * eh[eix])
            H[i, i] += c
            H[j, j] += c
            H[i, j] -= c
            H[j, i] -= c
        for eix in range(ss.size):
            i, j, c = ss[eix], sd[eix], e2 * sw[eix] / (sh[eix] * sh[eix])
            H[i, i] += c
            H[j, j] += c
            H[i, j] -= c
            H[j, i] -= c
        return H

    return FieldPair(_oracle_newton(obj, grad, hess, ep))
