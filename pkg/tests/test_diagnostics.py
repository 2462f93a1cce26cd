"""Audits: dissipation, bounds, comparison, certificate, continuation, oracle."""

import numpy as np
import pytest

import kwcdyn.diagnostics as diag
from kwcdyn.diagnostics import (
    audit_bounds,
    audit_dissipation,
    comparison_experiment,
    compute_certificate,
    delta_continuation,
    oracle_step,
    positive_part_norm,
)
from kwcdyn.energy import FieldPair
from kwcdyn.errors import InvalidPairingError, InvalidParameterError
from kwcdyn.mesh import MeshSpec, build_mesh
from kwcdyn.model import ModelParams
from kwcdyn.scheme import (
    SolverOptions,
    State,
    eta_objective,
    eta_step,
    ground_state,
    run_scheme,
    theta_objective,
    theta_step,
)

TIGHT = SolverOptions(tol_inner=1e-13)


def random_state(mesh, params, rng):
    return State(
        FieldPair(rng.uniform(0, 1, mesh.n_nodes)),
        FieldPair(rng.uniform(params.r0, params.r1, mesh.n_nodes)),
    )


class TestDissipationAudit:
    def test_stationary_run_has_zero_slack(self, strip_mesh, strip_params):
        traj = run_scheme(
            strip_mesh, strip_params, ground_state(strip_mesh, strip_params), 3, TIGHT
        )
        rows = audit_dissipation(traj, strip_mesh, strip_params)
        assert len(rows) == 3
        assert all(abs(r.slack) <= 1e-12 for r in rows)

    def test_real_run_has_nonnegative_slack(self, strip_mesh, strip_params, rng):
        traj = run_scheme(
            strip_mesh, strip_params, random_state(strip_mesh, strip_params, rng), 8, TIGHT
        )
        rows = audit_dissipation(traj, strip_mesh, strip_params)
        scale = 1.0 + rows[0].rhs
        assert all(r.slack >= -1e-12 * scale for r in rows)

    def test_detects_injected_energy_increase(self, strip_mesh, strip_params, rng):
        traj = run_scheme(
            strip_mesh, strip_params, random_state(strip_mesh, strip_params, rng), 4, TIGHT
        )
        # corrupt one state so its energy rises above its predecessor's
        traj.states[2].theta.bulk += 0.5 * np.sin(
            7 * np.pi * strip_mesh.coords[:, 0]
        )
        rows = audit_dissipation(traj, strip_mesh, strip_params)
        assert min(r.slack for r in rows) < -1e-6


class TestBoundsAudit:
    def test_clean_run_passes(self, strip_mesh, strip_params, rng):
        traj = run_scheme(
            strip_mesh, strip_params, random_state(strip_mesh, strip_params, rng), 5, TIGHT
        )
        report = audit_bounds(traj, strip_params.r0, strip_params.r1)
        assert report.passed(1e-9)
        assert report.max_excursion <= 1e-9

    def test_detects_excursion(self, strip_mesh, strip_params, rng):
        traj = run_scheme(
            strip_mesh, strip_params, random_state(strip_mesh, strip_params, rng), 2, TIGHT
        )
        traj.states[1].eta.bulk[0] = 1.5
        report = audit_bounds(traj, strip_params.r0, strip_params.r1)
        assert not report.passed(1e-9)
        assert report.max_excursion == pytest.approx(0.5)


class TestPositivePartNorm:
    def test_hand_values(self):
        w = np.array([1.0, 2.0, 3.0])
        v = np.array([2.0, -5.0, 1.0])
        # only the positive entries contribute: sqrt(1*4 + 3*1)
        assert positive_part_norm(w, v) == pytest.approx(np.sqrt(7.0))
        assert positive_part_norm(w, -np.abs(v)) == 0.0


class TestComparison:
    def test_identical_data_stays_identical(self, interval_mesh, small_params, rng):
        s = random_state(interval_mesh, small_params, rng)
        rep = comparison_experiment(interval_mesh, small_params, s, s.copy(), 5, TIGHT)
        assert max(rep.eta_pos_norms) <= 1e-12
        assert max(rep.theta_pos_norms) <= 1e-12

    def test_ordered_data_stays_ordered(self, interval_mesh, small_params, rng):
        s1 = random_state(interval_mesh, small_params, rng)
        s2 = State(
            FieldPair(np.minimum(1.0, s1.eta.bulk + 0.05)),
            FieldPair(np.minimum(small_params.r1, s1.theta.bulk + 0.05)),
        )
        rep = comparison_experiment(interval_mesh, small_params, s1, s2, 20, TIGHT)
        assert max(rep.eta_pos_norms) <= 1e-10
        assert max(rep.theta_pos_norms) <= 1e-10
        assert rep.nonincreasing(1e-10)

    def test_crossing_data_contracts(self, interval_mesh, small_params, rng):
        s1 = random_state(interval_mesh, small_params, rng)
        s2 = random_state(interval_mesh, small_params, rng)
        rep = comparison_experiment(interval_mesh, small_params, s1, s2, 20, TIGHT)
        assert rep.eta_pos_norms[0] > 0.0
        assert rep.nonincreasing(1e-10)
        assert rep.eta_pos_norms[-1] <= rep.eta_pos_norms[0]

    def test_rejects_mismatched_meshes(self, interval_mesh, small_params, rng):
        s1 = random_state(interval_mesh, small_params, rng)
        other = build_mesh(MeshSpec("interval", 5, 1, 1.0, 1.0))
        s2 = State(FieldPair(np.ones(5)), FieldPair(np.zeros(5)))
        with pytest.raises(InvalidPairingError):
            comparison_experiment(interval_mesh, small_params, s1, s2, 2, TIGHT)


class TestCertificate:
    def test_constant_angle_certificate(self, strip_mesh, strip_params):
        n = strip_mesh.n_nodes
        state = State(FieldPair(np.full(n, 0.8)), FieldPair(np.full(n, 0.3)))
        cert = compute_certificate(strip_mesh, strip_params, state)
        assert cert.max_norm_omega == 0.0
        assert np.all(cert.b1_residual >= -1e-15)
        assert np.all(cert.b1_residual <= strip_params.delta + 1e-15)
        assert all(row.label == "continuous" for row in cert.b2_rows)

    def test_dual_field_inside_unit_ball(self, strip_mesh, strip_params, rng):
        state = random_state(strip_mesh, strip_params, rng)
        cert = compute_certificate(strip_mesh, strip_params, state)
        assert cert.max_norm_omega < 1.0
        assert cert.omega_star.shape == strip_mesh.edge_w.shape

    def test_pairing_gap_within_delta(self, strip_mesh, strip_params, rng):
        # |omega| - omega_star * omega lies in [0, delta] edgewise, so the
        # volume-averaged residual must too
        state = random_state(strip_mesh, strip_params, rng)
        cert = compute_certificate(strip_mesh, strip_params, state)
        assert np.all(cert.b1_residual >= -1e-14)
        assert np.all(cert.b1_residual <= strip_params.delta + 1e-14)

    def test_csv_export(self, strip_mesh, strip_params, rng, tmp_path):
        state = random_state(strip_mesh, strip_params, rng)
        cert = compute_certificate(strip_mesh, strip_params, state)
        path = tmp_path / "cert.csv"
        cert.to_csv(path, strip_mesh)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (strip_mesh.edge_w.size, 4)
        norms = np.abs(data[:, 2] + data[:, 3])  # one component is zero per edge
        assert norms.max() < 1.0


class TestContinuation:
    def test_distances_shrink_along_ladder(self, interval_mesh, small_params, rng):
        init = random_state(interval_mesh, small_params, rng)
        table = delta_continuation(
            interval_mesh, small_params, [0.2, 0.1, 0.05], init, 10, TIGHT
        )
        assert len(table.rows) == 3
        assert all(r.error is None or r.error == "" for r in table.rows)
        assert len(table.theta_distances) == 2
        assert table.theta_distances[0] > table.theta_distances[1]

    def test_thread_fanout_matches_serial(self, interval_mesh, small_params, rng):
        init = random_state(interval_mesh, small_params, rng)
        serial = delta_continuation(
            interval_mesh, small_params, [0.2, 0.1], init.copy(), 5, TIGHT, workers=1
        )
        parallel = delta_continuation(
            interval_mesh, small_params, [0.2, 0.1], init.copy(), 5, TIGHT, workers=2
        )
        for a, b in zip(serial.rows, parallel.rows):
            assert a.relaxed_total == pytest.approx(b.relaxed_total, abs=0.0)
            assert a.singular_total == pytest.approx(b.singular_total, abs=0.0)

    def test_sweep_survives_one_failing_rung(
        self, interval_mesh, small_params, rng, monkeypatch
    ):
        init = random_state(interval_mesh, small_params, rng)
        real = diag.run_scheme

        def flaky(mesh, params, initial, n_steps, opts=None):
            if params.delta == 0.1:
                raise RuntimeError("synthetic failure")
            return real(mesh, params, initial, n_steps, opts)

        monkeypatch.setattr(diag, "run_scheme", flaky)
        table = delta_continuation(
            interval_mesh, small_params, [0.2, 0.1, 0.05], init, 3, TIGHT
        )
        errors = [r.error for r in table.rows]
        assert errors[0] in (None, "")
        assert "synthetic failure" in errors[1]
        assert errors[2] in (None, "")

    def test_rejects_bad_ladders(self, interval_mesh, small_params, rng):
        init = random_state(interval_mesh, small_params, rng)
        with pytest.raises(InvalidParameterError):
            delta_continuation(interval_mesh, small_params, [0.1, 0.2], init, 1)
        with pytest.raises(InvalidParameterError):
            delta_continuation(interval_mesh, small_params, [0.1, 0.0], init, 1)

    def test_csv_export(self, interval_mesh, small_params, rng, tmp_path):
        init = random_state(interval_mesh, small_params, rng)
        table = delta_continuation(interval_mesh, small_params, [0.2, 0.1], init, 3, TIGHT)
        path = tmp_path / "cont.csv"
        table.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("delta,")
        assert len(lines) == 3


class TestOracle:
    def test_constant_data_fixed_points(self, interval_mesh, small_params):
        n = interval_mesh.n_nodes
        eta = FieldPair(np.full(n, 0.6))
        theta = FieldPair(np.full(n, 0.2))
        new_theta = oracle_step(interval_mesh, small_params, "theta", eta, theta)
        assert np.max(np.abs(new_theta.bulk - 0.2)) <= 1e-10

    def test_oracle_reaches_lower_objective_than_production(
        self, interval_mesh, small_params, rng
    ):
        eta = FieldPair(rng.uniform(0, 1, interval_mesh.n_nodes))
        theta = FieldPair(rng.uniform(0, 1, interval_mesh.n_nodes))
        prod, _ = theta_step(interval_mesh, small_params, eta, theta, TIGHT)
        orac = oracle_step(interval_mesh, small_params, "theta", eta, theta)
        jp = theta_objective(interval_mesh, small_params, eta.bulk, theta.bulk, prod.bulk)
        jo = theta_objective(interval_mesh, small_params, eta.bulk, theta.bulk, orac.bulk)
        assert jo <= jp + 1e-12 * max(1.0, abs(jp))

    def test_both_steps_agree_with_production(self, interval_mesh, small_params, rng):
        eta = FieldPair(rng.uniform(0, 1, interval_mesh.n_nodes))
        theta = FieldPair(rng.uniform(0, 1, interval_mesh.n_nodes))
        prod_t, _ = theta_step(interval_mesh, small_params, eta, theta, TIGHT)
        orac_t = oracle_step(interval_mesh, small_params, "theta", eta, theta)
        assert np.max(np.abs(prod_t.bulk - orac_t.bulk)) <= 1e-8
        prod_e, _ = eta_step(interval_mesh, small_params, eta, prod_t, TIGHT)
        orac_e = oracle_step(interval_mesh, small_params, "eta", eta, prod_t)
        assert np.max(np.abs(prod_e.bulk - orac_e.bulk)) <= 1e-8

    def test_rejects_large_meshes_and_bad_selectors(self, small_params, rng):
        big = build_mesh(MeshSpec("periodic_strip", 16, 8, 1.0, 1.0))
        s = random_state(big, small_params, rng)
        with pytest.raises(InvalidParameterError):
            oracle_step(big, small_params, "theta", s.eta, s.theta)
        small = build_mesh(MeshSpec("interval", 6, 1, 1.0, 1.0))
        s = random_state(small, small_params, rng)
        with pytest.raises(InvalidParameterError):
            oracle_step(small, small_params, "both", s.eta, s.theta)
