"""Acceptance gate: every primary criterion at its stated tolerance.

Each test prints one PASS/FAIL line.  The Monte-Carlo suites run the
desk-scale configuration (M=4, N=16, K=2, L_p=4) with the documented
throughput caps (t1_max=80, phi_max_iter=30); loop thresholds are the
paper values (rho0=0.1, eta=0.85, eps_in=1e-7, eps_out=1e-5).
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from risac import metrics, solvers
from risac.baselines import run_scheme
from risac.channel import Scenario, db_to_linear, sample_scenario
from risac.harness import SweepSpec, aggregate, cell_seed, n_workers, run_trials
from risac.linalg import SolverOptions, max_eigenpair
from risac.metrics import secrecy_lower_bound
from risac.optimizer import RunOptions, run

from oracles import (
    fd_gradient,
    solve_phi_reference,
    solve_w_reference,
    solve_x_reference,
    solve_z_reference,
    z_block_objective,
)
from test_metrics import desk_setup, exact_aux

OPTS = SolverOptions()

SUITE_OPTS = RunOptions(t1_max=80, phi_max_iter=30)

N_TRIALS = 50


def desk_scenario(seed):
    return Scenario(m=4, n1=4, n2=4, k_users=2, paths=4, seed=seed,
                    gamma_c=db_to_linear(5.0))


def _emit(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name} {detail}")
    assert ok, f"{name}: {detail}"


def _run_one(seed):
    res = run(desk_scenario(seed), SUITE_OPTS)
    return (seed, res.state.sweep_rows, res.state.violation_trace[-1],
            res.converged, res.state.degraded, res.report.margins,
            res.report.sum_rate)


def test_a1_secrecy_bound_arithmetic():
    t0 = time.perf_counter()
    per_user = secrecy_lower_bound(10.0, 1.0)
    system = 3 * per_user
    elapsed = time.perf_counter() - t0
    ok = (abs(per_user - 2.4594) <= 1e-4 and abs(system - 7.378) <= 5e-3
          and elapsed < 1e-3)
    _emit("A1 secrecy-bound arithmetic",
          ok, f"per-user={per_user:.6f} system={system:.4f} ({elapsed*1e6:.0f} us)")


class TestMonteCarloSuite:
    """Criteria A2 (monotonicity), A3 (penalty feasibility) and A9
    (determinism) share one 50-trial desk-scale batch."""

    results = None

    @classmethod
    def batch(cls):
        if cls.results is None:
            t0 = time.perf_counter()
            seeds = list(range(1, N_TRIALS + 1))
            workers = min(n_workers(), len(seeds))
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    cls.results = list(pool.map(_run_one, seeds))
            else:
                cls.results = [_run_one(s) for s in seeds]
            cls.elapsed = time.perf_counter() - t0
        return cls.results

    def test_a2_monotonicity_suite(self):
        results = self.batch()
        violations = 0
        total_sweeps = 0
        for seed, rows, *_ in results:
            by_outer = {}
            for outer, inner, rho, obj, viol, rate in rows:
                by_outer.setdefault(outer, []).append(obj)
            for objs in by_outer.values():
                total_sweeps += len(objs)
                for a, b in zip(objs, objs[1:]):
                    if b < a - 1e-9:
                        violations += 1
        ok = violations == 0 and self.elapsed <= 600
        _emit("A2 monotonicity suite",
              ok, f"{N_TRIALS} trials, {total_sweeps} sweeps, "
                  f"{violations} violations, {self.elapsed:.0f}s")

    def test_a3_penalty_feasibility(self):
        results = self.batch()
        clean = 0
        flagged = 0
        for seed, rows, viol, converged, degraded, margins, rate in results:
            feasible = (viol <= 1e-5
                        and margins["comm"] >= -1e-4
                        and margins["leakage"] >= -1e-4
                        and margins["radar"] >= -1e-4
                        and margins["power"] >= -1e-9
                        and not degraded)
            if feasible and converged:
                clean += 1
            elif not converged:
                flagged += 1   # reported, not silently passed
        ok = clean >= int(np.ceil(0.9 * N_TRIALS)) and clean + flagged == N_TRIALS
        _emit("A3 penalty feasibility",
              ok, f"{clean}/{N_TRIALS} clean, {flagged} flagged")

    def test_a9_determinism(self):
        scen = desk_scenario(1)
        r1 = run(scen, SUITE_OPTS)
        r2 = run(scen, SUITE_OPTS)
        ok = (r1.state.sweep_rows == r2.state.sweep_rows
              and r1.state.objective_trace == r2.state.objective_trace
              and np.array_equal(r1.vars.w, r2.vars.w)
              and np.array_equal(r1.vars.phi, r2.vars.phi)
              and np.array_equal(r1.vars.u, r2.vars.u))
        _emit("A9 determinism (bitwise traces)", ok)


def test_a4_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n_inst = 200
    worst = {"z": 0.0, "x": 0.0, "w": 0.0, "phi": 0.0}

    for i in range(n_inst):
        n_cols = int(rng.integers(3, 6))
        k = int(rng.integers(0, min(2, n_cols)))
        c = 2.0 * (rng.standard_normal(n_cols) + 1j * rng.standard_normal(n_cols))
        iota = 0.6 * (rng.standard_normal() + 1j * rng.standard_normal())
        lam = float(abs(rng.standard_normal()) * 4)
        gamma = float(rng.uniform(0.5, 6.0))
        z, _ = solvers.update_z(c, iota, lam, 0.1, gamma, 1.0, k, OPTS)
        _, f_ref = solve_z_reference(c, iota, lam, 0.1, gamma, 1.0, k)
        f_mine = z_block_objective(z, c, iota, lam, 0.1, k)
        worst["z"] = max(worst["z"], (f_mine - f_ref) / max(1.0, abs(f_ref)))

        gamma_e = rng.uniform(0.3, 1.5, size=2)
        c0 = 2.0 * (rng.standard_normal(n_cols) + 1j * rng.standard_normal(n_cols))
        x, _ = solvers.update_x(c0, gamma_e, 1.0, OPTS)
        _, fx_ref = solve_x_reference(c0, gamma_e, 1.0)
        fx = float(np.sum(np.abs(x - c0) ** 2))
        worst["x"] = max(worst["x"], (fx - fx_ref) / max(1.0, abs(fx_ref)))

    # beamformer + phase oracles on fewer, bigger instances (SLSQP cost)
    from risac.linalg import solve_ls_ball_halfspace
    for i in range(n_inst):
        m, k_users = 3, 2
        n_cols = k_users + m
        a = rng.standard_normal((k_users + 1, m)) + 1j * rng.standard_normal((k_users + 1, m))
        targets = rng.standard_normal((k_users + 1, n_cols)) + 1j * rng.standard_normal((k_users + 1, n_cols))
        c = rng.standard_normal(m * n_cols) + 1j * rng.standard_normal(m * n_cols)
        power = 2.0
        eps = float(rng.uniform(0.1, 0.6)) * np.sqrt(power) * np.linalg.norm(c)
        blocks = [(a, targets[:, j]) for j in range(n_cols)]
        sol = solve_ls_ball_halfspace(blocks, c, eps, power, OPTS)
        _, fw_ref = solve_w_reference(a, targets, c, eps, power)
        worst["w"] = max(worst["w"], (sol.objective - fw_ref) / max(1.0, abs(fw_ref)))

        n_ris = 8
        q = rng.standard_normal(n_ris) + 1j * rng.standard_normal(n_ris)
        d = rng.standard_normal(n_ris) + 1j * rng.standard_normal(n_ris)
        eps3 = float(rng.uniform(0.2, 0.8)) * float(np.sum(np.abs(d)))
        phi = solvers.solve_phi_subproblem(q, d, eps3, np.ones(n_ris, dtype=complex), OPTS)
        _, fp_ref = solve_phi_reference(q, d, eps3)
        mine = float(np.real(np.vdot(phi, q)))
        worst["phi"] = max(worst["phi"], (fp_ref - mine) / max(1.0, abs(fp_ref)))

    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-6 for v in worst.values()) and elapsed <= 300
    _emit("A4 oracle equivalence (200 instances/op)",
          ok, f"worst rel gaps {({k: float(f'{v:.2e}') for k, v in worst.items()})}, "
              f"{elapsed:.0f}s")


def test_a5_derivative_correctness():
    rng = np.random.default_rng(7)
    worst_g, worst_h, worst_bound = 0.0, 0.0, 0.0
    for trial in range(100):
        scen, ch, vars, aux_rng = desk_setup(seed=trial + 1)
        aux = exact_aux(vars, ch)
        k = trial % scen.k_users
        u_t = rng.uniform(-0.015, 0.015, 2)
        sur = solvers.build_position_surrogate(ch, vars, aux, k, u_t)

        def psi_hat(u):
            f = ch.user_frv(k, u)
            return float(2.0 * np.real(f.conj() @ sur.varsigma)) + sur.eps5

        fd = fd_gradient(psi_hat, u_t, h=1e-8)
        scale = max(np.max(np.abs(fd)), 1e-6)
        worst_g = max(worst_g, float(np.max(np.abs(fd - sur.grad))) / scale)

        h = 1e-6
        fdh = np.zeros((2, 2))
        geom = solvers._position_geometry(ch, k)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            # finite differences of the fixed-varsigma gradient
            f_p = ch.user_frv(k, u_t + e)
            f_m = ch.user_frv(k, u_t - e)
            coef = 2.0 * geom.wavenumber
            gp = np.array([coef * ((sur.varsigma * np.conj(f_p)).imag @ geom.ax),
                           coef * ((sur.varsigma * np.conj(f_p)).imag @ geom.ay)])
            gm = np.array([coef * ((sur.varsigma * np.conj(f_m)).imag @ geom.ax),
                           coef * ((sur.varsigma * np.conj(f_m)).imag @ geom.ay)])
            fdh[:, i] = (gp - gm) / (2 * h)
        fdh = 0.5 * (fdh + fdh.T)
        hscale = max(np.max(np.abs(fdh)), 1e-6)
        worst_h = max(worst_h, float(np.max(np.abs(fdh - sur.hess))) / hscale)

        # Appendix-C bound at 100 random points per instance
        geom = solvers._position_geometry(ch, k)
        for _ in range(100):
            u = rng.uniform(-0.02, 0.02, 2)
            f = ch.user_frv(k, u)
            wprod = sur.varsigma * np.conj(f)
            c2 = -2.0 * geom.wavenumber ** 2
            hess = np.array([
                [c2 * (wprod.real @ geom.ax2), c2 * (wprod.real @ geom.axy)],
                [c2 * (wprod.real @ geom.axy), c2 * (wprod.real @ geom.ay2)],
            ])
            slack = float(np.linalg.eigvalsh(sur.delta * np.eye(2) - hess).min())
            worst_bound = min(worst_bound, slack / max(sur.delta, 1e-300))
    ok = worst_g <= 1e-4 and worst_h <= 1e-3 and worst_bound >= -1e-9
    _emit("A5 derivative correctness",
          ok, f"grad={worst_g:.2e} hess={worst_h:.2e} bound_slack={worst_bound:.2e}")


def test_a6_mm_properties():
    rng = np.random.default_rng(9)
    worst_touch, worst_major = 0.0, 0.0
    for trial in range(10):
        scen, ch, vars, _ = desk_setup(seed=trial + 3)
        aux = exact_aux(vars, ch)
        vars.r_b = solvers.update_receive_filter(vars, ch)
        prob = solvers._phase_problem(ch, vars, aux, scen.gamma_r, OPTS)
        phi_t = vars.phi
        n = phi_t.size
        for idx in range(0, prob.a_vecs.shape[0], 4):
            a = prob.a_vecs[idx]
            ups = np.outer(a.conj(), a)
            lam = prob.lam_maxes[idx]

            def quad(phi):
                return float(np.real(phi.conj() @ (ups @ phi)))

            def sur(phi):
                return float(lam * np.vdot(phi, phi).real
                             - 2 * np.real(phi.conj() @ (lam * phi_t - ups @ phi_t))
                             + np.real(phi_t.conj() @ (lam * phi_t - ups @ phi_t)))

            scale = max(1.0, abs(quad(phi_t)))
            worst_touch = max(worst_touch, abs(sur(phi_t) - quad(phi_t)) / scale)
            for _ in range(100):
                phi = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
                worst_major = max(worst_major,
                                  (quad(phi) - sur(phi)) / max(1.0, abs(quad(phi))))

        # Lemma-1 bound on the position quadratic
        k = trial % scen.k_users
        q_mat, p = solvers._position_problem(ch, vars, aux, k)
        lam_max, _ = max_eigenpair(q_mat)
        u_t = rng.uniform(-0.01, 0.01, 2)
        f_t = ch.user_frv(k, u_t)
        l_r = f_t.size
        lam_eye = lam_max * np.eye(l_r)

        def omega(f):
            return float(np.real(f.conj() @ (lam_eye @ f))
                         - 2 * np.real(f.conj() @ ((lam_eye - q_mat) @ f_t))
                         + np.real(f_t.conj() @ ((lam_eye - q_mat) @ f_t)))

        def quad_f(f):
            return float(np.real(f.conj() @ (q_mat @ f)))

        scale = max(1.0, abs(quad_f(f_t)))
        worst_touch = max(worst_touch, abs(omega(f_t) - quad_f(f_t)) / scale)
        for _ in range(100):
            u = rng.uniform(-0.02, 0.02, 2)
            f = ch.user_frv(k, u)
            worst_major = max(worst_major,
                              (quad_f(f) - omega(f)) / max(1.0, abs(quad_f(f))))
    ok = worst_touch <= 1e-9 and worst_major <= 1e-9
    _emit("A6 MM majorization properties",
          ok, f"touch={worst_touch:.2e} majorization_slack={worst_major:.2e}")


def test_a7_rayleigh_quotient_optimality():
    rng = np.random.default_rng(13)
    ok = True
    detail = []
    for trial in range(5):
        scen, ch, vars, _ = desk_setup(seed=trial + 11)
        vars.r_b = solvers.update_receive_filter(vars, ch)
        best = metrics.radar_snr_lb(vars, ch)
        probe = vars.copy()
        for _ in range(1000):
            probe.r_b = (rng.standard_normal(vars.r_b.size)
                         + 1j * rng.standard_normal(vars.r_b.size))
            if metrics.radar_snr_lb(probe, ch) > best * (1 + 1e-12):
                ok = False
        probe.r_b = 7.3 * vars.r_b
        scale_dev = abs(metrics.radar_snr_lb(probe, ch) / best - 1.0)
        probe.r_b = np.exp(0.9j) * vars.r_b
        phase_dev = abs(metrics.radar_snr_lb(probe, ch) / best - 1.0)
        if scale_dev > 1e-12 or phase_dev > 1e-12:
            ok = False
        detail.append(f"{scale_dev:.1e}/{phase_dev:.1e}")
    _emit("A7 Rayleigh-quotient optimality", ok, " ".join(detail))


def _trend_sweep(param, values, schemes, trials=20):
    spec = SweepSpec(param=param, values=values, trials=trials,
                     schemes=schemes, base=desk_scenario(0), out="unused.csv",
                     opts=SUITE_OPTS)
    results = run_trials(spec)
    means = {}
    for value in values:
        for scheme in schemes:
            grp = [r.sum_rate for r in results
                   if r.value == value and r.scheme == scheme]
            means[(value, scheme)] = float(np.mean(grp))
    return means


class TestTrends:
    def test_a8a_n_sweep(self):
        t0 = time.perf_counter()
        means = _trend_sweep("N", [8, 16, 32], ["proposed", "fpa", "random_phase"])
        ok = all(means[(v, "proposed")] > means[(v, "fpa")]
                 and means[(v, "proposed")] > means[(v, "random_phase")]
                 for v in [8, 16, 32])
        increasing = all(means[(a, "proposed")] < means[(b, "proposed")]
                         for a, b in [(8, 16), (16, 32)])
        elapsed = time.perf_counter() - t0
        _emit("A8a trend: proposed beats FPA/random-phase over N",
              ok and elapsed <= 1800,
              f"{ {k: round(v, 2) for k, v in means.items()} } "
              f"monotone_in_N={increasing} {elapsed:.0f}s")

    def test_a8b_region_sweep(self):
        t0 = time.perf_counter()
        means = _trend_sweep("A_over_lambda", [1, 2, 4],
                             ["proposed", "fpa", "random_phase"])
        ok = all(means[(v, "proposed")] > means[(v, "fpa")]
                 and means[(v, "proposed")] > means[(v, "random_phase")]
                 for v in [1, 2, 4])
        elapsed = time.perf_counter() - t0
        _emit("A8b trend: proposed beats FPA/random-phase over A/lambda",
              ok and elapsed <= 1800,
              f"{ {k: round(v, 2) for k, v in means.items()} } {elapsed:.0f}s")

    def test_a8c_radar_threshold_sweep(self):
        t0 = time.perf_counter()
        means = _trend_sweep("Gamma_r_dB", [-5, 0, 5], ["proposed"])
        seq = [means[(v, "proposed")] for v in [-5, 0, 5]]
        ok = seq[0] >= seq[1] - 1e-9 and seq[1] >= seq[2] - 1e-9
        elapsed = time.perf_counter() - t0
        _emit("A8c trend: sum-rate non-increasing in Gamma_r",
              ok and elapsed <= 1800, f"{[round(s, 3) for s in seq]} {elapsed:.0f}s")

    def test_a8d_power_sweep(self):
        t0 = time.perf_counter()
        means = _trend_sweep("PB_dBm", [26, 29, 32], ["proposed"])
        seq = [means[(v, "proposed")] for v in [26, 29, 32]]
        ok = seq[0] <= seq[1] + 1e-9 and seq[1] <= seq[2] + 1e-9
        elapsed = time.perf_counter() - t0
        _emit("A8d trend: sum-rate non-decreasing in P_B",
              ok and elapsed <= 1800, f"{[round(s, 3) for s in seq]} {elapsed:.0f}s")
