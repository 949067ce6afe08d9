"""Benchmark schemes: the joint optimizer with blocks disabled, and the
fully separate design pipeline."""

from __future__ import annotations

from dataclasses import replace
from typing import Tuple

import numpy as np

from . import metrics, solvers
from .channel import ChannelSet, Scenario, f_response_matrix, sample_scenario
from .linalg import DEFAULT_OPTIONS, InfeasibleSubproblemError, SolverOptions, solve_ls_ball_halfspace
from .metrics import LN2, AuxVariables, DesignVariables
from .optimizer import RunOptions, RunResult, margins_ok, run

SCHEMES = ("proposed", "fpa", "rpa", "separate", "comm_only", "random_phase")


def _phase_power_iterations(b_mat: np.ndarray, n: int, n_iter: int = 60) -> np.ndarray:
    """Maximize phi^H B phi over unit-modulus phi (B Hermitian PSD) by the
    minorant iteration phi <- exp(j angle(B phi))."""
    phi = np.ones(n, dtype=complex)
    for _ in range(n_iter):
        v = b_mat @ phi
        mag = np.abs(v)
        nxt = np.where(mag > 1e-300, v / np.where(mag > 1e-300, mag, 1.0), phi)
        if np.max(np.abs(nxt - phi)) < 1e-12:
            break
        phi = nxt
    return phi


def _grid_argmax_channel_power(channels: ChannelSet, k: int,
                               resolution_frac: float = 1 / 50) -> np.ndarray:
    """u_k* = argmax ||h_k(u)||^2 on a wavelength/50 grid over the region."""
    scen = channels.scenario
    lo, hi = scen.region(k)
    step = scen.wavelength * resolution_frac
    xs = np.arange(lo[0], hi[0] + step / 2, step)
    ys = np.arange(lo[1], hi[1] + step / 2, step)
    c_mat = channels.sigma_diag[k + 1][:, None] * channels.g_ris[k + 1]
    b_mat = c_mat @ c_mat.conj().T
    ax, ay = channels.user_direction_cos(k)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    rho = gx.ravel()[:, None] * ax + gy.ravel()[:, None] * ay
    f = np.exp(2j * np.pi / scen.wavelength * rho)          # (grid, L_r)
    vals = np.einsum("gi,ij,gj->g", f.conj(), b_mat, f).real
    best = int(np.argmax(vals))
    return np.array([gx.ravel()[best], gy.ravel()[best]])


def _fp_comm_beamformer(channels: ChannelSet, phi: np.ndarray, u: np.ndarray,
                        power: float, opts: SolverOptions,
                        n_iter: int = 40) -> np.ndarray:
    """Sum-rate FP beamformer under the power ball alone (no sensing, no
    leakage): alternate the FP scalars with the ball-constrained LS solve."""
    scen = channels.scenario
    k_users, m = scen.k_users, scen.m
    gs = np.vstack([channels.cascade(k, phi, u[k]) for k in range(k_users)])
    w = gs.conj().T.copy()
    for k in range(k_users):
        w[:, k] *= np.sqrt(power / k_users) / max(np.linalg.norm(w[:, k]), 1e-300)
    noise = channels.noise_power
    prev_rate = -np.inf
    for _ in range(n_iter):
        cw = gs.conj() @ w                                   # (K, K)
        p = np.abs(cw) ** 2
        sinr = np.array([p[k, k] / (np.sum(p[k]) - p[k, k] + noise)
                         for k in range(k_users)])
        lam = sinr
        iota = np.array([np.sqrt(1.0 + lam[k]) * cw[k, k] / (np.sum(p[k]) + noise)
                         for k in range(k_users)])
        a_weights = np.abs(iota) ** 2 / LN2
        rows = np.sqrt(a_weights)[:, None] * gs.conj()
        blocks = []
        for j in range(k_users):
            b_j = np.zeros(k_users, dtype=complex)
            if a_weights[j] > 0:
                b_j[j] = (np.sqrt(1.0 + lam[j]) * iota[j] / LN2) / np.sqrt(a_weights[j])
            blocks.append((rows, b_j))
        sol = solve_ls_ball_halfspace(blocks, None, 0.0, power, opts)
        w = sol.w.reshape(m, k_users, order="F")
        rate = float(np.sum(np.log2(1.0 + sinr)))
        if rate - prev_rate < 1e-9:
            break
        prev_rate = rate
    return w


def separate_design(channels: ChannelSet, opts: RunOptions) -> Tuple[DesignVariables, int]:
    """Sequential per-block pipeline: positions by channel-power grid
    search, phases by sum channel gain MM, W_c by FP under the power
    budget, W_r by minimum power meeting the radar threshold, and the
    matched receive filter."""
    scen = channels.scenario
    k_users, m = scen.k_users, scen.m
    u = np.vstack([_grid_argmax_channel_power(channels, k) for k in range(k_users)])

    b_tot = np.zeros((scen.n_ris, scen.n_ris), dtype=complex)
    for k in range(k_users):
        f_mat = f_response_matrix(channels.user_channel(k, u[k]), channels.h_bs_ris)
        b_tot += (f_mat @ f_mat.conj().T).conj()
    phi = _phase_power_iterations(b_tot, scen.n_ris)

    w_c = _fp_comm_beamformer(channels, phi, u, scen.power_cap, opts.solver)
    w = np.zeros((m, k_users + m), dtype=complex)
    w[:, :k_users] = w_c
    vars = DesignVariables(w=w, phi=phi,
                           r_b=np.zeros(m * (k_users + m), dtype=complex), u=u)
    vars.r_b = solvers.update_receive_filter(vars, channels)

    if opts.sensing_enabled:
        c, eps = solvers.sensing_constraint(vars, channels, scen.gamma_r)
        c_cols = c.reshape(m, k_users + m, order="F")
        ach = float(np.real(np.vdot(c_cols[:, :k_users].flatten(order="F"),
                                    w_c.flatten(order="F"))))
        eps_r = eps - ach
        if eps_r > 0:
            c_r = c_cols[:, k_users:].flatten(order="F")
            budget = scen.power_cap
            try:
                sol = solve_ls_ball_halfspace(
                    [(np.eye(m, dtype=complex), np.zeros(m, dtype=complex))
                     for _ in range(m)],
                    c_r, eps_r, budget, opts.solver)
                w_r = sol.w.reshape(m, m, order="F")
            except InfeasibleSubproblemError:
                w_r = np.zeros((m, m), dtype=complex)
            p_r = float(np.linalg.norm(w_r) ** 2)
            p_c = float(np.linalg.norm(w_c) ** 2)
            if p_r + p_c > scen.power_cap:
                # Radar gets priority; communication shrinks into the rest.
                rest = max(scen.power_cap - p_r, 0.0)
                w_c = w_c * np.sqrt(rest / p_c) if p_c > 0 else w_c
            vars.w[:, :k_users] = w_c
            vars.w[:, k_users:] = w_r
        vars.r_b = solvers.update_receive_filter(vars, channels)
    return vars, 1


def run_scheme(scheme: str, scenario: Scenario, opts: RunOptions | None = None,
               channels: ChannelSet | None = None) -> RunResult:
    """Dispatch one trial of the named scheme on the given scenario."""
    opts = opts or RunOptions()
    if channels is None:
        channels = sample_scenario(scenario, scenario.seed)
    if scheme == "proposed":
        return run(scenario, opts, channels=channels)
    if scheme == "fpa":
        return run(scenario, replace(opts, optimize_positions=False),
                   channels=channels)
    if scheme == "rpa":
        rng = np.random.default_rng([scenario.seed, 0xA11CE])
        lo, hi = scenario.region(0)
        u0 = rng.uniform(lo, hi, size=(scenario.k_users, 2))
        return run(scenario, replace(opts, optimize_positions=False, init_u=u0),
                   channels=channels)
    if scheme == "random_phase":
        return run(scenario, replace(opts, optimize_phase=False),
                   channels=channels)
    if scheme == "comm_only":
        return run(scenario, replace(opts, sensing_enabled=False),
                   channels=channels)
    if scheme == "separate":
        import time
        t0 = time.perf_counter()
        vars, iters = separate_design(channels, opts)
        report = metrics.evaluate(vars, channels)
        aux = AuxVariables(
            lam=report.gamma.copy(),
            iota=np.zeros(scenario.k_users, dtype=complex),
            z=np.vstack([channels.cascade(k, vars.phi, vars.u[k]).conj() @ vars.w
                         for k in range(scenario.k_users)]),
            x=channels.cascade_eve(vars.phi).conj() @ vars.w,
            mu1=np.zeros(scenario.k_users), mu2=np.zeros(scenario.k_users))
        from .optimizer import PenaltyState
        state = PenaltyState(rho=opts.rho0, eta=opts.eta, eps_in=opts.eps_in,
                             eps_out=opts.eps_out, t1_max=opts.t1_max,
                             t2_max=opts.t2_max, t1=iters)
        return RunResult(vars=vars, aux=aux, report=report, state=state,
                         converged=margins_ok(report, opts),
                         wall_time=time.perf_counter() - t0)
    raise ValueError(f"unknown scheme {scheme!r} (choose from {SCHEMES})")
