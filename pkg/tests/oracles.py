"""Independent reference implementations used only by the tests.

These never share code paths with the package solvers: scipy's SLSQP on
real-parametrized convex programs, projected gradient with a Dykstra
projection, dense eigendecomposition, finite differences and grid scans.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

LN2 = np.log(2.0)


def c2r(z: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(z), np.imag(z)])


def r2c(v: np.ndarray) -> np.ndarray:
    n = v.size // 2
    return v[:n] + 1j * v[n:]


def solve_z_reference(c_row, iota_k, lam_k, rho, gamma, sigma2, k):
    """Numerical Lagrangian-minimization oracle for the user-k splitting
    block: BFGS minimizes L(z, mu) over z, a bounded scalar search
    maximizes the dual over mu.  The block has a single (indefinite)
    quadratic constraint, so strong duality holds and the dual value is
    the exact primal optimum."""
    from scipy.optimize import minimize_scalar

    a = abs(iota_k) ** 2 / LN2
    b = np.sqrt(1.0 + lam_k) / LN2

    def objective(z):
        pen = np.sum(np.abs(z - c_row) ** 2) / (2.0 * rho)
        quad = a * np.sum(np.abs(z) ** 2)
        lin = -2.0 * b * np.real(np.conj(iota_k) * z[k])
        return quad + lin + pen

    def floor_gap(z):
        p = np.abs(z) ** 2
        return gamma * (np.sum(p) - p[k] + sigma2) - p[k]

    def lagrangian_min(mu):
        def lag(v):
            z = r2c(v)
            return objective(z) + mu * floor_gap(z)
        res = minimize(lag, c2r(c_row), method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 500})
        return float(res.fun), r2c(res.x)

    # unconstrained minimizer first
    val0, z0 = lagrangian_min(0.0)
    if floor_gap(z0) <= 0.0:
        return z0, float(objective(z0))
    mu_max = (a + 1.0 / (2.0 * rho)) * (1.0 - 1e-9)
    res = minimize_scalar(lambda mu: -lagrangian_min(mu)[0],
                          bounds=(0.0, mu_max), method="bounded",
                          options={"xatol": 1e-12})
    dual_val, z_star = lagrangian_min(float(res.x))
    return z_star, float(dual_val)


def z_block_objective(z, c_row, iota_k, lam_k, rho, k):
    a = abs(iota_k) ** 2 / LN2
    b = np.sqrt(1.0 + lam_k) / LN2
    return float(a * np.sum(np.abs(z) ** 2)
                 - 2.0 * b * np.real(np.conj(iota_k) * z[k])
                 + np.sum(np.abs(z - c_row) ** 2) / (2.0 * rho))


def solve_x_reference(c_row, gamma_eve, sigma2):
    """SLSQP on the eavesdropper splitting block (K leakage caps)."""
    k_users = len(gamma_eve)

    def objective(v):
        return float(np.sum(np.abs(r2c(v) - c_row) ** 2))

    cons = []
    for kk in range(k_users):
        def gap(v, kk=kk):
            p = np.abs(r2c(v)) ** 2
            return gamma_eve[kk] * (np.sum(p) - p[kk] + sigma2) - p[kk]
        cons.append({"type": "ineq", "fun": gap})
    res = minimize(objective, c2r(c_row) * 0.5, method="SLSQP",
                   constraints=cons, options={"maxiter": 600, "ftol": 1e-14})
    return r2c(res.x), float(res.fun)


def solve_w_reference(a_mat, targets, c, eps, power):
    """SLSQP on the beamformer block (LS + half-space + power ball)."""
    m, n_cols = a_mat.shape[1], targets.shape[1]

    def unpack(v):
        return r2c(v).reshape(m, n_cols, order="F")

    def objective(v):
        w = unpack(v)
        return float(np.sum(np.abs(a_mat @ w - targets) ** 2))

    cons = [{"type": "ineq",
             "fun": lambda v: power - float(np.sum(np.abs(r2c(v)) ** 2))}]
    if c is not None:
        cons.append({"type": "ineq",
                     "fun": lambda v: float(np.real(np.vdot(c, r2c(v)))) - eps})
    x0 = np.zeros(2 * m * n_cols)
    res = minimize(objective, x0, method="SLSQP", constraints=cons,
                   options={"maxiter": 800, "ftol": 1e-14})
    return r2c(res.x), float(res.fun)


def solve_phi_reference(q, d, eps3):
    """SLSQP on the linearized phase subproblem (maximize Re{phi^H q})."""
    n = q.shape[0]

    def objective(v):
        return -float(np.real(np.vdot(r2c(v), q)))

    cons = [{"type": "ineq",
             "fun": lambda v: float(np.real(d @ r2c(v))) - eps3}]
    for i in range(n):
        cons.append({"type": "ineq",
                     "fun": lambda v, i=i: 1.0 - abs(r2c(v)[i]) ** 2})
    x0 = c2r(np.ones(n, dtype=complex) / np.sqrt(2))
    res = minimize(objective, x0, method="SLSQP", constraints=cons,
                   options={"maxiter": 800, "ftol": 1e-14})
    return r2c(res.x), -float(res.fun)


def dykstra_ball_halfspace(w, c, eps, power, n_iter=60):
    """Dykstra's alternating projection onto {||w||^2 <= P, Re{c^H w} >= eps}."""
    p_inc = np.zeros_like(w)
    q_inc = np.zeros_like(w)
    x = w.copy()
    cc = float(np.vdot(c, c).real) if c is not None else 1.0
    for _ in range(n_iter):
        y = x + p_inc
        nrm = np.linalg.norm(y)
        xb = y * min(1.0, np.sqrt(power) / nrm) if nrm > 0 else y
        p_inc = y - xb
        y2 = xb + q_inc
        if c is not None:
            gap = eps - float(np.real(np.vdot(c, y2)))
            xh = y2 + (gap / cc) * c if gap > 0 else y2
        else:
            xh = y2
        q_inc = y2 - xh
        x = xh
    return x


def projected_gradient_ls(blocks, c, eps, power, n_iter=100_000):
    """Projected gradient (Dykstra projection) on the LS/ball/half-space
    program; the independent oracle for the convex kernel."""
    dims = [b[0].shape[1] for b in blocks]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    lip = 2.0 * max(
        float(np.linalg.eigvalsh(a.conj().T @ a)[-1]) for a, _ in blocks)
    step = 1.0 / max(lip, 1e-12)
    w = np.zeros(int(offsets[-1]), dtype=complex)
    if c is not None:
        w = dykstra_ball_halfspace(w, c, eps, power)
    for _ in range(n_iter):
        grad = np.empty_like(w)
        for j, (a, b) in enumerate(blocks):
            seg = slice(offsets[j], offsets[j + 1])
            grad[seg] = 2.0 * (a.conj().T @ (a @ w[seg] - b))
        w = dykstra_ball_halfspace(w - step * grad, c, eps, power)
    return w


def ls_objective(blocks, w):
    dims = [b[0].shape[1] for b in blocks]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    return float(sum(
        np.linalg.norm(a @ w[offsets[j]:offsets[j + 1]] - b) ** 2
        for j, (a, b) in enumerate(blocks)))


def fd_gradient(fun, u, h=1e-8):
    g = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[i] = (fun(u + e) - fun(u - e)) / (2 * h)
    return g


def fd_hessian_of_gradient(grad_fun, u, h=1e-6):
    out = np.zeros((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        out[:, i] = (grad_fun(u + e) - grad_fun(u - e)) / (2 * h)
    return 0.5 * (out + out.T)
