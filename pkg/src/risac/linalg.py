"""Self-contained complex linear-algebra kernels for the block solvers.

Everything here is dependency-free (numpy only) and pure: dominant
eigenpair by power iteration, a guarded monotone bisection, the convex
least-squares kernel over a power ball intersected with a half-space,
and a box projection. No external optimization toolbox is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives structurally invalid input."""


class BracketError(RuntimeError):
    """Raised when a bisection bracket has no sign change and no boundary certificate."""


class InfeasibleSubproblemError(RuntimeError):
    """Raised when a constrained subproblem has an empty feasible set."""


class DegenerateSensingError(RuntimeError):
    """Raised when the echo channel vanishes and the receive filter is undefined."""


@dataclass
class SolverOptions:
    """Tolerances and iteration caps shared by the numeric kernels.

    Defaults sit well below the 1e-5 / 1e-7 outer/inner loop thresholds so
    subproblem noise never masks loop convergence.
    """

    bisection_tol: float = 1e-8
    bisection_max_iter: int = 200
    eig_tol: float = 1e-10
    eig_max_iter: int = 5000
    ls_kkt_tol: float = 1e-7
    ls_max_iter: int = 200

    def __post_init__(self) -> None:
        if min(self.bisection_tol, self.eig_tol, self.ls_kkt_tol) <= 0:
            raise InvalidInputError("all tolerances must be > 0")
        if min(self.bisection_max_iter, self.eig_max_iter, self.ls_max_iter) < 1:
            raise InvalidInputError("all iteration caps must be >= 1")


DEFAULT_OPTIONS = SolverOptions()

_EPS = float(np.finfo(float).eps)


def _require_hermitian(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError("expected a square matrix of size >= 1")
    scale = np.max(np.abs(a))
    if scale > 0 and np.max(np.abs(a - a.conj().T)) > 1e-12 * scale:
        raise InvalidInputError("matrix is not Hermitian within 1e-12 relative")
    return a


def max_eigenpair(
    a: np.ndarray, opts: SolverOptions = DEFAULT_OPTIONS
) -> Tuple[float, np.ndarray]:
    """Dominant eigenpair of a Hermitian PSD matrix by power iteration.

    Starts from the normalized all-ones vector (deterministic) and falls
    back to one seeded random restart if the residual stagnates.  Returns
    (lam_max, v) with ||A v - lam_max v|| <= eig_tol * lam_max, or
    lam_max = 0 for the zero matrix.
    """
    a = _require_hermitian(a)
    n = a.shape[0]
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        v0 = np.zeros(n, dtype=complex)
        v0[0] = 1.0
        return 0.0, v0

    def _iterate(v: np.ndarray) -> Tuple[float, np.ndarray, float]:
        lam = 0.0
        res = np.inf
        for _ in range(opts.eig_max_iter):
            w = a @ v
            nw = np.linalg.norm(w)
            if nw < 1e-300:
                return 0.0, v, 0.0
            v = w / nw
            lam = float(np.real(v.conj() @ (a @ v)))
            res = float(np.linalg.norm(a @ v - lam * v))
            if res <= opts.eig_tol * max(lam, 1e-300):
                break
        return lam, v, res

    v = np.ones(n, dtype=complex) / np.sqrt(n)
    lam, v, res = _iterate(v)
    if res > opts.eig_tol * max(lam, 1e-300):
        rng = np.random.default_rng(0)
        v2 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lam2, v2, res2 = _iterate(v2 / np.linalg.norm(v2))
        if lam2 > lam or res2 < res:
            lam, v = lam2, v2
    return lam, v


def bisect_monotone(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    opts: SolverOptions = DEFAULT_OPTIONS,
    *,
    keep: str = "any",
) -> float:
    """Root of a monotone scalar function on [lo, hi] by bisection.

    ``keep`` controls which side of the root the returned point lies on:
    "any" returns the first midpoint with |f| <= bisection_tol,
    "nonnegative"/"nonpositive" return the endpoint of the shrinking
    bracket on that sign side (still with |f| <= bisection_tol).  The
    function is never evaluated outside [lo, hi].  Raises BracketError
    if f(lo) and f(hi) share a sign and neither endpoint is a root.
    """
    if not lo <= hi:
        raise InvalidInputError("bisection interval requires lo <= hi")
    tol = opts.bisection_tol
    flo = f(lo)
    fhi = f(hi)
    if abs(flo) <= tol and (keep == "any" or (keep == "nonnegative") == (flo >= 0)):
        return lo
    if abs(fhi) <= tol and (keep == "any" or (keep == "nonnegative") == (fhi >= 0)):
        return hi
    if np.sign(flo) == np.sign(fhi):
        if abs(flo) <= tol:
            return lo
        if abs(fhi) <= tol:
            return hi
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo:.3e}, f(hi)={fhi:.3e}"
        )
    a, fa, b, fb = lo, flo, hi, fhi
    for _ in range(opts.bisection_max_iter):
        m = 0.5 * (a + b)
        fm = f(m)
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
        if keep == "any":
            if abs(fm) <= tol:
                return m
        elif keep == "nonnegative":
            pt, fp = (a, fa) if fa >= 0 else (b, fb)
            if abs(fp) <= tol:
                return pt
        else:
            pt, fp = (a, fa) if fa <= 0 else (b, fb)
            if abs(fp) <= tol:
                return pt
        if b - a <= _EPS * max(abs(a), abs(b), 1.0):
            break
    if keep == "nonnegative":
        return a if fa >= 0 else b
    if keep == "nonpositive":
        return a if fa <= 0 else b
    return a if abs(fa) <= abs(fb) else b


def project_box(u: np.ndarray, region: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Componentwise clamp of a 2-vector onto an axis-aligned rectangle."""
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    if np.any(lo > hi):
        raise InvalidInputError("degenerate region: min > max")
    return np.clip(np.asarray(u, dtype=float), lo, hi)


@dataclass
class BallHalfspaceSolution:
    """Stacked solution of the LS / ball / half-space kernel plus KKT data."""

    w: np.ndarray
    tau: float
    nu: float
    objective: float
    kkt_residual: float


def _ls_objective(blocks, w_cols) -> float:
    return float(
        sum(np.linalg.norm(a @ w - b) ** 2 for (a, b), w in zip(blocks, w_cols))
    )


def solve_ls_ball_halfspace(
    blocks: Sequence[Tuple[np.ndarray, np.ndarray]],
    c: np.ndarray | None,
    eps: float,
    power: float,
    opts: SolverOptions = DEFAULT_OPTIONS,
    warm: np.ndarray | None = None,
) -> BallHalfspaceSolution:
    """Minimize sum_j ||A_j w_j - b_j||^2 over the set
    { Re{c^H w} >= eps, ||w||^2 <= power } (w = stacked columns).

    Two-multiplier dual: nu >= 0 for the half-space, tau >= 0 for the
    ball, with the stationarity system (A_j^H A_j + tau I) w_j =
    A_j^H b_j + (nu/2) c_j.  For fixed tau the half-space multiplier has
    the closed form nu(tau) = max(0, (eps - a(tau)) / b(tau)), so a single
    bisection on the ball residual suffices.  Any KKT point of this convex
    program is globally optimal.  Pass ``c=None`` to disable the
    half-space.  If a feasible ``warm`` start beats the computed point it
    is returned instead (the kernel never returns worse than a feasible
    warm start).
    """
    if power <= 0:
        raise InvalidInputError("power bound must be > 0")
    sqrt_p = np.sqrt(power)
    n_cols = len(blocks)
    dims = [np.asarray(b[0]).shape[1] for b in blocks]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    total = int(offsets[-1])

    if c is not None:
        c = np.asarray(c, dtype=complex).reshape(-1)
        if c.size != total:
            raise InvalidInputError("half-space vector length mismatch")
        cnorm = np.linalg.norm(c)
        if eps > sqrt_p * cnorm + 1e-12 * max(1.0, abs(eps)):
            raise InfeasibleSubproblemError(
                f"half-space unreachable inside the ball: eps={eps:.6e} > "
                f"sqrt(P)*||c||={sqrt_p * cnorm:.6e}"
            )

    # Eigen-decompose each block's normal matrix once; every (tau, nu)
    # evaluation is then O(M) per column in the eigenbasis.  Identical
    # block matrices (the usual case: one cascade matrix shared by every
    # beamformer column) are decomposed once.
    eig_u, eig_s, beta, gamma = [], [], [], []
    s_max = 0.0
    eig_cache: dict = {}
    for j, (a_j, b_j) in enumerate(blocks):
        b_j = np.asarray(b_j, dtype=complex).reshape(-1)
        key = id(a_j)
        if key not in eig_cache:
            a_mat = np.asarray(a_j, dtype=complex)
            s, u = np.linalg.eigh(a_mat.conj().T @ a_mat)
            eig_cache[key] = (np.clip(s.real, 0.0, None), u, a_mat)
        s, u, a_mat = eig_cache[key]
        eig_u.append(u)
        eig_s.append(s)
        beta.append(u.conj().T @ (a_mat.conj().T @ b_j))
        if c is not None:
            gamma.append(u.conj().T @ (0.5 * c[offsets[j]:offsets[j + 1]]))
        else:
            gamma.append(np.zeros(dims[j], dtype=complex))
        s_max = max(s_max, float(s[-1]) if s.size else 0.0)

    tau_floor = 1e-14 * max(s_max, 1.0)
    shared = len(eig_cache) == 1 and len(set(dims)) == 1
    if shared:
        s0 = eig_s[0]
        beta_m = np.column_stack(beta)
        gamma_m = np.column_stack(gamma)
        gamma_sq = np.sum(np.abs(gamma_m) ** 2, axis=1)

    def w_hat(tau: float, nu: float):
        if shared:
            denom = s0 + tau
            rhs = beta_m + nu * gamma_m if nu != 0.0 else beta_m
            if tau <= 0.0:
                null = denom <= tau_floor
                denom = np.where(null, 1.0, denom)
                return np.where(null[:, None], 0.0, rhs / denom[:, None])
            return rhs / denom[:, None]
        cols = []
        for j in range(n_cols):
            denom = eig_s[j] + tau
            rhs = beta[j] + nu * gamma[j]
            if tau <= 0.0:
                # Minimum-norm solution on the consistent part; null-space
                # components of the rhs mean no tau=0 stationary point exists
                # (handled by callers via the norm blow-up at tau_floor).
                null = denom <= tau_floor
                out = np.where(null, 0.0, rhs / np.where(null, 1.0, denom))
            else:
                out = rhs / denom
            cols.append(out)
        return cols

    def to_vec(cols_hat) -> np.ndarray:
        if shared:
            return (eig_u[0] @ cols_hat).flatten(order="F")
        return np.concatenate([eig_u[j] @ cols_hat[j] for j in range(n_cols)])

    def sq_norm(cols_hat) -> float:
        if shared:
            return float(np.sum(cols_hat.real ** 2 + cols_hat.imag ** 2))
        return float(sum(np.vdot(h, h).real for h in cols_hat))

    def halfspace_val(cols_hat) -> float:
        # Re{c^H w} = 2 sum Re{gamma^H w_hat} in the eigenbasis.
        if shared:
            return 2.0 * float(np.sum((np.conj(gamma_m) * cols_hat).real))
        return 2.0 * float(
            sum(np.vdot(gamma[j], cols_hat[j]).real for j in range(n_cols))
        )

    def nu_for(tau: float) -> float:
        if c is None:
            return 0.0
        a_val = halfspace_val(w_hat(tau, 0.0))
        if shared:
            b_val = 2.0 * float(np.sum(gamma_sq / (s0 + max(tau, tau_floor))))
        else:
            b_val = 2.0 * float(
                sum(
                    np.sum(np.abs(gamma[j]) ** 2 / (eig_s[j] + max(tau, tau_floor)))
                    for j in range(n_cols)
                )
            )
        if b_val <= 0.0:
            return 0.0
        return max(0.0, (eps - a_val) / b_val)

    def rhs_consistent(tau: float, nu: float) -> bool:
        if tau > 0:
            return True
        for j in range(n_cols):
            null = eig_s[j] <= tau_floor
            if np.any(np.abs((beta[j] + nu * gamma[j])[null]) > 1e-10 * max(1.0, np.linalg.norm(beta[j]))):
                return False
        return True

    def solve_ball(nu: float) -> Tuple[float, list]:
        """Ball-constrained solve at fixed nu: pick tau >= 0 with ||w||^2 <= P."""
        if rhs_consistent(0.0, nu):
            cols0 = w_hat(0.0, nu)
            if sq_norm(cols0) <= power * (1 + 1e-12):
                return 0.0, cols0
        tau_hi = max(s_max, 1.0)
        while sq_norm(w_hat(tau_hi, nu)) > power and tau_hi < 1e18 * max(s_max, 1.0):
            tau_hi *= 2.0
        tau = bisect_monotone(
            lambda t: sq_norm(w_hat(t, nu)) - power,
            tau_floor,
            tau_hi,
            opts,
            keep="nonpositive",
        )
        return tau, w_hat(tau, nu)

    # Case nu = 0: plain ball-constrained least squares.
    tau0, cols0 = solve_ball(0.0)
    if c is None or halfspace_val(cols0) >= eps - opts.bisection_tol:
        tau_star, nu_star, cols = tau0, 0.0, cols0
    else:
        # Half-space active: bisect tau on the ball residual with the
        # tightness-enforcing nu(tau) substituted.
        def ball_resid(tau: float) -> float:
            return sq_norm(w_hat(tau, nu_for(tau))) - power

        g_lo = ball_resid(tau_floor)
        if g_lo <= 0.0 and rhs_consistent(0.0, nu_for(tau_floor)):
            tau_star = 0.0
            nu_star = nu_for(tau_floor)
            cols = w_hat(tau_floor, nu_star)
        elif g_lo <= 0.0:
            tau_star = tau_floor
            nu_star = nu_for(tau_floor)
            cols = w_hat(tau_star, nu_star)
        else:
            tau_hi = max(s_max, 1.0)
            grew = 0
            while ball_resid(tau_hi) > 0.0 and grew < 200:
                tau_hi *= 2.0
                grew += 1
            if ball_resid(tau_hi) > 0.0:
                # eps == sqrt(P)||c|| boundary: the feasible set is a point.
                w_b = sqrt_p * c / np.linalg.norm(c)
                cols_b = [
                    eig_u[j].conj().T @ w_b[offsets[j]:offsets[j + 1]]
                    for j in range(n_cols)
                ]
                cols = np.column_stack(cols_b) if shared else cols_b
                tau_star, nu_star = tau_hi, nu_for(tau_hi)
            else:
                tau_star = bisect_monotone(
                    ball_resid, tau_floor, tau_hi, opts, keep="nonpositive"
                )
                nu_star = nu_for(tau_star)
                cols = w_hat(tau_star, nu_star)

    w = to_vec(cols)
    w_cols = [w[offsets[j]:offsets[j + 1]] for j in range(n_cols)]
    obj = _ls_objective(blocks, w_cols)

    # KKT residual: stationarity + complementary slackness, normalized.
    stat = 0.0
    for j, (a_j, b_j) in enumerate(blocks):
        grad = a_j.conj().T @ (a_j @ w_cols[j] - np.asarray(b_j).reshape(-1))
        grad = grad + tau_star * w_cols[j]
        if c is not None:
            grad = grad - 0.5 * nu_star * c[offsets[j]:offsets[j + 1]]
        stat += float(np.linalg.norm(grad) ** 2)
    norm_sq = float(np.vdot(w, w).real)
    slack_ball = abs(tau_star) * abs(norm_sq - power) / max(power, 1.0)
    slack_half = 0.0
    if c is not None:
        hval = float(np.real(np.vdot(c, w)))
        slack_half = abs(nu_star) * abs(hval - eps) / max(abs(eps), 1.0)
    kkt = np.sqrt(stat) + slack_ball + slack_half

    if warm is not None:
        warm = np.asarray(warm, dtype=complex).reshape(-1)
        warm_cols = [warm[offsets[j]:offsets[j + 1]] for j in range(n_cols)]
        warm_feasible = np.vdot(warm, warm).real <= power * (1 + 1e-9)
        if c is not None:
            warm_feasible = warm_feasible and (
                np.real(np.vdot(c, warm)) >= eps - opts.bisection_tol
            )
        if warm_feasible and _ls_objective(blocks, warm_cols) < obj:
            return BallHalfspaceSolution(
                w=warm,
                tau=tau_star,
                nu=nu_star,
                objective=_ls_objective(blocks, warm_cols),
                kkt_residual=kkt,
            )
    return BallHalfspaceSolution(
        w=w, tau=tau_star, nu=nu_star, objective=obj, kkt_residual=kkt
    )
