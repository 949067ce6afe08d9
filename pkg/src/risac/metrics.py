"""Performance metrics and the penalty objective.

The fractional-programming objective is kept in its mathematically
consistent form: the quadratic-transform term for user k is

    2 sqrt(1+lam_k) Re{conj(iota_k) z_kk} - |iota_k|^2 (sum_j |z_kj|^2 + sigma^2)

(the denominator covers all columns j including k) and every polynomial
term carries 1/ln2 next to log2(1+lam_k).  With that scaling lam_k equal
to the SINR and the matched iota_k are the exact block maximizers, and at
zero splitting violation the objective collapses to sum_k log2(1+gamma_k)
minus the penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .channel import ChannelSet, target_response
from .linalg import InvalidInputError

LN2 = np.log(2.0)


@dataclass
class DesignVariables:
    """One design point: transmit beamformer, RIS phases, receive filter,
    MA positions.  W has K+M columns: the first K carry user streams."""

    w: np.ndarray                   # (M, K+M) complex
    phi: np.ndarray                 # (N,) unit modulus
    r_b: np.ndarray                 # (M*(K+M),) receive filter
    u: np.ndarray                   # (K, 2) antenna positions (meters)

    def copy(self) -> "DesignVariables":
        return DesignVariables(self.w.copy(), self.phi.copy(),
                               self.r_b.copy(), self.u.copy())


@dataclass
class AuxVariables:
    """FP auxiliaries (lam, iota) and penalty splitting variables (z, x)
    with their last dual multipliers."""

    lam: np.ndarray                 # (K,) nonnegative
    iota: np.ndarray                # (K,) complex
    z: np.ndarray                   # (K, K+M) complex
    x: np.ndarray                   # (K+M,) complex
    mu1: np.ndarray                 # (K,) duals of the SINR-floor constraints
    mu2: np.ndarray                 # (K,) duals of the leakage constraints

    def copy(self) -> "AuxVariables":
        return AuxVariables(self.lam.copy(), self.iota.copy(), self.z.copy(),
                            self.x.copy(), self.mu1.copy(), self.mu2.copy())


def all_cascades(vars: DesignVariables, channels: ChannelSet) -> Tuple[np.ndarray, np.ndarray]:
    """(g0, G) with g0 the eavesdropper cascade (M,) and G stacking the
    user cascades g_k as rows of shape (K, M)."""
    k_users = channels.scenario.k_users
    g0 = channels.cascade_eve(vars.phi)
    gs = np.vstack([channels.cascade(k, vars.phi, vars.u[k])
                    for k in range(k_users)])
    return g0, gs


def _received_powers(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.abs(g.conj() @ w) ** 2


def comm_sinr(vars: DesignVariables, channels: ChannelSet, k: int) -> float:
    """gamma_k = |g_k^H w_k|^2 / (sum_{j != k} |g_k^H w_j|^2 + sigma^2)."""
    if not 0 <= k < channels.scenario.k_users:
        raise InvalidInputError(f"user index {k} out of range")
    g = channels.cascade(k, vars.phi, vars.u[k])
    p = _received_powers(g, vars.w)
    return float(p[k] / (np.sum(p) - p[k] + channels.noise_power))


def eavesdrop_sinr(vars: DesignVariables, channels: ChannelSet, k: int) -> float:
    """Leakage SINR of user k's stream at the target."""
    if not 0 <= k < channels.scenario.k_users:
        raise InvalidInputError(f"user index {k} out of range")
    g0 = channels.cascade_eve(vars.phi)
    p = _received_powers(g0, vars.w)
    return float(p[k] / (np.sum(p) - p[k] + channels.noise_power))


def echo_vector(vars: DesignVariables, channels: ChannelSet) -> np.ndarray:
    """(I_{K+M} kron H_t) vec(W) = vec(H_t W), column-major stacking."""
    h_t = target_response(channels.h_bs_ris, vars.phi, channels.h0)
    return (h_t @ vars.w).flatten(order="F")


def radar_snr_lb(vars: DesignVariables, channels: ChannelSet) -> float:
    """Jensen lower bound on the radar output SNR:
    L sigma_t^2 |r^H (I kron H_t) w|^2 / (sigma_r^2 r^H r)."""
    r = vars.r_b
    rr = float(np.vdot(r, r).real)
    if rr <= 0.0:
        raise InvalidInputError("receive filter must be nonzero")
    v = echo_vector(vars, channels)
    scen = channels.scenario
    num = scen.radar_samples * channels.sigma_t_eff ** 2 * np.abs(np.vdot(r, v)) ** 2
    return float(num / (channels.noise_power * rr))


def radar_snr_mc(vars: DesignVariables, channels: ChannelSet,
                 num_samples: int, seed: int = 0) -> Tuple[float, float]:
    """Monte-Carlo estimate of the exact radar SNR (expectation over the
    symbol matrix S with CN(0,1) entries), with its standard error."""
    if num_samples < 1:
        raise InvalidInputError("num_samples must be >= 1")
    scen = channels.scenario
    h_t = target_response(channels.h_bs_ris, vars.phi, channels.h0)
    b = h_t @ vars.w
    r_mat = vars.r_b.reshape(vars.w.shape, order="F")
    rr = float(np.vdot(vars.r_b, vars.r_b).real)
    n_streams, l_samp = vars.w.shape[1], scen.radar_samples
    rng = np.random.default_rng(seed)
    vals = np.empty(num_samples)
    chunk = max(1, int(2e6 // max(n_streams * l_samp, 1)))
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        s = (rng.standard_normal((n, n_streams, l_samp))
             + 1j * rng.standard_normal((n, n_streams, l_samp))) / np.sqrt(2.0)
        bs = np.einsum("mk,nkl->nml", b, s)
        css = np.einsum("nml,nkl->nmk", bs, s.conj())
        vals[done:done + n] = np.abs(np.einsum("mk,nmk->n", r_mat.conj(), css)) ** 2
        done += n
    scale = channels.sigma_t_eff ** 2 / (l_samp * channels.noise_power * rr)
    est = scale * float(np.mean(vals))
    stderr = scale * float(np.std(vals, ddof=1) / np.sqrt(num_samples)) if num_samples > 1 else np.inf
    return est, stderr


def secrecy_lower_bound(gamma_c: float, gamma_e: float) -> float:
    """max{log2(1+Gamma_k) - log2(1+Gamma_{e,k}), 0} in bps/Hz."""
    if gamma_c < 0 or gamma_e < 0:
        raise InvalidInputError("thresholds must be nonnegative")
    return max(np.log2(1.0 + gamma_c) - np.log2(1.0 + gamma_e), 0.0)


def fp_value(aux: AuxVariables, noise_power: float) -> float:
    """The fractional-programming part of the objective (z-space)."""
    lam = aux.lam
    z = aux.z
    k_users = lam.shape[0]
    total = float(np.sum(np.log2(1.0 + lam)))
    quad = 0.0
    for k in range(k_users):
        d_all = noise_power + float(np.sum(np.abs(z[k]) ** 2))
        quad += (-lam[k]
                 - np.abs(aux.iota[k]) ** 2 * d_all
                 + 2.0 * np.sqrt(1.0 + lam[k]) * np.real(np.conj(aux.iota[k]) * z[k, k]))
    return total + quad / LN2


def splitting_residuals(vars: DesignVariables, aux: AuxVariables,
                        channels: ChannelSet) -> Tuple[np.ndarray, np.ndarray]:
    """(eavesdropper residuals (K+M,), user residuals (K, K+M)) of the
    penalty equality constraints."""
    g0, gs = all_cascades(vars, channels)
    res0 = g0.conj() @ vars.w - aux.x
    res = gs.conj() @ vars.w - aux.z
    return res0, res


def penalty_objective(vars: DesignVariables, aux: AuxVariables,
                      channels: ChannelSet, rho: float) -> float:
    """Full penalized FP objective: fp_value minus (1/2rho) times the sum
    of squared splitting residuals."""
    if rho <= 0:
        raise InvalidInputError("penalty factor must be > 0")
    res0, res = splitting_residuals(vars, aux, channels)
    pen = float(np.sum(np.abs(res0) ** 2) + np.sum(np.abs(res) ** 2))
    return fp_value(aux, channels.noise_power) - pen / (2.0 * rho)


def max_violation(vars: DesignVariables, aux: AuxVariables,
                  channels: ChannelSet) -> float:
    """Largest squared splitting residual (the outer-loop stop quantity)."""
    res0, res = splitting_residuals(vars, aux, channels)
    return float(max(np.max(np.abs(res0) ** 2), np.max(np.abs(res) ** 2)))


@dataclass
class MetricReport:
    """All reported performance quantities for one design point."""

    gamma: np.ndarray               # (K,) linear SINRs
    gamma_e: np.ndarray             # (K,) linear leakage SINRs
    radar_lb: float
    sum_rate: float                 # bps/Hz
    secrecy_lb: np.ndarray          # (K,) bps/Hz, threshold-based bound
    margins: Dict[str, float] = field(default_factory=dict)

    CSV_HEADER = ("schema_version,k_users,sum_rate,radar_snr_lb,"
                  "gamma,gamma_e,secrecy_lb")

    def to_csv_row(self) -> str:
        def j(a):
            return ";".join(format(float(v), ".9g") for v in np.atleast_1d(a))
        return ",".join([
            "1", str(len(self.gamma)), format(self.sum_rate, ".9g"),
            format(self.radar_lb, ".9g"), j(self.gamma), j(self.gamma_e),
            j(self.secrecy_lb),
        ])


def evaluate(vars: DesignVariables, channels: ChannelSet) -> MetricReport:
    """Evaluate every constraint-relevant metric at a design point.

    Margins are relative: positive means satisfied with slack.
    """
    scen = channels.scenario
    k_users = scen.k_users
    gam = np.array([comm_sinr(vars, channels, k) for k in range(k_users)])
    gam_e = np.array([eavesdrop_sinr(vars, channels, k) for k in range(k_users)])
    radar = radar_snr_lb(vars, channels)
    sec = np.array([secrecy_lower_bound(scen.gamma_c, scen.gamma_e)] * k_users)
    power_used = float(np.linalg.norm(vars.w) ** 2)
    phase_err = float(np.max(np.abs(np.abs(vars.phi) - 1.0)))
    lo, hi = scen.region(0)
    in_region = float(np.max(np.maximum(lo - vars.u, vars.u - hi).max(axis=1), initial=-np.inf))
    margins = {
        "radar": radar / scen.gamma_r - 1.0,
        "comm": float(np.min(gam / scen.gamma_c - 1.0)),
        "leakage": float(np.min(1.0 - gam_e / scen.gamma_e)),
        "power": 1.0 - power_used / scen.power_cap,
        "phase_unit_modulus_err": phase_err,
        "region_excess_m": max(in_region, 0.0),
    }
    return MetricReport(
        gamma=gam, gamma_e=gam_e, radar_lb=radar,
        sum_rate=float(np.sum(np.log2(1.0 + gam))),
        secrecy_lb=sec, margins=margins,
    )
