"""Geometric scenario sampling and field-response channel evaluation.

The channel between the RIS and a node is h(u) = (f(u)^H Sigma G)^T where
f(u) is the receive field-response vector at antenna position u, G stacks
the transmit field-response vectors of the RIS elements, and Sigma is the
diagonal path-response matrix.  Moving an antenna changes f(u) only; all
other factors stay constant (far-field assumption).

Internally all channels are noise-normalized: every hop is divided by the
square root of the noise amplitude so cascaded BS-RIS-node channels are
O(1) against unit-power noise, and the radar cross-section variance is
rescaled to sigma_t^2 * sigma^2 to keep the echo SNR invariant.  The
reported SINRs, radar SNR and rates are identical to the physical-unit
values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .linalg import InvalidInputError


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class Scenario:
    """Physical constants, geometry and thresholds for one experiment.

    Thresholds and gains are stored linear; the config file carries dB /
    dBm values and is converted once at load.
    """

    m: int = 4                      # BS antennas (square-ish UPA)
    n1: int = 4                     # RIS horizontal elements
    n2: int = 4                     # RIS vertical elements
    k_users: int = 2
    wavelength: float = 0.01        # meters
    bs_pos: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 3.0]))
    ris_pos: np.ndarray = field(default_factory=lambda: np.array([0.0, 20.0, 3.0]))
    target_pos: np.ndarray = field(default_factory=lambda: np.array([5.0, 20.0, 3.0]))
    user_centers: np.ndarray | None = None      # (K, 3); defaults to (5, 20, 0)
    region_halfwidth: float = 0.02  # A/2 in meters
    paths: int = 4                  # L_p per link
    eve_paths: int = 1              # L_0
    g0: float = 1e-4                # reference path gain, linear
    alpha: float = 2.8              # path-loss exponent
    sigma2: float = dbm_to_watt(-105.0)   # shared noise power (W)
    sigma_t: float = 3000.0         # RCS standard deviation
    radar_samples: int = 1024       # L
    power: float = dbm_to_watt(32.0)      # P_B (W)
    gamma_r: float = 1.0            # radar SNR threshold, linear
    gamma_c: float = 10.0           # per-user SINR floor, linear
    gamma_e: float = 1.0            # leakage SINR cap, linear
    seed: int = 0
    user_ring_radius: float = 4.0
    power_constraint: str = "squared"     # "squared": ||W||_F^2 <= P_B

    def __post_init__(self) -> None:
        self.bs_pos = np.asarray(self.bs_pos, dtype=float)
        self.ris_pos = np.asarray(self.ris_pos, dtype=float)
        self.target_pos = np.asarray(self.target_pos, dtype=float)
        if self.user_centers is None:
            self.user_centers = np.tile([5.0, 20.0, 0.0], (self.k_users, 1))
        self.user_centers = np.asarray(self.user_centers, dtype=float)
        if self.user_centers.ndim == 1:
            self.user_centers = np.tile(self.user_centers, (self.k_users, 1))
        if min(self.m, self.n1, self.n2, self.k_users, self.paths,
               self.eve_paths, self.radar_samples) < 1:
            raise InvalidInputError("counts must be >= 1")
        if min(self.power, self.sigma2, self.gamma_r, self.gamma_c,
               self.gamma_e, self.region_halfwidth, self.sigma_t) <= 0:
            raise InvalidInputError("powers, variances and thresholds must be > 0")
        if self.power_constraint not in ("squared", "amplitude"):
            raise InvalidInputError("power_constraint must be 'squared' or 'amplitude'")

    @property
    def n_ris(self) -> int:
        return self.n1 * self.n2

    @property
    def power_cap(self) -> float:
        """Frobenius-norm-squared budget on W (the literal reading of the
        amplitude form ||W||_F <= P_B squares to P_B^2)."""
        return self.power if self.power_constraint == "squared" else self.power ** 2

    def region(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        half = self.region_halfwidth
        return (np.array([-half, -half]), np.array([half, half]))

    def replace(self, **kw) -> "Scenario":
        from dataclasses import replace as _replace
        return _replace(self, **kw)


_CONFIG_KEYS = {
    "M", "N1", "N2", "K", "lambda_m", "PB_dBm", "Gamma_dB", "Gamma_e_dB",
    "Gamma_r_dB", "sigma_dBm", "sigma_t", "L", "Lp", "L0", "A_over_lambda",
    "g0_dB", "alpha", "bs_pos", "ris_pos", "target_pos", "user_centers",
    "seed", "user_ring_radius", "power_constraint",
}


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat key=value lines; '#' starts a comment."""
    out: Dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"malformed config line: {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _triple(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split(",")], dtype=float)


def scenario_from_config(entries: Dict[str, str]) -> Scenario:
    """Build a Scenario from flat key=value entries (sweep.* keys ignored)."""
    unknown = {
        k for k in entries
        if k not in _CONFIG_KEYS and not k.startswith("sweep.")
    }
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    g = entries.get
    lam = float(g("lambda_m", "0.01"))
    kw = dict(
        m=int(g("M", "4")),
        n1=int(g("N1", "4")),
        n2=int(g("N2", "4")),
        k_users=int(g("K", "2")),
        wavelength=lam,
        power=dbm_to_watt(float(g("PB_dBm", "32"))),
        gamma_c=db_to_linear(float(g("Gamma_dB", "10"))),
        gamma_e=db_to_linear(float(g("Gamma_e_dB", "0"))),
        gamma_r=db_to_linear(float(g("Gamma_r_dB", "0"))),
        sigma2=dbm_to_watt(float(g("sigma_dBm", "-105"))),
        sigma_t=float(g("sigma_t", "3000")),
        radar_samples=int(g("L", "1024")),
        paths=int(g("Lp", "4")),
        eve_paths=int(g("L0", "1")),
        region_halfwidth=0.5 * float(g("A_over_lambda", "4")) * lam,
        g0=db_to_linear(float(g("g0_dB", "-40"))),
        alpha=float(g("alpha", "2.8")),
        seed=int(g("seed", "0")),
        user_ring_radius=float(g("user_ring_radius", "4.0")),
        power_constraint=g("power_constraint", "squared"),
    )
    if "bs_pos" in entries:
        kw["bs_pos"] = _triple(entries["bs_pos"])
    if "ris_pos" in entries:
        kw["ris_pos"] = _triple(entries["ris_pos"])
    if "target_pos" in entries:
        kw["target_pos"] = _triple(entries["target_pos"])
    if "user_centers" in entries:
        centers = [_triple(t) for t in entries["user_centers"].split(";")]
        if len(centers) == 1:
            centers = centers * kw["k_users"]
        kw["user_centers"] = np.vstack(centers)
    return Scenario(**kw)


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_config(parse_config_text(fh.read()))


def upa_positions(n1: int, n2: int, spacing: float) -> np.ndarray:
    """(n1*n2, 2) element coordinates of an n1 x n2 UPA centered at the origin."""
    xs = (np.arange(n1) - (n1 - 1) / 2.0) * spacing
    ys = (np.arange(n2) - (n2 - 1) / 2.0) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def square_factor(m: int) -> Tuple[int, int]:
    """Near-square factorization m = m1 * m2 with m1 >= m2."""
    m2 = int(math.isqrt(m))
    while m % m2:
        m2 -= 1
    return m // m2, m2


def receive_frv(elev: np.ndarray, azim: np.ndarray, u: np.ndarray,
                wavelength: float) -> np.ndarray:
    """Receive field-response vector: entry i = exp(j 2pi/lambda * rho_i(u)),
    rho_i(u) = x sin(elev_i) cos(azim_i) + y cos(elev_i)."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("antenna position must be finite")
    rho = u[0] * np.sin(elev) * np.cos(azim) + u[1] * np.cos(elev)
    return np.exp(2j * np.pi / wavelength * rho)


def transmit_frm(elev: np.ndarray, azim: np.ndarray,
                 element_positions: np.ndarray, wavelength: float) -> np.ndarray:
    """Transmit field-response matrix, (paths x elements); column n is the
    transmit FRV at element position t_n."""
    pos = np.asarray(element_positions, dtype=float)
    rho = (np.outer(np.sin(elev) * np.cos(azim), pos[:, 0])
           + np.outer(np.cos(elev), pos[:, 1]))
    return np.exp(2j * np.pi / wavelength * rho)


def channel_ris_to_node(sigma_diag: np.ndarray, g_frm: np.ndarray,
                        f_rv: np.ndarray) -> np.ndarray:
    """h = (f^H Sigma G)^T for a diagonal path-response matrix."""
    if g_frm.shape[0] != sigma_diag.shape[0] or f_rv.shape[0] != sigma_diag.shape[0]:
        raise InvalidInputError("path-count mismatch between Sigma, G and f")
    return g_frm.T @ (sigma_diag * np.conj(f_rv))


def cascaded_channel(h: np.ndarray, phi: np.ndarray, h_bs_ris: np.ndarray) -> np.ndarray:
    """g with g^H = h^H diag(phi) H; returned as a column vector g = H^H (h * conj(phi))."""
    if h.shape[0] != phi.shape[0] or h_bs_ris.shape[0] != phi.shape[0]:
        raise InvalidInputError("RIS dimension mismatch")
    return h_bs_ris.conj().T @ (h * np.conj(phi))


def target_response(h_bs_ris: np.ndarray, phi: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Rank-one echo response H_t = g0 g0^H, g0 the cascaded BS-target channel."""
    g0 = cascaded_channel(h0, phi, h_bs_ris)
    return np.outer(g0, g0.conj())


def f_response_matrix(h: np.ndarray, h_bs_ris: np.ndarray) -> np.ndarray:
    """F = diag(h^H) H, so that g^H = phi^T F."""
    return np.conj(h)[:, None] * h_bs_ris


@dataclass
class ChannelSet:
    """All sampled propagation data for one trial (immutable after sampling).

    PRMs are stored as their diagonals; H always equals
    f_s^H diag(sigma_bs) g_b by construction.
    """

    scenario: Scenario
    user_pos: np.ndarray            # (K, 3)
    # BS <-> RIS link
    bs_elev_t: np.ndarray
    bs_azim_t: np.ndarray
    bs_elev_r: np.ndarray
    bs_azim_r: np.ndarray
    sigma_bs_diag: np.ndarray       # (Lp,)
    g_b: np.ndarray                 # (Lp, M) transmit FRM at the BS
    f_s: np.ndarray                 # (Lp, N) receive FRM at the RIS
    h_bs_ris: np.ndarray            # (N, M)
    # RIS -> node links, kappa = 0 (eavesdropper) .. K
    elev_t: List[np.ndarray]
    azim_t: List[np.ndarray]
    elev_r: List[np.ndarray]
    azim_r: List[np.ndarray]
    sigma_diag: List[np.ndarray]
    g_ris: List[np.ndarray]         # (L_t, N) each
    h0: np.ndarray                  # (N,) RIS -> eavesdropper channel
    # normalized constants used by the metrics
    noise_power: float
    sigma_t_eff: float
    link_distances: Dict[str, float]
    # cached receive-path direction cosines, one (2, L_r) block per node
    dir_cos: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.dir_cos:
            self.dir_cos = [
                np.vstack([np.sin(e) * np.cos(a), np.cos(e)])
                for e, a in zip(self.elev_r, self.azim_r)
            ]

    @property
    def n_ris(self) -> int:
        return self.h_bs_ris.shape[0]

    @property
    def m(self) -> int:
        return self.h_bs_ris.shape[1]

    def sigma_matrix(self, kappa: int) -> np.ndarray:
        return np.diag(self.sigma_diag[kappa])

    def user_frv(self, k: int, u: np.ndarray) -> np.ndarray:
        d = self.dir_cos[k + 1]
        rho = u[0] * d[0] + u[1] * d[1]
        return np.exp(2j * np.pi / self.scenario.wavelength * rho)

    def user_direction_cos(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Per-path (sin(elev) cos(azim), cos(elev)) of the user's receive paths."""
        d = self.dir_cos[k + 1]
        return d[0], d[1]

    def user_channel(self, k: int, u: np.ndarray) -> np.ndarray:
        """h_k(u); only the receive FRV depends on u."""
        f = self.user_frv(k, u)
        return channel_ris_to_node(self.sigma_diag[k + 1], self.g_ris[k + 1], f)

    def cascade(self, k: int, phi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Cascaded BS -> RIS -> user-k channel g_k(phi, u)."""
        return cascaded_channel(self.user_channel(k, u), phi, self.h_bs_ris)

    def cascade_eve(self, phi: np.ndarray) -> np.ndarray:
        return cascaded_channel(self.h0, phi, self.h_bs_ris)


def _complex_normal(rng: np.random.Generator, var: float, size) -> np.ndarray:
    s = np.sqrt(var / 2.0)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_scenario(cfg: Scenario, seed: int | None = None) -> ChannelSet:
    """Draw one random channel realization.

    Angles are i.i.d. U[0, pi]; PRMs are diagonal with per-path variance
    g0 d^-alpha / L_paths at the Euclidean link distance d; user positions
    are uniform on the circle of radius user_ring_radius around their
    anchors.  Deterministic for a fixed (cfg, seed).
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    noise_amp = np.sqrt(cfg.sigma2)

    theta = rng.uniform(0.0, 2.0 * np.pi, size=cfg.k_users)
    ring = np.column_stack([np.cos(theta), np.sin(theta),
                            np.zeros(cfg.k_users)]) * cfg.user_ring_radius
    user_pos = cfg.user_centers + ring

    bs_elems = upa_positions(*square_factor(cfg.m), cfg.wavelength / 2.0)
    ris_elems = upa_positions(cfg.n1, cfg.n2, cfg.wavelength / 2.0)

    def path_var(dist: float, n_paths: int) -> float:
        return cfg.g0 * dist ** (-cfg.alpha) / n_paths / noise_amp

    # BS <-> RIS
    d_bs = float(np.linalg.norm(cfg.bs_pos - cfg.ris_pos))
    bs_elev_t = rng.uniform(0.0, np.pi, cfg.paths)
    bs_azim_t = rng.uniform(0.0, np.pi, cfg.paths)
    bs_elev_r = rng.uniform(0.0, np.pi, cfg.paths)
    bs_azim_r = rng.uniform(0.0, np.pi, cfg.paths)
    sigma_bs = _complex_normal(rng, path_var(d_bs, cfg.paths), cfg.paths)
    g_b = transmit_frm(bs_elev_t, bs_azim_t, bs_elems, cfg.wavelength)
    f_s = transmit_frm(bs_elev_r, bs_azim_r, ris_elems, cfg.wavelength)
    h_bs_ris = f_s.conj().T @ (sigma_bs[:, None] * g_b)

    elev_t: List[np.ndarray] = []
    azim_t: List[np.ndarray] = []
    elev_r: List[np.ndarray] = []
    azim_r: List[np.ndarray] = []
    sigma_diag: List[np.ndarray] = []
    g_ris: List[np.ndarray] = []
    dists = {"bs_ris": d_bs}

    # kappa = 0 is the eavesdropping target, then the K users.
    node_positions = [cfg.target_pos] + [user_pos[k] for k in range(cfg.k_users)]
    node_paths = [cfg.eve_paths] + [cfg.paths] * cfg.k_users
    for idx, (pos, n_paths) in enumerate(zip(node_positions, node_paths)):
        d = float(np.linalg.norm(cfg.ris_pos - pos))
        dists["eve" if idx == 0 else f"user{idx - 1}"] = d
        et = rng.uniform(0.0, np.pi, n_paths)
        at = rng.uniform(0.0, np.pi, n_paths)
        er = rng.uniform(0.0, np.pi, n_paths)
        ar = rng.uniform(0.0, np.pi, n_paths)
        sig = _complex_normal(rng, path_var(d, n_paths), n_paths)
        elev_t.append(et)
        azim_t.append(at)
        elev_r.append(er)
        azim_r.append(ar)
        sigma_diag.append(sig)
        g_ris.append(transmit_frm(et, at, ris_elems, cfg.wavelength))

    # The eavesdropper's fixed antenna sits at its local origin, so f_0 = 1.
    f0 = receive_frv(elev_r[0], azim_r[0], np.zeros(2), cfg.wavelength)
    h0 = channel_ris_to_node(sigma_diag[0], g_ris[0], f0)

    return ChannelSet(
        scenario=cfg,
        user_pos=user_pos,
        bs_elev_t=bs_elev_t, bs_azim_t=bs_azim_t,
        bs_elev_r=bs_elev_r, bs_azim_r=bs_azim_r,
        sigma_bs_diag=sigma_bs, g_b=g_b, f_s=f_s, h_bs_ris=h_bs_ris,
        elev_t=elev_t, azim_t=azim_t, elev_r=elev_r, azim_r=azim_r,
        sigma_diag=sigma_diag, g_ris=g_ris, h0=h0,
        noise_power=1.0,
        sigma_t_eff=cfg.sigma_t * noise_amp,
        link_distances=dists,
    )
