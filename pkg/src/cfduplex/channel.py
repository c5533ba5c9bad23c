"""Network geometry, large-scale fading, MMSE estimation statistics and
fast-fading draws for Monte Carlo validation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import seeding
from .config import SystemConfig, ThreeSlope

if TYPE_CHECKING:
    from .pilot import PilotAssignment
    from .se import DuplexConfig

MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class NetworkGeometry:
    ap_positions: np.ndarray  # (M, 2)
    ue_positions: np.ndarray  # (K, 2)
    ul_ues: np.ndarray  # sorted UE indices
    dl_ues: np.ndarray
    area_side_m: float

    @property
    def num_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def num_ues(self) -> int:
        return self.ue_positions.shape[0]

    def distances(self) -> np.ndarray:
        """AP-UE distance matrix (M, K), unclamped."""
        diff = self.ap_positions[:, None, :] - self.ue_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


@dataclass(frozen=True)
class LargeScaleGains:
    beta: np.ndarray  # (M, K)
    zeta_inap: np.ndarray  # (M, M), zero diagonal
    zeta_si: np.ndarray  # (M,)
    epsilon: np.ndarray  # (|U_d|, |U_u|)
    ul_ues: np.ndarray
    dl_ues: np.ndarray
    noise_power: float

    # The transmit and receive arrays of one AP are co-located, so both
    # directions see the same large-scale gains.
    @property
    def beta_ul(self) -> np.ndarray:
        return self.beta

    @property
    def beta_dl(self) -> np.ndarray:
        return self.beta


@dataclass(frozen=True)
class EstimateStats:
    c: np.ndarray  # (M, K)
    alpha2: np.ndarray  # (M, K) variance of the estimate
    alpha2_err: np.ndarray  # (M, K) variance of the estimation error

    @property
    def beta(self) -> np.ndarray:
        return self.alpha2 + self.alpha2_err


def grid_positions(num_aps: int, side: float) -> np.ndarray:
    """Uniform grid with ceil(sqrt(M)) columns, row-major, cells centred."""
    cols = int(math.ceil(math.sqrt(num_aps)))
    rows = int(math.ceil(num_aps / cols))
    idx = np.arange(num_aps)
    x = (idx % cols + 0.5) * side / cols
    y = (idx // cols + 0.5) * side / rows
    return np.column_stack([x, y])


def generate_geometry(config: SystemConfig, rng_seed: int) -> NetworkGeometry:
    rng = seeding.rng_for(rng_seed, seeding.GEOMETRY)
    side = float(config.area_side_m)
    aps = grid_positions(config.num_aps, side)
    ues = rng.uniform(0.0, side, size=(config.num_ues, 2))
    perm = rng.permutation(config.num_ues)
    n_ul = config.num_ul_ues
    ul = np.sort(perm[:n_ul])
    dl = np.sort(perm[n_ul:])
    return NetworkGeometry(aps, ues, ul, dl, side)


def pathloss_db(d_m: np.ndarray, model: ThreeSlope) -> np.ndarray:
    """Three-slope path loss in dB (negative numbers), distances in metres."""
    d = np.maximum(np.asarray(d_m, dtype=float), MIN_DISTANCE_M) / 1000.0
    d0 = model.d0_m / 1000.0
    d1 = model.d1_m / 1000.0
    L = model.intercept_db()
    far = -L - 35.0 * np.log10(d)
    mid = -L - 15.0 * np.log10(d1) - 20.0 * np.log10(d)
    near = np.full_like(d, -L - 15.0 * np.log10(d1) - 20.0 * np.log10(d0))
    return np.where(d > d1, far, np.where(d > d0, mid, near))


def large_scale_fading(geom: NetworkGeometry, config: SystemConfig, rng_seed: int) -> LargeScaleGains:
    rng = seeding.rng_for(rng_seed, seeding.SHADOWING)
    model = config.pathloss_threeslope
    n0 = config.noise_power_w

    dist = geom.distances()
    pl = pathloss_db(dist, model)
    z = rng.standard_normal(pl.shape)
    shadow = config.shadow_sigma_db * z
    if not config.shadow_all_slopes:
        shadow = np.where(np.maximum(dist, MIN_DISTANCE_M) > model.d1_m, shadow, 0.0)
    beta = 10.0 ** ((pl + shadow) / 10.0)

    M = geom.num_aps
    inai_level = 10.0 ** (config.inai_rel_noise_db / 10.0) * n0
    if config.inai_distance_mode and M > 1:
        dap = np.hypot(*(geom.ap_positions[:, None, :] - geom.ap_positions[None, :, :]).transpose(2, 0, 1))
        g = 10.0 ** (pathloss_db(dap, model) / 10.0)
        np.fill_diagonal(g, 0.0)
        zeta_inap = inai_level * g / g.max()
    else:
        zeta_inap = np.full((M, M), inai_level)
    np.fill_diagonal(zeta_inap, 0.0)
    zeta_si = np.full(M, 10.0 ** (config.irai_rel_noise_db / 10.0) * n0)

    ue = geom.ue_positions
    dd = ue[geom.dl_ues][:, None, :] - ue[geom.ul_ues][None, :, :]
    epsilon = 10.0 ** (pathloss_db(np.hypot(dd[..., 0], dd[..., 1]), model) / 10.0)
    return LargeScaleGains(beta, zeta_inap, zeta_si, epsilon, geom.ul_ues, geom.dl_ues, n0)


def estimation_coefficients(
    gains: LargeScaleGains,
    pilots: "PilotAssignment",
    config: SystemConfig,
    beta: np.ndarray | None = None,
) -> EstimateStats:
    """MMSE estimation coefficients c, alpha^2 and error variance per link.

    ``beta`` overrides the gain matrix (e.g. the transmit-side gains of a
    full-duplex AP); by default ``gains.beta`` is used.
    """
    b = gains.beta if beta is None else np.asarray(beta, dtype=float)
    tau_p = pilots.tau_p
    ep = np.asarray(config.pilot_powers(), dtype=float)
    rx = tau_p * ep[None, :] * b  # (M, K) received pilot power per UE
    per_pilot = np.zeros((b.shape[0], tau_p))
    np.add.at(per_pilot.T, pilots.pilot_of, rx.T)
    c = 1.0 / (per_pilot[:, pilots.pilot_of] + gains.noise_power)
    alpha2 = c * tau_p * ep[None, :] * b**2
    # (b - alpha2) loses relative precision for tiny errors; this form does not
    err = b * (c * (per_pilot[:, pilots.pilot_of] - rx + gains.noise_power))
    return EstimateStats(c, alpha2, err)


def nmse(stats: EstimateStats) -> np.ndarray:
    beta = stats.beta
    out = np.divide(stats.alpha2_err, beta, out=np.zeros_like(beta), where=beta > 0)
    return np.clip(out, 0.0, 1.0)


def export_gains_csv(path: str | Path, gains: LargeScaleGains, stats: EstimateStats | None = None) -> None:
    """Write one row per AP-UE link: ``m,k,beta[,c,alpha2,alpha2_err]``."""
    header = ["m", "k", "beta"] + (["c", "alpha2", "alpha2_err"] if stats is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        M, K = gains.beta.shape
        for m in range(M):
            for k in range(K):
                row = [m, k, repr(float(gains.beta[m, k]))]
                if stats is not None:
                    row += [repr(float(stats.c[m, k])), repr(float(stats.alpha2[m, k])),
                            repr(float(stats.alpha2_err[m, k]))]
                w.writerow(row)


# ---------------------------------------------------------------------------
# fast fading


@dataclass(frozen=True)
class ArrayRealization:
    """Draws for one antenna role (receive side of UL APs or transmit side of DL APs).

    Axes: t = trial, a = AP within the role's set, k = UE (all K), n = antenna,
    l = pilot index.
    """

    aps: np.ndarray
    f: np.ndarray  # (T, A, K, N)
    z: np.ndarray  # (T, A, N, tau_p) de-spread pilot observations
    f_hat: np.ndarray
    f_err: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.f.shape[-1]


@dataclass(frozen=True)
class ChannelRealization:
    ul: ArrayRealization
    dl: ArrayRealization
    g_ap: np.ndarray  # (T, |A_u|, |A_d|, N_rx, N_tx); self pairs carry the SI channel
    g_ue: np.ndarray  # (T, |U_d|, |U_u|)
    self_pair: np.ndarray  # (|A_u|, |A_d|) bool, True where the two indices are one AP

    @property
    def f(self) -> np.ndarray:
        return self.ul.f

    @property
    def f_hat(self) -> np.ndarray:
        return self.ul.f_hat

    @property
    def f_err(self) -> np.ndarray:
        return self.ul.f_err

    @property
    def g_inap(self) -> np.ndarray:
        return np.where(self.self_pair[None, :, :, None, None], 0.0, self.g_ap)

    @property
    def g_si(self) -> np.ndarray:
        """(T, |A_u|, N_rx, N_tx) self-interference draws; empty unless full duplex."""
        ia, ja = np.nonzero(self.self_pair)
        return self.g_ap[:, ia, ja]


def cn(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with variance ``var``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def dft_pilot_book(tau_p: int) -> np.ndarray:
    """Orthonormal DFT pilot book, columns are pilots (tau_p x tau_p)."""
    n = np.arange(tau_p)
    return np.exp(-2j * np.pi * np.outer(n, n) / tau_p) / np.sqrt(tau_p)


def _draw_array(
    rng: np.random.Generator,
    aps: np.ndarray,
    beta: np.ndarray,
    stats: EstimateStats,
    pilots: "PilotAssignment",
    ep: np.ndarray,
    n0: float,
    n_ant: int,
    n_trials: int,
) -> ArrayRealization:
    tau_p = pilots.tau_p
    A, K = len(aps), beta.shape[1]
    b = beta[aps]  # (A, K)
    f = cn(rng, (n_trials, A, K, n_ant), b[None, :, :, None])
    # received pilot block Y = sum_k sqrt(tau_p E_p) f_k phi_l(k)^T + W, then
    # de-spread with the pilot book: z_l = Y phi_l^*
    phi = dft_pilot_book(tau_p)
    sig = np.sqrt(tau_p * ep)[None, None, :, None] * f  # (T, A, K, N)
    y = np.einsum("takn,kc->tanc", sig, phi.T[pilots.pilot_of])
    y = y + cn(rng, (n_trials, A, n_ant, tau_p), n0)
    z = y @ phi.conj()  # (T, A, N, tau_p)
    coef = stats.c[aps] * np.sqrt(tau_p * ep)[None, :] * b  # (A, K)
    f_hat = coef[None, :, :, None] * np.moveaxis(z[..., pilots.pilot_of], -1, -2)
    return ArrayRealization(np.asarray(aps), f, z, f_hat, f - f_hat)


def draw_realization(
    stats: EstimateStats,
    gains: LargeScaleGains,
    pilots: "PilotAssignment",
    config: SystemConfig,
    rng_seed: int,
    duplex: "DuplexConfig",
    n_trials: int = 1,
    stats_dl: EstimateStats | None = None,
) -> ChannelRealization:
    """Draw ``n_trials`` independent fast-fading blocks.

    Channel estimates come from simulated pilot transmission followed by the
    MMSE estimator, so estimate and error are independent by construction.
    Inter-AP entries have variance ``N_tx * zeta`` so that a unit-norm
    precoder leaks ``N_tx * zeta`` per receive antenna, the level the
    closed-form interference terms assume.
    """
    stats_dl = stats if stats_dl is None else stats_dl
    ep = np.asarray(config.pilot_powers(), dtype=float)
    n0 = gains.noise_power
    rng = np.random.default_rng(seeding.derive_seed(rng_seed, seeding.MC_UL))
    ul_aps = np.asarray(duplex.ul_aps, dtype=int)
    dl_aps = np.asarray(duplex.dl_aps, dtype=int)
    ul = _draw_array(rng, ul_aps, gains.beta_ul, stats, pilots, ep, n0, duplex.n_rx, n_trials)
    rng = np.random.default_rng(seeding.derive_seed(rng_seed, seeding.MC_DL))
    dl = _draw_array(rng, dl_aps, gains.beta_dl, stats_dl, pilots, ep, n0, duplex.n_tx, n_trials)

    rng = np.random.default_rng(seeding.derive_seed(rng_seed, seeding.MC_CROSS))
    self_pair = ul_aps[:, None] == dl_aps[None, :]
    var = gains.zeta_inap[np.ix_(ul_aps, dl_aps)].copy()
    ia, ja = np.nonzero(self_pair)
    var[ia, ja] = gains.zeta_si[ul_aps[ia]]
    var = duplex.n_tx * var
    g_ap = cn(rng, (n_trials, len(ul_aps), len(dl_aps), duplex.n_rx, duplex.n_tx), var[None, :, :, None, None])
    g_ue = cn(rng, (n_trials,) + gains.epsilon.shape, gains.epsilon[None])
    return ChannelRealization(ul, dl, g_ap, g_ue, self_pair)
