"""Monte Carlo SINR estimation from simulated channel realizations.

The estimators build the actual combiners and precoders from simulated pilot
observations, then average the quantities that enter the use-and-forget SINR
expressions (means and second moments of effective gains).

The effective gain splits into an estimate part and an error part. The error
is independent of the pilot observation (hence of the filters) and of the
estimate, so the mean is estimated from the estimate part alone and the cross
term is dropped from second moments. This is conditional Monte Carlo: the
expectations are unchanged and the variance is much lower. SINRs for any
CPU weights or DL coefficients are evaluated from those moments afterwards.
Both ZF and MMSE combining and ZF and RZF precoding are supported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .channel import EstimateStats, LargeScaleGains, draw_realization
from .config import SystemConfig
from .pilot import PilotAssignment
from .se import DuplexConfig, PowerAllocation, UplinkWeights, interference_load

ZF = "ZF"
MMSE = "MMSE"
RZF = "RZF"


@dataclass(frozen=True)
class UplinkMoments:
    mean_u: np.ndarray  # (A, U, U): E[v_mk^H f_mi] at [m, k, i]
    second_u: np.ndarray  # (A, A, U, U): E[u_ki u_ki^H]
    second_a: np.ndarray  # (A, A, U): sum_n E[a_kn a_kn^H] (DL-to-UL leakage)
    vnorm2: np.ndarray  # (A, U): E ||v_mk||^2
    n0: float
    n_trials: int


@dataclass(frozen=True)
class DownlinkMoments:
    mean_d: np.ndarray  # (A, U, U): E[f_jn^H p_jq] at [j, n, q]
    second_d: np.ndarray  # (A, A, U, U): E[d_nq d_nq^H]
    ue_gain2: np.ndarray  # (U_d, U_u): E |g_nk|^2
    n0: float
    n_trials: int


def _zf_filters(z: np.ndarray) -> np.ndarray:
    """Z (Z^H Z)^{-1}; columns are the ZF vectors for each pilot."""
    gram = np.conj(np.swapaxes(z, -1, -2)) @ z
    if np.any(np.linalg.matrix_rank(gram) < z.shape[-1]):
        raise np.linalg.LinAlgError("rank-deficient pilot observation matrix")
    return z @ np.linalg.inv(gram)


def _combiners(real, kind, stats, gains, pilots, duplex, power, ep):
    """UL combining vectors V (T, A_u, U_u, N_rx)."""
    arr = real.ul
    uu = gains.ul_ues
    aps = arr.aps
    if kind == ZF:
        w = _zf_filters(arr.z)  # (T, A, N, tau_p)
        gamma = np.sqrt(pilots.tau_p * ep[uu])[None, :] * gains.beta_ul[np.ix_(aps, uu)]  # (A, U)
        v = np.moveaxis(w[..., pilots.pilot_of[uu]], -1, -2)  # (T, A, U, N)
        return gamma[None, :, :, None] * v
    if kind == MMSE:
        fh = arr.f_hat[:, :, uu, :]  # (T, A, U, N)
        e_u = power.e_u
        err = stats.alpha2_err[np.ix_(aps, uu)] @ e_u  # (A,)
        leak = duplex.n_tx * power.e_d * interference_load(gains, duplex, power.kappa)
        R = np.einsum("taun,taum->tanm", fh * e_u[None, None, :, None], np.conj(fh))
        diag = err + leak + gains.noise_power
        R = R + diag[None, :, None, None] * np.eye(arr.n_antennas)
        v = np.linalg.solve(R, np.swapaxes(fh, -1, -2))  # (T, A, N, U)
        return np.swapaxes(v, -1, -2)
    raise ValueError(f"unknown combiner {kind!r}")


def _precoders(real, kind, stats, gains, pilots, duplex, power, norm=None):
    """DL precoding vectors P (T, A_d, U_d, N_tx), unit average norm."""
    arr = real.dl
    ud = gains.dl_ues
    aps = arr.aps
    if kind == ZF:
        w = _zf_filters(arr.z)
        dof = duplex.n_tx - pilots.tau_p
        scale = 1.0 / np.sqrt(stats.c[np.ix_(aps, ud)] / dof)  # (A, U)
        p = np.moveaxis(w[..., pilots.pilot_of[ud]], -1, -2)
        return scale[None, :, :, None] * p
    if kind == RZF:
        fh = arr.f_hat[:, :, ud, :]
        e_dn = power.e_d / max(len(ud), 1)
        err = e_dn * stats.alpha2_err[np.ix_(aps, ud)].sum(axis=1)
        R = e_dn * np.einsum("taun,taum->tanm", fh, np.conj(fh))
        R = R + (err + gains.noise_power)[None, :, None, None] * np.eye(arr.n_antennas)
        p = e_dn * np.swapaxes(np.linalg.solve(R, np.swapaxes(fh, -1, -2)), -1, -2)
        if norm is not None:
            p = p / np.sqrt(norm)[None, :, :, None]
        return p
    raise ValueError(f"unknown precoder {kind!r}")


def mc_moments(
    stats: EstimateStats,
    gains: LargeScaleGains,
    pilots: PilotAssignment,
    duplex: DuplexConfig,
    power: PowerAllocation,
    config: SystemConfig,
    n_trials: int,
    seed: int,
    combiner: str = ZF,
    precoder: str = ZF,
    chunk: int = 2000,
    stats_dl: EstimateStats | None = None,
) -> tuple[UplinkMoments, DownlinkMoments]:
    """Accumulate UL and DL effective-gain moments over ``n_trials`` blocks.

    The UL leakage term depends on ``power.kappa`` and, for MMSE combining,
    the combiner depends on ``power`` as well.
    """
    stats_dl = stats if stats_dl is None else stats_dl
    ep = np.asarray(config.pilot_powers(), dtype=float)
    uu, ud = gains.ul_ues, gains.dl_ues
    Au, Ad, Uu, Ud = len(duplex.ul_aps), len(duplex.dl_aps), len(uu), len(ud)
    kappa = np.asarray(power.kappa, dtype=float)
    sizes = [min(chunk, n_trials - s) for s in range(0, n_trials, chunk)]

    def chunks():
        for c, t in enumerate(sizes):
            yield draw_realization(stats, gains, pilots, config, seeding.derive_seed(seed, c), duplex, t, stats_dl)

    norm = None
    if precoder == RZF:
        acc = np.zeros((Ad, Ud))
        for real in chunks():
            p = _precoders(real, RZF, stats_dl, gains, pilots, duplex, power)
            acc += np.sum(np.abs(p) ** 2, axis=(0, 3))
        norm = acc / n_trials

    s_u = np.zeros((Au, Uu, Uu), complex)
    s_uu = np.zeros((Au, Uu, Uu))  # per-AP second moments; cross-AP ones factorize
    s_aa = np.zeros((Au, Uu))
    s_v2 = np.zeros((Au, Uu))
    s_d = np.zeros((Ad, Ud, Ud), complex)
    s_dd = np.zeros((Ad, Ud, Ud))
    s_g = np.zeros((Ud, Uu))
    sq_ed = np.sqrt(power.e_d)
    for real in chunks():
        p = _precoders(real, precoder, stats_dl, gains, pilots, duplex, power, norm) if Ad and Ud else None
        if Au and Uu:
            v = _combiners(real, combiner, stats, gains, pilots, duplex, power, ep)
            vc = np.conj(v)
            # conditional MC: the estimation error is independent of v and of the
            # estimate, so means use v^H f_hat alone and the cross term drops out
            # of the second moments
            uh = np.einsum("takn,tain->taki", vc, real.ul.f_hat[:, :, uu, :])
            ue = np.einsum("takn,tain->taki", vc, real.ul.f_err[:, :, uu, :])
            s_u += uh.sum(axis=0)
            s_uu += np.sum(np.abs(uh) ** 2 + np.abs(ue) ** 2, axis=0)
            s_v2 += np.sum(np.abs(v) ** 2, axis=(0, 3))
            if p is not None:
                gp = np.einsum("tajrs,tjns,jn->tanr", real.g_ap, p, kappa)
                a = sq_ed * np.einsum("takr,tanr->takn", vc, gp)
                s_aa += np.sum(np.abs(a) ** 2, axis=(0, 3))
        if p is not None:
            dh = np.einsum("tjns,tjqs->tjnq", np.conj(real.dl.f_hat[:, :, ud, :]), p)
            de = np.einsum("tjns,tjqs->tjnq", np.conj(real.dl.f_err[:, :, ud, :]), p)
            s_d += dh.sum(axis=0)
            s_dd += np.sum(np.abs(dh) ** 2 + np.abs(de) ** 2, axis=0)
        s_g += np.sum(np.abs(real.g_ue) ** 2, axis=0)

    T = float(n_trials)
    n0 = gains.noise_power
    mean_u, mean_d = s_u / T, s_d / T
    ulm = UplinkMoments(mean_u, _joint(mean_u, s_uu / T), _joint(None, s_aa / T), s_v2 / T, n0, n_trials)
    dlm = DownlinkMoments(mean_d, _joint(mean_d, s_dd / T), s_g / T, n0, n_trials)
    return ulm, dlm


def _joint(mean: np.ndarray | None, own: np.ndarray) -> np.ndarray:
    """Second moments across AP pairs, (A, A, ...), from per-AP ones.

    Fading, estimates and inter-AP channels are drawn independently per AP, so
    for a != b the joint moment is the product of the means (zero when the
    quantity has zero mean). Using that instead of sample cross-products keeps
    the estimator unbiased and removes noise that weak links amplify.
    """
    A = own.shape[0]
    if mean is None:
        out = np.zeros((A, A) + own.shape[1:], complex)
    else:
        out = np.einsum("a...,b...->ab...", mean, np.conj(mean))
    idx = np.arange(A)
    out[idx, idx] = own
    return out


def ul_from_moments(mom: UplinkMoments, e_u: np.ndarray, omega: np.ndarray) -> dict[str, np.ndarray]:
    """Use-and-forget UL SINR and its parts for CPU weights ``omega``.

    Parts are returned on the raw (unnormalized) scale: ``signal``, ``est``
    (self and cross estimation-error variance), ``mui`` (mean leakage of other
    UEs), ``iap`` and ``noise``.
    """
    e_u = np.asarray(e_u, dtype=float)
    U = len(e_u)
    out = {k: np.zeros(U) for k in ("signal", "est", "mui", "iap", "noise", "sinr")}
    for k in range(U):
        w = omega[:, k]
        wc = np.conj(w)
        means = wc @ mom.mean_u[:, k, :]  # (U,) w^H E[u_ki]
        seconds = np.real(np.einsum("a,abi,b->i", wc, mom.second_u[:, :, k, :], w))
        var = seconds - np.abs(means) ** 2
        out["signal"][k] = e_u[k] * abs(means[k]) ** 2
        out["est"][k] = np.sum(e_u * var)
        others = np.arange(U) != k
        out["mui"][k] = np.sum(e_u[others] * np.abs(means[others]) ** 2)
        out["iap"][k] = np.real(wc @ mom.second_a[:, :, k] @ w)
        out["noise"][k] = mom.n0 * np.sum(np.abs(w) ** 2 * mom.vnorm2[:, k])
    den = out["est"] + out["mui"] + out["iap"] + out["noise"]
    out["sinr"] = np.divide(out["signal"], den, out=np.zeros(U), where=den > 0)
    return out


def dl_from_moments(mom: DownlinkMoments, kappa: np.ndarray, e_d: float, e_u: np.ndarray) -> dict[str, np.ndarray]:
    U = mom.mean_d.shape[1]
    out = {k: np.zeros(U) for k in ("signal", "est", "mui", "iue", "noise", "sinr")}
    for n in range(U):
        means = np.einsum("jq,jq->q", kappa, mom.mean_d[:, n, :])  # kappa_q^T E[d_nq]
        seconds = np.real(np.einsum("jq,jiq,iq->q", kappa, mom.second_d[:, :, n, :], kappa))
        var = seconds - np.abs(means) ** 2
        out["signal"][n] = e_d * abs(means[n]) ** 2
        out["est"][n] = e_d * np.sum(var)
        others = np.arange(U) != n
        out["mui"][n] = e_d * np.sum(np.abs(means[others]) ** 2)
        out["iue"][n] = float(mom.ue_gain2[n] @ np.asarray(e_u, dtype=float)) if mom.ue_gain2.shape[1] else 0.0
        out["noise"][n] = mom.n0
    den = out["est"] + out["mui"] + out["iue"] + out["noise"]
    out["sinr"] = np.divide(out["signal"], den, out=np.zeros(U), where=den > 0)
    return out


def mc_optimal_weights(mom: UplinkMoments, e_u: np.ndarray) -> UplinkWeights:
    """Sample-based SINR-optimal weights omega_k = E_k R_k^{-1} E[u_kk]."""
    e_u = np.asarray(e_u, dtype=float)
    A, U = mom.mean_u.shape[0], len(e_u)
    omega = np.zeros((A, U), complex)
    for k in range(U):
        mean_kk = mom.mean_u[:, k, k]
        R = np.einsum("i,abi->ab", e_u, mom.second_u[:, :, k, :])
        R = R - e_u[k] * np.outer(mean_kk, np.conj(mean_kk))
        R = R + mom.second_a[:, :, k] + mom.n0 * np.diag(mom.vnorm2[:, k])
        omega[:, k] = e_u[k] * np.linalg.solve(R, mean_kk)
    return UplinkWeights(omega)


def mc_sinr_oracle(
    stats: EstimateStats,
    gains: LargeScaleGains,
    pilots: PilotAssignment,
    duplex: DuplexConfig,
    power: PowerAllocation,
    weights: UplinkWeights,
    config: SystemConfig,
    n_trials: int | None = None,
    seed: int | None = None,
    combiner: str = ZF,
    precoder: str = ZF,
    stats_dl: EstimateStats | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo UL and DL SINRs for one allocation."""
    n_trials = config.mc_trials if n_trials is None else n_trials
    seed = config.seed if seed is None else seed
    ulm, dlm = mc_moments(stats, gains, pilots, duplex, power, config, n_trials, seed,
                          combiner, precoder, stats_dl=stats_dl)
    ul = ul_from_moments(ulm, power.e_u, weights.omega)["sinr"] if len(gains.ul_ues) else np.zeros(0)
    dl = dl_from_moments(dlm, power.kappa, power.e_d, power.e_u)["sinr"] if len(gains.dl_ues) else np.zeros(0)
    return ul, dl


# ---------------------------------------------------------------------------
# closed form versus Monte Carlo


UL_TERMS = ("signal", "est", "mui", "iap", "noise", "sinr")
DL_TERMS = ("signal", "est", "mui", "iue", "sinr")


def oracle_instance(config: SystemConfig, seed: int):
    """Random DTDD instance with half the APs in each mode and random feasible powers."""
    from .channel import estimation_coefficients, generate_geometry, large_scale_fading
    from .pilot import assign_pilots

    geom = generate_geometry(config, seed)
    gains = large_scale_fading(geom, config, seed)
    pilots, _ = assign_pilots(geom, config, seed)
    stats = estimation_coefficients(gains, pilots, config)
    M = config.num_aps
    duplex = DuplexConfig.dtdd(range(0, M, 2), range(1, M, 2), config.antennas_per_ap)
    rng = seeding.rng_for(seed, seeding.MC_NORM, 99)
    kappa = rng.uniform(0.1, 1.0, (len(duplex.dl_aps), len(gains.dl_ues)))
    kappa /= np.maximum(np.sqrt(np.sum(kappa**2, axis=1, keepdims=True)), 1.0)
    e_u = rng.uniform(0.1, 1.0, len(gains.ul_ues)) * config.ul_power_max
    return stats, gains, pilots, duplex, PowerAllocation(e_u, kappa, config.dl_power_total)


def oracle_comparison(stats, gains, pilots, duplex, power, config, n_trials: int, seed: int) -> list[dict]:
    """Closed-form ZF terms against the ZF Monte Carlo estimates, per UE and term.

    UL MC terms are scaled by N_rx - tau_p: the ZF combiners used in simulation
    are not normalized by the array gain, which the closed form carries in the
    signal and MUI terms instead of the other three. The ratio is unaffected.
    """
    from .se import dl_terms, downlink_model, optimal_weights_zf, ul_terms, uplink_model

    weights = optimal_weights_zf(stats, gains, pilots, duplex, power)
    ulm, dlm = mc_moments(stats, gains, pilots, duplex, power, config, n_trials, seed)
    rows = []
    if len(gains.ul_ues):
        model = uplink_model(stats, gains, pilots, duplex, power)
        cf = ul_terms(model, power.e_u, weights.omega)
        cf["sinr"] = cf["signal"] / (cf["est"] + cf["mui"] + cf["iap"] + cf["noise"])
        mc = ul_from_moments(ulm, power.e_u, weights.omega)
        den = cf["est"] + cf["mui"] + cf["iap"] + cf["noise"]
        for term in UL_TERMS:
            scale = 1.0 if term == "sinr" else float(model.dof)
            for i, k in enumerate(gains.ul_ues):
                rows.append(_row("ul", int(k), term, cf[term][i], scale * mc[term][i], den[i]))
    if len(gains.dl_ues):
        dmod = downlink_model(stats, gains, pilots, duplex, power.e_u, power.e_d)
        cf = dl_terms(dmod, power.kappa)
        cf["iue"] = cf["iue_noise"] - gains.noise_power
        cf["sinr"] = cf["signal"] / (cf["est"] + cf["mui"] + cf["iue_noise"])
        mc = dl_from_moments(dlm, power.kappa, power.e_d, power.e_u)
        den = cf["est"] + cf["mui"] + cf["iue_noise"]
        for term in DL_TERMS:
            for i, n in enumerate(gains.dl_ues):
                rows.append(_row("dl", int(n), term, cf[term][i], mc[term][i], den[i]))
    return rows


def _row(direction, ue, term, closed, mc, ref) -> dict:
    """Relative error; a term that is zero in closed form is measured against
    the UE's total interference plus noise ``ref`` instead."""
    closed, mc = float(closed), float(mc)
    if closed == 0.0:
        rel = abs(mc) / float(ref) if ref > 0 else (0.0 if mc == 0.0 else float("inf"))
    else:
        rel = abs(mc - closed) / abs(closed)
    return {"direction": direction, "ue": ue, "term": term, "closed_form": closed, "monte_carlo": mc, "rel_err": rel}
