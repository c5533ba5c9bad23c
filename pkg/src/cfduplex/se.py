"""Closed-form ZF uplink/downlink SINRs, CPU combining weights and sum SE.

Conventions: UL quantities are indexed by the UL AP set A_u (rows) and UL UE
set U_u (columns); DL quantities by A_d and U_d. All large-scale inputs are
full M x K matrices and are sliced here.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import EstimateStats, LargeScaleGains
from .pilot import PilotAssignment

DTDD = "DTDD"
FD = "FD"


@dataclass(frozen=True)
class DuplexConfig:
    mode: str
    ul_aps: tuple[int, ...]
    dl_aps: tuple[int, ...]
    n_rx: int  # receive antennas per UL AP
    n_tx: int  # transmit antennas per DL AP

    def __post_init__(self):
        if self.mode not in (DTDD, FD):
            raise ValueError(f"unknown duplex mode {self.mode!r}")
        if self.mode == DTDD and set(self.ul_aps) & set(self.dl_aps):
            raise ValueError("half-duplex APs cannot serve both directions")
        if self.mode == FD and tuple(self.ul_aps) != tuple(self.dl_aps):
            raise ValueError("full-duplex mode uses every AP in both directions")

    @classmethod
    def dtdd(cls, ul_aps: Sequence[int], dl_aps: Sequence[int], n_antennas: int) -> "DuplexConfig":
        return cls(DTDD, tuple(sorted(int(a) for a in ul_aps)), tuple(sorted(int(a) for a in dl_aps)),
                   n_antennas, n_antennas)

    @classmethod
    def full_duplex(cls, num_aps: int, n_tx: int, n_rx: int) -> "DuplexConfig":
        aps = tuple(range(num_aps))
        return cls(FD, aps, aps, n_rx, n_tx)

    @property
    def ul_index(self) -> np.ndarray:
        return np.asarray(self.ul_aps, dtype=int)

    @property
    def dl_index(self) -> np.ndarray:
        return np.asarray(self.dl_aps, dtype=int)


@dataclass(frozen=True)
class PowerAllocation:
    e_u: np.ndarray  # (|U_u|,) UL transmit powers
    kappa: np.ndarray  # (|A_d|, |U_d|) DL power coefficients
    e_d: float  # per-AP DL power budget

    def per_ap_load(self) -> np.ndarray:
        return np.sum(self.kappa**2, axis=1)

    def is_feasible(self, e_u_max: float, tol: float = 1e-6) -> bool:
        return bool(np.all(self.e_u >= -tol) and np.all(self.e_u <= e_u_max * (1 + tol))
                    and np.all(self.per_ap_load() <= 1 + tol))


@dataclass(frozen=True)
class UplinkWeights:
    omega: np.ndarray  # (|A_u|, |U_u|)
    singular: bool = False


@dataclass(frozen=True)
class SEReport:
    ul_sinr: np.ndarray
    dl_sinr: np.ndarray
    ul_se: np.ndarray
    dl_se: np.ndarray
    sum_se: float
    prelog: float

    @property
    def ul_sum(self) -> float:
        return float(self.ul_se.sum())

    @property
    def dl_sum(self) -> float:
        return float(self.dl_se.sum())

    def to_json(self) -> dict:
        return {
            "ul_sinr": self.ul_sinr.tolist(), "dl_sinr": self.dl_sinr.tolist(),
            "ul_se": self.ul_se.tolist(), "dl_se": self.dl_se.tolist(),
            "sum_se": self.sum_se, "prelog": self.prelog,
        }


def equal_power(gains: LargeScaleGains, duplex: DuplexConfig, e_u_max: float, e_d: float) -> PowerAllocation:
    n_dl = len(gains.dl_ues)
    kappa = np.full((len(duplex.dl_aps), n_dl), 1.0 / np.sqrt(n_dl) if n_dl else 0.0)
    return PowerAllocation(np.full(len(gains.ul_ues), float(e_u_max)), kappa, float(e_d))


def equal_weights(duplex: DuplexConfig, gains: LargeScaleGains) -> UplinkWeights:
    A = len(duplex.ul_aps)
    return UplinkWeights(np.full((A, len(gains.ul_ues)), 1.0 / A if A else 0.0))


# ---------------------------------------------------------------------------
# uplink


@dataclass(frozen=True)
class UplinkModel:
    """Sliced large-scale quantities for the uplink of one duplex configuration."""

    a2: np.ndarray  # (A, U) alpha^2 on UL links
    err: np.ndarray  # (A, U) estimation error variance
    share: np.ndarray  # (U, U) bool shares pilot, diagonal True
    dof: int  # N_rx - tau_p
    n_tx: int
    load: np.ndarray  # (A,) sum over interfering DL APs of zeta * kappa^2 row sums
    n0: float
    e_d: float

    @property
    def iap_diag(self) -> np.ndarray:
        """(A, U) per-AP inter-AP interference weight N_tx E_d load_m alpha^2_mk."""
        return self.n_tx * self.e_d * self.load[:, None] * self.a2


def interference_load(gains: LargeScaleGains, duplex: DuplexConfig, kappa: np.ndarray) -> np.ndarray:
    """Per UL AP: sum over DL APs j of zeta_mj * sum_n kappa_jn^2.

    Full duplex: j = m contributes through the self-interference gain.
    """
    ul, dl = duplex.ul_index, duplex.dl_index
    p = np.sum(np.asarray(kappa) ** 2, axis=1) if len(dl) else np.zeros(0)
    z = gains.zeta_inap[np.ix_(ul, dl)].copy()
    if duplex.mode == FD:
        same = ul[:, None] == dl[None, :]
        ia, ja = np.nonzero(same)
        z[same] = 0.0
        z[ia, ja] = gains.zeta_si[ul[ia]]
    return z @ p


def uplink_model(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
                 duplex: DuplexConfig, power: PowerAllocation) -> UplinkModel:
    ul, uu = duplex.ul_index, gains.ul_ues
    dof = duplex.n_rx - pilots.tau_p
    if len(ul) and len(uu) and dof < 1:
        raise ValueError(f"ZF needs more receive antennas ({duplex.n_rx}) than pilots ({pilots.tau_p})")
    share = pilots.shares_pilot[np.ix_(uu, uu)]
    return UplinkModel(
        a2=stats.alpha2[np.ix_(ul, uu)], err=stats.alpha2_err[np.ix_(ul, uu)], share=share,
        dof=dof, n_tx=duplex.n_tx, load=interference_load(gains, duplex, power.kappa),
        n0=gains.noise_power, e_d=power.e_d,
    )


def _mean_gain(a2: np.ndarray) -> np.ndarray:
    """mu[m, k, i] = E[v_mk^H f_mi] for co-pilot UEs = sqrt(alpha2_mk alpha2_mi)."""
    return np.sqrt(a2[:, :, None] * a2[:, None, :])


def ul_terms(model: UplinkModel, e_u: np.ndarray, omega: np.ndarray) -> dict[str, np.ndarray]:
    """Signal and interference terms of the UL SINR for every UL UE."""
    w2 = np.abs(omega) ** 2
    a2 = model.a2
    if a2.shape[1] == 0:
        z = np.zeros(0)
        return {"signal": z, "est": z, "mui": z, "iap": z, "noise": z}
    coh = np.einsum("mk,mki->ki", np.conj(omega), _mean_gain(a2))  # (U, U)
    g2 = np.abs(coh) ** 2
    signal = model.dof * e_u * np.diag(g2)
    est = np.sum(w2 * a2 * (model.err @ e_u)[:, None], axis=0)
    other = model.share & ~np.eye(len(e_u), dtype=bool)
    mui = model.dof * np.sum(np.where(other, g2 * e_u[None, :], 0.0), axis=1)
    iap = np.sum(w2 * model.iap_diag, axis=0)
    noise = model.n0 * np.sum(w2 * a2, axis=0)
    return {"signal": signal, "est": est, "mui": mui, "iap": iap, "noise": noise}


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


def ul_sinr_zf(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
               duplex: DuplexConfig, power: PowerAllocation, weights: UplinkWeights) -> np.ndarray:
    t = ul_terms(uplink_model(stats, gains, pilots, duplex, power), power.e_u, weights.omega)
    return _ratio(t["signal"], t["est"] + t["mui"] + t["iap"] + t["noise"])


def weights_from_model(model: UplinkModel, e_u: np.ndarray) -> UplinkWeights:
    """SINR-optimal CPU weights: omega_k = E_k R_k^{-1} u_k with u_k = alpha^2_{:,k}."""
    A, U = model.a2.shape
    omega = np.zeros((A, U))
    if A == 0 or U == 0:
        return UplinkWeights(omega)
    mu = _mean_gain(model.a2)  # (A, U, U)
    base = ((model.err @ e_u)[:, None] * model.a2 + model.n0 * model.a2 + model.iap_diag) / model.dof
    co = np.where(model.share & ~np.eye(U, dtype=bool), e_u[None, :], 0.0)  # [k, i]
    R = np.einsum("aki,bki,ki->kab", mu, mu, co)
    R[:, np.arange(A), np.arange(A)] += base.T
    u = model.a2.T  # (U, A)
    visible = np.any(u > 0, axis=1)
    with np.errstate(all="ignore"):
        try:
            w = np.linalg.solve(R, u[..., None])[..., 0]
        except np.linalg.LinAlgError:
            w = np.stack([_safe_solve(R[k], u[k]) for k in range(U)])
    w = e_u[:, None] * w
    bad = ~np.all(np.isfinite(w), axis=1) | ~visible
    # UEs invisible to every UL AP (or with a singular system) keep uniform weights
    w[bad] = 1.0 / A
    omega[:] = w.T
    singular = bool(np.any(bad))
    if singular:
        warnings.warn("singular weight covariance; uniform weights used", RuntimeWarning, stacklevel=2)
    return UplinkWeights(omega, singular)


def _safe_solve(R: np.ndarray, u: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(R, u)
    except np.linalg.LinAlgError:
        return np.full_like(u, np.nan)


def optimal_weights_zf(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
                       duplex: DuplexConfig, power: PowerAllocation) -> UplinkWeights:
    return weights_from_model(uplink_model(stats, gains, pilots, duplex, power), power.e_u)


# ---------------------------------------------------------------------------
# downlink


@dataclass(frozen=True)
class DownlinkModel:
    a: np.ndarray  # (A, U) alpha on DL links
    err: np.ndarray  # (A, U)
    share: np.ndarray  # (U, U)
    dof: int  # N_tx - tau_p
    e_d: float
    sigma2: np.ndarray  # (U,) IUE + N0


def downlink_model(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
                   duplex: DuplexConfig, e_u: np.ndarray, e_d: float) -> DownlinkModel:
    dl, ud = duplex.dl_index, gains.dl_ues
    dof = duplex.n_tx - pilots.tau_p
    if len(dl) and len(ud) and dof < 1:
        raise ValueError(f"ZF needs more transmit antennas ({duplex.n_tx}) than pilots ({pilots.tau_p})")
    iue = gains.epsilon @ np.asarray(e_u, dtype=float) if len(gains.ul_ues) else np.zeros(len(ud))
    return DownlinkModel(
        a=np.sqrt(stats.alpha2[np.ix_(dl, ud)]), err=stats.alpha2_err[np.ix_(dl, ud)],
        share=pilots.shares_pilot[np.ix_(ud, ud)], dof=dof, e_d=float(e_d),
        sigma2=iue + gains.noise_power,
    )


def dl_terms(model: DownlinkModel, kappa: np.ndarray) -> dict[str, np.ndarray]:
    U = model.a.shape[1]
    if U == 0:
        z = np.zeros(0)
        return {"signal": z, "est": z, "mui": z, "iue_noise": z}
    cross = (kappa.T @ model.a) ** 2  # [q, n] = (sum_j kappa_jq a_jn)^2
    signal = model.dof * model.e_d * np.diag(cross)
    est = model.e_d * (np.sum(kappa**2, axis=1) @ model.err)
    other = model.share & ~np.eye(U, dtype=bool)
    mui = model.dof * model.e_d * np.sum(np.where(other, cross, 0.0), axis=0)
    return {"signal": signal, "est": est, "mui": mui, "iue_noise": model.sigma2}


def dl_sinr_zf(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
               duplex: DuplexConfig, power: PowerAllocation) -> np.ndarray:
    model = downlink_model(stats, gains, pilots, duplex, power.e_u, power.e_d)
    t = dl_terms(model, power.kappa)
    return _ratio(t["signal"], t["est"] + t["mui"] + t["iue_noise"])


# ---------------------------------------------------------------------------
# spectral efficiency


def sum_se(ul_sinr, dl_sinr, tau: int, tau_p: int) -> SEReport:
    ul_sinr = np.maximum(np.asarray(ul_sinr, dtype=float), 0.0)
    dl_sinr = np.maximum(np.asarray(dl_sinr, dtype=float), 0.0)
    prelog = max(tau - tau_p, 0) / tau
    ul_se = prelog * np.log2(1.0 + ul_sinr)
    dl_se = prelog * np.log2(1.0 + dl_sinr)
    return SEReport(ul_sinr, dl_sinr, ul_se, dl_se, float(ul_se.sum() + dl_se.sum()), prelog)


def evaluate(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
             duplex: DuplexConfig, power: PowerAllocation, weights: UplinkWeights | None,
             tau: int, stats_dl: EstimateStats | None = None) -> SEReport:
    """Sum SE for a given allocation; ``weights=None`` uses the optimal weights."""
    if weights is None:
        weights = optimal_weights_zf(stats, gains, pilots, duplex, power)
    ul = ul_sinr_zf(stats, gains, pilots, duplex, power, weights)
    dl = dl_sinr_zf(stats if stats_dl is None else stats_dl, gains, pilots, duplex, power)
    return sum_se(ul, dl, tau, pilots.tau_p)


def export_report_csv(path: str | Path, reports: Sequence[SEReport], ul_ues: Sequence[np.ndarray] | None = None,
                      dl_ues: Sequence[np.ndarray] | None = None) -> None:
    """Per-UE rows ``trial,ue,direction,sinr,se`` for CDF plotting."""
    with open(path, "w") as fh:
        fh.write("trial,ue,direction,sinr,se\n")
        for t, r in enumerate(reports):
            uu = range(len(r.ul_sinr)) if ul_ues is None else ul_ues[t]
            ud = range(len(r.dl_sinr)) if dl_ues is None else dl_ues[t]
            for k, s, e in zip(uu, r.ul_sinr, r.ul_se):
                fh.write(f"{t},{int(k)},ul,{float(s)!r},{float(e)!r}\n")
            for k, s, e in zip(ud, r.dl_sinr, r.dl_se):
                fh.write(f"{t},{int(k)},dl,{float(s)!r},{float(e)!r}\n")


def report_json(path: str | Path, report: SEReport) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2))
