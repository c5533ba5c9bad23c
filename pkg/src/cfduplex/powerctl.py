"""Sum-SE power control.

Uplink powers and downlink power coefficients are optimized by fractional
programming: a Lagrangian dual transform moves the SINRs out of the logs and a
quadratic transform decouples each ratio. The UL power update is closed form.
The DL update is a QCQP with per-AP norm constraints, solved by ADMM. An outer
loop alternates between the two directions and, optionally, the CPU weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import EstimateStats, LargeScaleGains
from .config import SystemConfig
from .pilot import PilotAssignment
from .se import (
    DuplexConfig,
    PowerAllocation,
    SEReport,
    UplinkWeights,
    _mean_gain,
    downlink_model,
    equal_power,
    equal_weights,
    evaluate,
    optimal_weights_zf,
    ul_terms,
    uplink_model,
)


class PowerControlError(RuntimeError):
    """Non-finite iterate inside a power-control loop."""


# ---------------------------------------------------------------------------
# uplink


@dataclass(frozen=True)
class UplinkCoefficients:
    """SINR_k(E) = E_k a_k / (sum_i E_i b[i, k] - E_k a_k + sigma_k)."""

    a: np.ndarray  # (U,) own-signal gain
    b: np.ndarray  # (U, U) b[i, k]: received power at k's output per unit E_i
    sigma: np.ndarray  # (U,) power-independent part (IAP + noise)

    def received(self, e_u: np.ndarray) -> np.ndarray:
        return e_u @ self.b + self.sigma

    def sinr(self, e_u: np.ndarray) -> np.ndarray:
        num = e_u * self.a
        den = self.received(e_u) - num
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def uplink_coefficients(stats, gains, pilots, duplex, weights: UplinkWeights, kappa) -> UplinkCoefficients:
    power = PowerAllocation(np.zeros(len(gains.ul_ues)), np.asarray(kappa, dtype=float), 1.0)
    return _uplink_coefficients(uplink_model(stats, gains, pilots, duplex, power), weights.omega)


def _uplink_coefficients(model, omega: np.ndarray) -> UplinkCoefficients:
    w2 = np.abs(omega) ** 2
    coh = np.einsum("mk,mki->ki", np.conj(omega), _mean_gain(model.a2))
    g2 = np.abs(coh) ** 2  # [k, i]
    coherent = model.dof * np.where(model.share, g2, 0.0)  # includes i = k
    # est: sum_m w2_mk a2_mk err_mi
    est = np.einsum("mk,mi->ik", w2 * model.a2, model.err)
    b = coherent.T + est
    t = ul_terms(model, np.zeros(model.a2.shape[1]), omega)
    return UplinkCoefficients(model.dof * np.diag(g2).copy(), b, t["iap"] + t["noise"])


@dataclass
class FPStateUL:
    e_u: np.ndarray
    varpi_u: np.ndarray
    varpi_tilde_u: np.ndarray
    objective: float
    trace: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    converged: bool = False


def ul_objective(coef: UplinkCoefficients, e_u: np.ndarray, varpi: np.ndarray) -> float:
    """Dual-transformed objective sum ln(1+w) - w + (1+w) S/(S+I)."""
    s = e_u * coef.a
    tot = coef.received(e_u)
    frac = np.divide(s, tot, out=np.zeros_like(s), where=tot > 0)
    return float(np.sum(np.log1p(varpi) - varpi + (1.0 + varpi) * frac))


def ul_surrogate(coef: UplinkCoefficients, e_u, varpi, varpi_t) -> float:
    """Quadratic-transform surrogate of :func:`ul_objective` in E."""
    y = np.sqrt((1.0 + varpi) * coef.a * np.maximum(e_u, 0.0))
    return float(np.sum(np.log1p(varpi) - varpi + 2.0 * varpi_t * y - varpi_t**2 * coef.received(e_u)))


def ul_power_update(coef: UplinkCoefficients, varpi, varpi_t, e_max: float, clamp: bool = True) -> np.ndarray:
    """Maximizer of the surrogate in E (closed form, separable per UE)."""
    den = coef.b @ varpi_t**2
    num = varpi_t**2 * (1.0 + varpi) * coef.a
    e = np.divide(num, den**2, out=np.full_like(num, e_max), where=den > 0)
    return np.clip(e, 0.0, e_max) if clamp else e


def ul_power_control_coef(coef: UplinkCoefficients, e_max: float, tol: float, max_iter: int,
                          e_init: np.ndarray | None = None) -> FPStateUL:
    e = np.full(len(coef.a), float(e_max)) if e_init is None else np.asarray(e_init, dtype=float).copy()
    sinr = coef.sinr(e)
    obj = float(np.sum(np.log1p(sinr)))
    state = FPStateUL(e, sinr, np.zeros_like(e), obj, [obj], [np.nan])
    if len(e) == 0:
        state.converged = True
        return state
    for _ in range(max_iter):
        varpi = coef.sinr(e)
        tot = coef.received(e)
        varpi_t = np.divide(np.sqrt((1.0 + varpi) * coef.a * e), tot, out=np.zeros_like(e), where=tot > 0)
        e_new = ul_power_update(coef, varpi, varpi_t, e_max)
        if not np.all(np.isfinite(e_new)):
            raise PowerControlError(f"non-finite UL power update: {e_new}")
        new_obj = float(np.sum(np.log1p(coef.sinr(e_new))))
        step = float(np.max(np.abs(e_new - e))) / e_max
        e = e_new
        state.trace.append(new_obj)
        state.residual.append(step)
        state.varpi_u, state.varpi_tilde_u = varpi, varpi_t
        done = abs(new_obj - obj) < tol
        obj = new_obj
        if done:
            state.converged = True
            break
    state.e_u, state.objective = e, obj
    return state


def ul_power_control(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
                     duplex: DuplexConfig, weights: UplinkWeights, kappa_fixed, config: SystemConfig,
                     e_init: np.ndarray | None = None) -> FPStateUL:
    """FP uplink power control with CPU weights and DL coefficients held fixed.

    The objective recorded per iteration is sum_k ln(1 + SINR_k), which is the
    dual-transformed objective evaluated at its optimal auxiliaries.
    """
    coef = uplink_coefficients(stats, gains, pilots, duplex, weights, kappa_fixed)
    return ul_power_control_coef(coef, config.ul_power_max, config.delta_u, config.max_inner_iter, e_init)


# ---------------------------------------------------------------------------
# downlink QCQP


@dataclass(frozen=True)
class QcqpProblem:
    """Structured DL interference model.

    I_nq = E_d (dof * s_nq * a_n a_n^T + diag(err_n)) is the covariance of
    the signal intended for q as seen by UE n; g_n = sqrt(dof E_d) a_n.
    """

    a: np.ndarray  # (A, U) alpha on DL links
    err: np.ndarray  # (A, U)
    share: np.ndarray  # (U, U)
    dof: int
    e_d: float
    sigma_eff: np.ndarray  # (U,) IUE + N0

    @property
    def g(self) -> np.ndarray:
        return np.sqrt(self.dof * self.e_d) * self.a

    def matrix(self, n: int, q: int) -> np.ndarray:
        an = self.a[:, n]
        return self.e_d * (self.dof * float(self.share[n, q]) * np.outer(an, an) + np.diag(self.err[:, n]))

    def weighted(self, wt: np.ndarray) -> np.ndarray:
        """(U, A, A): Q_q = sum_n wt_n I_nq."""
        sw = self.share * wt[:, None]  # [n, q]
        Q = self.dof * np.einsum("nq,an,bn->qab", sw, self.a, self.a)
        Q[:, np.arange(len(self.a)), np.arange(len(self.a))] += (self.err @ wt)[None, :]
        return self.e_d * Q

    def received(self, kappa: np.ndarray) -> np.ndarray:
        """(U,): sum_q kappa_q^T I_nq kappa_q + sigma_n for every n."""
        cross = (kappa.T @ self.a) ** 2  # [q, n]
        coh = self.dof * np.sum(np.where(self.share.T, cross, 0.0), axis=0)
        return self.e_d * (coh + np.sum(kappa**2, axis=1) @ self.err) + self.sigma_eff

    def signal(self, kappa: np.ndarray) -> np.ndarray:
        return np.einsum("an,an->n", self.g, kappa)  # g_n^T kappa_n

    def sinr(self, kappa: np.ndarray) -> np.ndarray:
        s = self.signal(kappa) ** 2
        den = self.received(kappa) - s
        return np.divide(s, den, out=np.zeros_like(s), where=den > 0)


def build_qcqp(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
               duplex: DuplexConfig, e_u_fixed, config: SystemConfig) -> QcqpProblem:
    m = downlink_model(stats, gains, pilots, duplex, e_u_fixed, config.dl_power_total)
    return QcqpProblem(m.a, m.err, m.share, m.dof, m.e_d, m.sigma2)


def qcqp_objective(Q: np.ndarray, c: np.ndarray, kappa: np.ndarray) -> float:
    """sum_q 2 c_q^T kappa_q - kappa_q^T Q_q kappa_q (to be maximized)."""
    return float(2.0 * np.sum(c * kappa) - np.einsum("aq,qab,bq->", kappa, Q, kappa))


def project_rows(x: np.ndarray) -> np.ndarray:
    """Project each row onto the closed unit ball."""
    nrm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    return x / np.maximum(nrm, 1.0)


@dataclass
class AdmmResult:
    kappa: np.ndarray  # projected (feasible) iterate
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    rho: float


def admm_qcqp(Q: np.ndarray, c: np.ndarray, kappa_init: np.ndarray, tol: float, rho0: float,
              max_iter: int = 500, adaptive: bool = True) -> AdmmResult:
    """Maximize sum_q 2 c_q^T k_q - k_q^T Q_q k_q s.t. every row of K has norm <= 1.

    Q: (U, A, A) PSD, c and kappa_init: (A, U). Columns are coupled only by
    the row constraints, so the splitting K = Pi puts the quadratic on K and the
    ball constraints on Pi. The problem is scaled to unit curvature first, so
    ``rho0`` and ``tol`` are relative quantities; the penalty is then adapted by
    residual balancing.
    """
    A, U = c.shape
    scale = float(np.max(np.trace(Q, axis1=1, axis2=2))) / max(A, 1) if U else 0.0
    pi = project_rows(np.asarray(kappa_init, dtype=float))
    if not scale > 0:
        return AdmmResult(pi, 0.0, 0.0, 0, True, rho0)
    # work column-major: row q of K holds kappa_q
    lam, V = np.linalg.eigh(Q / scale)  # batched over q
    Vt = np.swapaxes(V, 1, 2)
    Vc = (Vt @ (c.T / scale)[..., None])[..., 0]  # V^T c per column
    rho = float(rho0)
    P = pi.T.copy()
    u = np.zeros_like(P)
    r = s = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        # (Q + rho/2 I) k = c + rho/2 (pi - u), per column
        rhs = Vc + 0.5 * rho * (Vt @ (P - u)[..., None])[..., 0]
        K = (V @ (rhs / (lam + 0.5 * rho))[..., None])[..., 0]
        P_old = P
        X = K + u
        P = X / np.maximum(np.sqrt(np.sum(X * X, axis=0)), 1.0)
        u = X - P
        r = float(np.sqrt(np.max(np.sum((K - P) ** 2, axis=1))))
        s = rho * float(np.sqrt(np.max(np.sum((P - P_old) ** 2, axis=1))))
        if r < tol and s < tol:
            return AdmmResult(P.T.copy(), r, s, it, True, rho)
        if adaptive:
            if r > 10.0 * s:
                rho *= 2.0
                u /= 2.0
            elif s > 10.0 * r:
                rho /= 2.0
                u *= 2.0
    pi = P.T.copy()
    return AdmmResult(pi, r, s, it, False, rho)


@dataclass
class FPStateDL:
    kappa: np.ndarray
    varpi_d: np.ndarray
    varpi_tilde_d: np.ndarray
    pi: np.ndarray
    pi_bar: np.ndarray
    objective: float
    trace: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    converged: bool = False


def dl_auxiliaries(prob: QcqpProblem, kappa: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    varpi = prob.sinr(kappa)
    tot = prob.received(kappa)
    varpi_t = np.divide(np.sqrt(1.0 + varpi) * prob.signal(kappa), tot, out=np.zeros_like(tot), where=tot > 0)
    return varpi, varpi_t


def dl_qt_terms(prob: QcqpProblem, varpi, varpi_t) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic (U, A, A) and linear (A, U) parts of the QT surrogate in kappa."""
    Q = prob.weighted(varpi_t**2)
    c = prob.g * (varpi_t * np.sqrt(1.0 + varpi))[None, :]
    return Q, c


def dl_surrogate(prob: QcqpProblem, kappa, varpi, varpi_t) -> float:
    y = np.sqrt(1.0 + varpi) * prob.signal(kappa)
    return float(np.sum(np.log1p(varpi) - varpi + 2.0 * varpi_t * y - varpi_t**2 * prob.received(kappa)))


def dl_objective(prob: QcqpProblem, kappa, varpi) -> float:
    s = prob.signal(kappa) ** 2
    tot = prob.received(kappa)
    frac = np.divide(s, tot, out=np.zeros_like(s), where=tot > 0)
    return float(np.sum(np.log1p(varpi) - varpi + (1.0 + varpi) * frac))


def dl_power_control_problem(prob: QcqpProblem, config: SystemConfig,
                             kappa_init: np.ndarray | None = None) -> FPStateDL:
    A, U = prob.a.shape
    if kappa_init is None:
        kappa = np.full((A, U), 1.0 / np.sqrt(U) if U else 0.0)
    else:
        kappa = project_rows(np.asarray(kappa_init, dtype=float))
    obj = float(np.sum(np.log1p(prob.sinr(kappa))))
    state = FPStateDL(kappa, prob.sinr(kappa), np.zeros(U), kappa, np.zeros_like(kappa), obj, [obj], [np.nan])
    if A == 0 or U == 0:
        state.converged = True
        return state
    for _ in range(config.max_inner_iter):
        varpi, varpi_t = dl_auxiliaries(prob, kappa)
        Q, c = dl_qt_terms(prob, varpi, varpi_t)
        res = admm_qcqp(Q, c, kappa, config.delta_admm, config.admm_penalty, config.max_inner_iter)
        cand = res.kappa
        if not np.all(np.isfinite(cand)):
            raise PowerControlError("non-finite DL power coefficients")
        # keep the ascent property even when ADMM stops short of the optimum
        if dl_surrogate(prob, cand, varpi, varpi_t) >= dl_surrogate(prob, kappa, varpi, varpi_t):
            kappa = cand
        new_obj = float(np.sum(np.log1p(prob.sinr(kappa))))
        state.trace.append(new_obj)
        state.residual.append(res.primal_residual)
        state.varpi_d, state.varpi_tilde_d = varpi, varpi_t
        state.pi = cand
        done = abs(new_obj - obj) < config.delta_d
        obj = new_obj
        if done:
            state.converged = True
            break
    state.kappa, state.objective = kappa, obj
    return state


def dl_power_control(stats: EstimateStats, gains: LargeScaleGains, pilots: PilotAssignment,
                     duplex: DuplexConfig, e_u_fixed, config: SystemConfig,
                     kappa_init: np.ndarray | None = None) -> FPStateDL:
    """FP downlink power control; each kappa step solves the QCQP by ADMM."""
    prob = build_qcqp(stats, gains, pilots, duplex, e_u_fixed, config)
    return dl_power_control_problem(prob, config, kappa_init)


# ---------------------------------------------------------------------------
# alternating UL/DL optimization


@dataclass
class AlternationResult:
    power: PowerAllocation
    weights: UplinkWeights
    report: SEReport
    trace: list[float]  # sum SE after every outer pass, starting point first
    converged: bool
    oscillation: bool = False  # stopped at the iteration cap


def alternate_ul_dl(
    stats: EstimateStats,
    gains: LargeScaleGains,
    pilots: PilotAssignment,
    duplex: DuplexConfig,
    config: SystemConfig,
    refine_weights: bool = True,
    init: PowerAllocation | None = None,
    stats_dl: EstimateStats | None = None,
) -> AlternationResult:
    """Alternate UL power control, DL power control and CPU weights.

    With ``refine_weights`` off the CPU uses equal weights throughout. The best
    allocation seen (including the starting point) is returned, since the
    alternation has no joint monotonicity guarantee.
    """
    sdl = stats if stats_dl is None else stats_dl
    power = init if init is not None else equal_power(gains, duplex, config.ul_power_max, config.dl_power_total)

    def weights_for(p: PowerAllocation) -> UplinkWeights:
        if not refine_weights:
            return equal_weights(duplex, gains)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return optimal_weights_zf(stats, gains, pilots, duplex, p)

    weights = weights_for(power)
    report = evaluate(stats, gains, pilots, duplex, power, weights, config.coherence_len, sdl)
    best = (report.sum_se, power, weights, report)
    trace = [report.sum_se]
    prev = report.sum_se
    tol = max(config.delta_u, config.delta_d)
    converged = False
    for _ in range(config.max_outer_iter):
        ul = ul_power_control(stats, gains, pilots, duplex, weights, power.kappa, config, power.e_u)
        power = PowerAllocation(ul.e_u, power.kappa, power.e_d)
        dl = dl_power_control(sdl, gains, pilots, duplex, power.e_u, config, power.kappa)
        power = PowerAllocation(power.e_u, dl.kappa, power.e_d)
        weights = weights_for(power)
        report = evaluate(stats, gains, pilots, duplex, power, weights, config.coherence_len, sdl)
        trace.append(report.sum_se)
        if report.sum_se > best[0]:
            best = (report.sum_se, power, weights, report)
        if abs(report.sum_se - prev) < tol:
            converged = True
            break
        prev = report.sum_se
    return AlternationResult(best[1], best[2], best[3], trace, converged, not converged)


def export_trace_csv(path: str | Path, objective, residual=None) -> None:
    """Iteration trace as ``iter,objective,residual``."""
    residual = [np.nan] * len(objective) if residual is None else residual
    with open(path, "w") as fh:
        fh.write("iter,objective,residual\n")
        for i, (o, r) in enumerate(zip(objective, residual)):
            fh.write(f"{i},{float(o)!r},{float(r)!r}\n")
