"""AP uplink/downlink mode selection for dynamic TDD.

The greedy scheduler grows the UL and DL AP sets one AP at a time, committing
the (AP, mode) pair whose optimized sum SE is largest. An exhaustive search
over all 2^M splits serves as the oracle for small networks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import EstimateStats, LargeScaleGains
from .config import SystemConfig
from .pilot import PilotAssignment
from .powerctl import AlternationResult, alternate_ul_dl
from .se import DuplexConfig, PowerAllocation, equal_power, evaluate

UL = "UL"
DL = "DL"


@dataclass
class ScheduleResult:
    duplex: DuplexConfig
    allocation: AlternationResult
    trace: list[float] = field(default_factory=list)  # committed SE per greedy step
    steps: list[tuple[int, str]] = field(default_factory=list)  # (ap, mode) in commit order
    evaluations: int = 0

    @property
    def sum_se(self) -> float:
        return self.allocation.report.sum_se

    def modes(self, num_aps: int) -> list[str]:
        ul = set(self.duplex.ul_aps)
        return [UL if m in ul else DL for m in range(num_aps)]


def _extend(power: PowerAllocation, duplex: DuplexConfig, new: DuplexConfig) -> PowerAllocation:
    """Carry an allocation over to a superset of APs; added DL APs start silent."""
    rows = {j: r for j, r in zip(duplex.dl_aps, power.kappa)}
    U = power.kappa.shape[1]
    kappa = np.array([rows.get(j, np.zeros(U)) for j in new.dl_aps]).reshape(len(new.dl_aps), U)
    return PowerAllocation(power.e_u, kappa, power.e_d)


class _Evaluator:
    def __init__(self, stats, gains, pilots, config, n_antennas, cheap, refine_weights):
        self.stats, self.gains, self.pilots, self.config = stats, gains, pilots, config
        self.n = config.antennas_per_ap if n_antennas is None else n_antennas
        self.cheap = cheap
        self.refine = refine_weights
        self.count = 0

    def duplex(self, ul, dl) -> DuplexConfig:
        return DuplexConfig.dtdd(ul, dl, self.n)

    def optimize(self, d: DuplexConfig, init: PowerAllocation | None = None) -> AlternationResult:
        self.count += 1
        return alternate_ul_dl(self.stats, self.gains, self.pilots, d, self.config, self.refine, init)

    def candidate(self, d: DuplexConfig, warm: PowerAllocation | None) -> AlternationResult:
        """Better of a cold start and a warm start.

        Zero powers are fixed points of the FP updates, so a warm start alone
        can never switch on a newly added DL AP or a UE that was silenced.
        """
        res = self.optimize(d)
        if warm is not None:
            alt = self.optimize(d, warm)
            if alt.report.sum_se > res.report.sum_se:
                res = alt
        return res

    def equal(self, d: DuplexConfig) -> float:
        self.count += 1
        c = self.config
        p = equal_power(self.gains, d, c.ul_power_max, c.dl_power_total)
        return evaluate(self.stats, self.gains, self.pilots, d, p, None, c.coherence_len).sum_se


def greedy_mode_select(
    stats: EstimateStats,
    gains: LargeScaleGains,
    pilots: PilotAssignment,
    config: SystemConfig,
    cheap: bool = False,
    n_antennas: int | None = None,
    refine_weights: bool = True,
) -> ScheduleResult:
    """Greedy incremental UL/DL assignment of every AP.

    Each candidate is scored by the optimized sum SE with the opposite-mode set
    held at its committed value. The score is the better of a cold start and a
    warm start from the last committed allocation (new DL AP silent), so the
    committed SE never decreases. UL wins ties.
    ``cheap`` scores candidates under equal power and optimizes only the final
    schedule (an approximation; the trace is then not guaranteed monotone).
    """
    M = gains.beta.shape[0]
    ev = _Evaluator(stats, gains, pilots, config, n_antennas, cheap, refine_weights)
    if len(gains.ul_ues) == 0 or len(gains.dl_ues) == 0:
        mode = UL if len(gains.dl_ues) == 0 else DL
        aps = list(range(M))
        d = ev.duplex(aps, []) if mode == UL else ev.duplex([], aps)
        res = ev.optimize(d)
        return ScheduleResult(d, res, [res.report.sum_se], [(m, mode) for m in aps], ev.count)

    ul: list[int] = []
    dl: list[int] = []
    current: AlternationResult | None = None
    cur_duplex = ev.duplex(ul, dl)
    trace: list[float] = []
    steps: list[tuple[int, str]] = []
    remaining = list(range(M))
    while remaining:
        best = None
        for i in remaining:
            for mode in (UL, DL):
                d = ev.duplex(ul + [i], dl) if mode == UL else ev.duplex(ul, dl + [i])
                if cheap:
                    val, res = ev.equal(d), None
                else:
                    warm = None if current is None else _extend(current.power, cur_duplex, d)
                    res = ev.candidate(d, warm)
                    val = res.report.sum_se
                # strict comparison keeps the first candidate on ties: lower AP index, UL before DL
                if best is None or val > best[0]:
                    best = (val, i, mode, d, res)
        val, i, mode, d, res = best
        (ul if mode == UL else dl).append(i)
        remaining.remove(i)
        cur_duplex, current = d, res
        trace.append(val)
        steps.append((i, mode))
    if cheap:
        current = ev.optimize(cur_duplex)
    return ScheduleResult(cur_duplex, current, trace, steps, ev.count)


@dataclass
class ExhaustiveResult:
    best: ScheduleResult
    table: list[tuple[tuple[str, ...], float]]  # (per-AP modes, optimized sum SE)


def exhaustive_mode_select(
    stats: EstimateStats,
    gains: LargeScaleGains,
    pilots: PilotAssignment,
    config: SystemConfig,
    m_cap: int = 10,
    n_antennas: int | None = None,
    refine_weights: bool = True,
) -> ExhaustiveResult:
    """Optimize every UL/DL split of the APs and return the best with the full table."""
    M = gains.beta.shape[0]
    if M > m_cap:
        raise ValueError(f"exhaustive search limited to {m_cap} APs, got {M}")
    ev = _Evaluator(stats, gains, pilots, config, n_antennas, False, refine_weights)
    table = []
    best = None
    for modes in itertools.product((UL, DL), repeat=M):
        ul = [m for m in range(M) if modes[m] == UL]
        dl = [m for m in range(M) if modes[m] == DL]
        d = ev.duplex(ul, dl)
        res = ev.optimize(d)
        table.append((modes, res.report.sum_se))
        if best is None or res.report.sum_se > best[1].report.sum_se:
            best = (d, res)
    d, res = best
    return ExhaustiveResult(ScheduleResult(d, res, [res.report.sum_se], [], ev.count), table)


def export_schedule_csv(path: str | Path, result: ScheduleResult, num_aps: int) -> None:
    with open(path, "w") as fh:
        fh.write("ap,mode\n")
        for m, mode in enumerate(result.modes(num_aps)):
            fh.write(f"{m},{mode}\n")


def export_trace_csv(path: str | Path, result: ScheduleResult) -> None:
    with open(path, "w") as fh:
        fh.write("step,ap,mode,sum_se\n")
        for s, ((ap, mode), v) in enumerate(zip(result.steps, result.trace)):
            fh.write(f"{s},{ap},{mode},{float(v)!r}\n")
