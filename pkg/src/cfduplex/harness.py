"""Experiment orchestration: sweeps, per-trial pipelines, statistics and output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from . import channel, pilot, powerctl, schedule, seeding, se
from .config import ConfigError, SystemConfig, load_mapping, profile, to_dict

SCHEMA_VERSION = 1
SCHEDULERS = ("greedy", "greedy-cheap", "half")
KINDS = ("se", "pilot")


@dataclass(frozen=True)
class Arm:
    """One scheme evaluated on every trial.

    kind ``pilot`` only runs clustering, coloring and estimation. kind ``se``
    also schedules (DTDD), allocates power and evaluates closed-form SE.
    """

    name: str
    kind: str = "se"
    duplex: str = se.DTDD
    n_antennas: int | None = None  # DTDD; None means config.antennas_per_ap
    n_tx: int | None = None  # FD; None means config.n_tx
    n_rx: int | None = None
    scheduler: str = "greedy-cheap"
    power_control: bool = True
    refine_weights: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"arm {self.name}: unknown kind {self.kind!r}")
        if self.duplex not in (se.DTDD, se.FD):
            raise ConfigError(f"arm {self.name}: unknown duplex {self.duplex!r}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"arm {self.name}: unknown scheduler {self.scheduler!r}")

    def antennas(self, cfg: SystemConfig) -> tuple[int, int]:
        """(receive, transmit) antennas per AP."""
        if self.duplex == se.FD:
            return (self.n_rx or cfg.n_rx, self.n_tx or cfg.n_tx)
        n = self.n_antennas or cfg.antennas_per_ap
        return n, n


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    config: SystemConfig
    arms: tuple[Arm, ...]
    trials: int = 1
    sweep_path: str | None = None
    sweep_values: tuple = (None,)
    out_dir: str | None = None
    pilot_cap: bool | int = True  # True: tau_p below the smallest array across arms; an int fixes the cap

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.arms:
            raise ConfigError("at least one arm is required")
        if not isinstance(self.pilot_cap, bool) and (not isinstance(self.pilot_cap, int) or self.pilot_cap < 1):
            raise ConfigError("pilot_cap must be a boolean or a positive integer")
        if len({a.name for a in self.arms}) != len(self.arms):
            raise ConfigError("arm names must be unique")
        if self.sweep_path is not None:
            for v in self.sweep_values:
                if isinstance(v, (int, float)) and not math.isfinite(v):
                    raise ConfigError(f"sweep value {v} is not finite")
            for v in self.sweep_values:
                self.point_config(v)  # raises on a bad path or value

    def point_config(self, value) -> SystemConfig:
        if self.sweep_path is None:
            return self.config
        return self.config.with_overrides({self.sweep_path: value})


@dataclass
class ResultTable:
    experiment: str
    records: list[tuple[str, Any, int, str, float]] = field(default_factory=list)  # arm, sweep, trial, metric, value
    failures: list[tuple[str, Any, int, str]] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    sweep_path: str | None = None
    traces: dict = field(default_factory=dict)  # (arm, sweep value, trial) -> outer sum-SE trace

    def values(self, arm: str, metric: str, sweep=None) -> np.ndarray:
        return np.array([v for a, s, _, m, v in self.records
                         if a == arm and m == metric and s == sweep and math.isfinite(v)])

    def sweep_values(self) -> list:
        seen = []
        for _, s, *_ in self.records:
            if s not in seen:
                seen.append(s)
        return seen

    def arms(self) -> list[str]:
        seen = []
        for a, *_ in self.records:
            if a not in seen:
                seen.append(a)
        return seen

    def summary(self) -> list[dict]:
        keys = []
        for a, s, _, m, _ in self.records:
            if (a, s, m) not in keys:
                keys.append((a, s, m))
        out = []
        for a, s, m in keys:
            x = self.values(a, m, s)
            out.append({
                "arm": a, "sweep_value": s, "metric": m, "count": int(x.size),
                "mean": float(x.mean()) if x.size else float("nan"),
                "p10": percentile(x, 0.1) if x.size else float("nan"),
                "p50": percentile(x, 0.5) if x.size else float("nan"),
            })
        return out


# ---------------------------------------------------------------------------
# statistics


def percentile(samples, p: float) -> float:
    """p in [0, 1], linear interpolation between order statistics."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return float(np.interp(p * (x.size - 1), np.arange(x.size), x))


def cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF as step points (value, P[X <= value])."""
    x = np.sort(np.asarray(samples, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


def likely90(samples) -> float:
    """The value exceeded with 90% probability."""
    return percentile(samples, 0.1)


# ---------------------------------------------------------------------------
# per-trial pipeline


def trial_seed(base: int, trial: int) -> int:
    return seeding.derive_seed(base, trial)


def _pilot_cap(spec: ExperimentSpec, cfg: SystemConfig) -> int | None:
    if spec.pilot_cap is False:
        return None
    if spec.pilot_cap is not True:
        return int(spec.pilot_cap)
    need = [min(a.antennas(cfg)) for a in spec.arms if a.kind == "se"]
    return min(need) - 1 if need else None


def _fixed_split(M: int, n: int) -> se.DuplexConfig:
    return se.DuplexConfig.dtdd(range(0, M, 2), range(1, M, 2), n)


def run_arm(arm: Arm, cfg: SystemConfig, gains, pilots, stats, trace: list | None = None) -> dict[str, float]:
    out: dict[str, float] = {}
    if arm.kind == "pilot":
        return out
    n_rx, n_tx = arm.antennas(cfg)
    M = gains.beta.shape[0]
    sched = None
    if arm.duplex == se.FD:
        duplex = se.DuplexConfig.full_duplex(M, n_tx, n_rx)
    elif arm.scheduler == "half":
        duplex = _fixed_split(M, n_rx)
    else:
        sched = schedule.greedy_mode_select(stats, gains, pilots, cfg, cheap=arm.scheduler == "greedy-cheap",
                                            n_antennas=n_rx, refine_weights=arm.refine_weights)
        duplex = sched.duplex
    if arm.power_control:
        if sched is not None and sched.allocation is not None:
            res = sched.allocation
        else:
            res = powerctl.alternate_ul_dl(stats, gains, pilots, duplex, cfg, arm.refine_weights)
        report = res.report
        out["outer_iters"] = float(len(res.trace) - 1)
        out["converged"] = float(res.converged)
        if trace is not None:
            trace.extend(res.trace)
    else:
        power = se.equal_power(gains, duplex, cfg.ul_power_max, cfg.dl_power_total)
        w = None if arm.refine_weights else se.equal_weights(duplex, gains)
        report = se.evaluate(stats, gains, pilots, duplex, power, w, cfg.coherence_len)
    out.update(sum_se=report.sum_se, ul_se=report.ul_sum, dl_se=report.dl_sum,
               n_ul_aps=float(len(duplex.ul_aps)))
    if sched is not None and sched.trace:
        out["schedule_monotone"] = float(np.all(np.diff(sched.trace) >= -1e-12))
    return out


def run_trial(spec: ExperimentSpec, sweep_index: int, trial: int,
              traces: bool = False) -> tuple[list, list, dict]:
    value = spec.sweep_values[sweep_index]
    cfg = spec.point_config(value)
    seed = trial_seed(cfg.seed, trial)
    records, failures, trace_out = [], [], {}
    try:
        geom = channel.generate_geometry(cfg, seed)
        gains = channel.large_scale_fading(geom, cfg, seed)
        pilots, conn = pilot.assign_pilots(geom, cfg, seed, max_colors=_pilot_cap(spec, cfg))
        stats = channel.estimation_coefficients(gains, pilots, cfg)
    except Exception as exc:  # recorded, the experiment continues
        return [], [(arm.name, value, trial, f"setup: {exc!r}") for arm in spec.arms], {}
    graph = pilot.conflict_graph(conn)
    common = {
        "tau_p": float(pilots.tau_p),
        "pilot_capped": float(pilots.capped),
        "max_cluster": float(conn.membership.sum(axis=1).max()),
        "max_degree": float(graph.degrees.max()) if graph.num_vertices else 0.0,
        "nmse_mean": float(np.mean(channel.nmse(stats))),
        "r_o": conn.r_o,
    }
    for arm in spec.arms:
        tr = [] if traces else None
        try:
            metrics = {**common, **run_arm(arm, cfg, gains, pilots, stats, tr)}
            metrics["failed"] = 0.0
        except Exception as exc:
            failures.append((arm.name, value, trial, repr(exc)))
            metrics = {"failed": 1.0}
        for k in sorted(metrics):
            records.append((arm.name, value, trial, k, float(metrics[k])))
        if tr:
            trace_out[arm.name] = tr
    return records, failures, trace_out


def _task(args):
    spec, i, t, traces = args
    return run_trial(spec, i, t, traces)


def run_experiment(spec: ExperimentSpec, threads: int = 1, traces: bool = False) -> ResultTable:
    """Run every (sweep point, trial) and merge in canonical order."""
    tasks = [(spec, i, t, traces) for i in range(len(spec.sweep_values)) for t in range(spec.trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        results = [_task(a) for a in tasks]
    table = ResultTable(spec.name, config=to_dict(spec.config), sweep_path=spec.sweep_path)
    for (_, i, t, _), (recs, fails, tr) in zip(tasks, results):
        table.records.extend(recs)
        table.failures.extend(fails)
        for arm, values in tr.items():
            table.traces[(arm, spec.sweep_values[i], t)] = values
    return table


# ---------------------------------------------------------------------------
# spec files and output


def arm_from_dict(d: Mapping[str, Any]) -> Arm:
    known = set(Arm.__dataclass_fields__)
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown arm keys: {sorted(bad)}")
    if "name" not in d:
        raise ConfigError("arm needs a name")
    return Arm(**d)


def spec_from_mapping(data: Mapping[str, Any], base: SystemConfig | None = None) -> ExperimentSpec:
    allowed = {"name", "config", "arms", "trials", "sweep", "out_dir", "pilot_cap"}
    bad = set(data) - allowed
    if bad:
        raise ConfigError(f"unknown experiment keys: {sorted(bad)}")
    cfg = base if base is not None else SystemConfig()
    cfg = cfg.with_overrides(dict(data.get("config") or {})) if data.get("config") else cfg.validate()
    sweep = data.get("sweep") or {}
    arms = tuple(arm_from_dict(a) for a in data.get("arms") or [{"name": "dtdd"}])
    return ExperimentSpec(
        name=str(data.get("name", "experiment")), config=cfg, arms=arms,
        trials=int(data.get("trials", cfg.mc_trials)),
        sweep_path=sweep.get("path"), sweep_values=tuple(sweep.get("values", [None])),
        out_dir=data.get("out_dir"), pilot_cap=data.get("pilot_cap", True),
    )


def load_spec(path: str | Path, profile_name: str | None = None) -> ExperimentSpec:
    base = profile(profile_name) if profile_name else None
    return spec_from_mapping(load_mapping(path), base)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "arm", "sweep_value", "trial", "metric", "value"])
    for a, s, t, m, v in table.records:
        w.writerow([table.experiment, a, _fmt(s), t, m, repr(float(v))])
    return buf.getvalue()


def table_json(table: ResultTable) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "experiment": table.experiment,
        "sweep_path": table.sweep_path,
        "config": table.config,
        "summary": table.summary(),
        "failures": [list(f) for f in table.failures],
        "records": [list(r) for r in table.records],
    }
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True)


def emit(table: ResultTable, out_dir: str | Path, formats: Iterable[str] = ("csv", "json")) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            p = out / f"{table.experiment}.csv"
            p.write_text(table_csv(table))
        elif fmt == "json":
            p = out / f"{table.experiment}.json"
            p.write_text(table_json(table))
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(p)
    for (arm, s, t), values in sorted(table.traces.items(), key=lambda kv: (kv[0][0], str(kv[0][1]), kv[0][2])):
        p = out / f"trace_{table.experiment}_{arm}_{_fmt(s) or 'base'}_{t}.csv"
        powerctl.export_trace_csv(p, values)
        paths.append(p)
    return paths


def default_threads() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
