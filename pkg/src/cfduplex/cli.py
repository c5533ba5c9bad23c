"""Command line entry point.

    cfduplex run experiment.yaml --trials 50 --threads 4 --out results/
    cfduplex validate-config experiment.yaml
    cfduplex oracle-check --trials 100000
    cfduplex schedule-gap --instances 20

Exit codes: 0 success, 1 a check failed, 2 bad configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, channel, harness, montecarlo, pilot, schedule
from .config import ConfigError, SystemConfig, load_mapping, profile, to_dict

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

# closed form versus Monte Carlo tolerances (relative, per UE)
SINR_TOL = 0.02
TERM_TOL = 0.03
GAP_TARGET = 0.85


def _base_config(args) -> SystemConfig:
    cfg = profile(args.profile) if args.profile else SystemConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def oracle_config(args) -> SystemConfig:
    """Small instance where every interference term is visible: M=4, K=6,
    InAI at the noise level."""
    return _base_config(args).replace(num_aps=4, num_ues=6, area_side_m=500.0,
                                      inai_rel_noise_db=0.0).validate()


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------------------
# verbs


def cmd_run(args) -> int:
    spec = harness.load_spec(args.spec, args.profile)
    changes = {}
    if args.seed is not None:
        changes["config"] = spec.config.replace(seed=args.seed)
    if args.trials is not None:
        changes["trials"] = args.trials
    if changes:
        spec = dataclasses.replace(spec, **changes)
    out = args.out or spec.out_dir or "results"
    t0 = time.perf_counter()
    table = harness.run_experiment(spec, threads=args.threads, traces=args.trace)
    paths = harness.emit(table, out)
    dt = time.perf_counter() - t0
    for s in table.summary():
        if s["metric"] == "sum_se":
            print(f"{s['arm']:>16}  {harness._fmt(s['sweep_value']) or '-':>8}  "
                  f"mean {s['mean']:.3f}  90%-likely {s['p10']:.3f}  (n={s['count']})")
    print(f"{len(table.failures)} failed trials; wrote {len(paths)} files to {out} in {dt:.1f} s")
    return EXIT_OK


def cmd_validate(args) -> int:
    data = load_mapping(args.file)
    if "arms" in data or "sweep" in data or "trials" in data:
        spec = harness.spec_from_mapping(data, profile(args.profile) if args.profile else None)
        doc = {"experiment": spec.name, "trials": spec.trials, "arms": [a.name for a in spec.arms],
               "sweep_path": spec.sweep_path, "sweep_values": list(spec.sweep_values),
               "config": to_dict(spec.config)}
    else:
        base = profile(args.profile) if args.profile else SystemConfig()
        doc = {"config": to_dict(base.with_overrides(data))}
    print(json.dumps(doc, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = oracle_config(args)
    n_trials = args.trials or 100_000
    rows, ok = [], True
    for inst in range(args.instances):
        seed = harness.trial_seed(cfg.seed, inst)
        t0 = time.perf_counter()
        res = montecarlo.oracle_comparison(*montecarlo.oracle_instance(cfg, seed), cfg, n_trials, seed)
        dt = time.perf_counter() - t0
        worst_sinr = max(r["rel_err"] for r in res if r["term"] == "sinr")
        worst_term = max(r["rel_err"] for r in res if r["term"] != "sinr")
        good = worst_sinr <= SINR_TOL and worst_term <= TERM_TOL
        ok &= good
        print(f"instance {inst}: worst SINR err {worst_sinr:.4f}, worst term err {worst_term:.4f}, "
              f"{dt:.1f} s  {'ok' if good else 'FAIL'}")
        rows += [{"instance": inst, **r} for r in res]
    if args.out:
        _write_rows(Path(args.out) / "oracle_check.csv", rows)
    return EXIT_OK if ok else EXIT_FAIL


def gap_instance(cfg: SystemConfig, seed: int):
    """Greedy and exhaustive results on one random instance."""
    geom = channel.generate_geometry(cfg, seed)
    gains = channel.large_scale_fading(geom, cfg, seed)
    pilots, _ = pilot.assign_pilots(geom, cfg, seed, max_colors=cfg.antennas_per_ap - 1)
    stats = channel.estimation_coefficients(gains, pilots, cfg)
    greedy = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    exhaustive = schedule.exhaustive_mode_select(stats, gains, pilots, cfg)
    return greedy, exhaustive


def cmd_gap(args) -> int:
    cfg = _base_config(args).replace(num_aps=args.aps, num_ues=6, area_side_m=500.0).validate()
    rows = []
    for inst in range(args.instances):
        seed = harness.trial_seed(cfg.seed, inst)
        g, ex = gap_instance(cfg, seed)
        ratio = g.sum_se / ex.best.sum_se if ex.best.sum_se > 0 else 1.0
        mono = bool(np.all(np.diff(g.trace) >= -1e-12))
        rows.append({"instance": inst, "greedy": g.sum_se, "exhaustive": ex.best.sum_se,
                     "ratio": ratio, "monotone": mono, "modes": "".join(m[0] for m in g.modes(args.aps))})
        print(f"instance {inst}: greedy {g.sum_se:.3f}  exhaustive {ex.best.sum_se:.3f}  "
              f"ratio {ratio:.3f}  monotone {mono}")
    share = np.mean([r["ratio"] >= GAP_TARGET for r in rows])
    print(f"share of instances with greedy >= {GAP_TARGET:.0%} of exhaustive: {share:.2%}")
    if args.out:
        _write_rows(Path(args.out) / "schedule_gap.csv", rows)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the base seed")
    common.add_argument("--trials", type=int, default=None, help="trials per sweep point / MC realizations")
    common.add_argument("--threads", type=int, default=1, help="worker processes for independent trials")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--profile", choices=("desk", "paper"), default=None, help="base scale preset")
    common.add_argument("--trace", action="store_true", help="write per-trial power-control traces")

    p = argparse.ArgumentParser(prog="cfduplex", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", parents=[common], help="run an experiment spec file")
    r.add_argument("spec")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate-config", parents=[common], help="check a config or experiment file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)
    o = sub.add_parser("oracle-check", parents=[common], help="closed-form SINR terms against Monte Carlo")
    o.add_argument("--instances", type=int, default=3)
    o.set_defaults(func=cmd_oracle)
    g = sub.add_parser("schedule-gap", parents=[common], help="greedy against exhaustive mode selection")
    g.add_argument("--instances", type=int, default=10)
    g.add_argument("--aps", type=int, default=6)
    g.set_defaults(func=cmd_gap)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
