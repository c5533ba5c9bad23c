import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfduplex import channel, powerctl, schedule, se
from cfduplex.config import SystemConfig
from cfduplex.pilot import PilotAssignment

from conftest import build_instance, make_gains


def _manual(beta, ul, dl, n0=1e-13):
    beta = np.asarray(beta, dtype=float)
    K = beta.shape[1]
    cfg = SystemConfig(num_aps=beta.shape[0], num_ues=K)
    gains = make_gains(beta, ul, dl, noise=n0, zeta=1e-20, epsilon=np.full((len(dl), len(ul)), 1e-20))
    pilots = PilotAssignment.from_indices(range(K))
    return channel.estimation_coefficients(gains, pilots, cfg), gains, pilots, cfg


def test_single_ap_with_only_ul_ues_goes_ul():
    stats, gains, pilots, cfg = _manual([[1e-10, 2e-10]], [0, 1], [])
    res = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    assert res.modes(1) == [schedule.UL]


def test_two_aps_split_by_proximity():
    beta = [[1e-9, 1e-14], [1e-14, 1e-9]]  # UE 0 (UL) next to AP 0, UE 1 (DL) next to AP 1
    stats, gains, pilots, cfg = _manual(beta, [0], [1])
    res = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    assert res.modes(2) == [schedule.UL, schedule.DL]
    ex = schedule.exhaustive_mode_select(stats, gains, pilots, cfg)
    assert len(ex.table) == 4
    assert ex.best.modes(2) == [schedule.UL, schedule.DL]
    assert res.sum_se == pytest.approx(ex.best.sum_se)


def test_exhaustive_table_matches_direct_evaluation():
    beta = [[1e-9, 3e-11], [2e-11, 8e-10]]
    stats, gains, pilots, cfg = _manual(beta, [0], [1])
    ex = schedule.exhaustive_mode_select(stats, gains, pilots, cfg)
    for modes, val in ex.table:
        ul = [m for m in range(2) if modes[m] == schedule.UL]
        dl = [m for m in range(2) if modes[m] == schedule.DL]
        direct = powerctl.alternate_ul_dl(stats, gains, pilots, se.DuplexConfig.dtdd(ul, dl, 8), cfg)
        assert val == direct.report.sum_se


def test_single_ap_exhaustive_has_two_rows():
    stats, gains, pilots, cfg = _manual([[1e-10, 2e-10]], [0], [1])
    assert len(schedule.exhaustive_mode_select(stats, gains, pilots, cfg).table) == 2


def test_ties_go_to_ul_then_lower_index():
    beta = np.zeros((3, 2))
    stats, gains, pilots, cfg = _manual(beta, [0], [1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    assert res.steps == [(0, schedule.UL), (1, schedule.UL), (2, schedule.UL)]


def test_exhaustive_size_cap():
    cfg = SystemConfig(num_aps=11, num_ues=4)
    _, gains, pilots, _, stats = build_instance(cfg, 0)
    with pytest.raises(ValueError):
        schedule.exhaustive_mode_select(stats, gains, pilots, cfg)


@pytest.fixture(scope="module")
def m4():
    cfg = SystemConfig(num_aps=4, num_ues=6, area_side_m=500.0)
    return cfg, [build_instance(cfg, s, max_colors=cfg.antennas_per_ap - 1) for s in range(6)]


def test_greedy_deterministic_and_complete(m4):
    cfg, insts = m4
    _, gains, pilots, _, stats = insts[0]
    a = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    b = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    assert a.steps == b.steps and a.sum_se == b.sum_se
    assert sorted(m for m, _ in a.steps) == [0, 1, 2, 3]
    assert len(a.trace) == 4


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 5))
def test_greedy_monotone_and_bounded_by_exhaustive(m4, idx):
    cfg, insts = m4
    _, gains, pilots, _, stats = insts[idx]
    g = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    ex = schedule.exhaustive_mode_select(stats, gains, pilots, cfg)
    assert np.all(np.diff(g.trace) >= -1e-12)
    # greedy also tries warm starts, so it can edge past the cold-started exhaustive search
    assert g.sum_se <= ex.best.sum_se * 1.01
    assert g.sum_se >= 0.85 * ex.best.sum_se


def test_cheap_mode_assigns_every_ap(m4):
    cfg, insts = m4
    _, gains, pilots, _, stats = insts[1]
    res = schedule.greedy_mode_select(stats, gains, pilots, cfg, cheap=True)
    assert len(res.duplex.ul_aps) + len(res.duplex.dl_aps) == 4
    assert res.allocation.report.sum_se >= res.trace[-1] - 1e-9  # optimized once at the end


def test_exports(tmp_path, m4):
    cfg, insts = m4
    _, gains, pilots, _, stats = insts[2]
    res = schedule.greedy_mode_select(stats, gains, pilots, cfg)
    schedule.export_schedule_csv(tmp_path / "s.csv", res, 4)
    schedule.export_trace_csv(tmp_path / "t.csv", res)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "ap,mode" and len(rows) == 5
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,ap,mode,sum_se"
