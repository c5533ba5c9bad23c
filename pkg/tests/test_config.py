import json

import pytest

from cfduplex.config import ConfigError, SystemConfig, ThreeSlope, from_dict, load_config, profile, to_dict


def test_cost231_intercept_frozen():
    # COST-231 Hata at 1.9 GHz, 15 m AP, 1.65 m UE, evaluated by hand
    assert ThreeSlope().intercept_db() == pytest.approx(140.71508370390842, rel=1e-12)
    assert ThreeSlope(l_db=120.0).intercept_db() == 120.0


def test_pilot_power_reference_distance():
    # 20 dB SNR at 20 m on the middle slope: PL = -87.2202 dB, N0 = -122 dBW
    assert SystemConfig().pilot_power == pytest.approx(0.03326774532951245, rel=1e-9)
    assert SystemConfig().noise_power_w == pytest.approx(10 ** -12.2)


def test_profiles():
    desk, paper = profile("desk"), profile("paper")
    assert (desk.num_aps, desk.num_ues, desk.mc_trials) == (16, 16, 200)
    assert (paper.num_aps, paper.num_ues, paper.mc_trials) == (64, 40, 5000)
    with pytest.raises(ConfigError):
        profile("huge")


@pytest.mark.parametrize("override", [
    {"num_aps": 0}, {"ul_fraction": 1.5}, {"delta_u": 0.0}, {"shadow_sigma_db": -1.0},
    {"pathloss_threeslope": {"d0_m": 60.0}}, {"num_ues": 2.5}, {"pilot_snr_db": float("nan")},
    {"pilot_power_override": [0.1]}, {"no_such_key": 1},
])
def test_invalid_configs_rejected(override):
    with pytest.raises(ConfigError):
        SystemConfig().with_overrides(override) if "no_such_key" not in override else from_dict(override)


def test_dotted_override_and_roundtrip(tmp_path):
    cfg = SystemConfig().with_overrides({"pathloss_threeslope.d1_m": 40.0, "num_ues": 10})
    assert cfg.pathloss_threeslope.d1_m == 40.0 and cfg.num_ues == 10
    assert from_dict(to_dict(cfg)) == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps(to_dict(cfg)))
    assert load_config(p) == cfg
    y = tmp_path / "c.yaml"
    y.write_text("num_aps: 9\nsimple_pl: {exponent: 3.0}\n")
    got = load_config(y)
    assert got.num_aps == 9 and got.simple_pl.exponent == 3.0


def test_ul_ue_count_uses_floor():
    assert SystemConfig(num_ues=5, ul_fraction=0.5).num_ul_ues == 2
    assert SystemConfig(num_ues=4, ul_fraction=0.5).num_ul_ues == 2
