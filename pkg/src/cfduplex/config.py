"""System configuration: physical, algorithmic and experiment parameters."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    """Raised when a configuration is malformed or violates an invariant."""


@dataclass(frozen=True)
class ThreeSlope:
    """Three-slope path loss. ``l_db`` of None means COST-231 Hata intercept."""

    l_db: float | None = None
    d0_m: float = 10.0
    d1_m: float = 50.0
    carrier_mhz: float = 1900.0
    ap_height_m: float = 15.0
    ue_height_m: float = 1.65

    def intercept_db(self) -> float:
        if self.l_db is not None:
            return float(self.l_db)
        lf = math.log10(self.carrier_mhz)
        return (
            46.3
            + 33.9 * lf
            - 13.82 * math.log10(self.ap_height_m)
            - (1.1 * lf - 0.7) * self.ue_height_m
            + (1.56 * lf - 0.8)
        )


@dataclass(frozen=True)
class SimplePathLoss:
    """Single-slope law beta(d) = (d / d0)^(-exponent), used for cluster radius."""

    d0_m: float = 20.0
    exponent: float = 3.76


@dataclass(frozen=True)
class SystemConfig:
    area_side_m: float = 1000.0
    num_aps: int = 16
    antennas_per_ap: int = 8
    n_tx: int = 4
    n_rx: int = 4
    num_ues: int = 16
    ul_fraction: float = 0.5
    coherence_len: int = 200
    pilot_snr_db: float = 20.0
    noise_power_dbm: float = -92.0
    bandwidth_hz: float = 20e6
    shadow_sigma_db: float = 6.0
    pathloss_threeslope: ThreeSlope = field(default_factory=ThreeSlope)
    simple_pl: SimplePathLoss = field(default_factory=SimplePathLoss)
    gamma_min_db: float = 0.0
    inai_rel_noise_db: float = -40.0
    irai_rel_noise_db: float = -40.0
    ul_power_max: float = 0.1
    dl_power_total: float = 1.0
    delta_u: float = 1e-3
    delta_d: float = 1e-3
    delta_admm: float = 1e-3
    admm_penalty: float = 1e-3
    mc_trials: int = 5000
    seed: int = 0
    shadow_all_slopes: bool = False
    inai_distance_mode: bool = False
    r_o_scale: float = 1.0
    pilot_power_override: tuple[float, ...] | None = None
    max_inner_iter: int = 500
    max_outer_iter: int = 20

    # derived quantities

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)

    @property
    def pilot_power(self) -> float:
        """Per-UE pilot power E_p (W).

        The pilot SNR is the received SNR at the reference distance
        ``simple_pl.d0_m`` of the three-slope law, so E_p * beta(d) / N0
        follows the single-slope law used for the cluster radius.
        """
        from .channel import pathloss_db

        ref_gain = 10.0 ** (float(pathloss_db(self.simple_pl.d0_m, self.pathloss_threeslope)) / 10.0)
        return 10.0 ** (self.pilot_snr_db / 10.0) * self.noise_power_w / ref_gain

    def pilot_powers(self) -> "list[float]":
        if self.pilot_power_override is not None:
            return [float(p) for p in self.pilot_power_override]
        return [self.pilot_power] * self.num_ues

    @property
    def num_ul_ues(self) -> int:
        return int(math.floor(self.ul_fraction * self.num_ues + 1e-9))

    def validate(self) -> "SystemConfig":
        errs = []
        for name in ("num_aps", "antennas_per_ap", "n_tx", "n_rx", "num_ues", "coherence_len"):
            if int(getattr(self, name)) < 1:
                errs.append(f"{name} must be >= 1")
        positive = (
            "area_side_m", "bandwidth_hz", "ul_power_max", "dl_power_total", "delta_u",
            "delta_d", "delta_admm", "admm_penalty", "r_o_scale",
        )
        for name in positive:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                errs.append(f"{name} must be finite and > 0")
        if self.shadow_sigma_db < 0:
            errs.append("shadow_sigma_db must be >= 0")
        if not 0.0 <= self.ul_fraction <= 1.0:
            errs.append("ul_fraction must lie in [0, 1]")
        if self.mc_trials < 1:
            errs.append("mc_trials must be >= 1")
        if self.max_inner_iter < 1 or self.max_outer_iter < 1:
            errs.append("iteration caps must be >= 1")
        ts = self.pathloss_threeslope
        if not 0 < ts.d0_m < ts.d1_m:
            errs.append("pathloss_threeslope needs 0 < d0_m < d1_m")
        if self.simple_pl.d0_m <= 0 or self.simple_pl.exponent <= 0:
            errs.append("simple_pl d0_m and exponent must be > 0")
        if self.pilot_power_override is not None:
            if len(self.pilot_power_override) != self.num_ues:
                errs.append("pilot_power_override needs one entry per UE")
            elif any(p <= 0 for p in self.pilot_power_override):
                errs.append("pilot powers must be > 0")
        for name in ("pilot_snr_db", "noise_power_dbm", "gamma_min_db",
                     "inai_rel_noise_db", "irai_rel_noise_db"):
            if not math.isfinite(getattr(self, name)):
                errs.append(f"{name} must be finite")
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def replace(self, **changes: Any) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "SystemConfig":
        """Apply flat or dotted overrides, e.g. ``{"pathloss_threeslope.d1_m": 40}``."""
        data = to_dict(self)
        for key, value in overrides.items():
            _set_path(data, key, value)
        return from_dict(data)


_NESTED = {"pathloss_threeslope": ThreeSlope, "simple_pl": SimplePathLoss}


def _set_path(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key: {key}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {key}")
    if isinstance(node[parts[-1]], dict) and isinstance(value, Mapping):
        node[parts[-1]].update(value)
    else:
        node[parts[-1]] = value


def to_dict(cfg: SystemConfig) -> dict:
    out = dataclasses.asdict(cfg)
    if out["pilot_power_override"] is not None:
        out["pilot_power_override"] = list(out["pilot_power_override"])
    return out


def from_dict(data: Mapping[str, Any]) -> SystemConfig:
    known = {f.name: f for f in fields(SystemConfig)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        if name in _NESTED:
            cls = _NESTED[name]
            if isinstance(value, cls):
                kwargs[name] = value
                continue
            sub_known = {f.name for f in fields(cls)}
            bad = set(value) - sub_known
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            kwargs[name] = cls(**value)
        elif name == "pilot_power_override" and value is not None:
            kwargs[name] = tuple(float(v) for v in value)
        else:
            kwargs[name] = value
    try:
        cfg = SystemConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return _coerce(cfg).validate()


def _coerce(cfg: SystemConfig) -> SystemConfig:
    ints = ("num_aps", "antennas_per_ap", "n_tx", "n_rx", "num_ues", "coherence_len",
            "mc_trials", "seed", "max_inner_iter", "max_outer_iter")
    changes = {}
    for name in ints:
        v = getattr(cfg, name)
        if isinstance(v, bool) or not float(v).is_integer():
            raise ConfigError(f"{name} must be an integer")
        changes[name] = int(v)
    return dataclasses.replace(cfg, **changes)


def load_mapping(path: str | Path) -> dict:
    """Read a YAML or JSON file into a dict (JSON is a YAML subset)."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path: str | Path) -> SystemConfig:
    return from_dict(load_mapping(path))


def profile(name: str) -> SystemConfig:
    """Named scale presets. ``desk`` is small and fast; ``paper`` is full scale."""
    if name == "desk":
        return SystemConfig(num_aps=16, num_ues=16, mc_trials=200)
    if name == "paper":
        return SystemConfig(num_aps=64, num_ues=40, mc_trials=5000)
    raise ConfigError(f"unknown profile {name!r}")
