"""Run configuration files (YAML or JSON) for the command line."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from homlab.clicksim import DetectorConfig, default_specs
from homlab.correlator import CoincidenceSpec
from homlab.optics import OpticalConfig, Topology, tuned_mean_photons

LAB_SINGLES_HZ = 300e3

_SECTIONS = {
    "source": ("wavelength_nm", "pulse_period_ps", "pulse_duration_ps", "mean_photons_per_pulse"),
    "interferometer": ("filter_fwhm_nm", "topology", "dwell_block_pulses"),
    "analyzer": ("theta1_deg", "theta2_deg", "bs_sign"),
    "detector": ("efficiency", "dead_time_ps", "dark_rate_hz", "jitter_sigma_ps"),
    "scan": ("points", "dx_min_mm", "dx_max_mm", "pulses_per_point", "seed"),
}
_SPEC_KEYS = {f.name for f in fields(CoincidenceSpec)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScanSettings:
    points: int = 41
    dx_min_mm: float = -1.5
    dx_max_mm: float = 1.5
    pulses_per_point: int = 5_000_000
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    scan: ScanSettings = field(default_factory=ScanSettings)
    dwell_block_pulses: int = 20_000
    specs: List[CoincidenceSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "RunConfig":
        data = dict(data or {})
        unknown = set(data) - set(_SECTIONS) - {"coincidence_specs"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        flat: Dict[str, Any] = {}
        for section, keys in _SECTIONS.items():
            body = data.get(section) or {}
            if not isinstance(body, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            bad = set(body) - set(keys)
            if bad:
                raise ConfigError(f"unknown key(s) in {section!r}: {sorted(bad)}")
            flat.update(body)

        det = DetectorConfig(**{k: flat.pop(k) for k in _SECTIONS["detector"] if k in flat})
        scan = ScanSettings(**{k: flat.pop(k) for k in _SECTIONS["scan"] if k in flat})
        dwell = int(flat.pop("dwell_block_pulses", 20_000))
        topology = Topology(flat.get("topology", Topology.SETUP_B))
        if "mean_photons_per_pulse" not in flat:
            flat["mean_photons_per_pulse"] = tuned_mean_photons(
                LAB_SINGLES_HZ,
                topology,
                det.efficiency,
                int(flat.get("pulse_period_ps", 50_000)),
            )
        optics = OpticalConfig(**flat)

        raw_specs = data.get("coincidence_specs")
        if raw_specs is None:
            specs = default_specs(optics)
        else:
            specs = []
            for item in raw_specs:
                bad = set(item) - _SPEC_KEYS
                if bad:
                    raise ConfigError(f"unknown coincidence spec key(s): {sorted(bad)}")
                specs.append(CoincidenceSpec(**item))
        return cls(optics, det, scan, dwell, specs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        try:
            return cls.from_dict(data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
