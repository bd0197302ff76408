"""Physical parameters and the closed-form coincidence-rate model.

The interferometer arms carry the two polarization modes of a pairwise
weak-coherent-pulse train.  With the arm phase randomized, only the
phase-insensitive two-photon term survives, so every normalized rate law
below has the form ``1 +/- (gamma**2 / 2) * geometry``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np


class Topology(str, enum.Enum):
    SETUP_B = "SETUP_B"  # BS + two polarizers, detectors D1/D2
    SETUP_C = "SETUP_C"  # PBS ports time-multiplexed onto one detector


class Pairing(str, enum.Enum):
    CROSS_D1D2 = "CROSS_D1D2"
    SELF_D1 = "SELF_D1"
    SELF_C_PEAK = "SELF_C_PEAK"
    SELF_C_DIP = "SELF_C_DIP"


# channel ids on the tag streams
D1 = 0
D2 = 1
D = 0

_PAIRINGS_FOR = {
    Topology.SETUP_B: {Pairing.CROSS_D1D2, Pairing.SELF_D1},
    Topology.SETUP_C: {Pairing.SELF_C_PEAK, Pairing.SELF_C_DIP},
}


@dataclass(frozen=True)
class OpticalConfig:
    """Source, interferometer and analyzer settings.

    Defaults are the laboratory values: 775 nm, 3.5 ps pulses at 20 MHz,
    1 nm interference filter.  ``mean_photons_per_pulse`` defaults to the
    value that gives ~300 kHz singles per detector in SETUP_B at 50 %
    detection efficiency (see :func:`tuned_mean_photons`).
    """

    wavelength_nm: float = 775.0
    pulse_period_ps: int = 50_000
    pulse_duration_ps: float = 3.5
    filter_fwhm_nm: float = 1.0
    mean_photons_per_pulse: float = 0.121
    topology: Topology = Topology.SETUP_B
    theta1_deg: float = 45.0
    theta2_deg: float = 45.0
    bs_sign: int = -1

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        if int(self.pulse_period_ps) != self.pulse_period_ps or self.pulse_period_ps <= 0:
            raise ValueError("pulse_period_ps must be a positive integer")
        object.__setattr__(self, "pulse_period_ps", int(self.pulse_period_ps))
        if self.mean_photons_per_pulse < 0:
            raise ValueError("mean_photons_per_pulse must be >= 0")
        if self.filter_fwhm_nm <= 0:
            raise ValueError("filter_fwhm_nm must be > 0")
        if self.wavelength_nm <= 0:
            raise ValueError("wavelength_nm must be > 0")
        if self.pulse_duration_ps <= 0 or self.pulse_duration_ps > self.pulse_period_ps / 100:
            raise ValueError("pulse_duration_ps must be in (0, pulse_period_ps/100]")
        if self.bs_sign not in (1, -1):
            raise ValueError("bs_sign must be +1 or -1")

    @property
    def rep_rate_hz(self) -> float:
        return 1e12 / self.pulse_period_ps

    @property
    def channels(self) -> Tuple[int, ...]:
        return (D1, D2) if self.topology is Topology.SETUP_B else (D,)

    def coherence(self) -> "CoherenceModel":
        return CoherenceModel.from_filter(self.wavelength_nm, self.filter_fwhm_nm)


@dataclass(frozen=True)
class CoherenceModel:
    """Gaussian first-order coherence of the filtered pulses.

    ``coherence_scale_mm`` is chosen so that the fringe envelope
    ``gamma(dx)**2`` has a FWHM of ``lambda**2 / dlambda`` in mirror
    displacement.
    """

    coherence_scale_mm: float

    def __post_init__(self):
        if not self.coherence_scale_mm > 0:
            raise ValueError("coherence_scale_mm must be > 0")

    @classmethod
    def from_filter(cls, wavelength_nm: float, filter_fwhm_nm: float) -> "CoherenceModel":
        fwhm_mm = envelope_fwhm_mm(wavelength_nm, filter_fwhm_nm)
        # gamma^2 = exp(-4 dx^2 / l^2) is 1/2 at dx = fwhm/2
        return cls(fwhm_mm / math.sqrt(math.log(2.0)))

    @property
    def envelope_fwhm_mm(self) -> float:
        return self.coherence_scale_mm * math.sqrt(math.log(2.0))


def envelope_fwhm_mm(wavelength_nm: float, filter_fwhm_nm: float) -> float:
    """lambda^2 / dlambda, converted from nm to mm."""
    return wavelength_nm**2 / filter_fwhm_nm * 1e-6


def mode_overlap(dx_mm, model: CoherenceModel):
    """Temporal-mode overlap of the two arm wavepackets at mirror offset ``dx_mm``.

    The optical path difference is twice the mirror displacement.  Accepts
    scalars or arrays.
    """
    dx = np.asarray(dx_mm, dtype=float)
    g = np.exp(-((2.0 * dx) ** 2) / (2.0 * model.coherence_scale_mm**2))
    return float(g) if g.ndim == 0 else g


def interference_terms(gamma: float, cfg: OpticalConfig) -> List[Tuple[int, int, float]]:
    """Per-slot ``(channel, offset_ps, k)`` with slot intensity ``(mu/4)(1 + k cos phi)``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma!r}")
    if cfg.topology is Topology.SETUP_B:
        s1 = math.sin(math.radians(2.0 * cfg.theta1_deg))
        s2 = math.sin(math.radians(2.0 * cfg.theta2_deg))
        return [(D1, 0, gamma * s1), (D2, 0, cfg.bs_sign * gamma * s2)]
    half = cfg.pulse_period_ps // 2
    return [(D, 0, gamma), (D, half, -gamma)]


def slot_intensities(k: int, phi: float, gamma: float, cfg: OpticalConfig):
    """Mean photon number reaching each detector slot of pulse ``k``.

    Returns a list of ``(channel, slot_time_ps, mean_photons)``.  In SETUP_C
    the reflected port arrives half a period after the transmitted one.
    """
    quarter = cfg.mean_photons_per_pulse / 4.0
    c = math.cos(phi)
    t0 = k * cfg.pulse_period_ps
    return [
        (ch, t0 + off, quarter * (1.0 + kk * c))
        for ch, off, kk in interference_terms(gamma, cfg)
    ]


def coincidence_rate_closed_form(dx_mm, cfg: OpticalConfig, pairing: Pairing):
    """Phase-averaged coincidence rate normalized to the gamma = 0 baseline."""
    pairing = Pairing(pairing)
    if pairing not in _PAIRINGS_FOR[cfg.topology]:
        raise ValueError(f"pairing {pairing.value} is not available in {cfg.topology.value}")
    g2 = np.asarray(mode_overlap(dx_mm, cfg.coherence())) ** 2
    if pairing is Pairing.CROSS_D1D2:
        s1 = math.sin(math.radians(2.0 * cfg.theta1_deg))
        s2 = math.sin(math.radians(2.0 * cfg.theta2_deg))
        r = 1.0 + cfg.bs_sign * 0.5 * g2 * s1 * s2
    elif pairing is Pairing.SELF_D1:
        r = 1.0 + 0.5 * g2 * math.sin(math.radians(2.0 * cfg.theta1_deg)) ** 2
    elif pairing is Pairing.SELF_C_PEAK:
        r = 1.0 + 0.5 * g2
    else:
        r = 1.0 - 0.5 * g2
    return float(r) if np.ndim(r) == 0 else r


def tuned_mean_photons(
    singles_hz: float,
    topology: Topology = Topology.SETUP_B,
    efficiency: float = 0.5,
    pulse_period_ps: int = 50_000,
) -> float:
    """Mean photon number per pulse giving ``singles_hz`` clicks per detector.

    Each detector slot receives ``mu/4`` photons on average; SETUP_C puts two
    slots per period on its single detector.
    """
    slots = 1 if Topology(topology) is Topology.SETUP_B else 2
    p = singles_hz * pulse_period_ps * 1e-12 / slots
    if not 0 <= p < 1:
        raise ValueError("requested singles rate exceeds one click per slot")
    return -4.0 * math.log1p(-p) / efficiency
