"""Two-photon amplitude oracle for the pairwise weak-coherent-pulse state.

Works directly with the four creation-operator terms (early photon in arm
i, late photon in arm j).  Arm-2 photons carry the phase ``exp(i phi)`` and
the temporal mode ``gamma * xi + sqrt(1 - gamma**2) * xi_perp``; arm-1
photons are in ``xi``.  Detection events are projected onto the analyzer
polarization, keeping ``xi`` and ``xi_perp`` as orthogonal final states.

Routing through the 50/50 beamsplitter contributes the same factor to
every term and is conditioned out, so probabilities are post-selected on
the photons reaching the requested detectors.

Nothing here imports :mod:`homlab.optics`: the oracle is meant to check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

CROSS = "CROSS_D1D2"
SELF = "SELF_D1"

_HALF = (0.5 + 0j, 0.5 + 0j, 0.5 + 0j, 0.5 + 0j)


@dataclass(frozen=True)
class PairwiseState:
    """Amplitudes ``(c11, c12, c21, c22)``; first index is the early photon's arm."""

    terms: Tuple[complex, complex, complex, complex] = _HALF
    phi: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if len(self.terms) != 4:
            raise ValueError("expected four amplitudes")
        norm = sum(abs(c) ** 2 for c in self.terms)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state not normalized (sum |c|^2 = {norm})")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @classmethod
    def interfering_only(cls, phi: float = 0.0, gamma: float = 1.0) -> "PairwiseState":
        """Only the a1 a2 and a2 a1 terms (path-entangled pairs removed)."""
        r = 1.0 / math.sqrt(2.0)
        return cls((0j, r + 0j, r + 0j, 0j), phi=phi, gamma=gamma)


def _analyzer(theta_deg: float, sign: int = 1):
    t = math.radians(theta_deg)
    return np.array([math.cos(t), sign * math.sin(t)])


def _pattern(theta1_deg, theta2_deg, bs_sign, pairing):
    if pairing == CROSS:
        return _analyzer(theta1_deg), _analyzer(theta2_deg, bs_sign)
    if pairing == SELF:
        return _analyzer(theta1_deg), _analyzer(theta1_deg)
    raise ValueError(f"oracle supports {CROSS} and {SELF}, not {pairing!r}")


def _amplitudes(terms, phi, gamma, early, late) -> Dict[Tuple[str, str], np.ndarray]:
    phi = np.asarray(phi, dtype=float)
    phase = np.exp(1j * phi)
    # temporal-mode components per arm: (xi, xi_perp)
    modes = ((1.0, 0.0), (gamma, math.sqrt(max(0.0, 1.0 - gamma * gamma))))
    labels = ("xi", "xi_perp")
    out = {}
    for e in range(2):
        for l in range(2):
            amp = np.zeros_like(phase)
            for idx, c in enumerate(terms):
                if c == 0:
                    continue
                i, j = divmod(idx, 2)
                weight = modes[i][e] * modes[j][l]
                if weight == 0.0:
                    continue
                amp = amp + c * early[i] * late[j] * weight * phase ** (i + j)
            out[(labels[e], labels[l])] = amp
    return out


def joint_click_amplitudes(
    state: PairwiseState,
    theta1_deg: float,
    theta2_deg: float,
    bs_sign: int = -1,
    pairing: str = CROSS,
) -> Dict[Tuple[str, str], complex]:
    """Amplitudes into the orthogonal final temporal modes (early, late).

    For CROSS the early photon is detected behind analyzer 1 and the late
    one behind analyzer 2; for SELF both pass analyzer 1.
    """
    early, late = _pattern(theta1_deg, theta2_deg, bs_sign, pairing)
    amps = _amplitudes(state.terms, state.phi, state.gamma, early, late)
    return {k: complex(v) for k, v in amps.items()}


def coincidence_prob(
    state: PairwiseState,
    theta1_deg: float,
    theta2_deg: float,
    bs_sign: int = -1,
    pairing: str = CROSS,
) -> float:
    amps = joint_click_amplitudes(state, theta1_deg, theta2_deg, bs_sign, pairing)
    return float(sum(abs(a) ** 2 for a in amps.values()))


def phase_averaged_prob(
    theta1_deg: float,
    theta2_deg: float,
    gamma: float,
    bs_sign: int = -1,
    pairing: str = CROSS,
    n_phase_samples: int = 4096,
    terms=_HALF,
    normalize: bool = False,
) -> float:
    """Coincidence probability averaged over a uniformly random arm phase.

    Periodic trapezoid rule on ``n_phase_samples`` points of [0, 2 pi).  With
    ``normalize`` the result is divided by the same average at ``gamma = 0``.
    """
    if n_phase_samples < 16:
        raise ValueError("n_phase_samples must be >= 16")
    PairwiseState(tuple(terms), 0.0, gamma)  # validates
    early, late = _pattern(theta1_deg, theta2_deg, bs_sign, pairing)
    phi = 2.0 * np.pi * np.arange(n_phase_samples) / n_phase_samples

    def avg(g):
        amps = _amplitudes(terms, phi, g, early, late)
        return float(np.mean(sum(np.abs(a) ** 2 for a in amps.values())))

    p = avg(gamma)
    if normalize:
        return p / avg(0.0)
    return p
