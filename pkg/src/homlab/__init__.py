"""Virtual single-detector Hong-Ou-Mandel laboratory.

Simulates pairwise weak-coherent-pulse two-photon interference, produces
detector time-tag streams, and recovers dip/peak fringes from delayed
coincidences.
"""

from homlab.optics import (
    CoherenceModel,
    OpticalConfig,
    Pairing,
    Topology,
    coincidence_rate_closed_form,
    mode_overlap,
    slot_intensities,
)
from homlab.tags import TagStream, TimeTag, merge_sorted, read_ttag, write_ttag
from homlab.correlator import (
    CoincidenceSpec,
    correlation_histogram,
    delayed_coincidences,
    singles_rate,
)
from homlab.clicksim import DetectorConfig, SimPlan, expected_rates, simulate
from homlab.fringe import FringeCurve, FringeFit, estimate_visibility, fit_fringe, run_scan

__version__ = "0.1.0"

__all__ = [
    "CoherenceModel",
    "CoincidenceSpec",
    "DetectorConfig",
    "FringeCurve",
    "FringeFit",
    "OpticalConfig",
    "Pairing",
    "SimPlan",
    "TagStream",
    "TimeTag",
    "Topology",
    "coincidence_rate_closed_form",
    "correlation_histogram",
    "delayed_coincidences",
    "estimate_visibility",
    "expected_rates",
    "fit_fringe",
    "merge_sorted",
    "mode_overlap",
    "read_ttag",
    "run_scan",
    "simulate",
    "singles_rate",
    "slot_intensities",
    "write_ttag",
]
