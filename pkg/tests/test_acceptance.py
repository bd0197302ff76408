"""End-to-end acceptance checks.

Each test prints (and records for the terminal summary) one PASS/FAIL line
with the measured numbers, then asserts the criterion at its stated
tolerance.  The heavy scans are computed once per module.
"""

import io
import json
import math
import time

import numpy as np
import pytest

from conftest import record
from homlab import cli
from homlab.clicksim import DetectorConfig, SimPlan, default_specs, expected_rates, simulate
from homlab.correlator import CoincidenceSpec, correlation_histogram, delayed_coincidences
from homlab.fock import CROSS, SELF, phase_averaged_prob
from homlab.fringe import FringeCurve, derive_seed, estimate_visibility, fit_fringe, run_scan
from homlab.optics import OpticalConfig, Pairing, Topology, coincidence_rate_closed_form, tuned_mean_photons
from homlab.tags import merge_sorted, read_ttag, write_ttag

DX = np.linspace(-1.5, 1.5, 41)
PULSES_B = 300_000_000
PULSES_C = 200_000_000
SEED_PP, SEED_PM, SEED_C = 1, 2, 3
WING_MM = 1.2  # gamma^2 < 1e-7 beyond this


def verdict(n, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {n}: {name} | {detail}"
    print(line)
    record(line)
    assert ok, line


def _b_scan(theta2, seed):
    optics = OpticalConfig(theta1_deg=45.0, theta2_deg=theta2)
    t0 = time.perf_counter()
    curves = run_scan(DX, PULSES_B, optics, DetectorConfig(), default_specs(optics), seed)
    fits = {k: fit_fringe(curves[k]) for k in ("cross_D1D2", "self_D1")}
    return dict(optics=optics, curves=curves, fits=fits, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="module")
def scan_pp():
    return _b_scan(45.0, SEED_PP)


@pytest.fixture(scope="module")
def scan_pm():
    return _b_scan(-45.0, SEED_PM)


@pytest.fixture(scope="module")
def scan_c(tmp_path_factory):
    """SETUP_C scan where each point is written to and read back from one .ttag file."""
    optics = OpticalConfig(
        topology=Topology.SETUP_C,
        mean_photons_per_pulse=tuned_mean_photons(300e3, Topology.SETUP_C),
    )
    det = DetectorConfig()
    specs = default_specs(optics)
    path = tmp_path_factory.mktemp("c") / "point.ttag"
    counts = {s.label: [] for s in specs}
    singles = []
    t0 = time.perf_counter()
    for i, dx in enumerate(DX):
        plan = SimPlan(PULSES_C, seed=derive_seed(SEED_C, i), dx_mm=float(dx),
                       coincidence_delays_ps=tuple(s.delay_ps for s in specs))
        streams = simulate(plan, optics, det)
        write_ttag(merge_sorted(*streams.values()), path)
        tags = read_ttag(path)
        for s in specs:
            a = tags.select(s.channel_a)
            counts[s.label].append(delayed_coincidences(a, a, s))
        singles.append(len(tags))
    dur = np.full(len(DX), PULSES_C * optics.pulse_period_ps)
    curves = {k: FringeCurve(k, DX, v, dur) for k, v in counts.items()}
    curves["singles_ch0"] = FringeCurve("singles_ch0", DX, singles, dur)
    fits = {k: fit_fringe(curves[k]) for k in ("peak", "dip")}
    return dict(optics=optics, curves=curves, fits=fits, seconds=time.perf_counter() - t0)


def _fmt(fit):
    return f"V={fit.visibility:.4f}+-{fit.visibility_err:.4f} ({'peak' if fit.sign > 0 else 'dip'})"


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for t1 in range(-90, 91, 15):
        for t2 in range(-90, 91, 15):
            cfg = OpticalConfig(theta1_deg=t1, theta2_deg=t2)
            lc = cfg.coherence().coherence_scale_mm
            for g in (0.0, 0.25, 0.5, 0.75, 1.0):
                dx = math.inf if g == 0 else lc * math.sqrt(-2.0 * math.log(g)) / 2.0
                for name, pairing in ((CROSS, Pairing.CROSS_D1D2), (SELF, Pairing.SELF_D1)):
                    got = phase_averaged_prob(t1, t2, g, cfg.bs_sign, name, 4096, normalize=True)
                    worst = max(worst, abs(got - coincidence_rate_closed_form(dx, cfg, pairing)))
    secs = time.perf_counter() - t0
    verdict(1, "oracle equivalence", worst <= 1e-9 and secs < 10,
            f"max|diff|={worst:.2e} (tol 1e-9), {secs:.1f} s (limit 10 s)")


def test_criterion_02_setup_b_dip_and_self_peak(scan_pp):
    cross, self_ = scan_pp["fits"]["cross_D1D2"], scan_pp["fits"]["self_D1"]
    ok = (
        cross.sign == -1 and abs(cross.visibility - 0.5) <= 0.02
        and self_.sign == 1 and abs(self_.visibility - 0.5) <= 0.02
        and scan_pp["seconds"] < 120
    )
    verdict(2, "SETUP_B +45/+45", ok,
            f"cross {_fmt(cross)}, self {_fmt(self_)} (target 0.50+-0.02); "
            f"{PULSES_B:.0e} pulses/pt, scan+fit {scan_pp['seconds']:.0f} s (limit 120 s)")


def test_criterion_03_setup_b_flipped_analyzer(scan_pm):
    cross, self_ = scan_pm["fits"]["cross_D1D2"], scan_pm["fits"]["self_D1"]
    ok = (
        cross.sign == 1 and abs(cross.visibility - 0.5) <= 0.02
        and self_.sign == 1 and not self_.no_fringe
    )
    verdict(3, "SETUP_B +45/-45", ok, f"cross {_fmt(cross)} (target peak 0.50+-0.02), self {_fmt(self_)}")


def test_criterion_04_setup_c_peak_and_dip(scan_c):
    peak, dip = scan_c["fits"]["peak"], scan_c["fits"]["dip"]
    ok = (
        peak.sign == 1 and abs(peak.visibility - 0.5) <= 0.02
        and dip.sign == -1 and abs(dip.visibility - 0.5) <= 0.02
    )
    verdict(4, "SETUP_C single detector", ok,
            f"100 ns {_fmt(peak)}, 125 ns {_fmt(dip)} (target 0.50+-0.02), {scan_c['seconds']:.0f} s")


def test_criterion_05_fringe_width(scan_pp, scan_pm, scan_c):
    fits = {
        "B++ cross": scan_pp["fits"]["cross_D1D2"],
        "B++ self": scan_pp["fits"]["self_D1"],
        "B+- cross": scan_pm["fits"]["cross_D1D2"],
        "B+- self": scan_pm["fits"]["self_D1"],
        "C peak": scan_c["fits"]["peak"],
        "C dip": scan_c["fits"]["dip"],
    }
    ok = all(abs(f.fwhm_mm - 0.60) <= 0.05 for f in fits.values())
    detail = ", ".join(f"{k} {f.fwhm_mm:.3f}" for k, f in fits.items())
    verdict(5, "fringe FWHM 0.60+-0.05 mm", ok, detail)


def test_criterion_06_rate_consistency(scan_pp):
    wing = np.abs(DX) >= WING_MM
    c = scan_pp["curves"]
    singles = [c[f"singles_ch{ch}"].rates_hz[wing].mean() for ch in (0, 1)]
    coinc = c["cross_D1D2"].rates_hz[wing].mean()
    ok = all(abs(s / 300e3 - 1) <= 0.02 for s in singles) and abs(coinc / 4.5e3 - 1) <= 0.05
    verdict(6, "rates", ok,
            f"singles D1 {singles[0] / 1e3:.2f} kHz, D2 {singles[1] / 1e3:.2f} kHz (300+-2%); "
            f"baseline coincidences {coinc / 1e3:.3f} kHz (4.5+-5%)")


def test_criterion_07_dead_time():
    det = DetectorConfig()
    gaps = []
    for optics in (
        OpticalConfig(),
        OpticalConfig(topology=Topology.SETUP_C, mean_photons_per_pulse=tuned_mean_photons(300e3, "SETUP_C")),
        OpticalConfig(topology=Topology.SETUP_C, mean_photons_per_pulse=1.0),
    ):
        for dx in (0.0, 5.0):
            for s in simulate(SimPlan(20_000_000, seed=7, dx_mm=dx), optics, det).values():
                gaps.append(int(np.diff(s.t_ps.astype(np.int64)).min()))
    optics = OpticalConfig(topology=Topology.SETUP_C, mean_photons_per_pulse=tuned_mean_photons(300e3, "SETUP_C"))
    s = simulate(SimPlan(100_000_000, seed=8, dx_mm=5.0), optics, det)[0]
    # bins of 25 ns centred on multiples of the half period
    h = correlation_histogram(s, s, 25_000, 250_000, self_mode=True, start_ps=12_500)
    at25 = h.at(25_000)
    base = np.mean([h.at(m * 25_000) for m in range(2, 10)])
    ok = min(gaps) >= det.dead_time_ps and at25 <= 0.01 * base
    verdict(7, "dead time", ok,
            f"min gap {min(gaps)} ps (>= {det.dead_time_ps}); 25 ns bin {at25} vs baseline {base:.0f} (<= 1%)")


def test_criterion_08_correlator_fuzz():
    rng = np.random.default_rng(20240808)
    bad = 0
    for _ in range(200):
        na, nb = rng.integers(0, 1001, size=2)
        span = int(rng.integers(1_000, 2_000_000))
        ta = np.sort(rng.integers(0, span, na))
        self_mode = bool(rng.integers(0, 2))
        tb = ta if self_mode else np.sort(rng.integers(0, span, nb))
        delay = int(rng.integers(1, span // 3 + 2)) * (1 if self_mode or rng.integers(0, 2) else -1)
        window = int(rng.integers(1, span // 5 + 2))
        spec = CoincidenceSpec(0, 0 if self_mode else 1, delay, window, self_mode)
        got = delayed_coincidences(ta, tb, spec)
        want = 0
        for x in ta.tolist():
            for y in tb.tolist():
                d = y - x
                if 2 * abs(d - delay) <= window and (d > 0 or not self_mode):
                    want += 1
        bad += got != want
    verdict(8, "correlator vs O(n^2)", bad == 0, f"{bad} mismatches over 200 random streams")


def test_criterion_09_determinism(tmp_path, capsys):
    digests = []
    for threads in (1, 4, 1):
        streams = simulate(SimPlan(3_000_000, dwell_block_pulses=5_000, seed=99, dx_mm=0.2),
                           OpticalConfig(), threads=threads)
        buf = io.BytesIO()
        write_ttag(merge_sorted(*streams.values()), buf)
        digests.append(buf.getvalue())
    same_tags = digests[0] == digests[1] == digests[2]

    fits = []
    for threads in ("1", "3", "1"):
        csv_path = tmp_path / f"scan_{threads}_{len(fits)}.csv"
        assert cli.main(["scan", "--points", "15", "--pulses-per-point", "2000000", "--seed", "5",
                         "--out", str(csv_path), "--threads", threads]) == 0
        assert cli.main(["fit", "--fringe", str(csv_path), "--label", "cross_D1D2"]) == 0
        out = capsys.readouterr().out.strip().splitlines()[-1]
        fits.append((csv_path.read_bytes(), out))
    same_fit = fits[0] == fits[1] == fits[2]
    verdict(9, "determinism", same_tags and same_fit,
            f".ttag identical across threads 1/4/1: {same_tags}; scan CSV and fit JSON identical across "
            f"threads 1/3/1: {same_fit}")


def _flatness(curve):
    n = curve.counts.astype(float)
    mean = n.mean()
    z = (n - mean) / math.sqrt(mean)
    return float(np.max(np.abs(z)))


def test_criterion_10_singles_flatness(scan_pp, scan_pm, scan_c):
    worst = {
        "B++ D1": _flatness(scan_pp["curves"]["singles_ch0"]),
        "B++ D2": _flatness(scan_pp["curves"]["singles_ch1"]),
        "B+- D1": _flatness(scan_pm["curves"]["singles_ch0"]),
        "B+- D2": _flatness(scan_pm["curves"]["singles_ch1"]),
        "C D": _flatness(scan_c["curves"]["singles_ch0"]),
    }
    ok = all(z <= 3.0 for z in worst.values())
    verdict(10, "singles flatness", ok, "max |z| " + ", ".join(f"{k} {z:.1f}" for k, z in worst.items()))


def test_singles_follow_saturation_prediction(scan_pp):
    """Diagnostic for criterion 10: the singles shape is the predicted detector response."""
    optics = scan_pp["optics"]
    zs = []
    for ch in (0, 1):
        curve = scan_pp["curves"][f"singles_ch{ch}"]
        for dx, n, dur in zip(DX, curve.counts, curve.duration_ps):
            want = expected_rates(SimPlan(PULSES_B, dx_mm=float(dx)), optics).singles_hz[ch] * dur * 1e-12
            zs.append((n - want) / math.sqrt(want))
    zs = np.array(zs)
    print(f"singles vs prediction: max |z| {np.abs(zs).max():.2f}, mean z {zs.mean():.2f}, rms {zs.std():.2f}")
    assert np.abs(zs).max() <= 4.0
    assert abs(zs.mean()) <= 3.0 / math.sqrt(zs.size)


def test_wcp_bound_holds_statistically(scan_pp, scan_pm, scan_c):
    fits = list(scan_pp["fits"].values()) + list(scan_pm["fits"].values()) + list(scan_c["fits"].values())
    for f in fits:
        assert f.visibility <= 0.5 + 3 * f.visibility_err


def test_setup_c_peak_and_dip_agree(scan_c):
    p, d = scan_c["fits"]["peak"], scan_c["fits"]["dip"]
    assert abs(p.visibility - d.visibility) <= 3 * (p.visibility_err + d.visibility_err)


def test_visibility_estimators_agree(scan_pp):
    fit = scan_pp["fits"]["cross_D1D2"]
    v = estimate_visibility(fit)
    assert v.visibility == pytest.approx(fit.visibility, rel=1e-9)
    assert json.loads(json.dumps(fit.to_dict()))["kind"] == "dip"
