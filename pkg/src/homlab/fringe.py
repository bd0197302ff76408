"""Mirror scans, Gaussian fringe fits and visibility estimates."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from homlab.clicksim import DetectorConfig, SimPlan, channels_for, simulate
from homlab.correlator import CoincidenceSpec, delayed_coincidences
from homlab.optics import OpticalConfig

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass
class FringeCurve:
    """Counts versus mirror displacement for one coincidence (or singles) label."""

    label: str
    dx_mm: np.ndarray
    counts: np.ndarray
    duration_ps: np.ndarray

    def __post_init__(self):
        self.dx_mm = np.asarray(self.dx_mm, dtype=float)
        counts = np.asarray(self.counts)
        self.counts = counts if counts.dtype.kind == "f" else counts.astype(np.int64)
        self.duration_ps = np.asarray(self.duration_ps, dtype=np.int64)
        if not len(self.dx_mm) == len(self.counts) == len(self.duration_ps):
            raise ValueError("dx_mm, counts and duration_ps must have equal length")
        if np.any(self.counts < 0):
            raise ValueError("counts must be >= 0")
        if np.any(np.diff(self.dx_mm) <= 0):
            raise ValueError("dx_mm must be strictly increasing")

    def __len__(self):
        return len(self.dx_mm)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(self.counts)

    @property
    def rates_hz(self) -> np.ndarray:
        return self.counts / (self.duration_ps * 1e-12)


@dataclass
class FringeFit:
    baseline: float
    visibility: float
    center_mm: float
    fwhm_mm: float
    sign: int
    baseline_err: float
    visibility_err: float
    center_err: float
    fwhm_err: float
    chi2: float
    dof: int
    iterations: int = 0
    converged: bool = True
    no_fringe: bool = False

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def sigma_mm(self) -> float:
        return self.fwhm_mm / FWHM_PER_SIGMA

    def model(self, x) -> np.ndarray:
        if self.no_fringe:
            return np.full(np.shape(x), self.baseline, dtype=float)
        return gaussian_fringe(
            np.asarray(x, float),
            self.baseline,
            self.sign * self.visibility,
            self.center_mm,
            self.sigma_mm,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reduced_chi2"] = self.reduced_chi2
        d["kind"] = "none" if self.no_fringe else ("peak" if self.sign > 0 else "dip")
        # JSON has no NaN
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


class FitError(RuntimeError):
    """Raised when the fit does not converge; ``last`` holds the final iterate."""

    def __init__(self, msg, last: Optional[FringeFit] = None):
        super().__init__(msg)
        self.last = last


class Visibility(NamedTuple):
    visibility: float
    sigma: float


def gaussian_fringe(x, baseline, amplitude, center, sigma):
    return baseline * (1.0 + amplitude * np.exp(-((x - center) ** 2) / (2.0 * sigma**2)))


def _jacobian(x, p):
    b, a, x0, w = p
    u = (x - x0) / w
    g = np.exp(-0.5 * u * u)
    return np.column_stack(
        [
            1.0 + a * g,
            b * g,
            b * a * g * u / w,
            b * a * g * u * u / w,
        ]
    )


def _initial_guess(x, y):
    n = len(x)
    k = max(1, int(round(0.125 * n)))
    wings = np.concatenate([y[:k], y[-k:]])
    b0 = float(wings.mean())
    dev = y - b0
    i = int(np.argmax(np.abs(dev)))
    s = 1.0 if dev[i] >= 0 else -1.0
    contrast = abs(float(dev[i]))

    # half-contrast crossings, interpolated outward from the extremum
    half = 0.5 * contrast
    sdev = s * dev

    def crossing(step):
        j = i
        while 0 <= j + step < n and sdev[j + step] >= half:
            j += step
        if not 0 <= j + step < n:
            return x[j]
        y1, y2 = sdev[j], sdev[j + step]
        frac = (y1 - half) / (y1 - y2) if y1 != y2 else 0.5
        return x[j] + frac * (x[j + step] - x[j])

    fwhm0 = crossing(1) - crossing(-1)
    if not fwhm0 > 0:
        fwhm0 = float(np.median(np.diff(x)))
    return b0, s, contrast, i, fwhm0


def fit_fringe(curve: FringeCurve, max_iter: int = 200, tol: float = 1e-8) -> FringeFit:
    """Weighted least-squares fit of ``B (1 + s V exp(-(x - x0)^2 / 2 w^2))``.

    Weights are ``1/max(count, 1)``.  Levenberg-Marquardt damped Gauss-Newton
    from a data-driven start; standard errors come from the inverse
    curvature matrix scaled by the reduced chi-square.  A curve whose
    largest excursion from the wing baseline is below two Poisson standard
    deviations is returned with ``no_fringe`` set and ``V = 0``.
    """
    x = curve.dx_mm
    y = curve.counts.astype(float)
    n = len(x)
    if n < 7:
        raise ValueError("fit_fringe needs at least 7 points")
    b0, s, contrast, i_ext, fwhm0 = _initial_guess(x, y)
    if not b0 > 0:
        raise ValueError("fringe wings have no counts; baseline undefined")

    if contrast < 2.0 * math.sqrt(b0):
        mean = float(y.mean())
        return FringeFit(
            baseline=mean,
            visibility=0.0,
            center_mm=float("nan"),
            fwhm_mm=float("nan"),
            sign=0,
            baseline_err=math.sqrt(max(mean, 1.0) / n),
            visibility_err=float("nan"),
            center_err=float("nan"),
            fwhm_err=float("nan"),
            chi2=float(np.sum((y - mean) ** 2 / np.maximum(y, 1.0))),
            dof=n - 1,
            no_fringe=True,
        )

    wts = 1.0 / np.maximum(y, 1.0)
    p = np.array([b0, s * contrast / b0, x[i_ext], fwhm0 / FWHM_PER_SIGMA])

    def chi2_of(q):
        r = y - gaussian_fringe(x, *q)
        return float(np.sum(wts * r * r))

    chi2 = chi2_of(p)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(x, p)
        r = y - gaussian_fringe(x, *p)
        A = J.T @ (wts[:, None] * J)
        g = J.T @ (wts * r)
        scale = np.array([abs(p[0]), 1.0, abs(p[3]), abs(p[3])])
        while True:
            M = A + lam * np.diag(np.diag(A))
            try:
                step = np.linalg.solve(M, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(M, g, rcond=None)[0]
            trial = p + step
            small = bool(np.all(np.abs(step) <= tol * scale))
            if trial[3] > 0:
                c2 = chi2_of(trial)
                if c2 <= chi2:
                    p, chi2 = trial, c2
                    lam = max(lam / 10.0, 1e-12)
                    break
            if small or lam > 1e12:
                break
            lam *= 10.0
        if small:
            converged = True
            break

    if converged:
        # a few undamped steps polish the optimum well below the stopping tolerance
        for _ in range(6):
            J = _jacobian(x, p)
            r = y - gaussian_fringe(x, *p)
            try:
                step = np.linalg.solve(J.T @ (wts[:, None] * J), J.T @ (wts * r))
            except np.linalg.LinAlgError:
                break
            trial = p + step
            c2 = chi2_of(trial) if trial[3] > 0 else math.inf
            # chi2 cannot resolve parameters this close to the optimum, so it
            # only guards against divergence; the step size decides when to stop
            if not c2 <= chi2 * (1.0 + 1e-9):
                break
            p, chi2 = trial, c2
            if np.all(np.abs(step) <= 1e-15 * np.maximum(np.abs(p), 1.0)):
                break

    J = _jacobian(x, p)
    A = J.T @ (wts[:, None] * J)
    dof = n - 4
    try:
        cov = np.linalg.inv(A) * (chi2 / dof if dof > 0 else 1.0)
        err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        err = np.full(4, np.nan)
    b, a, x0, w = p
    fit = FringeFit(
        baseline=float(b),
        visibility=float(abs(a)),
        center_mm=float(x0),
        fwhm_mm=float(FWHM_PER_SIGMA * w),
        sign=1 if a >= 0 else -1,
        baseline_err=float(err[0]),
        visibility_err=float(err[1]),
        center_err=float(err[2]),
        fwhm_err=float(FWHM_PER_SIGMA * err[3]),
        chi2=chi2,
        dof=dof,
        iterations=it,
        converged=converged,
    )
    if not converged:
        raise FitError(f"fit did not converge in {max_iter} iterations", fit)
    return fit


def estimate_visibility(fit: FringeFit) -> Visibility:
    """Dip visibility ``(B - C_min)/B`` or peak visibility ``(C_max - B)/B``."""
    if fit.no_fringe:
        return Visibility(0.0, 0.0 if math.isnan(fit.visibility_err) else fit.visibility_err)
    c_ext = float(fit.model(fit.center_mm))
    v = (fit.baseline - c_ext) / fit.baseline if fit.sign < 0 else (c_ext - fit.baseline) / fit.baseline
    return Visibility(v, fit.visibility_err)


def raw_visibility(curve: FringeCurve, baseline: Optional[float] = None) -> Visibility:
    """Visibility from the raw extremum against the wing baseline (no model)."""
    y = curve.counts.astype(float)
    if baseline is None:
        baseline, *_ = _initial_guess(curve.dx_mm, y)
    dev = y - baseline
    i = int(np.argmax(np.abs(dev)))
    v = abs(dev[i]) / baseline
    sigma = math.sqrt(max(y[i], 1.0)) / baseline
    return Visibility(float(v), float(sigma))


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for scan point ``index``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def run_scan(
    dx_list: Sequence[float],
    pulses_per_point: int,
    optics: OpticalConfig,
    det: DetectorConfig,
    specs: Sequence[CoincidenceSpec],
    seed: int,
    dwell_block_pulses: int = 20_000,
    threads: Optional[int] = None,
    include_singles: bool = True,
) -> Dict[str, FringeCurve]:
    """Simulate every mirror position and count coincidences for each spec.

    Returns one curve per spec label; with ``include_singles`` there is also a
    ``singles_ch<N>`` curve per detector channel.
    """
    dx = [float(v) for v in dx_list]
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError("coincidence spec labels must be unique")
    delays = tuple(s.delay_ps for s in specs)
    duration = pulses_per_point * optics.pulse_period_ps

    def point(i):
        plan = SimPlan(
            n_pulses=pulses_per_point,
            dwell_block_pulses=dwell_block_pulses,
            seed=derive_seed(seed, i),
            dx_mm=dx[i],
            coincidence_delays_ps=delays,
        )
        streams = simulate(plan, optics, det)
        out = {}
        for spec in specs:
            a = streams[spec.channel_a]
            b = a if spec.self_mode else streams[spec.channel_b]
            out[spec.label] = delayed_coincidences(a, b, spec)
        if include_singles:
            for ch, st in streams.items():
                out[f"singles_ch{ch}"] = len(st)
        return out

    threads = max(1, int(threads or 1))
    if threads == 1:
        rows = [point(i) for i in range(len(dx))]
    else:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(point, range(len(dx))))

    keys = labels + ([f"singles_ch{ch}" for ch in channels_for(optics)] if include_singles else [])
    durations = np.full(len(dx), duration, dtype=np.int64)
    return {
        k: FringeCurve(k, np.array(dx), np.array([r[k] for r in rows]), durations) for k in keys
    }


def write_curves_csv(curves: Iterable[FringeCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "dx_mm", "count", "duration_ps"])
        for c in curves:
            for x, n, d in zip(c.dx_mm.tolist(), c.counts.tolist(), c.duration_ps.tolist()):
                w.writerow([c.label, repr(x), repr(n), d])


def _number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_curves_csv(path) -> Dict[str, FringeCurve]:
    rows: Dict[str, List[tuple]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["label"], []).append(
                (float(row["dx_mm"]), _number(row["count"]), int(row["duration_ps"]))
            )
    out = {}
    for label, pts in rows.items():
        pts.sort()
        x, n, d = zip(*pts)
        out[label] = FringeCurve(label, np.array(x), np.array(n), np.array(d))
    return out
