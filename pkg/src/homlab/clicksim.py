"""Monte Carlo generation of detector time-tag streams.

Every pulse slot is an independent Bernoulli trial with click probability
``1 - exp(-eta * W)``: the detector cannot resolve photon number, so a slot
gives at most one tag.  The arm phase is held for a dwell block of pulses
(slow PZT scrambling) and the random streams are keyed by
``(seed, block, stream id, counter)`` (see :mod:`homlab.rng`), so any
block can be generated in isolation and the result does not depend on
scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import poisson

from homlab import rng
from homlab.correlator import CoincidenceSpec
from homlab.optics import (
    D,
    D1,
    D2,
    OpticalConfig,
    Topology,
    interference_terms,
    mode_overlap,
)
from homlab.tags import FLAG_DARK, TagStream

U64_MAX = (1 << 64) - 1

# stream ids; the low 16 bits carry (channel << 8) | slot
STREAM_PHASE = 1 << 16
STREAM_CLICK = 2 << 16
STREAM_JITTER = 3 << 16
STREAM_DARK = 4 << 16

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_MAX_GROUP_SLOTS = 1 << 26


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.5
    dead_time_ps: int = 45_000
    dark_rate_hz: float = 300.0
    jitter_sigma_ps: float = 400.0

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")
        if self.dead_time_ps < 0 or int(self.dead_time_ps) != self.dead_time_ps:
            raise ValueError("dead_time_ps must be a non-negative integer")
        object.__setattr__(self, "dead_time_ps", int(self.dead_time_ps))
        if self.dark_rate_hz < 0:
            raise ValueError("dark_rate_hz must be >= 0")
        if self.jitter_sigma_ps < 0:
            raise ValueError("jitter_sigma_ps must be >= 0")


@dataclass(frozen=True)
class SimPlan:
    """One acquisition run at a fixed mirror position.

    ``coincidence_delays_ps`` lists the electrical delays the run will be
    analysed with; each must fit inside one dwell block.
    """

    n_pulses: int
    dwell_block_pulses: int = 20_000
    seed: int = 0
    dx_mm: float = 0.0
    coincidence_delays_ps: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if self.dwell_block_pulses < 1:
            raise ValueError("dwell_block_pulses must be >= 1")
        if not 0 <= self.seed <= U64_MAX:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "coincidence_delays_ps", tuple(self.coincidence_delays_ps))

    @property
    def n_blocks(self) -> int:
        return -(-self.n_pulses // self.dwell_block_pulses)


def phase_offset(seed: int) -> float:
    return float(rng.uniform(rng.stream_keys(seed, [0], STREAM_PHASE), [0])[0])


def block_phases(seed: int, blocks, offset: Optional[float] = None) -> np.ndarray:
    """Arm phase held during each dwell block.

    Golden-ratio sequence with a seeded random start: every block's phase is
    uniform on [0, 2 pi), and a run's phases cover the circle evenly, so the
    single-photon fringe averages out at the level of ~1/n_blocks rather
    than 1/sqrt(n_blocks).
    """
    if offset is None:
        offset = phase_offset(seed)
    b = np.asarray(blocks, dtype=np.float64)
    return 2.0 * np.pi * np.mod(offset + b * _GOLDEN, 1.0)


def _segments(m: np.ndarray):
    """Owner index and within-segment counter for segments of lengths ``m``."""
    owner = np.repeat(np.arange(m.size), m)
    first = np.cumsum(m) - m
    return owner, np.arange(int(m.sum()), dtype=np.int64) - first[owner]


def bernoulli_positions(keys: np.ndarray, n: np.ndarray, p: np.ndarray):
    """Successes of ``n[i]`` Bernoulli(``p[i]``) trials for every segment ``i``.

    Geometric gaps are drawn by inversion from the counter-based stream of
    each segment key.  Returns ``(segment, position)`` sorted by both.
    """
    n = np.asarray(n, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    log_q = np.log1p(-np.minimum(p, 1.0))
    last = np.full(n.size, -1, dtype=np.int64)
    used = np.zeros(n.size, dtype=np.int64)
    todo = np.flatnonzero((p > 0) & (n > 0))
    seg_out, pos_out = [], []
    while todo.size:
        npk = n[todo] * p[todo]
        m = np.ceil(npk + 6.0 * np.sqrt(npk) + 16.0).astype(np.int64)
        owner, within = _segments(m)
        seg = todo[owner]
        u = rng.uniform(keys[seg], used[seg] + within)
        with np.errstate(divide="ignore", invalid="ignore"):
            gaps = np.floor(np.log1p(-u) / log_q[seg]) + 1.0
        gaps = np.nan_to_num(gaps, nan=1.0).astype(np.int64)
        cs = np.cumsum(gaps)
        ends = np.cumsum(m) - 1
        before = np.concatenate(([0], cs[ends[:-1]]))
        pos = last[seg] + cs - before[owner]
        keep = pos < n[seg]
        seg_out.append(seg[keep])
        pos_out.append(pos[keep])
        last[todo] = pos[ends]
        used[todo] += m
        todo = todo[last[todo] < n[todo] - 1]
    if not seg_out:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    seg = np.concatenate(seg_out)
    pos = np.concatenate(pos_out)
    if len(seg_out) > 1:
        order = np.lexsort((pos, seg))
        seg, pos = seg[order], pos[order]
    return seg, pos


def apply_dead_time(t: np.ndarray, dead_ps: int) -> np.ndarray:
    """Keep-mask for sorted times: drop tags closer than ``dead_ps`` to the last kept tag."""
    keep = np.ones(t.size, dtype=bool)
    if t.size < 2 or dead_ps <= 0:
        return keep
    # a tag whose raw gap to its predecessor is >= dead_ps is always kept
    short = np.flatnonzero(np.diff(t) < dead_ps) + 1
    for i in short.tolist():
        j = i - 1
        while not keep[j]:
            j -= 1
        if t[i] - t[j] < dead_ps:
            keep[i] = False
    return keep


def channels_for(optics: OpticalConfig) -> Tuple[int, ...]:
    return (D1, D2) if optics.topology is Topology.SETUP_B else (D,)


def _check(plan: SimPlan, optics: OpticalConfig) -> None:
    if plan.n_pulses * optics.pulse_period_ps > U64_MAX:
        raise OverflowError("run duration overflows the 64-bit picosecond clock")
    block_ps = plan.dwell_block_pulses * optics.pulse_period_ps
    for delay in plan.coincidence_delays_ps:
        if not block_ps > abs(delay):
            raise ValueError(
                f"dwell block of {block_ps} ps does not exceed coincidence delay {delay} ps"
            )


def _simulate_blocks(blocks, plan, optics, det, terms, offset):
    """Tags for a contiguous range of dwell blocks, per channel, in block order."""
    period = optics.pulse_period_ps
    dwell = plan.dwell_block_pulses
    quarter = optics.mean_photons_per_pulse / 4.0
    blocks = np.asarray(blocks, dtype=np.int64)
    start = blocks * dwell
    n = np.minimum(dwell, plan.n_pulses - start)
    cos_phi = np.cos(block_phases(plan.seed, blocks, offset))
    per_channel: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = {}
    for idx, (ch, off, k) in enumerate(terms):
        p = -np.expm1(-det.efficiency * quarter * (1.0 + k * cos_phi))
        sid = (ch << 8) | idx
        keys = rng.stream_keys(plan.seed, blocks, STREAM_CLICK | sid)
        seg, pos = bernoulli_positions(keys, n, p)
        t = (start[seg] + pos) * period + off
        if det.jitter_sigma_ps > 0 and t.size:
            jkeys = rng.stream_keys(plan.seed, blocks, STREAM_JITTER | sid)
            z = rng.normal(jkeys[seg], pos)
            t = t + np.rint(det.jitter_sigma_ps * z).astype(np.int64)
        per_channel.setdefault(ch, []).append((t, np.zeros(t.size, np.uint16)))
    if det.dark_rate_hz > 0:
        span = n * period
        lam = det.dark_rate_hz * span * 1e-12
        for ch in sorted({term[0] for term in terms}):
            keys = rng.stream_keys(plan.seed, blocks, STREAM_DARK | (ch << 8))
            u = rng.uniform(keys, np.zeros(blocks.size, np.uint64))
            count = poisson.ppf(u, lam).astype(np.int64)
            owner, within = _segments(count)
            # counter 0 drew the count; arrival times use 1, 2, ...
            frac = rng.uniform(keys[owner], within + 1)
            t = start[owner] * period + np.floor(frac * span[owner]).astype(np.int64)
            per_channel.setdefault(ch, []).append((t, np.full(t.size, FLAG_DARK, np.uint16)))
    return per_channel


def simulate(
    plan: SimPlan,
    optics: OpticalConfig,
    det: DetectorConfig = DetectorConfig(),
    threads: Optional[int] = None,
) -> Dict[int, TagStream]:
    """Simulate one run; returns one sorted, dead-time filtered stream per channel.

    Tags falling outside ``[0, n_pulses * period)`` after jitter are dropped.
    """
    _check(plan, optics)
    gamma = mode_overlap(plan.dx_mm, optics.coherence())
    terms = interference_terms(gamma, optics)
    offset = phase_offset(plan.seed)
    threads = max(1, int(threads or 1))
    # bounded group size keeps the per-call arrays small
    step = max(1, min(-(-plan.n_blocks // threads), _MAX_GROUP_SLOTS // plan.dwell_block_pulses))
    groups = [
        np.arange(i, min(i + step, plan.n_blocks)) for i in range(0, plan.n_blocks, step)
    ]

    def run(g):
        return _simulate_blocks(g, plan, optics, det, terms, offset)

    if threads == 1 or len(groups) == 1:
        parts = [run(g) for g in groups]
    else:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, groups))

    duration = plan.n_pulses * optics.pulse_period_ps
    out = {}
    for ch in channels_for(optics):
        pieces = [piece for part in parts for piece in part.get(ch, [])]
        if pieces:
            t = np.concatenate([p[0] for p in pieces])
            fl = np.concatenate([p[1] for p in pieces])
        else:
            t = np.empty(0, np.int64)
            fl = np.empty(0, np.uint16)
        inside = (t >= 0) & (t < duration)
        t, fl = t[inside], fl[inside]
        order = np.argsort(t, kind="stable")
        t, fl = t[order], fl[order]
        keep = apply_dead_time(t, det.dead_time_ps)
        t, fl = t[keep], fl[keep]
        out[ch] = TagStream(t.astype(np.uint64), np.full(t.size, ch, np.uint16), fl)
    return out


def default_specs(optics: OpticalConfig, window_ps: int = 4000) -> List[CoincidenceSpec]:
    """The electrical delays used in the laboratory for each topology."""
    period = optics.pulse_period_ps
    if optics.topology is Topology.SETUP_B:
        return [
            CoincidenceSpec(D1, D2, period, window_ps, label="cross_D1D2"),
            CoincidenceSpec(D1, D1, period, window_ps, self_mode=True, label="self_D1"),
        ]
    return [
        CoincidenceSpec(D, D, 2 * period, window_ps, self_mode=True, label="peak"),
        CoincidenceSpec(D, D, 5 * period // 2, window_ps, self_mode=True, label="dip"),
    ]


@dataclass(frozen=True)
class ExpectedRates:
    singles_hz: Dict[int, float]
    coincidences_hz: Dict[str, float]


def expected_rates(
    plan: SimPlan,
    optics: OpticalConfig,
    det: DetectorConfig = DetectorConfig(),
    specs: Optional[Sequence[CoincidenceSpec]] = None,
    n_phase: int = 512,
) -> ExpectedRates:
    """Analytic singles and coincidence rates for ``plan``.

    Click probabilities are phase-averaged by quadrature of the simulator's
    own ``1 - exp(-eta W)`` law.  Dead time is handled slot by slot: a slot
    is live only if no same-channel slot in the preceding ``dead_time_ps``
    clicked.  Dark counts are corrected by ``1/(1 + R * dead_time)``.
    """
    if specs is None:
        specs = default_specs(optics)
    period = optics.pulse_period_ps
    rep = optics.rep_rate_hz
    dead = det.dead_time_ps
    gamma = mode_overlap(plan.dx_mm, optics.coherence())
    terms = interference_terms(gamma, optics)
    phi = 2.0 * np.pi * np.arange(n_phase) / n_phase
    quarter = optics.mean_photons_per_pulse / 4.0
    p_phi = [-np.expm1(-det.efficiency * quarter * (1.0 + k * np.cos(phi))) for _, _, k in terms]
    p_bar = [float(p.mean()) for p in p_phi]

    live = []
    for i, (ch, off, _) in enumerate(terms):
        lv = math.exp(-det.dark_rate_hz * dead * 1e-12)
        for j, (ch2, off2, _) in enumerate(terms):
            if ch2 != ch:
                continue
            n = 0
            while True:
                lag = (off - off2) % period + n * period  # slot j precedes slot i by lag
                if lag == 0:
                    n += 1
                    continue
                if lag >= dead:
                    break
                lv *= 1.0 - p_bar[j]
                n += 1
        live.append(lv)

    signal = {ch: 0.0 for ch in channels_for(optics)}
    for i, (ch, _, _) in enumerate(terms):
        signal[ch] += rep * p_bar[i] * live[i]
    dark = {}
    for ch in signal:
        raw = rep * sum(p for p, term in zip(p_bar, terms) if term[0] == ch)
        dark[ch] = det.dark_rate_hz / (1.0 + raw * dead * 1e-12)
    singles = {ch: signal[ch] + dark[ch] for ch in signal}

    coinc = {}
    for spec in specs:
        half = spec.window_ps // 2
        if det.jitter_sigma_ps > 0:
            accept = math.erf(half / (2.0 * det.jitter_sigma_ps))
        else:
            accept = 1.0
        rate = 0.0
        for i, (cha, offa, _) in enumerate(terms):
            if cha != spec.channel_a:
                continue
            for j, (chb, offb, _) in enumerate(terms):
                if chb != spec.channel_b:
                    continue
                base = offb - offa
                n_lo = math.ceil((spec.delay_ps - half - base) / period)
                n_hi = math.floor((spec.delay_ps + half - base) / period)
                for n in range(n_lo, n_hi + 1):
                    lag = base + n * period
                    if spec.self_mode and lag <= 0:
                        continue
                    if cha == chb and 0 < abs(lag) < dead:
                        continue
                    rate += rep * float(np.mean(p_phi[i] * p_phi[j])) * live[i] * live[j] * accept
        window_s = (2 * half + 1) * 1e-12
        da, db = dark[spec.channel_a], dark[spec.channel_b]
        rate += (da * signal[spec.channel_b] + signal[spec.channel_a] * db + da * db) * window_s
        coinc[spec.label] = rate
    return ExpectedRates(singles, coinc)
