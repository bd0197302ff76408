"""Delayed-coincidence counting and pair-time histograms over tag streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from homlab.tags import TagStream

Times = Union[TagStream, np.ndarray, list]

_MAX_T = 1 << 62
_CHUNK = 1 << 20


class UnsortedStreamError(ValueError):
    pass


@dataclass(frozen=True)
class CoincidenceSpec:
    """One coincidence channel of the electronics: partner ``b`` delayed by ``delay_ps``.

    ``window_ps`` is the full acceptance width centred on the delay.
    """

    channel_a: int
    channel_b: int
    delay_ps: int
    window_ps: int = 4000
    self_mode: bool = False
    label: Optional[str] = None

    def __post_init__(self):
        if self.window_ps <= 0:
            raise ValueError("window_ps must be > 0")
        if self.self_mode and (self.channel_a != self.channel_b or self.delay_ps <= 0):
            raise ValueError("self_mode needs channel_a == channel_b and delay_ps > 0")
        if self.label is None:
            kind = "self" if self.self_mode else "cross"
            object.__setattr__(
                self,
                "label",
                f"{kind}_{self.channel_a}_{self.channel_b}_{self.delay_ps}ps",
            )


def _times(x: Times) -> np.ndarray:
    t = x.t_ps if isinstance(x, TagStream) else np.asarray(x)
    if t.size and int(t.max()) >= _MAX_T:
        raise ValueError("timestamps beyond 2**62 ps are not supported by the correlator")
    t = t.astype(np.int64, copy=False)
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise UnsortedStreamError("tag stream is not sorted by time")
    return t


def delayed_coincidences(a: Times, b: Times, spec: CoincidenceSpec) -> int:
    """Count ordered pairs with ``|(t_b - t_a) - delay| <= window/2``.

    In self mode ``a`` and ``b`` are the same stream and only strictly later
    partners count.  Every qualifying pair counts once; there is no
    start-stop exclusivity.  Both inputs must be time sorted.
    """
    ta = _times(a)
    tb = ta if spec.self_mode and b is a else _times(b)
    if ta.size == 0 or tb.size == 0:
        return 0
    half = spec.window_ps // 2  # integer differences: |d| <= w/2  <=>  |d| <= floor(w/2)
    total = 0
    for s in range(0, ta.size, _CHUNK):
        t = ta[s : s + _CHUNK]
        lo = t + (spec.delay_ps - half)
        hi = t + (spec.delay_ps + half)
        if spec.self_mode:
            lo = np.maximum(lo, t + 1)
        # keys are sorted, so numpy's binary search walks forward like a merge cursor
        right = np.searchsorted(tb, hi, side="right")
        left = np.searchsorted(tb, lo, side="left")
        total += int(np.clip(right - left, 0, None).sum())
    return total


@dataclass(frozen=True)
class Histogram:
    bin_ps: int
    start_ps: int
    counts: np.ndarray

    @property
    def bin_starts(self) -> np.ndarray:
        return self.start_ps + self.bin_ps * np.arange(len(self.counts), dtype=np.int64)

    def at(self, t_ps: int) -> int:
        """Count in the bin containing ``t_ps``."""
        return int(self.counts[(t_ps - self.start_ps) // self.bin_ps])


def correlation_histogram(
    a: Times,
    b: Times,
    bin_ps: int,
    range_ps: int,
    self_mode: bool = False,
    start_ps: int = 0,
) -> Histogram:
    """Histogram of pair differences ``t_b - t_a`` in ``[start, start + range)``.

    ``start_ps`` shifts the bin grid, e.g. to centre bins on slot delays.
    """
    if bin_ps <= 0 or range_ps <= 0:
        raise ValueError("bin_ps and range_ps must be > 0")
    n_bins = -(-range_ps // bin_ps)
    stop = start_ps + range_ps
    ta = _times(a)
    tb = ta if self_mode and b is a else _times(b)
    counts = np.zeros(n_bins, dtype=np.int64)
    if ta.size == 0 or tb.size == 0:
        return Histogram(bin_ps, start_ps, counts)
    for s in range(0, ta.size, _CHUNK):
        t = ta[s : s + _CHUNK]
        lo = np.searchsorted(tb, t + start_ps, side="left")
        if self_mode:
            lo = np.maximum(lo, np.searchsorted(tb, t, side="right"))
        hi = np.searchsorted(tb, t + stop, side="left")
        n = np.clip(hi - lo, 0, None)
        total = int(n.sum())
        if total == 0:
            continue
        a_idx = np.repeat(np.arange(t.size), n)
        first = np.repeat(np.cumsum(n) - n, n)
        b_idx = np.repeat(lo, n) + (np.arange(total) - first)
        d = tb[b_idx] - t[a_idx]
        counts += np.bincount((d - start_ps) // bin_ps, minlength=n_bins)[:n_bins]
    return Histogram(bin_ps, start_ps, counts)


def singles_rate(stream: Times, duration_ps: float) -> float:
    """Mean count rate in Hz."""
    if duration_ps <= 0:
        raise ValueError("duration_ps must be > 0")
    n = len(stream.t_ps) if isinstance(stream, TagStream) else len(stream)
    return n / (duration_ps * 1e-12)


def count_spec(stream: TagStream, spec: CoincidenceSpec) -> int:
    """Apply ``spec`` to a multi-channel stream, selecting its channels."""
    a = stream.select(spec.channel_a)
    if spec.self_mode:
        return delayed_coincidences(a, a, spec)
    return delayed_coincidences(a, stream.select(spec.channel_b), spec)
