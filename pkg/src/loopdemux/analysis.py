"""Estimators applied to detector time tags.

Correlation histograms and windowed peak areas feed the pulsed g2(0) and
HOM-visibility estimators; multi-channel coincidence counts feed the
geometric fit of the per-pulse detection probability.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .detection import BeamsplitterModel, TimeTagStream

_MAX_PAIRS_PER_CHUNK = 4_000_000


class EstimateUndefined(ValueError):
    """The estimator's normalisation vanished (no side-peak counts)."""


@dataclass
class CorrelationHistogram:
    """Coincidence counts versus delay ``t_b - t_a``.

    Bin ``k`` is centred on ``(k - n_bins // 2) * bin_width``; the central bin
    sits at zero delay. ``period`` is the expected peak spacing.
    """

    bin_width: float
    counts: np.ndarray
    period: Optional[float] = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.size % 2 != 1:
            raise ValueError("a correlation histogram needs an odd number of bins")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def half(self) -> int:
        return self.counts.size // 2

    @property
    def delays(self) -> np.ndarray:
        return (np.arange(self.counts.size) - self.half) * self.bin_width

    @property
    def max_delay(self) -> float:
        return self.half * self.bin_width

    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if not isinstance(other, CorrelationHistogram):
            return NotImplemented
        if other.bin_width != self.bin_width or other.counts.size != self.counts.size:
            raise ValueError("histograms with different binning cannot be merged")
        if self.period is not None and other.period is not None and self.period != other.period:
            raise ValueError("histograms with different peak periods cannot be merged")
        period = self.period if self.period is not None else other.period
        return CorrelationHistogram(self.bin_width, self.counts + other.counts, period)

    def __eq__(self, other):
        if not isinstance(other, CorrelationHistogram):
            return NotImplemented
        return (self.bin_width == other.bin_width and self.period == other.period
                and np.array_equal(self.counts, other.counts))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("delay_ns,counts\n")
            for d, c in zip(self.delays, self.counts):
                fh.write(f"{d:.4f},{int(c)}\n")

    @classmethod
    def from_csv(cls, path, period=None) -> "CorrelationHistogram":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        delays, counts = data[:, 0], data[:, 1].astype(np.int64)
        width = float(delays[1] - delays[0]) if delays.size > 1 else 1.0
        return cls(round(width, 9), counts, period)


def _bin_index(delay, bin_width: float, half: int):
    return np.floor(delay / bin_width + 0.5).astype(np.int64) + half


def correlate(a: TimeTagStream, b: Optional[TimeTagStream], bin_width: float,
              max_delay: float, period: Optional[float] = None) -> CorrelationHistogram:
    """Start-stop coincidence histogram between two sorted tag streams.

    Every pair ``(t_a, t_b)`` with delay ``t_b - t_a`` inside the range is
    counted. Passing ``b=None`` auto-correlates ``a``, leaving out each tag's
    pairing with itself.
    """
    if bin_width <= 0 or max_delay < 0:
        raise ValueError("bin_width must be positive and max_delay non-negative")
    half = int(math.ceil(max_delay / bin_width - 1e-9))
    n_bins = 2 * half + 1
    auto = b is None
    ta = np.asarray(a.tags, dtype=float)
    tb = ta if auto else np.asarray(b.tags, dtype=float)
    counts = np.zeros(n_bins, dtype=np.int64)
    if ta.size == 0 or tb.size == 0:
        return CorrelationHistogram(bin_width, counts, period)

    reach = (half + 1) * bin_width
    lo = np.searchsorted(tb, ta - reach, side="left")
    hi = np.searchsorted(tb, ta + reach, side="right")
    n_per = hi - lo
    cum = np.cumsum(n_per)
    start = 0
    while start < ta.size:
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _MAX_PAIRS_PER_CHUNK, side="right"))
        stop = max(stop, start + 1)
        sl = slice(start, stop)
        n = n_per[sl]
        total = int(n.sum())
        if total:
            ia = np.repeat(np.arange(start, stop), n)
            offset = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
            jb = np.repeat(lo[sl], n) + offset
            if auto:
                keep = ia != jb
                ia, jb = ia[keep], jb[keep]
            idx = _bin_index(tb[jb] - ta[ia], bin_width, half)
            idx = idx[(idx >= 0) & (idx < n_bins)]
            counts += np.bincount(idx, minlength=n_bins)
        start = stop
    return CorrelationHistogram(bin_width, counts, period)


@dataclass(frozen=True)
class PeakAreas:
    central: int
    side: tuple
    side_mean: float = field(init=False)

    def __post_init__(self):
        side = tuple(int(s) for s in self.side)
        if self.central < 0 or any(s < 0 for s in side):
            raise ValueError("peak areas must be non-negative")
        object.__setattr__(self, "side", side)
        object.__setattr__(self, "side_mean", float(np.mean(side)) if side else 0.0)

    @property
    def ratio(self) -> float:
        if self.side_mean <= 0:
            raise EstimateUndefined("side peaks hold no counts")
        return self.central / self.side_mean


def peak_areas(hist: CorrelationHistogram, integration_halfwidth: Optional[float] = None,
               n_side_peaks: int = 10, exclude: Sequence[int] = (),
               period: Optional[float] = None) -> PeakAreas:
    """Windowed areas of the zero-delay peak and of the side peaks.

    Side peaks sit at ``k * period`` for ``k = +/-1 .. +/-n_side_peaks``;
    ``exclude`` removes orders ``k`` (signed) from the average. Windows that
    run past the histogram edge are skipped. The half-width defaults to a
    quarter of the period.
    """
    period = period if period is not None else hist.period
    if period is None or period <= 0:
        raise ValueError("peak_areas needs a positive peak period")
    hw = period / 4.0 if integration_halfwidth is None else integration_halfwidth
    if period <= 2 * hw:
        raise ValueError(
            f"integration windows of half-width {hw:g} ns overlap at period {period:g} ns"
        )
    if n_side_peaks < 1:
        raise ValueError("n_side_peaks must be >= 1")
    delays = hist.delays
    edge = hist.max_delay + hist.bin_width / 2.0
    tol = 1e-9 * max(1.0, period)

    def area(centre):
        m = (delays >= centre - hw - tol) & (delays <= centre + hw + tol)
        return int(hist.counts[m].sum())

    skip = set(exclude)
    side = []
    n_left = n_right = 0
    for k in range(1, n_side_peaks + 1):
        for sign in (-1, 1):
            centre = sign * k * period
            if abs(centre) + hw > edge + tol or sign * k in skip:
                continue
            side.append(area(centre))
            if sign < 0:
                n_left += 1
            else:
                n_right += 1
    if n_left == 0 or n_right == 0:
        raise ValueError("histogram range holds no complete side peak on one side")
    return PeakAreas(area(0.0), tuple(side))


def g2_zero(areas: PeakAreas) -> float:
    """Pulsed auto-correlation at zero delay, A0 / <A_i>."""
    return areas.ratio


def hom_uncorrected(areas: PeakAreas) -> float:
    """Raw two-photon interference visibility, 1 - 2 A0 / <A_i>."""
    return 1.0 - 2.0 * areas.ratio


def hom_corrected(a0_ratio: float, g2: float, bs: BeamsplitterModel) -> float:
    """Visibility corrected for splitter imbalance, classical visibility and g2(0).

    ``(1.5 g2 + k - k * a0_ratio) / (1 - e^2)`` with ``k = (R^2 + T^2) / (2RT)``
    and ``e`` the classical interference visibility.
    """
    if a0_ratio < 0:
        raise ValueError("a0_ratio must be non-negative")
    e = bs.classical_visibility
    if e >= 1.0:
        raise ValueError("classical visibility must be below 1")
    r, t = bs.reflectance, bs.transmittance
    k = (r * r + t * t) / (2.0 * r * t)
    return (1.5 * g2 + k - k * a0_ratio) / (1.0 - e * e)


@dataclass(frozen=True)
class ExponentialFit:
    p: float
    amplitude: float
    residual_norm: float
    n_used: tuple


def fit_exponential(n_values, rates) -> ExponentialFit:
    """Fit ``rate = amplitude * p**n`` by unweighted least squares on log(rate).

    Zero rates carry no logarithm and are dropped with a warning.
    """
    n = np.asarray(n_values, dtype=float)
    y = np.asarray(rates, dtype=float)
    if n.shape != y.shape:
        raise ValueError("n_values and rates must have the same length")
    if np.any(y < 0):
        raise ValueError("rates must be non-negative")
    zero = y == 0
    if zero.any():
        warnings.warn(f"dropping zero rates at n = {n[zero].astype(int).tolist()}",
                      stacklevel=2)
        n, y = n[~zero], y[~zero]
    if np.unique(n).size < 2:
        raise ValueError("need at least two distinct n with non-zero rate")
    design = np.column_stack([np.ones_like(n), n])
    coef, *_ = np.linalg.lstsq(design, np.log(y), rcond=None)
    resid = np.log(y) - design @ coef
    return ExponentialFit(p=float(np.exp(coef[1])), amplitude=float(np.exp(coef[0])),
                          residual_norm=float(np.linalg.norm(resid)),
                          n_used=tuple(int(v) for v in n))


@dataclass(frozen=True)
class EfficiencyReport:
    p: float
    B: float
    e_raw: float
    detector_efficiency: float
    duty: Fraction
    e_corrected: float

    def as_dict(self) -> dict:
        return {"p": self.p, "B": self.B, "e_raw": self.e_raw,
                "detector_efficiency": self.detector_efficiency,
                "duty": str(self.duty), "e_corrected": self.e_corrected}


def channel_efficiency(p: float, B: float, detector_efficiency: float,
                       duty: Union[Fraction, float]) -> EfficiencyReport:
    if B <= 0:
        raise ValueError("brightness B must be positive")
    for name, v in (("p", p), ("B", B), ("detector_efficiency", detector_efficiency)):
        if not 0.0 < v <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {v}")
    duty = Fraction(duty).limit_denominator(1000) if not isinstance(duty, Fraction) else duty
    if not 0 < duty <= 1:
        raise ValueError("duty must lie in (0, 1]")
    e_raw = p / B
    return EfficiencyReport(p, B, e_raw, detector_efficiency, duty,
                            e_raw / (detector_efficiency * float(duty)))


def burst_patterns(streams: Sequence[TimeTagStream], pulse_period: float,
                   switch_period_cycles: int, phase_cycles: int,
                   delays: Optional[Sequence[float]] = None) -> Counter:
    """Count firing bursts by the set of channels that clicked in them.

    Keys are sorted tuples of 1-based stream positions. Clicks at clock cycles
    where the cell did not fire (parasitic leakage) are ignored; bursts with
    no click are not counted.
    """
    delays = [0.0] * len(streams) if delays is None else list(delays)
    masks = []
    for ch, (s, d) in enumerate(zip(streams, delays)):
        cycles = np.rint((s.tags - d) / pulse_period).astype(np.int64)
        cycles = np.unique(cycles[(cycles - phase_cycles) % switch_period_cycles == 0])
        masks.append((cycles, 1 << ch))
    if not masks:
        return Counter()
    all_cycles = np.unique(np.concatenate([c for c, _ in masks]))
    bits = np.zeros(all_cycles.size, dtype=np.int64)
    for cycles, bit in masks:
        bits[np.searchsorted(all_cycles, cycles)] |= bit
    values, counts = np.unique(bits, return_counts=True)
    out = Counter()
    for v, c in zip(values.tolist(), counts.tolist()):
        key = tuple(ch + 1 for ch in range(len(streams)) if v >> ch & 1)
        out[key] = c
    return out


@dataclass(frozen=True)
class MultiphotonRates:
    n: np.ndarray
    rate: np.ndarray  # mean probability per burst that a given n-channel set all clicked
    counts: np.ndarray  # events behind each rate, summed over the n-channel sets


def multiphoton_rates(patterns: Counter, n_channels: int, n_bursts: int) -> MultiphotonRates:
    """n-fold coincidence probability per burst, averaged over channel sets.

    A burst counts towards the set ``S`` when every channel of ``S`` clicked,
    whatever the other channels did.
    """
    if n_bursts <= 0:
        raise ValueError("n_bursts must be positive")
    ns, rates, counts = [], [], []
    for k in range(1, n_channels + 1):
        subsets = list(itertools.combinations(range(1, n_channels + 1), k))
        hits = 0
        for s in subsets:
            ss = set(s)
            hits += sum(c for pattern, c in patterns.items() if ss.issubset(pattern))
        ns.append(k)
        rates.append(hits / (len(subsets) * n_bursts))
        counts.append(hits)
    return MultiphotonRates(np.array(ns), np.array(rates), np.array(counts))


def fit_multiphoton(rates: MultiphotonRates, min_counts: int = 100) -> ExponentialFit:
    """Geometric fit over the n-fold levels that collected at least ``min_counts`` events.

    Sparse levels are dropped because the logarithm of a few Poisson counts
    is strongly biased under an unweighted fit.
    """
    use = rates.counts >= min_counts
    dropped = rates.n[~use & (rates.counts > 0)]
    if dropped.size:
        warnings.warn(f"too few events for n = {dropped.tolist()}; excluded from fit",
                      stacklevel=2)
    if use.sum() < 2:
        use = rates.counts > 0
    return fit_exponential(rates.n[use], rates.rate[use])


def parasitic_ratio(hist: CorrelationHistogram, pulse_period: float, firing_period: float,
                    integration_halfwidth: Optional[float] = None) -> float:
    """Mean area of peaks off the firing grid relative to the main side peaks.

    Zero for a loop that releases photons only when the cell fires.
    """
    hw = pulse_period / 4.0 if integration_halfwidth is None else integration_halfwidth
    delays = hist.delays
    ratio = firing_period / pulse_period
    n_max = int(hist.max_delay // pulse_period)
    main, para = [], []
    for k in range(1, n_max + 1):
        for sign in (-1, 1):
            centre = sign * k * pulse_period
            m = np.abs(delays - centre) <= hw
            a = int(hist.counts[m].sum())
            on_grid = abs(k / ratio - round(k / ratio)) < 1e-6
            (main if on_grid else para).append(a)
    if not main or np.mean(main) == 0:
        raise EstimateUndefined("no counts in the main side peaks")
    return float(np.mean(para) / np.mean(main)) if para else 0.0
