"""Detector clicks and two-photon interference at a fiber beamsplitter."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .loop_demux import OutputBatch

# Tags are quantised to the time-tagger resolution (1 ps).
TAG_RESOLUTION = 1e-3  # ns


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.85
    dead_time: float = 0.0  # ns
    jitter_sigma: float = 0.0  # ns
    dark_count_rate: float = 0.0  # Hz

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dead_time < 0 or self.jitter_sigma < 0 or self.dark_count_rate < 0:
            raise ValueError("dead_time, jitter_sigma and dark_count_rate must be >= 0")


@dataclass(frozen=True)
class BeamsplitterModel:
    reflectance: float = 0.51
    transmittance: float = 0.49
    classical_visibility: float = 0.05

    def __post_init__(self):
        if abs(self.reflectance + self.transmittance - 1.0) > 1e-9:
            raise ValueError("reflectance + transmittance must equal 1")
        if not 0.0 <= self.reflectance <= 1.0:
            raise ValueError("reflectance must lie in [0, 1]")
        if not 0.0 <= self.classical_visibility <= 1.0:
            raise ValueError("classical_visibility must lie in [0, 1]")

    def different_port_probability(self, overlap) -> np.ndarray:
        """Chance that two co-arriving photons leave through different ports."""
        r, t = self.reflectance, self.transmittance
        v_eff = np.asarray(overlap, dtype=float) * (1.0 - self.classical_visibility ** 2)
        return r * r + t * t - 2.0 * r * t * v_eff


class TimeTagStream:
    """Click times (ns) of one detector, strictly increasing."""

    def __init__(self, channel_id, tags=()):
        self.channel_id = channel_id
        self.tags = np.asarray(tags, dtype=float).reshape(-1)
        if self.tags.size > 1 and not np.all(np.diff(self.tags) > 0):
            raise ValueError("time tags must be strictly increasing")

    def __len__(self):
        return self.tags.size

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return self.channel_id == other.channel_id and np.array_equal(self.tags, other.tags)

    def __repr__(self):
        return f"TimeTagStream({self.channel_id!r}, n={len(self)})"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time_ns\n")
            if self.tags.size:
                np.savetxt(fh, self.tags, fmt="%.3f")

    @classmethod
    def from_csv(cls, path, channel_id=None) -> "TimeTagStream":
        path = Path(path)
        if channel_id is None:
            channel_id = path.stem
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "time_ns":
                raise ValueError(f"{path}: expected header 'time_ns', got {header!r}")
            body = fh.read()
        tags = np.loadtxt(body.splitlines(), ndmin=1) if body.strip() else np.zeros(0)
        return cls(channel_id, tags)


def quantise(times) -> np.ndarray:
    return np.rint(np.asarray(times, dtype=float) / TAG_RESOLUTION) * TAG_RESOLUTION


def apply_dead_time(times: np.ndarray, dead_time: float) -> np.ndarray:
    """Greedy suppression of clicks inside the dead time of the last kept click.

    ``times`` must be sorted. Coincident clicks collapse to one even without
    dead time, since the detectors do not resolve photon number.
    """
    if times.size == 0:
        return times
    if dead_time <= 0.0:
        keep = np.r_[True, np.diff(times) > 0]
        return times[keep]
    kept = []
    last = -np.inf
    for t in times.tolist():
        if t - last >= dead_time and t > last:
            kept.append(t)
            last = t
    return np.asarray(kept)


def _as_batch(events) -> OutputBatch:
    return OutputBatch.from_events(events)


def _clicks(times, survival, path_delay, detector: DetectorModel, rng, span=None):
    times = np.asarray(times, dtype=float)
    p = np.asarray(survival, dtype=float) * detector.efficiency
    u = rng.random(times.size)
    t = times[u < p] + path_delay
    if detector.jitter_sigma > 0:
        t = t + rng.normal(0.0, detector.jitter_sigma, t.size)
    if detector.dark_count_rate > 0 and span is not None:
        lo, hi = span
        n_dark = rng.poisson(detector.dark_count_rate * (hi - lo) * 1e-9)
        t = np.concatenate([t, rng.uniform(lo, hi, n_dark) + path_delay])
    t = quantise(np.sort(t, kind="stable"))
    return apply_dead_time(t, detector.dead_time)


def detect(events, path_delay: float, detector: DetectorModel, seed: int,
           channel_id=None) -> TimeTagStream:
    """Click stream produced by a detector behind one output channel.

    Each event clicks with probability ``survival_prob * efficiency`` at
    ``exit_time + path_delay`` plus Gaussian jitter; dead time is then
    applied in time order.
    """
    batch = _as_batch(events)
    rng = np.random.default_rng(seed)
    t = batch.exit_time
    span = (0.0, float(t[-1]) if t.size else 0.0)
    tags = _clicks(t, batch.survival, path_delay, detector, rng, span)
    return TimeTagStream(batch.channel if channel_id is None else channel_id, tags)


OverlapFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def hom_mix(a, b, bs: BeamsplitterModel, overlap_fn: Optional[OverlapFn], seed: int,
            detectors: Sequence[DetectorModel] = (DetectorModel(1.0), DetectorModel(1.0)),
            window: float = 1.0, names=("port_c", "port_d")) -> tuple[TimeTagStream, TimeTagStream]:
    """Send two channels into a fiber beamsplitter and detect both outputs.

    Photons that survive to the splitter and arrive within ``window`` ns of a
    photon from the other input form a pair; the pair separates with
    probability ``R^2 + T^2 - 2RT * overlap * (1 - e^2)`` and otherwise both
    photons take the same output, either one with equal chance. All other
    photons route independently: input ``a`` reaches port c with probability
    R, input ``b`` with probability T. Passing an empty ``b`` turns this into
    a Hanbury Brown-Twiss splitter for ``a``.
    """
    a = _as_batch(a)
    b = _as_batch(b)
    rng = np.random.default_rng(seed)
    r = bs.reflectance

    ta, tb = a.exit_time, b.exit_time
    live_a = rng.random(ta.size) < a.survival
    live_b = rng.random(tb.size) < b.survival
    ta, ma = ta[live_a], a.mode_id[live_a]
    tb, mb = tb[live_b], b.mode_id[live_b]

    # earliest b photon within the window of each a photon
    ia = np.arange(ta.size)
    jb = np.searchsorted(tb, ta - window, side="left")
    candidate = (jb < tb.size)
    candidate[candidate] &= np.abs(tb[jb[candidate]] - ta[candidate]) <= window
    # each b photon pairs with at most one a photon
    cand_a = ia[candidate]
    cand_b = jb[candidate]
    _, first = np.unique(cand_b, return_index=True)
    pair_a, pair_b = cand_a[first], cand_b[first]

    # lone photons
    to_c_a = rng.random(ta.size) < r
    to_c_b = rng.random(tb.size) >= r
    # pairs
    if overlap_fn is None:
        overlap = np.ones(pair_a.size)
    else:
        overlap = np.broadcast_to(np.asarray(overlap_fn(ma[pair_a], mb[pair_b]), dtype=float),
                                  pair_a.shape)
    split = rng.random(pair_a.size) < bs.different_port_probability(overlap)
    side_c = rng.random(pair_a.size) < 0.5
    # a split pair sends a to port c and b to port d (the labels are symmetric)
    a_to_c = np.where(split, True, side_c)
    b_to_c = np.where(split, False, side_c)
    to_c_a[pair_a] = a_to_c
    to_c_b[pair_b] = b_to_c

    port_c_t = np.concatenate([ta[to_c_a], tb[to_c_b]])
    port_d_t = np.concatenate([ta[~to_c_a], tb[~to_c_b]])
    seeds = rng.integers(0, 2**63, size=2)
    last = max(float(ta[-1]) if ta.size else 0.0, float(tb[-1]) if tb.size else 0.0)
    out = []
    for name, times, det, s in zip(names, (port_c_t, port_d_t), detectors, seeds):
        times = np.sort(times, kind="stable")
        tags = _clicks(times, np.ones(times.size), 0.0, det, np.random.default_rng(int(s)),
                       span=(0.0, last))
        out.append(TimeTagStream(name, tags))
    return out[0], out[1]
