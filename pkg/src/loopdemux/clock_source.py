"""Pump clock and quantum-dot emission stream.

The source emits at most two photons per pump pulse. Single-photon events
occur with probability ``brightness``; a second photon is added with a
probability chosen so that the pulsed auto-correlation of the stream
converges to the configured ``g2_zero``.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional, Union, overload

import numpy as np
from scipy.optimize import brentq

# Pulses per RNG block. Randomness is keyed by block so that shards aligned
# to block boundaries reproduce the unsharded stream exactly.
BLOCK_PULSES = 1 << 16

_STREAM_TAG = 0


class Polarization(enum.Enum):
    H = "H"
    V = "V"


@dataclass(frozen=True)
class ClockConfig:
    rep_rate: float = 82.6e6  # Hz

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ValueError(f"rep_rate must be positive, got {self.rep_rate}")

    @property
    def pulse_period(self) -> float:
        """Time between pump pulses in ns."""
        return 1e9 / self.rep_rate

    def pulse_time(self, index):
        return np.asarray(index) * self.pulse_period


@dataclass(frozen=True)
class SourceModel:
    brightness: float = 0.0605
    g2_zero: float = 0.024
    indistinguishability: float = 0.98
    indistinguishability_decay: float = 1.0
    count_rate: Optional[float] = None  # Hz, informational

    def __post_init__(self):
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError(f"brightness must lie in [0, 1], got {self.brightness}")
        if not 0.0 <= self.g2_zero < 1.0:
            raise ValueError(f"g2_zero must lie in [0, 1), got {self.g2_zero}")
        if not 0.0 <= self.indistinguishability <= 1.0:
            raise ValueError(
                f"indistinguishability must lie in [0, 1], got {self.indistinguishability}"
            )
        if not 0.0 <= self.indistinguishability_decay <= 1.0:
            raise ValueError(
                "indistinguishability_decay must lie in [0, 1], "
                f"got {self.indistinguishability_decay}"
            )

    @classmethod
    def from_count_rate(cls, count_rate: float, clock: ClockConfig, **kwargs) -> "SourceModel":
        return cls(brightness=brightness_from_rate(count_rate, clock.rep_rate),
                   count_rate=count_rate, **kwargs)

    def overlap(self, mode_a, mode_b):
        """Squared wave-packet overlap between photons with the given mode labels.

        Mode labels are emission pulse indices, so the overlap decays with the
        number of clock cycles separating the two emissions.
        """
        gap = np.abs(np.asarray(mode_a, dtype=np.int64) - np.asarray(mode_b, dtype=np.int64))
        if self.indistinguishability_decay == 1.0:
            return np.full(gap.shape, self.indistinguishability)[()]
        return (self.indistinguishability * self.indistinguishability_decay ** gap)[()]


@dataclass(frozen=True)
class PhotonEvent:
    pulse_index: int
    emission_time: float  # ns
    mode_id: int
    polarization: Polarization = Polarization.H
    survival_prob: float = 1.0


def brightness_from_rate(count_rate: float, rep_rate: float) -> float:
    """Per-pulse photon probability B = count_rate / rep_rate."""
    if rep_rate <= 0:
        raise ValueError("rep_rate must be positive")
    if count_rate < 0:
        raise ValueError("count_rate must be non-negative")
    if count_rate > rep_rate:
        raise ValueError(
            f"count_rate {count_rate:g} Hz exceeds rep_rate {rep_rate:g} Hz; "
            "brightness would exceed 1"
        )
    return count_rate / rep_rate


def two_photon_probability(single: float, g2: float) -> float:
    """Solve ``g2 = 2*p2 / (single + 2*p2)**2`` for the two-photon probability p2.

    Returns the smaller root, the one that vanishes as g2 -> 0. Raises
    ``ValueError`` when no root with ``single + p2 <= 1`` exists.
    """
    if g2 == 0.0 or single == 0.0:
        if single == 0.0 and g2 > 0.0:
            raise ValueError("a non-zero g2 needs a non-zero brightness")
        return 0.0

    def residual(p2):
        return 2.0 * p2 - g2 * (single + 2.0 * p2) ** 2

    # residual is concave; its maximum sits at p2 = (1 - 2*g2*single) / (4*g2)
    peak = (1.0 - 2.0 * g2 * single) / (4.0 * g2)
    upper = min(peak, 1.0 - single)
    if upper <= 0.0 or residual(upper) < 0.0:
        raise ValueError(
            f"no two-photon probability reproduces g2={g2} at brightness {single}"
        )
    return brentq(residual, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps)


class PhotonStream(Sequence):
    """Emitted photons, stored column-wise and sorted by pulse index.

    Indexing yields :class:`PhotonEvent` objects; the arrays are exposed for
    vectorised consumers.
    """

    def __init__(self, pulse_index, mode_id, clock: ClockConfig, n_pulses: int,
                 first_pulse: int = 0, survival=None):
        self.pulse_index = np.asarray(pulse_index, dtype=np.int64)
        self.mode_id = np.asarray(mode_id, dtype=np.int64)
        self.survival = (np.ones(len(self.pulse_index)) if survival is None
                         else np.asarray(survival, dtype=float))
        self.clock = clock
        self.n_pulses = int(n_pulses)
        self.first_pulse = int(first_pulse)

    @property
    def emission_time(self) -> np.ndarray:
        return self.pulse_index * self.clock.pulse_period

    def __len__(self):
        return len(self.pulse_index)

    @overload
    def __getitem__(self, i: int) -> PhotonEvent: ...
    @overload
    def __getitem__(self, i: slice) -> list[PhotonEvent]: ...

    def __getitem__(self, i: Union[int, slice]):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        j = int(self.pulse_index[i])
        return PhotonEvent(pulse_index=j, emission_time=j * self.clock.pulse_period,
                           mode_id=int(self.mode_id[i]),
                           survival_prob=float(self.survival[i]))

    def photons_per_pulse(self) -> np.ndarray:
        return np.bincount(self.pulse_index - self.first_pulse, minlength=self.n_pulses)

    @classmethod
    def from_events(cls, events: Sequence[PhotonEvent], clock: ClockConfig,
                    n_pulses: Optional[int] = None) -> "PhotonStream":
        events = sorted(events, key=lambda e: e.pulse_index)
        idx = [e.pulse_index for e in events]
        if n_pulses is None:
            n_pulses = (max(idx) + 1) if idx else 0
        return cls(idx, [e.mode_id for e in events], clock, n_pulses,
                   survival=[e.survival_prob for e in events])


def _block_draws(seed: int, block: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _STREAM_TAG, block])
    return rng.random(n)


def generate_stream(source: SourceModel, clock: ClockConfig, n_pulses: int, seed: int,
                    first_pulse: int = 0) -> PhotonStream:
    """Draw the photons emitted over ``n_pulses`` pump pulses.

    ``first_pulse`` selects a shard of a longer run; it must be a multiple of
    ``BLOCK_PULSES`` for the shard to match the corresponding slice of the
    full stream.
    """
    if n_pulses < 1:
        raise ValueError(f"n_pulses must be >= 1, got {n_pulses}")
    if first_pulse % BLOCK_PULSES:
        raise ValueError(f"first_pulse must be a multiple of {BLOCK_PULSES}")
    p1 = source.brightness
    p2 = two_photon_probability(p1, source.g2_zero)
    if p1 + p2 > 1.0 + 1e-12:
        raise ValueError("single and two-photon probabilities exceed 1")

    stop = first_pulse + n_pulses
    chunks = []
    for start in range(first_pulse, stop, BLOCK_PULSES):
        block = start // BLOCK_PULSES
        n = min(BLOCK_PULSES, stop - start)
        u = _block_draws(seed, block, BLOCK_PULSES)[:n]
        counts = (u < p1 + p2).astype(np.int64) + (u < p2)
        chunks.append(np.repeat(np.arange(start, start + n, dtype=np.int64), counts))
    pulses = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return PhotonStream(pulses, pulses.copy(), clock, n_pulses, first_pulse=first_pulse)
