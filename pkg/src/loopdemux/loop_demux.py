"""Discrete-event model of the single-switch loop demultiplexer.

Photons enter transverse slot 0 on the cycle they are emitted and shift one
slot per round trip. When the Pockels cell fires, every stored photon (and
the one arriving on that cycle) has its polarization rotated and leaves
through the PBS; the slot a photon occupied fixes its output channel. A
photon pushed past the last slot is clipped by the aperture.

Two engines share these semantics. :func:`step_cycle` advances the loop by
one clock cycle and is the reference; :func:`run_simulation` follows each
photon through its at most ``n_slots`` passes with vectorised draws.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .clock_source import (
    BLOCK_PULSES,
    ClockConfig,
    PhotonEvent,
    PhotonStream,
    Polarization,
)

_DEMUX_TAG = 1


def mode_growth_couplings(path_lengths, waist_mm=1.5, wavelength_nm=918.83,
                          peak_coupling=1.0):
    """Fiber-coupling efficiency per channel from Gaussian mode-radius growth.

    The beam radius grows as ``w(z) = w0 * sqrt(1 + (z/zR)**2)`` over each
    channel's path. Couplers are mode-matched to channel 1, so the others lose
    the power overlap ``(2 w1 w / (w1**2 + w**2))**2``.
    """
    z = np.asarray(path_lengths, dtype=float)
    w0 = waist_mm * 1e-3
    z_r = math.pi * w0 ** 2 / (wavelength_nm * 1e-9)
    w = w0 * np.sqrt(1.0 + (z / z_r) ** 2)
    ref = w[0]
    return peak_coupling * (2 * ref * w / (ref ** 2 + w ** 2)) ** 2


@dataclass(frozen=True)
class DemuxConfig:
    """Loop geometry and imperfections.

    The defaults are calibrated: mean optical transmission
    per channel 0.397, which with 0.85 detector efficiency and 4/6 duty gives
    the measured raw efficiency 0.225.
    """

    n_slots: int = 4
    switch_period_cycles: int = 6
    round_trip_time: float = 12.1  # ns
    transverse_shift: float = 3.0  # mm
    aperture: float = 3.0  # mm per slot lane
    pc_on_rotation_efficiency: tuple = (0.96, 0.99, 0.95, 0.94)
    pc_off_leakage: float = 0.005
    per_pass_transmission: float = 0.97
    channel_coupling: tuple = (0.516621, 0.493344, 0.426302, 0.346416)
    channel_path_length: tuple = (3.6, 7.2, 10.8, 14.4)  # m

    def __post_init__(self):
        for name in ("pc_on_rotation_efficiency", "channel_coupling", "channel_path_length"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if self.n_slots < 1:
            out.append("n_slots must be >= 1")
        if self.switch_period_cycles < self.n_slots:
            out.append("switch_period_cycles must be >= n_slots")
        if self.round_trip_time <= 0:
            out.append("round_trip_time must be positive")
        for name in ("pc_off_leakage", "per_pass_transmission"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name} must lie in [0, 1]")
        for name in ("pc_on_rotation_efficiency", "channel_coupling", "channel_path_length"):
            values = getattr(self, name)
            if len(values) != self.n_slots:
                out.append(f"{name} needs {self.n_slots} entries, got {len(values)}")
            if name != "channel_path_length" and any(not 0.0 <= v <= 1.0 for v in values):
                out.append(f"{name} entries must lie in [0, 1]")
        lengths = self.channel_path_length
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            out.append("channel_path_length must be strictly increasing")
        return out

    @property
    def duty(self) -> float:
        return self.n_slots / self.switch_period_cycles

    @classmethod
    def ideal(cls, n_slots: int = 4, switch_period_cycles: int = 6, **kwargs) -> "DemuxConfig":
        """Lossless loop: perfect switching, no leakage, unit coupling."""
        params = dict(
            n_slots=n_slots,
            switch_period_cycles=switch_period_cycles,
            pc_on_rotation_efficiency=(1.0,) * n_slots,
            pc_off_leakage=0.0,
            per_pass_transmission=1.0,
            channel_coupling=(1.0,) * n_slots,
            channel_path_length=tuple(3.6 * (k + 1) for k in range(n_slots)),
        )
        params.update(kwargs)
        return cls(**params)

    def check_clock(self, clock: ClockConfig, tolerance: float = 0.1) -> None:
        """Reject a loop whose round trip cannot stay synchronised with the clock."""
        if abs(self.round_trip_time - clock.pulse_period) > tolerance:
            raise ValueError(
                f"round trip {self.round_trip_time} ns does not match the "
                f"{clock.pulse_period:.4f} ns pulse period"
            )


def channel_transmission(config: DemuxConfig, channel: int) -> float:
    """Probability that a photon routed to ``channel`` reaches its fiber.

    Product of the per-pass transmission over ``channel`` passes, survival of
    the ``channel - 1`` passes through the idle cell without leaking, the flip
    efficiency of the channel's slot and the fiber coupling.
    """
    if not 1 <= channel <= config.n_slots:
        raise ValueError(f"channel must lie in 1..{config.n_slots}, got {channel}")
    k = channel - 1
    return (config.per_pass_transmission ** channel
            * (1.0 - config.pc_off_leakage) ** k
            * config.pc_on_rotation_efficiency[k]
            * config.channel_coupling[k])


def calibrate_coupling(config: DemuxConfig, target_mean: float,
                       shape=None) -> DemuxConfig:
    """Rescale ``channel_coupling`` so the mean channel transmission hits ``target_mean``.

    ``shape`` sets the relative coupling of each channel (default: the
    Gaussian mode-growth model over the channel path lengths).
    """
    if shape is None:
        shape = mode_growth_couplings(config.channel_path_length)
    shape = np.asarray(shape, dtype=float)
    unit = replace(config, channel_coupling=tuple(shape))
    mean = np.mean([channel_transmission(unit, ch) for ch in range(1, config.n_slots + 1)])
    scale = target_mean / mean
    coupling = shape * scale
    if coupling.max() > 1.0:
        raise ValueError(f"target {target_mean} needs coupling above 1")
    return replace(config, channel_coupling=tuple(coupling))


@dataclass(frozen=True)
class OutputEvent:
    channel: int
    exit_time: float  # ns, PC-transit instant of the releasing cycle
    photon: PhotonEvent
    parasitic: bool = False


@dataclass(frozen=True)
class LoopState:
    """Slot contents between cycles.

    ``slots[k]`` holds the photons that have circulated ``k`` round trips; a
    multi-photon pulse puts more than one photon in the same slot.
    ``cycle_index`` is the next cycle to be processed.
    """

    slots: tuple
    cycle_index: int = 0
    n_clipped: int = 0

    @classmethod
    def empty(cls, n_slots: int, cycle_index: int = 0) -> "LoopState":
        return cls(slots=((),) * n_slots, cycle_index=cycle_index)

    @property
    def n_stored(self) -> int:
        return sum(len(s) for s in self.slots)


def step_cycle(state: LoopState, incoming, pc_fires: bool, config: DemuxConfig,
               rng: np.random.Generator, pulse_period: float = 12.1):
    """Advance the loop by one clock cycle.

    Returns ``(new_state, outputs)``. ``incoming`` is a photon, a sequence of
    photons from the same pulse, or ``None``.
    """
    if incoming is None:
        incoming = ()
    elif isinstance(incoming, PhotonEvent):
        incoming = (incoming,)
    cycle = state.cycle_index
    n = config.n_slots
    clipped = len(state.slots[-1])
    slots = [tuple(incoming)] + list(state.slots[:-1])

    t = config.per_pass_transmission
    exit_time = cycle * pulse_period
    outputs = []
    kept = []
    for k, photons in enumerate(slots):
        stay = []
        p_flip = config.pc_on_rotation_efficiency[k] if pc_fires else config.pc_off_leakage
        for ph in photons:
            ph = replace(ph, survival_prob=ph.survival_prob * t)
            if p_flip > 0.0 and rng.random() < p_flip:
                ph = replace(ph, polarization=Polarization.V,
                             survival_prob=ph.survival_prob * config.channel_coupling[k])
                outputs.append(OutputEvent(channel=k + 1, exit_time=exit_time, photon=ph,
                                           parasitic=not pc_fires))
            else:
                stay.append(ph)
        kept.append(tuple(stay))
    assert len(kept) == n
    new = LoopState(slots=tuple(kept), cycle_index=cycle + 1,
                    n_clipped=state.n_clipped + clipped)
    return new, outputs


class OutputBatch(Sequence):
    """Output events of one channel held column-wise, sorted by exit time."""

    _fields = ("exit_time", "pulse_index", "emission_time", "mode_id", "survival", "parasitic")

    def __init__(self, channel: int, exit_time, pulse_index, emission_time, mode_id,
                 survival, parasitic):
        self.channel = channel
        self.exit_time = np.asarray(exit_time, dtype=float)
        self.pulse_index = np.asarray(pulse_index, dtype=np.int64)
        self.emission_time = np.asarray(emission_time, dtype=float)
        self.mode_id = np.asarray(mode_id, dtype=np.int64)
        self.survival = np.asarray(survival, dtype=float)
        self.parasitic = np.asarray(parasitic, dtype=bool)
        order = np.lexsort((self.mode_id, self.pulse_index, self.exit_time))
        if np.any(order != np.arange(len(order))):
            for name in self._fields:
                setattr(self, name, getattr(self, name)[order])

    def __len__(self):
        return len(self.exit_time)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        photon = PhotonEvent(pulse_index=int(self.pulse_index[i]),
                             emission_time=float(self.emission_time[i]),
                             mode_id=int(self.mode_id[i]), polarization=Polarization.V,
                             survival_prob=float(self.survival[i]))
        return OutputEvent(channel=self.channel, exit_time=float(self.exit_time[i]),
                           photon=photon, parasitic=bool(self.parasitic[i]))

    @classmethod
    def empty(cls, channel: int = 0) -> "OutputBatch":
        z = np.zeros(0)
        return cls(channel, z, z, z, z, z, z)

    @classmethod
    def from_events(cls, events: Sequence[OutputEvent],
                    channel: Optional[int] = None) -> "OutputBatch":
        if isinstance(events, OutputBatch):
            return events
        events = list(events)
        if channel is None:
            channel = events[0].channel if events else 0
        return cls(channel, [e.exit_time for e in events],
                   [e.photon.pulse_index for e in events],
                   [e.photon.emission_time for e in events],
                   [e.photon.mode_id for e in events],
                   [e.photon.survival_prob for e in events],
                   [e.parasitic for e in events])

    @classmethod
    def concat(cls, batches: Sequence["OutputBatch"]) -> "OutputBatch":
        batches = list(batches)
        return cls(batches[0].channel,
                   *(np.concatenate([getattr(b, f) for b in batches]) for f in cls._fields))

    def select(self, mask) -> "OutputBatch":
        return OutputBatch(self.channel, *(getattr(self, f)[mask] for f in self._fields))

    def regular(self) -> "OutputBatch":
        return self.select(~self.parasitic)


def firing_cycles_from_schedule(schedule, clock: ClockConfig) -> np.ndarray:
    """Clock cycles whose PC-transit instant lies inside a firing window.

    Raises ``ValueError`` when a window holds no clock instant, more than one,
    or a different one than the schedule's recorded cycle index.
    """
    period = clock.pulse_period
    start, stop = schedule.window_start, schedule.window_stop
    tol = 1e-6
    first = np.ceil((start - tol) / period).astype(np.int64)
    last = np.floor((stop + tol) / period).astype(np.int64)
    n_inside = last - first + 1
    bad = np.flatnonzero(n_inside != 1)
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"firing {i} window [{start[i]:.3f}, {stop[i]:.3f}] ns holds "
            f"{int(n_inside[i])} clock instants at period {period:.4f} ns"
        )
    bad = np.flatnonzero(first != schedule.cycles)
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"firing {i} is recorded at cycle {int(schedule.cycles[i])} but its window "
            f"covers cycle {int(first[i])}"
        )
    return first


def _fire_mask(fire_cycles, n_cycles: int) -> np.ndarray:
    fires = np.zeros(n_cycles, dtype=bool)
    fc = np.asarray(fire_cycles, dtype=np.int64)
    fires[fc[(fc >= 0) & (fc < n_cycles)]] = True
    return fires


def _propagate(config: DemuxConfig, entry: np.ndarray, fires: np.ndarray,
               u: np.ndarray):
    """Slot index at which each photon leaves the loop (-1: clipped or still stored)."""
    n = config.n_slots
    n_cycles = len(fires)
    cycles = entry[:, None] + np.arange(n)[None, :]
    valid = cycles < n_cycles
    fired = np.zeros_like(valid)
    fired[valid] = fires[cycles[valid]]
    eff = np.asarray(config.pc_on_rotation_efficiency)[None, :]
    p = np.where(fired, eff, config.pc_off_leakage)
    p = np.where(valid, p, 0.0)
    leave = u < p
    any_leave = leave.any(axis=1)
    slot = np.where(any_leave, leave.argmax(axis=1), -1)
    return slot, fired


def run_simulation(config: DemuxConfig, clock: ClockConfig, stream: PhotonStream,
                   schedule, seed: int, n_cycles: Optional[int] = None,
                   engine: str = "vector") -> dict[int, OutputBatch]:
    """Route a photon stream through the loop under a firing schedule.

    Returns one :class:`OutputBatch` per channel. ``n_cycles`` defaults to the
    end of the stream; photons still circulating at that point are dropped.
    ``engine="step"`` replays :func:`step_cycle` cycle by cycle, which is slow
    but mirrors the hardware sequence literally.
    """
    config.check_clock(clock)
    if n_cycles is None:
        n_cycles = stream.first_pulse + stream.n_pulses
    fire_cycles = firing_cycles_from_schedule(schedule, clock)
    fires = _fire_mask(fire_cycles, n_cycles)
    if engine == "vector":
        return _run_vector(config, clock, stream, fires, seed)
    if engine == "step":
        return _run_steps(config, clock, stream, fires, seed)
    raise ValueError(f"unknown engine {engine!r}")


def _run_vector(config, clock, stream, fires, seed):
    n = config.n_slots
    entry = stream.pulse_index
    if len(entry) and entry[-1] >= len(fires):
        raise ValueError("stream extends past the simulated cycle range")
    u = np.empty((len(entry), n))
    blocks = entry // BLOCK_PULSES
    edges = np.flatnonzero(np.diff(blocks)) + 1
    for lo, hi in zip(np.r_[0, edges], np.r_[edges, len(entry)]):
        if hi > lo:
            rng = np.random.default_rng([seed, _DEMUX_TAG, int(blocks[lo])])
            u[lo:hi] = rng.random((hi - lo, n))
    slot, fired = _propagate(config, entry, fires, u)
    out = slot >= 0
    s = slot[out]
    survival = (stream.survival[out] * config.per_pass_transmission ** (s + 1)
                * np.asarray(config.channel_coupling)[s])
    parasitic = ~fired[np.flatnonzero(out), s]
    exit_cycle = entry[out] + s
    period = clock.pulse_period
    result = {}
    for ch in range(1, n + 1):
        m = s == ch - 1
        result[ch] = OutputBatch(ch, exit_cycle[m] * period, entry[out][m],
                                 entry[out][m] * period, stream.mode_id[out][m],
                                 survival[m], parasitic[m])
    return result


def _run_steps(config, clock, stream, fires, seed):
    rng = np.random.default_rng([seed, _DEMUX_TAG, 0xC1C1E])
    by_pulse: dict[int, list] = {}
    for k in range(len(stream)):
        ev = stream[k]
        by_pulse.setdefault(ev.pulse_index, []).append(ev)
    state = LoopState.empty(config.n_slots, cycle_index=stream.first_pulse)
    events: dict[int, list] = {ch: [] for ch in range(1, config.n_slots + 1)}
    for cycle in range(stream.first_pulse, len(fires)):
        state, outs = step_cycle(state, by_pulse.get(cycle), bool(fires[cycle]), config, rng,
                                 pulse_period=clock.pulse_period)
        for ev in outs:
            events[ev.channel].append(ev)
    return {ch: OutputBatch.from_events(evs, channel=ch)
            for ch, evs in events.items()}
