"""Pockels-cell driver schedule and channel-count feasibility.

The high-voltage driver has two switches, each triggered by its own TTL key.
Key 1 going on starts the voltage pulse, key 2 going on ends it, so the
high-voltage window of a firing is ``[key1_on, key2_on]``. Each key is
released ``ttl_width`` after it went on. Optional linear ramps extend the
rising and falling fronts; the flat top sits between ``key1_on + rise`` and
``key2_on``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .clock_source import ClockConfig
from .loop_demux import DemuxConfig

_TOL = 1e-6  # ns


class InfeasibleScheduleError(ValueError):
    """No schedule satisfies the driver constraints.

    ``constraint`` names the binding constraint.
    """

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


@dataclass(frozen=True)
class DriverConstraints:
    min_switch_interval: float = 70.0  # ns
    pulse_length: float = 12.0  # ns
    max_continuous_rate: float = 13e6  # Hz
    ttl_width: float = 5.0  # ns
    rise: float = 0.0  # ns
    fall: float = 0.0  # ns
    front_guard: float = 1.0  # ns kept clear around neighbouring photons

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if self.pulse_length <= 0:
            out.append("pulse_length must be positive")
        if self.min_switch_interval < self.pulse_length:
            out.append("min_switch_interval must be >= pulse_length")
        if self.max_continuous_rate <= 0:
            out.append("max_continuous_rate must be positive")
        if self.ttl_width <= 0:
            out.append("ttl_width must be positive")
        if self.rise < 0 or self.fall < 0 or self.front_guard < 0:
            out.append("rise, fall and front_guard must be non-negative")
        if self.rise >= self.pulse_length:
            out.append("rise must be shorter than pulse_length")
        return out


@dataclass(frozen=True)
class Firing:
    index: int
    key1_on: float
    key1_off: float
    key2_on: float
    key2_off: float
    cycle_index: int


@dataclass
class TtlSchedule:
    """Key edge times (ns) for a sequence of firings.

    ``edges`` has one row per firing: key1_on, key1_off, key2_on, key2_off.
    """

    edges: np.ndarray
    cycles: np.ndarray
    rise: float = 0.0
    fall: float = 0.0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float).reshape(-1, 4)
        self.cycles = np.asarray(self.cycles, dtype=np.int64)
        if len(self.cycles) != len(self.edges):
            raise ValueError("one cycle index per firing is required")

    def __len__(self):
        return len(self.edges)

    @property
    def firings(self) -> list[Firing]:
        return [Firing(i, *map(float, row), int(c))
                for i, (row, c) in enumerate(zip(self.edges, self.cycles))]

    @property
    def firing_cycle_indices(self) -> np.ndarray:
        return self.cycles

    @property
    def window_start(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def window_stop(self) -> np.ndarray:
        return self.edges[:, 2]

    @property
    def flat_top(self) -> tuple[np.ndarray, np.ndarray]:
        return self.edges[:, 0] + self.rise, self.edges[:, 2]

    @classmethod
    def from_firings(cls, firings, rise=0.0, fall=0.0) -> "TtlSchedule":
        firings = list(firings)
        edges = [[f.key1_on, f.key1_off, f.key2_on, f.key2_off] for f in firings]
        return cls(np.array(edges, dtype=float).reshape(-1, 4),
                   [f.cycle_index for f in firings], rise, fall)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["firing_index", "key1_on_ns", "key1_off_ns", "key2_on_ns",
                        "key2_off_ns", "cycle_index"])
            for i, (row, c) in enumerate(zip(self.edges, self.cycles)):
                w.writerow([i, *(f"{v:.3f}" for v in row), int(c)])

    @classmethod
    def from_csv(cls, path, rise=0.0, fall=0.0) -> "TtlSchedule":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        edges = [[float(r[k]) for k in ("key1_on_ns", "key1_off_ns", "key2_on_ns", "key2_off_ns")]
                 for r in rows]
        return cls(np.array(edges, dtype=float).reshape(-1, 4),
                   [int(r["cycle_index"]) for r in rows], rise, fall)


@dataclass(frozen=True)
class Violation:
    firing_index: int
    constraint: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_constraint(self, constraint: str) -> list[int]:
        return [v.firing_index for v in self.violations if v.constraint == constraint]

    def lines(self) -> list[str]:
        if self.ok:
            return ["schedule valid"]
        return [f"firing {v.firing_index}: {v.constraint}: {v.detail}" for v in self.violations]


def _edges_for_centres(centres, constraints: DriverConstraints) -> np.ndarray:
    c = constraints
    flat = c.pulse_length - c.rise
    key1_on = centres - flat / 2.0 - c.rise
    key2_on = key1_on + c.pulse_length
    return np.column_stack([key1_on, key1_on + c.ttl_width, key2_on, key2_on + c.ttl_width])


def build_schedule(clock: ClockConfig, constraints: DriverConstraints,
                   switch_period_cycles: int, n_firings: int,
                   phase_cycles: Optional[int] = None,
                   phase_offset: float = 0.0) -> TtlSchedule:
    """Firing schedule with one firing every ``switch_period_cycles`` clock cycles.

    Firing ``k`` has its flat top centred on the PC-transit instant of cycle
    ``k * switch_period_cycles + phase_cycles``, shifted by ``phase_offset``
    ns. ``phase_cycles`` defaults to ``switch_period_cycles - 1`` so the first
    firing already finds a full loop.

    Raises :class:`InfeasibleScheduleError` when the firing period is shorter
    than the driver's minimum switching interval, or when the voltage pulse
    cannot be placed without touching the neighbouring photons.
    """
    if switch_period_cycles < 1:
        raise ValueError("switch_period_cycles must be >= 1")
    if n_firings < 0:
        raise ValueError("n_firings must be non-negative")
    if phase_cycles is None:
        phase_cycles = switch_period_cycles - 1
    period = clock.pulse_period
    spacing = switch_period_cycles * period
    if spacing < constraints.min_switch_interval - _TOL:
        raise InfeasibleScheduleError(
            "min_switch_interval",
            f"{switch_period_cycles} cycles x {period:.4f} ns = {spacing:.2f} ns "
            f"< {constraints.min_switch_interval:g} ns",
        )
    edges = _edges_for_centres(np.zeros(1) + phase_offset, constraints)
    probe = TtlSchedule(edges, [0], constraints.rise, constraints.fall)
    issues = _front_violations(probe, clock, constraints)
    if issues:
        raise InfeasibleScheduleError("front_isolation", issues[0].detail)
    if constraints.ttl_width >= spacing - constraints.pulse_length:
        raise InfeasibleScheduleError(
            "ttl_overlap", f"TTL width {constraints.ttl_width:g} ns leaves no reset time")

    cycles = np.arange(n_firings, dtype=np.int64) * switch_period_cycles + phase_cycles
    centres = cycles * period + phase_offset
    return TtlSchedule(_edges_for_centres(centres, constraints), cycles,
                       constraints.rise, constraints.fall)


def _front_violations(schedule: TtlSchedule, clock: ClockConfig,
                      constraints: DriverConstraints) -> list[Violation]:
    period = clock.pulse_period
    guard = constraints.front_guard
    top_lo, top_hi = schedule.flat_top
    start = schedule.window_start
    stop = schedule.window_stop + schedule.fall
    target = schedule.cycles * period
    out = []
    inside = (target >= top_lo - _TOL) & (target <= top_hi + _TOL)
    prev_clear = target - period <= start - guard + _TOL
    next_clear = target + period >= stop + guard - _TOL
    for i in np.flatnonzero(~inside):
        out.append(Violation(int(i), "front_isolation",
                             f"cycle {int(schedule.cycles[i])} instant {target[i]:.3f} ns "
                             f"outside flat top [{top_lo[i]:.3f}, {top_hi[i]:.3f}]"))
    for i in np.flatnonzero(inside & ~(prev_clear & next_clear)):
        out.append(Violation(int(i), "front_isolation",
                             f"voltage span [{start[i]:.3f}, {stop[i]:.3f}] ns reaches within "
                             f"{guard:g} ns of a neighbouring photon at +/-{period:.3f} ns"))
    return out


def validate_schedule(schedule: TtlSchedule, clock: ClockConfig,
                      constraints: DriverConstraints) -> ValidationReport:
    e = schedule.edges
    report = ValidationReport()
    v = report.violations
    for i in np.flatnonzero(~(e[:, 0] < e[:, 1])):
        v.append(Violation(int(i), "key_order", "key1_on must precede key1_off"))
    for i in np.flatnonzero(~(e[:, 2] < e[:, 3])):
        v.append(Violation(int(i), "key_order", "key2_on must precede key2_off"))
    width = e[:, 2] - e[:, 0]
    for i in np.flatnonzero(np.abs(width - constraints.pulse_length) > _TOL):
        v.append(Violation(int(i), "pulse_length",
                           f"window {width[i]:.3f} ns, expected {constraints.pulse_length:g} ns"))
    gaps = np.diff(e[:, 0])
    for i in np.flatnonzero(gaps < constraints.min_switch_interval - _TOL):
        v.append(Violation(int(i) + 1, "min_switch_interval",
                           f"{gaps[i]:.3f} ns after previous firing, "
                           f"minimum {constraints.min_switch_interval:g} ns"))
    overlap = e[1:, 0] < np.maximum(e[:-1, 1], e[:-1, 3])
    for i in np.flatnonzero(overlap):
        v.append(Violation(int(i) + 1, "ttl_overlap",
                           "keys of the previous firing are still on"))
    v.extend(_front_violations(schedule, clock, constraints))
    v.sort(key=lambda x: x.firing_index)
    return report


def min_channels(rep_rate: float, switch_rate: float) -> int:
    """Smallest channel count a loop demultiplexer needs: floor(rep_rate / switch_rate)."""
    if rep_rate <= 0 or switch_rate <= 0:
        raise ValueError("rates must be positive")
    return math.floor(rep_rate / switch_rate * (1 + 1e-12))


@dataclass(frozen=True)
class VariantSummary:
    rep_rate: float
    n_channels: int
    switch_period_cycles: int
    duty: Fraction
    loss_fraction: Fraction
    needs_second_splitter: bool
    n_min: int
    period_feasible: bool

    def as_dict(self) -> dict:
        return {
            "rep_rate_hz": self.rep_rate,
            "n_channels": self.n_channels,
            "switch_period_cycles": self.switch_period_cycles,
            "duty": str(self.duty),
            "loss_fraction": str(self.loss_fraction),
            "needs_second_splitter": self.needs_second_splitter,
            "n_min": self.n_min,
            "period_feasible": self.period_feasible,
        }


def explore_variant(config: DemuxConfig, clock: ClockConfig, doubled_rate: bool = False,
                    constraints: Optional[DriverConstraints] = None) -> VariantSummary:
    """Channel count and photon budget of the baseline or doubled-rate loop.

    At doubled repetition rate each pulse covers half a round trip, so two
    interleaved sets of slots share the loop and leave through the cell in
    opposite directions; a second PBS is needed to extract them. The firing
    instants stay the same, so the period in clock cycles doubles.
    """
    constraints = constraints or DriverConstraints()
    factor = 2 if doubled_rate else 1
    rep_rate = clock.rep_rate * factor
    n_channels = config.n_slots * factor
    period_cycles = config.switch_period_cycles * factor
    duty = Fraction(n_channels, period_cycles)
    spacing = period_cycles * 1e9 / rep_rate
    return VariantSummary(
        rep_rate=rep_rate,
        n_channels=n_channels,
        switch_period_cycles=period_cycles,
        duty=duty,
        loss_fraction=1 - duty,
        needs_second_splitter=doubled_rate,
        n_min=min_channels(rep_rate, constraints.max_continuous_rate),
        period_feasible=spacing >= constraints.min_switch_interval - _TOL,
    )
