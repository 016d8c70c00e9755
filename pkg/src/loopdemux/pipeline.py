"""End-to-end run: emission, loop routing, virtual measurements, estimators.

One simulated set of output events is observed by several independent
virtual setups: a detector on each channel, a Hanbury Brown-Twiss splitter
on the source and on each channel, and a fiber beamsplitter joining each
configured channel pair. Each setup sees the same photons, as if the
experiment had been repeated with identical emission.
"""

from __future__ import annotations

import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import analysis as an
from .clock_source import BLOCK_PULSES, generate_stream
from .config import RunConfig
from .control_sequencer import TtlSchedule, build_schedule
from .detection import BeamsplitterModel, TimeTagStream, detect, hom_mix
from .loop_demux import OutputBatch, channel_transmission, run_simulation

HBT_SPLITTER = BeamsplitterModel(0.5, 0.5, 0.0)
BIN_WIDTH = 0.5  # ns
N_SIDE_PEAKS = 10


def derive_seed(seed: int, label: str) -> int:
    ss = np.random.SeedSequence([seed, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


def n_bursts(n_pulses: int, period_cycles: int, phase: int) -> int:
    return max(0, math.ceil((n_pulses - phase) / period_cycles))


def shard_bounds(n_pulses: int, shards: int) -> list[tuple[int, int]]:
    """Split ``[0, n_pulses)`` into at most ``shards`` block-aligned ranges."""
    n_blocks = math.ceil(n_pulses / BLOCK_PULSES)
    shards = max(1, min(shards, n_blocks))
    edges = [round(i * n_blocks / shards) * BLOCK_PULSES for i in range(shards)] + [n_pulses]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


@dataclass
class SimulationResult:
    config: RunConfig
    schedule: TtlSchedule
    source: OutputBatch  # emitted photons, exit_time = emission time
    channels: dict[int, OutputBatch]


def schedule_for(cfg: RunConfig) -> TtlSchedule:
    period = cfg.demux.switch_period_cycles
    phase = cfg.firing_phase
    return build_schedule(cfg.clock, cfg.driver, period,
                          n_bursts(cfg.n_pulses, period, phase), phase, cfg.phase_offset)


def _simulate_shard(cfg: RunConfig, schedule: TtlSchedule, lo: int, hi: int):
    stream = generate_stream(cfg.source, cfg.clock, hi - lo, cfg.seed, first_pulse=lo)
    outs = run_simulation(cfg.demux, cfg.clock, stream, schedule, cfg.seed,
                          n_cycles=cfg.n_pulses)
    return stream.pulse_index, stream.mode_id, outs


def simulate_run(cfg: RunConfig, shards: int = 1, workers: int = 1) -> SimulationResult:
    """Emit and route ``cfg.n_pulses`` pulses.

    The result does not depend on ``shards`` or ``workers``: randomness is
    keyed by pulse block, and shard outputs are merged in canonical order.
    """
    schedule = schedule_for(cfg)
    bounds = shard_bounds(cfg.n_pulses, shards)
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_shard, [cfg] * len(bounds), [schedule] * len(bounds),
                                  *zip(*bounds)))
    else:
        parts = [_simulate_shard(cfg, schedule, lo, hi) for lo, hi in bounds]

    period = cfg.clock.pulse_period
    pulses = np.concatenate([p[0] for p in parts])
    modes = np.concatenate([p[1] for p in parts])
    t = pulses * period
    source = OutputBatch(0, t, pulses, t, modes, np.ones(pulses.size), np.zeros(pulses.size))
    channels = {ch: OutputBatch.concat([p[2][ch] for p in parts])
                for ch in range(1, cfg.demux.n_slots + 1)}
    return SimulationResult(cfg, schedule, source, channels)


def measure(result: SimulationResult) -> dict[str, TimeTagStream]:
    """Detector streams of every virtual setup, keyed by file stem."""
    cfg = result.config
    seed = cfg.seed
    det = cfg.detector
    streams: dict[str, TimeTagStream] = {}
    empty = OutputBatch.empty()
    for ch, batch in result.channels.items():
        name = f"channel_{ch}"
        streams[name] = detect(batch, cfg.delays()[ch - 1], cfg.channel_detector(ch),
                               derive_seed(seed, name), channel_id=name)
    a, b = hom_mix(result.source, empty, HBT_SPLITTER, None, derive_seed(seed, "source_hbt"),
                   detectors=(det, det), names=("source_hbt_a", "source_hbt_b"))
    streams[a.channel_id], streams[b.channel_id] = a, b
    for ch, batch in result.channels.items():
        name = f"channel_{ch}_hbt"
        a, b = hom_mix(batch, empty, HBT_SPLITTER, None, derive_seed(seed, name),
                       detectors=(det, det), names=(f"{name}_a", f"{name}_b"))
        streams[a.channel_id], streams[b.channel_id] = a, b
    for i, j in cfg.run.hom_pairs:
        name = f"hom_{i}{j}"
        a, b = hom_mix(result.channels[i], result.channels[j], cfg.beamsplitter,
                       cfg.source.overlap, derive_seed(seed, name),
                       detectors=(cfg.channel_detector(i), cfg.channel_detector(j)),
                       names=(f"{name}_a", f"{name}_b"))
        streams[a.channel_id], streams[b.channel_id] = a, b
    return streams


@dataclass(frozen=True)
class RunInfo:
    """What the analysis needs to know about a run besides its tag streams."""

    pulse_period: float
    switch_period_cycles: int
    phase_cycles: int
    n_pulses: int
    n_channels: int
    brightness: float
    detector_efficiency: float
    beamsplitter: BeamsplitterModel
    hom_pairs: tuple
    delays: tuple
    expected_p: float = 0.0  # B * mean transmission * efficiency * duty

    @property
    def firing_period(self) -> float:
        return self.switch_period_cycles * self.pulse_period

    @property
    def duty(self) -> Fraction:
        return Fraction(self.n_channels, self.switch_period_cycles)

    @property
    def n_bursts(self) -> int:
        return n_bursts(self.n_pulses, self.switch_period_cycles, self.phase_cycles)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "RunInfo":
        n = cfg.demux.n_slots
        mean_t = float(np.mean([channel_transmission(cfg.demux, ch) for ch in range(1, n + 1)]))
        return cls(
            pulse_period=cfg.clock.pulse_period,
            switch_period_cycles=cfg.demux.switch_period_cycles,
            phase_cycles=cfg.firing_phase,
            n_pulses=cfg.n_pulses,
            n_channels=n,
            brightness=cfg.source.brightness,
            detector_efficiency=cfg.detector.efficiency,
            beamsplitter=cfg.beamsplitter,
            hom_pairs=tuple(cfg.run.hom_pairs),
            delays=cfg.delays(),
            expected_p=cfg.source.brightness * mean_t * cfg.detector.efficiency * n
            / cfg.demux.switch_period_cycles,
        )

    def as_dict(self) -> dict:
        return {
            "pulse_period_ns": self.pulse_period,
            "switch_period_cycles": self.switch_period_cycles,
            "phase_cycles": self.phase_cycles,
            "n_pulses": self.n_pulses,
            "n_channels": self.n_channels,
            "brightness": self.brightness,
            "detector_efficiency": self.detector_efficiency,
            "beamsplitter": [self.beamsplitter.reflectance, self.beamsplitter.transmittance,
                             self.beamsplitter.classical_visibility],
            "hom_pairs": [list(p) for p in self.hom_pairs],
            "delays_ns": list(self.delays),
            "expected_p": self.expected_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunInfo":
        return cls(
            pulse_period=d["pulse_period_ns"],
            switch_period_cycles=d["switch_period_cycles"],
            phase_cycles=d["phase_cycles"],
            n_pulses=d["n_pulses"],
            n_channels=d["n_channels"],
            brightness=d["brightness"],
            detector_efficiency=d["detector_efficiency"],
            beamsplitter=BeamsplitterModel(*d["beamsplitter"]),
            hom_pairs=tuple(tuple(p) for p in d["hom_pairs"]),
            delays=tuple(d["delays_ns"]),
            expected_p=d.get("expected_p", 0.0),
        )


@dataclass
class AnalysisResult:
    summary: dict
    histograms: dict[str, an.CorrelationHistogram] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _g2_from_pair(a: TimeTagStream, b: TimeTagStream, period: float):
    hist = an.correlate(a, b, BIN_WIDTH, (N_SIDE_PEAKS + 0.5) * period, period=period)
    areas = an.peak_areas(hist, n_side_peaks=N_SIDE_PEAKS)
    return hist, areas


def _safe(fn, out: AnalysisResult, what: str, default=0.0):
    try:
        return fn()
    except an.EstimateUndefined as exc:
        out.warnings.append(f"{what}: {exc}; reported as {default}")
        return default


def analyze_auto(streams: dict[str, TimeTagStream], info: RunInfo) -> AnalysisResult:
    """Source and per-channel g2(0), plus the parasitic-peak level of each channel."""
    out = AnalysisResult(summary={"mode": "auto"})
    if "source_hbt_a" in streams:
        hist, areas = _g2_from_pair(streams["source_hbt_a"], streams["source_hbt_b"],
                                    info.pulse_period)
        out.histograms["source_hbt"] = hist
        out.summary["g2"] = _safe(lambda: an.g2_zero(areas), out, "source g2")
        out.summary["source_peak_areas"] = {"central": areas.central,
                                            "side_mean": areas.side_mean}
    per_channel = {}
    for ch in range(1, info.n_channels + 1):
        entry = {}
        key = f"channel_{ch}_hbt"
        if f"{key}_a" in streams:
            hist, areas = _g2_from_pair(streams[f"{key}_a"], streams[f"{key}_b"],
                                        info.firing_period)
            out.histograms[key] = hist
            entry["g2"] = _safe(lambda: an.g2_zero(areas), out, f"channel {ch} g2")
        name = f"channel_{ch}"
        if name in streams:
            hist = an.correlate(streams[name], None, BIN_WIDTH,
                                (N_SIDE_PEAKS + 0.5) * info.firing_period,
                                period=info.firing_period)
            out.histograms[f"{name}_auto"] = hist
            entry["parasitic_ratio"] = _safe(
                lambda: an.parasitic_ratio(hist, info.pulse_period, info.firing_period),
                out, f"channel {ch} parasitic ratio")
        per_channel[str(ch)] = entry
    out.summary["channels"] = per_channel
    return out


def analyze_hom(streams: dict[str, TimeTagStream], info: RunInfo,
                g2: Optional[float] = None) -> AnalysisResult:
    """Raw and corrected HOM visibility for every configured channel pair.

    ``g2`` defaults to the source value measured from the HBT streams.
    """
    out = AnalysisResult(summary={"mode": "hom"})
    if g2 is None:
        if "source_hbt_a" in streams:
            _, areas = _g2_from_pair(streams["source_hbt_a"], streams["source_hbt_b"],
                                     info.pulse_period)
            g2 = _safe(lambda: an.g2_zero(areas), out, "source g2")
        else:
            g2 = 0.0
            out.warnings.append("no source HBT streams; g2 taken as 0")
    out.summary["g2"] = g2
    pairs = {}
    central = side = 0.0
    for i, j in info.hom_pairs:
        key = f"hom_{i}{j}"
        hist, areas = _g2_from_pair(streams[f"{key}_a"], streams[f"{key}_b"],
                                    info.firing_period)
        out.histograms[key] = hist
        central += areas.central
        side += areas.side_mean
        ratio = _safe(lambda: areas.ratio, out, f"pair {i}-{j}")
        defined = areas.side_mean > 0
        pairs[f"{i}-{j}"] = {
            "a0_ratio": ratio,
            "hom_raw": 1.0 - 2.0 * ratio if defined else 0.0,
            "hom_corrected": an.hom_corrected(ratio, g2, info.beamsplitter) if defined else 0.0,
        }
    out.summary["pairs"] = pairs
    pooled = central / side if side > 0 else 0.0
    out.summary["pooled"] = {
        "a0_ratio": pooled,
        "hom_raw": 1.0 - 2.0 * pooled if side > 0 else 0.0,
        "hom_corrected": an.hom_corrected(pooled, g2, info.beamsplitter) if side > 0 else 0.0,
    }
    return out


def analyze_rates(streams: dict[str, TimeTagStream], info: RunInfo,
                  min_counts: int = 100) -> AnalysisResult:
    """Geometric fit of n-fold coincidences and the channel efficiency it implies.

    The fitted ratio between successive n-fold levels is the detection
    probability per channel and firing; multiplying by the duty fraction
    turns it into the probability per pump pulse.
    """
    out = AnalysisResult(summary={"mode": "rates"})
    chans = [streams[f"channel_{ch}"] for ch in range(1, info.n_channels + 1)]
    patterns = an.burst_patterns(chans, info.pulse_period, info.switch_period_cycles,
                                 info.phase_cycles, info.delays)
    rates = an.multiphoton_rates(patterns, info.n_channels, max(info.n_bursts, 1))
    out.summary["n_fold"] = {int(n): {"rate_per_burst": float(r), "events": int(c)}
                             for n, r, c in zip(rates.n, rates.rate, rates.counts)}
    out.summary["n_bursts"] = info.n_bursts
    if (rates.counts > 0).sum() < 2:
        out.warnings.append("fewer than two non-empty coincidence levels; rates zeroed")
        out.summary.update(p=0.0, p_per_burst=0.0, e_raw=0.0, e_corrected=0.0)
        return out
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = an.fit_multiphoton(rates, min_counts=min_counts)
    out.warnings.extend(str(w.message) for w in caught)
    p = fit.p * float(info.duty)
    out.summary.update(p_per_burst=fit.p, p=p, fit_levels=list(fit.n_used),
                       fit_residual_norm=fit.residual_norm, expected_p=info.expected_p)
    if info.brightness > 0 and 0 < p <= 1:
        report = an.channel_efficiency(p, info.brightness, info.detector_efficiency, info.duty)
        out.summary.update(e_raw=report.e_raw, e_corrected=report.e_corrected,
                           duty=str(report.duty), B=report.B)
    return out
