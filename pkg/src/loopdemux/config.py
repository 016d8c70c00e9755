"""Run configuration: a sectioned INI file with units spelled out in key names."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Optional

from .clock_source import ClockConfig, SourceModel, brightness_from_rate
from .control_sequencer import DriverConstraints
from .detection import BeamsplitterModel, DetectorModel
from .loop_demux import DemuxConfig

PAPER_COUNT_RATE = 5e6  # Hz, detected at the source output
PAPER_PULSES = 10_000_000


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists one entry per offending field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _floats(text: str) -> tuple:
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _pairs(text: str) -> tuple:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        a, b = item.split("-")
        out.append((int(a), int(b)))
    return tuple(out)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> Optional[int]:
    return None if text.strip() in ("", "auto") else int(text)


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip() in ("", "none") else float(text)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a}-{b}" for a, b in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunOptions:
    n_pulses: int = 1_000_000
    seed: int = 42
    output_dir: str = "run"
    hom_pairs: tuple = ((1, 2), (2, 3), (3, 4))
    schedule_firings: int = 10


@dataclass(frozen=True)
class RunConfig:
    clock: ClockConfig = field(default_factory=ClockConfig)
    source: SourceModel = field(default_factory=lambda: SourceModel(
        brightness=brightness_from_rate(PAPER_COUNT_RATE, ClockConfig().rep_rate),
        count_rate=PAPER_COUNT_RATE))
    demux: DemuxConfig = field(default_factory=DemuxConfig)
    driver: DriverConstraints = field(default_factory=DriverConstraints)
    detector: DetectorModel = field(default_factory=DetectorModel)
    beamsplitter: BeamsplitterModel = field(default_factory=BeamsplitterModel)
    run: RunOptions = field(default_factory=RunOptions)
    phase_cycles: Optional[int] = None
    phase_offset: float = 0.0  # ns
    channel_delay: tuple = ()  # ns per channel, empty = all zero
    efficiency_per_channel: tuple = ()  # empty = detector.efficiency everywhere
    correct_brightness_for_detector: bool = False

    @property
    def n_pulses(self) -> int:
        return self.run.n_pulses

    @property
    def seed(self) -> int:
        return self.run.seed

    def delays(self) -> tuple:
        return self.channel_delay or (0.0,) * self.demux.n_slots

    def channel_detector(self, channel: int) -> DetectorModel:
        if self.efficiency_per_channel:
            return replace(self.detector, efficiency=self.efficiency_per_channel[channel - 1])
        return self.detector

    @property
    def firing_phase(self) -> int:
        if self.phase_cycles is None:
            return self.demux.switch_period_cycles - 1
        return self.phase_cycles

    def with_run(self, **kwargs) -> "RunConfig":
        return replace(self, run=replace(self.run, **kwargs))


def paper_preset() -> RunConfig:
    """Every value the source publication reports, at the full 10^7-pulse length."""
    return RunConfig().with_run(n_pulses=PAPER_PULSES)


# (section, key) -> (attribute path, parser)
_KEYS: dict[tuple[str, str], tuple[str, Callable[[str], Any]]] = {
    ("clock", "rep_rate_hz"): ("clock.rep_rate", float),
    ("source", "brightness"): ("source.brightness", _opt_float),
    ("source", "count_rate_hz"): ("source.count_rate", _opt_float),
    ("source", "g2_zero"): ("source.g2_zero", float),
    ("source", "indistinguishability"): ("source.indistinguishability", float),
    ("source", "indistinguishability_decay"): ("source.indistinguishability_decay", float),
    ("source", "correct_for_detector_efficiency"): ("correct_brightness_for_detector", _bool),
    ("demux", "n_slots"): ("demux.n_slots", int),
    ("demux", "switch_period_cycles"): ("demux.switch_period_cycles", int),
    ("demux", "round_trip_ns"): ("demux.round_trip_time", float),
    ("demux", "transverse_shift_mm"): ("demux.transverse_shift", float),
    ("demux", "aperture_mm"): ("demux.aperture", float),
    ("demux", "pc_on_rotation_efficiency"): ("demux.pc_on_rotation_efficiency", _floats),
    ("demux", "pc_off_leakage"): ("demux.pc_off_leakage", float),
    ("demux", "per_pass_transmission"): ("demux.per_pass_transmission", float),
    ("demux", "channel_coupling"): ("demux.channel_coupling", _floats),
    ("demux", "channel_path_length_m"): ("demux.channel_path_length", _floats),
    ("driver", "min_switch_interval_ns"): ("driver.min_switch_interval", float),
    ("driver", "pulse_length_ns"): ("driver.pulse_length", float),
    ("driver", "max_continuous_rate_hz"): ("driver.max_continuous_rate", float),
    ("driver", "ttl_width_ns"): ("driver.ttl_width", float),
    ("driver", "rise_ns"): ("driver.rise", float),
    ("driver", "fall_ns"): ("driver.fall", float),
    ("driver", "front_guard_ns"): ("driver.front_guard", float),
    ("driver", "phase_cycles"): ("phase_cycles", _opt_int),
    ("driver", "phase_offset_ns"): ("phase_offset", float),
    ("detector", "efficiency"): ("detector.efficiency", float),
    ("detector", "efficiency_per_channel"): ("efficiency_per_channel", _floats),
    ("detector", "dead_time_ns"): ("detector.dead_time", float),
    ("detector", "jitter_sigma_ns"): ("detector.jitter_sigma", float),
    ("detector", "dark_count_rate_hz"): ("detector.dark_count_rate", float),
    ("detector", "channel_delay_ns"): ("channel_delay", _floats),
    ("beamsplitter", "reflectance"): ("beamsplitter.reflectance", float),
    ("beamsplitter", "transmittance"): ("beamsplitter.transmittance", float),
    ("beamsplitter", "classical_visibility"): ("beamsplitter.classical_visibility", float),
    ("run", "n_pulses"): ("run.n_pulses", int),
    ("run", "seed"): ("run.seed", int),
    ("run", "output_dir"): ("run.output_dir", str),
    ("run", "hom_pairs"): ("run.hom_pairs", _pairs),
    ("run", "schedule_firings"): ("run.schedule_firings", int),
}

_COMPONENTS = {
    "clock": ClockConfig,
    "source": SourceModel,
    "demux": DemuxConfig,
    "driver": DriverConstraints,
    "detector": DetectorModel,
    "beamsplitter": BeamsplitterModel,
    "run": RunOptions,
}


def _component_values(cfg: RunConfig) -> dict[str, dict[str, Any]]:
    """Field values grouped by component; key "" holds the top-level scalars."""
    out: dict[str, dict[str, Any]] = {"": {}}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name in _COMPONENTS:
            out[f.name] = {g.name: getattr(v, g.name) for g in fields(v)}
        else:
            out[""][f.name] = v
    return out


def _get(cfg: RunConfig, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _build(values: dict[str, dict[str, Any]]) -> RunConfig:
    problems = []
    kwargs: dict[str, Any] = dict(values[""])
    for name, cls in _COMPONENTS.items():
        try:
            kwargs[name] = cls(**values[name])
        except (ValueError, TypeError) as exc:
            problems.append(f"[{name}] {exc}")
    if problems:
        raise ConfigError(problems)
    cfg = RunConfig(**kwargs)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    out = []
    n = cfg.demux.n_slots
    if cfg.run.n_pulses < 1:
        out.append(f"[run] n_pulses: must be >= 1, got {cfg.run.n_pulses}")
    if cfg.run.schedule_firings < 1:
        out.append("[run] schedule_firings: must be >= 1")
    for a, b in cfg.run.hom_pairs:
        if not (1 <= a <= n and 1 <= b <= n and a != b):
            out.append(f"[run] hom_pairs: {a}-{b} is not a pair of distinct channels 1..{n}")
    if cfg.channel_delay and len(cfg.channel_delay) != n:
        out.append(f"[detector] channel_delay_ns: needs {n} entries")
    if cfg.efficiency_per_channel:
        if len(cfg.efficiency_per_channel) != n:
            out.append(f"[detector] efficiency_per_channel: needs {n} entries")
        elif any(not 0 <= v <= 1 for v in cfg.efficiency_per_channel):
            out.append("[detector] efficiency_per_channel: entries must lie in [0, 1]")
    if cfg.phase_cycles is not None and cfg.phase_cycles < 0:
        out.append("[driver] phase_cycles: must be >= 0")
    try:
        cfg.demux.check_clock(cfg.clock)
    except ValueError as exc:
        out.append(f"[demux] round_trip_ns: {exc}")
    return out


def parse(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse INI text on top of ``base`` (defaults if omitted)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([str(exc).replace("\n", " ")]) from None

    base = base or RunConfig()
    values = _component_values(base)
    problems: list[str] = []
    brightness_given = False
    for section in parser.sections():
        if section not in _COMPONENTS:
            problems.append(f"[{section}] unknown section")
            continue
        for key, raw in parser.items(section):
            spec = _KEYS.get((section, key))
            if spec is None:
                problems.append(f"[{section}] {key}: unknown key")
                continue
            path, conv = spec
            try:
                value = conv(raw)
            except (ValueError, TypeError) as exc:
                problems.append(f"[{section}] {key}: cannot parse {raw!r} ({exc})")
                continue
            head, _, attr = path.rpartition(".")
            if head:
                values[head][attr] = value
            else:
                values[""][attr] = value
            if (section, key) == ("source", "brightness") and value is not None:
                brightness_given = True

    src = values["source"]
    clock_rate = values["clock"]["rep_rate"]
    if not brightness_given and parser.has_option("source", "count_rate_hz"):
        nu = src.get("count_rate")
        if nu is not None:
            try:
                b = brightness_from_rate(nu, clock_rate)
                if values[""]["correct_brightness_for_detector"]:
                    b /= values["detector"]["efficiency"]
                src["brightness"] = b
            except ValueError as exc:
                problems.append(f"[source] count_rate_hz: {exc}")
    if src.get("brightness") is None:
        problems.append("[source] brightness: missing (give brightness or count_rate_hz)")
    if problems:
        raise ConfigError(problems)
    return _build(values)


def serialize(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in _COMPONENTS:
        parser.add_section(section)
    for (section, key), (path, _) in _KEYS.items():
        parser.set(section, key, _fmt(_get(cfg, path)))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load(path) -> RunConfig:
    with open(path) as fh:
        return parse(fh.read())


def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides given on the command line."""
    if not assignments:
        return cfg
    lines: dict[str, list[str]] = {}
    for item in assignments:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError([f"override {item!r}: expected section.key=value"])
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        lines.setdefault(section.strip(), []).append(f"{key.strip()} = {value.strip()}")
    text = "\n".join(f"[{s}]\n" + "\n".join(ls) for s, ls in lines.items())
    return parse(text, base=cfg)
