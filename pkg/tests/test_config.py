import pytest
from hypothesis import given, settings, strategies as st

from loopdemux.config import (ConfigError, RunConfig, apply_overrides, load, paper_preset, parse,
                              serialize)


def test_round_trip_of_defaults_and_preset():
    for cfg in (RunConfig(), paper_preset()):
        assert parse(serialize(cfg)) == cfg
        assert serialize(parse(serialize(cfg))) == serialize(cfg)


@given(seed=st.integers(0, 2**31), n=st.integers(1, 10**8), leak=st.floats(0, 1),
       eff=st.floats(0, 1), pairs=st.sampled_from([((1, 2),), ((1, 2), (3, 4)), ()]))
@settings(max_examples=100, deadline=None)
def test_round_trip_of_random_configs(seed, n, leak, eff, pairs):
    cfg = apply_overrides(RunConfig(), [
        f"run.seed={seed}", f"run.n_pulses={n}", f"demux.pc_off_leakage={leak!r}",
        f"detector.efficiency={eff!r}",
        "run.hom_pairs=" + ", ".join(f"{a}-{b}" for a, b in pairs)])
    assert parse(serialize(cfg)) == cfg


def test_preset_values():
    cfg = paper_preset()
    assert cfg.n_pulses == 10_000_000
    assert cfg.source.brightness == pytest.approx(5 / 82.6)
    assert cfg.source.g2_zero == 0.024
    assert cfg.source.indistinguishability == 0.98
    assert cfg.clock.rep_rate == 82.6e6
    assert cfg.detector.efficiency == 0.85
    assert (cfg.beamsplitter.reflectance, cfg.beamsplitter.transmittance,
            cfg.beamsplitter.classical_visibility) == (0.51, 0.49, 0.05)
    assert cfg.driver.min_switch_interval == 70.0
    assert cfg.demux.switch_period_cycles == 6


def test_zero_pulses_names_the_field():
    with pytest.raises(ConfigError) as exc:
        parse("[run]\nn_pulses = 0\n")
    assert exc.value.problems == ["[run] n_pulses: must be >= 1, got 0"]


def test_every_problem_is_listed():
    text = "[run]\nn_pulses = x\nbogus = 1\n[demux]\nper_pass_transmission = 2\n[nope]\na = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse(text)
    joined = "\n".join(exc.value.problems)
    assert "[run] n_pulses: cannot parse 'x'" in joined
    assert "[run] bogus: unknown key" in joined
    assert "[nope] unknown section" in joined


def test_component_invariants_are_reported():
    with pytest.raises(ConfigError, match=r"\[demux\]"):
        parse("[demux]\nper_pass_transmission = 2\n")
    with pytest.raises(ConfigError, match="round_trip_ns"):
        parse("[demux]\nround_trip_ns = 14.0\n")
    with pytest.raises(ConfigError, match="hom_pairs"):
        parse("[run]\nhom_pairs = 1-5\n")


def test_count_rate_sets_brightness():
    cfg = parse("[source]\ncount_rate_hz = 8.26e6\n")
    assert cfg.source.brightness == pytest.approx(0.1)
    corrected = parse("[source]\ncount_rate_hz = 8.26e6\ncorrect_for_detector_efficiency = true\n")
    assert corrected.source.brightness == pytest.approx(0.1 / 0.85)
    explicit = parse("[source]\ncount_rate_hz = 8.26e6\nbrightness = 0.2\n")
    assert explicit.source.brightness == 0.2


def test_overrides_and_load(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(serialize(RunConfig()))
    cfg = apply_overrides(load(path), ["run.seed=7", "detector.dead_time_ns=20"])
    assert cfg.seed == 7 and cfg.detector.dead_time == 20.0
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["seed=7"])
