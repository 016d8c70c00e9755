from dataclasses import replace

import numpy as np
import pytest

from loopdemux import pipeline as pl
from loopdemux.clock_source import BLOCK_PULSES
from loopdemux.config import RunConfig, apply_overrides
from loopdemux.loop_demux import DemuxConfig


def small(n=200_000, seed=42, **overrides):
    cfg = RunConfig().with_run(n_pulses=n, seed=seed)
    return apply_overrides(cfg, [f"{k}={v}" for k, v in overrides.items()])


def test_shard_bounds_are_block_aligned_and_cover_the_run():
    n = 5 * BLOCK_PULSES + 123
    for shards in (1, 2, 3, 6, 50):
        bounds = pl.shard_bounds(n, shards)
        assert bounds[0][0] == 0 and bounds[-1][1] == n
        assert all(a % BLOCK_PULSES == 0 for a, _ in bounds)
        assert all(b == c for (_, b), (c, _) in zip(bounds, bounds[1:]))


@pytest.mark.parametrize("shards, workers", [(3, 1), (4, 2)])
def test_sharded_run_equals_unsharded(shards, workers):
    cfg = small(300_000)
    ref = pl.measure(pl.simulate_run(cfg))
    got = pl.measure(pl.simulate_run(cfg, shards=shards, workers=workers))
    assert ref.keys() == got.keys()
    for name in ref:
        assert ref[name] == got[name], name


def test_seed_changes_output():
    a = pl.measure(pl.simulate_run(small(100_000, seed=1)))
    b = pl.measure(pl.simulate_run(small(100_000, seed=2)))
    assert a["channel_1"] != b["channel_1"]


def test_derived_seeds_are_distinct():
    names = ["channel_1", "channel_2", "source_hbt", "hom_12"]
    seeds = {pl.derive_seed(42, n) for n in names}
    assert len(seeds) == len(names)
    assert pl.derive_seed(42, "channel_1") == pl.derive_seed(42, "channel_1")


def test_ideal_rates_recover_per_burst_probability():
    """Lossless loop, perfect detectors: each channel clicks with probability P(>=1 photon)."""
    n = 600_000
    cfg = small(n, **{"source.g2_zero": 0.0, "source.brightness": 0.05,
                      "detector.efficiency": 1.0})
    cfg = replace(cfg, demux=DemuxConfig.ideal())
    res = pl.simulate_run(cfg)
    streams = pl.measure(res)
    info = pl.RunInfo.from_config(cfg)
    out = pl.analyze_rates(streams, info)
    # per burst every channel clicks independently with probability B
    assert out.summary["p_per_burst"] == pytest.approx(0.05, rel=0.05)
    p = out.summary["p"]
    expected = 0.05 * 4 / 6
    n_clicks = sum(len(streams[f"channel_{c}"]) for c in range(1, 5))
    assert abs(n_clicks - 4 * info.n_bursts * 0.05) < 5 * np.sqrt(4 * info.n_bursts * 0.05)
    assert p == pytest.approx(expected, rel=0.05)
    assert out.summary["e_corrected"] == pytest.approx(1.0, rel=0.05)


def test_run_info_round_trip():
    info = pl.RunInfo.from_config(small())
    assert pl.RunInfo.from_dict(info.as_dict()) == info
    assert info.duty == pytest.approx(4 / 6)


def test_empty_run_gives_zeroed_summaries():
    cfg = small(10_000, **{"source.brightness": 0.0, "source.g2_zero": 0.0})
    streams = pl.measure(pl.simulate_run(cfg))
    assert all(len(s) == 0 for s in streams.values())
    info = pl.RunInfo.from_config(cfg)
    auto = pl.analyze_auto(streams, info)
    hom = pl.analyze_hom(streams, info)
    rates = pl.analyze_rates(streams, info)
    assert auto.summary["g2"] == 0.0
    assert hom.summary["pooled"]["hom_corrected"] == 0.0
    assert rates.summary["p"] == 0.0
    assert auto.warnings and hom.warnings and rates.warnings
