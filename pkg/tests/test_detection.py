import numpy as np
import pytest

from loopdemux.loop_demux import OutputBatch
from loopdemux.detection import (BeamsplitterModel, DetectorModel, TimeTagStream,
                                 apply_dead_time, detect, hom_mix, quantise)

IDEAL = DetectorModel(1.0)


def batch(times, survival=None, modes=None, channel=1):
    times = np.asarray(times, dtype=float)
    n = times.size
    survival = np.ones(n) if survival is None else survival
    modes = np.arange(n) if modes is None else modes
    return OutputBatch(channel, times, np.arange(n), times, modes, survival, np.zeros(n, bool))


def test_lossless_detection_is_identity_plus_delay():
    t = np.arange(1, 1001) * 72.639
    s = detect(batch(t), 3.25, IDEAL, seed=1)
    np.testing.assert_allclose(s.tags, quantise(t + 3.25))
    assert s.channel_id == 1


def test_efficiency_within_binomial_bounds():
    n = 1_000_000
    s = detect(batch(np.arange(n) * 10.0), 0.0, DetectorModel(0.85), seed=2)
    sigma = np.sqrt(n * 0.85 * 0.15)
    assert abs(len(s) - 850_000) < 4 * sigma


def test_survival_multiplies_efficiency():
    n = 200_000
    s = detect(batch(np.arange(n) * 10.0, np.full(n, 0.5)), 0.0, DetectorModel(0.8), seed=3)
    assert abs(len(s) - 0.4 * n) < 5 * np.sqrt(n * 0.4 * 0.6)


def test_coincident_photons_give_one_click():
    s = detect(batch([5.0, 5.0, 5.0, 9.0]), 0.0, IDEAL, seed=0)
    np.testing.assert_allclose(s.tags, [5.0, 9.0])


def test_dead_time_is_greedy_in_time_order():
    t = np.array([0.0, 10.0, 25.0, 31.0, 60.0])
    np.testing.assert_allclose(apply_dead_time(t, 20.0), [0.0, 25.0, 60.0])
    np.testing.assert_allclose(apply_dead_time(t, 0.0), t)


def test_jitter_spreads_tags():
    n = 50_000
    t = np.arange(n) * 100.0
    s = detect(batch(t), 0.0, DetectorModel(1.0, jitter_sigma=0.05), seed=4)
    assert np.std(s.tags - t) == pytest.approx(0.05, rel=0.05)


def test_dark_counts_add_clicks():
    s = detect(batch([0.0, 1e9]), 0.0, DetectorModel(1.0, dark_count_rate=1e3), seed=5)
    # about 1000 dark counts in one second
    assert 850 < len(s) - 2 < 1150


def test_detect_is_deterministic():
    b = batch(np.arange(1000) * 12.0, np.full(1000, 0.3))
    assert detect(b, 1.0, DetectorModel(0.85), 9) == detect(b, 1.0, DetectorModel(0.85), 9)


def test_stream_csv_round_trip(tmp_path):
    s = TimeTagStream("channel_1", [0.001, 12.107, 1e6 + 0.5])
    s.to_csv(tmp_path / "channel_1.csv")
    assert TimeTagStream.from_csv(tmp_path / "channel_1.csv") == s
    empty = TimeTagStream("x", [])
    empty.to_csv(tmp_path / "x.csv")
    assert len(TimeTagStream.from_csv(tmp_path / "x.csv")) == 0


def test_stream_rejects_unsorted_tags():
    with pytest.raises(ValueError):
        TimeTagStream("a", [1.0, 1.0])


def test_beamsplitter_validation():
    with pytest.raises(ValueError):
        BeamsplitterModel(0.6, 0.5)
    bs = BeamsplitterModel(0.5, 0.5, 0.0)
    assert bs.different_port_probability(1.0) == pytest.approx(0.0)
    assert bs.different_port_probability(0.0) == pytest.approx(0.5)


def _pair_split_fraction(bs, overlap, n=200_000, seed=7):
    t = np.arange(n) * 100.0
    c, d = hom_mix(batch(t), batch(t, channel=2), bs, lambda a, b: np.full(a.shape, overlap),
                   seed)
    # each pair leaves one click on each port when it separates, one click otherwise
    split = np.intersect1d(c.tags, d.tags).size
    return split / n


@pytest.mark.parametrize("overlap", [0.0, 0.5, 0.98])
def test_pair_separation_probability(overlap):
    bs = BeamsplitterModel(0.51, 0.49, 0.05)
    n = 200_000
    p = float(bs.different_port_probability(overlap))
    got = _pair_split_fraction(bs, overlap, n)
    assert abs(got - p) < 5 * np.sqrt(p * (1 - p) / n) + 1e-6


def test_lone_photons_route_by_reflectance():
    n = 200_000
    bs = BeamsplitterModel(0.7, 0.3, 0.0)
    c, d = hom_mix(batch(np.arange(n) * 10.0), OutputBatch.empty(), bs, None, seed=3)
    assert len(c) + len(d) == n
    assert abs(len(c) - 0.7 * n) < 5 * np.sqrt(n * 0.21)
    c2, _ = hom_mix(OutputBatch.empty(), batch(np.arange(n) * 10.0), bs, None, seed=3)
    assert abs(len(c2) - 0.3 * n) < 5 * np.sqrt(n * 0.21)


def test_photons_outside_window_do_not_interfere():
    n = 50_000
    bs = BeamsplitterModel(0.5, 0.5, 0.0)
    t = np.arange(n) * 100.0
    c, d = hom_mix(batch(t), batch(t + 5.0, channel=2), bs, lambda a, b: np.ones(a.shape),
                   seed=1, window=1.0)
    assert len(c) + len(d) == 2 * n
