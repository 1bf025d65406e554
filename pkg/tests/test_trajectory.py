import numpy as np
import pandas as pd
import pytest

from exogait import exceptions
from exogait.gait_data import CHANNELS, Channel, Dataset, Side, SpeedLevel
from exogait.key_events import KeyEvent, KeyEventSet, default_templates
from exogait.regression import predict_cycle_time_personalized, predict_cycle_time_standard
from exogait.trajectory import (
    GaitPattern,
    PatternKind,
    SampledTrajectory,
    TrajectorySpline,
    build_spline,
    export_pattern,
    export_plot_data,
    generate_personalized,
    generate_standard,
    pick_random_pattern,
    quintic_segment,
    sample_pattern,
)
from tests import builders


def sine_events(cycle_time=1.0, times=(0.0, 25.0, 50.0, 75.0)) -> KeyEventSet:
    """
    Exact events of y = 20 sin(2 pi t / 100) with derivatives in unit/s.
    """
    w = 2 * np.pi / 100
    scale = 100.0 / cycle_time
    events = [
        KeyEvent(t, 20 * np.sin(w * t), 20 * w * scale * np.cos(w * t), -20 * (w * scale) ** 2 * np.sin(w * t), str(t))
        for t in times
    ]
    return KeyEventSet(Channel.KneeFlexExt, Side.Right, events, cycle_time)


def segment_end(segment, cycle_time):
    """
    Position, velocity and acceleration at the end of a segment, in unit, unit/s and unit/s².
    """
    c = segment.coefficients
    scale = 100.0 / (cycle_time * segment.length)
    return (
        float(np.sum(c)),
        float(np.dot(np.arange(6), c)) * scale,
        float(np.dot([0, 0, 2, 6, 12, 20], c)) * scale ** 2,
    )


@pytest.fixture(scope="module")
def labeled():
    return builders.labeled_dataset(3, sides=(Side.Right, Side.Left))


def test_quintic_segment_matches_both_ends():
    start = KeyEvent(10.0, 2.0, 30.0, -400.0, "a")
    end = KeyEvent(40.0, -5.0, -10.0, 250.0, "b")
    s = quintic_segment(start, end, 40.0, 1.3)
    assert s.length == 30.0
    assert segment_end(s, 1.3) == pytest.approx((-5.0, -10.0, 250.0))


def test_quintic_segment_rejects_short_spans():
    with pytest.raises(exceptions.IllConditionedSegment):
        quintic_segment(KeyEvent(10.0, 0, 0, 0, "a"), KeyEvent(10.5, 0, 0, 0, "b"), 10.5, 1.0)


def test_spline_interpolates_every_event():
    events = sine_events(1.2)
    spline = build_spline(events)
    assert spline.knots.tolist() == [0.0, 25.0, 50.0, 75.0, 100.0]
    for e in events.events:
        assert spline.position(e.t) == pytest.approx(e.y, abs=1e-12)
        assert spline.velocity(e.t) == pytest.approx(e.ydot, rel=1e-12, abs=1e-9)
        assert spline.acceleration(e.t) == pytest.approx(e.yddot, rel=1e-12, abs=1e-9)


def test_spline_is_twice_differentiable_across_the_wrap():
    events = KeyEventSet(
        Channel.HipFlexExt,
        Side.Right,
        [KeyEvent(0.0, 3.0, 50.0, 10.0, "a"), KeyEvent(40.0, -12.0, 0.0, 300.0, "b"),
         KeyEvent(85.0, 30.0, 0.0, -500.0, "c")],
        1.1,
    )
    spline = build_spline(events)
    first = events.events[0]
    assert segment_end(spline.segments[-1], 1.1) == pytest.approx((first.y, first.ydot, first.yddot))
    assert spline.position(100.0) == spline.position(0.0)
    assert spline.position(-15.0) == pytest.approx(spline.position(85.0))


def test_spline_reconstructs_a_sine():
    spline = build_spline(sine_events())
    t = np.linspace(0, 100, 1001)
    error = np.max(np.abs(spline.position(t) - 20 * np.sin(2 * np.pi * t / 100)))
    assert error / 20 < 1e-3


def test_spline_cycle_time_scales_the_derivatives():
    spline = build_spline(sine_events(1.0))
    slower = spline.with_cycle_time(2.0)
    assert isinstance(slower, TrajectorySpline)
    assert slower.position(33.0) == spline.position(33.0)
    assert slower.velocity(33.0) == pytest.approx(spline.velocity(33.0) / 2)
    assert slower.acceleration(33.0) == pytest.approx(spline.acceleration(33.0) / 4)
    with pytest.raises(exceptions.InvariantViolation):
        spline.with_cycle_time(0.0)


def test_sampled_trajectory_passes_through_the_samples():
    c = builders.cycle(Channel.HipFlexExt)
    trajectory = SampledTrajectory.from_cycle(c)
    np.testing.assert_allclose(trajectory.to_cycle(101).samples, c.samples, atol=1e-12)
    t = np.linspace(0, 100, 101)
    two_seconds = SampledTrajectory.from_cycle(builders.cycle(Channel.KneeFlexExt, 20 * np.sin(2 * np.pi * t / 100)), 2.0)
    expected = 20 * 2 * np.pi / 100 * np.cos(2 * np.pi * t / 100) * 50
    assert np.max(np.abs(two_seconds.velocity(t) - expected)) / np.max(expected) < 1e-3


def test_pattern_invariants():
    channels = {ch: SampledTrajectory.from_cycle(builders.cycle(ch)) for ch in CHANNELS}
    with pytest.raises(exceptions.InvariantViolation):
        GaitPattern(PatternKind.Standard, {Channel.KneeFlexExt: channels[Channel.KneeFlexExt]}, 1.2, 4.0)
    with pytest.raises(exceptions.InvariantViolation):
        GaitPattern(PatternKind.Standard, channels, 0.0, 4.0)
    p = GaitPattern("Standard", channels, 1.0, 4.0)
    assert p.kind is PatternKind.Standard
    assert {t.cycle_time for t in p.channels.values()} == {1.0}
    assert {t.cycle_time for t in p.with_cycle_time(1.5).channels.values()} == {1.5}
    assert p.subject_hash() == ""


def test_subject_hash_ignores_the_id():
    channels = {ch: SampledTrajectory.from_cycle(builders.cycle(ch)) for ch in CHANNELS}
    a = GaitPattern(PatternKind.Random, channels, 1.2, 4.0, builders.subject("S01"))
    b = GaitPattern(PatternKind.Random, channels, 1.2, 4.0, builders.subject("S99"))
    c = GaitPattern(PatternKind.Random, channels, 1.2, 4.0, builders.subject("S01", age=40.0))
    assert a.subject_hash() == b.subject_hash() != c.subject_hash()


def test_personalized_pattern(bank, synthetic):
    subject = synthetic.subjects[0]
    v = subject.self_selected_speed * 0.55
    p = generate_personalized(bank, subject, v)
    assert p.kind is PatternKind.Personalized
    assert p.source is subject
    assert p.cycle_time == predict_cycle_time_personalized(v, subject.age)
    assert all(isinstance(p[ch], TrajectorySpline) for ch in CHANNELS)
    recorded = synthetic.select(subject_id=subject.id, channel=Channel.KneeFlexExt, side=Side.Right,
                                level=SpeedLevel.L2)[0]
    predicted = p[Channel.KneeFlexExt].to_cycle(synthetic.grid_size)
    assert np.sqrt(np.mean((predicted.samples - recorded.samples) ** 2)) < 0.1


def test_standard_pattern_averages_both_legs(labeled):
    p = generate_standard(labeled, 4.0, 1.75)
    assert p.kind is PatternKind.Standard
    assert p.source is None
    assert p.cycle_time == predict_cycle_time_standard(4.0, 1.75)
    for ch in CHANNELS:
        # left frontal cycles are mirrored back before averaging
        np.testing.assert_allclose(p[ch].to_cycle(101).samples, builders.waveform(ch), atol=1e-9)


def test_standard_pattern_needs_labeled_cycles():
    s = builders.subject()
    ds = Dataset([s], [builders.cycle(ch) for ch in CHANNELS], 101)
    with pytest.raises(exceptions.EmptyInput):
        generate_standard(ds, 4.0, 1.75)
    with pytest.raises(exceptions.EmptyInput):
        pick_random_pattern(ds, SpeedLevel.L1, seed=0)


def test_random_pattern_is_reproducible(labeled):
    a = pick_random_pattern(labeled, SpeedLevel.L1, seed=11)
    b = pick_random_pattern(labeled, "L1", seed=11)
    assert a.kind is PatternKind.Random
    assert a.source.id == b.source.id
    assert a.source in labeled.subjects
    assert a.cycle_time == pytest.approx(1.4)
    assert a.speed == pytest.approx(4.5 * 0.40)
    picks = {pick_random_pattern(labeled, SpeedLevel.L3, seed=s).source.id for s in range(20)}
    assert picks <= set(labeled.subject_ids)
    assert len(picks) > 1


def test_sample_pattern(labeled):
    p = generate_standard(labeled, 4.0, 1.75).with_cycle_time(1.0)
    series = sample_pattern(p, 0.01, n_cycles=2)
    assert len(series) == 200
    assert list(series.columns[:4]) == ["time", "HipAbAd_pos", "HipAbAd_vel", "HipAbAd_acc"]
    assert series["time"].iloc[1] == pytest.approx(0.01)
    np.testing.assert_allclose(series["KneeFlexExt_pos"].iloc[100:].values, series["KneeFlexExt_pos"].iloc[:100].values,
                               atol=1e-9)
    shifted = sample_pattern(p, 0.01, n_cycles=1, phase=50.0)
    assert shifted["HipFlexExt_pos"].iloc[0] == pytest.approx(p[Channel.HipFlexExt].position(50.0))
    with pytest.raises(exceptions.InvariantViolation):
        sample_pattern(p, 0.0)


def test_export_pattern(tmp_path, labeled):
    p = pick_random_pattern(labeled, SpeedLevel.L2, seed=0)
    series = sample_pattern(p, 0.02)
    path = str(tmp_path / "random.csv")
    export_pattern(series, p, path)
    with open(path) as f:
        header = [next(f) for _ in range(4)]
    assert header[0] == "# kind = Random\n"
    assert header[3] == f"# subject = {p.subject_hash()}\n"
    loaded = pd.read_csv(path, comment="#")
    assert list(loaded.columns) == list(series.columns)
    np.testing.assert_allclose(loaded.values, series.values, rtol=1e-8, atol=1e-8)


def test_export_plot_data(tmp_path, labeled):
    p = generate_standard(labeled, 4.0, 1.75)
    paths = export_plot_data(p, str(tmp_path / "plot.csv"), default_templates(), grid_size=51)
    assert paths == [str(tmp_path / "plot.csv"), str(tmp_path / "plot.markers.csv")]
    values = pd.read_csv(paths[0], comment="#")
    assert list(values.columns) == ["percent"] + [ch.value for ch in CHANNELS]
    assert len(values) == 51
    markers = pd.read_csv(paths[1], comment="#")
    assert len(markers) == sum(len(t.detectors) for t in default_templates().values())
    heel_strike = markers[(markers["channel"] == "HipFlexExt") & (markers["detector"] == "heel_strike")]
    assert heel_strike["t"].tolist() == [0.0]
