import numpy as np
import pytest

from exogait import exceptions
from exogait.gait_data import CHANNELS, Channel, Side, SpeedLevel
from exogait.key_events import Extremum, Signal, default_templates, extract_events
from exogait.regression import Parameter, PredictorVector, TargetId
from exogait.synthetic import (
    BASE_EXTREMA,
    CosineChain,
    synthetic_dataset,
    synthetic_event_laws,
    synthetic_events,
    synthetic_subjects,
)


def test_cosine_chain_shape():
    chain = CosineChain(BASE_EXTREMA[Channel.KneeFlexExt])
    for t, y in BASE_EXTREMA[Channel.KneeFlexExt]:
        assert chain.value(t) == pytest.approx(y)
        assert chain.derivative(t) == pytest.approx(0.0, abs=1e-12)
    # periodic across the wrap
    assert chain.value(0.0) == pytest.approx(chain.value(100.0))
    assert chain.value(-3.0) == pytest.approx(chain.value(97.0))
    assert chain.event_times(Signal.Position, Extremum.Max) == [14.0, 71.0]
    assert chain.event_times(Signal.Velocity, Extremum.Max) == [7.0, 55.5]
    assert chain.event_times(Signal.Velocity, Extremum.Min) == [27.0, 85.5]
    for t in chain.event_times(Signal.Velocity, Extremum.Min):
        assert chain.second_derivative(t) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(exceptions.InvariantViolation):
        CosineChain(((10.0, 1.0), (40.0, 0.0), (70.0, 1.0)))


def test_event_laws():
    laws = synthetic_event_laws()
    templates = default_templates()
    assert len(laws) == 4 * sum(len(t.detectors) for t in templates.values())
    heel_strike = laws[TargetId(Channel.HipFlexExt, "heel_strike", Parameter.t)]
    assert heel_strike.coefficients.tolist() == [0.0, 0, 0, 0, 0, 0, 0]
    extension = laws[TargetId(Channel.KneeFlexExt, "stance_extension", Parameter.t)]
    assert extension.coefficients.tolist() == [40.0, 0, 0, 0, 0, 0, 0]
    velocity = laws[TargetId(Channel.KneeFlexExt, "swing_extension_velocity", Parameter.yddot)]
    np.testing.assert_allclose(velocity.coefficients, 0.0, atol=1e-9)
    stance = laws[TargetId(Channel.KneeFlexExt, "stance_flexion", Parameter.ydot)]
    assert np.all(stance.coefficients == 0.0)
    knee_y = laws[TargetId(Channel.KneeFlexExt, "stance_flexion", Parameter.y)]
    slow = PredictorVector(v=2.0, h=1.7, w=70.0, a=45.0, s=1)
    fast = PredictorVector(v=3.0, h=1.7, w=70.0, a=45.0, s=1)
    assert knee_y(fast) - knee_y(slow) == pytest.approx(3.0)


def test_subjects_are_reproducible():
    a, b = synthetic_subjects(6, seed=2), synthetic_subjects(6, seed=2)
    assert a == b
    assert a != synthetic_subjects(6, seed=3)
    assert [int(s.gender) for s in a] == [1, -1, 1, -1, 1, -1]
    assert all(20 <= s.age <= 75 and 1.55 <= s.height <= 1.9 for s in a)


def test_dataset_layout():
    ds = synthetic_dataset(n_subjects=3, seed=1, grid_size=61)
    assert ds.grid_size == 61
    assert len(ds.cycles) == 3 * 3 * len(CHANNELS) * 2
    assert ds.levels() == [SpeedLevel.L1, SpeedLevel.L2, SpeedLevel.L3]
    s = ds.subjects[0]
    for ch in CHANNELS:
        right = ds.cycle(s.id, ch, Side.Right, SpeedLevel.L2)
        left = ds.cycle(s.id, ch, Side.Left, SpeedLevel.L2)
        np.testing.assert_array_equal(left.samples, -right.samples if ch.frontal else right.samples)
        assert right.speed == pytest.approx(s.self_selected_speed * 0.55)
        assert right.speed_fraction == 55.0


def test_noise_keeps_the_cycles_closed():
    clean = synthetic_dataset(n_subjects=2, seed=1)
    noisy = synthetic_dataset(n_subjects=2, seed=1, noise=0.5)
    a, b = clean.cycles[0], noisy.cycles[0]
    assert not np.array_equal(a.samples, b.samples)
    assert np.std(a.samples - b.samples) == pytest.approx(0.5, rel=0.5)
    assert b.samples[-1] == b.samples[0]


def test_recorded_cycles_carry_the_law_events():
    templates = default_templates()
    laws = synthetic_event_laws(templates)
    ds = synthetic_dataset(n_subjects=2, seed=4)
    s = ds.subjects[1]
    v = s.self_selected_speed * 0.70
    expected = synthetic_events(laws, templates, s, v)
    for ch in CHANNELS:
        extracted = extract_events(ds.cycle(s.id, ch, Side.Right, SpeedLevel.L3), templates[ch])
        assert extracted.cycle_time == pytest.approx(expected[ch].cycle_time)
        for a, b in zip(extracted.events, expected[ch].events):
            assert a.detector_id == b.detector_id
            assert a.t == pytest.approx(b.t, abs=0.3)
            assert a.y == pytest.approx(b.y, abs=0.3)
