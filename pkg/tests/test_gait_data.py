import math
import os

import numpy as np
import pytest
import toml

from exogait import exceptions
from exogait.gait_data import (
    CHANNELS,
    Channel,
    Dataset,
    Gender,
    MarkerTrace,
    Side,
    SpeedLevel,
    canonical_cycle,
    derive_pelvis_lateral,
    describe_subjects,
    ensemble_average,
    export_dataset,
    filter_speed_levels,
    ingest_dataset,
    load_marker_trace,
    resample_cycle,
    speed_level_statistics,
)
from tests import builders


@pytest.mark.parametrize(
    "overrides",
    [{"age": 0}, {"height": 0.9}, {"height": 2.5}, {"mass": 15}, {"gender": 0}, {"self_selected_speed": -1}],
)
def test_subject_ranges(overrides):
    with pytest.raises(exceptions.InvariantViolation):
        builders.subject(**overrides)


def test_subject_gender_coding():
    s = builders.subject(gender=-1)
    assert s.gender is Gender.Female
    assert s.to_dict()["gender"] == -1


def test_cycle_invariants():
    with pytest.raises(exceptions.InvariantViolation):
        builders.cycle(samples=np.zeros(50))
    y = builders.waveform(Channel.KneeFlexExt)
    y[10] = np.nan
    with pytest.raises(exceptions.InvariantViolation) as e:
        builders.cycle(samples=y)
    assert e.value.detail["sample"] == "10"
    with pytest.raises(exceptions.InvariantViolation):
        builders.cycle(speed=0.0)
    with pytest.raises(exceptions.InvariantViolation):
        builders.cycle(cycle_time=-1.0)


def test_cycle_samples_are_read_only():
    c = builders.cycle()
    with pytest.raises(ValueError):
        c.samples[0] = 1.0


def test_dataset_requires_every_channel_for_some_side():
    s = builders.subject()
    cycles = [c for c in builders.labeled_cycles(s) if c.channel is not Channel.PelvisLateral or c.speed_level is not SpeedLevel.L2]
    with pytest.raises(exceptions.InvariantViolation) as e:
        Dataset([s], cycles, 101)
    assert e.value.detail["channel"] == "PelvisLateral"
    assert e.value.detail["condition"] == "L2"


def test_dataset_accepts_one_complete_side():
    s = builders.subject()
    right = builders.labeled_cycles(s, (Side.Right,))
    left_knee = [c for c in builders.labeled_cycles(s, (Side.Left,)) if c.channel is Channel.KneeFlexExt]
    ds = Dataset([s], right + left_knee, 101)
    assert len(ds.select(side=Side.Left)) == 3


def test_dataset_rejects_unknown_subjects_and_grids():
    s = builders.subject()
    with pytest.raises(exceptions.InvariantViolation):
        Dataset([s], builders.labeled_cycles(builders.subject("S02")), 101)
    with pytest.raises(exceptions.InvariantViolation):
        Dataset([s], builders.labeled_cycles(s), 201)
    with pytest.raises(exceptions.InvariantViolation):
        Dataset([s, s], [], 101)


def test_dataset_rejects_speed_outside_the_level_band():
    s = builders.subject()
    cycles = builders.labeled_cycles(s)
    cycles[0] = cycles[0].replace(speed=cycles[0].speed * 1.2)
    with pytest.raises(exceptions.InvariantViolation):
        Dataset([s], cycles, 101)


def test_dataset_helpers():
    ds = builders.labeled_dataset(3)
    assert ds.subject_ids == ["S01", "S02", "S03"]
    assert ds.levels() == list(SpeedLevel)
    assert ds.without_subject("S02").subject_ids == ["S01", "S03"]
    assert {c.subject_id for c in ds.only_subject("S02").cycles} == {"S02"}
    c = ds.cycle("S03", Channel.HipAbAd, Side.Right, SpeedLevel.L3)
    assert c.speed == pytest.approx(4.5 * 0.7)
    with pytest.raises(KeyError):
        ds.cycle("S03", Channel.HipAbAd, Side.Left, SpeedLevel.L3)
    with pytest.raises(KeyError):
        ds.subject("S09")


def test_resample_cycle_keeps_knots_and_shape():
    t = np.linspace(0, 1, 51)
    y = 3 + np.cos(2 * np.pi * t) + 0.5 * np.sin(4 * np.pi * t)
    fine = resample_cycle(y, 201)
    assert fine.size == 201
    assert np.allclose(fine[::4], y, atol=1e-12)
    exact = 3 + np.cos(2 * np.pi * np.linspace(0, 1, 201)) + 0.5 * np.sin(4 * np.pi * np.linspace(0, 1, 201))
    assert np.max(np.abs(fine - exact)) < 1e-3
    assert fine[0] == pytest.approx(fine[-1])


def test_canonical_cycle_mirrors_left_frontal_channels():
    left = builders.cycle(Channel.HipAbAd, side=Side.Left)
    right = canonical_cycle(left)
    assert right.side is Side.Right
    assert np.array_equal(right.samples, -left.samples)

    knee = builders.cycle(Channel.KneeFlexExt, side=Side.Left)
    assert np.array_equal(canonical_cycle(knee).samples, knee.samples)
    r = builders.cycle()
    assert canonical_cycle(r) is r


def test_ensemble_average():
    a = builders.cycle(samples=np.full(101, 2.0), speed=1.8, cycle_time=1.0)
    b = builders.cycle(samples=np.full(101, 4.0), speed=2.2, cycle_time=1.4, subject_id="S02")
    avg = ensemble_average([a, b])
    assert np.allclose(avg.samples, 3.0)
    assert avg.speed == pytest.approx(2.0)
    assert avg.cycle_time == pytest.approx(1.2)
    assert avg.subject_id == "ensemble"

    with pytest.raises(exceptions.MixedChannels):
        ensemble_average([a, builders.cycle(Channel.HipAbAd)])
    with pytest.raises(exceptions.GridMismatch):
        ensemble_average([a, builders.cycle(grid_size=201)])
    with pytest.raises(exceptions.EmptyInput):
        ensemble_average([])


def _unlabeled(fractions=(40.0, 55.0, 70.0, 100.0), sss=4.5):
    s = builders.subject(self_selected_speed=sss)
    cycles = []
    for fraction in fractions:
        for ch in CHANNELS:
            cycles.append(builders.cycle(ch, speed=sss * fraction / 100, fraction=fraction))
    return Dataset([s], cycles, 101)


def test_filter_speed_levels_labels_and_drops():
    ds = filter_speed_levels(_unlabeled())
    assert {c.speed_level for c in ds.cycles} == set(SpeedLevel)
    assert len(ds.cycles) == 3 * len(CHANNELS)
    l1 = ds.select(level=SpeedLevel.L1)
    assert all(c.speed == pytest.approx(1.8) for c in l1)
    # idempotent
    again = filter_speed_levels(ds)
    assert [(c.channel, c.speed_level) for c in again.cycles] == [(c.channel, c.speed_level) for c in ds.cycles]


def test_filter_speed_levels_applies_the_treadmill_limit():
    # L3 of a 5 km/h walker is 3.5 km/h
    ds = filter_speed_levels(_unlabeled(sss=5.0))
    assert ds.levels() == [SpeedLevel.L1, SpeedLevel.L2]


def test_filter_speed_levels_needs_survivors():
    with pytest.raises(exceptions.EmptyResult):
        filter_speed_levels(_unlabeled(fractions=(100.0,)))


def test_filter_speed_levels_rejects_speeds_off_the_declared_fraction():
    s = builders.subject()
    cycles = [builders.cycle(ch, speed=2.5, fraction=40.0) for ch in CHANNELS]
    cycles += [builders.cycle(ch, speed=2.475, fraction=55.0) for ch in CHANNELS]
    ds = filter_speed_levels(Dataset([s], cycles, 101))
    assert ds.levels() == [SpeedLevel.L2]


def _sway_trace(strides_right=4, rate=100.0, frames_per_stride=120):
    n = (strides_right + 1) * frames_per_stride + 1
    k = np.arange(n)
    sway = 20 * np.sin(2 * np.pi * k / frames_per_stride)
    markers = {
        "RASI": np.column_stack([sway + 100, np.zeros(n), np.zeros(n)]),
        "LASI": np.column_stack([sway - 100, np.zeros(n), np.zeros(n)]),
    }
    events = {
        Side.Right: np.arange(strides_right + 1) * frames_per_stride,
        Side.Left: np.arange(strides_right) * frames_per_stride + frames_per_stride // 2,
    }
    return MarkerTrace("S01", markers, rate, events, speed=1.8, speed_fraction=40.0)


def test_derive_pelvis_lateral():
    cycles = {c.side: c for c in derive_pelvis_lateral(_sway_trace(), 101)}
    expected = 20 * np.sin(2 * np.pi * np.linspace(0, 1, 101))
    assert cycles[Side.Right].cycle_time == pytest.approx(1.2)
    assert np.max(np.abs(cycles[Side.Right].samples - expected)) < 0.05
    assert np.max(np.abs(cycles[Side.Left].samples + expected)) < 0.05
    assert cycles[Side.Right].channel is Channel.PelvisLateral


def test_derive_pelvis_lateral_errors():
    trace = _sway_trace()
    with pytest.raises(exceptions.MissingMarker):
        derive_pelvis_lateral(trace, 101, ["RASI", "SACR"])
    short = MarkerTrace("S01", trace.markers, 100.0, {Side.Right: [0, 120, 240]})
    with pytest.raises(exceptions.InsufficientCycles):
        derive_pelvis_lateral(short, 101)
    with pytest.raises(exceptions.InvariantViolation):
        MarkerTrace("S01", trace.markers, 100.0, {Side.Right: [0, 240, 120]})


def test_load_marker_trace(tmp_path):
    builders.write_raw_database(str(tmp_path), ids=("S01",))
    markers = builders.RAW_SCHEMA["markers"]
    trace = load_marker_trace(
        str(tmp_path / "S01_T01_mkr.csv"), markers, "S01", str(tmp_path / "S01_T01_events.csv"), 1.8, 40.0
    )
    assert sorted(trace.markers) == ["LASI", "RASI"]
    assert trace.events[Side.Right].tolist() == [0, 120, 240, 360, 480]
    assert trace.lateral_axis == 0

    with pytest.raises(exceptions.MissingMarker):
        load_marker_trace(str(tmp_path / "S01_T01_mkr.csv"), {**markers, "labels": ["SACR"]}, "S01",
                          str(tmp_path / "S01_T01_events.csv"))
    with pytest.raises(exceptions.MissingFile):
        load_marker_trace(str(tmp_path / "S01_T01_mkr.csv"), markers, "S01", str(tmp_path / "missing.csv"))


def test_ingest_raw_database(tmp_path):
    root = builders.write_raw_database(str(tmp_path / "db"))
    ds = ingest_dataset(root, builders.RAW_SCHEMA)
    assert ds.subject_ids == ["S01", "S02"]
    s1 = ds.subject("S01")
    assert s1.height == pytest.approx(1.76)
    assert s1.self_selected_speed == pytest.approx(4.5)
    assert ds.subject("S02").gender is Gender.Female
    # 4 trials x 2 sides x 4 channels per subject
    assert len(ds.cycles) == 2 * 4 * 2 * 4
    assert all(c.grid_size == 101 for c in ds.cycles)
    pelvis = [c for c in ds.cycles if c.channel is Channel.PelvisLateral]
    assert all(c.cycle_time == pytest.approx(1.2) for c in pelvis)
    knee = ds.select("S01", Channel.KneeFlexExt, Side.Right)[0]
    assert knee.cycle_time == pytest.approx(1.2)

    filtered = filter_speed_levels(ds)
    assert filtered.levels() == list(SpeedLevel)
    assert len(filtered.cycles) == 2 * 3 * 2 * 4


def test_ingest_schema_errors(tmp_path):
    root = builders.write_raw_database(str(tmp_path / "db"), ids=("S01",))
    schema = {k: v for k, v in builders.RAW_SCHEMA.items() if k != "trials"}
    with pytest.raises(exceptions.SchemaMismatch):
        ingest_dataset(root, schema)
    bad_unit = {**builders.RAW_SCHEMA, "subjects": {**builders.RAW_SCHEMA["subjects"], "height_unit": "ft"}}
    with pytest.raises(exceptions.SchemaMismatch):
        ingest_dataset(root, bad_unit)
    no_markers = {k: v for k, v in builders.RAW_SCHEMA.items() if k != "markers"}
    with pytest.raises(exceptions.SchemaMismatch):
        ingest_dataset(root, no_markers)
    with pytest.raises(exceptions.MissingFile):
        ingest_dataset(str(tmp_path / "nowhere"), builders.RAW_SCHEMA)


def test_ingest_reports_bad_rows(tmp_path):
    root = builders.write_raw_database(str(tmp_path / "db"), ids=("S01",))
    info = (tmp_path / "db" / "info.csv").read_text().replace("69.25", "heavy")
    (tmp_path / "db" / "info.csv").write_text(info)
    with pytest.raises(exceptions.SchemaMismatch) as e:
        ingest_dataset(root, builders.RAW_SCHEMA)
    assert e.value.detail["source"].endswith("info.csv:2")


def test_canonical_layout_round_trip(tmp_path):
    ds = builders.labeled_dataset(2, sides=(Side.Right, Side.Left))
    written = export_dataset(ds, str(tmp_path / "canonical"))
    assert [os.path.basename(p) for p in written] == ["subjects.toml", "cycles.csv"]
    back = ingest_dataset(str(tmp_path / "canonical"))
    assert back.subjects == ds.subjects
    assert len(back.cycles) == len(ds.cycles)
    for a, b in zip(ds.cycles, back.cycles):
        assert (a.subject_id, a.channel, a.side, a.speed_level) == (b.subject_id, b.channel, b.side, b.speed_level)
        assert np.array_equal(a.samples, b.samples)
        assert a.speed == b.speed and a.speed_fraction == b.speed_fraction


def test_canonical_layout_keeps_unlabeled_cycles(tmp_path):
    ds = _unlabeled()
    export_dataset(ds, str(tmp_path))
    back = ingest_dataset(str(tmp_path))
    assert all(c.speed_level is None for c in back.cycles)
    assert sorted({c.speed_fraction for c in back.cycles}) == [40.0, 55.0, 70.0, 100.0]


def test_canonical_layout_format_check(tmp_path):
    export_dataset(builders.labeled_dataset(1), str(tmp_path))
    meta = toml.load(str(tmp_path / "subjects.toml"))
    meta["format"] = "something-else"
    with open(str(tmp_path / "subjects.toml"), "w") as f:
        toml.dump(meta, f)
    with pytest.raises(exceptions.SchemaMismatch):
        ingest_dataset(str(tmp_path))


def test_descriptive_statistics():
    ds = builders.labeled_dataset(3)
    table = describe_subjects(ds)
    assert table.loc["age", "mean"] == pytest.approx(30.0)
    assert table.loc["height_cm", "min"] == pytest.approx(160.0)
    assert table.loc["mass", "max"] == pytest.approx(69.25)

    speeds = speed_level_statistics(ds)
    assert speeds.loc["L1", "mean"] == pytest.approx(1.8)
    assert speeds.loc["L3", "mean"] == pytest.approx(3.15)
    assert speeds.loc["L2", "std"] == pytest.approx(0.0)


def test_wbds_schema_is_complete():
    path = os.path.join(os.path.dirname(__import__("exogait").__file__), "data", "wbds_schema.toml")
    schema = toml.load(path)
    assert {"subjects", "trials", "angles", "markers"} <= set(schema)
    assert set(schema["angles"]["channels"]) == {ch.value for ch in CHANNELS}
    assert schema["subjects"]["gender_map"] == {"F": -1, "M": 1}
    assert not math.isnan(schema["markers"]["rate"])
