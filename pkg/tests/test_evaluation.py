import numpy as np
import pandas as pd
import pytest

from exogait import evaluation, exceptions
from exogait.evaluation import (
    AVERAGING_ORDER,
    EvaluationReport,
    audit_fold,
    format_table,
    load_report,
    loocv,
    report_emit,
    rmse,
)
from exogait.gait_data import CHANNELS, Channel, SpeedLevel
from exogait.key_events import default_templates
from exogait.utils import config_hash
from tests import builders


@pytest.fixture(scope="module")
def report(synthetic):
    return loocv(synthetic, default_templates(), {"seed": 0})


def test_rmse():
    a = builders.cycle(Channel.KneeFlexExt)
    assert rmse(a, a) == 0.0
    assert rmse(a, a.replace(samples=a.samples + 3.0)) == pytest.approx(3.0)
    with pytest.raises(exceptions.MixedChannels):
        rmse(a, builders.cycle(Channel.HipAbAd))
    with pytest.raises(exceptions.GridMismatch):
        rmse(a, builders.cycle(Channel.KneeFlexExt, grid_size=51))


def test_loocv_scores_every_fold(report, synthetic):
    assert report.n_folds == len(synthetic.subjects)
    assert not report.failed
    assert report.leakage_audit == {sid: True for sid in synthetic.subject_ids}
    assert report.leak_free
    assert report.averaging_order == AVERAGING_ORDER
    assert report.config_hash == config_hash({"seed": 0})
    assert sorted(report.subjects) == sorted(synthetic.subject_ids)
    assert set(report.levels[synthetic.subject_ids[0]]) == set(SpeedLevel)
    assert set(report.channels) == set(CHANNELS)


def test_personalized_patterns_beat_the_standard(report):
    for ch in CHANNELS:
        personalized, standard = report.channels[ch]
        assert personalized < 0.1, ch
    for ch in (Channel.KneeFlexExt, Channel.HipFlexExt):
        personalized, standard = report.channels[ch]
        assert personalized < standard, ch


def test_channel_scores_are_subject_means(report):
    for ch in CHANNELS:
        expected = np.mean([scores[ch][0] for scores in report.subjects.values()])
        assert report.channels[ch][0] == pytest.approx(expected)


def test_failed_folds_are_reported(monkeypatch, synthetic):
    fit_bank = evaluation.fit_bank

    def failing_fit_bank(rows, templates, **kwargs):
        if "SYN03" not in set(rows["subject_id"]):
            raise exceptions.InsufficientData({"error": "no rows"})
        return fit_bank(rows, templates, **kwargs)

    monkeypatch.setattr(evaluation, "fit_bank", failing_fit_bank)
    r = loocv(synthetic, default_templates(), {"seed": 0})
    assert r.failed
    assert list(r.failures) == ["SYN03"]
    assert r.failures["SYN03"].startswith("InsufficientData")
    assert "SYN03" not in r.subjects
    assert r.n_folds == len(synthetic.subjects)
    assert "# fold SYN03 failed: InsufficientData" in format_table(r)


def test_leaking_folds_fail_the_audit(monkeypatch):
    ds = builders.labeled_dataset(3)
    # the Standard pattern would be averaged over the held-out subject too
    monkeypatch.setattr(type(ds), "without_subject", lambda self, subject_id: self)
    r = loocv(ds, default_templates(), {"seed": 0})
    assert r.leakage_audit == {"S01": False, "S02": False, "S03": False}
    assert not r.leak_free
    assert sorted(r.failures) == ["S01", "S02", "S03"]
    assert all(reason.startswith("InvariantViolation") for reason in r.failures.values())
    table = format_table(r).splitlines()
    assert table[1] == "# folds 3, failed 3, leakage audit failed"
    assert table[4].split()[-2:] == ["n/a", "n/a"]


def test_audit_fold():
    ds = builders.labeled_dataset(3)
    rows = pd.DataFrame({"subject_id": ["S01", "S03"]})
    assert audit_fold(rows, ds.without_subject("S02"), "S02")
    assert not audit_fold(rows, ds.without_subject("S02"), "S01")
    assert not audit_fold(rows[rows["subject_id"] == "S03"], ds, "S01")


def test_format_table(report):
    lines = format_table(report).splitlines()
    assert lines[0] == f"# config {report.config_hash}"
    assert lines[1] == f"# folds {report.n_folds}, failed 0, leakage audit passed"
    assert lines[3].split() == ["Joint", "Personalized", "Standard"]
    assert lines[4].startswith("Hip abduction/adduction")
    assert lines[6].startswith("Knee flexion/extension") and lines[6].endswith("deg")
    assert lines[7].startswith("Pelvis lateral displacement") and lines[7].endswith("mm")


def test_report_files_round_trip(tmp_path, report):
    paths = report_emit(report, str(tmp_path / "report"))
    assert paths == [str(tmp_path / "report.toml"), str(tmp_path / "report.txt")]
    with open(paths[1]) as f:
        assert f.read() == format_table(report)
    loaded = load_report(paths[0])
    assert loaded.channels == report.channels
    assert loaded.subjects == report.subjects
    assert loaded.levels == report.levels
    assert (loaded.n_folds, loaded.config_hash) == (report.n_folds, report.config_hash)
    assert loaded.leakage_audit == report.leakage_audit


def test_report_errors(tmp_path):
    with pytest.raises(exceptions.InvariantViolation):
        EvaluationReport({Channel.KneeFlexExt: (-1.0, 2.0)}, {}, {}, 1, "x")
    with pytest.raises(exceptions.InvariantViolation):
        report_emit(EvaluationReport({}, {}, {}, 1, "x"), str(tmp_path / "report"))
    with pytest.raises(exceptions.MissingFile):
        load_report(str(tmp_path / "missing.toml"))
    path = tmp_path / "report.toml"
    path.write_text('format = "exogait-report"\nconfig_hash = "x"\n[channels]\n')
    with pytest.raises(exceptions.SchemaMismatch):
        load_report(str(path))
    path.write_text('format = "something-else"\n')
    with pytest.raises(exceptions.SchemaMismatch):
        load_report(str(path))
