"""
Leave-one-subject-out evaluation of Personalized against Standard patterns.

For every held-out subject the bank is fitted on the other subjects' events only, and the
Standard pattern is averaged over the other subjects only. Both patterns are sampled on the
dataset grid and scored by RMSE against the subject's recorded cycles, in the right-leg
sign convention. Scores are averaged over sides, then speed levels, then subjects.
"""
import dataclasses
import os
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import toml

from . import exceptions
from .gait_data import CHANNELS, Channel, Dataset, GaitCycle, Side, SpeedLevel, canonical_cycle, ensemble_average
from .key_events import KeyEventTemplate
from .regression import extract_training_rows, fit_bank
from .settings import resolved
from .trajectory import generate_personalized, generate_standard
from .utils import config_hash, log

REPORT_FORMAT = "exogait-report"
REPORT_VERSION = 1
AVERAGING_ORDER = "sides, then speed levels, then subjects"

TABLE_ROWS = (
    (Channel.HipAbAd, "Hip abduction/adduction"),
    (Channel.HipFlexExt, "Hip flexion/extension"),
    (Channel.KneeFlexExt, "Knee flexion/extension"),
    (Channel.PelvisLateral, "Pelvis lateral displacement"),
)

# (personalized, standard)
Score = Tuple[float, float]


def rmse(a: GaitCycle, b: GaitCycle) -> float:
    """
    Root mean square difference of two cycles over every grid sample.

    >>> import numpy as np
    >>> from exogait.gait_data import Channel, GaitCycle, Side
    >>> c = GaitCycle("S01", Channel.KneeFlexExt, Side.Right, None, 1.8, 1.6, np.zeros(101))
    >>> rmse(c, c.replace(samples=np.full(101, -2.5)))
    2.5
    """
    if a.channel != b.channel:
        raise exceptions.MixedChannels(
            {"error": "Cannot compare cycles of different channels.",
             "expected": a.channel.value, "got": b.channel.value}
        )
    if a.grid_size != b.grid_size:
        raise exceptions.GridMismatch({"error": f"Grid sizes differ: {a.grid_size} vs {b.grid_size}."})
    return float(np.sqrt(np.mean((a.samples - b.samples) ** 2)))


@dataclasses.dataclass(frozen=True, eq=False)
class EvaluationReport(object):
    """
    :code:`channels` holds the final averages; :code:`subjects` and :code:`levels` the
    breakdowns they are computed from. Failed folds are listed in :code:`failures` and
    excluded from the averages. :code:`leakage_audit` maps every audited fold to whether
    its held-out subject was absent from the training rows and the Standard average.
    """

    channels: Mapping[Channel, Score]
    subjects: Mapping[str, Mapping[Channel, Score]]
    levels: Mapping[str, Mapping[SpeedLevel, Mapping[Channel, Score]]]
    n_folds: int
    config_hash: str
    failures: Mapping[str, str] = dataclasses.field(default_factory=dict)
    leakage_audit: Mapping[str, bool] = dataclasses.field(default_factory=dict)
    averaging_order: str = AVERAGING_ORDER

    def __post_init__(self):
        for channel, (p, s) in self.channels.items():
            if not (p >= 0 and s >= 0):
                raise exceptions.InvariantViolation(
                    {"error": f"Negative RMSE for {Channel(channel).value}."}
                )

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    @property
    def leak_free(self) -> bool:
        return all(self.leakage_audit.values())


def audit_fold(training: pd.DataFrame, rest: Dataset, subject_id: str) -> bool:
    """
    True if the held-out subject appears neither in the training rows nor in the dataset
    the Standard pattern is averaged over.
    """
    return subject_id not in set(training["subject_id"]) and subject_id not in rest.subject_ids


def _mean_scores(scores: List[Mapping[Channel, Score]]) -> Dict[Channel, Score]:
    return {
        ch: (
            float(np.mean([s[ch][0] for s in scores])),
            float(np.mean([s[ch][1] for s in scores])),
        )
        for ch in CHANNELS
        if scores and all(ch in s for s in scores)
    }


def _actual(ds: Dataset, subject_id: str, channel: Channel, side: Side, level: SpeedLevel) -> Optional[GaitCycle]:
    cycles = ds.select(subject_id, channel, side, level)
    if not cycles:
        return None
    return canonical_cycle(ensemble_average(cycles))


def _evaluate_fold(
    ds: Dataset,
    rows: pd.DataFrame,
    templates: Mapping[Channel, KeyEventTemplate],
    subject_id: str,
    audits: Dict[str, bool],
) -> Dict[SpeedLevel, Dict[Channel, Score]]:
    training = rows[rows["subject_id"] != subject_id]
    rest = ds.without_subject(subject_id)
    audits[subject_id] = audit_fold(training, rest, subject_id)
    if not audits[subject_id]:
        raise exceptions.InvariantViolation({"error": f"Subject `{subject_id}` leaked into its training fold."})
    bank = fit_bank(training, templates)
    subject = ds.subject(subject_id)
    grid = np.linspace(0.0, 100.0, ds.grid_size)
    # positions on the % grid do not depend on the cycle time
    standard = generate_standard(rest, subject.self_selected_speed, subject.height)

    result = {}
    for level in SpeedLevel:
        per_side = []
        for side in Side:
            actual = {ch: _actual(ds, subject_id, ch, side, level) for ch in CHANNELS}
            if any(c is None for c in actual.values()):
                continue
            v = float(np.mean([c.speed for c in actual.values()]))
            personalized = generate_personalized(bank, subject, v)
            scores = {}
            for ch, c in actual.items():
                p = c.replace(samples=personalized[ch].position(grid))
                s = c.replace(samples=standard[ch].position(grid))
                scores[ch] = (rmse(p, c), rmse(s, c))
            per_side.append(scores)
        if per_side:
            result[level] = _mean_scores(per_side)
    if not result:
        raise exceptions.EmptyInput({"error": f"Subject `{subject_id}` has no complete labeled cycles."})
    return result


def loocv(
    ds: Dataset,
    templates: Mapping[Channel, KeyEventTemplate],
    config: Optional[Mapping[str, Any]] = None,
) -> EvaluationReport:
    """
    Leave-one-subject-out cross-validation.

    A fold that fails is recorded under its subject id and skipped; the report's
    :code:`failed` flag tells the caller.

    :param ds: dataset filtered to the speed levels
    :param templates: event templates
    :param config: run configuration, hashed into the report; the resolved settings by default
    :return: the report
    """
    rows = extract_training_rows(ds, templates)
    subjects: Dict[str, Dict[Channel, Score]] = {}
    levels: Dict[str, Dict[SpeedLevel, Dict[Channel, Score]]] = {}
    failures: Dict[str, str] = {}
    audits: Dict[str, bool] = {}
    for subject_id in ds.subject_ids:
        try:
            by_level = _evaluate_fold(ds, rows, templates, subject_id, audits)
        except exceptions.ExoGaitError as e:
            failures[subject_id] = f"{type(e).__name__}: {e.detail}"
            log.error(f"Fold `{subject_id}` failed: {failures[subject_id]}")
            continue
        levels[subject_id] = by_level
        subjects[subject_id] = _mean_scores(list(by_level.values()))
        log.info(f"Fold `{subject_id}` done.")

    report = EvaluationReport(
        channels=_mean_scores(list(subjects.values())),
        subjects=subjects,
        levels=levels,
        n_folds=len(ds.subject_ids),
        config_hash=config_hash(dict(config) if config is not None else resolved()),
        failures=failures,
        leakage_audit=audits,
    )
    return report


def format_table(r: EvaluationReport) -> str:
    """
    The human-readable table: one row per joint, Personalized and Standard RMSE columns.
    """
    lines = [
        f"# config {r.config_hash}",
        f"# folds {r.n_folds}, failed {len(r.failures)}, leakage audit {'passed' if r.leak_free else 'failed'}",
        f"# averaged over {r.averaging_order}",
        f"{'Joint':<30}{'Personalized':>16}{'Standard':>16}",
    ]
    for channel, label in TABLE_ROWS:
        if channel not in r.channels:
            lines.append(f"{label:<30}{'n/a':>16}{'n/a':>16}")
            continue
        p, s = r.channels[channel]
        unit = channel.unit
        lines.append(f"{label:<30}{f'{p:.3f} {unit}':>16}{f'{s:.3f} {unit}':>16}")
    for subject_id, reason in sorted(r.failures.items()):
        lines.append(f"# fold {subject_id} failed: {reason}")
    return "\n".join(lines) + "\n"


def _scores_to_dict(scores: Mapping[Channel, Score]) -> Dict[str, Dict[str, float]]:
    return {ch.value: {"personalized": p, "standard": s} for ch, (p, s) in scores.items()}


def report_to_dict(r: EvaluationReport) -> Dict[str, Any]:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config_hash": r.config_hash,
        "n_folds": r.n_folds,
        "averaging_order": r.averaging_order,
        "leakage_audit": {sid: "passed" if ok else "failed" for sid, ok in sorted(r.leakage_audit.items())},
        "channels": {
            ch.value: {"personalized": p, "standard": s, "unit": ch.unit} for ch, (p, s) in r.channels.items()
        },
        "subjects": {sid: _scores_to_dict(scores) for sid, scores in sorted(r.subjects.items())},
        "levels": {
            sid: {level.value: _scores_to_dict(scores) for level, scores in by_level.items()}
            for sid, by_level in sorted(r.levels.items())
        },
        "failures": dict(sorted(r.failures.items())),
    }


def report_emit(r: EvaluationReport, path: str) -> List[str]:
    """
    Writes :code:`<path>.toml` and :code:`<path>.txt`.

    :return: the written paths
    """
    missing = [ch.value for ch in CHANNELS if ch not in r.channels]
    if missing:
        raise exceptions.InvariantViolation({"error": f"No scores for {', '.join(missing)}."})
    base = os.path.splitext(path)[0]
    outputs = {base + ".toml": toml.dumps(report_to_dict(r)), base + ".txt": format_table(r)}
    for target, text in outputs.items():
        try:
            with open(target, "w") as f:
                f.write(text)
        except OSError as e:
            raise exceptions.IoError({"error": str(e), "file": target})
    return list(outputs)


def load_report(path: str) -> EvaluationReport:
    if not os.path.exists(path):
        raise exceptions.MissingFile({"error": "Report not found.", "file": path})
    data = toml.load(path)
    if data.get("format") != REPORT_FORMAT:
        raise exceptions.SchemaMismatch({"error": f"Not an {REPORT_FORMAT} file.", "file": path})

    def scores(table: Mapping[str, Mapping[str, float]]) -> Dict[Channel, Score]:
        return {Channel(ch): (v["personalized"], v["standard"]) for ch, v in table.items()}

    try:
        return EvaluationReport(
            channels=scores(data["channels"]),
            subjects={sid: scores(t) for sid, t in data.get("subjects", {}).items()},
            levels={
                sid: {SpeedLevel(level): scores(t) for level, t in by_level.items()}
                for sid, by_level in data.get("levels", {}).items()
            },
            n_folds=data["n_folds"],
            config_hash=data["config_hash"],
            failures=data.get("failures", {}),
            leakage_audit={sid: state == "passed" for sid, state in data.get("leakage_audit", {}).items()},
            averaging_order=data.get("averaging_order", AVERAGING_ORDER),
        )
    except (KeyError, ValueError) as e:
        raise exceptions.SchemaMismatch({"error": f"Malformed report: {e!r}.", "file": path})
