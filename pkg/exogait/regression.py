"""
Per-parameter regression of key events on speed, anthropometry and demographics.

Every key-event parameter is modelled as

    Y = b0 + b1 v + b2 v² + b3 h + b4 w + b5 a + b6 s

with v in km/h, h in m, w in kg, a in years and s = -1 (female) / +1 (male).
Predictors are selected by backward elimination on OLS p-values, then the retained ones are
fitted with bisquare-weighted iteratively reweighted least squares.
"""
import dataclasses
import enum
import os
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
import toml
from statsmodels.robust.scale import mad

from . import exceptions
from .gait_data import Channel, Dataset, Side, Subject, canonical_cycle
from .key_events import (
    Constraint,
    KeyEvent,
    KeyEventSet,
    KeyEventTemplate,
    extract_events,
)
from .settings import setting
from .utils import log

BANK_FORMAT = "exogait-model-bank"
BANK_VERSION = 1

PREDICTORS = ("intercept", "v", "v2", "h", "w", "a", "s")


class Parameter(str, enum.Enum):
    t = "t"
    y = "y"
    ydot = "ydot"
    yddot = "yddot"


class TargetId(NamedTuple):
    channel: Channel
    detector_id: str
    parameter: Parameter

    def __str__(self) -> str:
        return f"{self.channel.value}/{self.detector_id}/{self.parameter.value}"


@dataclasses.dataclass(frozen=True)
class PredictorVector(object):
    """
    >>> np.round(PredictorVector(v=1.8, h=1.76, w=69.25, a=25, s=1).as_array(), 6).tolist()
    [1.0, 1.8, 3.24, 1.76, 69.25, 25.0, 1.0]
    """

    v: float
    h: float
    w: float
    a: float
    s: int

    def __post_init__(self):
        if self.s not in (-1, 1):
            raise exceptions.InvariantViolation({"error": f"Gender must be -1 or +1, got {self.s}."})

    @property
    def v2(self) -> float:
        return self.v * self.v

    @classmethod
    def of(cls, subject: Subject, v: float) -> "PredictorVector":
        return cls(v=v, h=subject.height, w=subject.mass, a=subject.age, s=int(subject.gender))

    def as_array(self) -> np.ndarray:
        return np.array([1.0, self.v, self.v2, self.h, self.w, self.a, float(self.s)])


def design_matrix(rows: pd.DataFrame) -> np.ndarray:
    """
    Stacks :code:`[1, v, v², h, w, a, s]` for every row of a table with columns v, h, w, a, s.
    """
    v = rows["v"].to_numpy(dtype=float)
    return np.column_stack(
        [
            np.ones(len(rows)),
            v,
            v * v,
            rows["h"].to_numpy(dtype=float),
            rows["w"].to_numpy(dtype=float),
            rows["a"].to_numpy(dtype=float),
            rows["s"].to_numpy(dtype=float),
        ]
    )


class OlsFit(NamedTuple):
    coefficients: np.ndarray
    pvalues: np.ndarray


def fit_ols(X: np.ndarray, Y: np.ndarray) -> OlsFit:
    """
    Ordinary least squares with classical t-test p-values.

    >>> import numpy as np
    >>> v = np.linspace(0.5, 3.0, 20)
    >>> fit = fit_ols(np.column_stack([np.ones(20), v]), 1 + 2 * v)
    >>> np.round(fit.coefficients, 10).tolist()
    [1.0, 2.0]

    :param X: design matrix, intercept column included
    :param Y: targets
    :return: coefficients and per-coefficient p-values (undefined p-values are reported as 1)
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise exceptions.RankDeficient(
            {"error": f"Design matrix of shape {X.shape} is rank deficient."}
        )
    if n < p + 2:
        raise exceptions.InsufficientData(
            {"error": f"{n} rows for {p} predictors, at least {p + 2} are required."}
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        result = sm.OLS(Y, X).fit()
        pvalues = np.asarray(result.pvalues, dtype=float)
    pvalues = np.where(np.isnan(pvalues), 1.0, pvalues)
    return OlsFit(np.asarray(result.params, dtype=float), pvalues)


def stepwise_select(
    X: np.ndarray, Y: np.ndarray, alpha: Optional[float] = None, names: Sequence[str] = PREDICTORS
) -> np.ndarray:
    """
    Backward elimination: repeatedly drops the non-intercept predictor with the largest
    p-value not below :code:`alpha`. Column 0 is the intercept and is never dropped; ties go
    to the earliest column.

    :param X: design matrix, intercept in column 0
    :param Y: targets
    :param alpha: significance level, the :code:`STEPWISE_ALPHA` setting by default
    :param names: column names used in the debug log
    :return: boolean inclusion mask over the columns of X
    """
    alpha = float(setting("STEPWISE_ALPHA") if alpha is None else alpha)
    X = np.asarray(X, dtype=float)
    mask = np.ones(X.shape[1], dtype=bool)
    while mask.sum() > 1:
        columns = np.flatnonzero(mask)
        fit = fit_ols(X[:, columns], Y)
        candidates = fit.pvalues[1:]
        worst = int(np.argmax(candidates))
        if candidates[worst] < alpha:
            break
        dropped = columns[worst + 1]
        mask[dropped] = False
        log.debug(
            f"stepwise: dropped `{names[dropped] if dropped < len(names) else dropped}` "
            f"(p = {candidates[worst]:.4g})"
        )
    return mask


@dataclasses.dataclass(frozen=True, eq=False)
class RobustFit(object):
    coefficients: np.ndarray
    weights: np.ndarray
    scale: float
    iterations: int
    converged: bool


def bisquare(u: np.ndarray) -> np.ndarray:
    """
    Tukey's bisquare weights of standardized residuals.

    >>> bisquare(np.array([0.0, 0.5, 1.0, 2.0])).tolist()
    [1.0, 0.5625, 0.0, 0.0]
    """
    return (np.abs(u) < 1) * (1 - u ** 2) ** 2


def fit_robust_bisquare(
    X: np.ndarray,
    Y: np.ndarray,
    tuning: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    strict: bool = False,
) -> RobustFit:
    """
    Iteratively reweighted least squares with bisquare weights, started from OLS.
    The residual scale is 1.4826 times the median absolute residual, recomputed every
    iteration.

    :param X: design matrix of the retained predictors
    :param Y: targets
    :param tuning: bisquare tuning constant, the :code:`BISQUARE_TUNING` setting by default
    :param tol: convergence threshold on the largest coefficient change
    :param max_iter: iteration limit
    :param strict: raise :class:`NoConvergence <exogait.exceptions.NoConvergence>` instead
        of returning the last iterate flagged as not converged
    :return: the fit
    """
    tuning = float(setting("BISQUARE_TUNING") if tuning is None else tuning)
    tol = float(setting("IRLS_TOLERANCE") if tol is None else tol)
    max_iter = int(setting("IRLS_MAX_ITER") if max_iter is None else max_iter)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)

    beta = np.linalg.lstsq(X, Y, rcond=None)[0]
    weights = np.ones(len(Y))
    scale = 0.0
    converged = False
    iterations = 0
    floor = 1e-12 * max(1.0, float(np.max(np.abs(Y))) if len(Y) else 1.0)
    for iterations in range(1, max_iter + 1):
        resid = Y - X @ beta
        scale = float(mad(resid, center=0))
        if scale <= floor:
            # the current fit is exact for most of the rows
            weights = np.ones(len(Y))
            converged = True
            break
        weights = bisquare(resid / (tuning * scale))
        if not np.any(weights > 0):
            raise exceptions.AllZeroWeights(
                {"error": "Every residual exceeds the bisquare cutoff.", "iteration": str(iterations)}
            )
        sw = np.sqrt(weights)
        new = np.linalg.lstsq(X * sw[:, None], Y * sw, rcond=None)[0]
        change = float(np.max(np.abs(new - beta)))
        beta = new
        if change < tol:
            converged = True
            break

    result = RobustFit(beta, weights, scale, iterations, converged)
    if not converged:
        log.warning(f"IRLS stopped after {iterations} iterations without converging.")
        if strict:
            raise exceptions.NoConvergence(
                {"error": f"IRLS did not converge in {max_iter} iterations."}, result=result
            )
    return result


@dataclasses.dataclass(frozen=True, eq=False)
class RegressionModel(object):
    """
    A fitted model of one key-event parameter. :code:`coefficients` follow the order of the
    included predictors.
    """

    target: TargetId
    included: Tuple[bool, ...]
    coefficients: np.ndarray
    n: int = 0
    scale: float = 0.0
    iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        included = tuple(bool(b) for b in self.included)
        coefficients = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "included", included)
        object.__setattr__(self, "coefficients", coefficients)
        if len(included) != len(PREDICTORS) or not included[0]:
            raise exceptions.InvariantViolation(
                {"error": "The inclusion mask must cover every predictor and keep the intercept.",
                 "target": str(self.target)}
            )
        if coefficients.shape != (sum(included),):
            raise exceptions.InvariantViolation(
                {"error": f"{sum(included)} predictors but {coefficients.size} coefficients.",
                 "target": str(self.target)}
            )
        if not np.all(np.isfinite(coefficients)):
            raise exceptions.InvariantViolation(
                {"error": "Non-finite coefficient.", "target": str(self.target)}
            )

    @property
    def predictors(self) -> List[str]:
        return [name for name, keep in zip(PREDICTORS, self.included) if keep]

    def predict(self, x: PredictorVector) -> float:
        return float(x.as_array()[np.array(self.included)] @ self.coefficients)

    def equation(self) -> str:
        terms = [f"{self.coefficients[0]:.6g}"]
        for name, beta in zip(self.predictors[1:], self.coefficients[1:]):
            name = "v²" if name == "v2" else name
            sign = "-" if beta < 0 else "+"
            terms.append(f"{sign} {abs(beta):.6g}·{name}")
        return f"{self.target} = " + " ".join(terms)


@dataclasses.dataclass(frozen=True)
class CycleTimeModel(object):
    """
    Fixed-coefficient cycle-time law T = c0 + c1 v + c2 v² + c3 x, x being age or height.
    """

    name: str
    coefficients: Tuple[float, float, float, float]
    covariate: str

    def __call__(self, v: float, x: float) -> float:
        if not v > 0:
            raise exceptions.InvariantViolation({"error": f"Speed must be positive, got {v}."})
        c0, c1, c2, c3 = self.coefficients
        t = (c2 * v + c1) * v + c0 + c3 * x
        if t <= 0.2:
            raise exceptions.NonPositiveResult(
                {"error": f"Cycle time {t:.4f} s is not plausible.", "v": str(v), self.covariate: str(x)}
            )
        return t

    def equation(self) -> str:
        c0, c1, c2, c3 = self.coefficients
        return f"T_{self.name} = {c0} {c1:+} v {c2:+} v² {c3:+} {self.covariate}"


PERSONALIZED_CYCLE_TIME = CycleTimeModel("personalized", (2.7662, -0.7458, 0.0903, -0.0037), "a")
STANDARD_CYCLE_TIME = CycleTimeModel("standard", (1.8993, -0.6909, 0.0789, 0.3928), "h")


def predict_cycle_time_personalized(v: float, a: float) -> float:
    """
    >>> round(predict_cycle_time_personalized(1.8, 25), 4)
    1.6238
    """
    return PERSONALIZED_CYCLE_TIME(v, a)


def predict_cycle_time_standard(v: float, h: float) -> float:
    """
    >>> round(predict_cycle_time_standard(1.8, 1.70), 4)
    1.5791
    """
    if not h > 0:
        raise exceptions.InvariantViolation({"error": f"Height must be positive, got {h}."})
    return STANDARD_CYCLE_TIME(v, h)


@dataclasses.dataclass(frozen=True, eq=False)
class ModelBank(object):
    """
    Every fitted key-event model, the constants fixed by pins and derivative constraints,
    the detector layout per channel and the speed range seen in training.
    """

    models: Mapping[TargetId, RegressionModel]
    constants: Mapping[TargetId, float]
    layout: Mapping[Channel, Tuple[str, ...]]
    speed_envelope: Tuple[float, float]
    cycle_time_personalized: CycleTimeModel = PERSONALIZED_CYCLE_TIME
    cycle_time_standard: CycleTimeModel = STANDARD_CYCLE_TIME

    @property
    def channels(self) -> List[Channel]:
        return [ch for ch in Channel if ch in self.layout]

    def value(self, target: TargetId, x: PredictorVector) -> float:
        if target in self.constants:
            return self.constants[target]
        return self.models[target].predict(x)

    def model_count(self, channel: Optional[Channel] = None) -> int:
        return sum(1 for t in self.models if channel is None or t.channel == channel)


def constrained_value(detector, parameter: Parameter) -> Optional[float]:
    """
    The value a parameter is fixed to by the detector, or None if it must be regressed.
    """
    if parameter is Parameter.t and detector.pinned:
        return detector.pinned_time
    if parameter is Parameter.ydot and detector.constraint is Constraint.VelocityZero:
        return 0.0
    if parameter is Parameter.yddot and detector.constraint is Constraint.AccelerationZero:
        return 0.0
    return None


def extract_training_rows(
    ds: Dataset, templates: Mapping[Channel, KeyEventTemplate]
) -> pd.DataFrame:
    """
    One row per (cycle, detector) of every labeled cycle: the subject's predictors and the
    extracted event parameters. Left cycles are mapped to the right-leg convention first.
    """
    rows = []
    for c in ds.cycles:
        if c.speed_level is None:
            continue
        subject = ds.subject(c.subject_id)
        try:
            events = extract_events(canonical_cycle(c), templates[c.channel])
        except exceptions.ExoGaitError as e:
            raise exceptions.with_context(e, cycle=repr(c))
        x = PredictorVector.of(subject, c.speed)
        for e in events.events:
            rows.append(
                {
                    "subject_id": c.subject_id,
                    "side": c.side.value,
                    "level": c.speed_level.value,
                    "channel": c.channel.value,
                    "detector": e.detector_id,
                    "v": x.v,
                    "h": x.h,
                    "w": x.w,
                    "a": x.a,
                    "s": x.s,
                    "t": e.t,
                    "y": e.y,
                    "ydot": e.ydot,
                    "yddot": e.yddot,
                }
            )
    columns = ["subject_id", "side", "level", "channel", "detector", "v", "h", "w", "a", "s",
               "t", "y", "ydot", "yddot"]
    return pd.DataFrame(rows, columns=columns)


def fit_bank(
    rows: pd.DataFrame,
    templates: Mapping[Channel, KeyEventTemplate],
    alpha: Optional[float] = None,
    min_rows: Optional[int] = None,
) -> ModelBank:
    """
    Fits one model per (channel, detector, parameter) that is not fixed by the template.

    A target needs at least :code:`min_rows` distinct subject × speed-level observations.
    """
    min_rows = int(setting("MIN_ROWS") if min_rows is None else min_rows)
    models, constants, layout = {}, {}, {}
    for channel, tmpl in templates.items():
        layout[channel] = tuple(d.id for d in tmpl.detectors)
        for detector in tmpl.detectors:
            sub = rows[(rows["channel"] == channel.value) & (rows["detector"] == detector.id)]
            for parameter in Parameter:
                target = TargetId(channel, detector.id, parameter)
                fixed = constrained_value(detector, parameter)
                if fixed is not None:
                    constants[target] = fixed
                    continue
                observations = len(sub[["subject_id", "level"]].drop_duplicates())
                if observations < min_rows:
                    raise exceptions.InsufficientData(
                        {
                            "error": f"{observations} subject x level observations, at least {min_rows} are required.",
                            "target": str(target),
                        }
                    )
                X = design_matrix(sub)
                Y = sub[parameter.value].to_numpy(dtype=float)
                try:
                    mask = stepwise_select(X, Y, alpha)
                    fit = fit_robust_bisquare(X[:, mask], Y)
                except exceptions.ExoGaitError as e:
                    raise exceptions.with_context(e, target=str(target))
                models[target] = RegressionModel(
                    target, tuple(mask), fit.coefficients, len(Y), fit.scale, fit.iterations, fit.converged
                )
    if rows.empty:
        raise exceptions.InsufficientData({"error": "No training rows."})
    v = rows["v"].to_numpy(dtype=float)
    bank = ModelBank(models, constants, layout, (float(v.min()), float(v.max())))
    log.info(f"Fitted {len(models)} models, {len(constants)} constrained parameters.")
    return bank


def train_bank(ds: Dataset, templates: Mapping[Channel, KeyEventTemplate], **kwargs) -> ModelBank:
    """
    Extracts the training rows of a filtered dataset and fits the bank.
    """
    return fit_bank(extract_training_rows(ds, templates), templates, **kwargs)


def predict_events(
    bank: ModelBank, subj: Subject, v: float, cycle_time: Optional[float] = None
) -> Dict[Channel, KeyEventSet]:
    """
    Evaluates the bank for a subject walking at :code:`v` km/h.

    Events are sorted by time and pushed apart to the minimum separation; a total push beyond
    the allowed nudge raises :class:`NonMonotoneEvents <exogait.exceptions.NonMonotoneEvents>`.

    :param bank: trained bank
    :param subj: the subject
    :param v: walking speed in km/h
    :param cycle_time: seconds per cycle, the personalized cycle-time law by default
    :return: map channel -> events in the right-leg convention
    """
    lo, hi = bank.speed_envelope
    margin = float(setting("SPEED_ENVELOPE_MARGIN"))
    if v < lo * (1 - margin) or v > hi * (1 + margin):
        log.warning(f"Speed {v} km/h is outside the training envelope [{lo:.3f}, {hi:.3f}] km/h.")
    if cycle_time is None:
        cycle_time = bank.cycle_time_personalized(v, subj.age)
    x = PredictorVector.of(subj, v)
    min_sep = float(setting("MIN_SEPARATION"))
    max_nudge = float(setting("MAX_NUDGE"))

    result = {}
    for channel in bank.channels:
        events = []
        for detector_id in bank.layout[channel]:
            values = {
                p: bank.value(TargetId(channel, detector_id, p), x) for p in Parameter
            }
            events.append(
                [values[Parameter.t] % 100.0, values[Parameter.y], values[Parameter.ydot],
                 values[Parameter.yddot], detector_id]
            )
        events.sort(key=lambda e: e[0])
        if channel is not Channel.PelvisLateral:
            events[0][0] = 0.0
        nudge = 0.0
        for prev, cur in zip(events, events[1:]):
            if cur[0] - prev[0] < min_sep:
                nudge += prev[0] + min_sep - cur[0]
                cur[0] = prev[0] + min_sep
        if nudge > max_nudge or events[-1][0] >= 100.0 or events[0][0] + 100.0 - events[-1][0] < min_sep - 1e-9:
            raise exceptions.NonMonotoneEvents(
                {
                    "error": f"Events cannot be separated by {min_sep} % within a {max_nudge} % nudge.",
                    "channel": channel.value,
                    "nudge": f"{nudge:.4f}",
                }
            )
        if nudge:
            log.debug(f"{channel.value}: events nudged by {nudge:.4f} %")
        result[channel] = KeyEventSet(
            channel, Side.Right, [KeyEvent(*e) for e in events], cycle_time
        )
    return result


def describe_bank(bank: ModelBank) -> str:
    """
    One line per model or constrained parameter, followed by the cycle-time laws.
    """
    lines = []
    for channel in bank.channels:
        for detector_id in bank.layout[channel]:
            for parameter in Parameter:
                target = TargetId(channel, detector_id, parameter)
                if target in bank.models:
                    lines.append(bank.models[target].equation())
                elif target in bank.constants:
                    lines.append(f"{target} = {bank.constants[target]:g} (fixed)")
    lines.append(bank.cycle_time_personalized.equation())
    lines.append(bank.cycle_time_standard.equation())
    return "\n".join(lines) + "\n"


def save_bank(bank: ModelBank, path: str):
    """
    Writes the bank as versioned TOML; floats keep their full precision.
    """
    data = {
        "format": BANK_FORMAT,
        "version": BANK_VERSION,
        "predictors": list(PREDICTORS),
        "speed_envelope": list(bank.speed_envelope),
        "layout": {ch.value: list(ids) for ch, ids in bank.layout.items()},
        "cycle_time": {
            m.name: {"coefficients": list(m.coefficients), "covariate": m.covariate}
            for m in (bank.cycle_time_personalized, bank.cycle_time_standard)
        },
        "models": [
            {
                "channel": t.channel.value,
                "detector": t.detector_id,
                "parameter": t.parameter.value,
                "included": list(m.included),
                "coefficients": [float(b) for b in m.coefficients],
                "n": m.n,
                "scale": float(m.scale),
                "iterations": m.iterations,
                "converged": m.converged,
            }
            for t, m in bank.models.items()
        ],
        "constants": [
            {
                "channel": t.channel.value,
                "detector": t.detector_id,
                "parameter": t.parameter.value,
                "value": float(value),
            }
            for t, value in bank.constants.items()
        ],
    }
    try:
        with open(path, "w") as f:
            toml.dump(data, f)
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": path})


def load_bank(path: str) -> ModelBank:
    if not os.path.exists(path):
        raise exceptions.MissingFile({"error": "Model bank not found.", "file": path})
    data = toml.load(path)
    if data.get("format") != BANK_FORMAT:
        raise exceptions.SchemaMismatch({"error": f"Not an {BANK_FORMAT} file.", "file": path})
    if int(data.get("version", 0)) > BANK_VERSION:
        raise exceptions.SchemaMismatch(
            {"error": f"Bank version {data['version']} is newer than {BANK_VERSION}.", "file": path}
        )

    def target(entry: Mapping[str, Any]) -> TargetId:
        return TargetId(Channel(entry["channel"]), entry["detector"], Parameter(entry["parameter"]))

    try:
        models = {
            target(m): RegressionModel(
                target(m), tuple(m["included"]), m["coefficients"], m.get("n", 0),
                m.get("scale", 0.0), m.get("iterations", 0), m.get("converged", True),
            )
            for m in data.get("models", [])
        }
        constants = {target(c): float(c["value"]) for c in data.get("constants", [])}
        layout = {Channel(ch): tuple(ids) for ch, ids in data["layout"].items()}
        cycle_time = {
            name: CycleTimeModel(name, tuple(m["coefficients"]), m["covariate"])
            for name, m in data.get("cycle_time", {}).items()
        }
    except (KeyError, ValueError, TypeError) as e:
        raise exceptions.SchemaMismatch({"error": f"Malformed bank: {e!r}.", "file": path})
    return ModelBank(
        models,
        constants,
        layout,
        tuple(data["speed_envelope"]),
        cycle_time.get("personalized", PERSONALIZED_CYCLE_TIME),
        cycle_time.get("standard", STANDARD_CYCLE_TIME),
    )
