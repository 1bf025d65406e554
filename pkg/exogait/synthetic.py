"""
Synthetic gait datasets with known generative laws.

Every channel has a base waveform: a chain of half-cosines through alternating position
extrema, so velocity peaks sit halfway between them. Each velocity event lies between two
position events of the same half-cosine, and those carry that half-cosine's curvature, so the
quintics through them are point-symmetric about the velocity event and peak on it.

Per subject and speed, each key event follows a linear law of (v, v², h, w, a, s):

- timing is constant;
- position is the base value shifted by a linear law;
- velocity and acceleration are the base derivatives scaled by linear fits of 1/T and 1/T²,
  T being the personalized cycle time.

The recorded cycles are the quintic trajectories through those events sampled on the grid,
so a correct pipeline reproduces them almost exactly.
"""
import dataclasses
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import exceptions
from .gait_data import Channel, Dataset, Gender, GaitCycle, Side, Subject, level_fractions
from .key_events import Extremum, KeyEvent, KeyEventSet, KeyEventTemplate, Signal, default_templates
from .regression import (
    PERSONALIZED_CYCLE_TIME,
    PREDICTORS,
    Parameter,
    PredictorVector,
    TargetId,
)
from .settings import setting
from .trajectory import build_spline
from .utils import log

# position extrema (t in %, y in deg or mm) of the base waveforms; joints start at one
BASE_EXTREMA: Dict[Channel, Tuple[Tuple[float, float], ...]] = {
    Channel.KneeFlexExt: ((0.0, 8.0), (14.0, 18.0), (40.0, 3.0), (71.0, 60.0)),
    Channel.HipFlexExt: ((0.0, 24.0), (8.0, 27.0), (53.0, -12.0), (87.0, 31.0)),
    Channel.HipAbAd: ((0.0, 1.0), (20.0, 7.0), (68.0, -6.0), (90.0, 2.0)),
    Channel.PelvisLateral: ((30.0, 20.0), (80.0, -20.0)),
}

# position shift laws, {predictor: (slope, center)}
OFFSET_LAWS: Dict[Channel, Dict[str, Tuple[float, float]]] = {
    Channel.KneeFlexExt: {"v": (3.0, 2.5), "a": (0.05, 45.0)},
    Channel.HipFlexExt: {"v": (2.0, 2.5), "s": (1.0, 0.0)},
    Channel.HipAbAd: {"w": (-0.04, 70.0)},
    Channel.PelvisLateral: {"h": (8.0, 1.7), "s": (1.0, 0.0)},
}


class CosineChain(object):
    """
    Periodic chain of half-cosines through :code:`extrema`, time in %.

    >>> chain = CosineChain(((30.0, 20.0), (80.0, -20.0)))
    >>> float(chain.value(30.0)), float(chain.value(80.0))
    (20.0, -20.0)
    >>> chain.event_times(Signal.Velocity, Extremum.Max)
    [5.0]
    """

    def __init__(self, extrema: Sequence[Tuple[float, float]]):
        self.extrema = sorted((float(t), float(y)) for t, y in extrema)
        if len(self.extrema) < 2 or len(self.extrema) % 2:
            raise exceptions.InvariantViolation({"error": "A cosine chain needs an even number of extrema."})
        times = [t for t, _ in self.extrema]
        self._knots = np.array(times + [times[0] + 100.0])
        self._values = np.array([y for _, y in self.extrema] + [self.extrema[0][1]])

    def _segment(self, t: float, left: bool = False) -> Tuple[float, float, float, float, float]:
        # at a knot, `left` picks the half-cosine ending there
        u = t % 100.0
        if u < self._knots[0] or (left and u <= self._knots[0]):
            u += 100.0
        k = int(np.searchsorted(self._knots, u, side="left" if left else "right")) - 1
        k = min(max(k, 0), len(self.extrema) - 1)
        t0, t1 = self._knots[k], self._knots[k + 1]
        return u - t0, t1 - t0, self._values[k], self._values[k + 1], k

    def value(self, t: float) -> float:
        s, h, y0, y1, _ = self._segment(t)
        return (y0 + y1) / 2 + (y0 - y1) / 2 * np.cos(np.pi * s / h)

    def derivative(self, t: float) -> float:
        """Slope in unit/%."""
        s, h, y0, y1, _ = self._segment(t)
        return -(y0 - y1) / 2 * np.pi / h * np.sin(np.pi * s / h)

    def second_derivative(self, t: float, left: bool = False) -> float:
        """Curvature in unit/%², one-sided at the extrema."""
        s, h, y0, y1, _ = self._segment(t, left)
        return -(y0 - y1) / 2 * (np.pi / h) ** 2 * np.cos(np.pi * s / h)

    def event_times(self, signal: Signal, extremum: Extremum) -> List[float]:
        """
        Times of the position extrema or of the velocity extrema (segment midpoints).
        """
        result = []
        for k, (t0, y0) in enumerate(self.extrema):
            t1, y1 = self._knots[k + 1], self._values[k + 1]
            if signal is Signal.Position:
                if (extremum is Extremum.Max) == (y0 > y1):
                    result.append(t0)
            else:
                rising = y1 > y0
                if (extremum is Extremum.Max) == rising:
                    result.append(((t0 + t1) / 2) % 100.0)
        return result


@dataclasses.dataclass(frozen=True, eq=False)
class EventLaw(object):
    """
    Linear law of one key-event parameter over :data:`PREDICTORS <exogait.regression.PREDICTORS>`.
    """

    target: TargetId
    coefficients: np.ndarray

    def __call__(self, x: PredictorVector) -> float:
        return float(x.as_array() @ self.coefficients)


def _linear(law: Mapping[str, Tuple[float, float]], scale: float = 1.0) -> np.ndarray:
    beta = np.zeros(len(PREDICTORS))
    for name, (slope, center) in law.items():
        beta[PREDICTORS.index(name)] += scale * slope
        beta[0] -= scale * slope * center
    return beta


def _inverse_cycle_time_fits(speeds: Tuple[float, float] = (1.4, 3.2), ages: Tuple[float, float] = (20.0, 75.0)) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least-squares fits of 1/T and 1/T² on [1, v, v², a], expanded to the full predictor order.
    """
    v, a = np.meshgrid(np.linspace(*speeds, 19), np.linspace(*ages, 12))
    v, a = v.ravel(), a.ravel()
    T = np.array([PERSONALIZED_CYCLE_TIME(vi, ai) for vi, ai in zip(v, a)])
    X = np.column_stack([np.ones_like(v), v, v * v, a])
    fits = []
    for target in (1 / T, 1 / T ** 2):
        beta = np.linalg.lstsq(X, target, rcond=None)[0]
        full = np.zeros(len(PREDICTORS))
        full[[0, 1, 2, 5]] = beta
        fits.append(full)
    return fits[0], fits[1]


def base_event_time(chain: CosineChain, detector) -> float:
    """
    The pinned time, or the most extreme matching extremum of the chain inside the window.
    """
    if detector.pinned:
        return detector.pinned_time
    lo, hi = detector.window
    times = [t for t in chain.event_times(detector.signal, detector.extremum) if lo <= t <= hi]
    if not times:
        raise exceptions.InvariantViolation(
            {"error": "The base waveform has no candidate in the window.", "detector": detector.id}
        )
    f = chain.value if detector.signal is Signal.Position else chain.derivative
    sign = 1.0 if detector.extremum is Extremum.Max else -1.0
    return max(times, key=lambda t: sign * f(t))


def _event_curvatures(chain: CosineChain, times: Sequence[float], velocity: Sequence[bool]) -> List[float]:
    """
    Curvature of every event, taken from the side of a neighbouring velocity event.
    """
    n = len(times)
    result = []
    for i, t in enumerate(times):
        sides = []
        if velocity[(i + 1) % n]:
            sides.append(chain.second_derivative(t))
        if velocity[(i - 1) % n]:
            sides.append(chain.second_derivative(t, left=True))
        result.append(float(np.mean(sides)) if sides and not velocity[i] else chain.second_derivative(t))
    return result


def synthetic_event_laws(
    templates: Optional[Mapping[Channel, KeyEventTemplate]] = None,
) -> Dict[TargetId, EventLaw]:
    """
    The generative law of every (channel, detector, parameter).

    >>> laws = synthetic_event_laws()
    >>> law = laws[TargetId(Channel.KneeFlexExt, "stance_flexion", Parameter.t)]
    >>> law.coefficients.tolist()
    [14.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    """
    templates = templates or default_templates()
    q1, q2 = _inverse_cycle_time_fits()
    laws = {}
    for channel, tmpl in templates.items():
        chain = CosineChain(BASE_EXTREMA[channel])
        detectors = sorted(tmpl.detectors, key=lambda d: base_event_time(chain, d))
        times = [base_event_time(chain, d) for d in detectors]
        curvatures = _event_curvatures(chain, times, [d.signal is Signal.Velocity for d in detectors])
        for detector, t, curvature in zip(detectors, times, curvatures):
            y_law = _linear(OFFSET_LAWS[channel])
            y_law[0] += chain.value(t)
            coefficients = {
                Parameter.t: np.eye(len(PREDICTORS))[0] * t,
                Parameter.y: y_law,
                Parameter.ydot: chain.derivative(t) * 100.0 * q1,
                Parameter.yddot: curvature * 100.0 ** 2 * q2,
            }
            for parameter, beta in coefficients.items():
                target = TargetId(channel, detector.id, parameter)
                laws[target] = EventLaw(target, np.asarray(beta, dtype=float))
    return laws


def synthetic_subjects(n: int, seed: Optional[int] = None) -> List[Subject]:
    """
    Subjects with uniformly drawn anthropometry and alternating gender.

    >>> [s.id for s in synthetic_subjects(3, seed=1)]
    ['SYN01', 'SYN02', 'SYN03']
    """
    seed = int(setting("SEED") if seed is None else seed)
    rng = np.random.default_rng(seed)
    subjects = []
    for i in range(n):
        subjects.append(
            Subject(
                id=f"SYN{i + 1:02d}",
                age=float(rng.uniform(20.0, 75.0)),
                height=float(rng.uniform(1.55, 1.9)),
                mass=float(rng.uniform(50.0, 95.0)),
                gender=Gender.Male if i % 2 == 0 else Gender.Female,
                self_selected_speed=float(rng.uniform(3.6, 4.5)),
            )
        )
    return subjects


def synthetic_events(
    laws: Mapping[TargetId, EventLaw],
    templates: Mapping[Channel, KeyEventTemplate],
    subject: Subject,
    v: float,
) -> Dict[Channel, KeyEventSet]:
    """
    Evaluates the laws for one subject and speed.
    """
    x = PredictorVector.of(subject, v)
    cycle_time = PERSONALIZED_CYCLE_TIME(v, subject.age)
    result = {}
    for channel, tmpl in templates.items():
        events = [
            KeyEvent(*(laws[TargetId(channel, d.id, p)](x) for p in Parameter), d.id)
            for d in tmpl.detectors
        ]
        events.sort(key=lambda e: e.t)
        result[channel] = KeyEventSet(channel, Side.Right, events, cycle_time)
    return result


def synthetic_dataset(
    n_subjects: int = 12,
    seed: Optional[int] = None,
    grid_size: Optional[int] = None,
    templates: Optional[Mapping[Channel, KeyEventTemplate]] = None,
    noise: float = 0.0,
) -> Dataset:
    """
    A dataset already filtered to L1-L3, both legs, left frontal-plane channels mirrored.

    :param n_subjects: number of subjects
    :param seed: seed of the subject draw and of the noise
    :param grid_size: samples per cycle
    :param templates: event templates the laws are built on
    :param noise: standard deviation of white noise added to every sample
    :return: the dataset
    """
    seed = int(setting("SEED") if seed is None else seed)
    grid_size = int(setting("GRID_SIZE") if grid_size is None else grid_size)
    templates = templates or default_templates()
    laws = synthetic_event_laws(templates)
    subjects = synthetic_subjects(n_subjects, seed)
    rng = np.random.default_rng(seed + 1)
    grid = np.linspace(0.0, 100.0, grid_size)
    cycles = []
    for subject in subjects:
        for level, fraction in level_fractions().items():
            v = subject.self_selected_speed * fraction / 100.0
            events = synthetic_events(laws, templates, subject, v)
            for channel, event_set in events.items():
                samples = build_spline(event_set).position(grid)
                for side in Side:
                    y = -samples if side is Side.Left and channel.frontal else samples
                    if noise:
                        y = y + rng.normal(0.0, noise, grid_size)
                        y[-1] = y[0]
                    cycles.append(
                        GaitCycle(subject.id, channel, side, level, v, event_set.cycle_time, y,
                                  speed_fraction=fraction)
                    )
    log.info(f"Generated {len(subjects)} synthetic subjects, {len(cycles)} cycles.")
    return Dataset(subjects, cycles, grid_size)
