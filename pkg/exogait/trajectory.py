"""
Continuous periodic joint trajectories.

Personalized trajectories are piecewise quintic polynomials between consecutive key events;
the last segment wraps from the final event to the first one of the next cycle. Standard and
Random patterns are recorded cycles evaluated through a periodic cubic spline. Both kinds
answer :code:`position`, :code:`velocity` and :code:`acceleration` at % of the gait cycle,
with derivatives in unit/s and unit/s².
"""
import dataclasses
import enum
import os
from typing import List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from . import exceptions
from .gait_data import (
    CHANNELS,
    Channel,
    Dataset,
    GaitCycle,
    Side,
    SpeedLevel,
    Subject,
    canonical_cycle,
    ensemble_average,
)
from .key_events import KeyEvent, KeyEventSet, KeyEventTemplate, events_from_spline
from .regression import (
    ModelBank,
    predict_cycle_time_personalized,
    predict_cycle_time_standard,
    predict_events,
)
from .settings import setting
from .utils import config_hash, log


@dataclasses.dataclass(frozen=True, eq=False)
class QuinticSegment(object):
    """
    y(t) = c0 + c1 τ + ... + c5 τ⁵ with τ = (t - t0) / (t1 - t0), t in %.
    """

    t0: float
    t1: float
    coefficients: np.ndarray

    @property
    def length(self) -> float:
        return self.t1 - self.t0


def quintic_segment(start: KeyEvent, end: KeyEvent, t1: float, cycle_time: float) -> QuinticSegment:
    """
    The quintic matching position, velocity and acceleration of two events.

    >>> from exogait.key_events import KeyEvent
    >>> s = quintic_segment(KeyEvent(0, 0, 0, 0, "a"), KeyEvent(50, 1, 0, 0, "b"), 50.0, 1.0)
    >>> s.coefficients.tolist()
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0]

    :param start: event at the segment start
    :param end: event at the segment end
    :param t1: end time in %, :code:`end.t + 100` for the wrap segment
    :param cycle_time: seconds per cycle
    :return: the segment
    """
    t0 = start.t
    h = t1 - t0
    if h < float(setting("MIN_SEPARATION")) - 1e-9:
        raise exceptions.IllConditionedSegment(
            {
                "error": f"Segment of {h:.4g} % between `{start.detector_id}` and `{end.detector_id}`.",
            }
        )
    # unit/s -> unit per normalized segment time
    scale = cycle_time / 100.0 * h
    y0, v0, a0 = start.y, start.ydot * scale, start.yddot * scale ** 2
    y1, v1, a1 = end.y, end.ydot * scale, end.yddot * scale ** 2
    delta = y1 - y0
    c3 = (20 * delta - (8 * v1 + 12 * v0) - (3 * a0 - a1)) / 2
    c4 = (-30 * delta + (14 * v1 + 16 * v0) + (3 * a0 - 2 * a1)) / 2
    c5 = (12 * delta - 6 * (v1 + v0) + (a1 - a0)) / 2
    return QuinticSegment(t0, t1, np.array([y0, v0, a0 / 2, c3, c4, c5]))


class _Trajectory(object):
    channel: Channel
    side: Side
    cycle_time: float

    def position(self, t):
        raise NotImplementedError

    def velocity(self, t):
        raise NotImplementedError

    def acceleration(self, t):
        raise NotImplementedError

    def to_cycle(self, grid_size: Optional[int] = None, subject_id: str = "pattern", speed: float = 1.0,
                 speed_level: Optional[SpeedLevel] = None) -> GaitCycle:
        """
        Samples the trajectory on a uniform grid over [0, 100] %.
        """
        grid_size = int(setting("GRID_SIZE") if grid_size is None else grid_size)
        samples = self.position(np.linspace(0.0, 100.0, grid_size))
        return GaitCycle(subject_id, self.channel, self.side, speed_level, speed, self.cycle_time, samples)


@dataclasses.dataclass(frozen=True, eq=False)
class TrajectorySpline(_Trajectory):
    """
    Piecewise quintic trajectory through key events, one segment per event.
    """

    channel: Channel
    side: Side
    segments: Tuple[QuinticSegment, ...]
    cycle_time: float

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        knots = [s.t0 for s in self.segments] + [self.segments[-1].t1]
        object.__setattr__(self, "_knots", np.array(knots))
        object.__setattr__(self, "_coefficients", np.stack([s.coefficients for s in self.segments]))

    @property
    def knots(self) -> np.ndarray:
        """
        Segment start times followed by the wrap end, in %.
        """
        return self._knots.copy()

    def with_cycle_time(self, cycle_time: float) -> "TrajectorySpline":
        if not cycle_time > 0:
            raise exceptions.InvariantViolation({"error": f"Cycle time must be positive, got {cycle_time}."})
        return dataclasses.replace(self, cycle_time=cycle_time)

    def _local(self, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        knots = self._knots
        u = np.mod(np.asarray(t, dtype=float), 100.0)
        u = np.where(u < knots[0], u + 100.0, u)
        index = np.clip(np.searchsorted(knots, u, side="right") - 1, 0, len(self.segments) - 1)
        h = knots[index + 1] - knots[index]
        return (u - knots[index]) / h, h, self._coefficients[index]

    def _evaluate(self, t, order: int):
        tau, h, c = self._local(t)
        if order == 0:
            powers = [1, 1, 1, 1, 1, 1]
        elif order == 1:
            powers = [0, 1, 2, 3, 4, 5]
        else:
            powers = [0, 0, 2, 6, 12, 20]
        value = np.zeros_like(tau)
        for k in range(5, order - 1, -1):
            value = value * tau + powers[k] * c[..., k]
        if order:
            value = value * (100.0 / (self.cycle_time * h)) ** order
        return value if np.ndim(value) else float(value)

    def position(self, t):
        return self._evaluate(t, 0)

    def velocity(self, t):
        return self._evaluate(t, 1)

    def acceleration(self, t):
        return self._evaluate(t, 2)


def build_spline(events: KeyEventSet) -> TrajectorySpline:
    """
    Connects consecutive events with quintics matching (y, ẏ, ÿ) at both ends; the last
    event connects to the first one at +100 %.

    >>> from exogait.gait_data import Channel, Side
    >>> from exogait.key_events import KeyEvent, KeyEventSet
    >>> events = KeyEventSet(Channel.KneeFlexExt, Side.Right,
    ...     [KeyEvent(t, 5.0, 0.0, 0.0, str(t)) for t in (0, 25, 50, 75)], 1.2)
    >>> s = build_spline(events)
    >>> len(s.segments), s.position(37.5), s.velocity(80.0)
    (4, 5.0, 0.0)
    """
    ev = list(events.events)
    T = events.cycle_time
    segments = [quintic_segment(a, b, b.t, T) for a, b in zip(ev, ev[1:])]
    segments.append(quintic_segment(ev[-1], ev[0], ev[0].t + 100.0, T))
    return TrajectorySpline(events.channel, events.side, segments, T)


@dataclasses.dataclass(frozen=True, eq=False)
class SampledTrajectory(_Trajectory):
    """
    A recorded or averaged cycle, evaluated through a periodic cubic spline.
    """

    channel: Channel
    side: Side
    samples: np.ndarray
    cycle_time: float

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        knots = np.linspace(0.0, 100.0, samples.size)
        spline = CubicSpline(knots, np.append(samples[:-1], samples[0]), bc_type="periodic")
        object.__setattr__(self, "_spline", spline)

    @classmethod
    def from_cycle(cls, c: GaitCycle, cycle_time: Optional[float] = None) -> "SampledTrajectory":
        return cls(c.channel, c.side, c.samples, c.cycle_time if cycle_time is None else cycle_time)

    def with_cycle_time(self, cycle_time: float) -> "SampledTrajectory":
        return dataclasses.replace(self, cycle_time=cycle_time)

    def _evaluate(self, t, order: int):
        value = self._spline(np.mod(np.asarray(t, dtype=float), 100.0), order)
        if order:
            value = value * (100.0 / self.cycle_time) ** order
        return value if np.ndim(value) else float(value)

    def position(self, t):
        return self._evaluate(t, 0)

    def velocity(self, t):
        return self._evaluate(t, 1)

    def acceleration(self, t):
        return self._evaluate(t, 2)


Trajectory = Union[TrajectorySpline, SampledTrajectory]


class PatternKind(str, enum.Enum):
    Personalized = "Personalized"
    Standard = "Standard"
    Random = "Random"


@dataclasses.dataclass(frozen=True, eq=False)
class GaitPattern(object):
    """
    A reference trajectory per channel, in the right-leg sign convention.

    :code:`source` is the subject a pattern was predicted for or picked from; Standard
    patterns have none.
    """

    kind: PatternKind
    channels: Mapping[Channel, Trajectory]
    cycle_time: float
    speed: float
    source: Optional[Subject] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        missing = [ch.value for ch in CHANNELS if ch not in self.channels]
        if missing:
            raise exceptions.InvariantViolation(
                {"error": f"Pattern without {', '.join(missing)}.", "kind": self.kind.value}
            )
        if not self.cycle_time > 0:
            raise exceptions.InvariantViolation(
                {"error": f"Cycle time must be positive, got {self.cycle_time}."}
            )
        channels = {
            ch: self.channels[ch]
            if self.channels[ch].cycle_time == self.cycle_time
            else self.channels[ch].with_cycle_time(self.cycle_time)
            for ch in CHANNELS
        }
        object.__setattr__(self, "channels", channels)

    def __getitem__(self, channel: Channel) -> Trajectory:
        return self.channels[Channel(channel)]

    def with_cycle_time(self, cycle_time: float) -> "GaitPattern":
        """
        The same %-domain shapes traversed in :code:`cycle_time` seconds.
        """
        return dataclasses.replace(self, cycle_time=cycle_time)

    def subject_hash(self) -> str:
        """
        Digest of the source subject's attributes, its id excluded.
        """
        if self.source is None:
            return ""
        attributes = self.source.to_dict()
        del attributes["id"]
        return config_hash(attributes)


def generate_personalized(bank: ModelBank, subj: Subject, v: float) -> GaitPattern:
    """
    Predicts the key events of a subject at :code:`v` km/h and connects them.

    :param bank: trained model bank
    :param subj: the subject
    :param v: walking speed in km/h
    :return: Personalized pattern
    """
    cycle_time = predict_cycle_time_personalized(v, subj.age)
    events = predict_events(bank, subj, v, cycle_time)
    channels = {ch: build_spline(e) for ch, e in events.items()}
    return GaitPattern(PatternKind.Personalized, channels, cycle_time, v, subj)


def _level_cycles(ds: Dataset, channel: Channel, subject_id: Optional[str] = None,
                  level: Optional[SpeedLevel] = None) -> List[GaitCycle]:
    return [
        canonical_cycle(c)
        for c in ds.cycles
        if c.channel is channel
        and c.speed_level is not None
        and (subject_id is None or c.subject_id == subject_id)
        and (level is None or c.speed_level is level)
    ]


def generate_standard(ds: Dataset, v: float, h: float) -> GaitPattern:
    """
    Pointwise average of every labeled cycle per channel, over subjects, levels and both legs.
    Left frontal-plane channels are mirrored before averaging.

    :param ds: dataset filtered to the speed levels
    :param v: walking speed in km/h
    :param h: height in m
    :return: Standard pattern
    """
    cycle_time = predict_cycle_time_standard(v, h)
    channels = {}
    for ch in CHANNELS:
        cycles = _level_cycles(ds, ch)
        if not cycles:
            raise exceptions.EmptyInput({"error": f"No labeled {ch.value} cycles to average."})
        channels[ch] = SampledTrajectory.from_cycle(ensemble_average(cycles), cycle_time)
    return GaitPattern(PatternKind.Standard, channels, cycle_time, v)


def pick_random_pattern(ds: Dataset, level: SpeedLevel = SpeedLevel.L1, seed: Optional[int] = None) -> GaitPattern:
    """
    Picks one subject uniformly and returns their averaged recording at :code:`level`,
    traversed at the recording's own cycle time.

    :param ds: dataset filtered to the speed levels
    :param level: the speed level to draw from
    :param seed: generator seed, the :code:`SEED` setting by default
    :return: Random pattern
    """
    seed = int(setting("SEED") if seed is None else seed)
    level = SpeedLevel(level)
    candidates = sorted(
        sid for sid in ds.subject_ids
        if all(_level_cycles(ds, ch, sid, level) for ch in CHANNELS)
    )
    if not candidates:
        raise exceptions.EmptyInput({"error": f"No subject has every channel at {level.value}."})
    chosen = candidates[int(np.random.default_rng(seed).integers(len(candidates)))]
    log.debug(f"Random pattern: picked `{chosen}` out of {len(candidates)} at {level.value}.")

    averages = {ch: ensemble_average(_level_cycles(ds, ch, chosen, level)) for ch in CHANNELS}
    cycle_time = float(np.mean([c.cycle_time for c in averages.values()]))
    speed = float(np.mean([c.speed for c in averages.values()]))
    channels = {ch: SampledTrajectory.from_cycle(c, cycle_time) for ch, c in averages.items()}
    return GaitPattern(PatternKind.Random, channels, cycle_time, speed, ds.subject(chosen))


def sample_pattern(p: GaitPattern, dt: float, n_cycles: float = 1, phase: float = 0.0) -> pd.DataFrame:
    """
    Evaluates a pattern at t = k·dt seconds for :code:`n_cycles` cycles.

    :param p: the pattern
    :param dt: sample period in s
    :param n_cycles: number of cycles to cover
    :param phase: offset in % of the cycle added before evaluation, 50 for the contralateral leg
    :return: a frame with a ``time`` column and ``<channel>_pos``, ``<channel>_vel``,
        ``<channel>_acc`` columns per channel
    """
    if not dt > 0:
        raise exceptions.InvariantViolation({"error": f"Sample period must be positive, got {dt}."})
    n = int(round(n_cycles * p.cycle_time / dt))
    time = np.arange(n) * dt
    percent = np.mod(time / p.cycle_time * 100.0 + phase, 100.0)
    columns = {"time": time}
    for ch in CHANNELS:
        trajectory = p[ch]
        columns[f"{ch.value}_pos"] = trajectory.position(percent)
        columns[f"{ch.value}_vel"] = trajectory.velocity(percent)
        columns[f"{ch.value}_acc"] = trajectory.acceleration(percent)
    return pd.DataFrame(columns)


def _write_with_header(frame: pd.DataFrame, path: str, header: Mapping[str, str]):
    try:
        with open(path, "w", newline="") as f:
            for key, value in header.items():
                f.write(f"# {key} = {value}\n")
            frame.to_csv(f, index=False, float_format="%.10g")
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": path})


def export_pattern(series: pd.DataFrame, pattern: GaitPattern, path: str):
    """
    Writes a sampled pattern as CSV behind a commented header with the pattern's kind,
    cycle time, speed and subject hash.
    """
    header = {
        "kind": pattern.kind.value,
        "cycle_time": f"{pattern.cycle_time:.10g}",
        "speed": f"{pattern.speed:.10g}",
        "subject": pattern.subject_hash(),
    }
    _write_with_header(series, path, header)


def plot_markers(pattern: GaitPattern, templates: Mapping[Channel, KeyEventTemplate]) -> pd.DataFrame:
    rows = []
    for ch in CHANNELS:
        for e in events_from_spline(pattern[ch], templates[ch]).events:
            rows.append({"channel": ch.value, "detector": e.detector_id, "t": e.t, "y": e.y})
    return pd.DataFrame(rows, columns=["channel", "detector", "t", "y"])


def export_plot_data(
    pattern: GaitPattern,
    path: str,
    templates: Mapping[Channel, KeyEventTemplate],
    grid_size: Optional[int] = None,
) -> List[str]:
    """
    Writes the pattern on the % grid to :code:`path` and its key events to a sibling
    ``.markers.csv`` file.

    :return: the written paths
    """
    grid_size = int(setting("GRID_SIZE") if grid_size is None else grid_size)
    grid = np.linspace(0.0, 100.0, grid_size)
    values = pd.DataFrame({"percent": grid, **{ch.value: pattern[ch].position(grid) for ch in CHANNELS}})
    markers_path = os.path.splitext(path)[0] + ".markers.csv"
    header = {"kind": pattern.kind.value, "cycle_time": f"{pattern.cycle_time:.10g}"}
    _write_with_header(values, path, header)
    _write_with_header(plot_markers(pattern, templates), markers_path, header)
    return [path, markers_path]
