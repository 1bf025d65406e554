"""
Key events: sparse (timing, value, velocity, acceleration) landmarks of a gait cycle.

Velocities are in unit/s and accelerations in unit/s², timings in % of the gait cycle.
"""
import dataclasses
import enum
import math
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import toml
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import exceptions
from .gait_data import Channel, GaitCycle, Side
from .settings import setting

TEMPLATES_FILE = os.path.join(os.path.dirname(__file__), "data", "templates.toml")
TOE_OFF_TEMPLATES_FILE = os.path.join(os.path.dirname(__file__), "data", "templates_toe_off.toml")

# detectors per template
DETECTOR_COUNT = {
    Channel.HipAbAd: 6,
    Channel.HipFlexExt: 6,
    Channel.KneeFlexExt: 6,
    Channel.PelvisLateral: 4,
}


class Signal(str, enum.Enum):
    Position = "Position"
    Velocity = "Velocity"


class Extremum(str, enum.Enum):
    Max = "Max"
    Min = "Min"


class Constraint(str, enum.Enum):
    NoConstraint = "None"
    VelocityZero = "VelocityZero"
    AccelerationZero = "AccelerationZero"


@dataclasses.dataclass(frozen=True)
class EventDetector(object):
    """
    How to find one key event: the extremum of a signal inside a phase window,
    or a sample at a pinned time.

    >>> EventDetector("heel_strike", Signal.Position, Extremum.Max, (0, 1), pinned_time=0).pinned
    True
    >>> EventDetector("bad", Signal.Position, Extremum.Max, (60, 40))
    Traceback (most recent call last):
        ...
    exogait.exceptions.InvariantViolation: ...
    """

    id: str
    signal: Signal
    extremum: Extremum
    window: Tuple[float, float]
    pinned_time: Optional[float] = None
    constraint: Constraint = Constraint.NoConstraint

    def __post_init__(self):
        object.__setattr__(self, "signal", Signal(self.signal))
        object.__setattr__(self, "extremum", Extremum(self.extremum))
        object.__setattr__(self, "constraint", Constraint(self.constraint))
        lo, hi = (float(w) for w in self.window)
        object.__setattr__(self, "window", (lo, hi))
        if not 0 <= lo < hi <= 100:
            raise exceptions.InvariantViolation(
                {"error": f"Window must satisfy 0 <= lo < hi <= 100, got {self.window}.", "detector": self.id}
            )
        if self.pinned_time is not None:
            object.__setattr__(self, "pinned_time", float(self.pinned_time))
            if not 0 <= self.pinned_time < 100:
                raise exceptions.InvariantViolation(
                    {"error": f"Pinned time {self.pinned_time} is outside [0, 100).", "detector": self.id}
                )

    @property
    def pinned(self) -> bool:
        return self.pinned_time is not None

    @property
    def midpoint(self) -> float:
        return (self.window[0] + self.window[1]) / 2

    def to_dict(self) -> Dict[str, Any]:
        dct = {
            "id": self.id,
            "signal": self.signal.value,
            "extremum": self.extremum.value,
            "window": list(self.window),
            "constraint": self.constraint.value,
        }
        if self.pinned_time is not None:
            dct["pinned_time"] = self.pinned_time
        return dct


@dataclasses.dataclass(frozen=True)
class KeyEventTemplate(object):
    channel: Channel
    detectors: Tuple[EventDetector, ...]

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        expected = DETECTOR_COUNT[self.channel]
        if len(self.detectors) != expected:
            raise exceptions.InvariantViolation(
                {
                    "error": f"{self.channel.value} needs {expected} detectors, got {len(self.detectors)}.",
                }
            )
        ids = [d.id for d in self.detectors]
        if len(set(ids)) != len(ids):
            raise exceptions.InvariantViolation(
                {"error": f"Duplicate detector ids in the {self.channel.value} template."}
            )
        midpoints = [d.midpoint for d in self.detectors]
        if any(b < a for a, b in zip(midpoints, midpoints[1:])):
            raise exceptions.InvariantViolation(
                {"error": f"Detectors of {self.channel.value} are not ordered by window midpoint."}
            )

    def detector(self, detector_id: str) -> EventDetector:
        for d in self.detectors:
            if d.id == detector_id:
                return d
        raise KeyError(detector_id)


@dataclasses.dataclass(frozen=True)
class KeyEvent(object):
    t: float
    y: float
    ydot: float
    yddot: float
    detector_id: str

    def __post_init__(self):
        for name in ("t", "y", "ydot", "yddot"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise exceptions.InvariantViolation(
                    {"error": f"Non-finite `{name}`.", "detector": self.detector_id}
                )
            object.__setattr__(self, name, value)
        if not 0 <= self.t < 100:
            raise exceptions.InvariantViolation(
                {"error": f"Event time {self.t} is outside [0, 100).", "detector": self.detector_id}
            )


@dataclasses.dataclass(frozen=True)
class KeyEventSet(object):
    """
    The key events of one cycle, sorted by time.
    """

    channel: Channel
    side: Side
    events: Tuple[KeyEvent, ...]
    cycle_time: float

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "events", tuple(self.events))
        if not self.cycle_time > 0:
            raise exceptions.InvariantViolation(
                {"error": f"Cycle time must be positive, got {self.cycle_time}."}
            )
        if not self.events:
            raise exceptions.InvariantViolation({"error": "No events."})
        check_separation([e.t for e in self.events], self.channel)
        if self.channel is not Channel.PelvisLateral and self.events[0].t != 0:
            raise exceptions.InvariantViolation(
                {
                    "error": f"The first {self.channel.value} event must be the heel strike at 0 %, "
                    f"got {self.events[0].t}.",
                }
            )

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events])

    def event(self, detector_id: str) -> KeyEvent:
        for e in self.events:
            if e.detector_id == detector_id:
                return e
        raise KeyError(detector_id)

    def __len__(self) -> int:
        return len(self.events)


def check_separation(times: Sequence[float], channel: Channel = None):
    """
    Raises :class:`OrderingViolation <exogait.exceptions.OrderingViolation>` unless the times
    increase strictly with at least the minimum separation, across the wrap as well.
    """
    min_sep = float(setting("MIN_SEPARATION")) - 1e-9
    times = list(times)
    gaps = [b - a for a, b in zip(times, times[1:])]
    if len(times) > 1:
        gaps.append(times[0] + 100 - times[-1])
    for i, gap in enumerate(gaps):
        if gap < min_sep:
            raise exceptions.OrderingViolation(
                {
                    "error": f"Events closer than {min_sep + 1e-9:g} %.",
                    "channel": channel.value if channel is not None else "",
                    "times": ", ".join(f"{t:.4f}" for t in times),
                    "index": str(i),
                }
            )


def differentiate_cycle(
    c: GaitCycle, cycle_time: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Periodic central differences on the %-grid, scaled to unit/s and unit/s².

    >>> import numpy as np
    >>> from exogait.gait_data import Channel, GaitCycle, Side
    >>> c = GaitCycle("S01", Channel.KneeFlexExt, Side.Right, None, 1.8, 1.0, np.full(101, 4.0))
    >>> vel, acc = differentiate_cycle(c)
    >>> float(abs(vel).max()), float(abs(acc).max())
    (0.0, 0.0)

    :param c: the cycle
    :param cycle_time: seconds per cycle, the cycle's own by default
    :return: velocity and acceleration on the cycle's grid
    """
    cycle_time = c.cycle_time if cycle_time is None else cycle_time
    if not cycle_time > 0:
        raise exceptions.InvariantViolation(
            {"error": f"Cycle time must be positive, got {cycle_time}."}
        )
    y = c.samples[:-1]
    h = 100.0 / y.size
    scale = 100.0 / cycle_time
    forward, backward = np.roll(y, -1), np.roll(y, 1)
    vel = (forward - backward) / (2 * h) * scale
    acc = (forward - 2 * y + backward) / h ** 2 * scale ** 2
    return np.append(vel, vel[0]), np.append(acc, acc[0])


def _periodic_spline(samples: np.ndarray) -> CubicSpline:
    knots = np.linspace(0.0, 100.0, samples.size)
    closed = np.append(samples[:-1], samples[0])
    return CubicSpline(knots, closed, bc_type="periodic")


def _locate(signal: np.ndarray, detector: EventDetector) -> float:
    """
    The most extreme local extremum of a periodic signal inside the detector window,
    refined with a 3-point parabola. Returns the time in %.
    """
    core = signal[:-1] if detector.extremum is Extremum.Max else -signal[:-1]
    m = core.size
    h = 100.0 / m
    lo, hi = detector.window
    indices = np.arange(math.ceil(lo / h - 1e-9), math.floor(hi / h + 1e-9) + 1)
    candidates = list(dict.fromkeys(int(k) % m for k in indices))
    if not candidates:
        raise exceptions.NoExtremumInWindow(
            {"error": "The window holds no grid sample.", "detector": detector.id}
        )
    # a window edge on a slope is not an extremum
    peaks = [i for i in candidates if core[i] >= core[(i - 1) % m] and core[i] >= core[(i + 1) % m]]
    if not peaks:
        raise exceptions.NoExtremumInWindow(
            {
                "error": f"No {detector.signal.value.lower()} {detector.extremum.value.lower()} "
                f"inside [{lo:g}, {hi:g}] %.",
                "detector": detector.id,
            }
        )
    k = max(peaks, key=lambda i: core[i])
    s_minus, s0, s_plus = core[(k - 1) % m], core[k], core[(k + 1) % m]
    denominator = s_minus - 2 * s0 + s_plus
    delta = 0.0 if denominator == 0 else 0.5 * (s_minus - s_plus) / denominator
    delta = min(max(delta, -0.5), 0.5)
    return ((k + delta) * h) % 100.0


def extract_events(
    c: GaitCycle,
    tmpl: KeyEventTemplate,
    cycle_time: Optional[float] = None,
    apply_constraints: bool = True,
) -> KeyEventSet:
    """
    Extracts one key event per detector of the template.

    Example:
        >>> import numpy as np
        >>> from exogait.gait_data import Channel, GaitCycle, Side
        >>> t = np.linspace(0, 100, 101)
        >>> c = GaitCycle("S01", Channel.PelvisLateral, Side.Right, None, 1.8, 1.2,
        ...               20 * np.sin(2 * np.pi * t / 100))
        >>> events = extract_events(c, default_templates()[Channel.PelvisLateral])
        >>> [(e.detector_id, round(e.t, 3)) for e in events.events if e.detector_id.startswith("position")]
        [('position_max', 25.0), ('position_min', 75.0)]

    :param c: the cycle
    :param tmpl: template of the cycle's channel
    :param cycle_time: seconds per cycle, the cycle's own by default
    :param apply_constraints: zero the derivative flagged by each detector's constraint
    :return: events sorted by time
    """
    if tmpl.channel != c.channel:
        raise exceptions.InvariantViolation(
            {"error": f"Template for {tmpl.channel.value} applied to a {c.channel.value} cycle."}
        )
    cycle_time = c.cycle_time if cycle_time is None else cycle_time
    vel, acc = differentiate_cycle(c, cycle_time)
    position, velocity, acceleration = (
        _periodic_spline(s) for s in (c.samples, vel, acc)
    )

    events = []
    for detector in tmpl.detectors:
        if detector.pinned:
            t = detector.pinned_time
        else:
            signal = c.samples if detector.signal is Signal.Position else vel
            t = _locate(signal, detector)
        ydot, yddot = float(velocity(t)), float(acceleration(t))
        if apply_constraints:
            if detector.constraint is Constraint.VelocityZero:
                ydot = 0.0
            elif detector.constraint is Constraint.AccelerationZero:
                yddot = 0.0
        events.append(KeyEvent(t, float(position(t)), ydot, yddot, detector.id))

    events.sort(key=lambda e: e.t)
    check_separation([e.t for e in events], c.channel)
    return KeyEventSet(c.channel, c.side, events, cycle_time)


def events_from_spline(spline, tmpl: KeyEventTemplate, step: float = 0.05) -> KeyEventSet:
    """
    Extracts key events from a continuous trajectory.

    The extremum is located on a fine scan of the window and refined with a bounded root
    search on the analytic derivative.

    :param spline: a trajectory with :code:`position`, :code:`velocity`, :code:`acceleration`
        methods taking % of the cycle, plus :code:`channel` and :code:`cycle_time`
    :param tmpl: template of the trajectory's channel
    :param step: scan resolution in %
    :return: events sorted by time
    """
    if tmpl.channel != spline.channel:
        raise exceptions.InvariantViolation(
            {"error": f"Template for {tmpl.channel.value} applied to a {spline.channel.value} trajectory."}
        )
    events = []
    for detector in tmpl.detectors:
        if detector.pinned:
            t = detector.pinned_time
        else:
            sign = 1.0 if detector.extremum is Extremum.Max else -1.0
            if detector.signal is Signal.Position:
                f, g = spline.position, spline.velocity
            else:
                f, g = spline.velocity, spline.acceleration
            lo, hi = detector.window
            n = int(round((hi - lo) / step)) + 1
            ts = np.linspace(lo - step, hi + step, n + 2)
            values = sign * f(ts)
            inner = values[1:-1]
            peaks = np.flatnonzero((inner >= values[:-2]) & (inner >= values[2:]))
            ga = gb = 0.0
            if peaks.size:
                k = int(peaks[np.argmax(inner[peaks])]) + 1
                a, b = ts[k - 1], ts[k + 1]
                ga, gb = sign * float(g(a)), sign * float(g(b))
            if peaks.size and ga == 0:
                t = a
            elif peaks.size and gb == 0:
                t = b
            elif peaks.size and ga > 0 > gb:
                t = brentq(lambda x: float(g(x)), a, b, xtol=1e-13)
            else:
                raise exceptions.NoExtremumInWindow(
                    {
                        "error": f"No {detector.signal.value.lower()} {detector.extremum.value.lower()} "
                        f"inside [{lo:g}, {hi:g}] %.",
                        "detector": detector.id,
                    }
                )
            t = t % 100.0
        ydot, yddot = float(spline.velocity(t)), float(spline.acceleration(t))
        if detector.constraint is Constraint.VelocityZero:
            ydot = 0.0
        elif detector.constraint is Constraint.AccelerationZero:
            yddot = 0.0
        events.append(KeyEvent(t, float(spline.position(t)), ydot, yddot, detector.id))

    events.sort(key=lambda e: e.t)
    return KeyEventSet(spline.channel, getattr(spline, "side", Side.Right), events, spline.cycle_time)


def load_templates(path: str) -> Dict[Channel, KeyEventTemplate]:
    """
    Reads a template file: one array of detector tables per channel.

    :param path: TOML file
    :return: map channel -> template
    """
    if not os.path.exists(path):
        raise exceptions.MissingFile({"error": "Template file not found.", "file": path})
    data = toml.load(path)
    templates = {}
    for name, detectors in data.items():
        try:
            channel = Channel(name)
            templates[channel] = KeyEventTemplate(
                channel,
                [
                    EventDetector(
                        id=d["id"],
                        signal=d["signal"],
                        extremum=d.get("extremum", "Max"),
                        window=tuple(d["window"]),
                        pinned_time=d.get("pinned_time"),
                        constraint=d.get("constraint", "None"),
                    )
                    for d in detectors
                ],
            )
        except (KeyError, ValueError, TypeError) as e:
            raise exceptions.SchemaMismatch(
                {"error": f"Invalid template `{name}`: {e!r}.", "file": path}
            )
    missing = [ch.value for ch in Channel if ch not in templates]
    if missing:
        raise exceptions.SchemaMismatch(
            {"error": f"No template for {', '.join(missing)}.", "file": path}
        )
    return {ch: templates[ch] for ch in Channel}


def save_templates(templates: Mapping[Channel, KeyEventTemplate], path: str):
    data = {
        ch.value: [d.to_dict() for d in templates[ch].detectors]
        for ch in Channel
        if ch in templates
    }
    try:
        with open(path, "w") as f:
            toml.dump(data, f)
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": path})


def default_templates() -> Dict[Channel, KeyEventTemplate]:
    """
    The bundled templates.

    >>> {ch.value: len(t.detectors) for ch, t in default_templates().items()}
    {'HipAbAd': 6, 'HipFlexExt': 6, 'KneeFlexExt': 6, 'PelvisLateral': 4}
    """
    return load_templates(TEMPLATES_FILE)


def extract_all(
    cycles: Sequence[GaitCycle], templates: Mapping[Channel, KeyEventTemplate]
) -> List[KeyEventSet]:
    """
    Extracts the events of every cycle, naming the offending cycle on failure.
    """
    result = []
    for c in cycles:
        try:
            result.append(extract_events(c, templates[c.channel]))
        except exceptions.ExoGaitError as e:
            raise exceptions.with_context(e, cycle=repr(c))
    return result
