"""
Gait database ingestion and normalization.

The canonical in-memory representation is a :class:`Dataset` of :class:`Subject` records and
time-normalized :class:`GaitCycle` s. Speeds are stored in km/h, heights in meters.

Example:
    >>> import numpy as np
    >>> grid = np.linspace(0, 100, 101)
    >>> c = GaitCycle("S01", Channel.KneeFlexExt, Side.Right, None, 1.8, 1.6,
    ...               30 + 25 * np.sin(2 * np.pi * grid / 100), speed_fraction=40)
    >>> c.grid_size, c.channel.unit
    (101, 'deg')
"""
import dataclasses
import enum
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import toml
from scipy.interpolate import CubicSpline

from . import exceptions
from .records import validate_record
from .settings import setting
from .utils import log
from .validator import between, finite, one_of, positive

DATASET_FORMAT = "exogait-dataset"
DATASET_VERSION = 1
SUBJECTS_FILE = "subjects.toml"
CYCLES_FILE = "cycles.csv"


class Channel(str, enum.Enum):
    HipAbAd = "HipAbAd"
    HipFlexExt = "HipFlexExt"
    KneeFlexExt = "KneeFlexExt"
    PelvisLateral = "PelvisLateral"

    @property
    def unit(self) -> str:
        return "mm" if self is Channel.PelvisLateral else "deg"

    @property
    def frontal(self) -> bool:
        """
        True for the channels mirrored between the left and the right leg.
        """
        return self in (Channel.HipAbAd, Channel.PelvisLateral)


class Side(str, enum.Enum):
    Left = "Left"
    Right = "Right"


class SpeedLevel(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"


class Gender(enum.IntEnum):
    Female = -1
    Male = 1


CHANNELS = tuple(Channel)


def level_fractions() -> Dict[SpeedLevel, float]:
    """
    Returns the percentage of the self-selected speed of every level.

    >>> level_fractions()[SpeedLevel.L1]
    40.0
    """
    fractions = setting("LEVEL_FRACTIONS")
    return {level: float(f) for level, f in zip(SpeedLevel, fractions)}


@dataclasses.dataclass(frozen=True)
class Subject(object):
    """
    One participant. :code:`height` is in meters, :code:`self_selected_speed` in km/h.
    """

    id: str
    age: float
    height: float
    mass: float
    gender: Gender
    self_selected_speed: float

    def __post_init__(self):
        validators = {
            "age": positive,
            "height": between(1.0, 2.5),
            "mass": between(20.0, 200.0),
            "gender": one_of((-1, 1)),
            "self_selected_speed": positive,
        }
        with validate_record(
            dataclasses.asdict(self),
            validators,
            box_all=False,
            source=f"subject `{self.id}`",
            age=float,
            height=float,
            mass=float,
            gender=int,
            self_selected_speed=float,
        ) as r:
            for name, value in r.items():
                object.__setattr__(self, name, value)
        object.__setattr__(self, "gender", Gender(self.gender))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "age": self.age,
            "height": self.height,
            "mass": self.mass,
            "gender": int(self.gender),
            "self_selected_speed": self.self_selected_speed,
        }


@dataclasses.dataclass(frozen=True, eq=False)
class GaitCycle(object):
    """
    One time-normalized cycle of one channel, sample 0 at heel strike.

    :code:`speed_level` stays :code:`None` until :func:`filter_speed_levels` labels the cycle;
    :code:`speed_fraction` is the percentage of the subject's self-selected speed.
    """

    subject_id: str
    channel: Channel
    side: Side
    speed_level: Optional[SpeedLevel]
    speed: float
    cycle_time: float
    samples: np.ndarray
    speed_fraction: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        object.__setattr__(self, "side", Side(self.side))
        if self.speed_level is not None:
            object.__setattr__(self, "speed_level", SpeedLevel(self.speed_level))
        samples = np.array(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

        source = f"cycle {self.subject_id}/{self.channel.value}/{self.side.value}"
        if samples.ndim != 1 or samples.size < 51:
            raise exceptions.InvariantViolation(
                {
                    "error": f"A cycle needs a 1-D grid of at least 51 samples, got shape {samples.shape}.",
                    "source": source,
                }
            )
        bad = np.flatnonzero(~np.isfinite(samples))
        if bad.size:
            raise exceptions.InvariantViolation(
                {
                    "error": f"Non-finite sample {samples[bad[0]]}.",
                    "sample": str(bad[0]),
                    "source": source,
                }
            )
        with validate_record({"speed": self.speed, "cycle_time": self.cycle_time}, source=source).positive(
            "speed"
        ).positive("cycle_time"):
            pass

    @property
    def grid_size(self) -> int:
        return self.samples.size

    @property
    def grid(self) -> np.ndarray:
        """
        The % gait cycle of every sample.
        """
        return np.linspace(0.0, 100.0, self.grid_size)

    def replace(self, **changes) -> "GaitCycle":
        return dataclasses.replace(self, **changes)

    def __repr__(self) -> str:
        level = self.speed_level.value if self.speed_level else f"{self.speed_fraction:g}%"
        return (
            f"GaitCycle({self.subject_id}, {self.channel.value}, {self.side.value}, "
            f"{level}, N={self.grid_size})"
        )


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset(object):
    """
    Subjects and their cycles on a common grid. Immutable after construction.
    """

    subjects: Tuple[Subject, ...]
    cycles: Tuple[GaitCycle, ...]
    grid_size: int

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "cycles", tuple(self.cycles))
        self._check()

    def _check(self):
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise exceptions.InvariantViolation({"error": "Duplicate subject ids."})
        if self.grid_size < 51:
            raise exceptions.InvariantViolation(
                {"error": f"Grid size must be at least 51, got {self.grid_size}."}
            )
        known = set(ids)
        by_id = {s.id: s for s in self.subjects}
        fractions = level_fractions()
        tolerance = float(setting("LEVEL_TOLERANCE")) / 100
        groups: Dict[Tuple[str, str], Dict[Side, set]] = {}
        for i, c in enumerate(self.cycles):
            if c.grid_size != self.grid_size:
                raise exceptions.InvariantViolation(
                    {
                        "error": f"Cycle has {c.grid_size} samples, the dataset grid is {self.grid_size}.",
                        "cycle": repr(c),
                    }
                )
            if c.subject_id not in known:
                raise exceptions.InvariantViolation(
                    {"error": f"Unknown subject `{c.subject_id}`.", "cycle": repr(c)}
                )
            if c.speed_level is not None:
                expected = by_id[c.subject_id].self_selected_speed * fractions[c.speed_level] / 100
                if abs(c.speed - expected) > tolerance * expected:
                    raise exceptions.InvariantViolation(
                        {
                            "error": f"Speed {c.speed:.3f} km/h outside the {c.speed_level.value} band "
                            f"around {expected:.3f} km/h.",
                            "cycle": repr(c),
                        }
                    )
            key = (c.subject_id, _condition(c))
            groups.setdefault(key, {}).setdefault(c.side, set()).add(c.channel)

        for (subject_id, condition), sides in groups.items():
            if any(len(channels) == len(CHANNELS) for channels in sides.values()):
                continue
            best = max(sides.values(), key=len)
            missing = [ch.value for ch in CHANNELS if ch not in best]
            raise exceptions.InvariantViolation(
                {
                    "error": "Not every channel is present for any side.",
                    "subject": subject_id,
                    "condition": condition,
                    "channel": ", ".join(missing),
                }
            )

    @property
    def subject_ids(self) -> List[str]:
        return [s.id for s in self.subjects]

    def subject(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise KeyError(subject_id)

    def select(
        self,
        subject_id: Optional[str] = None,
        channel: Optional[Channel] = None,
        side: Optional[Side] = None,
        level: Optional[SpeedLevel] = None,
    ) -> List[GaitCycle]:
        """
        Returns the cycles matching every given criterion.
        """
        return [
            c
            for c in self.cycles
            if (subject_id is None or c.subject_id == subject_id)
            and (channel is None or c.channel == channel)
            and (side is None or c.side == side)
            and (level is None or c.speed_level == level)
        ]

    def cycle(
        self, subject_id: str, channel: Channel, side: Side, level: SpeedLevel
    ) -> GaitCycle:
        found = self.select(subject_id, channel, side, level)
        if not found:
            raise KeyError((subject_id, channel, side, level))
        return found[0]

    def levels(self) -> List[SpeedLevel]:
        present = {c.speed_level for c in self.cycles}
        return [level for level in SpeedLevel if level in present]

    def without_subject(self, subject_id: str) -> "Dataset":
        return Dataset(
            [s for s in self.subjects if s.id != subject_id],
            [c for c in self.cycles if c.subject_id != subject_id],
            self.grid_size,
        )

    def only_subject(self, subject_id: str) -> "Dataset":
        return Dataset(
            [s for s in self.subjects if s.id == subject_id],
            [c for c in self.cycles if c.subject_id == subject_id],
            self.grid_size,
        )

    def __repr__(self) -> str:
        return f"Dataset(subjects={len(self.subjects)}, cycles={len(self.cycles)}, N={self.grid_size})"


def _condition(c: GaitCycle) -> str:
    return c.speed_level.value if c.speed_level is not None else f"{c.speed_fraction:g}%"


@dataclasses.dataclass(frozen=True, eq=False)
class MarkerTrace(object):
    """
    Raw marker trajectories of one trial.

    :code:`markers` maps a label to an :code:`(n, 3)` array in mm, :code:`events` maps a side to the
    frame indices of its heel strikes.
    """

    subject_id: str
    markers: Mapping[str, np.ndarray]
    rate: float
    events: Mapping[Side, np.ndarray]
    speed: float = float("nan")
    speed_fraction: float = float("nan")
    speed_level: Optional[SpeedLevel] = None
    lateral_axis: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise exceptions.InvariantViolation(
                {"error": f"Sample rate must be positive, got {self.rate}."}
            )
        markers = {k: np.asarray(v, dtype=float) for k, v in self.markers.items()}
        events = {}
        for side, frames in self.events.items():
            frames = np.asarray(frames, dtype=int)
            if np.any(np.diff(frames) <= 0):
                raise exceptions.InvariantViolation(
                    {
                        "error": "Heel-strike indices must be strictly increasing.",
                        "side": Side(side).value,
                    }
                )
            events[Side(side)] = frames
        object.__setattr__(self, "markers", markers)
        object.__setattr__(self, "events", events)

    @property
    def n_frames(self) -> int:
        return min((len(v) for v in self.markers.values()), default=0)


def resample_cycle(samples: Sequence[float], grid_size: int) -> np.ndarray:
    """
    Resamples one cycle given on a uniform grid over [0, 100] % onto :code:`grid_size` points,
    with periodic cubic interpolation. The last input sample closes the cycle and is not used
    as a knot.

    >>> import numpy as np
    >>> y = np.sin(2 * np.pi * np.linspace(0, 1, 51))
    >>> bool(np.allclose(resample_cycle(y, 101)[::2], y, atol=1e-12))
    True

    :param samples: the cycle
    :param grid_size: number of output samples
    :return: the resampled cycle
    """
    y = np.asarray(samples, dtype=float)
    if y.size == grid_size:
        return y.copy()
    core = y[:-1]
    knots = np.linspace(0.0, 100.0, core.size + 1)
    spline = CubicSpline(knots, np.append(core, core[0]), bc_type="periodic")
    return spline(np.linspace(0.0, 100.0, grid_size))


def canonical_cycle(c: GaitCycle) -> GaitCycle:
    """
    Maps a cycle to the right-leg sign convention: left frontal-plane channels are negated and
    every left cycle is relabeled Right. Right cycles are returned unchanged.
    """
    if c.side is Side.Right:
        return c
    samples = -c.samples if c.channel.frontal else c.samples
    return c.replace(side=Side.Right, samples=samples)


def ensemble_average(cycles: Sequence[GaitCycle]) -> GaitCycle:
    """
    Pointwise mean of cycles sharing the channel, side and grid.

    >>> import numpy as np
    >>> c = GaitCycle("S01", Channel.HipAbAd, Side.Right, None, 1.8, 1.6, np.ones(101))
    >>> float(ensemble_average([c, c.replace(samples=-np.ones(101))]).samples.max())
    0.0
    """
    cycles = list(cycles)
    if not cycles:
        raise exceptions.EmptyInput({"error": "Nothing to average."})
    first = cycles[0]
    for c in cycles[1:]:
        if c.channel != first.channel or c.side != first.side:
            raise exceptions.MixedChannels(
                {
                    "error": "Cannot average cycles of different channels or sides.",
                    "expected": f"{first.channel.value}/{first.side.value}",
                    "got": f"{c.channel.value}/{c.side.value}",
                }
            )
        if c.grid_size != first.grid_size:
            raise exceptions.GridMismatch(
                {"error": f"Grid sizes differ: {first.grid_size} vs {c.grid_size}."}
            )

    def common(values: Iterable[Any], default: Any) -> Any:
        values = set(values)
        return values.pop() if len(values) == 1 else default

    return GaitCycle(
        subject_id=common((c.subject_id for c in cycles), "ensemble"),
        channel=first.channel,
        side=first.side,
        speed_level=common((c.speed_level for c in cycles), None),
        speed=float(np.mean([c.speed for c in cycles])),
        cycle_time=float(np.mean([c.cycle_time for c in cycles])),
        samples=np.mean(np.stack([c.samples for c in cycles]), axis=0),
        speed_fraction=float(np.mean([c.speed_fraction for c in cycles])),
    )


def filter_speed_levels(ds: Dataset) -> Dataset:
    """
    Keeps the cycles recorded at the level fractions of the self-selected speed, labels them
    L1/L2/L3, and drops those faster than the treadmill limit.
    Already labeled cycles are kept as they are, which makes the operation idempotent.
    """
    fractions = level_fractions()
    limit = float(setting("TREADMILL_LIMIT"))
    tolerance = float(setting("LEVEL_TOLERANCE")) / 100
    kept, over_limit, out_of_band = [], 0, 0

    for c in ds.cycles:
        level = c.speed_level
        if level is None:
            level = next(
                (
                    lv
                    for lv, f in fractions.items()
                    if np.isfinite(c.speed_fraction) and abs(c.speed_fraction - f) < 1e-6
                ),
                None,
            )
            if level is None:
                continue
            expected = ds.subject(c.subject_id).self_selected_speed * fractions[level] / 100
            if abs(c.speed - expected) > tolerance * expected:
                out_of_band += 1
                continue
        if c.speed > limit:
            over_limit += 1
            continue
        kept.append(c if c.speed_level is level else c.replace(speed_level=level))

    if over_limit:
        log.info(f"Dropped {over_limit} cycles above the treadmill limit of {limit} km/h.")
    if out_of_band:
        log.warning(f"Dropped {out_of_band} cycles whose speed does not match their level.")
    if not kept:
        raise exceptions.EmptyResult(
            {"error": "No cycle survives the speed-level filter.", "limit": str(limit)}
        )
    return Dataset(ds.subjects, kept, ds.grid_size)


def derive_pelvis_lateral(
    trace: MarkerTrace, grid_size: int, labels: Optional[Sequence[str]] = None
) -> List[GaitCycle]:
    """
    Derives the lateral pelvis displacement from the pelvis markers.

    The lateral coordinate of the marker centroid is segmented at the heel strikes of every
    side, each stride is time-normalized to the grid and its mean removed, and the strides are
    averaged into one ensemble cycle per side.

    :param trace: raw markers and heel strikes
    :param grid_size: number of samples per cycle
    :param labels: pelvis markers to use, all markers of the trace by default
    :return: one PelvisLateral cycle per side with heel strikes
    """
    labels = list(labels) if labels is not None else list(trace.markers)
    missing = [label for label in labels if label not in trace.markers]
    if missing or not labels:
        raise exceptions.MissingMarker(
            {"error": "Pelvis markers not found.", "markers": ", ".join(missing) or "<none>",
             "subject": trace.subject_id}
        )
    n = trace.n_frames
    centroid = np.mean(
        np.stack([trace.markers[label][:n, trace.lateral_axis] for label in labels]), axis=0
    )
    grid = np.linspace(0.0, 1.0, grid_size)

    cycles = []
    for side in (Side.Left, Side.Right):
        frames = trace.events.get(side)
        if frames is None or len(frames) == 0:
            continue
        frames = frames[frames < n]
        if len(frames) < 4:
            raise exceptions.InsufficientCycles(
                {
                    "error": f"{max(len(frames) - 1, 0)} complete strides, at least 3 are required.",
                    "subject": trace.subject_id,
                    "side": side.value,
                }
            )
        strides = []
        for start, stop in zip(frames[:-1], frames[1:]):
            segment = centroid[start : stop + 1]
            t = np.linspace(0.0, 1.0, segment.size)
            normalized = CubicSpline(t, segment)(grid)
            strides.append(normalized - normalized[:-1].mean())
        cycles.append(
            GaitCycle(
                subject_id=trace.subject_id,
                channel=Channel.PelvisLateral,
                side=side,
                speed_level=trace.speed_level,
                speed=trace.speed,
                cycle_time=float(np.mean(np.diff(frames))) / trace.rate,
                samples=np.mean(np.stack(strides), axis=0),
                speed_fraction=trace.speed_fraction,
            )
        )
    if not cycles:
        raise exceptions.InsufficientCycles(
            {"error": "No heel-strike events.", "subject": trace.subject_id}
        )
    return cycles


def load_marker_trace(
    path: str,
    markers: Mapping[str, Any],
    subject_id: str,
    events_path: Optional[str] = None,
    speed: float = float("nan"),
    speed_fraction: float = float("nan"),
) -> MarkerTrace:
    """
    Reads a delimited marker file and its heel-strike event file.

    :param path: marker file, one row per frame, one column per marker coordinate
    :param markers: the :code:`[markers]` schema section
        (:code:`labels`, :code:`axes`, :code:`lateral_axis`, :code:`column`, :code:`rate`, :code:`delimiter`)
    :param subject_id: subject the trial belongs to
    :param events_path: delimited file with :code:`side` and :code:`frame` columns
    :param speed: trial speed in km/h
    :param speed_fraction: trial speed in % of the self-selected speed
    :return: the trace
    """
    if not os.path.exists(path):
        raise exceptions.MissingFile({"error": "Marker file not found.", "file": path})
    if events_path is None or not os.path.exists(events_path):
        raise exceptions.MissingFile({"error": "Event file not found.", "file": str(events_path)})

    axes = list(markers.get("axes", ["X", "Y", "Z"]))
    lateral = markers.get("lateral_axis", axes[0])
    if lateral not in axes:
        raise exceptions.SchemaMismatch(
            {"error": f"Lateral axis `{lateral}` is not one of {axes}.", "file": path}
        )
    pattern = markers.get("column", "{label}{axis}")
    frame = pd.read_csv(
        path, sep=markers.get("delimiter", ","), float_precision="round_trip"
    )
    trace = {}
    for label in markers.get("labels", []):
        columns = [pattern.format(label=label, axis=axis) for axis in axes]
        if not all(col in frame.columns for col in columns):
            raise exceptions.MissingMarker(
                {"error": f"Marker `{label}` not found.", "file": path}
            )
        trace[label] = frame[columns].to_numpy(dtype=float)

    events = pd.read_csv(events_path, dtype={"side": str})
    for col in ("side", "frame"):
        if col not in events.columns:
            raise exceptions.SchemaMismatch(
                {"error": f"Missing required column `{col}`.", "file": events_path}
            )
    by_side = {}
    for i, row in events.iterrows():
        with validate_record(
            row.to_dict(),
            {"side": one_of(("Left", "Right", "L", "R"))},
            source=f"{events_path}:{i + 2}",
            side=str,
            frame=int,
        ) as r:
            side = Side.Left if r.side.startswith("L") else Side.Right
            by_side.setdefault(side, []).append(r.frame)

    return MarkerTrace(
        subject_id=subject_id,
        markers=trace,
        rate=float(markers.get("rate", 100.0)),
        events={side: sorted(frames) for side, frames in by_side.items()},
        speed=speed,
        speed_fraction=speed_fraction,
        lateral_axis=axes.index(lateral),
    )


# Ingestion
def _read_table(path: str, delimiter: str = ",") -> pd.DataFrame:
    if not os.path.exists(path):
        raise exceptions.MissingFile({"error": "File not found.", "file": path})
    return pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)


def _load_schema(schema: Union[str, Mapping[str, Any]]) -> Mapping[str, Any]:
    if isinstance(schema, Mapping):
        return schema
    if not os.path.exists(schema):
        raise exceptions.MissingFile({"error": "Schema file not found.", "file": schema})
    return toml.load(schema)


_HEIGHT_UNITS = {"m": 1.0, "cm": 0.01, "mm": 0.001}
_SPEED_UNITS = {"km/h": 1.0, "m/s": 3.6}


def _unit(table: Mapping[str, Any], key: str, units: Mapping[str, float], default: str) -> float:
    unit = table.get(key, default)
    if unit not in units:
        raise exceptions.SchemaMismatch(
            {"error": f"Unknown unit `{unit}` for `{key}`, expected one of {list(units)}."}
        )
    return units[unit]


def _ingest_subjects(root: str, table: Mapping[str, Any]) -> List[Subject]:
    path = os.path.join(root, table["file"])
    frame = _read_table(path, table.get("delimiter", ","))
    height_scale = _unit(table, "height_unit", _HEIGHT_UNITS, "m")
    speed_scale = _unit(table, "speed_unit", _SPEED_UNITS, "km/h")
    gender_map = {str(k): int(v) for k, v in table.get("gender_map", {"F": -1, "M": 1}).items()}
    columns = {
        name: table.get(name, name)
        for name in ("id", "age", "height", "mass", "gender", "speed")
    }

    def gender(raw: str) -> int:
        if raw not in gender_map:
            raise ValueError(raw)
        return gender_map[raw]

    subjects = []
    for i, row in frame.iterrows():
        record = {}
        for name, column in columns.items():
            if column in row.index:
                record[name] = row[column]
        source = f"{path}:{i + 2}"
        with validate_record(
            record, box_all=False, source=source,
            id=str, age=float, height=float, mass=float, gender=gender, speed=float,
        ) as r:
            subjects.append(
                Subject(
                    id=r.id,
                    age=r.age,
                    height=r.height * height_scale,
                    mass=r.mass,
                    gender=Gender(r.gender),
                    self_selected_speed=r.speed * speed_scale,
                )
            )
    return subjects


def _ingest_trials(root: str, table: Mapping[str, Any], subjects: Mapping[str, Subject]):
    path = os.path.join(root, table["file"])
    frame = _read_table(path, table.get("delimiter", ","))
    speed_scale = _unit(table, "speed_unit", _SPEED_UNITS, "km/h")
    optional = {"speed": table.get("speed"), "cycle_time": table.get("cycle_time")}

    trials = []
    for i, row in frame.iterrows():
        source = f"{path}:{i + 2}"
        record = {
            "id": row.get(table.get("id", "id")),
            "trial": row.get(table.get("trial", "trial")),
            "fraction": row.get(table.get("fraction", "fraction")),
        }
        factories = {"id": str, "trial": str, "fraction": float}
        for name, column in optional.items():
            if column is not None and column in row.index and row[column] != "":
                record[name] = row[column]
                factories[name] = float
        record = {k: v for k, v in record.items() if v is not None}
        with validate_record(record, source=source, **factories).positive("fraction") as r:
            trial = r.to_dict()
        if trial["id"] not in subjects:
            raise exceptions.InvariantViolation(
                {"error": f"Unknown subject `{trial['id']}`.", "source": source}
            )
        if "speed" in trial:
            trial["speed"] *= speed_scale
        else:
            trial["speed"] = subjects[trial["id"]].self_selected_speed * trial["fraction"] / 100
        trial["source"] = source
        trials.append(trial)
    return trials


def _ingest_angles(
    root: str, schema: Mapping[str, Any], trial: Dict[str, Any], grid_size: int
) -> List[GaitCycle]:
    angles = schema.get("angles", {})
    delimiter = angles.get("delimiter", ",")
    cycles = []
    # markers first: they may supply the trial's cycle time
    channels = sorted(
        angles.get("channels", {}).items(), key=lambda kv: kv[1].get("source") != "markers"
    )
    for name, spec in channels:
        try:
            channel = Channel(name)
        except ValueError:
            raise exceptions.SchemaMismatch({"error": f"Unknown channel `{name}`."})
        if spec.get("source") == "markers":
            cycles.extend(_ingest_markers(root, schema, trial, grid_size))
            continue

        path = os.path.join(root, spec["file"].format(subject=trial["id"], trial=trial["trial"]))
        if not os.path.exists(path):
            log.warning(f"Skipping {channel.value} of {trial['id']}/{trial['trial']}: {path} not found.")
            continue
        frame = pd.read_csv(path, sep=delimiter, float_precision="round_trip")
        cycle_time = trial.get("cycle_time")
        if cycle_time is None:
            raise exceptions.SchemaMismatch(
                {"error": "No cycle time for the trial.", "source": trial["source"]}
            )
        for side in Side:
            column = spec.get(side.value)
            if column is None:
                continue
            if column not in frame.columns:
                raise exceptions.SchemaMismatch(
                    {"error": f"Missing column `{column}`.", "file": path}
                )
            values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise exceptions.InvariantViolation(
                    {"error": f"Non-finite sample in `{column}`.", "file": path, "row": str(bad[0] + 2)}
                )
            cycles.append(
                GaitCycle(
                    subject_id=trial["id"],
                    channel=channel,
                    side=side,
                    speed_level=None,
                    speed=trial["speed"],
                    cycle_time=cycle_time,
                    samples=resample_cycle(values, grid_size),
                    speed_fraction=trial["fraction"],
                )
            )
    return cycles


def _ingest_markers(
    root: str, schema: Mapping[str, Any], trial: Dict[str, Any], grid_size: int
) -> List[GaitCycle]:
    markers = schema.get("markers")
    if markers is None:
        raise exceptions.SchemaMismatch(
            {"error": "PelvisLateral is routed to markers but the schema has no [markers] section."}
        )
    path = os.path.join(root, markers["file"].format(subject=trial["id"], trial=trial["trial"]))
    events = os.path.join(root, markers["events"].format(subject=trial["id"], trial=trial["trial"]))
    if not os.path.exists(path) or not os.path.exists(events):
        log.warning(f"Skipping PelvisLateral of {trial['id']}/{trial['trial']}: marker or event file not found.")
        return []
    trace = load_marker_trace(path, markers, trial["id"], events, trial["speed"], trial["fraction"])
    cycles = derive_pelvis_lateral(trace, grid_size, markers.get("labels"))
    if "cycle_time" not in trial:
        trial["cycle_time"] = float(np.mean([c.cycle_time for c in cycles]))
    return cycles


def ingest_dataset(
    root: str, schema: Union[None, str, Mapping[str, Any]] = None, grid_size: Optional[int] = None
) -> Dataset:
    """
    Loads a gait database.

    Without a schema, :code:`root` must hold the canonical layout written by
    :func:`export_dataset`. With a schema (a TOML file or a mapping with :code:`[subjects]`,
    :code:`[trials]`, :code:`[angles]` and optionally :code:`[markers]` sections) the raw
    per-trial files are read, resampled to the grid, and speeds are converted to km/h.

    :param root: database directory
    :param schema: schema file or mapping
    :param grid_size: samples per cycle, the :code:`GRID_SIZE` setting by default
    :return: a validated dataset
    """
    if not os.path.isdir(root):
        raise exceptions.MissingFile({"error": "Dataset root not found.", "file": root})
    if schema is None:
        return _ingest_canonical(root)

    schema = _load_schema(schema)
    grid_size = int(grid_size or schema.get("grid_size") or setting("GRID_SIZE"))
    for section in ("subjects", "trials", "angles"):
        if section not in schema:
            raise exceptions.SchemaMismatch({"error": f"Missing schema section [{section}]."})

    subjects = _ingest_subjects(root, schema["subjects"])
    by_id = {s.id: s for s in subjects}
    cycles = []
    for trial in _ingest_trials(root, schema["trials"], by_id):
        cycles.extend(_ingest_angles(root, schema, trial, grid_size))
    ds = Dataset(subjects, cycles, grid_size)
    log.info(f"Ingested {ds!r} from {root}.")
    return ds


def _ingest_canonical(root: str) -> Dataset:
    meta_path = os.path.join(root, SUBJECTS_FILE)
    cycles_path = os.path.join(root, CYCLES_FILE)
    for path in (meta_path, cycles_path):
        if not os.path.exists(path):
            raise exceptions.MissingFile({"error": "File not found.", "file": path})

    meta = toml.load(meta_path)
    if meta.get("format") != DATASET_FORMAT:
        raise exceptions.SchemaMismatch(
            {"error": f"Not an {DATASET_FORMAT} file.", "file": meta_path}
        )
    grid_size = int(meta["grid_size"])
    subjects = []
    for i, record in enumerate(meta.get("subjects", [])):
        with validate_record(
            record, source=f"{meta_path}:subjects[{i}]",
            id=str, age=float, height=float, mass=float, gender=int, self_selected_speed=float,
        ) as r:
            subjects.append(Subject(**r.to_dict()))

    sample_columns = [_sample_column(k, grid_size) for k in range(grid_size)]
    frame = pd.read_csv(
        cycles_path,
        dtype={"subject_id": str, "channel": str, "side": str, "level": str},
        keep_default_na=False,
        na_values={"fraction": ["nan"]},
        float_precision="round_trip",
    )
    header = ["subject_id", "channel", "side", "level", "fraction", "speed", "cycle_time"]
    missing = [col for col in header + sample_columns if col not in frame.columns]
    if missing:
        raise exceptions.SchemaMismatch(
            {"error": f"Missing columns {missing[:3]}.", "file": cycles_path}
        )
    samples = frame[sample_columns].to_numpy(dtype=float)
    cycles = []
    for i, row in enumerate(frame[header].itertuples(index=False)):
        source = f"{cycles_path}:{i + 2}"
        try:
            cycles.append(
                GaitCycle(
                    subject_id=row.subject_id,
                    channel=Channel(row.channel),
                    side=Side(row.side),
                    speed_level=SpeedLevel(row.level) if row.level else None,
                    speed=float(row.speed),
                    cycle_time=float(row.cycle_time),
                    samples=samples[i],
                    speed_fraction=float(row.fraction),
                )
            )
        except ValueError as e:
            raise exceptions.SchemaMismatch({"error": str(e), "source": source})
        except exceptions.ExoGaitError as e:
            raise exceptions.with_context(e, source=source)
    return Dataset(subjects, cycles, grid_size)


def _sample_column(k: int, grid_size: int) -> str:
    width = max(3, len(str(grid_size - 1)))
    return f"s{k:0{width}d}"


def export_dataset(ds: Dataset, root: str) -> List[str]:
    """
    Writes the canonical layout: a subjects TOML file and a cycles CSV file.

    :param ds: dataset
    :param root: output directory, created if needed
    :return: written paths
    """
    try:
        os.makedirs(root, exist_ok=True)
        meta_path = os.path.join(root, SUBJECTS_FILE)
        cycles_path = os.path.join(root, CYCLES_FILE)
        meta = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "grid_size": ds.grid_size,
            "subjects": [s.to_dict() for s in ds.subjects],
        }
        with open(meta_path, "w") as f:
            toml.dump(meta, f)

        header = pd.DataFrame(
            {
                "subject_id": [c.subject_id for c in ds.cycles],
                "channel": [c.channel.value for c in ds.cycles],
                "side": [c.side.value for c in ds.cycles],
                "level": [c.speed_level.value if c.speed_level else "" for c in ds.cycles],
                "fraction": [c.speed_fraction for c in ds.cycles],
                "speed": [c.speed for c in ds.cycles],
                "cycle_time": [c.cycle_time for c in ds.cycles],
            }
        )
        columns = [_sample_column(k, ds.grid_size) for k in range(ds.grid_size)]
        samples = pd.DataFrame(
            np.stack([c.samples for c in ds.cycles]) if ds.cycles else np.empty((0, ds.grid_size)),
            columns=columns,
        )
        pd.concat([header, samples], axis=1).to_csv(cycles_path, index=False, na_rep="nan")
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": root})
    return [meta_path, cycles_path]


def describe_subjects(ds: Dataset) -> pd.DataFrame:
    """
    Mean, standard deviation, minimum and maximum of age [years], height [cm] and mass [kg].
    """
    frame = pd.DataFrame(
        {
            "age": [s.age for s in ds.subjects],
            "height_cm": [s.height * 100 for s in ds.subjects],
            "mass": [s.mass for s in ds.subjects],
        }
    )
    return frame.agg(["mean", "std", "min", "max"]).T


def speed_level_statistics(ds: Dataset) -> pd.DataFrame:
    """
    Mean and standard deviation over subjects of the speed [km/h] of every level.
    """
    rows = [
        {"subject": c.subject_id, "level": c.speed_level.value, "speed": c.speed}
        for c in ds.cycles
        if c.speed_level is not None
    ]
    if not rows:
        raise exceptions.EmptyInput({"error": "The dataset has no labeled speed levels."})
    frame = pd.DataFrame(rows).groupby(["level", "subject"])["speed"].mean()
    return frame.groupby(level="level").agg(["mean", "std"])
