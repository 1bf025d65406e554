import functools
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from exogait.gait_data import CHANNELS, Channel, Dataset, GaitCycle, Gender, Side, SpeedLevel, Subject, level_fractions
from exogait.key_events import KeyEventSet, default_templates
from exogait.synthetic import synthetic_event_laws, synthetic_events
from exogait.trajectory import build_spline


def subject(id: str = "S01", **overrides) -> Subject:
    attributes = dict(age=25.0, height=1.76, mass=69.25, gender=Gender.Male, self_selected_speed=4.5)
    attributes.update(overrides)
    return Subject(id=id, **attributes)


@functools.lru_cache(maxsize=None)
def _reference_events() -> Dict[Channel, KeyEventSet]:
    templates = default_templates()
    return synthetic_events(synthetic_event_laws(templates), templates, subject(), 2.5)


def waveform(channel: Channel, grid_size: int = 101, amplitude: float = 1.0) -> np.ndarray:
    """
    The synthetic reference subject at 2.5 km/h: a smooth periodic shape with the extrema
    the default templates look for.
    """
    y = amplitude * build_spline(_reference_events()[channel]).position(np.linspace(0.0, 100.0, grid_size))
    y[-1] = y[0]
    return y


def cycle(
    channel: Channel = Channel.KneeFlexExt,
    samples: Optional[Sequence[float]] = None,
    side: Side = Side.Right,
    level: Optional[SpeedLevel] = None,
    speed: float = 1.8,
    cycle_time: float = 1.2,
    subject_id: str = "S01",
    fraction: float = float("nan"),
    grid_size: int = 101,
) -> GaitCycle:
    if samples is None:
        samples = waveform(channel, grid_size)
    return GaitCycle(subject_id, channel, side, level, speed, cycle_time, samples, speed_fraction=fraction)


def labeled_cycles(s: Subject, sides: Sequence[Side] = (Side.Right,), grid_size: int = 101) -> List[GaitCycle]:
    """
    Every channel at every level for the given sides, left frontal channels mirrored.
    """
    cycles = []
    for level, fraction in level_fractions().items():
        v = s.self_selected_speed * fraction / 100
        for side in sides:
            for ch in CHANNELS:
                y = waveform(ch, grid_size)
                if side is Side.Left and ch.frontal:
                    y = -y
                cycles.append(cycle(ch, y, side, level, v, 1.4, s.id, fraction, grid_size))
    return cycles


def labeled_dataset(n: int = 3, sides: Sequence[Side] = (Side.Right,), grid_size: int = 101) -> Dataset:
    subjects = [subject(f"S{i + 1:02d}", age=25.0 + 5 * i, height=1.6 + 0.05 * i) for i in range(n)]
    cycles = [c for s in subjects for c in labeled_cycles(s, sides, grid_size)]
    return Dataset(subjects, cycles, grid_size)


# raw database layout read through ``RAW_SCHEMA``
RAW_SCHEMA: Dict = {
    "grid_size": 101,
    "subjects": {
        "file": "info.csv",
        "id": "Subject",
        "age": "Age",
        "height": "Height",
        "height_unit": "cm",
        "mass": "Mass",
        "gender": "Gender",
        "speed": "SelfSpeed",
        "speed_unit": "m/s",
    },
    "trials": {
        "file": "trials.csv",
        "id": "Subject",
        "trial": "Trial",
        "fraction": "Percent",
        "speed": "Speed",
        "speed_unit": "m/s",
    },
    "angles": {
        "delimiter": "\t",
        "channels": {
            "HipFlexExt": {"file": "{subject}_{trial}_ang.txt", "Left": "LHipZ", "Right": "RHipZ"},
            "HipAbAd": {"file": "{subject}_{trial}_ang.txt", "Left": "LHipX", "Right": "RHipX"},
            "KneeFlexExt": {"file": "{subject}_{trial}_ang.txt", "Left": "LKneeZ", "Right": "RKneeZ"},
            "PelvisLateral": {"source": "markers"},
        },
    },
    "markers": {
        "file": "{subject}_{trial}_mkr.csv",
        "events": "{subject}_{trial}_events.csv",
        "labels": ["RASI", "LASI"],
        "axes": ["X", "Y", "Z"],
        "lateral_axis": "X",
        "rate": 100.0,
    },
}

RAW_STRIDE_FRAMES = 120
RAW_TRIALS = (("T01", 40.0), ("T02", 55.0), ("T03", 70.0), ("T04", 100.0))


def write_raw_database(root: str, ids: Sequence[str] = ("S01", "S02"), angle_rows: int = 51) -> str:
    """
    Writes a small raw database: subject and trial tables, one angle file, one marker file and
    one heel-strike file per trial. Pelvis markers sway 20 mm with a 1.2 s stride.
    """
    os.makedirs(root, exist_ok=True)
    info = pd.DataFrame(
        {
            "Subject": list(ids),
            "Age": [25 + i for i in range(len(ids))],
            "Height": [176.0 - i for i in range(len(ids))],
            "Mass": [69.25 + i for i in range(len(ids))],
            "Gender": ["M" if i % 2 == 0 else "F" for i in range(len(ids))],
            "SelfSpeed": [1.25] * len(ids),
        }
    )
    info.to_csv(os.path.join(root, "info.csv"), index=False)
    trials = pd.DataFrame(
        [
            {"Subject": sid, "Trial": trial, "Percent": pct, "Speed": 1.25 * pct / 100}
            for sid in ids
            for trial, pct in RAW_TRIALS
        ]
    )
    trials.to_csv(os.path.join(root, "trials.csv"), index=False)

    angles = {}
    for ch, spec in RAW_SCHEMA["angles"]["channels"].items():
        if "Right" in spec:
            y = waveform(Channel(ch), angle_rows)
            angles[spec["Right"]] = y
            angles[spec["Left"]] = -y if Channel(ch).frontal else y
    frames = np.arange(5 * RAW_STRIDE_FRAMES + 1)
    sway = 20 * np.sin(2 * np.pi * frames / RAW_STRIDE_FRAMES)
    markers = {}
    for label in RAW_SCHEMA["markers"]["labels"]:
        offset = 100.0 if label.startswith("R") else -100.0
        markers[f"{label}X"] = sway + offset
        markers[f"{label}Y"] = np.zeros(frames.size)
        markers[f"{label}Z"] = np.full(frames.size, 950.0)
    events = pd.DataFrame(
        [{"side": "Right", "frame": k * RAW_STRIDE_FRAMES} for k in range(5)]
        + [{"side": "Left", "frame": k * RAW_STRIDE_FRAMES + RAW_STRIDE_FRAMES // 2} for k in range(4)]
    )
    for sid in ids:
        for trial, _ in RAW_TRIALS:
            pd.DataFrame(angles).to_csv(os.path.join(root, f"{sid}_{trial}_ang.txt"), sep="\t", index=False)
            pd.DataFrame(markers).to_csv(os.path.join(root, f"{sid}_{trial}_mkr.csv"), index=False)
            events.to_csv(os.path.join(root, f"{sid}_{trial}_events.csv"), index=False)
    return root
