"""
Personalized gait trajectories for a closed-chain hip exoskeleton.

The pipeline:

- :mod:`exogait.gait_data` ingests a gait database (subjects, time-normalized joint cycles
  and marker-derived pelvis motion) and labels the cycles with three speed levels.
- :mod:`exogait.key_events` reduces every cycle to a handful of key events (time, position,
  velocity and acceleration at position and velocity extrema).
- :mod:`exogait.regression` fits one robust linear model per key-event parameter on speed,
  height, mass, age and gender, and predicts the cycle time.
- :mod:`exogait.trajectory` reconnects predicted events with quintic splines into a
  Personalized pattern, and builds the Standard and Random baselines.
- :mod:`exogait.kinematics` maps hip angles to actuator strokes and back.
- :mod:`exogait.evaluation` compares Personalized and Standard patterns with
  leave-one-subject-out cross-validation.

Example:
    >>> from exogait import predict_cycle_time_personalized, synthetic_dataset, train_bank
    >>> round(predict_cycle_time_personalized(1.8, 25), 4)
    1.6238
    >>> ds = synthetic_dataset(n_subjects=10, seed=3)
    >>> bank = train_bank(ds, default_templates())
    >>> pattern = generate_personalized(bank, ds.subjects[0], 2.0)
    >>> pattern.kind.value, sorted(ch.value for ch in pattern.channels)
    ('Personalized', ['HipAbAd', 'HipFlexExt', 'KneeFlexExt', 'PelvisLateral'])

Every error the package raises derives from :class:`ExoGaitError <exogait.exceptions.ExoGaitError>`.

Documentation:
    Refer to ``docs/source`` or the :code:`exogait --help` output.
"""
from .utils import log
from .exceptions import ExoGaitError
from .gait_data import (
    Channel,
    Dataset,
    GaitCycle,
    Side,
    SpeedLevel,
    Subject,
    filter_speed_levels,
    ingest_dataset,
)
from .key_events import KeyEventSet, default_templates, extract_events
from .regression import (
    BANK_VERSION,
    ModelBank,
    predict_cycle_time_personalized,
    predict_cycle_time_standard,
    predict_events,
    train_bank,
)
from .trajectory import (
    GaitPattern,
    build_spline,
    generate_personalized,
    generate_standard,
    pick_random_pattern,
    sample_pattern,
)
from .kinematics import ExoGeometry, forward_kinematics, inverse_kinematics
from .evaluation import loocv
from .synthetic import synthetic_dataset


__version__ = "0.1.0"
BANK_FORMAT_VERSION = BANK_VERSION
