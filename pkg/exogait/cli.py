"""
Command line front-end.

Every command resolves a :class:`RunConfig` (built-in defaults, then the settings module
or environment, then ``--config run.toml``, then flags), delegates to one pipeline
operation, writes its artifact into the output directory and prints a one-line summary.
With ``--dry-run`` the resolved configuration and the planned outputs are printed instead.
"""
import dataclasses
import functools
import logging
import os
from typing import Any, Callable, Dict, List, Mapping, Optional

import click
import toml

from . import __version__, exceptions
from .evaluation import format_table, loocv, report_emit
from .gait_data import Dataset, Gender, Side, SpeedLevel, Subject, export_dataset, filter_speed_levels, ingest_dataset
from .key_events import KeyEventTemplate, default_templates, load_templates
from .kinematics import (
    ActuatorState,
    ExoGeometry,
    HipJointAngles,
    PelvisPose,
    default_geometry,
    export_actuators,
    forward_kinematics,
    inverse_kinematics,
    load_geometry,
    pattern_to_actuators,
)
from .regression import BANK_VERSION, describe_bank, load_bank, save_bank, train_bank
from .settings import setting
from .synthetic import synthetic_dataset
from .trajectory import (
    GaitPattern,
    export_pattern,
    export_plot_data,
    generate_personalized,
    generate_standard,
    pick_random_pattern,
    sample_pattern,
)
from .utils import config_hash

_SPEED_SCALE = {"km/h": 1.0, "m/s": 3.6}


@dataclasses.dataclass(frozen=True)
class RunConfig(object):
    """
    Everything a run depends on. Two runs with equal configs and inputs write identical files.
    """

    dataset: Optional[str] = None
    schema: Optional[str] = None
    templates: Optional[str] = None
    geometry_left: Optional[str] = None
    geometry_right: Optional[str] = None
    speed_unit: str = "km/h"
    grid_size: int = 101
    seed: int = 0
    output: str = "out"
    dt: float = 0.01
    n_cycles: float = 1.0

    def __post_init__(self):
        if self.speed_unit not in _SPEED_SCALE:
            raise exceptions.UsageError(
                {"error": f"Unknown speed unit `{self.speed_unit}`, expected one of {list(_SPEED_SCALE)}."}
            )
        for name in ("dataset", "schema", "templates", "geometry_left", "geometry_right"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise exceptions.MissingFile({"error": f"`{name}` not found.", "file": path})
        if self.grid_size < 51:
            raise exceptions.UsageError({"error": f"Grid size {self.grid_size} is below 51."})
        if not self.dt > 0 or not self.n_cycles > 0:
            raise exceptions.UsageError({"error": "`dt` and `n_cycles` must be positive."})

    @classmethod
    def resolve(cls, path: Optional[str] = None, **flags) -> "RunConfig":
        """
        Merges the configuration layers; ``None`` flags do not override.
        """
        values: Dict[str, Any] = {
            "speed_unit": setting("SPEED_UNIT"),
            "grid_size": setting("GRID_SIZE"),
            "seed": setting("SEED"),
        }
        if path is not None:
            if not os.path.exists(path):
                raise exceptions.MissingFile({"error": "Config file not found.", "file": path})
            table = toml.load(path)
            table = table.get("run", table)
            unknown = set(table) - {f.name for f in dataclasses.fields(cls)}
            if unknown:
                raise exceptions.SchemaMismatch(
                    {"error": f"Unknown config keys {sorted(unknown)}.", "file": path}
                )
            values.update(table)
        values.update({k: v for k, v in flags.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    def out(self, name: str) -> str:
        return os.path.join(self.output, name)

    def speed(self, value: float) -> float:
        """Converts a speed flag to km/h."""
        return value * _SPEED_SCALE[self.speed_unit]

    def load_templates(self) -> Dict[Any, KeyEventTemplate]:
        return load_templates(self.templates) if self.templates else default_templates()

    def load_geometry(self, side: Side) -> ExoGeometry:
        path = self.geometry_left if side is Side.Left else self.geometry_right
        return load_geometry(path) if path else default_geometry(side)

    def load_dataset(self) -> Dataset:
        if self.dataset is None:
            raise exceptions.UsageError({"error": "No dataset root, pass --dataset or set it in the config."})
        ds = ingest_dataset(self.dataset, self.schema, self.grid_size)
        return filter_speed_levels(ds)


def _fail(e: exceptions.ExoGaitError):
    click.echo(f"{type(e).__name__}: {e.detail}", err=True)
    click.get_current_context().exit(e.exit_code)


def pipeline_command(fn: Callable) -> Callable:
    """
    Turns pipeline errors into their name, their detail and the error's exit code.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except exceptions.ExoGaitError as e:
            _fail(e)

    return wrapper


def _planned(cfg: RunConfig, outputs: List[str], **extra):
    click.echo(toml.dumps({"run": cfg.to_dict(), **extra}), nl=False)
    click.echo(f"config {config_hash(cfg.to_dict())}")
    for path in outputs:
        click.echo(f"would write {path}")


def _prepare_output(cfg: RunConfig):
    try:
        os.makedirs(cfg.output, exist_ok=True)
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": cfg.output})


def _config(ctx: click.Context, **flags) -> RunConfig:
    return RunConfig.resolve(ctx.obj["config_path"], **{**ctx.obj["flags"], **flags})


@click.group()
@click.version_option(__version__, prog_name="exogait", message=f"%(prog)s %(version)s, model bank format v{BANK_VERSION}")
@click.option("--config", "config_path", type=click.Path(), help="TOML run configuration.")
@click.option("--dataset", type=click.Path(), help="Gait database root.")
@click.option("--schema", type=click.Path(), help="Schema of a raw database; canonical layout if omitted.")
@click.option("--templates", type=click.Path(), help="Key-event template file.")
@click.option("--geometry-left", type=click.Path(), help="Left exoskeleton geometry.")
@click.option("--geometry-right", type=click.Path(), help="Right exoskeleton geometry.")
@click.option("--speed-unit", type=click.Choice(list(_SPEED_SCALE)), help="Unit of speed flags.")
@click.option("--grid-size", type=int, help="Samples per gait cycle.")
@click.option("--seed", type=int, help="Seed of every random step.")
@click.option("--output", "-o", type=click.Path(), help="Output directory.")
@click.option("--dt", type=float, help="Sampling period of exported trajectories [s].")
@click.option("--n-cycles", type=float, help="Number of exported gait cycles.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], verbose: bool, **flags):
    """Personalized gait trajectories for a hip exoskeleton."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["flags"] = flags
    if verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


dry_run = click.option("--dry-run", is_flag=True, help="Print the resolved config and planned outputs.")


def subject_options(fn: Callable) -> Callable:
    for option in reversed(
        [
            click.option("--age", type=float, help="Age [years]."),
            click.option("--height", type=float, help="Height [m]."),
            click.option("--mass", type=float, help="Mass [kg]."),
            click.option("--gender", type=click.Choice(["M", "F"]), help="Gender."),
            click.option("--speed", type=float, help="Walking speed, in the configured unit."),
        ]
    ):
        fn = option(fn)
    return fn


def _require(**values):
    missing = [f"--{k.replace('_', '-')}" for k, v in values.items() if v is None]
    if missing:
        raise click.UsageError(f"Missing option(s) {', '.join(missing)}.")


def _subject(cfg: RunConfig, age, height, mass, gender, speed) -> Subject:
    _require(age=age, height=height, mass=mass, gender=gender, speed=speed)
    return Subject(
        id="subject",
        age=age,
        height=height,
        mass=mass,
        gender=Gender.Male if gender == "M" else Gender.Female,
        self_selected_speed=cfg.speed(speed),
    )


def _bank_path(cfg: RunConfig, bank: Optional[str]) -> str:
    return bank or cfg.out("bank.toml")


pattern_kind = click.option(
    "--kind", type=click.Choice(["personalized", "standard", "random"]), default="personalized",
    show_default=True, help="Which gait pattern to use.",
)
bank_option = click.option("--bank", type=click.Path(), help="Model bank, <output>/bank.toml by default.")
level_option = click.option(
    "--level", type=click.Choice([lv.value for lv in SpeedLevel]), default=SpeedLevel.L1.value,
    show_default=True, help="Speed level of the random pattern.",
)


def _pattern(cfg: RunConfig, kind: str, bank: Optional[str], level: str, **subject) -> GaitPattern:
    if kind == "personalized":
        subj = _subject(cfg, **subject)
        return generate_personalized(load_bank(_bank_path(cfg, bank)), subj, subj.self_selected_speed)
    if kind == "standard":
        _require(height=subject["height"], speed=subject["speed"])
        return generate_standard(cfg.load_dataset(), cfg.speed(subject["speed"]), subject["height"])
    return pick_random_pattern(cfg.load_dataset(), SpeedLevel(level), cfg.seed)


@cli.command()
@dry_run
@click.pass_context
@pipeline_command
def ingest(ctx: click.Context, dry_run: bool):
    """Ingest, filter and label a gait database into the canonical layout."""
    cfg = _config(ctx)
    target = cfg.out("dataset")
    if dry_run:
        return _planned(cfg, [target])
    ds = cfg.load_dataset()
    _prepare_output(cfg)
    export_dataset(ds, target)
    click.echo(f"ingested {len(ds.subjects)} subjects, {len(ds.cycles)} cycles -> {target}")


@cli.command()
@dry_run
@click.pass_context
@pipeline_command
def train(ctx: click.Context, dry_run: bool):
    """Fit the model bank on the dataset."""
    cfg = _config(ctx)
    outputs = [cfg.out("bank.toml"), cfg.out("bank.txt")]
    if dry_run:
        return _planned(cfg, outputs)
    bank = train_bank(cfg.load_dataset(), cfg.load_templates())
    _prepare_output(cfg)
    save_bank(bank, outputs[0])
    try:
        with open(outputs[1], "w") as f:
            f.write(describe_bank(bank))
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": outputs[1]})
    click.echo(f"trained {len(bank.models)} models -> {outputs[0]}")


def _write_pattern(cfg: RunConfig, pattern: GaitPattern, name: str):
    path = cfg.out(name)
    _prepare_output(cfg)
    export_pattern(sample_pattern(pattern, cfg.dt, cfg.n_cycles), pattern, path)
    click.echo(
        f"{pattern.kind.value} pattern, cycle time {pattern.cycle_time:.4f} s, "
        f"speed {pattern.speed:.3f} km/h -> {path}"
    )


@cli.command()
@subject_options
@bank_option
@dry_run
@click.pass_context
@pipeline_command
def predict(ctx: click.Context, bank: Optional[str], dry_run: bool, **subject):
    """Personalized pattern of a subject from the model bank."""
    cfg = _config(ctx)
    if dry_run:
        return _planned(cfg, [cfg.out("personalized.csv")], subject=_dry_subject(subject))
    _write_pattern(cfg, _pattern(cfg, "personalized", bank, SpeedLevel.L1.value, **subject), "personalized.csv")


def _dry_subject(subject: Mapping[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in subject.items() if v is not None}


@cli.command()
@click.option("--height", type=float, help="Height [m].")
@click.option("--speed", type=float, help="Walking speed, in the configured unit.")
@dry_run
@click.pass_context
@pipeline_command
def standard(ctx: click.Context, height: Optional[float], speed: Optional[float], dry_run: bool):
    """Standard pattern: the dataset average traversed at the standard cycle time."""
    cfg = _config(ctx)
    if dry_run:
        return _planned(cfg, [cfg.out("standard.csv")])
    pattern = _pattern(cfg, "standard", None, SpeedLevel.L1.value,
                       age=None, height=height, mass=None, gender=None, speed=speed)
    _write_pattern(cfg, pattern, "standard.csv")


@cli.command()
@level_option
@dry_run
@click.pass_context
@pipeline_command
def random(ctx: click.Context, level: str, dry_run: bool):
    """Random pattern: one recorded subject drawn with the configured seed."""
    cfg = _config(ctx)
    if dry_run:
        return _planned(cfg, [cfg.out("random.csv")])
    _write_pattern(cfg, pick_random_pattern(cfg.load_dataset(), SpeedLevel(level), cfg.seed), "random.csv")


@cli.command()
@click.option("--synthetic", type=int, default=0, help="Evaluate on N synthetic subjects instead of the dataset.")
@dry_run
@click.pass_context
@pipeline_command
def evaluate(ctx: click.Context, synthetic: int, dry_run: bool):
    """Leave-one-subject-out comparison of Personalized and Standard patterns."""
    cfg = _config(ctx)
    outputs = [cfg.out("report.toml"), cfg.out("report.txt")]
    if dry_run:
        return _planned(cfg, outputs)
    if synthetic:
        ds = synthetic_dataset(synthetic, cfg.seed, cfg.grid_size, cfg.load_templates())
    else:
        ds = cfg.load_dataset()
    report = loocv(ds, cfg.load_templates(), cfg.to_dict())
    _prepare_output(cfg)
    report_emit(report, outputs[0])
    click.echo(format_table(report), nl=False)
    if report.failed:
        failed = sorted(report.failures)
        raise exceptions.FoldError({"error": f"{len(failed)} of {report.n_folds} folds failed."}, fold=failed[0])
    click.echo(f"evaluated {report.n_folds} folds -> {outputs[0]}")


side_option = click.option(
    "--side", type=click.Choice([s.value for s in Side]), default=Side.Right.value, show_default=True,
)


@cli.command()
@click.option("--theta-fl", type=float, required=True, help="Hip flexion [rad].")
@click.option("--theta-ab", type=float, required=True, help="Hip abduction [rad].")
@click.option("--lateral", type=float, default=0.0, show_default=True, help="Pelvis lateral offset [m].")
@side_option
@dry_run
@click.pass_context
@pipeline_command
def fk(ctx: click.Context, theta_fl: float, theta_ab: float, lateral: float, side: str, dry_run: bool):
    """Actuator strokes for hip angles."""
    cfg = _config(ctx)
    if dry_run:
        return _planned(cfg, [])
    geom = cfg.load_geometry(Side(side))
    hip = HipJointAngles(theta_fl, theta_ab, geom.theta_ro)
    act, chain = forward_kinematics(geom, PelvisPose.neutral(geom, lateral), hip)
    click.echo(
        f"p_int={act.p_int:.9f} p_ext={act.p_ext:.9f} theta_A={act.theta_A:.9f} "
        f"residual={max(chain.residual_H, chain.residual_E):.3g}"
    )


@cli.command()
@click.option("--p-int", type=float, required=True, help="Internal shaft stroke [m].")
@click.option("--p-ext", type=float, required=True, help="External shaft stroke [m].")
@click.option("--theta-a", type=float, default=0.0, show_default=True, help="Plane angle seed [rad].")
@click.option("--lateral", type=float, default=0.0, show_default=True, help="Pelvis lateral offset [m].")
@side_option
@dry_run
@click.pass_context
@pipeline_command
def ik(ctx: click.Context, p_int: float, p_ext: float, theta_a: float, lateral: float, side: str, dry_run: bool):
    """Hip angles for actuator strokes."""
    cfg = _config(ctx)
    if dry_run:
        return _planned(cfg, [])
    geom = cfg.load_geometry(Side(side))
    hip, chain = inverse_kinematics(geom, PelvisPose.neutral(geom, lateral), ActuatorState(p_int, p_ext, theta_a))
    click.echo(
        f"theta_fl={hip.theta_fl:.9f} theta_ab={hip.theta_ab:.9f} theta_A={chain.theta_A:.9f} "
        f"residual={max(chain.residual_H, chain.residual_E):.3g}"
    )


@cli.command("export-actuators")
@pattern_kind
@subject_options
@bank_option
@level_option
@dry_run
@click.pass_context
@pipeline_command
def export_actuators_command(ctx: click.Context, kind: str, bank: Optional[str], level: str, dry_run: bool, **subject):
    """Actuator reference trajectories of both legs for a pattern."""
    cfg = _config(ctx)
    path = cfg.out(f"actuators_{kind}.csv")
    if dry_run:
        return _planned(cfg, [path], subject=_dry_subject(subject))
    pattern = _pattern(cfg, kind, bank, level, **subject)
    series = pattern_to_actuators(cfg.load_geometry(Side.Left), cfg.load_geometry(Side.Right), pattern,
                                  cfg.dt, cfg.n_cycles)
    _prepare_output(cfg)
    export_actuators(series, path)
    click.echo(f"{len(series)} actuator samples per leg -> {path}")


@cli.command()
@pattern_kind
@subject_options
@bank_option
@level_option
@dry_run
@click.pass_context
@pipeline_command
def plotdata(ctx: click.Context, kind: str, bank: Optional[str], level: str, dry_run: bool, **subject):
    """A pattern on the % grid with its key-event markers."""
    cfg = _config(ctx)
    path = cfg.out(f"plot_{kind}.csv")
    if dry_run:
        return _planned(cfg, [path, os.path.splitext(path)[0] + ".markers.csv"], subject=_dry_subject(subject))
    pattern = _pattern(cfg, kind, bank, level, **subject)
    _prepare_output(cfg)
    written = export_plot_data(pattern, path, cfg.load_templates(), cfg.grid_size)
    click.echo(f"{pattern.kind.value} plot data -> {', '.join(written)}")


def main():
    cli(obj={})
