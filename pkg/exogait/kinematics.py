"""
Closed-chain kinematics of the hip/pelvis module.

Two linear actuators sit in a plane that turns about the x axis of the base frame O by θ_A.
Their shafts (stroke p_ext, p_int) carry links l_1 and l_2 that meet at the hinge E on the
thigh link; E connects through l_n and l_m to the hip center H on the pelvis plate.

Frames follow the leg: x points medially, y forward, z up. A left leg is solved in the
mirror image of the base frame (x negated), so both geometry files are written in the same
numbers. Hip angles are anatomical for both legs: flexion about x, then abduction about y,
then the fixed rotation about z.

Forward kinematics (hip angles -> actuators) is closed form. Inverse kinematics
(actuators -> hip angles) intersects the two link circles in the actuator plane, recovers
the hip angles of the resulting E and polishes them with damped Gauss-Newton on the
closure residual at E.
"""
import dataclasses
import math
import os
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
import toml

from . import exceptions
from .gait_data import Channel, Side
from .records import validate_record
from .trajectory import GaitPattern, sample_pattern
from .utils import log
from .validator import between, positive

GEOMETRY_FORMAT = "exogait-geometry"
GEOMETRY_VERSION = 1
GEOMETRY_FILES = {
    Side.Right: os.path.join(os.path.dirname(__file__), "data", "geometry_right.toml"),
    Side.Left: os.path.join(os.path.dirname(__file__), "data", "geometry_left.toml"),
}

RESIDUAL_TOLERANCE = 1e-9
_MIRROR = np.array([-1.0, 1.0, 1.0])


def rot_x(t: float) -> np.ndarray:
    """Rotation about the x-axis."""
    c, s = math.cos(t), math.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(t: float) -> np.ndarray:
    """Rotation about the y-axis."""
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(t: float) -> np.ndarray:
    """Rotation about the z-axis."""
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _vector(value, name: str) -> np.ndarray:
    v = np.array(value, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise exceptions.InvariantViolation({"error": f"`{name}` must be a finite 3-vector, got {value!r}."})
    v.setflags(write=False)
    return v


@dataclasses.dataclass(frozen=True, eq=False)
class ExoGeometry(object):
    """
    Link lengths and offsets in meters. :code:`stroke` bounds both actuator shafts.
    """

    l_c: float
    l1: float
    l2: float
    l_n: float
    l_m: float
    d: float
    T_OF: np.ndarray
    T_FP_nominal: np.ndarray
    T_PH: np.ndarray
    side: Side = Side.Right
    stroke: Tuple[float, float] = (0.0, 0.5)
    theta_ro: float = 0.0

    def __post_init__(self):
        lengths = ("l_c", "l1", "l2", "l_n", "l_m", "d")
        with validate_record(
            {name: getattr(self, name) for name in lengths},
            {name: positive for name in lengths},
            box_all=False,
            source=f"{Side(self.side).value} geometry",
            **{name: float for name in lengths},
        ) as r:
            for name, value in r.items():
                object.__setattr__(self, name, value)
        object.__setattr__(self, "side", Side(self.side))
        for name in ("T_OF", "T_FP_nominal", "T_PH"):
            object.__setattr__(self, name, _vector(getattr(self, name), name))
        lo, hi = (float(p) for p in self.stroke)
        object.__setattr__(self, "stroke", (lo, hi))
        object.__setattr__(self, "theta_ro", float(self.theta_ro))
        if not lo < hi:
            raise exceptions.InvariantViolation({"error": f"Stroke limits {self.stroke} are not ordered."})
        if not self.l1 + self.l2 > self.l_c:
            raise exceptions.InvariantViolation(
                {"error": "The links cannot close the chain: l1 + l2 must exceed l_c."}
            )

    def mirrored(self) -> "ExoGeometry":
        """
        The same numbers for the other leg.
        """
        other = Side.Left if self.side is Side.Right else Side.Right
        return dataclasses.replace(self, side=other)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": GEOMETRY_FORMAT,
            "version": GEOMETRY_VERSION,
            "side": self.side.value,
            "lengths": {n: getattr(self, n) for n in ("l_c", "l1", "l2", "l_n", "l_m", "d")},
            "offsets": {
                "T_OF": self.T_OF.tolist(),
                "T_FP": self.T_FP_nominal.tolist(),
                "T_PH": self.T_PH.tolist(),
            },
            "stroke": {"min": self.stroke[0], "max": self.stroke[1]},
            "hip": {"theta_ro": self.theta_ro},
        }


def load_geometry(path: str) -> ExoGeometry:
    """
    Reads a geometry file.

    >>> g = load_geometry(GEOMETRY_FILES[Side.Right])
    >>> g.side.value, g.l_c, g.stroke
    ('Right', 0.1, (0.0, 0.5))
    """
    if not os.path.exists(path):
        raise exceptions.MissingFile({"error": "Geometry file not found.", "file": path})
    data = toml.load(path)
    if data.get("format") != GEOMETRY_FORMAT:
        raise exceptions.SchemaMismatch({"error": f"Not an {GEOMETRY_FORMAT} file.", "file": path})
    try:
        lengths, offsets = data["lengths"], data["offsets"]
        return ExoGeometry(
            l_c=lengths["l_c"],
            l1=lengths["l1"],
            l2=lengths["l2"],
            l_n=lengths["l_n"],
            l_m=lengths["l_m"],
            d=lengths["d"],
            T_OF=offsets["T_OF"],
            T_FP_nominal=offsets.get("T_FP", [0.0, 0.0, 0.0]),
            T_PH=offsets["T_PH"],
            side=data.get("side", "Right"),
            stroke=(data["stroke"]["min"], data["stroke"]["max"]),
            theta_ro=data.get("hip", {}).get("theta_ro", 0.0),
        )
    except KeyError as e:
        raise exceptions.SchemaMismatch({"error": f"Missing geometry entry {e}.", "file": path})


def save_geometry(geom: ExoGeometry, path: str):
    try:
        with open(path, "w") as f:
            toml.dump(geom.to_dict(), f)
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": path})


def default_geometry(side: Side = Side.Right) -> ExoGeometry:
    return load_geometry(GEOMETRY_FILES[Side(side)])


@dataclasses.dataclass(frozen=True, eq=False)
class PelvisPose(object):
    alpha: float
    beta_p: float
    gamma: float
    T_FP: np.ndarray

    def __post_init__(self):
        with validate_record(
            {"alpha": self.alpha, "beta_p": self.beta_p, "gamma": self.gamma},
            {name: between(-math.pi / 2, math.pi / 2) for name in ("alpha", "beta_p", "gamma")},
            box_all=False,
            source="pelvis pose",
            alpha=float,
            beta_p=float,
            gamma=float,
        ) as r:
            for name, value in r.items():
                object.__setattr__(self, name, value)
        object.__setattr__(self, "T_FP", _vector(self.T_FP, "T_FP"))

    @classmethod
    def neutral(cls, geom: ExoGeometry, lateral: float = 0.0) -> "PelvisPose":
        """
        No rotation, nominal translation shifted by :code:`lateral` meters along x.
        """
        return cls(0.0, 0.0, 0.0, geom.T_FP_nominal + np.array([lateral, 0.0, 0.0]))

    @property
    def rotation(self) -> np.ndarray:
        return rot_x(self.alpha) @ rot_y(self.beta_p) @ rot_z(self.gamma)

    def mirrored(self) -> "PelvisPose":
        return PelvisPose(self.alpha, -self.beta_p, -self.gamma, self.T_FP * _MIRROR)


@dataclasses.dataclass(frozen=True)
class HipJointAngles(object):
    theta_fl: float
    theta_ab: float
    theta_ro: float = 0.0

    def __post_init__(self):
        with validate_record(
            {"theta_fl": self.theta_fl, "theta_ab": self.theta_ab, "theta_ro": self.theta_ro},
            {"theta_fl": between(-0.6, 1.6, inclusive=True), "theta_ab": between(-0.5, 0.5, inclusive=True)},
            box_all=False,
            source="hip angles",
            theta_fl=float,
            theta_ab=float,
            theta_ro=float,
        ) as r:
            for name, value in r.items():
                object.__setattr__(self, name, value)


@dataclasses.dataclass(frozen=True)
class ActuatorState(object):
    p_int: float
    p_ext: float
    theta_A: float

    def __post_init__(self):
        for name in ("p_int", "p_ext", "theta_A"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not -math.pi / 2 < self.theta_A < math.pi / 2:
            raise exceptions.InvariantViolation(
                {"error": f"Actuator plane angle {self.theta_A} is outside (-pi/2, pi/2)."}
            )


@dataclasses.dataclass(frozen=True, eq=False)
class ChainSolution(object):
    """
    Passive angles and joint positions of a closed chain, in the leg's frame.
    """

    theta_A: float
    theta_1: float
    theta_2: float
    theta_E: float
    theta_B: float
    E: np.ndarray
    B: np.ndarray
    H: np.ndarray
    residual_H: float
    residual_E: float


class TopBranch(NamedTuple):
    H: np.ndarray
    E: np.ndarray
    R_OH: np.ndarray


def pose_top_branch(geom: ExoGeometry, pelvis: PelvisPose, hip: HipJointAngles) -> TopBranch:
    """
    Hip center and thigh hinge through the pelvis plate, in the leg's frame.

    >>> g = default_geometry()
    >>> top = pose_top_branch(g, PelvisPose.neutral(g), HipJointAngles(0.0, 0.0))
    >>> top.H.round(6).tolist(), top.E.round(6).tolist()
    ([0.0, 0.48, 0.35], [0.0, 0.4, 0.0])
    """
    if geom.side is Side.Left:
        pelvis = pelvis.mirrored()
    R_FP = pelvis.rotation
    T_OP = geom.T_OF + pelvis.T_FP
    H = T_OP + R_FP @ geom.T_PH
    R_OH = R_FP @ rot_x(hip.theta_fl) @ rot_y(hip.theta_ab) @ rot_z(hip.theta_ro)
    E = H + R_OH @ np.array([0.0, -geom.l_n, -geom.l_m])
    return TopBranch(H, E, R_OH)


def _bottom_chain(geom: ExoGeometry, E: np.ndarray, H: np.ndarray, theta_A: float) -> Tuple[float, float, np.ndarray, np.ndarray]:
    """
    Hinge angles at E and B that carry the bottom branch from E to H.
    """
    u = H - E
    theta_B = math.asin(max(-1.0, min(1.0, u[0] / geom.l_m)))
    phi = math.atan2(u[2], u[1]) - math.atan2(geom.l_m * math.cos(theta_B), geom.l_n)
    theta_E = phi - theta_A
    R = rot_x(phi)
    B = E + R @ np.array([0.0, geom.l_n, 0.0])
    H_bottom = B + R @ np.array([geom.l_m * math.sin(theta_B), 0.0, geom.l_m * math.cos(theta_B)])
    return theta_E, theta_B, B, H_bottom


def _check_stroke(geom: ExoGeometry, act: ActuatorState):
    lo, hi = geom.stroke
    for name in ("p_int", "p_ext"):
        p = getattr(act, name)
        if not lo - 1e-12 <= p <= hi + 1e-12:
            raise exceptions.StrokeLimit(
                {"error": f"`{name}` = {p:.6f} m is outside the stroke [{lo}, {hi}] m.", "side": geom.side.value}
            )


def _plane_point(x: float, rho: float, theta_A: float) -> np.ndarray:
    return np.array([x, rho * math.cos(theta_A), rho * math.sin(theta_A)])


def forward_kinematics(geom: ExoGeometry, pelvis: PelvisPose, hip: HipJointAngles) -> Tuple[ActuatorState, ChainSolution]:
    """
    Actuator strokes and plane angle that place the hinge E where the hip angles put it.

    >>> g = default_geometry()
    >>> act, chain = forward_kinematics(g, PelvisPose.neutral(g), HipJointAngles(0.0, 0.0))
    >>> round(act.p_int, 6), round(act.p_ext, 6), act.theta_A
    (0.240913, 0.240913, 0.0)

    :param geom: leg geometry
    :param pelvis: pelvis pose in world coordinates
    :param hip: anatomical hip angles
    :return: actuator state and the solved chain
    """
    H, E, _ = pose_top_branch(geom, pelvis, hip)
    x, y, z = E
    if y <= 0:
        raise exceptions.Unreachable(
            {"error": "The hinge lies behind the actuator base.", "side": geom.side.value}
        )
    theta_A = math.atan2(z, y)
    rho = math.hypot(y, z)
    s1 = (geom.l_c / 2 - x) / geom.l1
    s2 = (x + geom.l_c / 2) / geom.l2
    if abs(s1) > 1 or abs(s2) > 1:
        raise exceptions.Unreachable(
            {"error": f"The links cannot reach x = {x:.6f} m.", "side": geom.side.value}
        )
    theta_1, theta_2 = math.asin(s1), math.asin(s2)
    p_ext = rho - geom.d - geom.l1 * math.cos(theta_1)
    p_int = rho - geom.d - geom.l2 * math.cos(theta_2)
    act = ActuatorState(p_int, p_ext, theta_A)
    _check_stroke(geom, act)

    theta_E, theta_B, B, H_bottom = _bottom_chain(geom, E, H, theta_A)
    E_bottom = _plane_point(
        geom.l_c / 2 - geom.l1 * math.sin(theta_1), p_ext + geom.d + geom.l1 * math.cos(theta_1), theta_A
    )
    chain = ChainSolution(
        theta_A, theta_1, theta_2, theta_E, theta_B, E, B, H,
        float(np.linalg.norm(H_bottom - H)), float(np.linalg.norm(E_bottom - E)),
    )
    return act, chain


def _intersect_links(geom: ExoGeometry, act: ActuatorState, previous: Optional[Tuple[float, float]] = None) -> Tuple[float, float]:
    """
    In-plane position (x, rho) of E as the intersection of the link circles around both
    shaft tips, on the branch where both links open forward.
    """
    c1 = np.array([geom.l_c / 2, act.p_ext + geom.d])
    c2 = np.array([-geom.l_c / 2, act.p_int + geom.d])
    delta = c2 - c1
    D = float(np.linalg.norm(delta))
    if D > geom.l1 + geom.l2 or D < abs(geom.l1 - geom.l2) or D == 0:
        raise exceptions.Unreachable(
            {"error": f"The link circles do not intersect (tip distance {D:.6f} m).", "side": geom.side.value}
        )
    a = (geom.l1 ** 2 - geom.l2 ** 2 + D ** 2) / (2 * D)
    h = math.sqrt(max(geom.l1 ** 2 - a ** 2, 0.0))
    mid = c1 + a * delta / D
    normal = np.array([-delta[1], delta[0]]) / D
    candidates = [
        p for p in (mid + h * normal, mid - h * normal)
        if p[1] - c1[1] > 0 and p[1] - c2[1] > 0
    ]
    if not candidates:
        raise exceptions.Unreachable(
            {"error": "No intersection with both links opening forward.", "side": geom.side.value}
        )
    if len(candidates) == 2 and h > 0:
        if previous is not None:
            candidates.sort(key=lambda p: float(np.hypot(*(p - np.asarray(previous)))))
        else:
            theta = [abs(math.asin((geom.l_c / 2 - p[0]) / geom.l1)) for p in candidates]
            if abs(theta[0] - theta[1]) < 1e-12:
                raise exceptions.BranchAmbiguity(
                    {"error": "Both link branches are admissible and equally close.", "side": geom.side.value}
                )
            candidates = [candidates[int(np.argmin(theta))]]
    x, rho = candidates[0]
    return float(x), float(rho)


def _plane_angle(geom: ExoGeometry, H: np.ndarray, x: float, rho: float, fallback: float) -> float:
    """
    Plane angle that puts E at thigh length from H, on the branch with E below the line
    from the base to H. Falls back to :code:`fallback` when no such angle exists.
    """
    reach = geom.l_n ** 2 + geom.l_m ** 2 - (x - H[0]) ** 2
    R = math.hypot(H[1], H[2])
    if reach <= 0 or R == 0:
        return fallback
    k = (rho ** 2 + R ** 2 - reach) / (2 * rho * R)
    if abs(k) > 1:
        return fallback
    return math.atan2(H[2], H[1]) - math.acos(k)


def _seed_hip_angles(geom: ExoGeometry, w: np.ndarray) -> Tuple[float, float]:
    """
    Hip angles that rotate the thigh vector onto :code:`w`, the hinge seen from H in the
    pelvis frame. Exact whenever |w| equals the thigh vector length.
    """
    q = rot_z(geom.theta_ro) @ np.array([0.0, -geom.l_n, -geom.l_m])
    r = math.hypot(q[0], q[2])
    psi = math.atan2(q[0], q[2])
    s = max(-1.0, min(1.0, w[0] / r))
    options = [math.asin(s) - psi, math.pi - math.asin(s) - psi]
    wrapped = [math.remainder(o, 2 * math.pi) for o in options]
    theta_ab = min(wrapped, key=abs)
    a = rot_y(theta_ab) @ q
    theta_fl = math.remainder(math.atan2(w[2], w[1]) - math.atan2(a[2], a[1]), 2 * math.pi)
    return theta_fl, theta_ab


def inverse_kinematics(
    geom: ExoGeometry,
    pelvis: PelvisPose,
    act: ActuatorState,
    max_iter: int = 50,
    previous: Optional[Tuple[float, float]] = None,
) -> Tuple[HipJointAngles, ChainSolution]:
    """
    Hip angles that close the chain at E for the given shaft strokes.

    The plane angle is passive: :code:`act.theta_A` only seeds the solve when the plane
    cannot be placed in closed form, and the closing value is returned in the chain.

    >>> g = default_geometry()
    >>> hip, chain = inverse_kinematics(g, PelvisPose.neutral(g), ActuatorState(0.240913, 0.240913, 0.0))
    >>> abs(hip.theta_ab) < 1e-12, chain.residual_E < 1e-9
    (True, True)

    :param geom: leg geometry
    :param pelvis: pelvis pose in world coordinates
    :param act: actuator state
    :param max_iter: Gauss-Newton iteration limit
    :param previous: in-plane (x, rho) of E at the previous sample, picks the continuous branch
    :return: hip angles and the solved chain
    """
    _check_stroke(geom, act)
    x, rho = _intersect_links(geom, act, previous)

    H = pose_top_branch(geom, pelvis, HipJointAngles(0.0, 0.0, geom.theta_ro)).H
    own = pelvis.mirrored() if geom.side is Side.Left else pelvis
    R_FP = own.rotation
    thigh = np.array([0.0, -geom.l_n, -geom.l_m])
    theta_A = _plane_angle(geom, H, x, rho, act.theta_A)
    w = R_FP.T @ (_plane_point(x, rho, theta_A) - H)
    q = np.array([*_seed_hip_angles(geom, w), theta_A])

    def residual(u: np.ndarray) -> np.ndarray:
        R = R_FP @ rot_x(u[0]) @ rot_y(u[1]) @ rot_z(geom.theta_ro)
        return H + R @ thigh - _plane_point(x, rho, u[2])

    eps = 1e-7
    r = residual(q)
    iterations = 0
    while np.linalg.norm(r) >= RESIDUAL_TOLERANCE and iterations < max_iter:
        iterations += 1
        J = np.column_stack(
            [(residual(q + eps * e) - residual(q - eps * e)) / (2 * eps) for e in np.eye(3)]
        )
        damping = 1e-12 * np.trace(J.T @ J)
        q = q - np.linalg.solve(J.T @ J + damping * np.eye(3), J.T @ r)
        r = residual(q)
    if np.linalg.norm(r) >= RESIDUAL_TOLERANCE:
        raise exceptions.NoConvergence(
            {
                "error": f"Closure residual {np.linalg.norm(r):.3g} m after {iterations} iterations.",
                "side": geom.side.value,
            },
            result=q,
        )
    if not (-0.6 <= q[0] <= 1.6 and -0.5 <= q[1] <= 0.5 and abs(q[2]) < math.pi / 2):
        raise exceptions.Unreachable(
            {"error": f"Hip angles ({q[0]:.4f}, {q[1]:.4f}) rad are outside the joint range.", "side": geom.side.value}
        )
    hip = HipJointAngles(float(q[0]), float(q[1]), geom.theta_ro)
    theta_A = float(q[2])

    E = _plane_point(x, rho, theta_A)
    theta_1 = math.asin((geom.l_c / 2 - x) / geom.l1)
    theta_2 = math.asin((x + geom.l_c / 2) / geom.l2)
    theta_E, theta_B, B, H_bottom = _bottom_chain(geom, E, H, theta_A)
    E_top = pose_top_branch(geom, pelvis, hip).E
    chain = ChainSolution(
        theta_A, theta_1, theta_2, theta_E, theta_B, E, B, H,
        float(np.linalg.norm(H_bottom - H)), float(np.linalg.norm(E_top - E)),
    )
    return hip, chain


ACTUATOR_COLUMNS = ("p_int", "p_ext", "theta_A", "knee")


def series_to_actuators(
    geom_left: ExoGeometry,
    geom_right: ExoGeometry,
    right: pd.DataFrame,
    left: pd.DataFrame,
) -> pd.DataFrame:
    """
    Runs forward kinematics on every sample of two sampled patterns.

    Hip angles and the knee come from each leg's own series; the pelvis lateral channel
    (mm) of the right series drives the lateral pelvis translation of both legs.

    :param geom_left: left geometry
    :param geom_right: right geometry
    :param right: :func:`sample_pattern <exogait.trajectory.sample_pattern>` output for the right leg
    :param left: the same pattern sampled half a cycle later
    :return: a frame with ``time`` and ``p_int_L, p_ext_L, theta_A_L, knee_L`` plus the
        right-leg columns
    """
    if len(right) != len(left):
        raise exceptions.InvariantViolation({"error": "Left and right series differ in length."})
    fl, ab = f"{Channel.HipFlexExt.value}_pos", f"{Channel.HipAbAd.value}_pos"
    knee, pelvis = f"{Channel.KneeFlexExt.value}_pos", f"{Channel.PelvisLateral.value}_pos"
    lateral = right[pelvis].to_numpy(dtype=float) / 1000.0
    out: Dict[str, Any] = {"time": right["time"].to_numpy(dtype=float)}
    for suffix, geom, series in (("L", geom_left, left), ("R", geom_right, right)):
        rows = np.empty((len(series), 3))
        flexion = np.radians(series[fl].to_numpy(dtype=float))
        abduction = np.radians(series[ab].to_numpy(dtype=float))
        for k in range(len(series)):
            try:
                hip = HipJointAngles(flexion[k], abduction[k], geom.theta_ro)
                act, _ = forward_kinematics(geom, PelvisPose.neutral(geom, lateral[k]), hip)
            except exceptions.ExoGaitError as e:
                raise exceptions.with_context(e, sample=str(k), side=geom.side.value)
            rows[k] = act.p_int, act.p_ext, act.theta_A
        out[f"p_int_{suffix}"] = rows[:, 0]
        out[f"p_ext_{suffix}"] = rows[:, 1]
        out[f"theta_A_{suffix}"] = rows[:, 2]
        out[f"knee_{suffix}"] = series[knee].to_numpy(dtype=float)
    log.debug(f"Converted {len(right)} samples to actuator references.")
    return pd.DataFrame(out)


def pattern_to_actuators(
    geom_left: ExoGeometry, geom_right: ExoGeometry, p: GaitPattern, dt: float, n_cycles: float = 1
) -> pd.DataFrame:
    """
    Actuator references of both legs for a gait pattern; the left leg trails by half a cycle.
    """
    right = sample_pattern(p, dt, n_cycles)
    left = sample_pattern(p, dt, n_cycles, phase=50.0)
    return series_to_actuators(geom_left, geom_right, right, left)


def export_actuators(series: pd.DataFrame, path: str):
    try:
        series.to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise exceptions.IoError({"error": str(e), "file": path})
