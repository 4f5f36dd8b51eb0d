"""Desk-scale closed-loop simulation.

Everything here is deliberately kinematic: arms are free-flying frames
integrated from twist commands, surfaces are analytic shapes, and the
contact-pose "perception" is geometry plus calibrated tangent-space noise
standing in for a trained pose estimator.  The pushing plant is the planar
differential model built around a centre of friction.

Units: mm, rad, s.  Surface-local z points into the material everywhere,
so pressing deeper along the sensor's +z axis increases contact depth.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from . import control, filtering
from .errors import (
    ApproximationDomainError,
    DivergenceError,
    NoContactError,
    SingularTargetError,
)
from .liegroup import Pose, Twist, exp, left_jacobian, log
from .uncertainty import PoseGaussian

DEFAULT_DT = 1.0 / 30.0

# Engagement envelope: the skin saturates past this depth, and there is no
# signal before touch.
_MAX_DEPTH = 10.0

# Tangential slip limits of the simulated skin: shear and spin accumulate
# relative to the anchored first-contact frame until these are exceeded,
# then the anchor is dragged along (slip).
_MAX_SHEAR = 5.0
_MAX_SPIN = 0.26

# Pushed objects yield once pressed beyond this depth; the ride depth in
# steady pushing sits one velocity step above it.
_YIELD_DEPTH = 3.0

# The spherical tip's centre sits this far behind the contact point along
# the sensor axis; scenario termination measures from the tip centre.
_TIP_RADIUS = 20.0

# Separation between the two faces of the pushed object (dual-arm tasks).
_OBJECT_WIDTH = 80.0

# Divergence guard: a desk-scale scenario has no business this far out.
_WORKSPACE_LIMIT = 1e4

# Tall-object stability: the margin decays while the follower's depth
# error exceeds this, recovers (slower) while within it, topples at zero.
_STABILITY_TOLERANCE = 2.5
_STABILITY_DECAY = 0.5
_STABILITY_RECOVER = 0.25

# Per-component mean absolute errors of the pose estimator the observation
# noise is calibrated to (v_x, v_y, v_z in mm; omega in rad).
SENSOR_MAE = np.array([0.4259, 0.4224, 0.1230, 0.0087, 0.0111, 0.0203])

# Half-normal relation: for zero-mean Gaussian error, MAE = std * sqrt(2/pi).
DEFAULT_OBSERVATION_STD = SENSOR_MAE * math.sqrt(math.pi / 2.0)

# Periodic leader trajectory: amplitudes (mm, rad), phases, period (s).
PERIODIC_AMPLITUDE = np.array(
    [75.0, 75.0, 75.0, math.radians(25), math.radians(25), math.radians(25)]
)
PERIODIC_PHASE = np.array([math.pi / 2.0, 0, 0, 0, 0, 0])
PERIODIC_PERIOD = 30.0

# Scripted single-axis leader segments: 200 mm moves at 20 mm/s, then
# 60 degree turns at 6 deg/s, one axis at a time.
_SEGMENT_DURATION = 10.0
_SEGMENT_TWISTS = [
    np.array([-20.0, 0, 0, 0, 0, 0]),
    np.array([0, 20.0, 0, 0, 0, 0]),
    np.array([0, 0, 20.0, 0, 0, 0]),
    np.array([0, 0, 0, -math.radians(6), 0, 0]),
    np.array([0, 0, 0, 0, math.radians(6), 0]),
    np.array([0, 0, 0, 0, 0, math.radians(6)]),
]


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


class SurfaceModel:
    """Analytic contact surface with slip-anchored shear state.

    kind is one of "flat", "ramp", "hemisphere".  `pose` maps surface-local
    coordinates to the work frame and may be reassigned when the surface
    rides on an arm or a pushed object; the shear anchor is stored in local
    coordinates, so it is transported with the material automatically.

    flat: boundary is the local z = 0 plane, material below (+z).
    ramp: flat for y <= 0, then a rising circular arc of the given radius
      about an axis parallel to local x; past the angular extent the
      boundary continues as the tangent plane.
    hemisphere: dome of the given radius with its apex at the local origin
      and centre at +z (local z points into the dome).
    """

    def __init__(self, kind: str, pose: Pose | None = None,
                 radius: float | None = None, extent_deg: float = 60.0):
        if kind not in ("flat", "ramp", "hemisphere"):
            raise ValueError(f"unknown surface kind {kind!r}")
        if kind != "flat":
            if radius is None or radius <= 0:
                raise ValueError(f"{kind} surface needs a positive radius")
        self.kind = kind
        self.pose = pose if pose is not None else Pose.identity()
        self.radius = radius
        self.extent_deg = extent_deg
        self._anchor_local = None
        self._anchor_spin = 0.0

    @classmethod
    def flat(cls, pose: Pose | None = None) -> "SurfaceModel":
        return cls("flat", pose)

    @classmethod
    def ramp(cls, radius: float = 300.0, extent_deg: float = 60.0,
             pose: Pose | None = None) -> "SurfaceModel":
        return cls("ramp", pose, radius, extent_deg)

    @classmethod
    def hemisphere(cls, radius: float = 60.0, pose: Pose | None = None) -> "SurfaceModel":
        return cls("hemisphere", pose, radius)

    def reset(self) -> None:
        """Forget the shear anchor (sensor lifted off)."""
        self._anchor_local = None
        self._anchor_spin = 0.0

    # local geometry ----------------------------------------------------

    def _project_local(self, p: np.ndarray):
        """Boundary projection in local coords: (q, inward normal, depth)."""
        if self.kind == "flat":
            q = np.array([p[0], p[1], 0.0])
            return q, np.array([0.0, 0.0, 1.0]), float(p[2])
        if self.kind == "ramp":
            r = self.radius
            if p[1] <= 0.0:
                q = np.array([p[0], p[1], 0.0])
                return q, np.array([0.0, 0.0, 1.0]), float(p[2])
            # Cylinder axis runs along local x through (y, z) = (0, -r),
            # on the air side; material lies outside the cylinder.
            axis_offset = np.array([p[1], p[2] + r])
            tau = math.atan2(axis_offset[0], axis_offset[1])
            tau_max = math.radians(self.extent_deg)
            if tau <= tau_max:
                dist = float(np.linalg.norm(axis_offset))
                if dist == 0.0:
                    raise NoContactError("point on the ramp axis has no defined normal")
                n_yz = axis_offset / dist
                q = np.array([p[0], r * n_yz[0], r * n_yz[1] - r])
                n = np.array([0.0, n_yz[0], n_yz[1]])
                return q, n, dist - r
            # Tangent-plane continuation past the arc extent.
            n = np.array([0.0, math.sin(tau_max), math.cos(tau_max)])
            q0 = np.array([p[0], r * math.sin(tau_max), r * math.cos(tau_max) - r])
            depth = float(np.dot(p - q0, n))
            q = p - depth * n
            return q, n, depth
        # hemisphere
        centre = np.array([0.0, 0.0, self.radius])
        to_p = p - centre
        dist = float(np.linalg.norm(to_p))
        if dist == 0.0:
            raise NoContactError("point at the dome centre has no defined normal")
        n = -to_p / dist  # toward the centre = into the material
        q = centre - self.radius * n
        return q, n, self.radius - dist

    def _convention_x_local(self, q: np.ndarray, n: np.ndarray) -> np.ndarray:
        if self.kind == "hemisphere":
            x_apex = np.array([1.0, 0.0, 0.0])
            tangent = x_apex - np.dot(x_apex, n) * n
            norm = np.linalg.norm(tangent)
            if norm < 1e-9:
                raise NoContactError(
                    "contact is 90 degrees from the dome apex; shear convention undefined"
                )
            return tangent / norm
        # flat and ramp: local x is tangential everywhere.
        return np.array([1.0, 0.0, 0.0])

    def probe(self, point_w: np.ndarray):
        """World-frame boundary projection: (q_w, inward normal_w, depth).

        Read-only counterpart of contact_pose for metrics and oracles.
        """
        inv = self.pose.inverse()
        p_local = inv.apply(np.asarray(point_w, dtype=float))
        q, n, depth = self._project_local(p_local)
        return self.pose.apply(q), self.pose.rotation @ n, depth


@dataclasses.dataclass(frozen=True)
class ObservationModel:
    """Per-component tangent noise of the synthetic pose estimator.

    multiplier scales the *reported* covariance only; 1 means perfectly
    calibrated, larger values simulate an under-confident estimator.
    """

    std: np.ndarray = dataclasses.field(
        default_factory=lambda: DEFAULT_OBSERVATION_STD.copy()
    )
    multiplier: float = 1.0

    def __post_init__(self):
        std = np.asarray(self.std, dtype=float)
        if std.shape != (6,):
            raise ValueError("std must be a 6-vector")
        if np.any(std <= 0):
            raise ValueError("stds must be positive")
        if self.multiplier <= 0:
            raise ValueError("multiplier must be positive")
        object.__setattr__(self, "std", std)


@dataclasses.dataclass(frozen=True)
class PushedObject:
    """Planar pushing chart: target coordinates (y, z) in the contact frame
    and accumulated frame rotation phi.

    alpha is the rotation efficiency of tangential pushing (1 = no slip),
    r0 the distance from the contact to the centre of friction.
    """

    y: float
    z: float
    phi: float = 0.0
    alpha: float = 0.7
    r0: float = 40.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")

    @property
    def bearing(self) -> float:
        """theta = atan2(y, z) - phi."""
        return math.atan2(self.y, self.z) - self.phi


def contact_pose(surface: SurfaceModel, sensor_pose: Pose) -> Pose:
    """True feature-frame pose of the sensor (X_fs), with shear memory.

    The normal components (depth, tilt) are instantaneous geometry at the
    sensor tip's boundary projection.  The tangential components (shear,
    spin) accumulate against an anchor planted at first contact and dragged
    when the slip limits are exceeded; the anchor lives in surface-local
    coordinates, so surfaces riding on moving bodies transport it.

    Mutates the surface's anchor state.  Raises NoContactError outside the
    depth envelope [0, 10] mm.
    """
    tip_w = sensor_pose.translation
    inv = surface.pose.inverse()
    p_local = inv.apply(tip_w)
    q_local, n_local, depth = surface._project_local(p_local)
    if depth < 0.0 or depth > _MAX_DEPTH:
        surface.reset()
        raise NoContactError(
            f"contact depth {depth:.3f} mm outside the [0, {_MAX_DEPTH}] mm envelope"
        )
    x_local = surface._convention_x_local(q_local, n_local)

    # Spin of the sensor about the local normal, measured against the
    # surface's tangential convention.
    s_rot = surface.pose.rotation
    z_w = s_rot @ n_local
    x_conv_w = s_rot @ x_local
    y_conv_w = np.cross(z_w, x_conv_w)
    r_g = np.column_stack([x_conv_w, y_conv_w, z_w])
    r_rel = r_g.T @ sensor_pose.rotation
    spin = math.atan2(r_rel[1, 0], r_rel[0, 0])

    if surface._anchor_local is None:
        surface._anchor_local = q_local.copy()
        surface._anchor_spin = spin
    else:
        # Drag the anchor when tangential shear exceeds the slip limit.
        v = q_local - surface._anchor_local
        vt = v - np.dot(v, n_local) * n_local
        shear = float(np.linalg.norm(vt))
        if shear > _MAX_SHEAR:
            candidate = q_local - (_MAX_SHEAR / shear) * vt
            aq, _, _ = surface._project_local(candidate)
            surface._anchor_local = aq
        gamma = _wrap_angle(spin - surface._anchor_spin)
        if abs(gamma) > _MAX_SPIN:
            surface._anchor_spin = _wrap_angle(spin - math.copysign(_MAX_SPIN, gamma))

    anchor_w = surface.pose.apply(surface._anchor_local)
    # Feature frame: origin at the anchor, z along the normal at the tip
    # projection, x = tangential convention rotated by the anchor spin.
    cs, sn = math.cos(surface._anchor_spin), math.sin(surface._anchor_spin)
    x_f = cs * x_conv_w + sn * y_conv_w
    x_f = _unit(x_f - np.dot(x_f, z_w) * z_w)
    y_f = np.cross(z_w, x_f)
    feature = Pose(np.column_stack([x_f, y_f, z_w]), anchor_w)
    return feature.inverse() @ sensor_pose


def observe(model: ObservationModel, true_contact: Pose,
            rng: np.random.Generator) -> PoseGaussian:
    """Noisy sensor-side pose estimate of a true feature-frame contact.

    The estimator convention is the inverse of the geometric contact pose;
    noise is a left-perturbation twist with the model's per-component
    stds, and the reported covariance is the matching left-perturbation
    covariance (times the calibration multiplier).
    """
    x_sf = true_contact.inverse()
    noise = model.std * rng.standard_normal(6)
    mean = exp(noise) @ x_sf
    mu_hat = log(mean).vector
    jac = left_jacobian(mu_hat, order=2)
    cov = model.multiplier * (jac @ np.diag(model.std ** 2) @ jac.T)
    return PoseGaussian(mean, cov)


def leader_twist(t: float, amplitude=None, phase=None, period: float = PERIODIC_PERIOD) -> Twist:
    """Sinusoidal leader velocity: (2 pi b / T) cos(2 pi t / T + phase)."""
    if period <= 0:
        raise ValueError("period must be positive")
    b = PERIODIC_AMPLITUDE if amplitude is None else np.asarray(amplitude, dtype=float)
    ph = PERIODIC_PHASE if phase is None else np.asarray(phase, dtype=float)
    v = (2.0 * math.pi * b / period) * np.cos(2.0 * math.pi * t / period + ph)
    return Twist.from_vector(v)


def push_object_step(obj: PushedObject, pusher_delta) -> PushedObject:
    """Advance the pushing chart by one differential pusher motion.

    pusher_delta = (dy, dz) are increments of the target's contact-frame
    coordinates; the object yaw increments by (alpha / r0) dy.  Steps
    larger than 5 mm are outside the differential model's validity.
    """
    dy, dz = float(pusher_delta[0]), float(pusher_delta[1])
    if abs(dy) > 5.0 or abs(dz) > 5.0:
        raise ApproximationDomainError(
            f"pusher step ({dy:.3f}, {dz:.3f}) mm exceeds the 5 mm differential limit"
        )
    return PushedObject(
        y=obj.y + dy,
        z=obj.z + dz,
        phi=obj.phi + (obj.alpha / obj.r0) * dy,
        alpha=obj.alpha,
        r0=obj.r0,
    )


def bearing_sensitivity(obj: PushedObject):
    """Partials of the bearing theta = atan2(y, z) - phi, plus the radius
    where tangential pushing flips from aligning to misaligning."""
    r_sq = obj.y * obj.y + obj.z * obj.z
    if r_sq == 0.0:
        raise SingularTargetError("target at the contact point; bearing undefined")
    return (obj.z / r_sq, -obj.y / r_sq, -1.0, obj.r0 / obj.alpha)


# --------------------------------------------------------------------------
# Scenario running


_TASKS = ("track", "follow", "push_single", "push_dual")


@dataclasses.dataclass(frozen=True)
class Scenario:
    """Resolved closed-loop scenario configuration."""

    task: str
    duration: float
    dt: float = DEFAULT_DT
    seed: int = 0
    observation_std: np.ndarray = dataclasses.field(
        default_factory=lambda: DEFAULT_OBSERVATION_STD.copy()
    )
    observation_multiplier: float = 1.0
    dynamics_sigma: float = filtering.DEPLOYMENT_SIGMA
    # track
    track_profile: str = "periodic"  # periodic | segments | static
    # follow
    surface: str = "flat"  # flat | ramp | hemisphere
    surface_radius: float | None = None
    follow_speed: float = 10.0
    # push
    object_alpha: float = 0.7
    object_r0: float = 40.0
    tall: bool = False
    start_y: float = -250.0
    start_z: float = 100.0
    target_y: float = 0.0
    target_z: float = 375.0
    switch_off_radius: float = control.DEFAULT_SWITCH_OFF_RADIUS
    termination_radius: float = control.DEFAULT_TERMINATION_RADIUS

    def __post_init__(self):
        if self.task not in _TASKS:
            raise ValueError(f"task must be one of {_TASKS}, got {self.task!r}")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")
        if self.track_profile not in ("periodic", "segments", "static"):
            raise ValueError(f"unknown track profile {self.track_profile!r}")
        if self.surface not in ("flat", "ramp", "hemisphere"):
            raise ValueError(f"unknown surface kind {self.surface!r}")
        if self.follow_speed <= 0:
            raise ValueError("follow_speed must be positive")
        if not self.switch_off_radius > self.termination_radius > 0:
            raise ValueError(
                "need switch_off_radius > termination_radius > 0")
        object.__setattr__(
            self, "observation_std", np.asarray(self.observation_std, dtype=float)
        )

    def observation_model(self) -> ObservationModel:
        return ObservationModel(self.observation_std, self.observation_multiplier)


class TrajectoryLog:
    """Per-step records of a scenario run, serializable as CSV.

    Column layout is fixed per task: common pose/command columns followed
    by the task's scalar columns.  Timestamps must strictly increase per
    arm.
    """

    _COMMON = ("t", "arm", "x", "y", "z", "qw", "qx", "qy", "qz",
               "twist_0", "twist_1", "twist_2", "twist_3", "twist_4",
               "twist_5", "belief_cov_trace")

    def __init__(self, scalar_columns):
        self.scalar_columns = tuple(scalar_columns)
        self.rows = []
        self._last_t = {}

    def add(self, t: float, arm: str, pose: Pose, twist, cov_trace, scalars):
        last = self._last_t.get(arm)
        if last is not None and t <= last:
            raise ValueError(f"timestamps must strictly increase per arm ({arm})")
        self._last_t[arm] = t
        unknown = set(scalars) - set(self.scalar_columns)
        if unknown:
            raise ValueError(f"unknown scalar columns {sorted(unknown)}")
        q = _quaternion_from_rotation(pose.rotation)
        twist = np.zeros(6) if twist is None else np.asarray(twist, dtype=float)
        row = [t, arm, *pose.translation, *q, *twist, cov_trace]
        row.extend(scalars.get(k) for k in self.scalar_columns)
        self.rows.append(row)

    @property
    def header(self):
        return self._COMMON + self.scalar_columns

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header) + "\n")
            for row in self.rows:
                fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def _quaternion_from_rotation(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    t = float(np.trace(r))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                      (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                      0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def _check_pose(pose: Pose, what: str) -> Pose:
    if not np.all(np.isfinite(pose.matrix)):
        raise DivergenceError(f"{what} pose contains non-finite values")
    if np.max(np.abs(pose.translation)) > _WORKSPACE_LIMIT:
        raise DivergenceError(
            f"{what} left the workspace (|position| > {_WORKSPACE_LIMIT:g} mm)"
        )
    return pose


def _integrate_body(pose: Pose, twist, dt: float, what: str) -> Pose:
    step = np.asarray(twist, dtype=float) * dt
    return _check_pose((pose @ exp(step)).renormalized(), what)


def _integrate_base_frame(pose: Pose, twist, dt: float, what: str) -> Pose:
    """Base-frame Cartesian velocity: translation in world axes, rotation
    about the end-effector's own origin (world axes)."""
    v = np.asarray(twist, dtype=float)
    rot = exp(np.concatenate([np.zeros(3), v[3:] * dt])).rotation
    new = Pose(rot @ pose.rotation, pose.translation + v[:3] * dt)
    return _check_pose(new.renormalized(), what)


class _PerceptionChannel:
    """contact_pose -> observe -> filter for one sensor on one surface."""

    def __init__(self, surface: SurfaceModel, model: ObservationModel,
                 noise: filtering.DynamicsNoise, rng: np.random.Generator):
        self.surface = surface
        self.model = model
        self.noise = noise
        self.rng = rng
        self.state = None

    def step(self, sensor_pose: Pose):
        """Returns (true X_fs, belief PoseGaussian); raises NoContactError."""
        true_fs = contact_pose(self.surface, sensor_pose)
        obs = observe(self.model, true_fs, self.rng)
        if self.state is None:
            self.state = filtering.init(obs, sensor_pose)
        else:
            self.state = filtering.step(self.state, obs, sensor_pose, self.noise)
        return true_fs, self.state.belief

    def reset(self):
        self.state = None
        self.surface.reset()


def run_scenario(scenario: Scenario, rng: np.random.Generator):
    """Execute one closed-loop scenario; returns (TrajectoryLog, metrics).

    Metrics always carry final_target_error_mm, mean_depth_error_mm,
    mean_normal_angle_deg, settled, and runtime_s (simulated seconds, so
    repeated runs are bitwise identical), plus task-specific extras.
    """
    if scenario.task == "track":
        return _run_track(scenario, rng)
    if scenario.task == "follow":
        return _run_follow(scenario, rng)
    return _run_push(scenario, rng)


def _steady_start(duration: float, fraction: float = 0.5, minimum: float = 5.0) -> float:
    return min(max(minimum, fraction * duration), duration)


def _run_track(scenario: Scenario, rng: np.random.Generator):
    dt = scenario.dt
    n_steps = int(round(scenario.duration / dt))
    cfg = control.preset("tracking")
    noise = filtering.default_dynamics_noise(scenario.dynamics_sigma)

    leader = Pose.identity()
    surface = SurfaceModel.flat(leader)
    # Reference depth is 6 mm, so the follower engages exactly at reference.
    follower = Pose(np.eye(3), np.array([0.0, 0.0, 6.0]))
    channel = _PerceptionChannel(surface, scenario.observation_model(), noise, rng)
    pid = control.PidState.initial(6)
    ref_inv = cfg.reference_contact_pose.inverse()

    log_ = TrajectoryLog(("depth_mm", "track_error_mm", "track_error_deg",
                          "est_error_mm", "est_error_deg"))
    steady_t = _steady_start(scenario.duration)
    track_err = []
    est_err = []
    depth_err = []
    angles = []

    for k in range(n_steps):
        t = k * dt
        if scenario.track_profile == "periodic":
            v = leader_twist(t).vector
        elif scenario.track_profile == "segments":
            seg = int(t // _SEGMENT_DURATION)
            v = _SEGMENT_TWISTS[seg] if seg < len(_SEGMENT_TWISTS) else np.zeros(6)
        else:
            v = np.zeros(6)
        leader = _integrate_base_frame(leader, v, dt, "leader")
        surface.pose = leader

        true_fs, belief = channel.step(follower)
        command, pid, _ = control.servo_step(cfg, pid, belief.mean, dt)

        true_sf = true_fs.inverse()
        e_true = log(true_sf @ ref_inv).vector
        e_est = log(belief.mean @ true_sf.inverse()).vector
        te_mm = float(np.linalg.norm(e_true[:3]))
        te_deg = math.degrees(float(np.linalg.norm(e_true[3:])))
        ee_mm = float(np.linalg.norm(e_est[:3]))
        ee_deg = math.degrees(float(np.linalg.norm(e_est[3:])))
        _, n_w, depth = surface.probe(follower.translation)
        angle = math.degrees(
            math.acos(min(1.0, max(-1.0, float(np.dot(follower.rotation[:, 2], n_w)))))
        )
        if t >= steady_t:
            track_err.append((te_mm, te_deg))
            est_err.append((ee_mm, ee_deg))
            depth_err.append(abs(depth - 6.0))
            angles.append(angle)
        cov_trace = float(np.trace(belief.cov))
        log_.add(t, "leader", leader, v, None,
                 {"depth_mm": None, "track_error_mm": None, "track_error_deg": None,
                  "est_error_mm": None, "est_error_deg": None})
        log_.add(t, "follower", follower, command.vector, cov_trace,
                 {"depth_mm": depth, "track_error_mm": te_mm,
                  "track_error_deg": te_deg, "est_error_mm": ee_mm,
                  "est_error_deg": ee_deg})

        follower = _integrate_body(follower, command.vector, dt, "follower")

    track_arr = np.array(track_err) if track_err else np.zeros((0, 2))
    est_arr = np.array(est_err) if est_err else np.zeros((0, 2))
    mean_track_mm = float(np.mean(track_arr[:, 0])) if len(track_arr) else None
    mean_track_deg = float(np.mean(track_arr[:, 1])) if len(track_arr) else None
    metrics = {
        "task": "track",
        "final_target_error_mm": None,
        "mean_depth_error_mm": float(np.mean(depth_err)) if depth_err else None,
        "mean_normal_angle_deg": float(np.mean(angles)) if angles else None,
        "track_error_mm": mean_track_mm,
        "track_error_deg": mean_track_deg,
        "est_error_mm": float(np.mean(est_arr[:, 0])) if len(est_arr) else None,
        "est_error_deg": float(np.mean(est_arr[:, 1])) if len(est_arr) else None,
        "settled": bool(mean_track_mm is not None and mean_track_mm < 5.0),
        "runtime_s": n_steps * dt,
    }
    return log_, metrics


def _follow_runs(scenario: Scenario):
    """(surface factory, list of (feedforward, start pose), per-run time)."""
    speed = scenario.follow_speed
    if scenario.surface == "hemisphere":
        radius = scenario.surface_radius or 60.0
        runs = []
        for i in range(8):
            th = i * math.pi / 4.0
            ff = np.array([speed * math.cos(th), speed * math.sin(th), 0, 0, 0, 0])
            runs.append(ff)
        per_run = scenario.duration / len(runs)
        make = lambda: SurfaceModel.hemisphere(radius)
        return make, runs, per_run
    if scenario.surface == "ramp":
        radius = scenario.surface_radius or 300.0
        make = lambda: SurfaceModel.ramp(radius)
    else:
        make = SurfaceModel.flat
    return make, [np.array([0, speed, 0, 0, 0, 0], dtype=float)], scenario.duration


def _run_follow(scenario: Scenario, rng: np.random.Generator):
    dt = scenario.dt
    noise = filtering.default_dynamics_noise(scenario.dynamics_sigma)
    make_surface, runs, per_run = _follow_runs(scenario)
    n_steps = int(round(per_run / dt))
    base = control.preset("surface_follow")

    log_ = TrajectoryLog(("run", "depth_mm", "normal_angle_deg"))
    depth_eval = []
    angle_eval = []
    transient = 2.0

    t = 0.0
    for run_idx, ff in enumerate(runs):
        cfg = dataclasses.replace(base, feedforward_twist=Twist.from_vector(ff))
        surface = make_surface()
        sensor = Pose(np.eye(3), np.array([0.0, 0.0, 3.0]))
        channel = _PerceptionChannel(surface, scenario.observation_model(), noise, rng)
        pid = control.PidState.initial(6)
        for k in range(n_steps):
            _, belief = channel.step(sensor)
            command, pid, _ = control.servo_step(cfg, pid, belief.mean, dt)
            _, n_w, depth = surface.probe(sensor.translation)
            angle = math.degrees(math.acos(min(1.0, max(-1.0, float(
                np.dot(sensor.rotation[:, 2], n_w))))))
            if k * dt >= transient:
                depth_eval.append(abs(depth - 3.0))
                angle_eval.append(angle)
            log_.add(t, "sensor", sensor, command.vector,
                     float(np.trace(belief.cov)),
                     {"run": float(run_idx), "depth_mm": depth,
                      "normal_angle_deg": angle})
            sensor = _integrate_body(sensor, command.vector, dt, "sensor")
            t += dt

    mean_depth = float(np.mean(depth_eval)) if depth_eval else None
    mean_angle = float(np.mean(angle_eval)) if angle_eval else None
    metrics = {
        "task": "follow",
        "surface": scenario.surface,
        "final_target_error_mm": None,
        "mean_depth_error_mm": mean_depth,
        "mean_normal_angle_deg": mean_angle,
        "settled": bool(mean_depth is not None and mean_depth < 1.0),
        "runtime_s": len(runs) * n_steps * dt,
    }
    return log_, metrics


def _rotation_about_axis_through(axis_w: np.ndarray, angle: float,
                                 point_w: np.ndarray) -> Pose:
    rot = exp(np.concatenate([np.zeros(3), axis_w * angle])).rotation
    return Pose(rot, point_w - rot @ point_w)


def _run_push(scenario: Scenario, rng: np.random.Generator):
    dt = scenario.dt
    dual = scenario.task == "push_dual"
    noise = filtering.default_dynamics_noise(scenario.dynamics_sigma)
    model = scenario.observation_model()

    # World: x up, pushing happens in the (y, z) plane.  The pushed face's
    # inward normal starts along +y (the initial push direction).
    contact0 = np.array([0.0, scenario.start_y, scenario.start_z])
    target_w = np.array([0.0, scenario.target_y, scenario.target_z])
    face_rot0 = np.column_stack([
        np.array([1.0, 0.0, 0.0]),   # x: up
        np.array([0.0, 0.0, -1.0]),  # y
        np.array([0.0, 1.0, 0.0]),   # z: inward normal
    ])
    face = Pose(face_rot0, contact0)
    surface = SurfaceModel.flat(face)

    leader_name = "push_tall" if scenario.tall else "push_pid1"
    servo_cfg = control.preset(leader_name)
    bearing_cfg = control.preset("push_pid2_dual" if dual else "push_pid2_single")
    push_cfg = control.PushConfig(
        servo=servo_cfg,
        bearing_pid=bearing_cfg,
        target_pose_in_work=Pose(np.eye(3), target_w),
        switch_off_radius=scenario.switch_off_radius,
        termination_radius=scenario.termination_radius,
    )
    pid = control.PidState.initial(6)
    bearing_state = control.PidState.initial(1)
    channel = _PerceptionChannel(surface, model, noise, rng)

    if dual:
        # Leader starts engaged at the yield depth so the object moves from
        # the first step; the follower starts at its 3 mm reference on the
        # opposite face.
        sensor = Pose(face.rotation, face.apply(np.array([0.0, 0.0, _YIELD_DEPTH])))
    else:
        # Single-arm protocol: approach from 45 mm off the face.
        sensor = Pose(face.rotation, face.apply(np.array([0.0, 0.0, -45.0])))

    face2_offset = Pose(
        np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]]),
        np.array([0.0, 0.0, _OBJECT_WIDTH]),
    )
    if dual:
        surface2 = SurfaceModel.flat(face @ face2_offset)
        follower_name = "stabiliser_tall" if scenario.tall else "stabiliser"
        stab_cfg = control.preset(follower_name)
        follower = Pose(surface2.pose.rotation,
                        surface2.pose.apply(np.array([0.0, 0.0, 3.0])))
        channel2 = _PerceptionChannel(surface2, model, noise, rng)
        pid2 = control.PidState.initial(6)

    alpha, r0 = scenario.object_alpha, scenario.object_r0
    prev_tip_face = None
    terminated = False
    toppled = False
    margin = 1.0
    n_steps = int(round(scenario.duration / dt))
    steps_done = 0

    scalars = ("bearing_rad", "target_distance_mm", "tip_distance_mm",
               "depth_mm", "follower_depth_mm", "stability_margin")
    log_ = TrajectoryLog(scalars)
    depth_log = []
    angle_log = []
    # The follower's engagement transient (the object's 10 mm/s recession
    # step) peaks near 2.8 mm and decays with the depth loop's slow pole;
    # depth maintenance is assessed after it has died out.
    follower_depth_err = []
    follower_window = 8.0

    for k in range(n_steps):
        t = k * dt
        steps_done = k + 1

        # Leader perception and command.
        in_contact = True
        try:
            true_fs, belief = channel.step(sensor)
        except NoContactError:
            in_contact = False
        if in_contact:
            command, (pid, bearing_state), _ = control.push_step(
                push_cfg, pid, bearing_state, belief.mean, sensor, dt)
            cov_trace = float(np.trace(belief.cov))
        else:
            command = servo_cfg.feedforward_twist  # press toward the face
            cov_trace = None

        # Follower perception and command.
        if dual:
            try:
                _, belief2 = channel2.step(follower)
                command2, pid2, _ = control.servo_step(stab_cfg, pid2, belief2.mean, dt)
                cov_trace2 = float(np.trace(belief2.cov))
                _, _, fdepth = surface2.probe(follower.translation)
            except NoContactError:
                command2 = Twist.from_vector(np.array([0, 0, 5.0, 0, 0, 0]))
                cov_trace2 = None
                fdepth = None
            if t >= follower_window and fdepth is not None:
                follower_depth_err.append(abs(fdepth - 3.0))
            if scenario.tall:
                err = abs(fdepth - 3.0) if fdepth is not None else math.inf
                if err > _STABILITY_TOLERANCE:
                    margin -= _STABILITY_DECAY * dt
                else:
                    margin = min(1.0, margin + _STABILITY_RECOVER * dt)
                if margin <= 0.0:
                    toppled = True

        # Move the arms.
        new_sensor = _integrate_body(sensor, command.vector, dt, "leader sensor")
        if dual:
            follower = _integrate_body(follower, command2.vector, dt, "follower sensor")

        # Plant: the object yields past the yield depth and rotates about
        # its centre of friction in response to tangential contact motion.
        tip_w = new_sensor.translation
        tip_face = face.inverse().apply(tip_w)
        depth_raw = tip_face[2]
        advance = max(0.0, depth_raw - _YIELD_DEPTH)
        s_y = 0.0 if prev_tip_face is None else tip_face[1] - prev_tip_face[1]
        if depth_raw >= 0.0:
            # Re-anchor the chart at the current contact frame every step:
            # target coordinates in the face frame, zero accumulated yaw.
            ft = face.inverse().apply(target_w)
            chart = push_object_step(
                PushedObject(y=ft[1], z=ft[2], phi=0.0, alpha=alpha, r0=r0),
                (-s_y, -advance))
            dphi = chart.phi
            z_f_w = face.rotation[:, 2]
            x_f_w = face.rotation[:, 0]
            face = Pose(face.rotation, face.translation + advance * z_f_w)
            if dphi != 0.0:
                q_w, _, _ = SurfaceModel.flat(face).probe(tip_w)
                cof_w = q_w + r0 * z_f_w
                m = _rotation_about_axis_through(x_f_w, -dphi, cof_w)
                face = (m @ face).renormalized()
            surface.pose = face
            if dual:
                surface2.pose = face @ face2_offset
        prev_tip_face = face.inverse().apply(tip_w) if depth_raw >= 0.0 else None
        sensor = new_sensor

        # Distances: the controller uses the contact point, the scenario
        # terminates on the tip centre (logged both).
        tip_centre = sensor.translation - _TIP_RADIUS * sensor.rotation[:, 2]
        tip_distance = float(np.linalg.norm(target_w - tip_centre))
        contact_distance = math.hypot(target_w[1] - sensor.translation[1],
                                      target_w[2] - sensor.translation[2])
        if in_contact:
            q_w, n_w, depth_now = surface.probe(sensor.translation)
            angle = math.degrees(math.acos(min(1.0, max(-1.0, float(
                np.dot(sensor.rotation[:, 2], n_w))))))
            depth_log.append(depth_now)
            angle_log.append(angle)
            # Bearing of the target seen from the current contact point,
            # in face axes.
            d = target_w - q_w
            bearing = math.atan2(float(np.dot(d, face.rotation[:, 1])),
                                 float(np.dot(d, face.rotation[:, 2])))
        else:
            depth_now = None
            angle = None
            bearing = None

        row = {"bearing_rad": bearing, "target_distance_mm": contact_distance,
               "tip_distance_mm": tip_distance, "depth_mm": depth_now,
               "follower_depth_mm": None,
               "stability_margin": margin if scenario.tall else None}
        log_.add(t, "leader", sensor, command.vector, cov_trace, row)
        if dual:
            log_.add(t, "follower", follower, command2.vector, cov_trace2,
                     {"bearing_rad": None, "target_distance_mm": None,
                      "tip_distance_mm": None, "depth_mm": None,
                      "follower_depth_mm": fdepth,
                      "stability_margin": margin if scenario.tall else None})

        if toppled:
            break
        if tip_distance < scenario.termination_radius:
            terminated = True
            break

    # Final target error: perpendicular distance from the target to the
    # line through the final contact point along the face normal.
    q_w, n_w, _ = surface.probe(sensor.translation)
    to_target = target_w - q_w
    perp = to_target - np.dot(to_target, n_w) * n_w
    final_err = float(np.linalg.norm(perp))

    metrics = {
        "task": scenario.task,
        "tall": scenario.tall,
        "terminated": terminated,
        "final_target_error_mm": final_err,
        "mean_depth_error_mm": (
            float(np.mean(np.abs(np.array(depth_log) - _YIELD_DEPTH)))
            if depth_log else None),
        "mean_normal_angle_deg": float(np.mean(angle_log)) if angle_log else None,
        "settled": bool(terminated and not toppled),
        "runtime_s": steps_done * dt,
    }
    if dual:
        metrics["follower_depth_worst_mm"] = (
            float(np.max(follower_depth_err)) if follower_depth_err else None)
        metrics["follower_depth_mean_mm"] = (
            float(np.mean(follower_depth_err)) if follower_depth_err else None)
    if scenario.tall:
        metrics["toppled"] = toppled
        metrics["stability_margin_final"] = margin
    return log_, metrics


def write_metrics_json(metrics: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_study_sequence(n_steps: int, rng: np.random.Generator,
                        model: ObservationModel | None = None,
                        spec=None):
    """Independent random contact poses with noisy observations, as
    (true sensor-side pose, observation) pairs for filter_study."""
    from .gdnmath import SampleSpec, sample_contact_pose
    from .liegroup import euler_to_pose

    model = model if model is not None else ObservationModel()
    spec = spec if spec is not None else SampleSpec()
    pairs = []
    for _ in range(n_steps):
        euler = sample_contact_pose(spec, rng)
        x_fs = euler_to_pose(*euler)
        obs = observe(model, x_fs, rng)
        pairs.append((x_fs.inverse(), obs))
    return pairs
