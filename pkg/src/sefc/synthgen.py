"""Domain-randomized synthetic pick-and-place episodes with fault injection.

The plant is a declared simplified model, not a physics engine: each joint
follows its setpoint through a critically damped second-order tracking law

    q_fb'' = wn^2 (q_sp - q_fb) - 2 wn q_fb'

propagated exactly per 1/60 s step (zero-order hold on the setpoint), and
the logged effort is a tracking term plus a payload gravity term

    effort_i = k_track (q_sp_i - q_fb_i) + g arm_i m_carried cos(q_fb_i)

with the payload attached between the grasp and release phases.  Critical
damping avoids overshoot artifacts that would confound fault separability.
TCP channels come from a fixed two-link planar forward-kinematics surrogate
over joints 0-1 (x, y from the linkage, constant z, yaw = q0 + q1); the
object's tracked position is perception telemetry (Feedback role) so it
receives spatial noise, while the domain-randomization draws themselves are
logged as noiseless Context constants.

Friction and cube-dimension draws are logged as Context channels but do not
enter the declared plant (no contact model is invented for them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np
import yaml

from .errors import (
    InfeasibleProfile,
    NumericalInstability,
    SchemaViolation,
    UnsupportedFault,
)
from .schema import ChannelDescriptor, Episode, SignalRole

N_JOINTS = 6
GRAVITY = 9.81
#: Effective per-joint moment arms (m) for the payload gravity term.
GRAVITY_ARM_M = (0.0, 0.45, 0.25, 0.10, 0.05, 0.02)
#: Per-joint tracking stiffness; natural frequency wn = sqrt(stiffness).
JOINT_STIFFNESS = (100.0,) * N_JOINTS
#: Tracking-torque gain (Nm per rad of setpoint error).
K_TRACK = 40.0
#: Gripper stiffness is the randomized proportional gain scaled down.
GRIPPER_STIFFNESS_SCALE = 1.0 / 100.0

VEL_CAP_RADPS = 3.0
ACC_CAP_RADPS2 = 12.0

#: Two-link planar surrogate for TCP channels (joints 0-1).
LINK_LENGTHS_M = (0.40, 0.40)
TCP_Z_M = 0.25

GRIPPER_OPEN_RAD = 0.0
GRIPPER_CLOSED_RAD = 0.7

PHASE_NAMES = (
    "approach",
    "above_pick",
    "descend_pick",
    "grasp",
    "lift",
    "transfer",
    "above_place",
    "descend_place",
    "release",
    "return",
)
PHASE_DURATIONS_S = (1.0, 0.8, 0.7, 0.5, 0.7, 1.5, 0.8, 0.7, 0.5, 1.3)

HOME_Q = (0.0, 0.7, 1.2, -0.4, 0.5, 0.0)
PICK_XY_M = (0.55, 0.15)
PLACE_XY_M = (0.35, -0.40)

# rng sub-streams, so twin generation shares base draws regardless of fault
_STREAM_DRAWS = 0
_STREAM_NOISE = 1
_STREAM_FAULT = 2


# ---------------------------------------------------------------------------
# configuration and per-episode draws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomizationConfig:
    """Domain-randomization ranges and the sensor-noise table."""

    mass_kg_range: tuple[float, float] = (0.10, 0.30)
    mass_kg_exploratory_cap: float = 0.80
    friction_range: tuple[float, float] = (0.30, 0.50)
    gripper_pad_friction: float = 1.2
    kp_grip_range: tuple[float, float] = (5000.0, 12000.0)
    sigma_base: float = 0.002
    sigma_pos_rad: float = 0.002
    sigma_vel_radps: float = 0.02
    sigma_effort: float = 0.1
    sigma_obj_xy_m: float = 0.002
    sigma_obj_z_m: float = 0.001
    spawn_box_m: tuple[float, float] = (0.08, 0.08)
    sim_dt_s: float = 1.0 / 60.0
    cube_width_m_range: tuple[float, float] = (0.03, 0.07)
    cube_depth_m_range: tuple[float, float] = (0.03, 0.07)
    cube_height_m_range: tuple[float, float] = (0.03, 0.07)

    def validate(self) -> list[str]:
        """Return field-naming error messages (empty when valid)."""
        errors = []
        for name in (
            "mass_kg_range",
            "friction_range",
            "kp_grip_range",
            "cube_width_m_range",
            "cube_depth_m_range",
            "cube_height_m_range",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                errors.append(f"{name}: lo {lo} > hi {hi}")
        for name in ("sigma_base", "sigma_pos_rad", "sigma_vel_radps",
                     "sigma_effort", "sigma_obj_xy_m", "sigma_obj_z_m"):
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be >= 0")
        if self.sim_dt_s <= 0:
            errors.append("sim_dt_s: must be positive")
        if min(self.spawn_box_m) < 0:
            errors.append("spawn_box_m: must be >= 0")
        return errors


#: Fault types with a signal-level injection under the declared plant.
INJECTABLE_FAULTS = (
    "additional_axis_payload",
    "unexpected_payload_weight",
    "gripper_release_mid_motion",
    "gripper_activation_failure",
    "invalid_gripping_position",
    "collision_foam_spike",
    "unstable_platform",
    "payload_weight_misconfiguration",
)


@dataclass(frozen=True)
class FaultCatalogEntry:
    fault_type: str
    description: str
    tasks: tuple[str, ...]
    injectable: bool


def _cat(fault_type, description, tasks, injectable=False):
    return FaultCatalogEntry(fault_type, description, tasks, injectable)


#: Full fault taxonomy (27 types). Only the injectable subset has a
#: signal-level analogue in the generator; the rest is carried as metadata.
FAULT_CATALOG: tuple[FaultCatalogEntry, ...] = (
    _cat("damaged_screw_thread", "screw thread damaged, no engagement", ("screwdriving",)),
    _cat("missing_screw", "tightening attempted with no screw", ("screwdriving",)),
    _cat("damaged_plate_thread", "threaded plate hole damaged", ("screwdriving",)),
    _cat("loosening_phase", "counterclockwise loosening replaces tightening", ("screwdriving",)),
    _cat("gripper_activation_failure", "gripper never activates, payload never picked",
         ("pick_and_place",), injectable=True),
    _cat("gripper_release_mid_motion", "payload released mid-trajectory",
         ("pick_and_place",), injectable=True),
    _cat("additional_axis_payload", "dead weight bolted to one link",
         ("pick_and_place", "screwdriving"), injectable=True),
    _cat("collision_foam_spike", "soft foam block in the TCP path",
         ("pick_and_place", "screwdriving", "peg_in_hole"), injectable=True),
    _cat("unexpected_payload_weight", "transported box heavier/lighter than nominal",
         ("pick_and_place",), injectable=True),
    _cat("invalid_gripping_position", "gripper closure lags the lift motion",
         ("pick_and_place",), injectable=True),
    _cat("unstable_platform", "base instability adds low-frequency vibration",
         ("pick_and_place",), injectable=True),
    _cat("joint_position_limit_violation", "waypoint beyond soft joint limit", ("pick_and_place",)),
    _cat("tcp_frame_misconfiguration", "TCP frame or mounting angle misconfigured",
         ("pick_and_place", "screwdriving", "peg_in_hole")),
    _cat("payload_weight_misconfiguration", "configured payload mass wrong while tool attached",
         ("pick_and_place", "screwdriving"), injectable=True),
    _cat("external_arm_disturbance", "continuous external force on the TCP",
         ("pick_and_place", "screwdriving", "peg_in_hole")),
    _cat("payload_cog_misconfiguration", "payload CoG offset wrong in controller",
         ("pick_and_place", "screwdriving", "peg_in_hole")),
    _cat("collision_hanging_cable", "loose cable drags along a link",
         ("pick_and_place", "screwdriving", "peg_in_hole")),
    _cat("collision_cardboard", "cardboard carton in the trajectory",
         ("pick_and_place", "screwdriving", "peg_in_hole")),
    _cat("collision_rigid_object", "rigid block triggers protective stop",
         ("pick_and_place", "screwdriving", "peg_in_hole")),
    _cat("peg_insertion_misalignment", "peg approaches hole at an offset", ("peg_in_hole",)),
    _cat("hole_obstruction", "debris in the hole blocks insertion", ("peg_in_hole",)),
    _cat("incorrect_insertion_depth", "insertion ends at wrong Z depth", ("peg_in_hole",)),
    _cat("peg_surface_contamination", "contaminated peg raises insertion friction", ("peg_in_hole",)),
    _cat("fixture_displacement", "hole fixture shifted without reprogramming", ("peg_in_hole",)),
    _cat("self_collision", "arm contacts its own body or mount", ("pick_and_place",)),
    _cat("missing_box", "box absent from the pick position", ("pick_and_place",)),
    _cat("missing_peg", "peg absent during insertion", ("peg_in_hole",)),
)


@dataclass(frozen=True)
class FaultDirective:
    """A fault type plus its injection magnitudes and onset."""

    fault_type: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EpisodeParams:
    """Concrete per-episode draw, reproducible from the seed."""

    seed: int
    episode_id: str
    mass_kg: float
    friction: float
    kp_grip: float
    cube_dims_m: tuple[float, float, float]
    spawn_offset_m: tuple[float, float]
    fault: Optional[FaultDirective] = None
    config: RandomizationConfig = field(default_factory=RandomizationConfig)

    def without_fault(self) -> "EpisodeParams":
        return replace(self, fault=None)


def _default_fault_params(fault_type: str, rng: np.random.Generator,
                          n_steps: int, phase_runs: dict) -> dict:
    """Deterministic default magnitudes for an injectable fault."""
    transfer_lo, transfer_hi = phase_runs["transfer"]
    if fault_type == "additional_axis_payload":
        return {
            "joint": int(rng.integers(1, 4)),
            "weight_kg": float(rng.uniform(0.4, 1.2)),
        }
    if fault_type == "unexpected_payload_weight":
        return {"scale": float(rng.uniform(1.5, 3.0))}
    if fault_type == "gripper_release_mid_motion":
        return {"onset_step": int(rng.integers(transfer_lo, transfer_hi))}
    if fault_type == "gripper_activation_failure":
        return {}
    if fault_type == "invalid_gripping_position":
        return {"delay_steps": int(rng.integers(10, 41))}
    if fault_type == "collision_foam_spike":
        return {
            "onset_step": int(rng.integers(transfer_lo, transfer_hi - 15)),
            "duration_s": 0.2,
            "peak_nm": 0.3,
            "n_joints": 3,
        }
    if fault_type == "unstable_platform":
        return {"freq_hz": 3.0, "amplitude_rad": 0.005}
    if fault_type == "payload_weight_misconfiguration":
        return {"configured_scale": float(rng.uniform(2.0, 4.0))}
    raise UnsupportedFault(fault_type)


def sample_params(
    seed: int,
    config: RandomizationConfig = RandomizationConfig(),
    fault: Optional[FaultDirective] = None,
    episode_id: Optional[str] = None,
) -> EpisodeParams:
    """Draw one episode's randomization values; deterministic in the seed.

    Base draws use a substream untouched by the fault directive, so the
    healthy twin (same seed, fault=None) gets identical values.  A fault
    directive with missing magnitudes is completed from defaults drawn on
    a separate substream.
    """
    errors = config.validate()
    if errors:
        raise SchemaViolation("; ".join(errors))

    rng = np.random.default_rng([seed, _STREAM_DRAWS])
    mass = float(rng.uniform(*config.mass_kg_range))
    friction = float(rng.uniform(*config.friction_range))
    kp_grip = float(rng.uniform(*config.kp_grip_range))
    dims = tuple(
        float(rng.uniform(*r))
        for r in (config.cube_width_m_range, config.cube_depth_m_range,
                  config.cube_height_m_range)
    )
    half_x, half_y = config.spawn_box_m[0] / 2.0, config.spawn_box_m[1] / 2.0
    offset = (float(rng.uniform(-half_x, half_x)), float(rng.uniform(-half_y, half_y)))

    if fault is not None:
        if fault.fault_type not in INJECTABLE_FAULTS:
            raise UnsupportedFault(fault.fault_type)
        n_steps, runs = _nominal_step_layout(config)
        fault_rng = np.random.default_rng([seed, _STREAM_FAULT])
        params = dict(_default_fault_params(fault.fault_type, fault_rng, n_steps, runs))
        params.update(fault.params)
        _check_fault_params(fault.fault_type, params, n_steps)
        fault = FaultDirective(fault.fault_type, params)

    return EpisodeParams(
        seed=seed,
        episode_id=episode_id or f"ep_{seed}",
        mass_kg=mass,
        friction=friction,
        kp_grip=kp_grip,
        cube_dims_m=dims,
        spawn_offset_m=offset,
        fault=fault,
        config=config,
    )


def _check_fault_params(fault_type: str, params: Mapping, n_steps: int) -> None:
    onset = params.get("onset_step")
    if onset is not None and not (0 <= int(onset) < n_steps):
        raise SchemaViolation(
            f"{fault_type}: onset_step {onset} outside episode of {n_steps} steps"
        )
    for key in ("weight_kg", "scale", "duration_s", "peak_nm",
                "freq_hz", "amplitude_rad", "configured_scale"):
        if key in params and params[key] <= 0:
            raise SchemaViolation(f"{fault_type}: {key} must be positive")


# ---------------------------------------------------------------------------
# trajectory planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePlan:
    """Exactly 10 (name, duration, per-joint waypoint) stages."""

    phases: tuple[tuple[str, float, tuple[float, ...]], ...]
    start_q: tuple[float, ...]

    def __post_init__(self):
        if len(self.phases) != 10:
            raise SchemaViolation(f"phase plan needs exactly 10 phases, got {len(self.phases)}")
        for name, duration, wp in self.phases:
            if duration <= 0:
                raise SchemaViolation(f"phase {name!r}: duration must be positive")
            if len(wp) != N_JOINTS:
                raise SchemaViolation(f"phase {name!r}: waypoint needs {N_JOINTS} joints")


@dataclass(frozen=True)
class TrajectoryPlan:
    """A phase plan sampled onto the simulation grid."""

    plan: PhasePlan
    t: np.ndarray
    phase: np.ndarray
    setpoint_pos: np.ndarray   # T x 6
    setpoint_vel: np.ndarray
    setpoint_acc: np.ndarray
    gripper_pos: np.ndarray    # T
    rate_hz: float

    @property
    def n_steps(self) -> int:
        return self.t.shape[0]

    def phase_runs(self) -> dict[str, tuple[int, int]]:
        """First/one-past-last step index per phase label."""
        runs: dict[str, tuple[int, int]] = {}
        labels = self.phase
        start = 0
        for i in range(1, len(labels) + 1):
            if i == len(labels) or labels[i] != labels[start]:
                runs[str(labels[start])] = (start, i)
                start = i
        return runs


def two_link_ik(x: float, y: float) -> tuple[float, float]:
    """Closed-form elbow-up IK of the planar surrogate linkage."""
    l1, l2 = LINK_LENGTHS_M
    r2 = x * x + y * y
    c1 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if not -1.0 <= c1 <= 1.0:
        raise InfeasibleProfile(f"target ({x:.3f}, {y:.3f}) outside linkage reach")
    q1 = math.acos(c1)
    q0 = math.atan2(y, x) - math.atan2(l2 * math.sin(q1), l1 + l2 * math.cos(q1))
    return q0, q1


def two_link_fk(q0: np.ndarray, q1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    l1, l2 = LINK_LENGTHS_M
    x = l1 * np.cos(q0) + l2 * np.cos(q0 + q1)
    y = l1 * np.sin(q0) + l2 * np.sin(q0 + q1)
    return x, y


def build_phase_plan(spawn_offset_m: tuple[float, float] = (0.0, 0.0)) -> PhasePlan:
    """Nominal 10-phase plan; the pick waypoints follow the spawn offset."""
    pick_x = PICK_XY_M[0] + spawn_offset_m[0]
    pick_y = PICK_XY_M[1] + spawn_offset_m[1]
    q0p, q1p = two_link_ik(pick_x, pick_y)
    q0l, q1l = two_link_ik(*PLACE_XY_M)

    high = (1.0, -0.4, 0.5, 0.0)      # joints 2..5, carry height
    low = (0.55, -0.2, 0.5, 0.0)      # joints 2..5, at the object
    high_pl = (1.0, -0.4, 0.5, 0.3)
    low_pl = (0.55, -0.2, 0.5, 0.3)

    waypoints = (
        ("approach", (q0p, q1p) + high),
        ("above_pick", (q0p, q1p, 0.9) + high[1:]),
        ("descend_pick", (q0p, q1p) + low),
        ("grasp", (q0p, q1p) + low),
        ("lift", (q0p, q1p) + high),
        ("transfer", (q0l, q1l) + high_pl),
        ("above_place", (q0l, q1l, 0.9) + high_pl[1:]),
        ("descend_place", (q0l, q1l) + low_pl),
        ("release", (q0l, q1l) + low_pl),
        ("return", HOME_Q),
    )
    phases = tuple(
        (name, dur, wp) for (name, wp), dur in zip(waypoints, PHASE_DURATIONS_S)
    )
    return PhasePlan(phases=phases, start_q=HOME_Q)


def _trapezoid_pos(tau: np.ndarray, duration: float, p0: float, p1: float) -> np.ndarray:
    """Closed-form rest-to-rest trapezoid (1/4 accel, 1/2 cruise, 1/4 decel)."""
    d = p1 - p0
    if d == 0.0:
        return np.full_like(tau, p0)
    ta = duration / 4.0
    vp = d / (duration - ta)
    a = vp / ta
    out = np.empty_like(tau)
    rise = tau < ta
    cruise = (tau >= ta) & (tau < duration - ta)
    fall = ~rise & ~cruise
    out[rise] = p0 + 0.5 * a * tau[rise] ** 2
    out[cruise] = p0 + 0.5 * a * ta * ta + vp * (tau[cruise] - ta)
    tr = duration - tau[fall]
    out[fall] = p1 - 0.5 * a * tr * tr
    return out


def _check_feasible(name: str, duration: float, displacement: float) -> None:
    if displacement == 0.0:
        return
    vp = abs(displacement) / (duration - duration / 4.0)
    a = vp / (duration / 4.0)
    if vp > VEL_CAP_RADPS:
        raise InfeasibleProfile(
            f"phase {name!r}: peak velocity {vp:.3f} exceeds cap {VEL_CAP_RADPS}"
        )
    if a > ACC_CAP_RADPS2:
        raise InfeasibleProfile(
            f"phase {name!r}: acceleration {a:.3f} exceeds cap {ACC_CAP_RADPS2}"
        )


def profiles_from_plan(plan: PhasePlan, rate_hz: float = 60.0) -> TrajectoryPlan:
    """Sample per-joint setpoint profiles from a phase plan.

    Positions are the closed-form trapezoids sampled on the grid;
    setpoint_vel is defined as the exact forward difference of
    setpoint_pos (and setpoint_acc of setpoint_vel), so discrete
    consistency is exact by construction.
    """
    dt = 1.0 / rate_hz
    total = sum(d for _, d, _ in plan.phases)
    n_steps = int(round(total * rate_hz)) + 1
    t = np.arange(n_steps) * dt

    pos = np.empty((n_steps, N_JOINTS))
    phase = np.empty(n_steps, dtype=object)
    grip = np.empty(n_steps)

    phase_start = 0.0
    prev_wp = np.asarray(plan.start_q, dtype=np.float64)
    grip_state = GRIPPER_OPEN_RAD
    for phase_idx, (name, duration, wp) in enumerate(plan.phases):
        wp = np.asarray(wp, dtype=np.float64)
        lo = phase_start - 1e-9
        hi = phase_start + duration - 1e-9
        is_last = phase_idx == len(plan.phases) - 1
        mask = (t >= lo) if is_last else (t >= lo) & (t < hi)
        tau = t[mask] - phase_start
        for j in range(N_JOINTS):
            _check_feasible(name, duration, float(wp[j] - prev_wp[j]))
            pos[mask, j] = _trapezoid_pos(tau, duration, float(prev_wp[j]), float(wp[j]))
        if name == "grasp":
            grip[mask] = _trapezoid_pos(tau, duration, grip_state, GRIPPER_CLOSED_RAD)
            grip_state = GRIPPER_CLOSED_RAD
        elif name == "release":
            grip[mask] = _trapezoid_pos(tau, duration, grip_state, GRIPPER_OPEN_RAD)
            grip_state = GRIPPER_OPEN_RAD
        else:
            grip[mask] = grip_state
        phase[mask] = name
        phase_start += duration
        prev_wp = wp

    vel = np.empty_like(pos)
    vel[:-1] = (pos[1:] - pos[:-1]) * rate_hz
    vel[-1] = vel[-2]
    acc = np.empty_like(pos)
    acc[:-1] = (vel[1:] - vel[:-1]) * rate_hz
    acc[-1] = acc[-2]

    return TrajectoryPlan(
        plan=plan,
        t=t,
        phase=np.asarray(phase, dtype=str),
        setpoint_pos=pos,
        setpoint_vel=vel,
        setpoint_acc=acc,
        gripper_pos=grip,
        rate_hz=rate_hz,
    )


def plan_trajectory(params: EpisodeParams) -> TrajectoryPlan:
    """Build the standard 10-phase plan for one episode's draw."""
    plan = build_phase_plan(params.spawn_offset_m)
    return profiles_from_plan(plan, 1.0 / params.config.sim_dt_s)


def _nominal_step_layout(config: RandomizationConfig) -> tuple[int, dict]:
    traj = profiles_from_plan(build_phase_plan(), 1.0 / config.sim_dt_s)
    return traj.n_steps, traj.phase_runs()


# ---------------------------------------------------------------------------
# plant simulation
# ---------------------------------------------------------------------------

def _track_second_order(
    setpoint: np.ndarray,
    wn: float,
    dt: float,
    disturbance: Optional[np.ndarray] = None,
    q0: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Propagate the critically damped tracking law exactly per step.

    With the setpoint (and optional disturbance) held constant over a step,
    the error dynamics e'' = -wn^2 e - 2 wn e' + d have the closed-form
    solution (C1 + C2 tau) exp(-wn tau) about the shifted equilibrium
    d/wn^2, which is evaluated directly; the integration is exact, not an
    Euler scheme.
    """
    n = setpoint.shape[0]
    q = np.empty(n)
    v = np.empty(n)
    a = np.empty(n)
    q[0] = setpoint[0] if q0 is None else q0
    v[0] = 0.0
    decay = math.exp(-wn * dt)
    for k in range(n - 1):
        d = 0.0 if disturbance is None else disturbance[k]
        a[k] = wn * wn * (setpoint[k] - q[k]) - 2.0 * wn * v[k] + d
        e = q[k] - setpoint[k] - d / (wn * wn)
        edot = v[k]
        c2 = edot + wn * e
        e_next = (e + c2 * dt) * decay
        edot_next = (edot - wn * c2 * dt) * decay
        q[k + 1] = setpoint[k] + d / (wn * wn) + e_next
        v[k + 1] = edot_next
        if abs(q[k + 1]) > 8.0 * math.pi or abs(v[k + 1]) > 100.0:
            raise NumericalInstability(
                f"state out of bounds at step {k + 1}: q={q[k + 1]:.3f}, v={v[k + 1]:.3f}"
            )
    d_last = 0.0 if disturbance is None else disturbance[n - 1]
    a[n - 1] = wn * wn * (setpoint[n - 1] - q[n - 1]) - 2.0 * wn * v[n - 1] + d_last
    return q, v, a


def _carry_mask(traj: TrajectoryPlan, attach_step: int, detach_step: int) -> np.ndarray:
    mask = np.zeros(traj.n_steps, dtype=bool)
    mask[attach_step:detach_step] = True
    return mask


def _synthetic_descriptors() -> tuple[ChannelDescriptor, ...]:
    descs: list[ChannelDescriptor] = []

    def add(name, role, unit, axis=None):
        descs.append(ChannelDescriptor(name, role, unit, axis))

    for kind, unit in (("pos", "rad"), ("vel", "rad/s"), ("acc", "rad/s^2")):
        for i in range(N_JOINTS):
            add(f"setpoint_{kind}_{i}", SignalRole.SETPOINT, unit, i)
    add("setpoint_gripper_pos", SignalRole.SETPOINT, "rad")
    for kind, unit in (("pos", "rad"), ("vel", "rad/s"), ("acc", "rad/s^2")):
        for i in range(N_JOINTS):
            add(f"feedback_{kind}_{i}", SignalRole.FEEDBACK, unit, i)
    add("feedback_gripper_pos", SignalRole.FEEDBACK, "rad")
    for i in range(N_JOINTS):
        add(f"effort_motor_torque_{i}", SignalRole.EFFORT, "Nm", i)
    for i in range(3):
        add(f"feedback_pos_cartesian_{i}", SignalRole.FEEDBACK, "m", i)
    for i in range(3, 6):
        add(f"feedback_pos_cartesian_{i}", SignalRole.FEEDBACK, "rad", i)
    for i, unit in enumerate(("m", "m", "m")):
        add(f"feedback_obj_pos_{i}", SignalRole.FEEDBACK, unit, i)
    add("ctx_gripper_attached", SignalRole.CONTEXT, "bool")
    add("ctx_cube_mass", SignalRole.CONTEXT, "kg")
    add("ctx_cube_friction", SignalRole.CONTEXT, "-")
    add("ctx_cube_width", SignalRole.CONTEXT, "m")
    add("ctx_cube_depth", SignalRole.CONTEXT, "m")
    add("ctx_cube_height", SignalRole.CONTEXT, "m")
    return tuple(descs)


SYNTH_DESCRIPTORS = _synthetic_descriptors()
SYNTH_CHANNEL_NAMES = tuple(d.canonical_name for d in SYNTH_DESCRIPTORS)
SYNTH_SOURCE_ID = "synth_ur5"


def _simulate(
    params: EpisodeParams,
    traj: TrajectoryPlan,
    directive: Optional[FaultDirective],
) -> Episode:
    cfg = params.config
    dt = cfg.sim_dt_s
    n = traj.n_steps
    runs = traj.phase_runs()
    fp = dict(directive.params) if directive is not None else {}
    ftype = directive.fault_type if directive is not None else None

    # payload attachment window: between the grasp and release phases
    attach_step = runs["lift"][0]
    detach_step = runs["release"][0]
    carried_mass = np.zeros(n)
    true_mass = params.mass_kg
    if ftype == "unexpected_payload_weight":
        true_mass = params.mass_kg * fp["scale"]
    if ftype == "gripper_activation_failure":
        attach_step = detach_step  # never attached
    if ftype == "invalid_gripping_position":
        attach_step = min(attach_step + int(fp["delay_steps"]), detach_step)
    carry = _carry_mask(traj, attach_step, detach_step)
    if ftype == "gripper_release_mid_motion":
        carry[int(fp["onset_step"]):] = False
    carried_mass[carry] = true_mass

    # controller's configured payload mass (feedforward side of the effort)
    configured_mass = carried_mass
    disturbance_scale = None
    if ftype == "payload_weight_misconfiguration":
        configured_mass = carried_mass * fp["configured_scale"]
        disturbance_scale = carried_mass - configured_mass  # uncompensated kg

    arms = np.asarray(GRAVITY_ARM_M)
    q_fb = np.empty((n, N_JOINTS))
    v_fb = np.empty((n, N_JOINTS))
    a_fb = np.empty((n, N_JOINTS))
    for j in range(N_JOINTS):
        wn = math.sqrt(JOINT_STIFFNESS[j])
        dist = None
        if disturbance_scale is not None and arms[j] > 0:
            # uncompensated gravity enters the tracking dynamics; the cos
            # term is evaluated on the setpoint path (declared simplification
            # that keeps the per-step ZOH propagation exact)
            dist = GRAVITY * arms[j] * disturbance_scale * np.cos(traj.setpoint_pos[:, j])
        q_fb[:, j], v_fb[:, j], a_fb[:, j] = _track_second_order(
            traj.setpoint_pos[:, j], wn, dt, disturbance=dist
        )

    # gripper feedback tracks an internal command that faults may alter
    grip_cmd = traj.gripper_pos.copy()
    if ftype == "gripper_activation_failure":
        grip_cmd[:] = GRIPPER_OPEN_RAD
    if ftype == "invalid_gripping_position":
        delay = int(fp["delay_steps"])
        shifted = np.concatenate([np.full(delay, grip_cmd[0]), grip_cmd[:-delay]]) \
            if delay > 0 else grip_cmd
        grip_cmd = shifted
    if ftype == "gripper_release_mid_motion":
        grip_cmd = grip_cmd.copy()
        grip_cmd[int(fp["onset_step"]):] = GRIPPER_OPEN_RAD
    wn_grip = math.sqrt(params.kp_grip * GRIPPER_STIFFNESS_SCALE)
    grip_fb, _, _ = _track_second_order(grip_cmd, wn_grip, dt)

    effort = K_TRACK * (traj.setpoint_pos - q_fb) + (
        GRAVITY * arms[None, :] * configured_mass[:, None] * np.cos(q_fb)
    )
    if ftype == "additional_axis_payload":
        j = int(fp["joint"])
        effort[:, j] += fp["weight_kg"] * GRAVITY * arms[j] * np.cos(q_fb[:, j])

    # TCP surrogate and object perception channels
    tcp_x, tcp_y = two_link_fk(q_fb[:, 0], q_fb[:, 1])
    tcp = np.column_stack([
        tcp_x, tcp_y, np.full(n, TCP_Z_M),
        np.zeros(n), np.zeros(n), q_fb[:, 0] + q_fb[:, 1],
    ])

    spawn = np.array([
        PICK_XY_M[0] + params.spawn_offset_m[0],
        PICK_XY_M[1] + params.spawn_offset_m[1],
        params.cube_dims_m[2] / 2.0,
    ])
    obj = np.tile(spawn, (n, 1))
    attached_steps = np.flatnonzero(carry)
    if attached_steps.size:
        obj[carry, 0] = tcp_x[carry]
        obj[carry, 1] = tcp_y[carry]
        obj[carry, 2] = TCP_Z_M
        last = attached_steps[-1]
        if last + 1 < n:
            obj[last + 1:, 0] = tcp_x[last]
            obj[last + 1:, 1] = tcp_y[last]
            obj[last + 1:, 2] = params.cube_dims_m[2] / 2.0

    const = np.ones(n)
    columns = [
        traj.setpoint_pos, traj.setpoint_vel, traj.setpoint_acc,
        traj.gripper_pos[:, None],
        q_fb, v_fb, a_fb,
        grip_fb[:, None],
        effort,
        tcp,
        obj,
        carry.astype(np.float64)[:, None],
        (const * params.mass_kg)[:, None],
        (const * params.friction)[:, None],
        (const * params.cube_dims_m[0])[:, None],
        (const * params.cube_dims_m[1])[:, None],
        (const * params.cube_dims_m[2])[:, None],
    ]
    channels = np.concatenate(columns, axis=1)

    # purely additive faults are applied on top of the simulated signals
    names = SYNTH_CHANNEL_NAMES
    if ftype == "unstable_platform":
        wobble = fp["amplitude_rad"] * np.sin(2.0 * math.pi * fp["freq_hz"] * traj.t)
        for i in range(N_JOINTS):
            channels[:, names.index(f"feedback_pos_{i}")] += wobble
    if ftype == "collision_foam_spike":
        onset = int(fp["onset_step"])
        n_pulse = max(2, int(round(fp["duration_s"] / dt)))
        end = min(onset + n_pulse, n)
        pulse = fp["peak_nm"] * np.sin(
            math.pi * np.arange(end - onset) / max(n_pulse - 1, 1)
        )
        for i in range(int(fp["n_joints"])):
            channels[onset:end, names.index(f"effort_motor_torque_{i}")] += pulse

    return Episode(
        episode_id=params.episode_id,
        source_id=SYNTH_SOURCE_ID,
        embodiment="ur5",
        task="pick_and_place",
        rate_hz=traj.rate_hz,
        t=traj.t,
        channels=channels,
        descriptors=SYNTH_DESCRIPTORS,
        phase=traj.phase,
        fault=ftype,
        healthy=ftype is None,
    )


def simulate_plant(params: EpisodeParams, traj: Optional[TrajectoryPlan] = None) -> Episode:
    """Simulate a noiseless healthy episode at the configured rate."""
    if traj is None:
        traj = plan_trajectory(params)
    return _simulate(params, traj, None)


def inject_fault(ep: Episode, params: EpisodeParams) -> Episode:
    """Apply the directive in *params* by re-simulating with modified terms.

    Only the platform sinusoid and the foam pulse are additive post-hoc
    edits; everything else changes plant/controller terms.  With no
    directive the input episode is returned unchanged.
    """
    if params.fault is None:
        return ep
    if params.fault.fault_type not in INJECTABLE_FAULTS:
        raise UnsupportedFault(params.fault.fault_type)
    traj = plan_trajectory(params)
    faulty = _simulate(params, traj, params.fault)
    return faulty.replace(episode_id=ep.episode_id)


_NOISE_FAMILIES = (
    # (channel names, sigma attribute)
    (tuple(f"feedback_pos_{i}" for i in range(N_JOINTS)), "sigma_pos_rad"),
    (tuple(f"feedback_vel_{i}" for i in range(N_JOINTS)), "sigma_vel_radps"),
    (tuple(f"effort_motor_torque_{i}" for i in range(N_JOINTS)), "sigma_effort"),
    (("feedback_obj_pos_0", "feedback_obj_pos_1"), "sigma_obj_xy_m"),
    (("feedback_obj_pos_2",), "sigma_obj_z_m"),
)


def add_sensor_noise(ep: Episode, params: EpisodeParams) -> Episode:
    """Add the per-family Gaussian sensor noise; deterministic in the seed.

    Setpoint and Context channels stay noiseless (commands and scene
    constants, not telemetry).  Standard-normal draws are consumed in a
    fixed channel order regardless of the sigma values, so twins share
    identical noise on every channel.
    """
    rng = np.random.default_rng([params.seed, _STREAM_NOISE])
    channels = np.array(ep.channels)
    for names, attr in _NOISE_FAMILIES:
        sigma = getattr(params.config, attr)
        for name in names:
            draw = rng.standard_normal(ep.n_steps)
            if sigma > 0 and ep.has_channel(name):
                channels[:, ep.channel_index(name)] += sigma * draw
    return ep.replace(channels=channels)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

def generate_episode(
    seed: int,
    config: RandomizationConfig = RandomizationConfig(),
    fault: Optional[FaultDirective] = None,
    episode_id: Optional[str] = None,
    noise: bool = True,
) -> Episode:
    params = sample_params(seed, config, fault, episode_id=episode_id)
    traj = plan_trajectory(params)
    ep = _simulate(params, traj, params.fault)
    if noise:
        ep = add_sensor_noise(ep, params)
    return ep


def generate_corpus(
    n_healthy: int,
    fault_mix: Mapping[str, int],
    seed0: int,
    config: RandomizationConfig = RandomizationConfig(),
    noise: bool = True,
) -> list[Episode]:
    """Generate a reproducible corpus; each faulty episode gets a healthy twin.

    The twin shares the faulty episode's seed (hence all randomization
    draws and noise) and carries the primary id plus a ``_twin`` suffix.
    """
    if n_healthy < 0 or any(c < 0 for c in fault_mix.values()):
        raise SchemaViolation("episode counts must be >= 0")
    episodes: list[Episode] = []
    idx = 0
    for _ in range(n_healthy):
        episodes.append(
            generate_episode(seed0 + idx, config, episode_id=f"ep_{idx:05d}", noise=noise)
        )
        idx += 1
    for fault_type in sorted(fault_mix):
        for _ in range(fault_mix[fault_type]):
            seed = seed0 + idx
            primary_id = f"ep_{idx:05d}"
            episodes.append(
                generate_episode(seed, config, FaultDirective(fault_type),
                                 episode_id=primary_id, noise=noise)
            )
            episodes.append(
                generate_episode(seed, config, episode_id=f"{primary_id}_twin", noise=noise)
            )
            idx += 1
    return episodes


# ---------------------------------------------------------------------------
# generation config files
# ---------------------------------------------------------------------------

def load_generation_config(path: Union[str, Path]) -> dict:
    """Load a generation config (ranges, counts, fault mix, seed) from YAML."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{path}: not a mapping")
    known = {f for f in RandomizationConfig.__dataclass_fields__}
    overrides = {}
    for key, value in (doc.get("randomization") or {}).items():
        if key not in known:
            raise SchemaViolation(f"{path}: unknown randomization field {key!r}")
        current = getattr(RandomizationConfig(), key)
        overrides[key] = tuple(value) if isinstance(current, tuple) else type(current)(value)
    config = RandomizationConfig(**overrides)
    errors = config.validate()
    if errors:
        raise SchemaViolation("; ".join(errors))
    return {
        "config": config,
        "n_healthy": int(doc.get("n_healthy", 0)),
        "fault_mix": {str(k): int(v) for k, v in (doc.get("fault_mix") or {}).items()},
        "seed": int(doc.get("seed", 0)),
    }
