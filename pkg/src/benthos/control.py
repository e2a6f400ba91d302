"""Planar PD waypoint tracking over a first-order-lag vehicle model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .geometry import wrap_angle
from .world import Pose2D


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    u: float = 0.0  # surge, m/s
    v: float = 0.0  # sway, m/s
    r: float = 0.0  # yaw rate, rad/s


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 0.8
    kd: float = 0.4
    k_psi: float = 1.5
    k_r: float = 0.5

    def __post_init__(self):
        if min(self.kp, self.kd, self.k_psi, self.k_r) <= 0:
            raise ValueError("all gains must be positive")


@dataclass(frozen=True)
class ActuatorLimits:
    surge: float = 0.5
    sway: float = 0.5
    yaw_rate: float = 0.5


@dataclass(frozen=True)
class Tolerances:
    pos: float = 0.05
    yaw: float = math.radians(2.0)


@dataclass(frozen=True)
class VehicleModel:
    tau: float = 0.5
    dt: float = 0.05


@dataclass(frozen=True)
class Setpoint:
    x: float
    y: float
    yaw: float
    clipped: bool = False


@dataclass(frozen=True)
class NoiseConfig:
    """Odometry noise; all-zero sigmas give ground-truth passthrough."""

    pos_sigma: float = 0.0
    yaw_sigma: float = 0.0
    vel_sigma: float = 0.0
    bias_walk_sigma: float = 0.0
    seed: int = 0

    @property
    def is_zero(self) -> bool:
        return self.pos_sigma == self.yaw_sigma == self.vel_sigma == self.bias_walk_sigma == 0.0


def action_to_setpoint(state: VehicleState, action, bounds: Optional[Tuple[float, float, float, float]] = None) -> Setpoint:
    """Turn a discrete action into a pose setpoint.

    ``bounds`` is ``(xmin, ymin, xmax, ymax)``; a setpoint outside it is
    clipped and flagged.
    """
    p = state.pose
    if action.direction == "left":
        sp = Setpoint(p.x, p.y, wrap_angle(p.yaw + action.turn_angle))
    elif action.direction == "right":
        sp = Setpoint(p.x, p.y, wrap_angle(p.yaw - action.turn_angle))
    elif action.direction == "forward":
        sp = Setpoint(
            p.x + action.step_length * math.cos(p.yaw),
            p.y + action.step_length * math.sin(p.yaw),
            p.yaw,
        )
    else:
        sp = Setpoint(p.x, p.y, p.yaw)
    if bounds is not None:
        x = min(max(sp.x, bounds[0]), bounds[2])
        y = min(max(sp.y, bounds[1]), bounds[3])
        if x != sp.x or y != sp.y:
            sp = Setpoint(x, y, sp.yaw, clipped=True)
    return sp


def body_frame_error(state: VehicleState, setpoint: Setpoint) -> Tuple[float, float, float]:
    """World position error rotated into the vehicle frame, plus wrapped yaw error.

    The rotation uses the estimated heading, so ``e_p = R(yaw)^T (p* - p)``.
    """
    p = state.pose
    ex_w, ey_w = setpoint.x - p.x, setpoint.y - p.y
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return c * ex_w + s * ey_w, -s * ex_w + c * ey_w, wrap_angle(setpoint.yaw - p.yaw)


def _clamp(x: float, lim: float) -> float:
    return min(max(x, -lim), lim)


def pd_command(
    e_p: Tuple[float, float],
    yaw_err: float,
    state: VehicleState,
    gains: ControllerGains = ControllerGains(),
    limits: ActuatorLimits = ActuatorLimits(),
) -> Tuple[float, float, float]:
    u_c = gains.kp * e_p[0] - gains.kd * state.u
    v_c = gains.kp * e_p[1] - gains.kd * state.v
    r_c = gains.k_psi * yaw_err - gains.k_r * state.r
    return _clamp(u_c, limits.surge), _clamp(v_c, limits.sway), _clamp(r_c, limits.yaw_rate)


def simulate_tick(state: VehicleState, commands: Tuple[float, float, float], dt: float, tau: float = 0.5) -> VehicleState:
    """Advance one tick: exact first-order velocity lag, then pose integration."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    alpha = -math.expm1(-dt / tau)
    u = state.u + alpha * (commands[0] - state.u)
    v = state.v + alpha * (commands[1] - state.v)
    r = state.r + alpha * (commands[2] - state.r)
    p = state.pose
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    pose = Pose2D(p.x + (c * u - s * v) * dt, p.y + (s * u + c * v) * dt, p.yaw + r * dt, p.z)
    return VehicleState(pose, u, v, r)


class OdometryEstimator:
    """Noisy odometry stand-in for the onboard state observer.

    Pose carries white noise plus a random-walk bias; velocities carry white
    noise. On a commanded stop the velocity estimate is pinned to zero.
    """

    def __init__(self, noise: NoiseConfig = NoiseConfig()):
        self.noise = noise
        self.rng = np.random.default_rng(noise.seed)
        self.bias = [0.0, 0.0, 0.0]

    def estimate(self, true_state: VehicleState, stopped: bool = False) -> VehicleState:
        n = self.noise
        if n.is_zero:
            est = true_state
        else:
            g = self.rng.standard_normal(9)
            self.bias = [b + n.bias_walk_sigma * g[i] for i, b in enumerate(self.bias)]
            p = true_state.pose
            pose = Pose2D(
                p.x + self.bias[0] + n.pos_sigma * g[3],
                p.y + self.bias[1] + n.pos_sigma * g[4],
                p.yaw + self.bias[2] + n.yaw_sigma * g[5],
                p.z,
            )
            est = VehicleState(
                pose,
                true_state.u + n.vel_sigma * g[6],
                true_state.v + n.vel_sigma * g[7],
                true_state.r + n.vel_sigma * g[8],
            )
        if stopped:
            est = replace(est, u=0.0, v=0.0, r=0.0)
        return est


def estimate_state(true_state: VehicleState, estimator: OdometryEstimator, stopped: bool = False) -> VehicleState:
    return estimator.estimate(true_state, stopped)


@dataclass
class TrackResult:
    state: VehicleState
    ticks: int
    success: bool
    collided: bool = False
    telemetry: List[Tuple[float, float, float]] = field(default_factory=list)


def track_to_setpoint(
    state: VehicleState,
    setpoint: Setpoint,
    gains: ControllerGains = ControllerGains(),
    limits: ActuatorLimits = ActuatorLimits(),
    tolerances: Tolerances = Tolerances(),
    budget: int = 2000,
    model: VehicleModel = VehicleModel(),
    estimator: Optional[OdometryEstimator] = None,
    collides: Optional[Callable[[float, float], bool]] = None,
    record: bool = False,
) -> TrackResult:
    """Close the estimate -> error -> PD -> plant loop until within tolerance.

    ``collides(x, y)`` is consulted after every tick; on contact the vehicle
    is put back at its last free pose with zero velocity and tracking stops.
    """
    if budget <= 0:
        raise ValueError("tick budget must be positive")
    telemetry: List[Tuple[float, float, float]] = []
    ticks = 0
    while True:
        est = estimator.estimate(state) if estimator is not None else state
        ex, ey, eyaw = body_frame_error(est, setpoint)
        if math.hypot(ex, ey) < tolerances.pos and abs(eyaw) < tolerances.yaw:
            return TrackResult(state, ticks, True, False, telemetry)
        if ticks >= budget:
            return TrackResult(state, ticks, False, False, telemetry)
        cmd = pd_command((ex, ey), eyaw, est, gains, limits)
        nxt = simulate_tick(state, cmd, model.dt, model.tau)
        ticks += 1
        if collides is not None and collides(nxt.pose.x, nxt.pose.y):
            halted = VehicleState(state.pose, 0.0, 0.0, 0.0)
            return TrackResult(halted, ticks, False, True, telemetry)
        state = nxt
        if record:
            telemetry.append((state.pose.x, state.pose.y, state.pose.yaw))
