"""Simplified deterministic 2D lander.

Flat terrain, pad centered at x = 0.  All physics constants live in
:class:`LanderConfig` so tests and reports are constant-relative.  The state
serializes as a 10-entry vector: position (2), velocity (2), angle, angular
velocity, leg contacts (2), and which engine fired on the step that produced
the state (2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .core import RunSeed
from .errors import SteppedTerminal


class LanderAction(Enum):
    NOOP = 0
    FIRE_LEFT = 1
    FIRE_MAIN = 2
    FIRE_RIGHT = 3


class LanderOutcome(Enum):
    RUNNING = "running"
    LANDED = "landed"
    CRASHED = "crashed"
    OUT_OF_BOUNDS = "out_of_bounds"

    @property
    def terminal(self) -> bool:
        return self is not LanderOutcome.RUNNING


@dataclass(frozen=True)
class LanderConfig:
    gravity: float = -0.0025          # units/step^2 on vel_y
    main_thrust: float = 0.006       # along the lander's up axis
    side_thrust: float = 0.0015      # lateral, opposite the fired side
    side_torque: float = 0.003       # rad/step angular impulse
    leg_offset: float = 0.05         # lateral leg offset from the hull center
    pad_half_width: float = 0.2
    land_speed_limit: float = 0.05
    land_angle_limit: float = 0.1
    out_of_bounds_x: float = 1.5
    max_episode_steps: int = 2000

    def to_json(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = LanderConfig()

STATE_FIELDS = (
    "pos_x", "pos_y", "vel_x", "vel_y", "angle", "angular_vel",
    "left_contact", "right_contact", "main_fired", "side_fired",
)


@dataclass(frozen=True)
class LanderState:
    pos_x: float
    pos_y: float
    vel_x: float
    vel_y: float
    angle: float
    angular_vel: float
    left_contact: bool = False
    right_contact: bool = False
    main_fired: bool = False
    side_fired: bool = False

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.pos_x, self.pos_y, self.vel_x, self.vel_y,
                self.angle, self.angular_vel,
                float(self.left_contact), float(self.right_contact),
                float(self.main_fired), float(self.side_fired),
            ],
            dtype=np.float64,
        )

    def to_json(self) -> dict:
        vec = self.vector()
        out = {}
        for name, value in zip(STATE_FIELDS, vec):
            out[name] = bool(value) if name in STATE_FIELDS[6:] else float(value)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LanderState":
        kwargs = {name: obj[name] for name in STATE_FIELDS}
        for name in STATE_FIELDS[6:]:
            kwargs[name] = bool(kwargs[name])
        return cls(**kwargs)


def reset(seed: RunSeed) -> LanderState:
    """Seeded start above the pad with a small random velocity impulse."""
    rng = seed.generator()
    pos_x = float(rng.uniform(-0.4, 0.4))
    pos_y = float(rng.uniform(1.2, 1.4))
    speed = float(rng.uniform(0.0, 0.05))
    heading = float(rng.uniform(0.0, 2.0 * math.pi))
    return LanderState(
        pos_x=pos_x,
        pos_y=pos_y,
        vel_x=speed * math.cos(heading),
        vel_y=speed * math.sin(heading),
        angle=0.0,
        angular_vel=0.0,
    )


def _outcome(s: LanderState, cfg: LanderConfig) -> LanderOutcome:
    if abs(s.pos_x) > cfg.out_of_bounds_x:
        return LanderOutcome.OUT_OF_BOUNDS
    if s.left_contact or s.right_contact:
        speed = math.hypot(s.vel_x, s.vel_y)
        gentle = speed < cfg.land_speed_limit and abs(s.angle) < cfg.land_angle_limit
        if s.left_contact and s.right_contact:
            return LanderOutcome.LANDED if gentle else LanderOutcome.CRASHED
        if not gentle:
            return LanderOutcome.CRASHED
    return LanderOutcome.RUNNING


def step(
    s: LanderState,
    a: LanderAction,
    cfg: LanderConfig = DEFAULT_CONFIG,
) -> tuple[LanderState, LanderOutcome]:
    """Semi-implicit Euler update; pure function of (state, action)."""
    if _outcome(s, cfg).terminal:
        raise SteppedTerminal("episode already terminal")

    ax = 0.0
    ay = cfg.gravity
    torque = 0.0
    main_fired = a is LanderAction.FIRE_MAIN
    side_fired = a in (LanderAction.FIRE_LEFT, LanderAction.FIRE_RIGHT)
    if main_fired:
        # up axis of a hull tilted by angle (counterclockwise positive)
        ax += -math.sin(s.angle) * cfg.main_thrust
        ay += math.cos(s.angle) * cfg.main_thrust
    elif a is LanderAction.FIRE_LEFT:
        # left engine pushes the hull to its right
        ax += math.cos(s.angle) * cfg.side_thrust
        ay += math.sin(s.angle) * cfg.side_thrust
        torque += cfg.side_torque
    elif a is LanderAction.FIRE_RIGHT:
        ax += -math.cos(s.angle) * cfg.side_thrust
        ay += -math.sin(s.angle) * cfg.side_thrust
        torque += -cfg.side_torque

    vel_x = s.vel_x + ax
    vel_y = s.vel_y + ay
    pos_x = s.pos_x + vel_x
    pos_y = s.pos_y + vel_y
    angular_vel = s.angular_vel + torque
    angle = s.angle + angular_vel

    left_contact = pos_y - cfg.leg_offset * math.sin(angle) <= 0.0
    right_contact = pos_y + cfg.leg_offset * math.sin(angle) <= 0.0
    if left_contact or right_contact:
        # rest on the ground instead of tunnelling below it
        pos_y = max(pos_y, 0.0) if not (left_contact and right_contact) else 0.0

    nxt = LanderState(
        pos_x=pos_x, pos_y=pos_y, vel_x=vel_x, vel_y=vel_y,
        angle=angle, angular_vel=angular_vel,
        left_contact=left_contact, right_contact=right_contact,
        main_fired=main_fired, side_fired=side_fired,
    )
    return nxt, _outcome(nxt, cfg)


def mirror_state(s: LanderState) -> LanderState:
    return LanderState(
        pos_x=-s.pos_x, pos_y=s.pos_y, vel_x=-s.vel_x, vel_y=s.vel_y,
        angle=-s.angle, angular_vel=-s.angular_vel,
        left_contact=s.right_contact, right_contact=s.left_contact,
        main_fired=s.main_fired, side_fired=s.side_fired,
    )


def mirror_action(a: LanderAction) -> LanderAction:
    if a is LanderAction.FIRE_LEFT:
        return LanderAction.FIRE_RIGHT
    if a is LanderAction.FIRE_RIGHT:
        return LanderAction.FIRE_LEFT
    return a


def scripted_move(s: LanderState, cfg: LanderConfig = DEFAULT_CONFIG) -> LanderAction:
    """Rule-based descent controller; lands reliably from reset states.

    Tracks a tilt target proportional to lateral offset and velocity, then
    arbitrates the single engine slot by priority: emergency braking when the
    descent badly exceeds the allowed profile, side engines to track the tilt
    target, main engine to hold the descent profile, and main engine again to
    push toward the pad while tilted (lateral thrust needs the main engine;
    symmetric side firings cancel out).
    """
    x, y = s.pos_x, s.pos_y
    vx, vy = s.vel_x, s.vel_y
    # Tilt limit shrinks near the ground so touchdown is upright.
    lim = min(0.25, 0.6 * max(0.0, y - 0.3))
    tilt_target = max(-lim, min(lim, 0.8 * x + 15.0 * vx))
    # Lead the angle by the rotation a side engine needs to cancel.
    ang_err = tilt_target - (s.angle + 12.0 * s.angular_vel)
    v_allow = 0.012 + 0.025 * max(y, 0.0)
    if vy < -(v_allow + 0.01):
        return LanderAction.FIRE_MAIN
    if abs(ang_err) > 0.03:
        return LanderAction.FIRE_LEFT if ang_err > 0 else LanderAction.FIRE_RIGHT
    if vy < -v_allow:
        return LanderAction.FIRE_MAIN
    drift = x + 15.0 * vx
    if y > 0.4 and abs(drift) > 0.3 and abs(s.angle) > 0.05 \
            and s.angle * drift > 0 and vy < 0.05:
        return LanderAction.FIRE_MAIN
    return LanderAction.NOOP
