"""Deterministic MountainCar and Acrobot simulators with [0, 1] state scaling.

Both environments give a raw reward of -1 per step and 0 on the transition
that reaches the goal, so the normalized reward (raw + 1) is binary with rare
ones. MountainCar uses the two-action variant (force -1 or +1, no coast).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MOUNTAIN_CAR = "mountain_car"
ACROBOT = "acrobot"
ENV_KINDS = (MOUNTAIN_CAR, ACROBOT)

DEFAULT_MAX_EPISODE_STEPS = {MOUNTAIN_CAR: 10_000, ACROBOT: 500}

_MC_LOW = np.array([-1.2, -0.07])
_MC_HIGH = np.array([0.6, 0.07])
_MC_GOAL_POSITION = 0.5

_AB_MAX_VEL1 = 4.0 * math.pi
_AB_MAX_VEL2 = 9.0 * math.pi
_AB_LOW = np.array([-1.0, -1.0, -1.0, -1.0, -_AB_MAX_VEL1, -_AB_MAX_VEL2])
_AB_HIGH = np.array([1.0, 1.0, 1.0, 1.0, _AB_MAX_VEL1, _AB_MAX_VEL2])
_AB_DT = 0.2

_BOUNDS = {MOUNTAIN_CAR: (_MC_LOW, _MC_HIGH), ACROBOT: (_AB_LOW, _AB_HIGH)}

STATE_DIMS = {MOUNTAIN_CAR: 2, ACROBOT: 6}
ACTION_COUNTS = {MOUNTAIN_CAR: 2, ACROBOT: 3}


@dataclass(frozen=True)
class EnvState:
    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward_raw: float
    reward_normalized: float
    terminal: bool
    truncated: bool


@dataclass(frozen=True)
class EnvConfig:
    kind: str = MOUNTAIN_CAR
    max_episode_steps: int | None = None

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.max_episode_steps is not None and self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")

    @property
    def step_cap(self) -> int:
        if self.max_episode_steps is not None:
            return self.max_episode_steps
        return DEFAULT_MAX_EPISODE_STEPS[self.kind]


def normalize_state(raw, kind: str) -> np.ndarray:
    """Componentwise affine map of a raw state onto [0, 1]^d."""
    low, high = _BOUNDS[kind]
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != low.shape[0]:
        raise ValueError(f"state dim {raw.shape[-1]} != {low.shape[0]} for {kind}")
    if np.any(raw < low - 1e-9) or np.any(raw > high + 1e-9):
        raise ValueError(f"raw state {raw} outside declared bounds for {kind}")
    return np.clip((raw - low) / (high - low), 0.0, 1.0)


def denormalize_state(normalized, kind: str) -> np.ndarray:
    low, high = _BOUNDS[kind]
    normalized = np.asarray(normalized, dtype=np.float64)
    if normalized.shape[-1] != low.shape[0]:
        raise ValueError(f"state dim {normalized.shape[-1]} != {low.shape[0]} for {kind}")
    return low + normalized * (high - low)


def mountain_car_step(raw, action: int):
    """One tick of the classic dynamics; returns (next_raw, terminal)."""
    if action not in (0, 1):
        raise ValueError(f"mountain_car action must be 0 or 1, got {action}")
    force = -1.0 if action == 0 else 1.0
    x, v = float(raw[0]), float(raw[1])
    v = v + 0.001 * force - 0.0025 * math.cos(3.0 * x)
    v = min(max(v, -0.07), 0.07)
    x = x + v
    x = min(max(x, -1.2), 0.6)
    if x <= -1.2 and v < 0.0:
        v = 0.0
    return np.array([x, v]), x >= _MC_GOAL_POSITION


def _acrobot_derivatives(state4, torque):
    m1 = m2 = 1.0
    l1 = 1.0
    lc1 = lc2 = 0.5
    i1 = i2 = 1.0
    g = 9.8
    theta1, theta2, dtheta1, dtheta2 = state4
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2)
    phi1 = (-m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2)
    ddtheta2 = ((torque + d2 / d1 * phi1
                 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2)
                / (m2 * lc2**2 + i2 - d2**2 / d1))
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return np.array([dtheta1, dtheta2, ddtheta1, ddtheta2])


def _wrap_angle(x):
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def acrobot_step(state4, action: int):
    """RK4-integrate the two-link dynamics over one 0.2 s control step.

    `state4` is (theta1, theta2, dtheta1, dtheta2); returns
    (next_state4, terminal).
    """
    if action not in (0, 1, 2):
        raise ValueError(f"acrobot action must be 0, 1 or 2, got {action}")
    torque = float(action) - 1.0
    s = np.asarray(state4, dtype=np.float64)
    k1 = _acrobot_derivatives(s, torque)
    k2 = _acrobot_derivatives(s + 0.5 * _AB_DT * k1, torque)
    k3 = _acrobot_derivatives(s + 0.5 * _AB_DT * k2, torque)
    k4 = _acrobot_derivatives(s + _AB_DT * k3, torque)
    s = s + (_AB_DT / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    s[0] = _wrap_angle(s[0])
    s[1] = _wrap_angle(s[1])
    s[2] = min(max(s[2], -_AB_MAX_VEL1), _AB_MAX_VEL1)
    s[3] = min(max(s[3], -_AB_MAX_VEL2), _AB_MAX_VEL2)
    terminal = -math.cos(s[0]) - math.cos(s[0] + s[1]) > 1.0
    return s, terminal


def acrobot_observation(state4) -> np.ndarray:
    theta1, theta2, dtheta1, dtheta2 = state4
    return np.array([math.cos(theta1), math.sin(theta1),
                     math.cos(theta2), math.sin(theta2),
                     dtheta1, dtheta2])


class Environment:
    """Episodic wrapper around the pure dynamics: reset/step plus a step cap.

    Truncation at the cap never sets the terminal flag; a truncated episode
    must not be bootstrapped as if the goal had been reached.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.kind = config.kind
        self.state_dim = STATE_DIMS[config.kind]
        self.action_count = ACTION_COUNTS[config.kind]
        self.max_episode_steps = config.step_cap
        self._raw = None
        self._angles = None  # acrobot internal (theta1, theta2, w1, w2)
        self._steps = 0

    def _make_state(self, raw) -> EnvState:
        return EnvState(raw=raw, normalized=normalize_state(raw, self.kind))

    def reset(self, rng: np.random.Generator) -> EnvState:
        self._steps = 0
        if self.kind == MOUNTAIN_CAR:
            self._raw = np.array([rng.uniform(-0.6, -0.4), 0.0])
        else:
            self._angles = rng.uniform(-0.1, 0.1, size=4)
            self._raw = acrobot_observation(self._angles)
        return self._make_state(self._raw)

    def step(self, action: int) -> StepResult:
        if self._raw is None:
            raise RuntimeError("step() before reset()")
        if self.kind == MOUNTAIN_CAR:
            self._raw, terminal = mountain_car_step(self._raw, action)
        else:
            self._angles, terminal = acrobot_step(self._angles, action)
            self._raw = acrobot_observation(self._angles)
        self._steps += 1
        truncated = (not terminal) and self._steps >= self.max_episode_steps
        reward_raw = 0.0 if terminal else -1.0
        return StepResult(
            next_state=self._make_state(self._raw),
            reward_raw=reward_raw,
            reward_normalized=reward_raw + 1.0,
            terminal=bool(terminal),
            truncated=bool(truncated),
        )


def make_env(config: EnvConfig) -> Environment:
    return Environment(config)
