"""Small deterministic continuous-control tasks.

Both environments follow the same ``reset(rng) / step(action)`` protocol and
clip actions to their box bounds internally, so agents can keep
differentiating through the unclipped action.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaclab._validation import check_dimension, check_positive
from gaclab.geometry import sample_uniform_sphere


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self):
        if self.observation_dim < 1 or self.action_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be below action_high")


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict


class _Env:
    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._needs_reset = True
        self.rng = None

    def seed(self, rng):
        self.rng = rng
        return self

    def clip(self, action):
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.spec.action_dim,):
            raise ValueError(f"action shape {action.shape}, expected ({self.spec.action_dim},)")
        return np.clip(action, self.spec.action_low, self.spec.action_high)

    def sample_action(self, rng):
        return rng.uniform(self.spec.action_low, self.spec.action_high)

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng
        if self.rng is None:
            raise RuntimeError("environment has no RNG; pass one to reset()")
        self._t = 0
        self._needs_reset = False
        return self._reset()

    def step(self, action):
        if self._needs_reset:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        self._t += 1
        res = self._step(self.clip(action))
        if not res.terminated and self._t >= self.spec.max_episode_steps:
            res.truncated = True
        self._needs_reset = res.terminated or res.truncated
        return res


class PointMass(_Env):
    """Move a point in [-1, 1]^d towards a random goal.

    Observation is ``(position, goal)``. Each step moves the point by
    ``0.1 * clip(action, -1, 1)`` and keeps it inside the arena; the reward
    is the negative distance to the goal.
    """

    step_size = 0.1
    goal_tolerance = 0.05

    def __init__(self, d=2, max_episode_steps=100):
        super().__init__()
        d = check_dimension(d)
        self.d = d
        self.spec = EnvSpec("point-mass", 2 * d, d, -np.ones(d), np.ones(d), max_episode_steps)
        self.pos = np.zeros(d)
        self.goal = np.zeros(d)

    def _obs(self):
        return np.concatenate([self.pos, self.goal])

    def distance(self):
        return float(np.linalg.norm(self.pos - self.goal))

    def _reset(self):
        self.pos = self.rng.uniform(-1.0, 1.0, self.d)
        self.goal = self.rng.uniform(-1.0, 1.0, self.d)
        return self._obs()

    def reset_to(self, pos, goal):
        """Start an episode from a given position and goal (for scripted checks)."""
        self._t = 0
        self._needs_reset = False
        self.pos = np.array(pos, dtype=np.float64)
        self.goal = np.array(goal, dtype=np.float64)
        return self._obs()

    def _step(self, action):
        self.pos = np.clip(self.pos + self.step_size * action, -1.0, 1.0)
        dist = self.distance()
        return StepResult(self._obs(), -dist, dist < self.goal_tolerance, False,
                          {"distance": dist})

    def scripted_action(self):
        """Proportional controller aiming to land exactly on the goal."""
        return np.clip((self.goal - self.pos) / self.step_size, -1.0, 1.0)


class DirectionalShell(_Env):
    """Match a random target direction with an action of norm ``r_star``.

    The observation is the target direction ``u``, redrawn every step. Reward
    is ``cos(a, u) - | ||a|| - r_star |``, maximized (value 1) by
    ``a = r_star * u``.
    """

    def __init__(self, d=3, r_star=1.0, max_episode_steps=50):
        super().__init__()
        d = check_dimension(d)
        self.d = d
        self.r_star = check_positive(r_star, "r_star")
        bound = np.full(d, self.r_star + 1.0)
        self.spec = EnvSpec("directional-shell", d, d, -bound, bound, max_episode_steps)
        self.target = np.zeros(d)

    def _reset(self):
        self.target = sample_uniform_sphere(self.d, self.rng)
        return self.target.copy()

    def reward(self, action):
        norm = np.linalg.norm(action)
        cos = float(action @ self.target / norm) if norm > 0 else 0.0
        return cos - abs(norm - self.r_star)

    def _step(self, action):
        r = self.reward(action)
        self.target = sample_uniform_sphere(self.d, self.rng)
        return StepResult(self.target.copy(), r, False, False, {})

    def scripted_action(self):
        return self.r_star * self.target


ENV_REGISTRY = {
    "point-mass": PointMass,
    "directional-shell": DirectionalShell,
}


def make_env(name, dim, **kwargs):
    """Build an environment from its registry name."""
    try:
        cls = ENV_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENV_REGISTRY)}") from None
    if cls is PointMass:
        kwargs.pop("r_star", None)
    return cls(dim, **kwargs)


def point_mass(d):
    return PointMass(d)


def directional_shell(d, r_star):
    return DirectionalShell(d, r_star)
