"""Partially observable control problems: Monsoon World and Frost Hollow.

Both are deterministic continuing tasks. ``info`` carries the hidden state
for logging and for the oracle baseline; learners never see it otherwise.
"""
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    info: dict = field(default_factory=dict)


class MonsoonWorld:
    """Four-phase season cycle; the agent waters (1) or does not water (0).

    Phases ``0 .. drought_steps-1`` are drought, the rest monsoon. The right
    action pays 1 and the observation is ``[growth, 1]`` where growth is the
    reward just produced.
    """

    NO_WATER, WATER = 0, 1
    num_actions = 2
    obs_dim = 2

    def __init__(self, drought_steps: int = 2, monsoon_steps: int = 2):
        if drought_steps < 1 or monsoon_steps < 1:
            raise ConfigurationError("each season needs at least one step")
        self.drought_steps = drought_steps
        self.monsoon_steps = monsoon_steps
        self.cycle = drought_steps + monsoon_steps
        self.phase = 0

    def is_drought(self, phase=None):
        return (self.phase if phase is None else phase) < self.drought_steps

    def reset(self) -> StepResult:
        self.phase = 0
        return StepResult(np.array([0.0, 1.0]), 0.0, self._info())

    def _info(self):
        return {"phase": self.phase, "drought": self.is_drought()}

    def step(self, a: int) -> StepResult:
        if a not in (0, 1):
            raise ConfigurationError(f"invalid Monsoon action {a!r}")
        wants_water = self.is_drought()
        reward = 1.0 if (a == self.WATER) == wants_water else 0.0
        self.phase = (self.phase + 1) % self.cycle
        return StepResult(np.array([reward, 1.0]), reward, self._info())

    def oracle_policy(self):
        return self.WATER if self.is_drought() else self.NO_WATER

    def min_steps_to_reward(self):
        # the season of the first step is fixed, so the right first action pays
        return 1


class FrostHollow:
    """Linear walk with a fire in the centre and shelters at both ends.

    Each step: move (clamped), then if the hazard is active and the agent is
    outside a shelter it loses all heat, otherwise standing on the fire adds
    one unit. Reaching the threshold pays 1 and empties the heat store.
    The observation is ``[one-hot position, hazard bit, heat / threshold]``;
    the hazard bit reports the hazard of the step just resolved.
    """

    LEFT, RIGHT, STAY = 0, 1, 2
    num_actions = 3

    def __init__(self, walk_length: int = 7, hazard_period: int = 8,
                 hazard_duration: int = 2, heat_threshold: int = 12,
                 start_position: int | None = None, start_clock: int = 0):
        if walk_length < 3 or walk_length % 2 == 0:
            raise ConfigurationError("walk_length must be odd and >= 3")
        if not 0 <= hazard_duration < hazard_period:
            raise ConfigurationError("hazard_duration must lie in [0, hazard_period)")
        self.walk_length = walk_length
        self.hazard_period = hazard_period
        self.hazard_duration = hazard_duration
        self.heat_threshold = heat_threshold
        self.fire = walk_length // 2
        self.shelters = (0, walk_length - 1)
        self.start_position = self.fire if start_position is None else start_position
        self.start_clock = start_clock % hazard_period
        self.obs_dim = walk_length + 2
        self.position = self.start_position
        self.heat = 0
        self.clock = self.start_clock
        self.hazard = False

    def hazard_active(self, clock=None):
        c = self.clock if clock is None else clock
        return c >= self.hazard_period - self.hazard_duration

    def transition(self, position, heat, clock, a):
        """Pure dynamics: returns ``(position, heat, clock, reward, hazard)``."""
        if a == self.LEFT:
            position = max(position - 1, 0)
        elif a == self.RIGHT:
            position = min(position + 1, self.walk_length - 1)
        hazard = self.hazard_active(clock)
        reward = 0.0
        if hazard and position not in self.shelters:
            heat = 0
        elif position == self.fire:
            heat += 1
            if heat >= self.heat_threshold:
                reward = 1.0
                heat = 0
        return position, heat, (clock + 1) % self.hazard_period, reward, hazard

    def observe(self):
        obs = np.zeros(self.obs_dim)
        obs[self.position] = 1.0
        obs[self.walk_length] = 1.0 if self.hazard else 0.0
        obs[self.walk_length + 1] = self.heat / self.heat_threshold
        return obs

    def _info(self):
        return {"position": self.position, "heat": self.heat, "clock": self.clock}

    def reset(self) -> StepResult:
        self.position = self.start_position
        self.heat = 0
        self.clock = self.start_clock
        self.hazard = False
        return StepResult(self.observe(), 0.0, self._info())

    def step(self, a: int) -> StepResult:
        if a not in (0, 1, 2):
            raise ConfigurationError(f"invalid Frost Hollow action {a!r}")
        self.position, self.heat, self.clock, reward, self.hazard = self.transition(
            self.position, self.heat, self.clock, a)
        return StepResult(self.observe(), reward, self._info())

    def min_steps_to_reward(self, max_steps: int = 100_000):
        """Fewest steps from reset to the first reward under optimal play.

        Forward recursion over time keeping, per position, only the largest
        heat reachable: more heat never hurts (a gust empties any amount and
        the fire adds one to any amount), so the best-heat frontier is exact.
        """
        clock = self.start_clock
        best = {self.start_position: 0}
        for t in range(1, max_steps + 1):
            nxt = {}
            for pos, heat in best.items():
                for a in (self.LEFT, self.RIGHT, self.STAY):
                    p, h, _, reward, _ = self.transition(pos, heat, clock, a)
                    if reward:
                        return t
                    if h > nxt.get(p, -1):
                        nxt[p] = h
            best = nxt
            clock = (clock + 1) % self.hazard_period
        raise RuntimeError("heat threshold unreachable within max_steps")


def min_steps_to_reward(env) -> int:
    return env.min_steps_to_reward()


ENVIRONMENTS = {"monsoon": MonsoonWorld, "frosthollow": FrostHollow}


def make_env(env_id: str, **params):
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise ConfigurationError(f"unknown environment {env_id!r}") from None
    return cls(**params)
