"""General value functions learned online by importance-sampled TD(lambda).

A GVF is a question (cumulant, discount, target policy) plus a linear
answer ``v = nu . s_nu`` over its own feature vector ``s_nu``. The feature
vector comes from a :class:`Representation`, which may keep a short memory
of the experience stream.
"""
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError


class CoverageError(RuntimeError):
    """The behaviour policy gave zero probability to the action it took."""


# --------------------------------------------------------------------------
# GVF-state representations
# --------------------------------------------------------------------------

class Representation:
    dim: int

    def reset(self):
        pass

    def observe(self, obs, action=None) -> np.ndarray:
        raise NotImplementedError


class IdentityRepr(Representation):
    def __init__(self, obs_dim):
        self.dim = obs_dim

    def observe(self, obs, action=None):
        return np.array(obs, dtype=np.float64)


class ObsAggregation(Representation):
    """One-hot over the joint value of some binary observation entries."""

    def __init__(self, indices=(0,)):
        self.indices = tuple(indices)
        self.dim = 2 ** len(self.indices)

    def observe(self, obs, action=None):
        code = 0
        for i in self.indices:
            code = 2 * code + (1 if obs[i] > 0.5 else 0)
        s = np.zeros(self.dim)
        s[code] = 1.0
        return s


class HistoryAggregation(Representation):
    """One-hot over the last ``length`` (action, binary observation) pairs.

    Emits all zeros until ``length`` actions have been seen.
    """

    def __init__(self, num_actions, length=2, obs_index=0):
        self.num_actions = num_actions
        self.length = length
        self.obs_index = obs_index
        self.base = 2 * num_actions
        self.dim = self.base ** length
        self.pairs = []

    def reset(self):
        self.pairs = []

    def observe(self, obs, action=None):
        if action is not None:
            bit = 1 if obs[self.obs_index] > 0.5 else 0
            self.pairs.append(2 * int(action) + bit)
            if len(self.pairs) > self.length:
                self.pairs.pop(0)
        s = np.zeros(self.dim)
        if len(self.pairs) == self.length:
            code = 0
            for p in self.pairs:
                code = code * self.base + p
            s[code] = 1.0
        return s


class BitCascade(Representation):
    """Time since the last hazard onset, one bin per step of the period,
    followed by the raw hazard bit. All zeros before the first onset.
    """

    def __init__(self, period=8, hazard_index=7):
        self.period = period
        self.hazard_index = hazard_index
        self.dim = period + 1
        self.reset()

    def reset(self):
        self.since_onset = None
        self.prev_bit = 0

    def step(self, hazard_bit):
        bit = 1 if hazard_bit > 0.5 else 0
        if bit and not self.prev_bit:
            self.since_onset = 0
        elif self.since_onset is not None:
            self.since_onset += 1
        self.prev_bit = bit
        s = np.zeros(self.dim)
        if self.since_onset is not None and self.since_onset < self.period:
            s[self.since_onset] = 1.0
        s[self.period] = bit
        return s

    def observe(self, obs, action=None):
        return self.step(obs[self.hazard_index])


def bit_cascade(hazard_bits, period=8):
    """Feature vector after feeding a whole hazard-bit history."""
    bc = BitCascade(period=period, hazard_index=0)
    s = np.zeros(bc.dim)
    for b in hazard_bits:
        s = bc.step(b)
    return s


def make_representation(name, obs_dim, num_actions, **params) -> Representation:
    if name == "identity":
        return IdentityRepr(obs_dim)
    if name == "agg":
        return ObsAggregation(**params)
    if name == "history":
        return HistoryAggregation(num_actions, **params)
    if name == "bit-cascade":
        return BitCascade(**params)
    raise ConfigurationError(f"unknown GVF representation {name!r}")


def gvf_state(obs, repr: Representation, action=None):
    return repr.observe(obs, action)


# --------------------------------------------------------------------------
# Question components
# --------------------------------------------------------------------------

@dataclass
class EventCumulant:
    """1 when the event fires, else 0. ``source`` is "reward" or an obs index."""
    source: object = "reward"

    def __call__(self, obs, reward):
        x = reward if self.source == "reward" else obs[int(self.source)]
        return 1.0 if x >= 1.0 else 0.0

    def to_config(self):
        return {"kind": "event", "source": self.source}


@dataclass
class ObsCumulant:
    index: int

    def __call__(self, obs, reward):
        return float(obs[self.index])

    def to_config(self):
        return {"kind": "obs", "index": self.index}


@dataclass
class EchoDiscount:
    """Terminates (0) on the step the cumulant fires, continues otherwise."""
    gamma: float = 0.9

    def __call__(self, c):
        return 0.0 if c >= 1.0 else self.gamma

    def grad(self, c):
        return 0.0

    @property
    def max_gamma(self):
        return self.gamma

    def to_config(self):
        return {"kind": "echo", "gamma": self.gamma}


@dataclass
class SoftEchoDiscount:
    """Echo termination for a graded cumulant in [0, 1]: ``gamma * (1 - c)``.

    Agrees with :class:`EchoDiscount` whenever the cumulant is 0 or 1.
    """
    gamma: float = 0.9

    def __call__(self, c):
        return self.gamma * (1.0 - min(max(c, 0.0), 1.0))

    def grad(self, c):
        """d(discount)/dc."""
        return -self.gamma if 0.0 < c < 1.0 else 0.0

    @property
    def max_gamma(self):
        return self.gamma

    def to_config(self):
        return {"kind": "soft-echo", "gamma": self.gamma}


@dataclass
class ConstantDiscount:
    gamma: float = 0.9

    def __call__(self, c):
        return self.gamma

    def grad(self, c):
        return 0.0

    @property
    def max_gamma(self):
        return self.gamma

    def to_config(self):
        return {"kind": "constant", "gamma": self.gamma}


@dataclass
class FixedPolicy:
    probs: tuple

    def __call__(self):
        return np.asarray(self.probs, dtype=np.float64)

    def to_config(self):
        return {"kind": "fixed", "probs": list(self.probs)}


@dataclass
class GvfSpec:
    """A prediction question and its learning-rule hyperparameters.

    ``policy=None`` means on-policy (rho is always 1).
    """
    cumulant: object
    discount: object
    policy: object = None
    trace_decay: float = 0.0
    learning_rate: float = 0.1

    def to_config(self):
        return {
            "cumulant": self.cumulant.to_config(),
            "discount": self.discount.to_config(),
            "policy": {"kind": "on-policy"} if self.policy is None else self.policy.to_config(),
            "trace_decay": self.trace_decay,
            "learning_rate": self.learning_rate,
        }


def cumulant_from_config(cfg):
    kind = cfg["kind"]
    if kind == "event":
        return EventCumulant(cfg.get("source", "reward"))
    if kind == "obs":
        return ObsCumulant(int(cfg["index"]))
    if kind == "meta":
        from .meta import MetaCumulant
        return MetaCumulant.from_config(cfg)
    raise ConfigurationError(f"unknown cumulant kind {kind!r}")


def discount_from_config(cfg):
    kind = cfg["kind"]
    if kind == "echo":
        return EchoDiscount(float(cfg.get("gamma", 0.9)))
    if kind == "soft-echo":
        return SoftEchoDiscount(float(cfg.get("gamma", 0.9)))
    if kind == "constant":
        return ConstantDiscount(float(cfg.get("gamma", 0.9)))
    raise ConfigurationError(f"unknown discount kind {kind!r}")


def policy_from_config(cfg):
    kind = cfg["kind"]
    if kind == "on-policy":
        return None
    if kind == "fixed":
        return FixedPolicy(tuple(float(p) for p in cfg["probs"]))
    if kind == "meta":
        from .meta import MetaPolicy
        return MetaPolicy.from_config(cfg)
    raise ConfigurationError(f"unknown policy kind {kind!r}")


def spec_from_config(cfg) -> GvfSpec:
    return GvfSpec(
        cumulant=cumulant_from_config(cfg["cumulant"]),
        discount=discount_from_config(cfg["discount"]),
        policy=policy_from_config(cfg.get("policy", {"kind": "on-policy"})),
        trace_decay=float(cfg.get("trace_decay", 0.0)),
        learning_rate=float(cfg.get("learning_rate", 0.1)),
    )


def echo_expert_pair(learning_rate=0.1, trace_decay=0.0, gamma=0.9):
    """The two Monsoon echo GVFs: time until watering (and not watering) pays."""
    make = lambda probs: GvfSpec(EventCumulant("reward"), EchoDiscount(gamma),
                                 FixedPolicy(probs), trace_decay, learning_rate)
    return [make((0.0, 1.0)), make((1.0, 0.0))]


# --------------------------------------------------------------------------
# Learning
# --------------------------------------------------------------------------

@dataclass
class PredictionState:
    nu: np.ndarray
    trace: np.ndarray
    value: float = 0.0
    # trace before the importance weight, gamma*lambda*e + s; feeds the
    # policy-head sensitivity
    pre_rho_trace: np.ndarray = None

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim), np.zeros(dim), 0.0, np.zeros(dim))


def predict(ps: PredictionState, s_nu) -> float:
    if s_nu.shape[0] != ps.nu.shape[0]:
        raise ConfigurationError(
            f"GVF state has length {s_nu.shape[0]}, weights have {ps.nu.shape[0]}")
    ps.value = float(ps.nu @ s_nu)
    return ps.value


def importance_ratio(pi_a: float, mu_a: float) -> float:
    if mu_a <= 0.0:
        raise CoverageError(f"behaviour probability {mu_a} for the taken action")
    return pi_a / mu_a


def gvf_update(ps: PredictionState, alpha, trace_decay, s_nu, s_nu_next,
               c, gamma, gamma_next, rho):
    """One TD(lambda) step with per-decision importance sampling.

    ``gamma`` discounts the trace (continuation at ``s_nu``), ``gamma_next``
    the bootstrap. Returns ``(delta, rho)``.
    """
    delta = c + gamma_next * float(ps.nu @ s_nu_next) - float(ps.nu @ s_nu)
    z = gamma * trace_decay * ps.trace + s_nu
    ps.pre_rho_trace = z
    ps.trace = rho * z
    ps.nu += alpha * delta * ps.trace
    return delta, rho


# --------------------------------------------------------------------------
# Prediction-to-feature transforms
# --------------------------------------------------------------------------

def log_transform(v, gamma_max=0.9, horizon_cap=10):
    """Echo value -> time-to-event, normalised by ``horizon_cap`` into [0, 1]."""
    if not 0.0 < gamma_max < 1.0:
        raise ConfigurationError("gamma_max must lie in (0, 1)")
    v = np.maximum(np.asarray(v, dtype=np.float64), 1e-12)
    steps = np.log(v) / np.log(gamma_max)
    return np.clip(steps / horizon_cap, 0.0, 1.0)


# snaps values within float noise of an integer onto it before flooring
_FLOOR_GUARD = 1e-9


def aggregate(v_hat, memsize=110):
    """One-hot state aggregation of two predictions scaled into [0, 10)."""
    if len(v_hat) != 2:
        raise ConfigurationError("aggregate takes exactly two scaled predictions")
    i = int(np.floor(v_hat[0] + v_hat[1] * 10 + _FLOOR_GUARD))
    if not 0 <= i < memsize:
        raise ConfigurationError(f"aggregation index {i} outside memsize {memsize}")
    s = np.zeros(memsize)
    s[i] = 1.0
    return s


def scale_for_aggregate(transformed):
    """[0, 1] transform output -> [0, 10), saturated values sharing the top bin."""
    return np.minimum(np.asarray(transformed) * 10.0, 10.0 - 1e-6)
