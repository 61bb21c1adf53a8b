"""Meta-learned GVF questions.

The cumulant head ``c = act(omega_c . o)`` and the (observation-free) policy
head ``pi = softmax(omega_pi)`` are parameterised by meta-weights that
descend the control learner's squared TD error. The chain from meta-weights
to the control loss runs through the GVF weights:

    dL/domega = dL/dv * s_nu . (dnu/domega)

``dnu/domega`` is carried by a sensitivity matrix that accumulates the
direct effect of each GVF weight update (the change of the update with the
meta-weights, holding the incoming weights and trace fixed). By default
contributions sum without decay; ``decay`` in (0, 1] forgets old ones and
``decay=1`` keeps only the latest update.
"""
import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def softmax(w):
    z = np.exp(w - w.max())
    return z / z.sum()


@dataclass
class MetaWeights:
    """Meta-parameters of one GVF and their step sizes.

    ``omega_pi`` is None for on-policy GVFs.
    """
    omega_c: np.ndarray
    omega_pi: np.ndarray | None = None
    alpha_c: float = 0.1
    alpha_pi: float = 0.001
    l2: float = 0.001
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.activation not in ("sigmoid", "linear"):
            raise ConfigurationError(f"unknown cumulant activation {self.activation!r}")
        self.omega_c = np.array(self.omega_c, dtype=np.float64)
        if self.omega_pi is not None:
            self.omega_pi = np.array(self.omega_pi, dtype=np.float64)


def cumulant(mw: MetaWeights, obs) -> float:
    x = float(mw.omega_c @ obs)
    return sigmoid(x) if mw.activation == "sigmoid" else x


def cumulant_grad(mw: MetaWeights, obs):
    """dc/domega_c."""
    if mw.activation == "linear":
        return np.array(obs, dtype=np.float64)
    c = sigmoid(float(mw.omega_c @ obs))
    return c * (1.0 - c) * obs


def target_policy(mw: MetaWeights):
    return softmax(mw.omega_pi)


def ratio_grad(mw: MetaWeights, a: int, mu_a: float):
    """drho/domega_pi for rho = softmax(omega_pi)[a] / mu_a."""
    pi = softmax(mw.omega_pi)
    g = -pi[a] * pi
    g[a] += pi[a]
    return g / mu_a


class MetaCumulant:
    """Cumulant callable bound to a :class:`MetaWeights`."""

    def __init__(self, mw: MetaWeights):
        self.mw = mw

    def __call__(self, obs, reward):
        return cumulant(self.mw, obs)

    @classmethod
    def from_config(cls, cfg):
        # dimensions are bound later by the agent; keep the raw init
        return cls(MetaWeights(np.atleast_1d(np.asarray(cfg.get("init", -5.0), dtype=float)),
                               activation=cfg.get("activation", "sigmoid")))

    def to_config(self):
        return {"kind": "meta", "activation": self.mw.activation,
                "init": self.mw.omega_c.tolist()}


class MetaPolicy:
    def __init__(self, mw: MetaWeights):
        self.mw = mw

    def __call__(self):
        return target_policy(self.mw)

    @classmethod
    def from_config(cls, cfg):
        return cls(MetaWeights(np.zeros(1), np.asarray(cfg.get("init", [0.0, 0.0]), dtype=float)))

    def to_config(self):
        return {"kind": "meta", "init": self.mw.omega_pi.tolist()}


class MetaSensitivity:
    """dnu/domega for one GVF: ``h_c`` is |nu| x |omega_c|, ``h_pi`` |nu| x |A|."""

    def __init__(self, nu_dim, obs_dim, num_actions=None, decay=0.0, propagate=False):
        if not 0.0 <= decay <= 1.0:
            raise ConfigurationError("sensitivity decay must lie in [0, 1]")
        self.propagate = propagate
        self.h_c = np.zeros((nu_dim, obs_dim))
        self.h_pi = None if num_actions is None else np.zeros((nu_dim, num_actions))
        self.decay = decay

    def reset(self):
        self.h_c[...] = 0.0
        if self.h_pi is not None:
            self.h_pi[...] = 0.0


def accumulate_sensitivity(ms: MetaSensitivity, alpha_v, trace, pre_rho_trace,
                           delta_nu, dc, drho=None, td_direction=None):
    """Add the latest GVF update's direct dependence on the meta-weights.

    With ``nu' = nu + alpha_v * delta * rho * z`` and ``trace = rho * z``:
    ``dnu'/domega_c = alpha_v * trace (x) dc`` and
    ``dnu'/domega_pi = alpha_v * delta * z (x) drho``.
    """
    keep = 1.0 - ms.decay
    if ms.propagate and td_direction is not None:
        # carried sensitivity also flows through the TD error of this update
        ms.h_c -= alpha_v * trace[:, None] * (td_direction @ ms.h_c)
        if ms.h_pi is not None:
            ms.h_pi -= alpha_v * trace[:, None] * (td_direction @ ms.h_pi)
    if keep != 1.0:
        ms.h_c *= keep
    ms.h_c += (alpha_v * trace)[:, None] * dc
    if ms.h_pi is not None and drho is not None:
        if keep != 1.0:
            ms.h_pi *= keep
        ms.h_pi += ((alpha_v * delta_nu) * pre_rho_trace)[:, None] * drho


def meta_gradient(ms: MetaSensitivity, dL_dv: float, s_nu):
    """(dL/domega_c, dL/domega_pi) for a loss that sees this GVF's v = nu . s_nu."""
    g_c = dL_dv * (s_nu @ ms.h_c)
    g_pi = None if ms.h_pi is None else dL_dv * (s_nu @ ms.h_pi)
    return g_c, g_pi


def _clip_linf(g, limit):
    if limit is None:
        return g
    m = np.abs(g).max() if g.size else 0.0
    return g * (limit / m) if m > limit else g


def meta_update(mw: MetaWeights, ms: MetaSensitivity, dL_dv: float, s_nu,
                clip: float | None = 1.0) -> bool:
    """Descend ``L + l2 * |omega|^2``. Returns False if the step was skipped
    because the gradient was not finite.
    """
    g_c, g_pi = meta_gradient(ms, dL_dv, s_nu)
    if not np.isfinite(g_c).all() or (g_pi is not None and not np.isfinite(g_pi).all()):
        return False
    mw.omega_c -= mw.alpha_c * (_clip_linf(g_c, clip) + 2.0 * mw.l2 * mw.omega_c)
    if g_pi is not None and mw.omega_pi is not None:
        mw.omega_pi -= mw.alpha_pi * (_clip_linf(g_pi, clip) + 2.0 * mw.l2 * mw.omega_pi)
    return True
