"""Agents: a Q-learning controller fed by observations and GVF predictions.

One call to :meth:`Agent.step` performs, in order: act from the current
agent-state, observe the environment, meta-update each learned GVF question
from the control loss, update each GVF's weights, rebuild the agent-state
from the fresh predictions, and finally update the controller.
"""
from dataclasses import dataclass, field, fields

import numpy as np

from .core import ConfigurationError, LinearQ, MlpQ, NonFiniteError, Rng
from .gvf import (ConstantDiscount, EventCumulant, GvfSpec, ObsCumulant, PredictionState,
                  SoftEchoDiscount, aggregate, echo_expert_pair,
                  gvf_update, importance_ratio, log_transform, make_representation,
                  predict, scale_for_aggregate, spec_from_config)
from .meta import (MetaCumulant, MetaPolicy, MetaSensitivity, MetaWeights,
                   accumulate_sensitivity, cumulant_grad, meta_update, ratio_grad)

VARIANTS = ("obs", "expert", "oracle", "mgd", "fixed")
PHIS = ("concat-lin", "agg", "concat-network")


@dataclass
class AgentConfig:
    variant: str = "obs"
    control: str = "linear"
    phi: str = "concat-lin"
    # exploration: constant, or linear decay from epsilon_start over epsilon_decay_steps
    epsilon: float = 0.1
    epsilon_start: float | None = None
    epsilon_decay_steps: int = 0
    eval_epsilon: float = 0.0
    alpha_q: float = 0.01
    gamma_q: float = 0.9
    # std of the initial linear Q weights (0 starts every weight at zero)
    q_init_scale: float = 0.0
    # GVFs
    gvf_repr: str = "history"
    gvf_repr_params: dict = field(default_factory=dict)
    gvfs: list | None = None
    num_gvfs: int = 2
    alpha_v: float = 0.1
    trace_decay: float = 0.0
    gvf_gamma: float = 0.9
    # meta
    alpha_c: float = 0.1
    alpha_pi: float = 0.001
    l2: float = 0.001
    cumulant_activation: str = "sigmoid"
    omega_c_init: float | list = -5.0
    omega_pi_init: float | list = 0.0
    # discount of meta-learned questions: "constant" or "soft-echo"
    meta_discount: str = "constant"
    sensitivity_decay: float = 0.0
    sensitivity_propagate: bool = False
    meta_clip: float | None = 1.0
    # agg feature construction
    horizon_cap: int = 10
    memsize: int = 110
    # network controller
    hidden: tuple = (64, 64)
    replay_capacity: int = 50_000
    batch_size: int = 32
    min_history: int = 500
    train_every: int = 1
    target_sync: int = 1000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown agent variant {self.variant!r}")
        if self.control not in ("linear", "network"):
            raise ConfigurationError(f"unknown control learner {self.control!r}")
        if self.phi not in PHIS:
            raise ConfigurationError(f"unknown agent-state builder {self.phi!r}")
        self.hidden = tuple(self.hidden)
        if self.meta_discount not in ("soft-echo", "constant"):
            raise ConfigurationError(f"unknown meta discount {self.meta_discount!r}")
        if self.q_init_scale < 0:
            raise ConfigurationError("q_init_scale must be non-negative")
        for name in ("epsilon", "eval_epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown agent settings: {sorted(unknown)}")
        return cls(**d)

    def epsilon_at(self, t):
        if self.epsilon_start is None or t >= self.epsilon_decay_steps:
            return self.epsilon
        frac = t / self.epsilon_decay_steps
        return self.epsilon_start + frac * (self.epsilon - self.epsilon_start)


# --------------------------------------------------------------------------
# agent-state and action selection
# --------------------------------------------------------------------------

def build_agent_state(obs, v, phi, gamma_max=0.9, horizon_cap=10, memsize=110):
    if phi == "concat-lin":
        return np.concatenate([obs, v, [1.0]])
    if phi == "agg":
        if len(v) == 0:
            return np.concatenate([obs, [1.0]])
        scaled = scale_for_aggregate(log_transform(v, gamma_max, horizon_cap))
        return np.concatenate([obs, aggregate(scaled, memsize)])
    if phi == "concat-network":
        return np.concatenate([obs, v])
    raise ConfigurationError(f"unknown agent-state builder {phi!r}")


def act_epsilon_greedy(q_values, epsilon, rng: Rng) -> int:
    """Uniform action with probability epsilon, else argmax (lowest index wins ties)."""
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def behaviour_probs(q_values, epsilon):
    n = len(q_values)
    p = np.full(n, epsilon / n)
    p[int(np.argmax(q_values))] += 1.0 - epsilon
    return p


# --------------------------------------------------------------------------
# controllers
# --------------------------------------------------------------------------

class LinearControl:
    def __init__(self, num_actions, state_dim, alpha, gamma, init_scale=0.0, rng: Rng | None = None):
        self.q = LinearQ(num_actions, state_dim, alpha)
        if init_scale > 0:
            self.q.weights[...] = rng.normal(size=self.q.weights.shape, scale=init_scale)
        self.gamma = gamma

    def values(self, s):
        return self.q.values(s)

    def td_error(self, s, a, r, s_next):
        return r + self.gamma * float(self.q.values(s_next).max()) - float(self.q.values(s)[a])

    def dq_ds(self, s, a):
        return self.q.input_grad(s, a)

    def update(self, s, a, r, s_next):
        delta = self.td_error(s, a, r, s_next)
        self.q.update(s, a, delta)
        return delta


class ReplayBuffer:
    """Uniform replay over a fixed-capacity ring; transitions never terminate."""

    def __init__(self, capacity, state_dim, batch_size, min_history, rng: Rng):
        if min_history < batch_size:
            raise ConfigurationError("min_history must be at least one batch")
        self.capacity = capacity
        self.batch_size = batch_size
        self.min_history = min_history
        self.rng = rng
        self.s = np.zeros((capacity, state_dim))
        self.s_next = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    @property
    def ready(self):
        return self.size >= self.min_history

    def add(self, s, a, r, s_next):
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self):
        if not self.ready:
            raise RuntimeError("replay sampled before min_history transitions")
        idx = self.rng.integers(self.size, size=self.batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx]


class DqnControl:
    """Q-network with a frozen target copy trained from uniform replay (MSE loss, Adam)."""

    def __init__(self, num_actions, state_dim, cfg: AgentConfig, rng: Rng):
        self.online = MlpQ(state_dim, num_actions, cfg.hidden, cfg.alpha_q, rng.spawn(2))
        self.target = self.online.clone()
        self.gamma = cfg.gamma_q
        self.replay = ReplayBuffer(cfg.replay_capacity, state_dim, cfg.batch_size,
                                   cfg.min_history, rng.spawn(1))
        self.train_every = cfg.train_every
        self.target_sync = cfg.target_sync
        self.steps = 0
        self._rows = np.arange(cfg.batch_size)
        # online forward pass of the last queried state, valid until training
        self._memo = (None, None, None)

    def _forward(self, s):
        if self._memo[0] is not s:
            self._memo = (s, *self.online.forward(s))
        return self._memo[1], self._memo[2]

    def values(self, s):
        return self._forward(s)[0]

    def td_error(self, s, a, r, s_next):
        target = r + self.gamma * float(np.max(self.target.values(s_next)))
        return target - float(self._forward(s)[0][a])

    def dq_ds(self, s, a):
        _, tape = self._forward(s)
        out = np.zeros(self.online.num_actions)
        out[a] = 1.0
        return self.online.backward(tape, out)[1]

    def update(self, s, a, r, s_next):
        delta = self.td_error(s, a, r, s_next)
        self.replay.add(s, a, r, s_next)
        self.steps += 1
        if self.replay.ready and self.steps % self.train_every == 0:
            self.train_batch()
        if self.steps % self.target_sync == 0:
            self.target.copy_from(self.online)
        return delta

    def train_batch(self):
        s, a, r, s_next = self.replay.sample()
        y = r + self.gamma * self.target.values(s_next).max(axis=1)
        q, tape = self.online.forward(s)
        rows = self._rows
        delta = y - q[rows, a]
        grad_out = np.zeros_like(q)
        grad_out[rows, a] = -2.0 * delta / len(rows)
        grads, _ = self.online.backward(tape, grad_out)
        self.online.apply_gradients(grads)
        self._memo = (None, None, None)
        return delta


def q_learning_step(control, s, a, r, s_next):
    return control.update(s, a, r, s_next)


# --------------------------------------------------------------------------
# GVF units
# --------------------------------------------------------------------------

class GvfUnit:
    """One GVF: question, representation, learned weights and, when the
    question is meta-learned, its sensitivity matrix."""

    def __init__(self, spec: GvfSpec, repr, obs_dim, num_actions,
                 meta: MetaWeights | None = None, learn_meta=False, sensitivity_decay=0.0,
                 sensitivity_propagate=False):
        self.spec = spec
        self.repr = repr
        self.ps = PredictionState.zeros(repr.dim)
        self.meta = meta
        self.learn_meta = learn_meta and meta is not None
        self.ms = None
        if self.learn_meta:
            pi_dim = None if meta.omega_pi is None else num_actions
            self.ms = MetaSensitivity(repr.dim, obs_dim, pi_dim, sensitivity_decay,
                                      sensitivity_propagate)
        self.s_nu = None
        self.gamma = 0.0

    def start(self, obs):
        self.repr.reset()
        self.s_nu = self.repr.observe(obs, None)
        return predict(self.ps, self.s_nu)


def _meta_gvf_specs(cfg: AgentConfig, obs_dim, num_actions, on_policy, discount_kind):
    discount = SoftEchoDiscount if discount_kind == "soft-echo" else ConstantDiscount
    # inits may be a scalar, one vector shared by all GVFs, or one row per GVF
    init_c = np.broadcast_to(np.asarray(cfg.omega_c_init, dtype=float), (cfg.num_gvfs, obs_dim))
    init_pi = np.broadcast_to(np.asarray(cfg.omega_pi_init, dtype=float),
                              (cfg.num_gvfs, num_actions))
    units = []
    for i in range(cfg.num_gvfs):
        mw = MetaWeights(init_c[i].copy(), None if on_policy else init_pi[i].copy(),
                         cfg.alpha_c, cfg.alpha_pi, cfg.l2, cfg.cumulant_activation)
        spec = GvfSpec(MetaCumulant(mw), discount(cfg.gvf_gamma),
                       None if on_policy else MetaPolicy(mw), cfg.trace_decay, cfg.alpha_v)
        units.append((spec, mw))
    return units


def default_gvfs(env_id, cfg: AgentConfig, obs_dim, num_actions):
    """(spec, meta-weights-or-None) pairs for a variant's standard GVF set."""
    if cfg.variant in ("obs", "oracle"):
        return []
    if cfg.variant == "expert":
        if env_id == "monsoon":
            return [(s, None) for s in echo_expert_pair(cfg.alpha_v, cfg.trace_decay, cfg.gvf_gamma)]
        # the hazard bit sits right after the position one-hot
        hazard = obs_dim - 2
        return [(GvfSpec(ObsCumulant(hazard), ConstantDiscount(cfg.gvf_gamma), None,
                         cfg.trace_decay, cfg.alpha_v), None)]
    return _meta_gvf_specs(cfg, obs_dim, num_actions, env_id != "monsoon", cfg.meta_discount)


def _bind_meta(spec: GvfSpec, obs_dim, num_actions, cfg: AgentConfig):
    """Give config-declared meta components correctly sized shared weights."""
    meta_c = isinstance(spec.cumulant, MetaCumulant)
    meta_pi = isinstance(spec.policy, MetaPolicy)
    if not (meta_c or meta_pi):
        return None
    init_c = spec.cumulant.mw.omega_c if meta_c else np.zeros(1)
    omega_c = np.broadcast_to(init_c, (obs_dim,)).copy() if init_c.size == 1 else init_c
    omega_pi = spec.policy.mw.omega_pi if meta_pi else None
    activation = spec.cumulant.mw.activation if meta_c else "linear"
    mw = MetaWeights(omega_c, omega_pi, cfg.alpha_c, cfg.alpha_pi, cfg.l2, activation)
    if meta_c:
        spec.cumulant = MetaCumulant(mw)
    if meta_pi:
        spec.policy = MetaPolicy(mw)
    return mw


# --------------------------------------------------------------------------
# the agent
# --------------------------------------------------------------------------

@dataclass
class StepLog:
    reward: float
    action: int
    delta: float
    v: np.ndarray
    meta_skipped: int = 0


class Agent:
    def __init__(self, cfg: AgentConfig, env_id: str, env, rng: Rng):
        if cfg.variant == "oracle" and env_id != "monsoon":
            raise ConfigurationError("the oracle variant needs Monsoon's phase info")
        self.cfg = cfg
        self.env_id = env_id
        self.rng = rng
        self.num_actions = env.num_actions
        obs_dim = env.obs_dim
        self.obs_dim = obs_dim

        if cfg.gvfs is not None and cfg.variant not in ("obs", "oracle"):
            pairs = []
            for gcfg in cfg.gvfs:
                spec = spec_from_config(gcfg)
                pairs.append((spec, _bind_meta(spec, obs_dim, env.num_actions, cfg)))
        else:
            pairs = default_gvfs(env_id, cfg, obs_dim, env.num_actions)
        learn = cfg.variant == "mgd"
        self.units = []
        for spec, mw in pairs:
            repr = make_representation(cfg.gvf_repr, obs_dim, env.num_actions,
                                       **cfg.gvf_repr_params)
            self.units.append(GvfUnit(spec, repr, obs_dim, env.num_actions, mw, learn,
                                      cfg.sensitivity_decay, cfg.sensitivity_propagate))
        self.learn_meta = any(u.learn_meta for u in self.units)
        gammas = [u.spec.discount.max_gamma for u in self.units]
        self.gamma_max = max(gammas) if gammas else 0.9

        n_pred = 2 if cfg.variant == "oracle" else len(self.units)
        probe = self._state(np.zeros(obs_dim), np.full(n_pred, 0.5))
        self.state_dim = probe.shape[0]
        # position of the predictions inside the agent-state (concat builders)
        self.v_slice = slice(obs_dim, obs_dim + n_pred)
        if self.learn_meta and cfg.phi == "agg":
            raise ConfigurationError("meta-learning needs a differentiable agent-state builder")
        if cfg.control == "linear":
            # a separate stream, so the init leaves the action draws untouched
            self.control = LinearControl(env.num_actions, self.state_dim, cfg.alpha_q,
                                         cfg.gamma_q, cfg.q_init_scale, rng.spawn(3))
        else:
            self.control = DqnControl(env.num_actions, self.state_dim, cfg, rng)

        self.events = None
        self.meta_skipped = 0
        self.obs = None
        self.s = None
        self.v = None

    # -- helpers -----------------------------------------------------------
    def _state(self, obs, v):
        return build_agent_state(obs, v, self.cfg.phi, self.gamma_max,
                                 self.cfg.horizon_cap, self.cfg.memsize)

    def _oracle_v(self, info):
        drought = 1.0 if info["drought"] else 0.0
        return np.array([drought, 1.0 - drought])

    def _predictions(self, info):
        if self.cfg.variant == "oracle":
            return self._oracle_v(info)
        return np.array([u.ps.value for u in self.units])

    def _log(self, event):
        if self.events is not None:
            self.events.append(event)

    # -- protocol ----------------------------------------------------------
    def start(self, first):
        for u in self.units:
            u.start(first.observation)
        self.obs = first.observation
        self.v = self._predictions(first.info)
        self.s = self._state(self.obs, self.v)

    def step(self, env, epsilon) -> StepLog:
        s_prev = self.s
        q = self.control.values(s_prev)
        a = act_epsilon_greedy(q, epsilon, self.rng)
        mu_a = epsilon / self.num_actions + (1.0 - epsilon if a == int(q.argmax()) else 0.0)
        self._log("act")
        res = env.step(a)
        obs, r = res.observation, res.reward

        new_states = [u.repr.observe(obs, a) for u in self.units]

        if self.learn_meta:
            # loss of the transition just seen, bootstrapping from the
            # predictions the GVFs would make before this step's update
            v_pre = np.array([float(u.ps.nu @ sn) for u, sn in zip(self.units, new_states)])
            delta_meta = self.control.td_error(s_prev, a, r, self._state(obs, v_pre))
            dq_dv = self.control.dq_ds(s_prev, a)[self.v_slice]
            for i, u in enumerate(self.units):
                if u.learn_meta:
                    dL_dv = -2.0 * delta_meta * dq_dv[i]
                    if not meta_update(u.meta, u.ms, dL_dv, u.s_nu, self.cfg.meta_clip):
                        self.meta_skipped += 1
            self._log("meta")

        for u, s_next in zip(self.units, new_states):
            spec = u.spec
            v_next = float(u.ps.nu @ s_next)
            c = spec.cumulant(obs, r)
            gamma_next = spec.discount(c)
            if spec.policy is None:
                rho = 1.0
            else:
                rho = importance_ratio(spec.policy()[a], mu_a)
            delta_nu, _ = gvf_update(u.ps, spec.learning_rate, spec.trace_decay,
                                     u.s_nu, s_next, c, u.gamma, gamma_next, rho)
            if u.learn_meta:
                # the cumulant also moves the bootstrap through the discount
                dc = cumulant_grad(u.meta, obs) * (1.0 + spec.discount.grad(c) * v_next)
                drho = None if u.meta.omega_pi is None else ratio_grad(u.meta, a, mu_a)
                accumulate_sensitivity(u.ms, spec.learning_rate, u.ps.trace,
                                       u.ps.pre_rho_trace, delta_nu, dc, drho,
                                       u.s_nu - gamma_next * s_next)
            u.s_nu = s_next
            u.gamma = gamma_next
            predict(u.ps, s_next)
        if self.units:
            self._log("gvf")

        v = self._predictions(res.info)
        s = self._state(obs, v)
        delta = self.control.update(s_prev, a, r, s)
        if not np.isfinite(delta):
            raise NonFiniteError("control TD error became non-finite")
        self._log("control")
        self.obs, self.v, self.s = obs, v, s
        return StepLog(r, a, delta, v)

    # -- introspection -------------------------------------------------------
    def omega_c(self):
        return [u.meta.omega_c.copy() for u in self.units if u.meta is not None]

    def omega_pi(self):
        return [u.meta.omega_pi.copy() for u in self.units
                if u.meta is not None and u.meta.omega_pi is not None]


def run_step(agent: Agent, env, epsilon):
    return agent.step(env, epsilon)
