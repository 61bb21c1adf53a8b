"""Oracle checks: finite-difference gradients, analytic fixed points and a
brute-force search, each independent of the code path it checks.

``run_all`` backs the ``verify`` command; the test suite calls the same
functions with its own tolerances.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import MlpQ, Rng
from .envs import FrostHollow, MonsoonWorld
from .gvf import (PredictionState, SoftEchoDiscount, echo_expert_pair,
                  gvf_update, importance_ratio, make_representation, predict)
from .meta import (MetaSensitivity, MetaWeights, accumulate_sensitivity, cumulant,
                   cumulant_grad, meta_gradient, ratio_grad, softmax)


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at ``x`` (perturbed in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


# --------------------------------------------------------------------------
# network gradients
# --------------------------------------------------------------------------

def mlp_gradient_check(num_snapshots=100, seed=0, hidden=(8, 8), input_dim=5, num_actions=3):
    """Worst relative error of backprop vs central differences over random nets.

    The loss is ``sum(g * Q(s))`` for a random batch and random output weights
    ``g``, which exercises parameter and input gradients together.
    """
    rng = Rng(seed)
    worst = 0.0
    for k in range(num_snapshots):
        net = MlpQ(input_dim, num_actions, hidden, rng=rng.spawn(k))
        for b in net.biases:
            b[...] = rng.normal(size=b.shape, scale=0.1)
        s = rng.normal(size=(4, input_dim))
        g = rng.normal(size=(4, num_actions))
        loss = lambda: float(np.sum(g * net.values(s)))
        _, tape = net.forward(s)
        grads, g_in = net.backward(tape, g)
        for p, dp in zip(net.params(), grads):
            worst = max(worst, rel_error(dp, central_diff(loss, p)))
        worst = max(worst, rel_error(g_in, central_diff(loss, s)))
    return worst


# --------------------------------------------------------------------------
# meta-gradient
# --------------------------------------------------------------------------

@dataclass
class MetaSnapshot:
    """One GVF update frozen at random values, plus a control loss on its output."""
    nu: np.ndarray
    s_nu: np.ndarray
    s_next: np.ndarray
    s_query: np.ndarray
    obs: np.ndarray
    omega_c: np.ndarray
    omega_pi: np.ndarray
    action: int
    mu_a: float
    alpha_v: float
    gamma_trace: float
    target: float
    w_v: float
    discount: object

    def value_after_update(self, omega_c, omega_pi):
        """Prediction at ``s_query`` after one GVF update under the given meta-weights."""
        mw = MetaWeights(omega_c, omega_pi)
        ps = PredictionState.zeros(self.nu.size)
        ps.nu = self.nu.copy()
        c = cumulant(mw, self.obs)
        rho = importance_ratio(softmax(omega_pi)[self.action], self.mu_a)
        gvf_update(ps, self.alpha_v, 0.0, self.s_nu, self.s_next, c,
                   self.gamma_trace, self.discount(c), rho)
        return float(ps.nu @ self.s_query)

    def loss(self, omega_c, omega_pi):
        return (self.target - self.w_v * self.value_after_update(omega_c, omega_pi)) ** 2


def random_meta_snapshot(rng: Rng, nu_dim=6, obs_dim=3, num_actions=2):
    return MetaSnapshot(
        nu=rng.normal(size=nu_dim),
        s_nu=rng.normal(size=nu_dim),
        s_next=rng.normal(size=nu_dim),
        s_query=rng.normal(size=nu_dim),
        obs=rng.normal(size=obs_dim),
        omega_c=rng.normal(size=obs_dim),
        omega_pi=rng.normal(size=num_actions),
        action=int(rng.integers(num_actions)),
        mu_a=float(rng.uniform(0.2, 1.0)),
        alpha_v=float(rng.uniform(0.01, 0.5)),
        gamma_trace=float(rng.uniform(0.0, 1.0)),
        target=float(rng.normal()),
        w_v=float(rng.normal()),
        discount=SoftEchoDiscount(0.9),
    )


def analytic_meta_gradient(snap: MetaSnapshot):
    """The package's meta-gradient for one fresh update (sensitivity starts at zero)."""
    mw = MetaWeights(snap.omega_c, snap.omega_pi)
    ps = PredictionState.zeros(snap.nu.size)
    ps.nu = snap.nu.copy()
    c = cumulant(mw, snap.obs)
    rho = importance_ratio(softmax(snap.omega_pi)[snap.action], snap.mu_a)
    v_next = float(ps.nu @ snap.s_next)
    delta, _ = gvf_update(ps, snap.alpha_v, 0.0, snap.s_nu, snap.s_next, c,
                          snap.gamma_trace, snap.discount(c), rho)
    ms = MetaSensitivity(snap.nu.size, snap.obs.size, snap.omega_pi.size)
    dc = cumulant_grad(mw, snap.obs) * (1.0 + snap.discount.grad(c) * v_next)
    accumulate_sensitivity(ms, snap.alpha_v, ps.trace, ps.pre_rho_trace, delta, dc,
                           ratio_grad(mw, snap.action, snap.mu_a))
    v = float(ps.nu @ snap.s_query)
    dL_dv = -2.0 * (snap.target - snap.w_v * v) * snap.w_v
    return meta_gradient(ms, dL_dv, snap.s_query)


def meta_gradient_check(num_snapshots=100, seed=1):
    rng = Rng(seed)
    worst = 0.0
    for _ in range(num_snapshots):
        snap = random_meta_snapshot(rng)
        g_c, g_pi = analytic_meta_gradient(snap)
        wc, wp = snap.omega_c.copy(), snap.omega_pi.copy()
        fd_c = central_diff(lambda: snap.loss(wc, wp), wc)
        fd_pi = central_diff(lambda: snap.loss(wc, wp), wp)
        worst = max(worst, rel_error(g_c, fd_c), rel_error(g_pi, fd_pi))
    return worst


# --------------------------------------------------------------------------
# echo GVF fixed point
# --------------------------------------------------------------------------

def echo_value_table(env: MonsoonWorld, water: bool, gamma=0.9):
    """Analytic echo value for each phase about to be acted in.

    Under the always-water (or never-water) policy the event fires on the
    first step whose phase rewards that action; the value is gamma^k with k
    the number of steps before that step.
    """
    table = {}
    for q in range(env.cycle):
        k = 0
        while env.is_drought((q + k) % env.cycle) != water:
            k += 1
        table[q] = gamma**k
    return table


def echo_fixed_point_error(steps=50_000, seed=0, alpha=0.1, gamma=0.9):
    """Max |v - gamma^k| of the two echo GVFs after learning from uniform behaviour.

    Both GVFs read the history representation; every history code is read
    against the phase it implies.
    """
    env = MonsoonWorld()
    rng = Rng(seed)
    specs = echo_expert_pair(alpha, 0.0, gamma)
    reprs = [make_representation("history", env.obs_dim, env.num_actions) for _ in specs]
    first = env.reset()
    states = [r.observe(first.observation, None) for r in reprs]
    pss = [PredictionState.zeros(r.dim) for r in reprs]
    gammas = [0.0] * len(specs)
    for _ in range(steps):
        a = int(rng.integers(2))
        res = env.step(a)
        for i, spec in enumerate(specs):
            s_next = reprs[i].observe(res.observation, a)
            c = spec.cumulant(res.observation, res.reward)
            g_next = spec.discount(c)
            rho = importance_ratio(spec.policy()[a], 0.5)
            gvf_update(pss[i], alpha, 0.0, states[i], s_next, c, gammas[i], g_next, rho)
            states[i], gammas[i] = s_next, g_next
    # read every history code against the phase it implies
    worst = 0.0
    tables = [echo_value_table(env, water=True, gamma=gamma),
              echo_value_table(env, water=False, gamma=gamma)]
    for code in range(reprs[0].dim):
        phase = _phase_of_history(code, env)
        if phase is None:
            continue
        s = np.zeros(reprs[0].dim)
        s[code] = 1.0
        for i in range(len(specs)):
            worst = max(worst, abs(predict(pss[i], s) - tables[i][phase]))
    return worst


def _phase_of_history(code, env: MonsoonWorld, length=2, num_actions=2):
    """Phase about to be acted in implied by a history code (None if impossible)."""
    base = 2 * num_actions
    pairs = []
    for _ in range(length):
        pairs.append(code % base)
        code //= base
    pairs.reverse()
    # which start phases reproduce the (action, growth) pairs
    matches = []
    for start in range(env.cycle):
        ok = True
        for j, p in enumerate(pairs):
            a, growth = divmod(p, 2)
            drought = env.is_drought((start + j) % env.cycle)
            if (1.0 if (a == env.WATER) == drought else 0.0) != growth:
                ok = False
                break
        if ok:
            matches.append((start + length) % env.cycle)
    return matches[0] if len(set(matches)) == 1 else None


# --------------------------------------------------------------------------
# Frost Hollow search
# --------------------------------------------------------------------------

def frost_bfs_min_steps(env: FrostHollow | None = None):
    """Breadth-first search over (position, heat, clock) for the first reward."""
    env = env or FrostHollow()
    start = (env.start_position, 0, env.start_clock)
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        (pos, heat, clock), d = frontier.popleft()
        for a in (env.LEFT, env.RIGHT, env.STAY):
            p, h, c, reward, _ = env.transition(pos, heat, clock, a)
            if reward:
                return d + 1
            if (p, h, c) not in seen:
                seen.add((p, h, c))
                frontier.append(((p, h, c), d + 1))
    return None


def frost_state_count(env: FrostHollow | None = None):
    env = env or FrostHollow()
    return env.walk_length * (env.heat_threshold + 1) * env.hazard_period


# --------------------------------------------------------------------------

def run_all():
    """(name, value, tolerance, passed) for each oracle check."""
    results = []
    err = mlp_gradient_check()
    results.append(("mlp backward vs finite differences (rel err)", err, 1e-4, err < 1e-4))
    err = meta_gradient_check()
    results.append(("meta-gradient vs finite differences (rel err)", err, 1e-4, err < 1e-4))
    err = echo_fixed_point_error()
    results.append(("echo GVF fixed point (max abs err)", err, 1e-3, err < 1e-3))
    env = FrostHollow()
    bfs = frost_bfs_min_steps(env)
    rec = env.min_steps_to_reward()
    results.append(("frost hollow min steps: recursion == BFS", rec, bfs, rec == bfs))
    return results
