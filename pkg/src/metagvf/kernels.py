"""Compiled fast path for linear control on Monsoon World.

``run_steps`` advances an :class:`~metagvf.agents.Agent` exactly as repeated
calls to ``Agent.step`` would, in one compiled loop. It covers the linear
controller on the concatenated agent-state, with either no GVFs, the oracle
predictions, or meta-parameterised GVFs over the history representation.
Random draws come from the agent's own generator, so the action stream
matches the reference loop; floating point results agree to rounding.

All agent, GVF and environment state is copied into flat arrays, advanced
in place, and written back, so the Python and compiled paths can be mixed
freely on one agent.
"""
import numpy as np
from numba import njit

from .agents import Agent, LinearControl
from .core import NonFiniteError
from .envs import MonsoonWorld
from .gvf import ConstantDiscount, CoverageError, HistoryAggregation, SoftEchoDiscount
from .meta import MetaCumulant, MetaPolicy

OK, BAD_DELTA, NO_COVERAGE = 0, 1, 2


def eligible(agent: Agent, env) -> bool:
    """True if :func:`run_steps` can stand in for ``agent.step`` on ``env``."""
    if not isinstance(env, MonsoonWorld) or not isinstance(agent.control, LinearControl):
        return False
    if agent.cfg.phi != "concat-lin" or agent.cfg.variant not in ("obs", "oracle", "mgd", "fixed"):
        return False
    if agent.cfg.variant == "oracle":
        return not agent.units
    first = None
    for u in agent.units:
        if not isinstance(u.repr, HistoryAggregation) or not isinstance(u.spec.cumulant, MetaCumulant):
            return False
        if type(u.spec.discount) not in (ConstantDiscount, SoftEchoDiscount):
            return False
        if u.meta is None or u.spec.cumulant.mw is not u.meta:
            return False
        if u.spec.policy is not None and not isinstance(u.spec.policy, MetaPolicy):
            return False
        if u.spec.policy is not None and u.spec.policy.mw is not u.meta:
            return False
        key = (u.repr.length, u.repr.obs_index, tuple(u.repr.pairs))
        if first is None:
            first = key
        elif key != first:
            return False
    return True


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _greedy(W, s):
    best = 0
    qbest = -np.inf
    for b in range(W.shape[0]):
        q = 0.0
        for j in range(W.shape[1]):
            q += W[b, j] * s[j]
        if q > qbest:
            qbest = q
            best = b
    return best, qbest


@njit(cache=True)
def _q(W, a, s):
    q = 0.0
    for j in range(W.shape[1]):
        q += W[a, j] * s[j]
    return q


@njit(cache=True)
def _dot_row(nu, i, code):
    # nu[i] . one-hot(code), zero for the blank state
    return nu[i, code] if code >= 0 else 0.0


@njit(cache=True)
def _kernel(gen, eps, W, alpha_q, gamma_q, s_prev, phase, drought_steps, cycle,
            oracle, agent_learn, learn, nu, trace, pre, code, gam,
            alpha_v, lam, disc_gamma, soft, omega_c, omega_pi, has_pi, sigmoid_act,
            alpha_c, alpha_pi, l2, h_c, h_pi, keep, propagate, clip,
            pairs, npairs, base, obs_index, omega_sum,
            out_r, out_a, out_delta, out_v):
    n_steps = eps.shape[0]
    n = nu.shape[0]
    A = W.shape[0]
    obs_dim = 2
    L = pairs.shape[0]
    s_new = np.empty_like(s_prev)
    obs = np.zeros(obs_dim)
    v = np.zeros(n if not oracle else 2)
    dq_dv = np.zeros(n)
    g_c = np.zeros(obs_dim)
    g_pi = np.zeros(A)
    pi = np.zeros(A)
    dc = np.zeros(obs_dim)
    drho = np.zeros(A)
    t_c = np.zeros(obs_dim)
    t_pi = np.zeros(A)
    skipped = 0
    draws = 0
    for t in range(n_steps):
        e = eps[t]
        greedy, _ = _greedy(W, s_prev)
        draws += 1
        if gen.random() < e:
            a = gen.integers(0, A)
            draws += 1
        else:
            a = greedy
        mu_a = e / A + (1.0 - e if a == greedy else 0.0)
        if mu_a <= 0.0:
            return phase, npairs, skipped, draws, NO_COVERAGE, t
        # environment
        wants_water = phase < drought_steps
        r = 1.0 if (a == 1) == wants_water else 0.0
        phase = (phase + 1) % cycle
        obs[0] = r
        obs[1] = 1.0
        # history representation: push (action, bit), code of the full window
        bit = 1 if obs[obs_index] > 0.5 else 0
        if npairs < L:
            pairs[npairs] = 2 * a + bit
            npairs += 1
        else:
            for j in range(L - 1):
                pairs[j] = pairs[j + 1]
            pairs[L - 1] = 2 * a + bit
        code_new = -1
        if npairs == L:
            code_new = 0
            for j in range(L):
                code_new = code_new * base + pairs[j]

        if agent_learn:
            s_new[0] = obs[0]
            s_new[1] = obs[1]
            for i in range(n):
                s_new[obs_dim + i] = _dot_row(nu, i, code_new)
            s_new[obs_dim + n] = 1.0
            _, qmax = _greedy(W, s_new)
            delta_meta = r + gamma_q * qmax - _q(W, a, s_prev)
            for i in range(n):
                dq_dv[i] = W[a, obs_dim + i]
            for i in range(n):
                if not learn[i]:
                    continue
                dL_dv = -2.0 * delta_meta * dq_dv[i]
                k = code[i]
                finite = True
                m_c = 0.0
                for j in range(obs_dim):
                    g_c[j] = dL_dv * (h_c[i, k, j] if k >= 0 else 0.0)
                    finite = finite and np.isfinite(g_c[j])
                    m_c = max(m_c, abs(g_c[j]))
                m_pi = 0.0
                if has_pi[i]:
                    for j in range(A):
                        g_pi[j] = dL_dv * (h_pi[i, k, j] if k >= 0 else 0.0)
                        finite = finite and np.isfinite(g_pi[j])
                        m_pi = max(m_pi, abs(g_pi[j]))
                if not finite:
                    skipped += 1
                    continue
                sc = clip / m_c if m_c > clip else 1.0
                for j in range(obs_dim):
                    gj = g_c[j] * sc if m_c > clip else g_c[j]
                    omega_c[i, j] -= alpha_c[i] * (gj + 2.0 * l2[i] * omega_c[i, j])
                if has_pi[i]:
                    sp = clip / m_pi if m_pi > clip else 1.0
                    for j in range(A):
                        gj = g_pi[j] * sp if m_pi > clip else g_pi[j]
                        omega_pi[i, j] -= alpha_pi[i] * (gj + 2.0 * l2[i] * omega_pi[i, j])

        for i in range(n):
            v_next = _dot_row(nu, i, code_new)
            x = 0.0
            for j in range(obs_dim):
                x += omega_c[i, j] * obs[j]
            c = _sigmoid(x) if sigmoid_act[i] else x
            if soft[i]:
                g_next = disc_gamma[i] * (1.0 - min(max(c, 0.0), 1.0))
            else:
                g_next = disc_gamma[i]
            if has_pi[i]:
                wmax = omega_pi[i, 0]
                for j in range(1, A):
                    wmax = max(wmax, omega_pi[i, j])
                zsum = 0.0
                for j in range(A):
                    pi[j] = np.exp(omega_pi[i, j] - wmax)
                    zsum += pi[j]
                for j in range(A):
                    pi[j] = pi[j] / zsum
                rho = pi[a] / mu_a
            else:
                rho = 1.0
            k = code[i]
            delta_nu = c + g_next * v_next - _dot_row(nu, i, k)
            gl = gam[i] * lam[i]
            for m in range(nu.shape[1]):
                z = gl * trace[i, m] + (1.0 if m == k else 0.0)
                pre[i, m] = z
                trace[i, m] = rho * z
                nu[i, m] += alpha_v[i] * delta_nu * trace[i, m]
            if learn[i]:
                if sigmoid_act[i]:
                    cs = _sigmoid(x)
                    for j in range(obs_dim):
                        dc[j] = cs * (1.0 - cs) * obs[j]
                else:
                    for j in range(obs_dim):
                        dc[j] = obs[j]
                dg = -disc_gamma[i] if (soft[i] and 0.0 < c < 1.0) else 0.0
                for j in range(obs_dim):
                    dc[j] = dc[j] * (1.0 + dg * v_next)
                if has_pi[i]:
                    for j in range(A):
                        drho[j] = -pi[a] * pi[j]
                    drho[a] += pi[a]
                    for j in range(A):
                        drho[j] = drho[j] / mu_a
                if propagate:
                    # td direction is one-hot(k) - g_next * one-hot(code_new)
                    same = k >= 0 and k == code_new
                    for j in range(obs_dim):
                        t_c[j] = (h_c[i, k, j] if k >= 0 else 0.0) - (
                            g_next * h_c[i, code_new, j] if code_new >= 0 else 0.0)
                    if has_pi[i]:
                        for j in range(A):
                            t_pi[j] = (h_pi[i, k, j] if k >= 0 else 0.0) - (
                                g_next * h_pi[i, code_new, j] if code_new >= 0 else 0.0)
                    if same:
                        for j in range(obs_dim):
                            t_c[j] = (1.0 - g_next) * h_c[i, k, j]
                        for j in range(A):
                            t_pi[j] = (1.0 - g_next) * h_pi[i, k, j]
                    for m in range(nu.shape[1]):
                        at = alpha_v[i] * trace[i, m]
                        for j in range(obs_dim):
                            h_c[i, m, j] -= at * t_c[j]
                        if has_pi[i]:
                            for j in range(A):
                                h_pi[i, m, j] -= at * t_pi[j]
                if keep != 1.0:
                    h_c[i] *= keep
                for m in range(nu.shape[1]):
                    at = alpha_v[i] * trace[i, m]
                    for j in range(obs_dim):
                        h_c[i, m, j] += at * dc[j]
                if has_pi[i]:
                    if keep != 1.0:
                        h_pi[i] *= keep
                    for m in range(nu.shape[1]):
                        ad = alpha_v[i] * delta_nu * pre[i, m]
                        for j in range(A):
                            h_pi[i, m, j] += ad * drho[j]
            code[i] = code_new
            gam[i] = g_next
            v[i] = _dot_row(nu, i, code_new)

        if oracle:
            d = 1.0 if phase < drought_steps else 0.0
            v[0] = d
            v[1] = 1.0 - d
        s_new[0] = obs[0]
        s_new[1] = obs[1]
        for i in range(v.shape[0]):
            s_new[obs_dim + i] = v[i]
        s_new[obs_dim + v.shape[0]] = 1.0
        _, qmax = _greedy(W, s_new)
        delta = r + gamma_q * qmax - _q(W, a, s_prev)
        if not np.isfinite(delta):
            return phase, npairs, skipped, draws, BAD_DELTA, t
        step = alpha_q * delta
        for j in range(W.shape[1]):
            W[a, j] += step * s_prev[j]
        for j in range(s_prev.shape[0]):
            s_prev[j] = s_new[j]
        for i in range(n):
            for j in range(obs_dim):
                omega_sum[i, j] += omega_c[i, j]
        out_r[t] = r
        out_a[t] = a
        out_delta[t] = delta
        for i in range(v.shape[0]):
            out_v[t, i] = v[i]
    return phase, npairs, skipped, draws, OK, n_steps


def _code(s_nu):
    hot = np.flatnonzero(s_nu)
    return int(hot[0]) if hot.size else -1


def run_steps(agent: Agent, env: MonsoonWorld, eps, omega_sum):
    """Advance ``agent`` by ``len(eps)`` steps with per-step exploration ``eps``.

    Adds each step's cumulant weights to ``omega_sum`` (one array per GVF)
    and returns per-step ``(reward, action, delta, v)`` arrays.
    """
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    units = agent.units
    n = len(units)
    A = agent.num_actions
    D = units[0].repr.dim if units else 1
    oracle = agent.cfg.variant == "oracle"

    def stack(get, shape):
        out = np.zeros((n, *shape))
        for i, u in enumerate(units):
            x = get(u)
            if x is not None:
                out[i] = x
        return out

    nu = stack(lambda u: u.ps.nu, (D,))
    trace = stack(lambda u: u.ps.trace, (D,))
    pre = stack(lambda u: u.ps.pre_rho_trace, (D,))
    code = np.array([_code(u.s_nu) for u in units], dtype=np.int64)
    gam = np.array([u.gamma for u in units], dtype=np.float64)
    alpha_v = np.array([u.spec.learning_rate for u in units], dtype=np.float64)
    lam = np.array([u.spec.trace_decay for u in units], dtype=np.float64)
    disc_gamma = np.array([u.spec.discount.gamma for u in units], dtype=np.float64)
    soft = np.array([isinstance(u.spec.discount, SoftEchoDiscount) for u in units], dtype=np.bool_)
    learn = np.array([u.learn_meta for u in units], dtype=np.bool_)
    has_pi = np.array([u.meta.omega_pi is not None and u.spec.policy is not None for u in units],
                      dtype=np.bool_)
    omega_c = stack(lambda u: u.meta.omega_c, (2,))
    omega_pi = stack(lambda u: u.meta.omega_pi, (A,))
    sigmoid_act = np.array([u.meta.activation == "sigmoid" for u in units], dtype=np.bool_)
    alpha_c = np.array([u.meta.alpha_c for u in units], dtype=np.float64)
    alpha_pi = np.array([u.meta.alpha_pi for u in units], dtype=np.float64)
    l2 = np.array([u.meta.l2 for u in units], dtype=np.float64)
    h_c = stack(lambda u: None if u.ms is None else u.ms.h_c, (D, 2))
    h_pi = stack(lambda u: None if u.ms is None else u.ms.h_pi, (D, A))
    decay = units[0].ms.decay if units and units[0].ms is not None else 0.0
    propagate = bool(units and units[0].ms is not None and units[0].ms.propagate)
    clip = np.inf if agent.cfg.meta_clip is None else float(agent.cfg.meta_clip)
    if units:
        rep = units[0].repr
        L, base, obs_index = rep.length, rep.base, rep.obs_index
        pairs = np.zeros(L, dtype=np.int64)
        pairs[:len(rep.pairs)] = rep.pairs
        npairs = len(rep.pairs)
    else:
        L, base, obs_index, pairs, npairs = 1, 2 * A, 0, np.zeros(1, dtype=np.int64), 0
    osum = np.array(omega_sum, dtype=np.float64).reshape(n, 2)

    W = agent.control.q.weights
    s_prev = np.array(agent.s, dtype=np.float64)
    T = eps.shape[0]
    out_r = np.zeros(T)
    out_a = np.zeros(T, dtype=np.int64)
    out_delta = np.zeros(T)
    out_v = np.zeros((T, 2 if oracle else n))

    phase, npairs, skipped, draws, status, t = _kernel(
        agent.rng._gen, eps, W, float(agent.control.q.learning_rate), float(agent.control.gamma),
        s_prev, env.phase, env.drought_steps, env.cycle, oracle, agent.learn_meta, learn,
        nu, trace, pre, code, gam, alpha_v, lam, disc_gamma, soft, omega_c, omega_pi, has_pi,
        sigmoid_act, alpha_c, alpha_pi, l2, h_c, h_pi, 1.0 - decay, propagate, clip,
        pairs, npairs, base, obs_index, osum, out_r, out_a, out_delta, out_v)

    # write the state back
    env.phase = int(phase)
    agent.rng.counter += int(draws)
    agent.meta_skipped += int(skipped)
    for i, u in enumerate(units):
        u.ps.nu[...] = nu[i]
        u.ps.trace = trace[i].copy()
        u.ps.pre_rho_trace = pre[i].copy()
        u.s_nu = np.zeros(D)
        if code[i] >= 0:
            u.s_nu[code[i]] = 1.0
        u.ps.value = float(nu[i] @ u.s_nu)
        u.gamma = float(gam[i])
        u.meta.omega_c[...] = omega_c[i]
        if has_pi[i]:
            u.meta.omega_pi[...] = omega_pi[i]
        if u.ms is not None:
            u.ms.h_c[...] = h_c[i]
            if u.ms.h_pi is not None:
                u.ms.h_pi[...] = h_pi[i]
        u.repr.pairs = [int(p) for p in pairs[:npairs]]
    for acc, row in zip(omega_sum, osum):
        acc[...] = row
    agent.s = s_prev
    agent.obs = s_prev[:2].copy()
    if t > 0:
        agent.v = out_v[t - 1].copy()
    if status != OK:
        err = (NonFiniteError("control TD error became non-finite") if status == BAD_DELTA
               else CoverageError("behaviour probability 0 for the taken action"))
        err.step = int(t)
        raise err
    return out_r, out_a, out_delta, out_v
