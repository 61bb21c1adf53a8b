"""Numeric substrate shared by every learner.

Linear and small feed-forward action-value functions with exact
reverse-mode gradients, plus a seeded random stream. Everything is
float64.
"""
from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """A learner or environment was wired with inconsistent dimensions or ids."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached a boundary check."""


def as_features(values, dim=None, name="features"):
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigurationError(f"{name} must be a flat vector, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ConfigurationError(f"{name} has length {x.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return x


class Rng:
    """Seeded stream backed by PCG64 (128-bit LCG state, 64-bit XSL-RR output).

    The raw 64-bit outputs are fixed by the PCG64 algorithm and numpy's
    SeedSequence expansion of ``seed``, so a seed gives the same stream on
    every platform.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._bits = np.random.PCG64(self.seed)
        self._gen = np.random.Generator(self._bits)
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        self.counter += n
        return self._bits.random_raw(n)

    def random(self) -> float:
        self.counter += 1
        return float(self._gen.random())

    def integers(self, high: int, size=None):
        self.counter += 1 if size is None else int(np.prod(size))
        return self._gen.integers(0, high, size=size)

    def normal(self, size=None, scale=1.0):
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size=size)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, deterministic in (seed, key)."""
        return Rng((self.seed * 1_000_003 + key * 7919 + 1) % 2**64)


class LinearQ:
    """Q(s, a) = weights[a] . s, trained by semi-gradient steps."""

    def __init__(self, num_actions: int, state_dim: int, learning_rate: float):
        self.weights = np.zeros((num_actions, state_dim))
        self.learning_rate = float(learning_rate)

    @property
    def num_actions(self):
        return self.weights.shape[0]

    @property
    def state_dim(self):
        return self.weights.shape[1]

    def values(self, s):
        if s.shape[-1] != self.state_dim:
            raise ConfigurationError(
                f"state has length {s.shape[-1]}, LinearQ expects {self.state_dim}")
        return self.weights @ s

    def update(self, s, a: int, delta: float):
        if not np.isfinite(delta):
            raise NonFiniteError(f"non-finite TD error {delta!r}")
        self.weights[a] += self.learning_rate * delta * s

    def input_grad(self, s, a: int):
        """dQ(s, a)/ds."""
        return self.weights[a].copy()


def linear_q_values(q: LinearQ, s):
    return q.values(s)


def linear_q_update(q: LinearQ, s, a: int, delta: float):
    q.update(s, a, delta)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        # bias corrections folded into the step size
        step = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= step * m / (np.sqrt(v) + self.eps)


class MlpQ:
    """Feed-forward action-value network: ReLU hidden layers, linear output.

    ``hidden=()`` gives a single affine layer, i.e. a linear Q-function with
    bias. Inputs may be a single vector ``(d,)`` or a batch ``(B, d)``.
    """

    def __init__(self, input_dim: int, num_actions: int, hidden=(64, 64),
                 learning_rate: float = 1e-4, rng: Rng | None = None):
        sizes = [input_dim, *hidden, num_actions]
        self._alloc(sizes)
        if rng is not None:
            for w, fan_in, fan_out in zip(self.weights, sizes[:-1], sizes[1:]):
                # Glorot-uniform, as in flax Dense defaults
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w[...] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        self.hidden = tuple(hidden)
        self.optimizer = Adam(learning_rate)

    def _alloc(self, sizes):
        # every parameter is a view into one flat buffer, so the optimiser
        # updates them all with a handful of vector operations
        pairs = list(zip(sizes[:-1], sizes[1:]))
        self.flat = np.zeros(sum(i * o + o for i, o in pairs))
        self.weights, self.biases = [], []
        k = 0
        for fan_in, fan_out in pairs:
            self.weights.append(self.flat[k:k + fan_in * fan_out].reshape(fan_in, fan_out))
            k += fan_in * fan_out
        for _, fan_out in pairs:
            self.biases.append(self.flat[k:k + fan_out])
            k += fan_out

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def num_actions(self):
        return self.weights[-1].shape[1]

    def params(self):
        return [*self.weights, *self.biases]

    def copy_from(self, other: "MlpQ"):
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def clone(self) -> "MlpQ":
        twin = MlpQ.__new__(MlpQ)
        twin._alloc([self.input_dim, *self.hidden, self.num_actions])
        twin.copy_from(self)
        twin.hidden = self.hidden
        twin.optimizer = Adam(self.optimizer.lr)
        return twin

    def forward(self, s):
        if s.shape[-1] != self.input_dim:
            raise ConfigurationError(
                f"input has length {s.shape[-1]}, network expects {self.input_dim}")
        tape = [s]
        x = s
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = x @ w + b
            x = z if i == last else np.maximum(z, 0.0)
            tape.append(x)
        return x, tape

    def values(self, s):
        return self.forward(s)[0]

    def backward(self, tape, output_grad):
        """Gradients of sum(output_grad * q) w.r.t. parameters and the input.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        :meth:`params`.
        """
        n = len(self.weights)
        dw = [None] * n
        db = [None] * n
        g = np.asarray(output_grad, dtype=np.float64)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                # ReLU gate; tape[i + 1] is the post-activation of layer i
                g = g * (tape[i + 1] > 0.0)
            x = tape[i]
            if g.ndim == 1:
                dw[i] = np.outer(x, g)
                db[i] = g
            else:
                dw[i] = x.T @ g
                db[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return [*dw, *db], g

    def input_grad(self, s, a: int):
        _, tape = self.forward(s)
        out = np.zeros(self.num_actions)
        out[a] = 1.0
        return self.backward(tape, out)[1]

    def apply_gradients(self, grads):
        flat_grad = np.concatenate([g.ravel() for g in grads])
        self.optimizer.step([self.flat], [flat_grad])


def mlp_forward(net: MlpQ, s):
    return net.forward(s)


def mlp_backward(net: MlpQ, tape, output_grad):
    return net.backward(tape, output_grad)
