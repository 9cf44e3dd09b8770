"""Dense multi-layer perceptrons with hand-written reverse-mode gradients.

Everything runs on float64 numpy arrays. Inputs may be a single vector of
shape ``(d,)`` or a batch of shape ``(n, d)``; outputs follow the same
convention.
"""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh")

# One array per parameter, ordered [W0, b0, W1, b1, ...] like Mlp.params.
Gradients = list


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    """Raised when an update would write non-finite values into a network."""


class Mlp:
    """Fully connected network with a linear output layer.

    Weights are stored as ``(fan_in, fan_out)`` so that ``x @ W + b`` maps
    a batch of row vectors.
    """

    def __init__(self, widths, activation="relu", rng=None, zero=False):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        n_hidden = len(widths) - 2
        if isinstance(activation, str):
            activation = [activation] * n_hidden
        activation = list(activation)
        if len(activation) != n_hidden:
            raise ValueError("need one activation per hidden layer")
        for act in activation:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.widths = widths
        self.activations = activation
        if rng is None:
            rng = np.random.default_rng(0)
        self.params = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if zero:
                W = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
            self.params += [W, b]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.widths = list(self.widths)
        other.activations = list(self.activations)
        other.params = [p.copy() for p in self.params]
        return other

    def same_architecture(self, other):
        return self.widths == other.widths and self.activations == other.activations

    def forward(self, x):
        return self.forward_cached(x)[0]

    __call__ = forward

    def forward_cached(self, x):
        """Evaluate the network and keep the intermediates backward() needs."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.widths[0]:
            raise ShapeError(f"expected input width {self.widths[0]}, got shape {x.shape}")
        inputs, hidden = [], []
        n = self.n_layers
        for i in range(n):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            z = h @ W
            z += b
            if i < n - 1:
                if self.activations[i] == "relu":
                    h = np.maximum(z, 0.0, out=z)
                else:
                    h = np.tanh(z, out=z)
                hidden.append(h)
            else:
                h = z
        out = h[0] if single else h
        return out, (single, inputs, hidden)

    def backward(self, cache, output_grad, param_grads=True):
        """Gradients of <output, output_grad> w.r.t. parameters and input.

        Returns ``(grads, input_grad)`` where ``grads`` mirrors ``params``
        (``None`` when ``param_grads`` is off and only the input gradient is
        wanted).
        """
        single, inputs, hidden = cache
        g = np.asarray(output_grad, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != (inputs[0].shape[0], self.widths[-1]):
            raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match output")
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                h = hidden[i]
                if self.activations[i] == "relu":
                    g *= h > 0.0
                else:
                    g *= 1.0 - h * h
            if param_grads:
                grads[2 * i] = inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return (grads if param_grads else None), (g[0] if single else g)


def forward(net, x):
    return net.forward(x)


def backward(net, x, output_grad):
    """Reverse-mode gradients of <net(x), output_grad>.

    Recomputes the forward pass; use ``Mlp.forward_cached`` plus
    ``Mlp.backward`` to avoid that in hot loops.
    """
    _, cache = net.forward_cached(x)
    return net.backward(cache, output_grad)


def _check_grads(params, grads):
    if len(params) != len(grads):
        raise ShapeError("gradient list does not match parameter list")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(
                f"{bad} non-finite gradient entries in a parameter of shape {p.shape}"
            )


class Adam:
    """Adam moments for a fixed list of parameter arrays.

    The moments live in two flat vectors so one step is a handful of
    vectorized operations regardless of how many arrays the network has.
    """

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.shapes = [p.shape for p in params]
        self.offsets = np.cumsum([0] + [p.size for p in params])
        self.m_flat = np.zeros(self.offsets[-1])
        self.v_flat = np.zeros(self.offsets[-1])

    def _split(self, flat):
        return [flat[a:b].reshape(shape)
                for a, b, shape in zip(self.offsets[:-1], self.offsets[1:], self.shapes)]

    @property
    def m(self):
        return self._split(self.m_flat)

    @property
    def v(self):
        return self._split(self.v_flat)

    def step(self, params, grads, lr=None):
        """Update ``params`` in place."""
        if len(grads) != len(self.shapes):
            raise ShapeError("gradient list does not match parameter list")
        g = np.concatenate([np.ravel(x) for x in grads])
        if g.size != self.m_flat.size:
            raise ShapeError("gradient sizes do not match the parameters")
        if not np.all(np.isfinite(g)):
            _check_grads(params, grads)
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        m, v = self.m_flat, self.v_flat
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        g *= g
        g *= 1.0 - b2
        v += g
        # step = lr * (m / c1) / (sqrt(v / c2) + eps), written with one temporary
        step = np.sqrt(v)
        step *= 1.0 / np.sqrt(1.0 - b2**self.t)
        step += self.eps
        np.divide(m, step, out=step)
        step *= lr / (1.0 - b1**self.t)
        for p, upd in zip(params, self._split(step)):
            if p.shape != upd.shape:
                raise ShapeError(f"parameter shape {p.shape} != optimizer shape {upd.shape}")
            p -= upd

    def state_arrays(self):
        return self.m + self.v

    def load_state_arrays(self, arrays, t):
        n = len(self.shapes)
        self.m_flat = np.concatenate([np.ravel(a) for a in arrays[:n]]).astype(np.float64)
        self.v_flat = np.concatenate([np.ravel(a) for a in arrays[n:]]).astype(np.float64)
        self.t = int(t)


def sgd_step(net, grads, learning_rate, optimizer=None):
    """One descent step on ``net`` in place; returns ``net``.

    Without an optimizer this is plain ``p -= lr * g``; with an ``Adam``
    instance the step uses its moments.
    """
    if learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    if optimizer is not None:
        optimizer.step(net.params, grads, lr=learning_rate)
        return net
    _check_grads(net.params, grads)
    for p, g in zip(net.params, grads):
        p -= learning_rate * g
    return net


def polyak_update(target, online, tau):
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if not target.same_architecture(online):
        raise ShapeError("target and online networks differ in architecture")
    for pt, po in zip(target.params, online.params):
        pt *= 1.0 - tau
        pt += tau * po
    return target
