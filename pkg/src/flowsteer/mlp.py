"""Dense time-conditioned MLP with an optional score head, written in NumPy.

The network maps ``concat(x, t)`` through a shared trunk of hidden layers to a
velocity head and, optionally, a score head of the same dimension.  Forward and
backward passes are explicit so training is reproducible to the bit and the
parameters can be serialised as plain decimal text.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

CHECKPOINT_FORMAT = "flowsteer-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "silu")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return z / (1.0 + np.exp(-z))


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


@dataclass
class VelocityModel:
    """Velocity field ``v(x, t)`` with an optional score head ``s(x, t)``.

    ``weights[i]`` has shape ``(fan_in, fan_out)``; the last trunk layer feeds
    both heads.  Evaluation is a pure function of the inputs and parameters.
    """

    dim: int
    hidden: tuple[int, ...]
    activation: str = "silu"
    score_head: bool = False
    schedule: str = "ot"
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ConfigError("dim and every hidden width must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        expected = self.layer_shapes()
        if self.weights:
            got = [w.shape for w in self.weights]
            if got != expected:
                raise ConfigError(f"weight shapes {got} do not match architecture {expected}")

    @classmethod
    def init(cls, dim, hidden=(128, 128, 128, 128), activation="silu", score_head=False, rng=None):
        """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        rng = np.random.default_rng(rng)
        model = cls(dim, tuple(hidden), activation, score_head)
        for fan_in, fan_out in model.layer_shapes():
            bound = 1.0 / np.sqrt(fan_in)
            model.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            model.biases.append(rng.uniform(-bound, bound, size=fan_out))
        return model

    def layer_shapes(self):
        sizes = [self.dim + 1, *self.hidden]
        shapes = list(zip(sizes[:-1], sizes[1:]))
        shapes.append((sizes[-1], self.dim))
        if self.score_head:
            shapes.append((sizes[-1], self.dim))
        return shapes

    @property
    def n_trunk(self):
        return len(self.hidden)

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return np.concatenate([x, t[:, None]], axis=1)

    def forward(self, x, t, cache=False):
        """Return ``(v, s, cache)``; ``s`` is None without a score head."""
        h = self._inputs(x, t)
        acts, pres = [h], []
        for i in range(self.n_trunk):
            z = h @ self.weights[i] + self.biases[i]
            h = _act(self.activation, z)
            pres.append(z)
            acts.append(h)
        k = self.n_trunk
        v = h @ self.weights[k] + self.biases[k]
        s = h @ self.weights[k + 1] + self.biases[k + 1] if self.score_head else None
        return v, s, ((acts, pres) if cache else None)

    def velocity(self, x, t):
        return self.forward(x, t)[0]

    def score(self, x, t):
        if not self.score_head:
            raise ConfigError("model was built without a score head")
        return self.forward(x, t)[1]

    def __call__(self, x, t):
        return self.velocity(x, t)

    def backward(self, cache, grad_v, grad_s=None):
        """Gradients of a scalar loss given its gradients w.r.t. the head outputs."""
        acts, pres = cache
        k = self.n_trunk
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        top = acts[-1]
        gw[k] = top.T @ grad_v
        gb[k] = grad_v.sum(axis=0)
        g = grad_v @ self.weights[k].T
        if self.score_head:
            grad_s = np.zeros_like(grad_v) if grad_s is None else grad_s
            gw[k + 1] = top.T @ grad_s
            gb[k + 1] = grad_s.sum(axis=0)
            g = g + grad_s @ self.weights[k + 1].T
        for i in reversed(range(k)):
            g = g * _act_grad(self.activation, pres[i], acts[i + 1])
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return gw, gb

    def parameters(self):
        return [*self.weights, *self.biases]

    def checksum(self):
        """SHA-256 over the raw float64 bytes of every parameter."""
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        return h.hexdigest()

    # -- checkpoint text format ------------------------------------------------

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "schedule": self.schedule,
            "dim": self.dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "score_head": self.score_head,
            "layers": [
                {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError("not a flowsteer checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
        weights = [np.array(L["weight"], dtype=float).reshape(L["shape"]) for L in doc["layers"]]
        biases = [np.array(L["bias"], dtype=float) for L in doc["layers"]]
        return cls(
            dim=doc["dim"],
            hidden=tuple(doc["hidden"]),
            activation=doc["activation"],
            score_head=doc["score_head"],
            schedule=doc.get("schedule", "ot"),
            weights=weights,
            biases=biases,
        )

    def save(self, path):
        # json writes floats with repr(), i.e. shortest round-tripping decimal (up to 17 digits)
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class Adam:
    """Adaptive moment estimation over a list of arrays, updated in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
