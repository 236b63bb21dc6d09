"""Feed-forward risk predictor with hand-written reverse mode and AdamW.

The network maps covariates to a scalar log-risk ``beta . g_L(x)`` where
``g_L`` is the last hidden layer. The output layer has no bias: a constant
offset in the log-risk is not identifiable under the partial likelihood.
With no hidden layers the network is the linear predictor ``x . beta``.

All arithmetic is float64. ``forward`` accepts a single covariate vector or a
matrix with one record per row.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, StaleTape

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Architecture:
    p: int
    hidden: tuple = (10, 10, 10)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.p < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def is_linear(self):
        return not self.hidden


@dataclass(eq=False)
class MlpParams:
    """Hidden-layer weights/biases and the bias-free output weights ``beta``.

    ``weights[l]`` has shape (fan_in, fan_out). ``version`` is bumped by every
    in-place update so that stale tapes can be detected.
    """

    architecture: Architecture
    weights: list
    biases: list
    beta: np.ndarray
    version: int = 0

    def __post_init__(self):
        sizes = (self.architecture.p, *self.architecture.hidden)
        if len(self.weights) != len(self.architecture.hidden) or len(self.biases) != len(self.weights):
            raise ShapeMismatch("one weight matrix and one bias per hidden layer required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ShapeMismatch(f"layer {l} has shapes {W.shape}, {b.shape}")
        if self.beta.shape != (sizes[-1],):
            raise ShapeMismatch(f"beta has shape {self.beta.shape}, expected {(sizes[-1],)}")

    def arrays(self):
        """Trainable arrays in a fixed order: W1, b1, ..., WL, bL, beta."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        out.append(self.beta)
        return out

    def copy(self):
        return MlpParams(
            self.architecture,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.beta.copy(),
        )

    def to_dict(self):
        return {
            "architecture": {
                "p": self.architecture.p,
                "hidden": list(self.architecture.hidden),
                "activation": self.architecture.activation,
            },
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        arch = Architecture(**d["architecture"])
        sizes = (arch.p, *arch.hidden)
        weights = [np.array(W, dtype=np.float64).reshape(sizes[l], sizes[l + 1]) for l, W in enumerate(d["weights"])]
        return cls(
            arch,
            weights,
            [np.array(b, dtype=np.float64) for b in d["biases"]],
            np.array(d["beta"], dtype=np.float64),
        )


def init_params(architecture, seed):
    """He-uniform hidden weights, zero biases, small uniform output weights.

    Hidden weights are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)); ``beta``
    from U(-0.1/sqrt(fan_in), 0.1/sqrt(fan_in)). The linear case draws ``beta``
    from the same small range.
    """
    rng = np.random.default_rng(seed)
    sizes = (architecture.p, *architecture.hidden)
    weights, biases = [], []
    for l in range(len(architecture.hidden)):
        bound = np.sqrt(6.0 / sizes[l])
        weights.append(rng.uniform(-bound, bound, size=(sizes[l], sizes[l + 1])))
        biases.append(np.zeros(sizes[l + 1]))
    bound = 0.1 / np.sqrt(sizes[-1])
    beta = rng.uniform(-bound, bound, size=sizes[-1])
    return MlpParams(architecture, weights, biases, beta)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


@dataclass(eq=False)
class Tape:
    params: MlpParams
    version: int
    single: bool
    inputs: list = field(default_factory=list)   # a_{l-1} per hidden layer, then a_L
    preacts: list = field(default_factory=list)  # z_l per hidden layer


def forward(params, x):
    """Return ``(eta, tape)``; ``eta`` is a float for a vector input, else an (N,) array."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != params.architecture.p:
        raise ShapeMismatch(f"expected {params.architecture.p} covariates, got shape {x.shape}")
    tape = Tape(params, params.version, single)
    a = X
    act = params.architecture.activation
    for W, b in zip(params.weights, params.biases):
        tape.inputs.append(a)
        z = a @ W + b
        tape.preacts.append(z)
        a = _act(act, z)
    tape.inputs.append(a)
    eta = a @ params.beta
    return (float(eta[0]) if single else eta), tape


def predict(params, X):
    return forward(params, X)[0]


def backward(tape, upstream):
    """Gradients of ``sum(upstream * eta)``.

    Returns ``(grads, grad_x)`` where ``grads`` follows ``MlpParams.arrays()``.
    """
    params = tape.params
    if params.version != tape.version:
        raise StaleTape("parameters changed since this tape was recorded")
    g = np.asarray(upstream, dtype=np.float64).reshape(-1)
    a_last = tape.inputs[-1]
    if g.shape[0] != a_last.shape[0]:
        raise ShapeMismatch(f"upstream has {g.shape[0]} entries, tape has {a_last.shape[0]} rows")
    act = params.architecture.activation
    grad_beta = a_last.T @ g
    da = np.outer(g, params.beta)
    layer_grads = []
    for l in range(len(params.weights) - 1, -1, -1):
        z = tape.preacts[l]
        dz = da * _act_grad(act, z, tape.inputs[l + 1])
        layer_grads.append((tape.inputs[l].T @ dz, dz.sum(axis=0)))
        da = dz @ params.weights[l].T
    grads = []
    for gW, gb in reversed(layer_grads):
        grads += [gW, gb]
    grads.append(grad_beta)
    grad_x = da[0] if tape.single else da
    return grads, grad_x


@dataclass(eq=False)
class AdamWState:
    """AdamW moments for a list of arrays.

    ``decay`` flags which arrays receive decoupled weight decay; extra trainable
    vectors such as log-frailties are registered with ``decay=False``.
    """

    shapes: list
    decay: list
    lr: float = 0.01
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None

    def __post_init__(self):
        if self.m is None:
            self.m = [np.zeros(s) for s in self.shapes]
            self.v = [np.zeros(s) for s in self.shapes]

    @classmethod
    def for_arrays(cls, arrays, decay=None, **kw):
        decay = [True] * len(arrays) if decay is None else list(decay)
        return cls([a.shape for a in arrays], decay, **kw)


def adamw_step(state, arrays, grads):
    """One AdamW update applied in place to ``arrays``; returns ``arrays``.

    theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta)
    """
    if len(arrays) != len(state.m) or len(grads) != len(arrays):
        raise ShapeMismatch("optimizer state, parameters and gradients differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, (p, g) in enumerate(zip(arrays, grads)):
        if p.shape != state.m[k].shape or np.shape(g) != p.shape:
            raise ShapeMismatch(f"array {k}: parameter {p.shape}, gradient {np.shape(g)}, state {state.m[k].shape}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.decay[k] and state.weight_decay:
            update = update + state.weight_decay * p
        p -= state.lr * update
    return arrays


def bump(params):
    """Mark ``params`` as modified (invalidates outstanding tapes)."""
    params.version += 1
