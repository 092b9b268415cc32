"""Dense-array numerics: layered feedforward nets with hand-derived backward
passes, an Adam optimizer, and a central finite-difference oracle.

Everything is float64. A net's parameters live in one flat vector; each layer
holds reshaped views into it, so in-place updates on the flat vector are
immediately visible to every layer (and vice versa). Nets can also be bound
into a larger caller-owned buffer, which is how a model pair keeps all its
parameters in a single optimizer-ready vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, StateError

# The universal numeric carrier: float64 numpy arrays.
DenseArray = np.ndarray

# Probabilities produced by Sigmoid are clamped into [PROB_CLAMP, 1-PROB_CLAMP]
# so Bernoulli log-masses never see log(0).
PROB_CLAMP = 1e-7

DEFAULT_LEAKY_SLOPE = 0.01


def sigmoid(a: DenseArray) -> DenseArray:
    """Numerically stable elementwise logistic function."""
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def clamped_sigmoid(a: DenseArray) -> DenseArray:
    return np.clip(sigmoid(a), PROB_CLAMP, 1.0 - PROB_CLAMP)


def clamped_sigmoid_vjp(out: DenseArray, grad: DenseArray) -> DenseArray:
    """Backward through clamped-sigmoid given its output. Clamped entries get
    zero gradient, matching what finite differences see."""
    interior = (out > PROB_CLAMP) & (out < 1.0 - PROB_CLAMP)
    return grad * out * (1.0 - out) * interior


def group_softmax(a: DenseArray, n_groups: int, group_size: int) -> DenseArray:
    """Softmax applied independently to consecutive groups of the last axis."""
    shape = a.shape
    g = a.reshape(shape[:-1] + (n_groups, group_size))
    z = g - g.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return p.reshape(shape)


def group_softmax_vjp(out: DenseArray, grad: DenseArray, n_groups: int,
                      group_size: int) -> DenseArray:
    shape = out.shape
    p = out.reshape(shape[:-1] + (n_groups, group_size))
    v = grad.reshape(shape[:-1] + (n_groups, group_size))
    dot = (p * v).sum(axis=-1, keepdims=True)
    return (p * (v - dot)).reshape(shape)


def _as2d(x: DenseArray) -> DenseArray:
    return x[None, :] if x.ndim == 1 else x


class Linear:
    """Affine layer. Weight shape (in_dim, out_dim); forward is x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W: DenseArray | None = None
        self.b: DenseArray | None = None

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim

    def bind(self, flat: DenseArray) -> None:
        w = self.in_dim * self.out_dim
        self.W = flat[:w].reshape(self.in_dim, self.out_dim)
        self.b = flat[w:]

    def init_params(self, rng: np.random.Generator) -> None:
        a = np.sqrt(6.0 / (self.in_dim + self.out_dim))
        self.W[...] = rng.uniform(-a, a, size=self.W.shape)
        self.b[...] = 0.0

    def forward(self, x: DenseArray) -> DenseArray:
        return x @ self.W + self.b

    def backward(self, x_in, x_out, grad_out, param_grad) -> DenseArray:
        x2, g2 = _as2d(x_in), _as2d(grad_out)
        w = self.in_dim * self.out_dim
        np.matmul(x2.T, g2, out=param_grad[:w].reshape(self.in_dim, self.out_dim))
        param_grad[w:] = g2.sum(axis=0)
        return grad_out @ self.W.T


class LeakyReLU:
    def __init__(self, slope: float = DEFAULT_LEAKY_SLOPE):
        self.slope = slope

    @property
    def n_params(self) -> int:
        return 0

    def bind(self, flat):
        pass

    def init_params(self, rng):
        pass

    def forward(self, x: DenseArray) -> DenseArray:
        return np.where(x > 0, x, self.slope * x)

    def backward(self, x_in, x_out, grad_out, param_grad) -> DenseArray:
        return grad_out * np.where(x_in > 0, 1.0, self.slope)


class Tanh:
    @property
    def n_params(self) -> int:
        return 0

    def bind(self, flat):
        pass

    def init_params(self, rng):
        pass

    def forward(self, x: DenseArray) -> DenseArray:
        return np.tanh(x)

    def backward(self, x_in, x_out, grad_out, param_grad) -> DenseArray:
        return grad_out * (1.0 - x_out * x_out)


class Sigmoid:
    """Logistic activation whose output is clamped into [1e-7, 1-1e-7]."""

    @property
    def n_params(self) -> int:
        return 0

    def bind(self, flat):
        pass

    def init_params(self, rng):
        pass

    def forward(self, x: DenseArray) -> DenseArray:
        return clamped_sigmoid(x)

    def backward(self, x_in, x_out, grad_out, param_grad) -> DenseArray:
        return clamped_sigmoid_vjp(x_out, grad_out)


class GroupSoftmax:
    """Concatenation of independent softmaxes: n_groups groups of group_size."""

    def __init__(self, n_groups: int, group_size: int):
        self.n_groups = n_groups
        self.group_size = group_size

    @property
    def n_params(self) -> int:
        return 0

    def bind(self, flat):
        pass

    def init_params(self, rng):
        pass

    def forward(self, x: DenseArray) -> DenseArray:
        return group_softmax(x, self.n_groups, self.group_size)

    def backward(self, x_in, x_out, grad_out, param_grad) -> DenseArray:
        return group_softmax_vjp(x_out, grad_out, self.n_groups, self.group_size)


class LayeredNet:
    """An ordered stack of layers sharing one flat parameter vector.

    forward returns the full activation list [input, out_1, ..., out_L];
    backward consumes that list plus a gradient w.r.t. the final output and
    returns (flat_param_grads, grad_wrt_input). For batched input (rows are
    samples) the parameter gradient is the sum over rows, so callers scale
    grad_output to get means or weighted sums.
    """

    def __init__(self, layers: list, rng: np.random.Generator | None = None,
                 buffer: DenseArray | None = None):
        if not layers or not isinstance(layers[0], Linear):
            raise ShapeError("a net must start with a Linear layer")
        dim = layers[0].in_dim
        for lay in layers:
            if isinstance(lay, Linear):
                if lay.in_dim != dim:
                    raise ShapeError(
                        f"layer expects input width {lay.in_dim}, got {dim}")
                dim = lay.out_dim
            elif isinstance(lay, GroupSoftmax):
                if lay.n_groups * lay.group_size != dim:
                    raise ShapeError(
                        f"GroupSoftmax over {lay.n_groups}x{lay.group_size} "
                        f"needs width {lay.n_groups * lay.group_size}, got {dim}")
        self.layers = layers
        self.in_dim = layers[0].in_dim
        self.out_dim = dim
        self.n_params = sum(lay.n_params for lay in layers)

        if buffer is None:
            buffer = np.zeros(self.n_params)
        elif buffer.shape != (self.n_params,):
            raise ShapeError(
                f"parameter buffer has size {buffer.shape}, need ({self.n_params},)")
        self.params = buffer

        self.param_slices = []
        off = 0
        for lay in layers:
            sl = slice(off, off + lay.n_params)
            self.param_slices.append(sl)
            lay.bind(self.params[sl])
            off += lay.n_params

        if rng is not None:
            for lay in layers:
                lay.init_params(rng)

    def forward(self, x: DenseArray) -> list:
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"input has shape {x.shape}, net expects last dim {self.in_dim}")
        acts = [x]
        for lay in self.layers:
            acts.append(lay.forward(acts[-1]))
        return acts

    def backward(self, activations: list, grad_output: DenseArray):
        if len(activations) != len(self.layers) + 1:
            raise StateError(
                f"activation list has {len(activations)} entries, "
                f"expected {len(self.layers) + 1}")
        if grad_output.shape != activations[-1].shape:
            raise ShapeError(
                f"grad_output shape {grad_output.shape} does not match "
                f"output shape {activations[-1].shape}")
        pgrads = np.zeros(self.n_params)
        g = grad_output
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(
                activations[i], activations[i + 1], g, pgrads[self.param_slices[i]])
        return pgrads, g


@dataclass
class AdamState:
    """First/second moment accumulators for Adam. Minimization convention:
    adam_step moves params against the supplied gradient."""

    m: DenseArray
    v: DenseArray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3

    @classmethod
    def for_size(cls, n: int, lr: float, **kw) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr, **kw)


def adam_step(params: DenseArray, grads: DenseArray, state: AdamState):
    """One Adam update, in place on params. Returns (params, state)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape}, state {state.m.shape} "
            "must all agree")
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient passed to adam_step")
    state.step += 1
    t = state.step
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def finite_diff_grad(scalar_fn, params: DenseArray, eps: float = 1e-5) -> DenseArray:
    """Central-difference gradient of scalar_fn at params.

    Perturbs params in place and restores each coordinate, so scalar_fn may
    simply close over the array (e.g. a net's flat parameter vector).
    """
    grad = np.zeros(params.size)
    flat = params.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = scalar_fn(params)
        flat[i] = orig - eps
        f_minus = scalar_fn(params)
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    if not np.isfinite(grad).all():
        raise NumericError("finite differences produced non-finite values")
    return grad.reshape(params.shape)
