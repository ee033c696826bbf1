"""
Minimal neural-network stack for the classical stages.

Layers work on float64 numpy arrays ("tensors": row-major arrays whose shape
product equals their size) and record what they need during `forward` so that
`backward` can return exact reverse-mode gradients.

    DenseLayer: activation(W x + b), optionally spectrally normalized
    Conv3DLayer: valid 3D convolution over (batch, channel, D, H, W) inputs
    Sequential: ordered layer container with parameter/state-dict plumbing
    AdamState / adam_step: Adam with bias correction

The activation set is {none, leaky_relu, tanh}; the LeakyReLU slope is 0.01
everywhere. Weights are initialized uniform in +-sqrt(6 / fan_in) from a
caller-supplied generator, so every network is a function of its seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from .exceptions import ContractViolation, NumericalError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
ACTIVATIONS = ('none', 'leaky_relu', 'tanh')
SIGMA_FLOOR = 1e-12


def check_finite(array, name):
    if not np.all(np.isfinite(array)):
        raise NumericalError(f'non-finite values in {name}', {'block': name})
    return array


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_backward(probs, grad_probs, axis=-1):
    """Vector-Jacobian product of softmax given its output."""
    inner = np.sum(grad_probs * probs, axis=axis, keepdims=True)
    return probs * (grad_probs - inner)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = logits.shape[0]
    log_probs = log_softmax(logits, axis=1)
    loss = -float(np.mean(log_probs[np.arange(n), labels]))
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _activate(kind, pre):
    if kind == 'leaky_relu':
        return leaky_relu(pre)
    if kind == 'tanh':
        return np.tanh(pre)
    return pre


def _activation_grad(kind, pre, out):
    if kind == 'leaky_relu':
        return np.where(pre > 0, 1.0, LEAKY_SLOPE)
    if kind == 'tanh':
        return 1.0 - out ** 2
    return np.ones_like(pre)


@dataclass
class SpectralNorm:
    weights: np.ndarray
    sigma: float
    u: np.ndarray
    v: np.ndarray


def top_singular_vector(weights):
    """Exact left singular vector of the largest singular value."""
    left, _, _ = linalg.svd(np.atleast_2d(weights), full_matrices=False)
    return left[:, 0]


def spectral_normalize(weights, iterations=5, u=None):
    """
    W / sigma, with sigma the top singular value estimated by power iteration.

    `u` is the persistent left vector from a previous call. Without one the
    iteration starts from the exact top singular vector, so a cold call is
    already converged.

    Returns:
        SpectralNorm whose `weights` is the normalized matrix; `sigma`, `u`
        and `v` are the estimate and the vectors to carry into the next call.
    """
    if iterations < 1:
        raise ContractViolation(f'power iterations must be >= 1, got {iterations}')
    weights = np.asarray(weights, dtype=float)
    if u is None:
        u = top_singular_vector(weights)
    u = u / max(np.linalg.norm(u), SIGMA_FLOOR)
    v = np.zeros(weights.shape[1])
    for _ in range(iterations):
        v = weights.T @ u
        v = v / max(np.linalg.norm(v), SIGMA_FLOOR)
        u = weights @ v
        u = u / max(np.linalg.norm(u), SIGMA_FLOOR)
    sigma = max(float(u @ weights @ v), SIGMA_FLOOR)
    return SpectralNorm(weights / sigma, sigma, u, v)


class Layer:
    trainable = True

    def __init__(self):
        self._cache = None

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def _recorded(self):
        if self._cache is None:
            raise ContractViolation(f'{type(self).__name__}.backward called before forward')
        return self._cache


class DenseLayer(Layer):
    def __init__(self, in_features, out_features, activation='none', rng=None,
                 spectral_norm=False, sn_iterations=5, trainable=True):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ContractViolation(f'unknown activation {activation!r}')
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self.trainable = trainable
        self.weights = he_uniform(rng, (out_features, in_features), in_features)
        self.bias = np.zeros(out_features)
        self.spectral_norm = spectral_norm
        self.sn_iterations = sn_iterations
        self.sn_u = top_singular_vector(self.weights) if spectral_norm else None
        self.sn_update = True

    @classmethod
    def from_arrays(cls, weights, bias, activation='none', spectral_norm=False):
        weights = np.array(weights, dtype=float)
        bias = np.array(bias, dtype=float)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ContractViolation(f'inconsistent dense shapes {weights.shape} / {bias.shape}')
        layer = cls(weights.shape[1], weights.shape[0], activation, spectral_norm=spectral_norm)
        layer.weights, layer.bias = weights, bias
        if spectral_norm:
            layer.sn_u = top_singular_vector(weights)
        return layer

    def effective_weights(self, update=True):
        if not self.spectral_norm:
            return self.weights, None
        normed = spectral_normalize(self.weights, self.sn_iterations, self.sn_u)
        if update:
            self.sn_u = normed.u
        return normed.weights, normed

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_features:
            raise ContractViolation(f'dense layer expects {self.in_features} inputs, got {x.shape[-1]}')
        check_finite(x, 'dense input')
        weights, normed = self.effective_weights(self.sn_update)
        pre = x @ weights.T + self.bias
        out = _activate(self.activation, pre)
        self._cache = (x, pre, out, weights, normed)
        return out

    def backward(self, grad_out):
        x, pre, out, weights, normed = self._recorded()
        grad_pre = grad_out * _activation_grad(self.activation, pre, out)
        grad_in = grad_pre @ weights
        if not self.trainable:
            return grad_in, {}
        x2, g2 = x.reshape(-1, self.in_features), grad_pre.reshape(-1, self.out_features)
        grad_w = self._weight_grad(g2.T @ x2, weights, normed)
        return grad_in, {'weights': grad_w, 'bias': g2.sum(axis=0)}

    def _weight_grad(self, grad_effective, weights, normed):
        if normed is None:
            return grad_effective
        # sigma = u^T W v with u, v held constant
        inner = np.sum(grad_effective * weights)
        return (grad_effective - inner * np.outer(normed.u, normed.v)) / normed.sigma

    def parameters(self):
        if not self.trainable:
            return {}
        return {'weights': self.weights, 'bias': self.bias}

    def buffers(self):
        return {} if self.sn_u is None else {'sn_u': self.sn_u}


class Conv3DLayer(Layer):
    """Valid (unpadded) 3D convolution without bias; output dims floor((d - k) / s) + 1."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, trainable=True, rng=None):
        super().__init__()
        if kernel_size < 1 or stride < 1:
            raise ContractViolation(f'kernel size and stride must be >= 1, got {kernel_size}, {stride}')
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.trainable = trainable
        fan_in = in_channels * kernel_size ** 3
        self.kernels = he_uniform(rng, (out_channels, in_channels) + (kernel_size,) * 3, fan_in)

    def output_shape(self, spatial):
        k, s = self.kernel_size, self.stride
        return tuple((dim - k) // s + 1 for dim in spatial)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 4
        if squeeze:
            x = x[None]
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise ContractViolation(
                f'conv3d expects (batch, {self.in_channels}, D, H, W), got {x.shape}'
            )
        if min(x.shape[2:]) < self.kernel_size:
            raise ContractViolation(f'kernel {self.kernel_size} larger than input {x.shape[2:]}')
        check_finite(x, 'conv3d input')
        k, s = self.kernel_size, self.stride
        windows = sliding_window_view(x, (k, k, k), axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
        out = np.tensordot(windows, self.kernels, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        out = np.moveaxis(out, -1, 1)
        self._cache = (x.shape, windows, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        in_shape, windows, squeeze = self._recorded()
        grad_out = grad_out[None] if squeeze else grad_out
        k, s = self.kernel_size, self.stride
        o_d, o_h, o_w = grad_out.shape[2:]
        grad_in = np.zeros(in_shape)
        for i in range(k):
            for j in range(k):
                for m in range(k):
                    grad_in[:, :, i:i + s * (o_d - 1) + 1:s, j:j + s * (o_h - 1) + 1:s,
                            m:m + s * (o_w - 1) + 1:s] += np.einsum(
                        'bodhw,oc->bcdhw', grad_out, self.kernels[:, :, i, j, m])
        grad_in = grad_in[0] if squeeze else grad_in
        if not self.trainable:
            return grad_in, {}
        grad_k = np.tensordot(grad_out, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        return grad_in, {'kernels': grad_k}

    def parameters(self):
        return {'kernels': self.kernels} if self.trainable else {}

    def buffers(self):
        return {} if self.trainable else {'kernels': self.kernels}


class Flatten(Layer):
    """(B, ...) -> (B, features)."""

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._recorded()), {}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)
        self.input_grad = None
        self._forwarded = False

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        self._forwarded = True
        return x

    __call__ = forward

    def backward(self, loss_grad):
        """
        Reverse pass from d(loss)/d(output). Returns parameter gradients keyed
        like `parameters()`; the gradient w.r.t. the input is kept in
        `input_grad`.
        """
        if not self._forwarded:
            raise ContractViolation('backward called before forward')
        grads = {}
        grad = np.asarray(loss_grad, dtype=float)
        for index in range(len(self.layers) - 1, -1, -1):
            grad, layer_grads = self.layers[index].backward(grad)
            for name, value in layer_grads.items():
                grads[f'{index}.{name}'] = value
        self.input_grad = grad
        return grads

    def parameters(self):
        return {
            f'{index}.{name}': value
            for index, layer in enumerate(self.layers)
            for name, value in layer.parameters().items()
        }

    def n_parameters(self):
        return int(sum(value.size for value in self.parameters().values()))

    def state_arrays(self):
        """Parameters and buffers keyed '<layer index>.<name>', as live arrays."""
        return {
            f'{index}.{name}': value
            for index, layer in enumerate(self.layers)
            for name, value in {**layer.parameters(), **layer.buffers()}.items()
        }

    def state_dict(self):
        return {key: value.tolist() for key, value in self.state_arrays().items()}

    def load_state_dict(self, state):
        for index, layer in enumerate(self.layers):
            for name, current in {**layer.parameters(), **layer.buffers()}.items():
                key = f'{index}.{name}'
                if key not in state:
                    raise ContractViolation(f'missing {key} in state dict')
                value = np.asarray(state[key], dtype=float)
                if value.shape != current.shape:
                    raise ContractViolation(f'{key}: shape {value.shape} != {current.shape}')
                current[...] = value

    def gradient_penalty(self, x):
        """
        Input-gradient norms of a scalar critic and the exact parameter
        gradient of mean((||dD/dx|| - 1)^2).

        Only stacks of DenseLayers with 'none'/'leaky_relu' activations are
        supported: their activation derivatives are piecewise constant, so the
        input gradient is linear in each weight matrix for fixed masks.

        Returns:
            tuple: (input gradients (B, F), norms (B,), penalty, parameter grads)
        """
        for layer in self.layers:
            if not isinstance(layer, DenseLayer) or layer.activation == 'tanh':
                raise ContractViolation('gradient penalty needs dense layers with piecewise-linear activations')
        if self.layers[-1].out_features != 1:
            raise ContractViolation('gradient penalty needs a scalar critic')
        self.forward(x)
        caches = [layer._recorded() for layer in self.layers]
        masks = [_activation_grad(layer.activation, c[1], c[2]) for layer, c in zip(self.layers, caches)]
        weights = [c[3] for c in caches]
        n_layers = len(self.layers)

        deltas = [None] * n_layers
        deltas[-1] = masks[-1]
        gamma = None
        for index in range(n_layers - 1, -1, -1):
            gamma = deltas[index] @ weights[index]
            if index > 0:
                deltas[index - 1] = masks[index - 1] * gamma
        norms = np.linalg.norm(gamma, axis=1)
        penalty = float(np.mean((norms - 1.0) ** 2))

        scale = 2.0 * (norms - 1.0) / np.maximum(norms, SIGMA_FLOOR) / gamma.shape[0]
        back = scale[:, None] * gamma
        grads = {}
        for index, layer in enumerate(self.layers):
            grad_effective = deltas[index].T @ back
            if layer.trainable:
                grads[f'{index}.weights'] = layer._weight_grad(grad_effective, weights[index], caches[index][4])
                grads[f'{index}.bias'] = np.zeros_like(layer.bias)
            if index < n_layers - 1:
                back = masks[index] * (back @ weights[index].T)
        return gamma, norms, penalty, grads


def mlp(sizes, rng, hidden_activation='leaky_relu', output_activation='none', spectral_norm=False):
    """Dense stack sizes[0] -> ... -> sizes[-1]."""
    layers = []
    for index, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = index == len(sizes) - 2
        layers.append(DenseLayer(
            n_in, n_out,
            output_activation if last else hidden_activation,
            rng=rng,
            spectral_norm=spectral_norm,
        ))
    return Sequential(layers)


def add_grads(*grad_dicts):
    total = {}
    for grads in grad_dicts:
        for name, value in grads.items():
            total[name] = total[name] + value if name in total else np.array(value, dtype=float)
    return total


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = {name: np.zeros_like(value) for name, value in params.items()}
        state.v = {name: np.zeros_like(value) for name, value in params.items()}
        return state

    def state_dict(self):
        return {
            'step': self.step,
            'm': {name: value.tolist() for name, value in self.m.items()},
            'v': {name: value.tolist() for name, value in self.v.items()},
        }

    def load_state_dict(self, state):
        self.step = int(state['step'])
        self.m = {name: np.asarray(value, dtype=float) for name, value in state['m'].items()}
        self.v = {name: np.asarray(value, dtype=float) for name, value in state['v'].items()}


def adam_step(state, params, grads, lr):
    """Update `params` in place (bias-corrected Adam) and return them."""
    for name, grad in grads.items():
        if name not in params:
            raise ContractViolation(f'gradient for unknown parameter block {name}')
        if np.shape(grad) != params[name].shape:
            raise ContractViolation(f'{name}: gradient shape {np.shape(grad)} != {params[name].shape}')
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f'non-finite gradient in parameter block {name}', {'block': name})
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * grad ** 2
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
