"""Small dense-network toolkit with hand-written reverse-mode gradients.

Everything here works on 2-D numpy arrays of shape ``(batch, features)``.
Layers cache what they need from the most recent forward call, so a layer
must be forwarded exactly once before each ``backward``.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "identity")


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class OptimizerError(FloatingPointError):
    pass


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Dense:
    """Affine map followed by an elementwise activation: ``act(x @ W + b)``."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "tanh",
                 rng: np.random.Generator | None = None, dtype=np.float64):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.W = glorot_uniform(in_dim, out_dim, rng, dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected (batch, {self.in_dim}) input, got {x.shape}")
        pre = x @ self.W + self.b
        if self.activation == "tanh":
            y = np.tanh(pre)
        elif self.activation == "sigmoid":
            y = sigmoid(pre)
        else:
            y = pre
        if cache:
            self._cache = (x, y)
        return y

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(input_grad, weight_grad, bias_grad)`` for the cached batch."""
        if self._cache is None:
            raise StateError("backward called before forward")
        x, y = self._cache
        if grad_out.shape != y.shape:
            raise ShapeError(f"upstream grad {grad_out.shape} does not match output {y.shape}")
        if self.activation == "tanh":
            g = grad_out * (1.0 - y * y)
        elif self.activation == "sigmoid":
            g = grad_out * y * (1.0 - y)
        else:
            g = grad_out
        return g @ self.W.T, x.T @ g, g.sum(axis=0)


def dense_forward(x: np.ndarray, layer: Dense) -> np.ndarray:
    return layer.forward(x)


def dense_backward(upstream: np.ndarray, layer: Dense) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return layer.backward(upstream)


class Dropout:
    """Inverted dropout; identity when not training."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool, rng: np.random.Generator | None,
                cache: bool = True) -> np.ndarray:
        out, mask = dropout_apply(x, self.rate, training, rng)
        if cache:
            self._mask = mask
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise StateError("backward called before forward")
        return grad_out * self._mask


def dropout_apply(x: np.ndarray, rate: float, training: bool,
                  rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(output, mask)``; the mask already carries the 1/(1-rate) scale."""
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


class MLP:
    """Stack of Dense layers with dropout after every layer except the last."""

    def __init__(self, widths: Sequence[int], activations: Sequence[str], dropout: float = 0.0,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        if len(widths) != len(activations) + 1:
            raise ValueError("need one activation per layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [Dense(a, b, act, rng, dtype)
                       for a, b, act in zip(widths[:-1], widths[1:], activations)]
        self.drops = [Dropout(dropout) for _ in self.layers[:-1]]

    @property
    def dropout(self) -> float:
        return self.drops[0].rate if self.drops else 0.0

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.W"] = layer.W
            out[f"{i}.b"] = layer.b
        return out

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None, cache: bool = True) -> np.ndarray:
        """``cache=False`` leaves the network untouched, so frozen nets can be shared."""
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, cache)
            if i < len(self.drops):
                h = self.drops[i].forward(h, training, rng, cache)
        return h

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        grads: dict[str, np.ndarray] = {}
        g = grad_out
        for i in reversed(range(len(self.layers))):
            if i < len(self.drops):
                g = self.drops[i].backward(g)
            g, gW, gb = self.layers[i].backward(g)
            grads[f"{i}.W"] = gW
            grads[f"{i}.b"] = gb
        return g, grads


def mse_loss(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared error summed over features, averaged over records.

    Returns the loss and its gradient with respect to ``x_hat``.
    """
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    n = x.shape[0]
    diff = x - x_hat
    return float(np.sum(diff * diff) / n), -2.0 * diff / n


def bce_loss(y: np.ndarray, p: np.ndarray, eps: float = 1e-7) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 targets ``y``."""
    if y.shape != p.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {p.shape}")
    q = np.clip(p, eps, 1 - eps)
    n = y.shape[0]
    loss = -np.sum(y * np.log(q) + (1 - y) * np.log(1 - q)) / n
    return float(loss), (q - y) / (q * (1 - q)) / n


class Adam:
    """Bias-corrected Adam over a dict of named parameter arrays (updated in place)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = {k: 0 for k in params}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """Update every parameter named in ``grads``; others are left untouched."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient for parameter block {name!r}")
        for name, g in grads.items():
            p = self.params[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
            t = self.steps[name] + 1
            self.steps[name] = t
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: Adam) -> None:
    opt.step(grads)


def numerical_gradcheck(loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
                        params: dict[str, np.ndarray], h: float = 1e-5,
                        names: Iterable[str] | None = None) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_and_grads`` must be deterministic and read the arrays in ``params``
    (which are perturbed in place and restored).
    """
    _, analytic = loss_and_grads()
    worst = 0.0
    for name in names if names is not None else analytic:
        p = params[name]
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grads()
            flat[i] = orig - h
            down, _ = loss_and_grads()
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def gradcheck(net: MLP, x: np.ndarray, target: np.ndarray | None = None,
              training: bool = False, h: float = 1e-5) -> float:
    """Finite-difference check of an MLP under MSE loss (or sum of outputs without target).

    Rejects networks whose forward pass is stochastic.
    """
    if training and net.dropout > 0:
        raise ValueError("gradcheck needs a deterministic forward pass; disable dropout")
    if x.dtype != np.float64:
        raise ValueError("gradcheck requires float64 inputs")
    params = {}
    for i, layer in enumerate(net.layers):
        params[f"{i}.W"] = layer.W
        params[f"{i}.b"] = layer.b

    def f():
        out = net.forward(x, training=False)
        if target is None:
            loss, g = float(out.sum()), np.ones_like(out)
        else:
            loss, g = mse_loss(target, out)
        _, grads = net.backward(g)
        return loss, grads

    return numerical_gradcheck(f, params, h)
