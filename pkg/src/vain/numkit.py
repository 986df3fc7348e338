"""Dense float64 numerics with hand-written gradients.

Everything here works on plain ``np.ndarray`` (rows = samples).  Layers keep
the activations they need for ``backward`` and accumulate into ``grad_*``
buffers, which the optimizer consumes and ``zero_grad`` clears.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def _as_2d(x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


class Parameter:
    """A named array with a gradient buffer of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Layer:
    def parameters(self) -> list[Parameter]:
        return []

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> None:
        pass


class Linear(Layer):
    """y = x W^T + b, with W of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 name: str = "linear"):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = np.sqrt(1.0 / n_in)
        self.weight = Parameter(f"{name}.weight", rng.uniform(-bound, bound, size=(n_out, n_in)))
        self.bias = Parameter(f"{name}.bias", rng.uniform(-bound, bound, size=n_out))
        self._x: np.ndarray | None = None

    @property
    def n_in(self) -> int:
        return self.weight.value.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.value.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _as_2d(x)
        if x.shape[1] != self.n_in:
            raise ShapeError(f"linear expects {self.n_in} input columns, got {x.shape[1]}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        grad_out = _as_2d(grad_out, "grad_out")
        if grad_out.shape != (self._x.shape[0], self.n_out):
            raise ShapeError(
                f"grad_out shape {grad_out.shape} != output shape {(self._x.shape[0], self.n_out)}")
        self.weight.grad += grad_out.T @ self._x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value


class ReLU(Layer):
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return np.where(self._mask, grad_out, 0.0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


class BatchNorm(Layer):
    """Per-column batch normalization.

    Batch statistics use the biased variance; running variance is updated
    with the unbiased estimate.  In eval mode only running statistics are used.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.training = True
        self._cache: tuple | None = None

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def train(self, mode: bool = True) -> None:
        self.training = mode

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _as_2d(x)
        if x.shape[1] != self.gamma.value.shape[0]:
            raise ShapeError(f"batchnorm expects {self.gamma.value.shape[0]} columns, got {x.shape[1]}")
        if self.training:
            m = x.shape[0]
            if m < 2:
                raise ShapeError("batchnorm in train mode needs at least 2 rows")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var * m / (m - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, self.training)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xhat, inv_std, training = self._cache
        self.gamma.grad += (grad_out * xhat).sum(axis=0)
        self.beta.grad += grad_out.sum(axis=0)
        dxhat = grad_out * self.gamma.value
        if not training:
            return dxhat * inv_std
        return inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def train(self, mode: bool = True) -> None:
        for layer in self.layers:
            layer.train(mode)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def batchnorms(self) -> list[BatchNorm]:
        return [layer for layer in self.layers if isinstance(layer, BatchNorm)]


def mlp(sizes: Sequence[int], rng: np.random.Generator, batchnorm: bool = False,
        name: str = "mlp") -> Sequential:
    """Fully connected stack ``sizes[0] -> ... -> sizes[-1]``.

    Hidden layers get (BatchNorm +) ReLU; the final layer is affine.
    """
    if len(sizes) < 2:
        raise ValueError("mlp needs at least input and output sizes")
    layers: list[Layer] = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Linear(a, b, rng, name=f"{name}.{k}"))
        if k < len(sizes) - 2:
            if batchnorm:
                layers.append(BatchNorm(b, name=f"{name}.bn{k}"))
            layers.append(ReLU())
    return Sequential(layers)


def softmax(logits: np.ndarray, mask: np.ndarray | None = None, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; masked entries come out exactly 0.

    Works on any rank.  ``mask`` (boolean, broadcastable) selects valid
    entries; a slice with no valid entry raises ``ValueError``.
    """
    z = np.asarray(logits, dtype=DTYPE)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax over a fully masked slice")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def mse_loss(pred: np.ndarray, target: np.ndarray,
             weight: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries (or over entries with weight 1).

    ``weight`` is an optional 0/1 array broadcastable to ``pred``; the mean
    runs over the selected entries only.
    """
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    if weight is None:
        count = diff.size
    else:
        w = np.broadcast_to(np.asarray(weight, dtype=DTYPE), diff.shape)
        diff = diff * w
        count = w.sum()
    count = max(float(count), 1.0)
    return float((diff * diff).sum() / count), 2.0 * diff / count


def cross_entropy_loss(logits: np.ndarray, labels, mask: np.ndarray | None = None
                       ) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy averaged over rows.

    Accepts a single vector with an int label, or a (batch, n) array with an
    int array of labels.  Returns the gradient with respect to the logits.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mask = mask[None] if mask.ndim == 1 else mask
    n_rows, n = z.shape
    if lab.shape != (n_rows,):
        raise ShapeError(f"labels shape {lab.shape} does not match {n_rows} rows")
    if (lab < 0).any() or (lab >= n).any():
        raise ValueError("label out of range")
    rows = np.arange(n_rows)
    if mask is not None and not mask[rows, lab].all():
        raise ValueError("label points at a masked entry")
    probs = softmax(z, mask)
    zz = z if mask is None else np.where(mask, z, -np.inf)
    zmax = zz.max(axis=1)
    logsumexp = zmax + np.log(np.exp(zz - zmax[:, None]).sum(axis=1))
    loss = float((logsumexp - z[rows, lab]).mean())
    grad = probs.copy()
    grad[rows, lab] -= 1.0
    grad /= n_rows
    return loss, grad[0] if single else grad


@dataclass
class Adam:
    """ADAM with bias correction; state arrays keyed by parameter position."""

    params: list[Parameter]
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in self.params]
            self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.alpha * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: Adam) -> None:
    """Functional wrapper: copy raw arrays into ``state`` parameters and step."""
    for p, value, g in zip(state.params, params, grads):
        p.value[...] = value
        p.grad[...] = g
    state.step()
    for p, value in zip(state.params, params):
        value[...] = p.value


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """|a - b| / max(|a| + |b|, floor), elementwise."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def grad_check(loss_fn: Callable[[], float], params: Iterable[Parameter],
               eps: float = 1e-6, max_per_param: int | None = 40,
               rng: np.random.Generator | None = None, floor: float = 1e-4) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must run a forward pass and return the scalar loss without
    touching gradients.  The analytic gradient is whatever currently sits in
    each ``Parameter.grad``, so run forward+backward once before calling.
    Returns the largest relative error over the sampled coordinates.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, size=max_per_param, replace=False)
        for k in idx:
            old = flat[k]
            flat[k] = old + eps
            up = loss_fn()
            flat[k] = old - eps
            down = loss_fn()
            flat[k] = old
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(rel_error(analytic[k], numeric, floor)))
    return worst


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=DTYPE)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        up = f(x)
        flat[k] = old - eps
        down = f(x)
        flat[k] = old
        gflat[k] = (up - down) / (2 * eps)
    return g
