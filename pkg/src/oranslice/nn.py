"""Small reverse-mode differentiation core on numpy.

Every layer exposes ``forward(x) -> (y, cache)`` and ``backward(cache, dy) -> dx``.
The cache is returned to the caller instead of being stored on the layer, so the
same network can be evaluated several times (online batch, target batch, fresh
actions) before any backward pass. ``backward`` accumulates into ``Param.grad``.

All math is float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))


class ShapeError(ValueError):
    pass


class PoisonedUpdateError(FloatingPointError):
    """Raised when an optimizer step would consume non-finite gradients."""


class Param:
    """Named parameter tensor with an accumulated gradient of the same shape."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


# ---------------------------------------------------------------- activations

def leaky_relu(x: np.ndarray) -> np.ndarray:
    # max(x, s*x) equals the leaky rectifier for 0 < s < 1
    return np.maximum(x, LEAKY_SLOPE * x)


def leaky_relu_grad(x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is the negative-side slope
    g = (x > 0).astype(float)
    g *= 1.0 - LEAKY_SLOPE
    g += LEAKY_SLOPE
    return g


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / np.sum(ez, axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (dp - np.sum(p * dp, axis=axis, keepdims=True))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class Activation:
    """Elementwise or row-wise activation; ``kind`` in identity/tanh/leaky_relu/softmax."""

    KINDS = ("identity", "tanh", "leaky_relu", "softmax")

    def __init__(self, kind: str):
        if kind == "leaky_rectifier":
            kind = "leaky_relu"
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x):
        if self.kind == "identity":
            return x, None
        if self.kind == "tanh":
            y = np.tanh(x)
            return y, y
        if self.kind == "leaky_relu":
            return leaky_relu(x), x
        y = softmax(x, axis=-1)
        return y, y

    def backward(self, cache, dy):
        if self.kind == "identity":
            return dy
        if self.kind == "tanh":
            return dy * (1.0 - cache * cache)
        if self.kind == "leaky_relu":
            return dy * leaky_relu_grad(cache)
        return softmax_backward(cache, dy, axis=-1)


class Linear:
    """Affine map ``y = x W^T + b`` over the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 bias: bool = True, name: str = "linear"):
        if n_in <= 0 or n_out <= 0:
            raise ShapeError(f"layer widths must be positive, got {n_in}->{n_out}")
        self.n_in, self.n_out = n_in, n_out
        bound = 1.0 / np.sqrt(n_in)
        if rng is None:
            w = np.zeros((n_out, n_in))
            b = np.zeros(n_out)
        else:
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", b) if bias else None

    def parameters(self) -> list[Param]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        y = x @ self.weight.value.T
        if self.bias is not None:
            y = y + self.bias.value
        return y, x

    def backward(self, cache: np.ndarray, dy: np.ndarray) -> np.ndarray:
        x = cache
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.weight.grad += dy2.T @ x2
        if self.bias is not None:
            self.bias.grad += dy2.sum(axis=0)
        return dy @ self.weight.value


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: tuple[int, ...]  # input width first
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ShapeError("an MLP needs an input width and at least one layer")
        if any(w <= 0 for w in self.layer_widths):
            raise ShapeError(f"layer widths must be positive: {self.layer_widths}")


class MLP:
    """Stack of Linear layers; hidden activation after every layer but the last."""

    def __init__(self, spec: MLPSpec, rng: np.random.Generator | None = None, name: str = "mlp"):
        self.spec = spec
        widths = spec.layer_widths
        self.layers: list = []
        n = len(widths) - 1
        for i in range(n):
            self.layers.append(Linear(widths[i], widths[i + 1], rng, name=f"{name}.{i}"))
            act = spec.hidden_activation if i < n - 1 else spec.output_activation
            self.layers.append(Activation(act))

    @property
    def n_in(self) -> int:
        return self.spec.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.spec.layer_widths[-1]

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dy: np.ndarray) -> np.ndarray:
        if caches is None:
            raise RuntimeError("backward called without a forward cache")
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(c, dy)
        return dy


# ---------------------------------------------------------------- optimizers

class Adam:
    """Adam with bias correction; one moment pair per parameter."""

    def __init__(self, params: Sequence[Param], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise PoisonedUpdateError(f"non-finite gradient in {p.name}; step refused")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(opt: Adam) -> None:
    opt.step()


def polyak_update(target: Sequence[Param], online: Sequence[Param], mix: float) -> None:
    """target <- (1 - mix) * target + mix * online, in place."""
    if not 0.0 < mix <= 1.0:
        raise ValueError(f"polyak mix must be in (0, 1], got {mix}")
    target, online = list(target), list(online)
    if len(target) != len(online):
        raise ShapeError("target and online parameter lists differ in length")
    for t, o in zip(target, online):
        if t.shape != o.shape:
            raise ShapeError(f"shape mismatch {t.name} {t.shape} vs {o.name} {o.shape}")
        if mix == 1.0:
            t.value[...] = o.value
        else:
            t.value *= 1.0 - mix
            t.value += mix * o.value


# ---------------------------------------------------------------- squashed gaussian

@dataclass
class SquashedSample:
    action: np.ndarray     # in (0, 1)
    log_prob: np.ndarray   # summed over the last axis
    u: np.ndarray          # pre-squash sample
    tanh_u: np.ndarray
    noise: np.ndarray
    std: np.ndarray


def clamp_log_std(raw: np.ndarray, lo: float = LOG_STD_MIN, hi: float = LOG_STD_MAX):
    """Returns the clamped log-std and the mask through which gradient passes."""
    return np.clip(raw, lo, hi), (raw >= lo) & (raw <= hi)


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (_LOG_2 - u - softplus(-2.0 * u))


def gaussian_policy_sample(mean: np.ndarray, log_std: np.ndarray,
                           rng: np.random.Generator | None = None,
                           noise: np.ndarray | None = None) -> SquashedSample:
    """Reparameterized sample squashed into (0, 1) by ``(tanh(u) + 1) / 2``.

    ``log_std`` is expected to be clamped already. Pass ``noise`` to freeze the draw.
    """
    if noise is None:
        noise = rng.standard_normal(np.shape(mean))
    std = np.exp(log_std)
    u = mean + std * noise
    tu = np.tanh(u)
    action = 0.5 * (tu + 1.0)
    gauss = -0.5 * noise * noise - log_std - 0.5 * _LOG_2PI
    # change of variables: da/du = (1 - tanh^2 u) / 2
    log_det = _log_one_minus_tanh_sq(u) - _LOG_2
    log_prob = np.sum(gauss - log_det, axis=-1)
    return SquashedSample(action, log_prob, u, tu, noise, std)


def squashed_log_prob(action: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log-density of an action in (0, 1) under the squashed gaussian."""
    u = np.arctanh(2.0 * action - 1.0)
    z = (u - mean) / np.exp(log_std)
    gauss = -0.5 * z * z - log_std - 0.5 * _LOG_2PI
    return np.sum(gauss - (_log_one_minus_tanh_sq(u) - _LOG_2), axis=-1)


def gaussian_policy_backward(s: SquashedSample, d_action: np.ndarray, d_log_prob: np.ndarray):
    """Pull gradients on (action, log_prob) back to (mean, log_std).

    ``d_log_prob`` has the batch shape of ``s.log_prob``.
    """
    dlp = np.asarray(d_log_prob)[..., None]
    du = d_action * 0.5 * (1.0 - s.tanh_u ** 2) + dlp * 2.0 * s.tanh_u
    d_mean = du
    d_log_std = du * s.std * s.noise - dlp
    return d_mean, d_log_std


# ---------------------------------------------------------------- checkpoints

def save_params(path: str | Path, params: Iterable[Param]) -> None:
    """Write ``name -> array`` pairs to an uncompressed ``.npz`` archive.

    Each entry keeps its shape and is stored row-major as little-endian float64,
    so a load restores bit-identical values.
    """
    arrays = {}
    for p in params:
        if p.name in arrays:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        arrays[p.name] = np.ascontiguousarray(p.value, dtype="<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path: str | Path, params: Iterable[Param]) -> None:
    with np.load(path, allow_pickle=False) as data:
        for p in params:
            if p.name not in data:
                raise KeyError(f"checkpoint {path} has no entry {p.name!r}")
            arr = data[p.name]
            if arr.shape != p.shape:
                raise ShapeError(f"{p.name}: checkpoint shape {arr.shape} != {p.shape}")
            p.value[...] = arr


def params_digest(params: Iterable[Param]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()
